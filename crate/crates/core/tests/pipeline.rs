use mfif_core::fusion::{
    fuse_pair_end_to_end, load_generator, remove_small_regions, srr_threshold, FusionOptions,
};
use mfif_core::network::{Checkpoint, Generator, NetworkConfig};
use mfif_core::synth::procedural::random_scene;
use mfif_core::synth::synthesize_alpha_pair;
use mfif_core::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_generator(seed: u64) -> Generator {
    let cfg = NetworkConfig {
        base_channels: 2,
        res_blocks: 1,
        se_reduction: 4,
        critic_base_channels: 2,
        resolution: 16,
        ..Default::default()
    };
    Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn pair(size: usize, seed: u64) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img, map) = random_scene(&mut rng, size, size);
    synthesize_alpha_pair(&img, &map, 2.5).unwrap()
}

#[test]
fn disabling_srr_changes_exactly_the_pixels_whose_map_changed() {
    let g = tiny_generator(3);
    let (a, b) = pair(96, 4);
    let with = fuse_pair_end_to_end(&a, &b, &g, &FusionOptions::default()).unwrap();
    let without = fuse_pair_end_to_end(
        &a,
        &b,
        &g,
        &FusionOptions {
            srr: false,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(with.focus_map_raw, without.focus_map_raw);
    let n = srr_threshold(96, 96);
    assert_eq!(
        with.focus_map_final,
        remove_small_regions(&without.focus_map_final, n, true)
    );
    let hw = 96 * 96;
    for i in 0..hw {
        let map_changed = with.focus_map_final.data()[i] != without.focus_map_final.data()[i];
        let sources_differ = (0..3).any(|c| a.plane(c)[i] != b.plane(c)[i]);
        let pixel_changed = (0..3).any(|c| with.fused.plane(c)[i] != without.fused.plane(c)[i]);
        assert_eq!(pixel_changed, map_changed && sources_differ, "pixel {i}");
    }
}

#[test]
fn stage_timings_account_for_the_total() {
    let g = tiny_generator(5);
    let (a, b) = pair(128, 6);
    let r = fuse_pair_end_to_end(&a, &b, &g, &FusionOptions::default()).unwrap();
    let t = r.timing;
    let sum = t.map_generation + t.post_processing + t.fusion;
    assert!(t.map_generation > 0.0 && t.total > 0.0);
    assert!((sum - t.total).abs() <= 0.05 * t.total, "{t:?}");
}

#[test]
fn checkpoint_round_trip_preserves_inference() {
    let g = tiny_generator(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    Checkpoint::from_models(&g, None, serde_json::json!({}))
        .save(&path)
        .unwrap();
    let loaded = load_generator(&path).unwrap();
    let reloaded = load_generator(&path).unwrap();
    let (a, b) = pair(32, 9);
    let opts = FusionOptions::default();
    let x = fuse_pair_end_to_end(&a, &b, &loaded, &opts).unwrap();
    let y = fuse_pair_end_to_end(&a, &b, &reloaded, &opts).unwrap();
    assert_eq!(x.fused, y.fused);
    // Stored values are single precision, so the soft map moves by at most a rounding-level amount.
    let z = fuse_pair_end_to_end(&a, &b, &g, &opts).unwrap();
    let worst = x
        .focus_map_raw
        .data()
        .iter()
        .zip(z.focus_map_raw.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn odd_sized_and_grayscale_pairs_fuse_at_their_own_size() {
    let g = tiny_generator(10);
    let (a, b) = pair(30, 11);
    let a = a.crop(0, 0, 27, 30).unwrap();
    let b = b.crop(0, 0, 27, 30).unwrap();
    let r = fuse_pair_end_to_end(&a, &b, &g, &FusionOptions::default()).unwrap();
    assert_eq!((r.fused.height(), r.fused.width()), (27, 30));
    assert_eq!(
        (r.focus_map_final.height(), r.focus_map_final.width()),
        (27, 30)
    );
    let ga = Image::new(27, 30, 1, a.luminance()).unwrap();
    let gb = Image::new(27, 30, 1, b.luminance()).unwrap();
    let r = fuse_pair_end_to_end(&ga, &gb, &g, &FusionOptions::default()).unwrap();
    assert_eq!(r.fused.channels(), 3);
    assert_eq!(r.fused.plane(0), r.fused.plane(2));
}

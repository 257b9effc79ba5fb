//! Binary dilation/erosion with a 3×3 square structuring element.
//!
//! Out-of-bounds neighbours are ignored, so `erode(m) == !dilate(!m)` holds
//! on the whole raster.

use super::FocusMap;

fn sweep(mask: &FocusMap, grow: bool) -> FocusMap {
    let (h, w) = (mask.height(), mask.width());
    let src = mask.data();
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let mut hit = !grow;
            'win: for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let v = src[yy * w + xx] == 1;
                    if grow && v {
                        hit = true;
                        break 'win;
                    }
                    if !grow && !v {
                        hit = false;
                        break 'win;
                    }
                }
            }
            out[y * w + x] = hit as u8;
        }
    }
    FocusMap::new(h, w, out).expect("binary by construction")
}

pub fn dilate(mask: &FocusMap) -> FocusMap {
    sweep(mask, true)
}

pub fn erode(mask: &FocusMap) -> FocusMap {
    sweep(mask, false)
}

/// `k > 0` dilates `k` times, `k < 0` erodes `|k|` times, `k = 0` is the identity.
pub fn morph(mask: &FocusMap, k: i32) -> FocusMap {
    let mut out = mask.clone();
    if mask.height() == 0 || mask.width() == 0 {
        return out;
    }
    for _ in 0..k.unsigned_abs() {
        out = if k > 0 { dilate(&out) } else { erode(&out) };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_mask() -> impl Strategy<Value = FocusMap> {
        (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |d| FocusMap::new(h, w, d).unwrap())
        })
    }

    #[test]
    fn dilate_single_pixel() {
        let m = FocusMap::from_fn(7, 7, |y, x| y == 3 && x == 3);
        let d = morph(&m, 1);
        let expect = FocusMap::from_fn(7, 7, |y, x| (2..=4).contains(&y) && (2..=4).contains(&x));
        assert_eq!(d, expect);
    }

    #[test]
    fn erode_block_to_center() {
        let m = FocusMap::from_fn(7, 7, |y, x| (2..=4).contains(&y) && (2..=4).contains(&x));
        assert_eq!(
            morph(&m, -1),
            FocusMap::from_fn(7, 7, |y, x| y == 3 && x == 3)
        );
    }

    #[test]
    fn zero_is_identity() {
        let m = FocusMap::from_fn(5, 6, |y, x| (x * 7 + y * 3) % 4 == 0);
        assert_eq!(morph(&m, 0), m);
    }

    proptest! {
        #[test]
        fn monotone(m in arb_mask(), k in 0i32..4) {
            let grown = morph(&m, k);
            let shrunk = morph(&m, -k);
            for i in 0..m.data().len() {
                prop_assert!(grown.data()[i] >= m.data()[i]);
                prop_assert!(shrunk.data()[i] <= m.data()[i]);
            }
        }

        #[test]
        fn duality(m in arb_mask(), k in 1i32..4) {
            let lhs = morph(&m, -k);
            let rhs = morph(&m.complement(), k).complement();
            let (h, w) = (m.height(), m.width());
            let k = k as usize;
            for y in k..h.saturating_sub(k) {
                for x in k..w.saturating_sub(k) {
                    prop_assert_eq!(lhs.get(y, x), rhs.get(y, x));
                }
            }
        }
    }
}

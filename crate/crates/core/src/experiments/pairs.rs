use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::io::load_image;
use crate::raster::Image;

/// A source pair on disk: `<id>_a.png` and `<id>_b.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub id: String,
    pub a: PathBuf,
    pub b: PathBuf,
}

impl PairPaths {
    pub fn load(&self) -> Result<(Image, Image)> {
        Ok((load_image(&self.a)?, load_image(&self.b)?))
    }
}

/// Pairs in `dir`, or in `dir/samples` when `dir` is a synthesized dataset,
/// sorted by id.
pub fn list_pairs(dir: &Path) -> Result<Vec<PairPaths>> {
    let root = if dir.join("samples").is_dir() {
        dir.join("samples")
    } else {
        dir.to_path_buf()
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let path = entry.map_err(|e| Error::io(&root, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(id) = name.strip_suffix("_a.png") else {
            continue;
        };
        let b = root.join(format!("{id}_b.png"));
        if b.is_file() {
            out.push(PairPaths {
                id: id.to_string(),
                a: path.clone(),
                b,
            });
        }
    }
    out.sort_by(|x, y| x.id.cmp(&y.id));
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no <id>_a.png/<id>_b.png pairs in {}",
            root.display()
        )));
    }
    Ok(out)
}

/// The fused result for `id` in `dir`: `<id>.png` or `<id>_fused.png`.
pub fn fused_path(dir: &Path, id: &str) -> Result<PathBuf> {
    [format!("{id}.png"), format!("{id}_fused.png")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::invalid(format!("no fused image for {id} in {}", dir.display())))
}

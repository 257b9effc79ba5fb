//! Connected-component labeling on binary masks.

use std::collections::VecDeque;

use super::FocusMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Per-pixel component ids plus per-component pixel counts.
///
/// Id `0` is reserved for pixels outside the labeled value; `counts[0]` holds
/// their number. Components are numbered `1..=num_components()` in raster
/// order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub counts: Vec<usize>,
}

impl Labeling {
    pub fn num_components(&self) -> usize {
        self.counts.len() - 1
    }
}

/// Labels the foreground (`1`) pixels of `mask`.
pub fn connected_components(mask: &FocusMap, connectivity: Connectivity) -> Labeling {
    label_value(mask, 1, connectivity)
}

/// Labels the pixels equal to `value`; everything else gets id `0`.
pub(crate) fn label_value(mask: &FocusMap, value: u8, connectivity: Connectivity) -> Labeling {
    let (h, w) = (mask.height(), mask.width());
    let data = mask.data();
    let mut labels = vec![0u32; h * w];
    let mut counts = vec![data.iter().filter(|&&v| v != value).count()];
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if data[start] != value || labels[start] != 0 {
            continue;
        }
        let id = counts.len() as u32;
        let mut size = 0usize;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for &(dy, dx) in connectivity.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if data[q] == value && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        counts.push(size);
    }
    Labeling { labels, counts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_components() {
        let l = connected_components(&FocusMap::zeros(5, 5), Connectivity::Eight);
        assert_eq!(l.num_components(), 0);
        assert_eq!(l.counts[0], 25);
    }

    #[test]
    fn single_block() {
        let m = FocusMap::from_fn(10, 10, |y, x| (4..6).contains(&y) && (4..6).contains(&x));
        for c in [Connectivity::Four, Connectivity::Eight] {
            let l = connected_components(&m, c);
            assert_eq!(l.num_components(), 1);
            assert_eq!(l.counts[1], 4);
        }
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let m = FocusMap::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(
            connected_components(&m, Connectivity::Four).num_components(),
            2
        );
        assert_eq!(
            connected_components(&m, Connectivity::Eight).num_components(),
            1
        );
    }

    #[test]
    fn background_labeling() {
        let m = FocusMap::new(3, 3, vec![1, 1, 1, 1, 0, 1, 1, 1, 1]).unwrap();
        let l = label_value(&m, 0, Connectivity::Eight);
        assert_eq!(l.num_components(), 1);
        assert_eq!(l.counts, vec![8, 1]);
    }
}

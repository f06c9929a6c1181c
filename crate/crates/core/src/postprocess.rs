//! Mask refinement: probability thresholding, 8-connectivity component
//! labeling and small-component removal.
//!
//! Threshold comparisons are inclusive on both knobs (`prob >= tau` is
//! foreground, components with `area >= min_area` survive). The default
//! minimum area is 300 pixels at 256x256, scaled by image area when running
//! at other resolutions.

use crate::data::Mask;
use crate::error::{Error, Result};

/// Reference area threshold: 300 pixels at 256x256.
pub const REFERENCE_MIN_AREA: f64 = 300.0;
pub const REFERENCE_SIZE: f64 = 256.0;
/// Default binarization threshold.
pub const DEFAULT_TAU: f64 = 0.3;

/// Area threshold scaled to the working resolution.
pub fn scaled_min_area(h: usize, w: usize) -> usize {
    (REFERENCE_MIN_AREA * (h * w) as f64 / (REFERENCE_SIZE * REFERENCE_SIZE)).round() as usize
}

/// Threshold probabilities: pixel is foreground iff `prob >= tau`.
pub fn binarize(probs: &[f32], h: usize, w: usize, tau: f64) -> Result<Mask> {
    if probs.len() != h * w {
        return Err(Error::config(format!(
            "binarize: {} probabilities for {}x{} image",
            probs.len(),
            h,
            w
        )));
    }
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { op: "binarize", detail: "non-finite probability".into() });
    }
    Ok(Mask { h, w, data: probs.iter().map(|&p| u8::from(p as f64 >= tau)).collect() })
}

/// Connected components under 8-connectivity.
///
/// `labels` assigns 0 to background and 1..=K to components, numbered by
/// first encounter in raster order; `areas[k-1]` is component k's pixel count.
#[derive(Clone, Debug)]
pub struct LabeledComponents {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
    pub areas: Vec<usize>,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        // path compression
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller provisional label as the root so final
            // relabeling follows raster order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling with 8-connectivity.
pub fn connected_components_8(mask: &Mask) -> LabeledComponents {
    let (h, w) = (mask.h, mask.w);
    let mut provisional = vec![0u32; h * w]; // 0 = background, labels start at 1
    let mut ds = DisjointSet::new(1);
    let mut next = 1u32;

    for y in 0..h {
        for x in 0..w {
            if mask.at(y, x) == 0 {
                continue;
            }
            // neighbors already scanned: W, NW, N, NE
            let mut best = 0u32;
            let mut neighbors = [0u32; 4];
            let mut n_cnt = 0;
            let push = |lbl: u32, best: &mut u32, neighbors: &mut [u32; 4], n_cnt: &mut usize| {
                if lbl != 0 {
                    neighbors[*n_cnt] = lbl;
                    *n_cnt += 1;
                    if *best == 0 || lbl < *best {
                        *best = lbl;
                    }
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1], &mut best, &mut neighbors, &mut n_cnt);
            }
            if y > 0 {
                if x > 0 {
                    push(provisional[(y - 1) * w + x - 1], &mut best, &mut neighbors, &mut n_cnt);
                }
                push(provisional[(y - 1) * w + x], &mut best, &mut neighbors, &mut n_cnt);
                if x + 1 < w {
                    push(provisional[(y - 1) * w + x + 1], &mut best, &mut neighbors, &mut n_cnt);
                }
            }
            let label = if best == 0 {
                let l = next;
                next += 1;
                ds.parent.push(l);
                l
            } else {
                for &n in &neighbors[..n_cnt] {
                    ds.union(best, n);
                }
                best
            };
            provisional[y * w + x] = label;
        }
    }

    // second pass: resolve roots, then relabel in first-encounter raster order
    let mut remap = vec![0u32; next as usize];
    let mut areas = Vec::new();
    let mut labels = vec![0u32; h * w];
    let mut assigned = 0u32;
    for i in 0..h * w {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = ds.find(p);
        if remap[root as usize] == 0 {
            assigned += 1;
            remap[root as usize] = assigned;
            areas.push(0usize);
        }
        let lbl = remap[root as usize];
        labels[i] = lbl;
        areas[(lbl - 1) as usize] += 1;
    }
    LabeledComponents { h, w, labels, areas }
}

/// Keep components with `area >= min_area`.
pub fn filter_min_area(components: &LabeledComponents, min_area: usize) -> Mask {
    let keep: Vec<bool> = components.areas.iter().map(|&a| a >= min_area).collect();
    Mask {
        h: components.h,
        w: components.w,
        data: components
            .labels
            .iter()
            .map(|&l| u8::from(l != 0 && keep[(l - 1) as usize]))
            .collect(),
    }
}

/// Full refinement: binarize at `tau`, label 8-connected components, drop
/// those smaller than `min_area` (defaulting to the scaled 300-pixel rule).
pub fn postprocess(
    probs: &[f32],
    h: usize,
    w: usize,
    tau: f64,
    min_area: Option<usize>,
) -> Result<Mask> {
    let mask = binarize(probs, h, w, tau)?;
    let comps = connected_components_8(&mask);
    Ok(filter_min_area(&comps, min_area.unwrap_or_else(|| scaled_min_area(h, w))))
}

//! Segmentation evaluation: Dice, IoU, Hausdorff distance, precision,
//! recall, average symmetric surface distance, and report aggregation.
//!
//! Conventions (pinned here because the discrete definitions admit choices):
//! boundaries are foreground pixels with at least one background 4-neighbor,
//! where out-of-image counts as background; distances are Euclidean between
//! pixel centers, in pixels; when both masks are empty the overlap metrics
//! are 1 and the distances 0; when exactly one is empty the overlap metrics
//! are 0 and the distances fall back to the image diagonal
//! `sqrt(h^2 + w^2)` as a documented sentinel.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Exact pixel counts. Masks must have identical shape.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<Confusion> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::config(format!(
            "confusion: shape mismatch {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn empty_case(pred_empty: bool, gt_empty: bool) -> Option<f64> {
    match (pred_empty, gt_empty) {
        (true, true) => Some(1.0),
        (true, false) | (false, true) => Some(0.0),
        _ => None,
    }
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    if let Some(v) = empty_case(c.tp + c.fp == 0, c.tp + c.fn_ == 0) {
        return Ok(v);
    }
    Ok(2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64))
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    if let Some(v) = empty_case(c.tp + c.fp == 0, c.tp + c.fn_ == 0) {
        return Ok(v);
    }
    Ok(c.tp as f64 / (c.tp + c.fp + c.fn_) as f64)
}

pub fn precision(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    if let Some(v) = empty_case(c.tp + c.fp == 0, c.tp + c.fn_ == 0) {
        return Ok(v);
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

pub fn recall(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    if let Some(v) = empty_case(c.tp + c.fp == 0, c.tp + c.fn_ == 0) {
        return Ok(v);
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

/// Boundary pixels: foreground with >= 1 background 4-neighbor
/// (out-of-image counts as background). Returned in raster order.
pub fn extract_boundary(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.h, mask.w);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.at(y, x) == 0 {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || mask.at(y - 1, x) == 0
                || mask.at(y + 1, x) == 0
                || mask.at(y, x - 1) == 0
                || mask.at(y, x + 1) == 0;
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn diagonal(mask: &Mask) -> f64 {
    ((mask.h * mask.h + mask.w * mask.w) as f64).sqrt()
}

fn min_dist_sq(p: (usize, usize), pts: &[(usize, usize)]) -> f64 {
    let mut best = f64::INFINITY;
    for &(y, x) in pts {
        let dy = y as f64 - p.0 as f64;
        let dx = x as f64 - p.1 as f64;
        let d = dy * dy + dx * dx;
        if d < best {
            best = d;
        }
    }
    best
}

/// Symmetric Hausdorff distance between mask boundaries, in pixels.
pub fn hausdorff(pred: &Mask, gt: &Mask) -> Result<f64> {
    shape_check(pred, gt, "hausdorff")?;
    let bp = extract_boundary(pred);
    let bg = extract_boundary(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(diagonal(pred)),
        _ => {}
    }
    let mut worst = 0.0f64;
    for &p in &bp {
        let d = min_dist_sq(p, &bg);
        if d > worst {
            worst = d;
        }
    }
    for &g in &bg {
        let d = min_dist_sq(g, &bp);
        if d > worst {
            worst = d;
        }
    }
    Ok(worst.sqrt())
}

/// Average symmetric surface distance between mask boundaries, in pixels.
pub fn assd(pred: &Mask, gt: &Mask) -> Result<f64> {
    shape_check(pred, gt, "assd")?;
    let bp = extract_boundary(pred);
    let bg = extract_boundary(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(diagonal(pred)),
        _ => {}
    }
    // two directed sums added once at the end, so assd(a, b) == assd(b, a)
    // bitwise (addition is commutative; a single running sum would reorder)
    let mut fwd = 0.0f64;
    for &p in &bp {
        fwd += min_dist_sq(p, &bg).sqrt();
    }
    let mut rev = 0.0f64;
    for &g in &bg {
        rev += min_dist_sq(g, &bp).sqrt();
    }
    Ok((fwd + rev) / (bp.len() + bg.len()) as f64)
}

fn shape_check(pred: &Mask, gt: &Mask, op: &str) -> Result<()> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::config(format!(
            "{op}: shape mismatch {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SampleMetrics {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub hd: f64,
    pub precision: f64,
    pub recall: f64,
    pub assd: f64,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<SampleMetrics>,
    pub mean: SampleMetrics,
}

/// Evaluate aligned prediction/ground-truth lists; aggregate by arithmetic
/// mean over samples.
pub fn evaluate_set(
    ids: &[String],
    preds: &[Mask],
    gts: &[Mask],
) -> Result<MetricsReport> {
    if ids.len() != preds.len() || ids.len() != gts.len() {
        return Err(Error::config(format!(
            "evaluate_set: id/prediction/ground-truth lists misaligned ({}, {}, {})",
            ids.len(),
            preds.len(),
            gts.len()
        )));
    }
    if ids.is_empty() {
        return Err(Error::config("evaluate_set: empty sample set"));
    }
    let mut rows = Vec::with_capacity(ids.len());
    for ((id, p), g) in ids.iter().zip(preds).zip(gts) {
        rows.push(SampleMetrics {
            id: id.clone(),
            dice: dice(p, g)?,
            iou: iou(p, g)?,
            hd: hausdorff(p, g)?,
            precision: precision(p, g)?,
            recall: recall(p, g)?,
            assd: assd(p, g)?,
        });
    }
    let n = rows.len() as f64;
    let mean = SampleMetrics {
        id: "MEAN".into(),
        dice: rows.iter().map(|r| r.dice).sum::<f64>() / n,
        iou: rows.iter().map(|r| r.iou).sum::<f64>() / n,
        hd: rows.iter().map(|r| r.hd).sum::<f64>() / n,
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        assd: rows.iter().map(|r| r.assd).sum::<f64>() / n,
    };
    Ok(MetricsReport { rows, mean })
}

impl MetricsReport {
    /// CSV with header, one row per sample, and a final MEAN row;
    /// six decimal places.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,dice,iou,hd,precision,recall,assd\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.id, r.dice, r.iou, r.hd, r.precision, r.recall, r.assd
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn mask(h: usize, w: usize, fg: &[(usize, usize)]) -> Mask {
        let mut m = Mask::zeros(h, w);
        for &(y, x) in fg {
            m.data[y * w + x] = 1;
        }
        m
    }

    #[test]
    fn confusion_basic_cases() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let c = confusion(&a, &a).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 0, fn_: 0, tn: 2 });

        let b = mask(2, 2, &[(1, 0), (1, 1)]);
        let c = confusion(&a, &b).unwrap();
        assert_eq!(c, Confusion { tp: 0, fp: 2, fn_: 2, tn: 0 });

        // 4-pixel masks with 2 overlapping
        let p = mask(3, 3, &[(0, 0), (0, 1), (0, 2), (1, 0)]);
        let g = mask(3, 3, &[(0, 0), (0, 1), (2, 0), (2, 1)]);
        let c = confusion(&p, &g).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (2, 2, 2));
    }

    #[test]
    fn overlap_metric_values() {
        let p = mask(3, 3, &[(0, 0), (0, 1), (0, 2), (1, 0)]);
        let g = mask(3, 3, &[(0, 0), (0, 1), (2, 0), (2, 1)]);
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
        assert!((iou(&p, &g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision(&p, &g).unwrap(), 0.5);
        assert_eq!(recall(&p, &g).unwrap(), 0.5);

        assert_eq!(dice(&p, &p).unwrap(), 1.0);
        assert_eq!(iou(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_conventions() {
        let e = Mask::zeros(4, 4);
        let f = mask(4, 4, &[(1, 1)]);
        for m in [dice, iou, precision, recall] {
            assert_eq!(m(&e, &e).unwrap(), 1.0);
            assert_eq!(m(&e, &f).unwrap(), 0.0);
            assert_eq!(m(&f, &e).unwrap(), 0.0);
        }
        assert_eq!(hausdorff(&e, &e).unwrap(), 0.0);
        assert_eq!(assd(&e, &e).unwrap(), 0.0);
        let diag = (32.0f64).sqrt();
        assert_eq!(hausdorff(&e, &f).unwrap(), diag);
        assert_eq!(assd(&f, &e).unwrap(), diag);
    }

    #[test]
    fn boundary_extraction_cases() {
        // single pixel is its own boundary
        let single = mask(3, 3, &[(1, 1)]);
        assert_eq!(extract_boundary(&single), vec![(1, 1)]);

        // filled 3x3 square inside 5x5: 8 perimeter pixels, center excluded
        let mut sq = Mask::zeros(5, 5);
        for y in 1..4 {
            for x in 1..4 {
                sq.data[y * 5 + x] = 1;
            }
        }
        let b = extract_boundary(&sq);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(2, 2)));

        // full-frame mask: only frame border pixels are boundary
        let mut full = Mask::zeros(4, 4);
        full.data.fill(1);
        let b = extract_boundary(&full);
        assert_eq!(b.len(), 12); // 16 - 4 interior
        assert!(!b.contains(&(1, 1)));
    }

    #[test]
    fn hausdorff_three_four_five() {
        let a = mask(8, 8, &[(0, 0)]);
        let b = mask(8, 8, &[(3, 4)]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(assd(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(assd(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_and_ordering_properties() {
        let mut rng = Rng::from_seed(31);
        for _ in 0..200 {
            let mut a = Mask::zeros(8, 8);
            let mut b = Mask::zeros(8, 8);
            for i in 0..64 {
                a.data[i] = u8::from(rng.chance(0.3));
                b.data[i] = u8::from(rng.chance(0.3));
            }
            assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
            assert_eq!(assd(&a, &b).unwrap(), assd(&b, &a).unwrap());
            assert_eq!(precision(&a, &b).unwrap(), recall(&b, &a).unwrap());
            assert!(assd(&a, &b).unwrap() <= hausdorff(&a, &b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn dice_iou_harmonic_identities() {
        let mut rng = Rng::from_seed(97);
        for _ in 0..1000 {
            let mut a = Mask::zeros(6, 6);
            let mut b = Mask::zeros(6, 6);
            for i in 0..36 {
                a.data[i] = u8::from(rng.chance(0.4));
                b.data[i] = u8::from(rng.chance(0.4));
            }
            let d = dice(&a, &b).unwrap();
            let j = iou(&a, &b).unwrap();
            let p = precision(&a, &b).unwrap();
            let r = recall(&a, &b).unwrap();
            assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            if p + r > 0.0 {
                assert!((d - 2.0 * p * r / (p + r)).abs() < 1e-12);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn evaluate_set_aggregates_and_errors() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let g = mask(4, 4, &[(1, 1), (1, 2)]);
        let report = evaluate_set(&ids, &[g.clone(), g.clone(), Mask::zeros(4, 4)], &[g.clone(), g.clone(), g.clone()]).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].dice, 1.0);
        assert_eq!(report.rows[0].hd, 0.0);
        // hand-computed means over the three rows
        assert!((report.mean.dice - (1.0 + 1.0 + 0.0) / 3.0).abs() < 1e-15);
        let diag = (32.0f64).sqrt();
        assert!((report.mean.hd - diag / 3.0).abs() < 1e-12);

        assert!(evaluate_set(&[], &[], &[]).is_err());
        assert!(evaluate_set(&ids, &[g.clone()], &[g.clone()]).is_err());

        let csv = report.to_csv();
        assert!(csv.starts_with("id,dice,iou,hd,precision,recall,assd\n"));
        assert!(csv.lines().last().unwrap().starts_with("MEAN,"));
        assert_eq!(csv.lines().count(), 5);
    }
}

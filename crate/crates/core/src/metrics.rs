//! Masked image metrics and boundary error.
//!
//! MSE and SSIM are restricted to the union of the burned areas of truth
//! and prediction, so the unburned background cannot dominate them. BMAE
//! compares intensities on the union of both fire perimeters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FireFrame;
use crate::error::{CoreError, Result};

pub const SSIM_WINDOW: usize = 7;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

pub fn burned_mask(f: &FireFrame, tau: f32) -> BinaryMask {
    BinaryMask {
        rows: f.rows,
        cols: f.cols,
        data: f.data.iter().map(|&v| v >= tau).collect(),
    }
}

/// Burned cells with an unburned 4-neighbour; the grid edge counts as
/// unburned.
pub fn extract_boundary(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.rows, m.cols);
    let at = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && m.data[r as usize * w + c as usize];
    let data = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            m.data[i] && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1))
        })
        .collect();
    BinaryMask { rows: h, cols: w, data }
}

/// Perimeter pixel count of the burned area.
pub fn boundary_length(f: &FireFrame, tau: f32) -> usize {
    extract_boundary(&burned_mask(f, tau)).count()
}

/// A metric value; `empty` marks a value computed over an empty pixel set,
/// which is reported as 0 and left out of aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub empty: bool,
}

impl Score {
    fn of(sum: f64, n: usize) -> Self {
        if n == 0 {
            Self { value: 0.0, empty: true }
        } else {
            Self {
                value: sum / n as f64,
                empty: false,
            }
        }
    }
}

fn check(a: &FireFrame, b: &FireFrame) -> Result<()> {
    if (a.rows, a.cols) != (b.rows, b.cols) || a.data.len() != b.data.len() {
        return Err(CoreError::Data(format!(
            "frames {}x{} and {}x{} differ in shape",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

fn union_mask(a: &FireFrame, b: &FireFrame, tau: f32) -> BinaryMask {
    burned_mask(a, tau).union(&burned_mask(b, tau))
}

pub fn masked_mse(truth: &FireFrame, pred: &FireFrame, tau: f32) -> Result<Score> {
    check(truth, pred)?;
    let m = union_mask(truth, pred, tau);
    let mut sum = 0.0;
    for ((&a, &b), &on) in truth.data.iter().zip(&pred.data).zip(&m.data) {
        if on {
            sum += (a as f64 - b as f64).powi(2);
        }
    }
    Ok(Score::of(sum, m.count()))
}

/// SSIM of the `window × window` neighbourhoods (clipped at the grid edge)
/// centred on each union pixel, averaged.
pub fn ssim_masked(truth: &FireFrame, pred: &FireFrame, tau: f32, window: usize) -> Result<Score> {
    check(truth, pred)?;
    if window < 3 || window % 2 == 0 {
        return Err(CoreError::Config(format!("SSIM window must be odd and >= 3, got {window}")));
    }
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let (h, w) = (truth.rows, truth.cols);
    let half = window / 2;
    let m = union_mask(truth, pred, tau);
    let mut sum = 0.0;
    for i in (0..h * w).filter(|&i| m.data[i]) {
        let (r, c) = (i / w, i % w);
        let (r0, r1) = (r.saturating_sub(half), (r + half).min(h - 1));
        let (c0, c1_) = (c.saturating_sub(half), (c + half).min(w - 1));
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in r0..=r1 {
            for x in c0..=c1_ {
                let a = truth.data[y * w + x] as f64;
                let b = pred.data[y * w + x] as f64;
                sa += a;
                sb += b;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
            }
        }
        let n = ((r1 - r0 + 1) * (c1_ - c0 + 1)) as f64;
        let (ma, mb) = (sa / n, sb / n);
        let va = (saa / n - ma * ma).max(0.0);
        let vb = (sbb / n - mb * mb).max(0.0);
        let cov = sab / n - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(Score::of(sum, m.count()))
}

/// Mean absolute intensity difference over the union of both perimeters.
pub fn bmae(truth: &FireFrame, pred: &FireFrame, tau: f32) -> Result<Score> {
    check(truth, pred)?;
    let bt = extract_boundary(&burned_mask(truth, tau));
    let bp = extract_boundary(&burned_mask(pred, tau));
    let u = bt.union(&bp);
    let mut sum = 0.0;
    for ((&a, &b), &on) in truth.data.iter().zip(&pred.data).zip(&u.data) {
        if on {
            sum += (a as f64 - b as f64).abs();
        }
    }
    Ok(Score::of(sum, u.count()))
}

/// All three metrics for one predicted frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mse: Score,
    pub ssim: Score,
    pub bmae: Score,
}

impl FrameMetrics {
    pub fn compute(truth: &FireFrame, pred: &FireFrame, tau: f32) -> Result<Self> {
        Ok(Self {
            mse: masked_mse(truth, pred, tau)?,
            ssim: ssim_masked(truth, pred, tau, SSIM_WINDOW)?,
            bmae: bmae(truth, pred, tau)?,
        })
    }

    /// `;`-separated names of metrics computed over an empty set.
    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.mse.empty || self.ssim.empty {
            f.push("empty_mask");
        }
        if self.bmae.empty {
            f.push("empty_boundary");
        }
        f.join(";")
    }
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sample: usize,
    /// Hours ahead: 4, 8 or 12.
    pub horizon: usize,
    pub model: String,
    pub mse: f64,
    pub ssim: f64,
    pub bmae: f64,
    pub flags: String,
}

impl MetricsRow {
    pub fn new(sample: usize, horizon: usize, model: &str, m: &FrameMetrics) -> Self {
        Self {
            sample,
            horizon,
            model: model.to_string(),
            mse: m.mse.value,
            ssim: m.ssim.value,
            bmae: m.bmae.value,
            flags: m.flags(),
        }
    }
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Means for one model at one horizon, over rows whose mask was nonempty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub mse: f64,
    pub ssim: f64,
    pub bmae: f64,
    pub samples: usize,
    pub flagged: usize,
}

/// `model → horizon → summary`.
pub type MetricsReport = BTreeMap<String, BTreeMap<usize, HorizonSummary>>;

pub fn summarize(rows: &[MetricsRow]) -> MetricsReport {
    let mut acc: BTreeMap<String, BTreeMap<usize, (HorizonSummary, usize, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.model.clone()).or_default().entry(r.horizon).or_default();
        e.0.samples += 1;
        if r.flags.contains("empty_mask") {
            e.0.flagged += 1;
        } else {
            e.0.mse += r.mse;
            e.0.ssim += r.ssim;
            e.1 += 1;
        }
        if !r.flags.contains("empty_boundary") {
            e.0.bmae += r.bmae;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(model, by_h)| {
            let by_h = by_h
                .into_iter()
                .map(|(h, (mut s, n, nb))| {
                    let n = n.max(1) as f64;
                    s.mse /= n;
                    s.ssim /= n;
                    s.bmae /= nb.max(1) as f64;
                    (h, s)
                })
                .collect();
            (model, by_h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f32 = 15.0 / 255.0;

    fn square(n: usize, r0: usize, c0: usize, side: usize, v: f32) -> FireFrame {
        let mut f = FireFrame::zeros(n, n);
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                f.data[r * n + c] = v;
            }
        }
        f
    }

    #[test]
    fn boundary_cases() {
        let one = burned_mask(&square(5, 2, 2, 1, 1.0), TAU);
        assert_eq!(extract_boundary(&one), one);
        let sq = burned_mask(&square(5, 1, 1, 3, 1.0), TAU);
        let b = extract_boundary(&sq);
        assert_eq!(b.count(), 8);
        assert!(!b.data[2 * 5 + 2]);
        assert!(extract_boundary(&burned_mask(&FireFrame::zeros(4, 4), TAU)).is_empty());
        let full = burned_mask(&square(4, 0, 0, 4, 1.0), TAU);
        assert_eq!(extract_boundary(&full).count(), 12);
    }

    #[test]
    fn identity_values() {
        let a = square(8, 2, 2, 3, 0.7);
        assert_eq!(masked_mse(&a, &a, TAU).unwrap().value, 0.0);
        assert!((ssim_masked(&a, &a, TAU, 7).unwrap().value - 1.0).abs() < 1e-9);
        assert_eq!(bmae(&a, &a, TAU).unwrap().value, 0.0);
    }

    #[test]
    fn single_pixel_and_square_fixture() {
        let t = square(5, 2, 2, 1, 1.0);
        let z = FireFrame::zeros(5, 5);
        assert_eq!(masked_mse(&t, &z, TAU).unwrap().value, 1.0);
        let sq = square(5, 1, 1, 3, 1.0);
        assert_eq!(bmae(&sq, &z, TAU).unwrap().value, 1.0);
        let moved = square(5, 1, 2, 3, 1.0);
        assert_ne!(bmae(&sq, &moved, TAU).unwrap().value, bmae(&sq, &sq, TAU).unwrap().value);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = FireFrame::new(7, 7, vec![0.5; 49]).unwrap();
        let b = FireFrame::new(7, 7, vec![0.25; 49]).unwrap();
        let c1 = (K1 * DYNAMIC_RANGE).powi(2);
        let want = (0.25 + c1) / (0.3125 + c1);
        let got = ssim_masked(&a, &b, TAU, 7).unwrap().value;
        assert!((got - want).abs() < 1e-12);
        assert!(ssim_masked(&a, &b, TAU, 4).is_err());
    }

    #[test]
    fn empty_union_is_flagged() {
        let z = FireFrame::zeros(4, 4);
        let m = FrameMetrics::compute(&z, &z, TAU).unwrap();
        assert!(m.mse.empty && m.ssim.empty && m.bmae.empty);
        assert_eq!(m.flags(), "empty_mask;empty_boundary");
        assert!(masked_mse(&z, &FireFrame::zeros(4, 5), TAU).is_err());
    }

    #[test]
    fn summary_skips_flagged_rows() {
        let rows = vec![
            MetricsRow {
                sample: 0,
                horizon: 4,
                model: "m".into(),
                mse: 0.2,
                ssim: 0.5,
                bmae: 0.1,
                flags: String::new(),
            },
            MetricsRow {
                sample: 1,
                horizon: 4,
                model: "m".into(),
                mse: 0.0,
                ssim: 0.0,
                bmae: 0.0,
                flags: "empty_mask;empty_boundary".into(),
            },
        ];
        let s = &summarize(&rows)["m"][&4];
        assert_eq!((s.mse, s.ssim, s.bmae, s.samples, s.flagged), (0.2, 0.5, 0.1, 2, 1));
    }
}

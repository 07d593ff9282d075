//! Evaluation metrics and the per-bin / per-class report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::loss::ssim_index;
use crate::tensor::Tensor;

/// Reported PSNR when the images are identical.
pub const PSNR_CAP: f64 = 100.0;

/// Coverage bins as percentage ranges.
pub const COVERAGE_BINS: [&str; 5] = ["0-20", "20-40", "40-60", "60-80", "80-100"];

pub const LAND_COVER: [&str; 7] = [
    "barren",
    "building",
    "cropland",
    "tree_cover",
    "grassland",
    "traffic_route",
    "water",
];

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!("{op}: shapes {} and {} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for data range 1, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("psnr", pred, target)?;
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Pearson correlation over all elements. Two constant inputs that are
/// equal correlate perfectly; a constant against a varying input gives 0.
pub fn cc(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("cc", pred, target)?;
    let (mp, mt) = (pred.mean(), target.mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pred.data().iter().zip(target.data()) {
        let (da, db) = (a - mp, b - mt);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(if pred == target { 1.0 } else { 0.0 });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean spectral angle in degrees between per-pixel channel vectors.
pub fn sam(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("sam", pred, target)?;
    let [n, c, h, w] = pred.shape().0;
    let plane = h * w;
    let (pd, td) = (pred.data(), target.data());
    let mut total = 0.0;
    for b in 0..n {
        for p in 0..plane {
            let (mut na, mut nb) = (0.0f64, 0.0f64);
            for ch in 0..c {
                let i = (b * c + ch) * plane + p;
                na += pd[i] * pd[i];
                nb += td[i] * td[i];
            }
            let angle = if na == 0.0 || nb == 0.0 {
                if na == nb {
                    0.0
                } else {
                    90.0
                }
            } else {
                // half-angle form stays accurate for nearly parallel vectors
                let (na, nb) = (na.sqrt(), nb.sqrt());
                let (mut diff, mut sum) = (0.0f64, 0.0f64);
                for ch in 0..c {
                    let i = (b * c + ch) * plane + p;
                    let (u, v) = (pd[i] / na, td[i] / nb);
                    diff += (u - v).powi(2);
                    sum += (u + v).powi(2);
                }
                (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
            };
            total += angle;
        }
    }
    Ok(total / (n * plane) as f64)
}

/// Mean absolute error inside the mask, over masked elements. Zero when the
/// mask is empty.
pub fn masked_l1(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    same_shape("masked_l1", pred, target)?;
    let [n, c, h, w] = pred.shape().0;
    if mask.shape().0 != [n, 1, h, w] {
        return Err(Error::Invalid(format!("masked_l1: mask shape {}", mask.shape())));
    }
    let plane = h * w;
    let (mut sum, mut count) = (0.0, 0usize);
    for b in 0..n {
        for p in 0..plane {
            if mask.data()[b * plane + p] == 0.0 {
                continue;
            }
            for ch in 0..c {
                let i = (b * c + ch) * plane + p;
                sum += (pred.data()[i] - target.data()[i]).abs();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Scores of one evaluated sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub cc: f64,
    pub sam: f64,
    pub masked_l1: f64,
}

impl SampleMetrics {
    pub fn compute(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Self> {
        Ok(SampleMetrics {
            psnr: psnr(pred, target)?,
            ssim: ssim_index(pred, target)?,
            cc: cc(pred, target)?,
            sam: sam(pred, target)?,
            masked_l1: masked_l1(pred, target, mask)?,
        })
    }
}

/// One aggregated report row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// `cell`, `bin`, `class` or `overall`.
    pub scope: &'static str,
    /// Bin label, or `*` when aggregated over bins.
    pub bin: String,
    /// Class label, or `*` when aggregated over classes.
    pub class: String,
    pub count: usize,
    /// Means; `None` for an empty group.
    pub mean: Option<SampleMetrics>,
}

/// Per-sample scores grouped by coverage bin and land-cover class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    samples: Vec<(usize, usize, SampleMetrics)>,
}

pub const REPORT_HEADER: &str = "scope\tbin\tclass\tcount\tpsnr\tssim\tcc\tsam\tmasked_l1";

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bin: usize, class: usize, m: SampleMetrics) -> Result<()> {
        if bin >= COVERAGE_BINS.len() || class >= LAND_COVER.len() {
            return Err(Error::Invalid(format!("report: bin {bin} / class {class} out of range")));
        }
        self.samples.push((bin, class, m));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn mean_of(&self, keep: impl Fn(usize, usize) -> bool) -> (usize, Option<SampleMetrics>) {
        let sel: Vec<&SampleMetrics> = self
            .samples
            .iter()
            .filter(|(b, c, _)| keep(*b, *c))
            .map(|(_, _, m)| m)
            .collect();
        if sel.is_empty() {
            return (0, None);
        }
        let k = sel.len() as f64;
        let avg = |f: fn(&SampleMetrics) -> f64| sel.iter().map(|m| f(m)).sum::<f64>() / k;
        (
            sel.len(),
            Some(SampleMetrics {
                psnr: avg(|m| m.psnr),
                ssim: avg(|m| m.ssim),
                cc: avg(|m| m.cc),
                sam: avg(|m| m.sam),
                masked_l1: avg(|m| m.masked_l1),
            }),
        )
    }

    /// Mean scores of one coverage bin.
    pub fn bin_mean(&self, bin: usize) -> Option<SampleMetrics> {
        self.mean_of(|b, _| b == bin).1
    }

    pub fn overall(&self) -> Option<SampleMetrics> {
        self.mean_of(|_, _| true).1
    }

    /// 35 bin x class cells, then 5 bin rows, 7 class rows and the overall row.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        let row = |scope, bin: String, class: String, (count, mean)| ReportRow {
            scope,
            bin,
            class,
            count,
            mean,
        };
        for (bi, b) in COVERAGE_BINS.iter().enumerate() {
            for (ci, c) in LAND_COVER.iter().enumerate() {
                rows.push(row("cell", b.to_string(), c.to_string(), self.mean_of(|x, y| x == bi && y == ci)));
            }
        }
        for (bi, b) in COVERAGE_BINS.iter().enumerate() {
            rows.push(row("bin", b.to_string(), "*".into(), self.mean_of(|x, _| x == bi)));
        }
        for (ci, c) in LAND_COVER.iter().enumerate() {
            rows.push(row("class", "*".into(), c.to_string(), self.mean_of(|_, y| y == ci)));
        }
        rows.push(row("overall", "*".into(), "*".into(), self.mean_of(|_, _| true)));
        rows
    }

    /// Tab-separated text with [`REPORT_HEADER`]; empty groups print `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in self.rows() {
            write!(out, "{}\t{}\t{}\t{}", r.scope, r.bin, r.class, r.count).expect("string write");
            match r.mean {
                Some(m) => write!(
                    out,
                    "\t{:.4}\t{:.6}\t{:.6}\t{:.4}\t{:.6}",
                    m.psnr, m.ssim, m.cc, m.sam, m.masked_l1
                ),
                None => write!(out, "\t-\t-\t-\t-\t-"),
            }
            .expect("string write");
            out.push('\n');
        }
        out
    }
}

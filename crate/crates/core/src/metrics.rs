//! DIBCO-style evaluation: F-measure, PSNR and DRD.
//!
//! Foreground (ink) is the positive class. An optional validity mask
//! excludes "unknown" ground-truth pixels from every count.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Dims;

/// One bit per pixel, `true` for foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(dims.len(), data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(f(x, y));
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[self.dims.index(x, y)]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub f_measure: f64,
    /// dB; `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub drd: f64,
    pub counts: Confusion,
}

impl MetricReport {
    /// `name,fmeasure,psnr,drd,tp,fp,fn,tn`
    pub fn csv_row(&self, name: &str) -> String {
        let c = self.counts;
        format!(
            "{name},{:.6},{},{:.6},{},{},{},{}",
            self.f_measure,
            FmtPsnr(self.psnr),
            self.drd,
            c.tp,
            c.fp,
            c.fn_,
            c.tn
        )
    }
}

pub const CSV_HEADER: &str = "name,fmeasure,psnr,drd,tp,fp,fn,tn";

/// Formats PSNR values, writing `inf` for identical images.
pub struct FmtPsnr(pub f64);

impl fmt::Display for FmtPsnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

fn check_pair(pred: &BinaryImage, gt: &BinaryImage, mask: Option<&[bool]>) -> Result<()> {
    gt.dims.check(pred.dims)?;
    if let Some(m) = mask {
        if m.len() != gt.dims.len() {
            return Err(Error::dims(gt.dims.len(), m.len()));
        }
    }
    Ok(())
}

pub fn confusion(pred: &BinaryImage, gt: &BinaryImage, mask: Option<&[bool]>) -> Result<Confusion> {
    check_pair(pred, gt, mask)?;
    let mut c = Confusion::default();
    for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn f_from_counts(c: Confusion) -> f64 {
    let precision = if c.tp + c.fp > 0 { c.tp as f64 / (c.tp + c.fp) as f64 } else { 0.0 };
    let recall = if c.tp + c.fn_ > 0 { c.tp as f64 / (c.tp + c.fn_) as f64 } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn psnr_from_counts(c: Confusion) -> f64 {
    let wrong = c.fp + c.fn_;
    if wrong == 0 {
        return f64::INFINITY;
    }
    let mse = wrong as f64 / c.total() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Harmonic mean of precision and recall; 0 when both vanish.
pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    confusion(pred, gt, None).map(f_from_counts)
}

/// `10 log10(C^2 / MSE)` with `C = 1`.
pub fn psnr(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    confusion(pred, gt, None).map(psnr_from_counts)
}

/// Normalised 5x5 reciprocal-distance weights, centre weight 0.
pub fn drd_weights() -> [[f64; 5]; 5] {
    let mut w = [[0.0; 5]; 5];
    let mut sum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 2.0, j as f64 - 2.0);
            if di != 0.0 || dj != 0.0 {
                *v = 1.0 / (di * di + dj * dj).sqrt();
                sum += *v;
            }
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    w
}

/// Number of 8x8 ground-truth blocks holding both classes. Blocks at the
/// right and bottom border may be partial.
pub fn non_uniform_blocks(gt: &BinaryImage) -> usize {
    let dims = gt.dims;
    let mut count = 0;
    for by in (0..dims.height).step_by(8) {
        for bx in (0..dims.width).step_by(8) {
            let first = gt.get(bx, by);
            let mixed = (by..(by + 8).min(dims.height))
                .any(|y| (bx..(bx + 8).min(dims.width)).any(|x| gt.get(x, y) != first));
            if mixed {
                count += 1;
            }
        }
    }
    count
}

/// Distance-reciprocal distortion: for every flipped pixel, the weighted
/// count of 5x5 ground-truth neighbours that disagree with the predicted
/// value, summed and divided by the non-uniform block count. Neighbours
/// outside the image contribute nothing.
pub fn drd(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    drd_masked(pred, gt, None)
}

fn drd_masked(pred: &BinaryImage, gt: &BinaryImage, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let nubn = non_uniform_blocks(gt);
    if nubn == 0 {
        return Err(Error::UndefinedDrd);
    }
    let dims = gt.dims;
    let w = drd_weights();
    let mut total = 0.0;
    for y in 0..dims.height {
        for x in 0..dims.width {
            let i = dims.index(x, y);
            if pred.data[i] == gt.data[i] || mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let value = pred.data[i];
            for (wy, row) in w.iter().enumerate() {
                let Some(ny) = (y + wy).checked_sub(2).filter(|&v| v < dims.height) else {
                    continue;
                };
                for (wx, &weight) in row.iter().enumerate() {
                    let Some(nx) = (x + wx).checked_sub(2).filter(|&v| v < dims.width) else {
                        continue;
                    };
                    if gt.get(nx, ny) != value {
                        total += weight;
                    }
                }
            }
        }
    }
    Ok(total / nubn as f64)
}

pub fn evaluate_pair(pred: &BinaryImage, gt: &BinaryImage) -> Result<MetricReport> {
    evaluate_pair_masked(pred, gt, None)
}

/// [`evaluate_pair`] restricted to pixels where `mask` is true.
pub fn evaluate_pair_masked(
    pred: &BinaryImage,
    gt: &BinaryImage,
    mask: Option<&[bool]>,
) -> Result<MetricReport> {
    let counts = confusion(pred, gt, mask)?;
    Ok(MetricReport {
        f_measure: f_from_counts(counts),
        psnr: psnr_from_counts(counts),
        drd: drd_masked(pred, gt, mask)?,
        counts,
    })
}

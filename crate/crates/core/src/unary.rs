//! Classical per-pixel cost providers for the data term.
//!
//! Class order is `(FG, BG)` with dark ink as foreground. Costs are
//! non-negative and lower means more likely.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{mirror_index, CostVolume, GrayImage, LabelField};

pub const FG: usize = 0;
pub const BG: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryProvider {
    Otsu,
    Niblack,
    Sauvola,
    MeanValue,
}

impl FromStr for UnaryProvider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "otsu" => Ok(Self::Otsu),
            "niblack" => Ok(Self::Niblack),
            "sauvola" => Ok(Self::Sauvola),
            "mean" | "mean_value" => Ok(Self::MeanValue),
            other => Err(Error::Config(format!("unknown unary provider `{other}`"))),
        }
    }
}

impl std::fmt::Display for UnaryProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Otsu => "otsu",
            Self::Niblack => "niblack",
            Self::Sauvola => "sauvola",
            Self::MeanValue => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryConfig {
    pub provider: UnaryProvider,
    /// Side of the square window used by the local methods; odd.
    pub window: usize,
    pub k_niblack: f64,
    pub k_sauvola: f64,
    /// Dynamic range of the standard deviation in Sauvola's formula.
    pub r_sauvola: f64,
    /// Weight of the mean-value data term.
    pub lambda: f64,
    /// Scale from distance-to-threshold to cost.
    pub sharpness: f64,
}

impl Default for UnaryConfig {
    fn default() -> Self {
        Self {
            provider: UnaryProvider::Sauvola,
            window: 31,
            k_niblack: -0.2,
            k_sauvola: 0.2,
            r_sauvola: 0.5,
            lambda: 5.0,
            sharpness: 10.0,
        }
    }
}

impl UnaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!("window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::Config(format!("sharpness must be > 0, got {}", self.sharpness)));
        }
        if !(self.r_sauvola > 0.0) {
            return Err(Error::Config("r_sauvola must be > 0".into()));
        }
        Ok(())
    }
}

/// Histogram of `img` over `bins` equal-width bins of `[0, 1]`.
pub fn histogram(img: &GrayImage, bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    for &v in img.data() {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        hist[b] += 1.0;
    }
    hist
}

/// Index `b` in `1..hist.len()` maximising the between-class variance of the
/// split `{bins < b} | {bins >= b}`, where bin `i` carries value `labels[i]`.
/// Ties go to the lowest index.
pub fn otsu_split(hist: &[f64], labels: &[f64]) -> Result<usize> {
    let total: f64 = hist.iter().sum();
    let total_moment: f64 = hist.iter().zip(labels).map(|(h, v)| h * v).sum();
    let mut w0 = 0.0;
    let mut m0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for b in 1..hist.len() {
        w0 += hist[b - 1];
        m0 += hist[b - 1] * labels[b - 1];
        let w1 = total - w0;
        if w0 <= 0.0 || w1 <= 0.0 {
            continue;
        }
        let mu0 = m0 / w0;
        let mu1 = (total_moment - m0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, v)| var > v) {
            best = Some((b, var));
        }
    }
    match best {
        Some((b, v)) if v > 0.0 => Ok(b),
        _ => Err(Error::DegenerateHistogram),
    }
}

/// Global Otsu threshold; pixels strictly below it form the dark class.
pub fn otsu_threshold(img: &GrayImage, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config("at least two histogram bins required".into()));
    }
    let hist = histogram(img, bins);
    let labels: Vec<f64> = (0..bins).map(|i| (i as f64 + 0.5) / bins as f64).collect();
    let b = otsu_split(&hist, &labels)?;
    Ok(b as f64 / bins as f64)
}

/// Windowed mean and standard deviation with mirrored borders.
pub fn local_moments(img: &GrayImage, window: usize) -> (Vec<f64>, Vec<f64>) {
    let dims = img.dims();
    let r = window / 2;
    let pw = dims.width + 2 * r;
    let ph = dims.height + 2 * r;
    // Summed-area tables of the padded image, one extra leading row/column.
    let mut s1 = vec![0.0; (pw + 1) * (ph + 1)];
    let mut s2 = vec![0.0; (pw + 1) * (ph + 1)];
    for y in 0..ph {
        let sy = mirror_index(y as isize - r as isize, dims.height);
        let mut row1 = 0.0;
        let mut row2 = 0.0;
        for x in 0..pw {
            let sx = mirror_index(x as isize - r as isize, dims.width);
            let v = img.get(sx, sy);
            row1 += v;
            row2 += v * v;
            let i = (y + 1) * (pw + 1) + x + 1;
            s1[i] = s1[i - (pw + 1)] + row1;
            s2[i] = s2[i - (pw + 1)] + row2;
        }
    }
    let area = (window * window) as f64;
    let rect = |s: &[f64], x: usize, y: usize| {
        let (x1, y1) = (x + window, y + window);
        s[y1 * (pw + 1) + x1] - s[y * (pw + 1) + x1] - s[y1 * (pw + 1) + x] + s[y * (pw + 1) + x]
    };
    let mut mean = Vec::with_capacity(dims.len());
    let mut std = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let m = rect(&s1, x, y) / area;
            let sq = rect(&s2, x, y) / area;
            let mut var = sq - m * m;
            // Below the rounding level of `sq` the difference is noise.
            if var <= 64.0 * f64::EPSILON * sq {
                var = 0.0;
            }
            mean.push(m);
            std.push(var.sqrt());
        }
    }
    (mean, std)
}

/// Per-pixel Niblack or Sauvola threshold. Other providers yield the global
/// Otsu threshold at every pixel.
pub fn local_threshold(img: &GrayImage, cfg: &UnaryConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    match cfg.provider {
        UnaryProvider::Niblack => {
            let (m, s) = local_moments(img, cfg.window);
            Ok(m.iter().zip(&s).map(|(m, s)| m + cfg.k_niblack * s).collect())
        }
        UnaryProvider::Sauvola => {
            let (m, s) = local_moments(img, cfg.window);
            Ok(m
                .iter()
                .zip(&s)
                .map(|(m, s)| m * (1.0 + cfg.k_sauvola * (s / cfg.r_sauvola - 1.0)))
                .collect())
        }
        UnaryProvider::Otsu | UnaryProvider::MeanValue => {
            let t = otsu_threshold(img, 256)?;
            Ok(vec![t; img.dims().len()])
        }
    }
}

/// Two-class costs from a threshold field: ink below the threshold makes
/// background expensive and vice versa.
pub fn cost_from_threshold(img: &GrayImage, thr: &[f64], sharpness: f64) -> Result<CostVolume> {
    let n = img.dims().len();
    if thr.len() != n {
        return Err(Error::dims(n, thr.len()));
    }
    let mut data = vec![0.0; 2 * n];
    for (i, (&g, &t)) in img.data().iter().zip(thr).enumerate() {
        data[FG * n + i] = sharpness * (g - t).max(0.0);
        data[BG * n + i] = sharpness * (t - g).max(0.0);
    }
    CostVolume::from_vec(img.dims(), 2, data)
}

/// Mean-value data term `f_l = (lambda / 2) |g - c_l|^2`.
pub fn mean_value_cost(img: &GrayImage, means: &[f64], lambda: f64) -> Result<CostVolume> {
    if means.len() < 2 {
        return Err(Error::InvalidInput("at least two class means required".into()));
    }
    for (i, a) in means.iter().enumerate() {
        if means[i + 1..].iter().any(|b| (a - b).abs() < 1e-12) {
            return Err(Error::DegenerateMeans);
        }
    }
    let n = img.dims().len();
    let mut data = Vec::with_capacity(n * means.len());
    for &c in means {
        data.extend(img.data().iter().map(|g| 0.5 * lambda * (g - c) * (g - c)));
    }
    CostVolume::from_vec(img.dims(), means.len(), data)
}

/// Soft-membership region means `c_l = sum u_l g / sum u_l`.
pub fn update_class_means(img: &GrayImage, u: &LabelField) -> Result<Vec<f64>> {
    img.dims().check(u.dims())?;
    (0..u.classes())
        .map(|l| {
            let class = u.class(l);
            let mass: f64 = class.iter().sum();
            if mass <= 0.0 {
                return Err(Error::EmptyRegion(l));
            }
            let moment: f64 = class.iter().zip(img.data()).map(|(w, g)| w * g).sum();
            Ok(moment / mass)
        })
        .collect()
}

/// Drops the third ("unknown") class of an `(FG, BG, unknown)` volume.
pub fn truncate_classes(f: &CostVolume) -> Result<CostVolume> {
    if f.classes() != 3 {
        return Err(Error::InvalidInput(format!(
            "truncation expects 3 classes, got {}",
            f.classes()
        )));
    }
    let n = f.dims().len();
    CostVolume::from_vec(f.dims(), 2, f.data()[..2 * n].to_vec())
}

/// Builds the two-class cost volume for `img` with the configured provider.
pub fn unary_costs(img: &GrayImage, cfg: &UnaryConfig) -> Result<CostVolume> {
    cfg.validate()?;
    // A single-bin histogram has no usable contrast for any provider.
    let hist = histogram(img, 256);
    if hist.iter().filter(|&&h| h > 0.0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    match cfg.provider {
        UnaryProvider::MeanValue => {
            let t = otsu_threshold(img, 256)?;
            let labels: Vec<usize> =
                img.data().iter().map(|&g| if g < t { FG } else { BG }).collect();
            let u = LabelField::one_hot(img.dims(), 2, &labels)?;
            let means = update_class_means(img, &u)?;
            mean_value_cost(img, &means, cfg.lambda)
        }
        _ => {
            let thr = local_threshold(img, cfg)?;
            cost_from_threshold(img, &thr, cfg.sharpness)
        }
    }
}

/// Hard labels by per-pixel cost argmin, ties to background.
pub fn threshold_labels(f: &CostVolume) -> Vec<usize> {
    let n = f.dims().len();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for l in 1..f.classes() {
                if f.get(l, i) <= f.get(best, i) {
                    best = l;
                }
            }
            best
        })
        .collect()
}

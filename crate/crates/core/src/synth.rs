//! Synthetic degraded pages with exact ground truth.
//!
//! Strokes are random cubic Bézier glyphs laid out along text lines. The
//! ground truth is the stroke mask; degradations only touch the gray image.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{mirror_index, Dims, GrayImage};
use crate::io;
use crate::metrics::BinaryImage;

pub const MANIFEST: &str = "manifest.txt";

const BG_LEVEL: f64 = 0.88;
const INK_LEVEL: f64 = 0.12;

// Independent random streams so the ground truth does not depend on the
// degradation settings.
const STREAM_STROKES: u64 = 1;
const STREAM_BLEED: u64 = 2;
const STREAM_DEGRADE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Mild,
    Harsh,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Mild => "mild",
            Preset::Harsh => "harsh",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mild" => Ok(Preset::Mild),
            "harsh" => Ok(Preset::Harsh),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

/// Per-effect strengths in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Degradations {
    pub background_texture: f64,
    pub stain: f64,
    pub bleed_through: f64,
    pub fade: f64,
    pub blur: f64,
    pub noise: f64,
}

impl Degradations {
    fn all(&self) -> [f64; 6] {
        [
            self.background_texture,
            self.stain,
            self.bleed_through,
            self.fade,
            self.blur,
            self.noise,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Target foreground fraction.
    pub stroke_density: f64,
    /// Stroke width range in pixels.
    pub stroke_width: (f64, f64),
    pub degradations: Degradations,
    pub preset: Preset,
}

impl SynthConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let degradations = match preset {
            Preset::Mild => Degradations {
                background_texture: 0.3,
                stain: 0.3,
                bleed_through: 0.25,
                fade: 0.25,
                blur: 0.2,
                noise: 0.35,
            },
            Preset::Harsh => Degradations {
                background_texture: 0.7,
                stain: 0.7,
                bleed_through: 0.6,
                fade: 0.6,
                blur: 0.5,
                noise: 0.7,
            },
        };
        Self {
            seed,
            width: 256,
            height: 256,
            stroke_density: 0.1,
            stroke_width: (1.5, 3.0),
            degradations,
            preset,
        }
    }

    pub fn clean(mut self) -> Self {
        self.degradations = Degradations::default();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("synthetic pages must be at least 16x16".into()));
        }
        if !(self.stroke_density > 0.0 && self.stroke_density < 0.5) {
            return Err(Error::Config("stroke_density must lie in (0, 0.5)".into()));
        }
        let (lo, hi) = self.stroke_width;
        if !(lo >= 1.0 && hi >= lo && hi <= 16.0) {
            return Err(Error::Config("stroke width range must satisfy 1 <= min <= max <= 16".into()));
        }
        if self.degradations.all().iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config("degradation strengths must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Canvas {
    dims: Dims,
    ink: Vec<bool>,
    count: usize,
}

impl Canvas {
    fn new(dims: Dims) -> Self {
        Self {
            dims,
            ink: vec![false; dims.len()],
            count: 0,
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64) {
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as isize).min(self.dims.width as isize - 1);
        let y1 = ((cy + r).ceil() as isize).min(self.dims.height as isize - 1);
        if x1 < 0 || y1 < 0 {
            return;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    let i = self.dims.index(x, y);
                    if !self.ink[i] {
                        self.ink[i] = true;
                        self.count += 1;
                    }
                }
            }
        }
    }

    fn bezier(&mut self, p: [(f64, f64); 4], r: f64) {
        let poly: f64 = p.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        let steps = (poly * 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let m = 1.0 - t;
            let b = [m * m * m, 3.0 * m * m * t, 3.0 * m * t * t, t * t * t];
            let x: f64 = (0..4).map(|j| b[j] * p[j].0).sum();
            let y: f64 = (0..4).map(|j| b[j] * p[j].1).sum();
            self.disc(x, y, r);
        }
    }
}

/// Draws glyphs along text lines until `density` of the page is ink.
fn render_strokes(dims: Dims, density: f64, width: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut canvas = Canvas::new(dims);
    let target = (density * dims.len() as f64).ceil() as usize;
    let (w, h) = (dims.width as f64, dims.height as f64);
    let glyph_h = (h / 10.0).clamp(6.0, 16.0);
    let line_h = glyph_h * rng.random_range(1.5..1.9);
    let margin = (w.min(h) * 0.05).max(2.0);
    let mut x = margin;
    let mut baseline = margin + glyph_h;
    let mut attempts = 0usize;
    while canvas.count < target && attempts < 100_000 {
        attempts += 1;
        let gw = glyph_h * rng.random_range(0.45..0.9);
        let r = rng.random_range(width.0..=width.1) / 2.0;
        let segments = rng.random_range(1..=3);
        let jitter = rng.random_range(-1.0..1.0);
        let pick = |rng: &mut ChaCha8Rng, pad: f64| {
            (
                x + rng.random_range(-pad..gw + pad),
                baseline + jitter - rng.random_range(-pad..glyph_h + pad),
            )
        };
        let mut start = pick(rng, 0.0);
        for _ in 0..segments {
            let c1 = pick(rng, 0.2 * glyph_h);
            let c2 = pick(rng, 0.2 * glyph_h);
            let end = pick(rng, 0.0);
            canvas.bezier([start, c1, c2, end], r);
            start = end;
        }
        x += gw + rng.random_range(1.0..3.0);
        if rng.random_bool(0.2) {
            x += glyph_h * 0.6;
        }
        if x + glyph_h > w - margin {
            x = margin + rng.random_range(0.0..glyph_h);
            baseline += line_h;
            if baseline > h - margin {
                baseline = margin + glyph_h + rng.random_range(0.0..line_h);
            }
        }
    }
    canvas.ink
}

/// Smooth random field in `[0, 1]`, three octaves of bilinear value noise.
fn value_noise(dims: Dims, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; dims.len()];
    let mut amp_total = 0.0;
    for octave in 0..3 {
        let c = (cell / (1 << octave) as f64).max(2.0);
        let amp = 0.5f64.powi(octave);
        let gw = (dims.width as f64 / c).ceil() as usize + 2;
        let gh = (dims.height as f64 / c).ceil() as usize + 2;
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
        for y in 0..dims.height {
            let fy = y as f64 / c;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..dims.width {
                let fx = x as f64 / c;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let g = |a: usize, b: usize| grid[(iy + b) * gw + ix + a];
                let top = g(0, 0) * (1.0 - tx) + g(1, 0) * tx;
                let bottom = g(0, 1) * (1.0 - tx) + g(1, 1) * tx;
                out[dims.index(x, y)] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amp_total += amp;
    }
    out.iter_mut().for_each(|v| *v /= amp_total);
    out
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Separable Gaussian blur with mirrored borders.
pub(crate) fn gaussian_blur(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = (dims.width, dims.height);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * data[y * w + mirror_index(x as isize + j as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[mirror_index(y as isize + j as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

/// Renders one page. The gray image is two-level when every strength is 0.
pub fn generate_page(cfg: &SynthConfig) -> Result<(GrayImage, BinaryImage)> {
    cfg.validate()?;
    let dims = cfg.dims();
    let n = dims.len();
    let mask = render_strokes(
        dims,
        cfg.stroke_density,
        cfg.stroke_width,
        &mut stream(cfg.seed, STREAM_STROKES),
    );
    let d = cfg.degradations;
    let mut rng = stream(cfg.seed, STREAM_DEGRADE);
    let ink_to_bg = BG_LEVEL - INK_LEVEL;

    let fade_field = value_noise(dims, 64.0, &mut rng);
    let mut g: Vec<f64> = (0..n)
        .map(|i| {
            if mask[i] {
                INK_LEVEL + d.fade * 0.55 * fade_field[i] * ink_to_bg
            } else {
                BG_LEVEL
            }
        })
        .collect();

    if d.background_texture > 0.0 {
        let tex = value_noise(dims, 24.0, &mut rng);
        for (v, t) in g.iter_mut().zip(&tex) {
            *v += d.background_texture * 0.15 * (2.0 * t - 1.0);
        }
    }

    if d.bleed_through > 0.0 {
        let mut brng = stream(cfg.seed, STREAM_BLEED);
        let back = render_strokes(dims, cfg.stroke_density, cfg.stroke_width, &mut brng);
        let mirrored: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (i % dims.width, i / dims.width);
                if back[dims.index(dims.width - 1 - x, y)] { 1.0 } else { 0.0 }
            })
            .collect();
        let soft = gaussian_blur(&mirrored, dims, 1.0);
        for (v, s) in g.iter_mut().zip(&soft) {
            *v -= d.bleed_through * 0.3 * s;
        }
    }

    if d.stain > 0.0 {
        let count = rng.random_range(1..=3);
        let size = dims.width.min(dims.height) as f64;
        for _ in 0..count {
            let cx = rng.random_range(0.0..dims.width as f64);
            let cy = rng.random_range(0.0..dims.height as f64);
            let s = rng.random_range(0.08..0.25) * size;
            let depth = d.stain * rng.random_range(0.15..0.35);
            for (i, v) in g.iter_mut().enumerate() {
                let (dx, dy) = ((i % dims.width) as f64 - cx, (i / dims.width) as f64 - cy);
                *v *= 1.0 - depth * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
        }
    }

    if d.blur > 0.0 {
        g = gaussian_blur(&g, dims, 1.2 * d.blur);
    }

    if d.noise > 0.0 {
        let normal = Normal::new(0.0, 0.1 * d.noise).expect("finite positive deviation");
        for v in g.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    g.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((GrayImage::new(dims, g)?, BinaryImage::new(dims, mask)?))
}

/// One manifest line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub preset: Preset,
}

impl ManifestEntry {
    pub fn config(&self) -> SynthConfig {
        SynthConfig::preset(self.preset, self.seed)
    }
}

pub fn input_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:04}_in.png"))
}

pub fn gt_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:04}_gt.png"))
}

/// Seeds of `count` pages derived from `seed`.
pub fn page_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_pair(dir: &Path, entry: &ManifestEntry) -> Result<()> {
    let (img, gt) = generate_page(&entry.config())?;
    io::save_gray(&input_path(dir, entry.index), &img)?;
    io::save_binary(&gt_path(dir, entry.index), &gt)
}

/// Writes `count` preset pages and the manifest into `dir`.
pub fn generate_dataset(dir: &Path, preset: Preset, count: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestEntry> = page_seeds(seed, count)
        .into_iter()
        .enumerate()
        .map(|(index, seed)| ManifestEntry { index, seed, preset })
        .collect();
    for e in &entries {
        write_pair(dir, e)?;
    }
    let text: String = entries
        .iter()
        .map(|e| format!("{},{},{}\n", e.index, e.seed, e.preset))
        .collect();
    write_file(&dir.join(MANIFEST), &text)?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::Config(format!("malformed manifest line `{line}`"));
            let mut it = line.split(',');
            let index = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let seed = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let preset = it.next().ok_or_else(bad)?.parse()?;
            Ok(ManifestEntry { index, seed, preset })
        })
        .collect()
}

/// Rewrites every page listed in `manifest` into `dir`.
pub fn regenerate(manifest: &Path, dir: &Path) -> Result<()> {
    for e in read_manifest(manifest)? {
        write_pair(dir, &e)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_page_is_two_level() {
        let cfg = SynthConfig::preset(Preset::Mild, 3).clean();
        let (img, gt) = generate_page(&cfg).unwrap();
        let mid = 0.5 * (BG_LEVEL + INK_LEVEL);
        for (v, &fg) in img.data().iter().zip(gt.data()) {
            assert!(*v == BG_LEVEL || *v == INK_LEVEL);
            assert_eq!(*v < mid, fg);
        }
    }

    #[test]
    fn same_seed_same_page() {
        let cfg = SynthConfig::preset(Preset::Harsh, 17);
        assert_eq!(generate_page(&cfg).unwrap(), generate_page(&cfg).unwrap());
        let other = SynthConfig::preset(Preset::Harsh, 18);
        assert_ne!(generate_page(&cfg).unwrap().1, generate_page(&other).unwrap().1);
    }

    #[test]
    fn ground_truth_ignores_degradations() {
        let mut cfg = SynthConfig::preset(Preset::Mild, 5).clean();
        let (clean_img, clean_gt) = generate_page(&cfg).unwrap();
        cfg.degradations.bleed_through = 1.0;
        let (img, gt) = generate_page(&cfg).unwrap();
        assert_eq!(gt, clean_gt);
        // Bleed-through darkens some background pixels.
        let darkened = img
            .data()
            .iter()
            .zip(clean_img.data())
            .zip(gt.data())
            .filter(|((a, b), &fg)| !fg && **a < **b - 0.1)
            .count();
        assert!(darkened > 50, "{darkened}");
        cfg.degradations = SynthConfig::preset(Preset::Harsh, 5).degradations;
        assert_eq!(generate_page(&cfg).unwrap().1, clean_gt);
    }

    #[test]
    fn blur_preserves_constants() {
        let dims = Dims::new(7, 5);
        let out = gaussian_blur(&vec![0.3; 35], dims, 1.5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SynthConfig::preset(Preset::Mild, 1);
        cfg.degradations.noise = 1.5;
        assert!(generate_page(&cfg).is_err());
        let mut cfg = SynthConfig::preset(Preset::Mild, 1);
        cfg.width = 4;
        assert!(cfg.validate().is_err());
        assert!("medium".parse::<Preset>().is_err());
    }

    #[test]
    fn dataset_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty");
        assert!(generate_dataset(&empty, Preset::Mild, 0, 1).unwrap().is_empty());
        assert_eq!(fs::read_dir(&empty).unwrap().count(), 1);
        assert_eq!(fs::read_to_string(empty.join(MANIFEST)).unwrap(), "");

        let out = dir.path().join("set");
        let entries = generate_dataset(&out, Preset::Mild, 2, 9).unwrap();
        assert_eq!(read_manifest(&out.join(MANIFEST)).unwrap(), entries);
        let before = fs::read(input_path(&out, 1)).unwrap();
        let again = dir.path().join("again");
        fs::create_dir_all(&again).unwrap();
        regenerate(&out.join(MANIFEST), &again).unwrap();
        assert_eq!(fs::read(input_path(&again, 1)).unwrap(), before);
        assert_eq!(fs::read(gt_path(&again, 0)).unwrap(), fs::read(gt_path(&out, 0)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_foreground_fraction_in_band(seed in 0u64..1_000_000, density in 0.03f64..0.2) {
            let mut cfg = SynthConfig::preset(Preset::Mild, seed).clean();
            cfg.width = 96;
            cfg.height = 80;
            cfg.stroke_density = density;
            let (_, gt) = generate_page(&cfg).unwrap();
            let frac = gt.foreground_count() as f64 / 7680.0;
            prop_assert!(frac >= 0.5 * density && frac <= 1.5 * density, "{frac} vs {density}");
        }
    }
}

//! End-to-end binarization, evaluation and training over image files.

mod config;
mod patch;

pub use config::{PipelineConfig, Solver};
pub use patch::{extract_patches, stitch_patches, Patch, PatchGrid};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{CostVolume, GrayImage, LabelField};
use crate::io;
use crate::learn::{self, TrainInstance, TrainMode, TrainOutcome, UNKNOWN};
use crate::metrics::{self, BinaryImage, Confusion, FmtPsnr, MetricReport};
use crate::pd::{edge_magnitude, edge_map_from_magnitude, pd_solve_euclid_with_edges, pd_solve_with_edges};
use crate::unary::{self, BG, FG};
use patch::crop_field;

/// Soft and hard result of [`binarize_image`].
#[derive(Debug, Clone, PartialEq)]
pub struct Binarization {
    pub u_sum: LabelField,
    pub labels: BinaryImage,
}

/// Two-class costs for `img`, inverted first when configured.
pub fn page_costs(img: &GrayImage, cfg: &PipelineConfig) -> Result<(GrayImage, CostVolume)> {
    let img = if cfg.invert { img.inverted() } else { img.clone() };
    let mut costs = unary::unary_costs(&img, &cfg.unary)?;
    if costs.classes() == 3 {
        costs = unary::truncate_classes(&costs)?;
    }
    Ok((img, costs))
}

/// Soft labeling of a whole page: costs and edge magnitudes are computed
/// once on the page, cropped per patch, solved, and stitched.
pub fn solve_page(img: &GrayImage, costs: &CostVolume, cfg: &PipelineConfig) -> Result<LabelField> {
    cfg.validate()?;
    let dims = img.dims();
    costs.dims().check(dims)?;
    let mag = edge_magnitude(img);
    let pdims = cfg.patch.patch_dims();
    let euclid = cfg.euclid_params();
    let mut solved = Vec::new();
    for p in cfg.patch.layout(dims) {
        let f = costs.crop_mirrored(p.x, p.y, pdims);
        let edges = edge_map_from_magnitude(pdims, &crop_field(&mag, dims, p.x, p.y, pdims), cfg.pd.edge_weight);
        let u = match cfg.solver {
            Solver::Bregman => pd_solve_with_edges(&f, &edges, &cfg.pd)?.0,
            Solver::Euclid => pd_solve_euclid_with_edges(&f, &edges, &euclid)?,
        };
        solved.push((p, u));
    }
    stitch_patches(&solved, dims)
}

/// Foreground wherever class FG wins; ties go to background.
pub fn hard_labels(u: &LabelField) -> Result<BinaryImage> {
    BinaryImage::new(u.dims(), u.argmax().into_iter().map(|l| l == FG).collect())
}

pub fn binarize_image(img: &GrayImage, cfg: &PipelineConfig) -> Result<Binarization> {
    let (img, costs) = page_costs(img, cfg)?;
    let u_sum = solve_page(&img, &costs, cfg)?;
    let labels = hard_labels(&u_sum)?;
    Ok(Binarization { u_sum, labels })
}

/// Reads `input`, binarizes it and writes the black-on-white result to
/// `output`. With `dump`, the background probability is written there as
/// a gray image (ink dark).
pub fn binarize(input: &Path, output: &Path, dump: Option<&Path>, cfg: &PipelineConfig) -> Result<Binarization> {
    let img = io::load_gray_with(input, cfg.luma)?;
    let out = binarize_image(&img, cfg)?;
    io::save_binary(output, &out.labels)?;
    if let Some(path) = dump {
        let bg = GrayImage::new(out.u_sum.dims(), out.u_sum.class(BG).iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        io::save_gray(path, &bg)?;
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "pnm"];
const NAME_SUFFIXES: &[&str] = &["_gt", "_in", "_pred", "_out", "_bin"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `(stem, path)` of every image in `dir`, sorted by file name.
fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Stem without one of the conventional role suffixes.
pub fn match_key(stem: &str) -> &str {
    NAME_SUFFIXES
        .iter()
        .find_map(|s| stem.strip_suffix(s).filter(|k| !k.is_empty()))
        .unwrap_or(stem)
}

fn keyed(images: Vec<(String, PathBuf)>) -> BTreeMap<String, PathBuf> {
    let mut map = BTreeMap::new();
    for (stem, path) in images {
        let key = match_key(&stem).to_string();
        if map.contains_key(&key) {
            log::warn!("ignoring {}: another file has key `{key}`", path.display());
            continue;
        }
        map.insert(key, path);
    }
    map
}

/// Ground-truth files of `dir`: the `_gt` images if any exist, otherwise
/// every image.
fn ground_truth_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let all = list_images(dir)?;
    let gt: Vec<_> = all.iter().filter(|(s, _)| s.ends_with("_gt")).cloned().collect();
    Ok(keyed(if gt.is_empty() { all } else { gt }))
}

/// Prediction files of `dir`, skipping `_gt` and `_in` images unless
/// nothing else is there.
fn prediction_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let all = list_images(dir)?;
    let preds: Vec<_> = all
        .iter()
        .filter(|(s, _)| !s.ends_with("_gt") && !s.ends_with("_in"))
        .cloned()
        .collect();
    Ok(keyed(if preds.is_empty() { all } else { preds }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<(String, MetricReport)>,
    /// Keys present in only one of the directories.
    pub missing: Vec<String>,
}

impl Evaluation {
    /// Mean of the per-image metrics; counts are summed.
    pub fn mean(&self) -> MetricReport {
        let n = self.rows.len().max(1) as f64;
        let mut counts = Confusion::default();
        let (mut f, mut p, mut d) = (0.0, 0.0, 0.0);
        for (_, r) in &self.rows {
            f += r.f_measure;
            p += r.psnr;
            d += r.drd;
            counts.tp += r.counts.tp;
            counts.fp += r.counts.fp;
            counts.fn_ += r.counts.fn_;
            counts.tn += r.counts.tn;
        }
        MetricReport {
            f_measure: f / n,
            psnr: p / n,
            drd: d / n,
            counts,
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", metrics::CSV_HEADER)?;
        for (name, r) in &self.rows {
            writeln!(out, "{}", r.csv_row(name))?;
        }
        writeln!(out, "{}", self.mean().csv_row("mean"))
    }

    pub fn summary(&self) -> String {
        let m = self.mean();
        format!(
            "{} images: F {:.4}, PSNR {}, DRD {:.4}",
            self.rows.len(),
            m.f_measure,
            FmtPsnr(m.psnr),
            m.drd
        )
    }
}

/// Scores every prediction against the ground truth with the same key.
/// Unknown ground-truth pixels are excluded.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<Evaluation> {
    let preds = prediction_files(pred_dir)?;
    let gts = ground_truth_files(gt_dir)?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (key, pred_path) in &preds {
        let Some(gt_path) = gts.get(key) else {
            log::warn!("no ground truth for {}", pred_path.display());
            missing.push(key.clone());
            continue;
        };
        let pred = io::load_binary(pred_path)?;
        let (gt, known) = io::load_ground_truth(gt_path)?;
        rows.push((key.clone(), metrics::evaluate_pair_masked(&pred, &gt, Some(&known))?));
    }
    for key in gts.keys().filter(|k| !preds.contains_key(*k)) {
        log::warn!("no prediction for ground truth `{key}`");
        missing.push(key.clone());
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no matching images between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    Ok(Evaluation { rows, missing })
}

/// Per-pixel classes of a ground-truth image (FG, BG or unknown).
pub fn gt_classes(gt: &BinaryImage, known: &[bool]) -> Vec<usize> {
    gt.data()
        .iter()
        .zip(known)
        .map(|(&fg, &k)| match (k, fg) {
            (false, _) => UNKNOWN,
            (true, true) => FG,
            (true, false) => BG,
        })
        .collect()
}

/// Cuts one page into training patches. Padding pixels outside the page
/// are marked unknown.
pub fn page_instances(img: &GrayImage, classes: &[usize], cfg: &PipelineConfig) -> Result<Vec<TrainInstance>> {
    let dims = img.dims();
    if classes.len() != dims.len() {
        return Err(Error::dims(dims.len(), classes.len()));
    }
    let (img, costs) = page_costs(img, cfg)?;
    let mag = edge_magnitude(&img);
    let pdims = cfg.patch.patch_dims();
    cfg.patch
        .layout(dims)
        .into_iter()
        .map(|p| {
            let mut gt = Vec::with_capacity(pdims.len());
            for y in 0..pdims.height {
                for x in 0..pdims.width {
                    let (sx, sy) = (p.x + x, p.y + y);
                    gt.push(if sx < dims.width && sy < dims.height {
                        classes[dims.index(sx, sy)]
                    } else {
                        UNKNOWN
                    });
                }
            }
            TrainInstance::from_parts(
                costs.crop_mirrored(p.x, p.y, pdims),
                crop_field(&mag, dims, p.x, p.y, pdims),
                gt,
            )
        })
        .collect()
}

/// `(input, ground truth)` pairs of a dataset directory, matched by the
/// `_in` / `_gt` naming.
pub fn dataset_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let images = list_images(dir)?;
    let gts: BTreeMap<&str, &PathBuf> = images
        .iter()
        .filter_map(|(s, p)| s.strip_suffix("_gt").map(|k| (k, p)))
        .collect();
    Ok(images
        .iter()
        .filter_map(|(s, p)| {
            let key = s.strip_suffix("_in")?;
            gts.get(key).map(|g| (p.clone(), (*g).clone()))
        })
        .collect())
}

/// Trains on every pair in `dir`, starting from `cfg.pd`.
pub fn train_dir(dir: &Path, cfg: &PipelineConfig, mode: TrainMode) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = dataset_pairs(dir)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!("no `_in`/`_gt` pairs in {}", dir.display())));
    }
    let mut data = Vec::new();
    for (input, gt_path) in &pairs {
        let img = io::load_gray_with(input, cfg.luma)?;
        let (gt, known) = io::load_ground_truth(gt_path)?;
        img.dims().check(gt.dims())?;
        data.extend(page_instances(&img, &gt_classes(&gt, &known), cfg)?);
    }
    log::info!("training on {} patches from {} pages", data.len(), pairs.len());
    learn::train(&data, None, &cfg.pd, &cfg.loss, &cfg.optim, mode)
}

/// [`train_dir`] followed by writing the parameter file.
pub fn train_cmd(dir: &Path, output: &Path, cfg: &PipelineConfig, mode: TrainMode) -> Result<TrainOutcome> {
    let outcome = train_dir(dir, cfg, mode)?;
    fs::write(output, outcome.to_kv()).map_err(io_err(output))?;
    Ok(outcome)
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::PatchGrid;
use crate::error::{Error, Result};
use crate::io::LUMA_WEIGHTS;
use crate::kv;
use crate::learn::{LossConfig, OptimConfig};
use crate::pd::PdParams;
use crate::unary::UnaryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Bregman,
    Euclid,
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bregman" => Ok(Solver::Bregman),
            "euclid" | "euclidean" => Ok(Solver::Euclid),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Bregman => "bregman",
            Solver::Euclid => "euclid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub unary: UnaryConfig,
    pub pd: PdParams,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub patch: PatchGrid,
    pub luma: [f64; 3],
    pub solver: Solver,
    /// Iterations of the Euclidean solver; its steps reuse the first
    /// Bregman step sizes.
    pub euclid_iterations: usize,
    /// Treat light strokes on dark paper.
    pub invert: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            unary: UnaryConfig::default(),
            pd: PdParams::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            patch: PatchGrid::default(),
            luma: LUMA_WEIGHTS,
            solver: Solver::Bregman,
            euclid_iterations: 200,
            invert: false,
        }
    }
}

// Written by the trainer; informational only.
const IGNORED_KEYS: &[&str] = &["best_epoch", "loss_history", "validation_history"];

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

fn parse_schedule(key: &str, v: &str) -> Result<Vec<(usize, f64)>> {
    kv::list::<String>(key, v)?
        .iter()
        .map(|item| {
            let (e, r) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entries are `epoch:rate`, got `{item}`")))?;
            Ok((kv::value(key, e.trim())?, kv::value(key, r.trim())?))
        })
        .collect()
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.unary.validate()?;
        self.pd.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.patch.validate()?;
        if self.luma.iter().any(|w| !(*w >= 0.0)) || (self.luma.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("luma weights must be non-negative and sum to 1".into()));
        }
        if self.euclid_iterations == 0 {
            return Err(Error::Config("euclid_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Parses `key = value` text on top of the defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let pairs = kv::parse(text)?;
        let unrolls = pairs
            .iter()
            .find(|(k, _)| k == "unrolls")
            .map(|(k, v)| kv::value::<usize>(k, v))
            .transpose()?;
        if let Some(t) = unrolls {
            cfg.pd = PdParams {
                edge_weight: cfg.pd.edge_weight,
                ..PdParams::with_unrolls(t)
            };
        }
        for (key, v) in &pairs {
            let k = key.as_str();
            match k {
                "unrolls" => {}
                "unary" => cfg.unary.provider = v.parse()?,
                "window" => cfg.unary.window = kv::value(k, v)?,
                "k_niblack" => cfg.unary.k_niblack = kv::value(k, v)?,
                "k_sauvola" => cfg.unary.k_sauvola = kv::value(k, v)?,
                "r_sauvola" => cfg.unary.r_sauvola = kv::value(k, v)?,
                "lambda" => cfg.unary.lambda = kv::value(k, v)?,
                "sharpness" => cfg.unary.sharpness = kv::value(k, v)?,
                "tau" => cfg.pd.tau = kv::list(k, v)?,
                "sigma" => cfg.pd.sigma = kv::list(k, v)?,
                "edge_weight" => cfg.pd.edge_weight = kv::value(k, v)?,
                "theta" => cfg.pd.theta = kv::value(k, v)?,
                "clamp_max" => cfg.pd.clamp_max = kv::value(k, v)?,
                "clamp_eps" => cfg.pd.clamp_eps = kv::value(k, v)?,
                "exponent" => cfg.loss.exponent = kv::value(k, v)?,
                "eps_log" => cfg.loss.eps_log = kv::value(k, v)?,
                "learning_rate" => cfg.optim.learning_rate = kv::value(k, v)?,
                "weight_decay" => cfg.optim.weight_decay = kv::value(k, v)?,
                "beta1" => cfg.optim.beta1 = kv::value(k, v)?,
                "beta2" => cfg.optim.beta2 = kv::value(k, v)?,
                "adam_eps" => cfg.optim.adam_eps = kv::value(k, v)?,
                "epochs" => cfg.optim.epochs = kv::value(k, v)?,
                "batch_size" => cfg.optim.batch_size = kv::value(k, v)?,
                "schedule" => cfg.optim.schedule = parse_schedule(k, v)?,
                "seed" => cfg.optim.seed = kv::value(k, v)?,
                "patch_width" => cfg.patch.width = kv::value(k, v)?,
                "patch_height" => cfg.patch.height = kv::value(k, v)?,
                "overlap" => cfg.patch.overlap = kv::value(k, v)?,
                "luma" => {
                    let w: Vec<f64> = kv::list(k, v)?;
                    cfg.luma = w
                        .try_into()
                        .map_err(|_| Error::Config("luma needs three weights".into()))?;
                }
                "solver" => cfg.solver = v.parse()?,
                "euclid_iterations" => cfg.euclid_iterations = kv::value(k, v)?,
                "invert" => cfg.invert = parse_bool(k, v)?,
                _ if IGNORED_KEYS.contains(&k) => {}
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_kv(&text)
    }

    /// Parameters of the Euclidean solver run.
    pub fn euclid_params(&self) -> PdParams {
        PdParams {
            tau: vec![self.pd.tau[0]; self.euclid_iterations],
            sigma: vec![self.pd.sigma[0]; self.euclid_iterations],
            ..self.pd.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{TrainOutcome, TrainableParams};
    use crate::unary::UnaryProvider;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(PipelineConfig::from_kv("").unwrap(), PipelineConfig::default());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn parses_every_section() {
        let text = "unary = niblack\nwindow = 15\nunrolls = 3\ntau = 0.1, 0.2, 0.3\nedge_weight = 2\n\
                    exponent = -1\nschedule = 5:1e-4, 8:5e-5\npatch_width = 64\noverlap = 0.1\n\
                    solver = euclid\ninvert = yes\nluma = 0.2, 0.7, 0.1\n";
        let cfg = PipelineConfig::from_kv(text).unwrap();
        assert_eq!(cfg.unary.provider, UnaryProvider::Niblack);
        assert_eq!(cfg.unary.window, 15);
        assert_eq!(cfg.pd.tau, vec![0.1, 0.2, 0.3]);
        assert_eq!(cfg.pd.sigma, vec![0.25; 3]);
        assert_eq!(cfg.pd.edge_weight, 2.0);
        assert_eq!(cfg.loss.exponent, -1.0);
        assert_eq!(cfg.optim.schedule, vec![(5, 1e-4), (8, 5e-5)]);
        assert_eq!(cfg.patch.width, 64);
        assert_eq!(cfg.solver, Solver::Euclid);
        assert!(cfg.invert);
        assert_eq!(cfg.luma, [0.2, 0.7, 0.1]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(PipelineConfig::from_kv("bogus = 1").is_err());
        assert!(PipelineConfig::from_kv("tau = 0.1, 0.2").is_err());
        assert!(PipelineConfig::from_kv("window = 4").is_err());
        assert!(PipelineConfig::from_kv("invert = maybe").is_err());
        assert!(matches!(PipelineConfig::from_kv("luma = 1, 0"), Err(Error::Config(_))));
    }

    #[test]
    fn trained_params_file_is_a_valid_config() {
        let mut best = TrainableParams::from_pd(&PdParams::with_unrolls(4));
        best.log_tau[2] = 0.4f64.ln();
        best.log_edge_weight = 1.5f64.ln();
        let outcome = TrainOutcome {
            best: best.clone(),
            best_epoch: 2,
            last: best,
            history: vec![0.5, 0.4],
            validation_history: vec![0.5, 0.4],
        };
        let cfg = PipelineConfig::from_kv(&outcome.to_kv()).unwrap();
        assert_eq!(cfg.pd.unrolls(), 4);
        assert!((cfg.pd.tau[2] - 0.4).abs() < 1e-15);
        assert!((cfg.pd.edge_weight - 1.5).abs() < 1e-15);
    }
}

//! Flat `key = value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. [`TrainConfig::to_text`] writes every key in a fixed order, so
//! the text form of a configuration is canonical.

use std::fmt::Write as _;
use std::path::Path;

use crate::adapt::DEFAULT_BANDWIDTH_SCALES;
use crate::error::{Error, Result};
use crate::nets::DiffMode;
use crate::response::CombineMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    Mmd,
    Dann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub lambda_reco_c: f64,
    pub lambda_reco_t: f64,
    pub lambda_sim: f64,
    pub lambda_diff: f64,
    pub lambda_cls: f64,
    pub alignment: Alignment,
    /// Fraction of target samples whose labels stage 2 may use.
    pub target_label_fraction: f64,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Input corruption probability of the encoders during stage 1.
    pub dropout_noise: f64,
    pub grl_lambda: f64,
    pub diff_mode: DiffMode,
    pub combine_mode: CombineMode,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub gat_hidden: usize,
    pub predictor_hidden: usize,
    pub mmd_bandwidth_scales: Vec<f64>,
    /// When false the tumor has no private factor (the baseline model).
    pub disentangle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 128,
            hidden_dims: vec![512, 256],
            epochs_stage1: 200,
            epochs_stage2: 200,
            batch_size: 64,
            lambda_reco_c: 1.0,
            lambda_reco_t: 1.0,
            lambda_sim: 1.0,
            lambda_diff: 1.0,
            lambda_cls: 1.0,
            alignment: Alignment::Mmd,
            target_label_fraction: 0.3,
            seed: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout_noise: 0.1,
            grl_lambda: 1.0,
            diff_mode: DiffMode::Batch,
            combine_mode: CombineMode::Logit,
            gat_layers: 2,
            gat_heads: 4,
            gat_hidden: 32,
            predictor_hidden: 64,
            mmd_bandwidth_scales: DEFAULT_BANDWIDTH_SCALES.to_vec(),
            disentangle: true,
        }
    }
}

/// Every accepted key, in canonical output order.
pub const CONFIG_KEYS: [&str; 27] = [
    "latent_dim",
    "hidden_dims",
    "epochs_stage1",
    "epochs_stage2",
    "batch_size",
    "lambda_reco_c",
    "lambda_reco_t",
    "lambda_sim",
    "lambda_diff",
    "lambda_cls",
    "alignment",
    "target_label_fraction",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "dropout_noise",
    "grl_lambda",
    "diff_mode",
    "combine_mode",
    "gat_layers",
    "gat_heads",
    "gat_hidden",
    "predictor_hidden",
    "mmd_bandwidth_scales",
    "disentangle",
];

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Parameter(format!("config key {key}: {value:?} is not {want}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, want))
}

fn list<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s, want))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("config line {}: expected key = value, got {line:?}", i + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assigns one key. Does not revalidate the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = num(key, v, "a positive integer")?,
            "hidden_dims" => self.hidden_dims = list(key, v, "a list of positive integers")?,
            "epochs_stage1" => self.epochs_stage1 = num(key, v, "an integer")?,
            "epochs_stage2" => self.epochs_stage2 = num(key, v, "an integer")?,
            "batch_size" => self.batch_size = num(key, v, "a positive integer")?,
            "lambda_reco_c" => self.lambda_reco_c = num(key, v, "a number")?,
            "lambda_reco_t" => self.lambda_reco_t = num(key, v, "a number")?,
            "lambda_sim" => self.lambda_sim = num(key, v, "a number")?,
            "lambda_diff" => self.lambda_diff = num(key, v, "a number")?,
            "lambda_cls" => self.lambda_cls = num(key, v, "a number")?,
            "alignment" => {
                self.alignment = match v {
                    "mmd" => Alignment::Mmd,
                    "dann" => Alignment::Dann,
                    _ => return Err(bad(key, v, "mmd or dann")),
                }
            }
            "target_label_fraction" => self.target_label_fraction = num(key, v, "a number")?,
            "seed" => self.seed = num(key, v, "an unsigned integer")?,
            "lr" => self.lr = num(key, v, "a number")?,
            "beta1" => self.beta1 = num(key, v, "a number")?,
            "beta2" => self.beta2 = num(key, v, "a number")?,
            "eps" => self.eps = num(key, v, "a number")?,
            "dropout_noise" => self.dropout_noise = num(key, v, "a number")?,
            "grl_lambda" => self.grl_lambda = num(key, v, "a number")?,
            "diff_mode" => {
                self.diff_mode = match v {
                    "batch" => DiffMode::Batch,
                    "per_sample" => DiffMode::PerSample,
                    _ => return Err(bad(key, v, "batch or per_sample")),
                }
            }
            "combine_mode" => {
                self.combine_mode = match v {
                    "logit" => CombineMode::Logit,
                    "probability" => CombineMode::Probability,
                    _ => return Err(bad(key, v, "logit or probability")),
                }
            }
            "gat_layers" => self.gat_layers = num(key, v, "a positive integer")?,
            "gat_heads" => self.gat_heads = num(key, v, "a positive integer")?,
            "gat_hidden" => self.gat_hidden = num(key, v, "a positive integer")?,
            "predictor_hidden" => self.predictor_hidden = num(key, v, "a positive integer")?,
            "mmd_bandwidth_scales" => self.mmd_bandwidth_scales = list(key, v, "a list of numbers")?,
            "disentangle" => self.disentangle = num(key, v, "true or false")?,
            _ => return Err(Error::Parameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.latent_dim == 0 || self.batch_size == 0 || self.predictor_hidden == 0 {
            return p("latent_dim, batch_size and predictor_hidden must be positive");
        }
        if self.hidden_dims.contains(&0) {
            return p("hidden_dims entries must be positive");
        }
        if self.gat_layers == 0 || self.gat_heads == 0 || self.gat_hidden == 0 {
            return p("gat_layers, gat_heads and gat_hidden must be positive");
        }
        let lambdas = [
            self.lambda_reco_c,
            self.lambda_reco_t,
            self.lambda_sim,
            self.lambda_diff,
            self.lambda_cls,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return p("loss weights must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.target_label_fraction) {
            return p("target_label_fraction must lie in [0, 1]");
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return p("optimizer settings need lr > 0, betas in [0, 1), eps > 0");
        }
        if !(0.0..1.0).contains(&self.dropout_noise) {
            return p("dropout_noise must lie in [0, 1)");
        }
        if !(self.grl_lambda > 0.0) || !self.grl_lambda.is_finite() {
            return p("grl_lambda must be positive");
        }
        if self.mmd_bandwidth_scales.is_empty()
            || self.mmd_bandwidth_scales.iter().any(|s| !(*s > 0.0) || !s.is_finite())
        {
            return p("mmd_bandwidth_scales must be a nonempty list of positive numbers");
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("latent_dim", self.latent_dim.to_string());
        kv("hidden_dims", join(&self.hidden_dims));
        kv("epochs_stage1", self.epochs_stage1.to_string());
        kv("epochs_stage2", self.epochs_stage2.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lambda_reco_c", self.lambda_reco_c.to_string());
        kv("lambda_reco_t", self.lambda_reco_t.to_string());
        kv("lambda_sim", self.lambda_sim.to_string());
        kv("lambda_diff", self.lambda_diff.to_string());
        kv("lambda_cls", self.lambda_cls.to_string());
        kv(
            "alignment",
            match self.alignment {
                Alignment::Mmd => "mmd",
                Alignment::Dann => "dann",
            }
            .into(),
        );
        kv("target_label_fraction", self.target_label_fraction.to_string());
        kv("seed", self.seed.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("dropout_noise", self.dropout_noise.to_string());
        kv("grl_lambda", self.grl_lambda.to_string());
        kv(
            "diff_mode",
            match self.diff_mode {
                DiffMode::Batch => "batch",
                DiffMode::PerSample => "per_sample",
            }
            .into(),
        );
        kv(
            "combine_mode",
            match self.combine_mode {
                CombineMode::Logit => "logit",
                CombineMode::Probability => "probability",
            }
            .into(),
        );
        kv("gat_layers", self.gat_layers.to_string());
        kv("gat_heads", self.gat_heads.to_string());
        kv("gat_hidden", self.gat_hidden.to_string());
        kv("predictor_hidden", self.predictor_hidden.to_string());
        kv("mmd_bandwidth_scales", join(&self.mmd_bandwidth_scales));
        kv("disentangle", self.disentangle.to_string());
        s
    }
}

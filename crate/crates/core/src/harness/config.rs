//! Declarative experiment description and its `key = value` file grammar.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Floats accept `a/b` fractions (e.g. `8/255`); lists are comma-separated;
//! dims are written `1x8x8`. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{CorruptionKind, PgdConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::sparsifiers::{GmpOptions, Method, MethodOptions, SetOptions};
use crate::tensor::Float;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// Directory with `{train,test}_{images,labels}.stns`.
    Files(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hardness {
    None,
    El2n,
    Corruption,
    Adversarial,
}

impl Hardness {
    pub fn as_str(self) -> &'static str {
        match self {
            Hardness::None => "none",
            Hardness::El2n => "el2n",
            Hardness::Corruption => "corruption",
            Hardness::Adversarial => "adversarial",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Hardness::None, Hardness::El2n, Hardness::Corruption, Hardness::Adversarial]
            .into_iter()
            .find(|h| h.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    MiniConvNet,
    Mlp,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::MiniConvNet => "miniconvnet",
            Arch::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub classes: usize,
    pub data_seed: u64,
    pub synth_test_per_class: usize,

    pub hardness: Hardness,
    pub el2n_keep_frac: Float,
    pub el2n_models: usize,
    /// Scoring-model epochs; `None` reuses `epochs`.
    pub el2n_epochs: Option<usize>,
    pub corruption: CorruptionKind,
    pub severity: u8,
    /// Test-set severity; `None` links it to `severity`.
    pub test_severity: Option<u8>,
    pub corrupt_test: bool,
    pub pgd_epsilon: Float,
    pub pgd_alpha: Float,
    pub pgd_train_steps: usize,
    pub pgd_eval_steps: usize,
    pub pgd_random_start: bool,
    /// Adversarial test accuracy every epoch; `None` enables it for the adversarial regime only.
    pub eval_attack: Option<bool>,
    pub data_ratio: Float,

    pub method: Method,
    pub sparsity: Float,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    /// `None` places milestones at 50% and 75% of `epochs`.
    pub milestones: Option<Vec<usize>>,
    pub lr_factor: Float,
    pub seed: u64,

    pub arch: Arch,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: Vec<usize>,

    pub gmp_start: Float,
    pub gmp_end: Float,
    pub gmp_interval: usize,
    pub set_zeta: Float,
    pub set_interval: usize,
    pub set_stop: Float,
    pub snip_batch: usize,
    pub eval_batch: usize,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthSpec::default()),
            classes: 10,
            data_seed: 0,
            synth_test_per_class: 200,
            hardness: Hardness::None,
            el2n_keep_frac: 0.5,
            el2n_models: 1,
            el2n_epochs: None,
            corruption: CorruptionKind::GaussianNoise,
            severity: 5,
            test_severity: None,
            corrupt_test: true,
            pgd_epsilon: 8.0 / 255.0,
            pgd_alpha: 2.0 / 255.0,
            pgd_train_steps: 10,
            pgd_eval_steps: 20,
            pgd_random_start: true,
            eval_attack: None,
            data_ratio: 1.0,
            method: Method::Dense,
            sparsity: 0.0,
            epochs: 40,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: None,
            lr_factor: 0.1,
            seed: 0,
            arch: Arch::MiniConvNet,
            channels: vec![16, 32],
            kernel: 3,
            hidden: vec![64],
            gmp_start: 0.1,
            gmp_end: 0.8,
            gmp_interval: 4,
            set_zeta: 0.3,
            set_interval: 4,
            set_stop: 0.75,
            snip_batch: 128,
            eval_batch: 500,
            record_wall_time: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "data",
    "classes",
    "data_seed",
    "synth_per_class",
    "synth_test_per_class",
    "synth_dims",
    "synth_blobs",
    "synth_overlap",
    "synth_jitter",
    "synth_noise",
    "hardness",
    "el2n_keep_frac",
    "el2n_models",
    "el2n_epochs",
    "corruption",
    "severity",
    "test_severity",
    "corrupt_test",
    "pgd_epsilon",
    "pgd_alpha",
    "pgd_train_steps",
    "pgd_eval_steps",
    "pgd_random_start",
    "eval_attack",
    "data_ratio",
    "method",
    "sparsity",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "milestones",
    "lr_factor",
    "seed",
    "model",
    "channels",
    "kernel",
    "hidden",
    "gmp_start",
    "gmp_end",
    "gmp_interval",
    "set_zeta",
    "set_interval",
    "set_stop",
    "snip_batch",
    "eval_batch",
    "record_wall_time",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::config(key, format!("`{value}` is not {what}"))
}

fn parse_float(key: &str, v: &str) -> Result<Float> {
    let parsed = match v.split_once('/') {
        Some((a, b)) => a
            .trim()
            .parse::<Float>()
            .ok()
            .zip(b.trim().parse::<Float>().ok())
            .map(|(a, b)| a / b),
        None => v.parse::<Float>().ok(),
    };
    parsed
        .filter(|f| f.is_finite())
        .ok_or_else(|| bad(key, v, "a finite number"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a nonnegative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "a nonnegative integer"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn parse_list(key: &str, v: &str, sep: char) -> Result<Vec<usize>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(sep).map(|p| parse_usize(key, p.trim())).collect()
}

fn join(xs: &[usize], sep: &str) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(sep)
}

fn auto<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

impl ExperimentConfig {
    fn synth_mut(&mut self, key: &str) -> Result<&mut SynthSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Files(_) => Err(Error::config(key, "only applies to `data = synthetic`")),
        }
    }

    /// Assigns one key. Values are trimmed; errors carry the key as field path.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => {
                self.data = if v == "synthetic" {
                    match &self.data {
                        DataSource::Synthetic(_) => self.data.clone(),
                        DataSource::Files(_) => DataSource::Synthetic(SynthSpec::default()),
                    }
                } else if v.is_empty() {
                    return Err(bad(key, v, "`synthetic` or a directory"));
                } else {
                    DataSource::Files(PathBuf::from(v))
                }
            }
            "classes" => self.classes = parse_usize(key, v)?,
            "data_seed" => self.data_seed = parse_u64(key, v)?,
            "synth_per_class" => self.synth_mut(key)?.per_class = parse_usize(key, v)?,
            "synth_test_per_class" => self.synth_test_per_class = parse_usize(key, v)?,
            "synth_dims" => {
                let dims = parse_list(key, v, 'x')?;
                self.synth_mut(key)?.dims = dims;
            }
            "synth_blobs" => self.synth_mut(key)?.blobs = parse_usize(key, v)?,
            "synth_overlap" => self.synth_mut(key)?.overlap = parse_float(key, v)?,
            "synth_jitter" => self.synth_mut(key)?.jitter = parse_float(key, v)?,
            "synth_noise" => self.synth_mut(key)?.noise = parse_float(key, v)?,
            "hardness" => {
                self.hardness =
                    Hardness::parse(v).ok_or_else(|| bad(key, v, "none|el2n|corruption|adversarial"))?
            }
            "el2n_keep_frac" => self.el2n_keep_frac = parse_float(key, v)?,
            "el2n_models" => self.el2n_models = parse_usize(key, v)?,
            "el2n_epochs" => self.el2n_epochs = auto(key, v, parse_usize)?,
            "corruption" => {
                self.corruption = CorruptionKind::parse(v)
                    .ok_or_else(|| bad(key, v, "gaussian_noise|impulse_noise|defocus_blur"))?
            }
            "severity" => self.severity = parse_usize(key, v)?.try_into().map_err(|_| bad(key, v, "a severity"))?,
            "test_severity" => {
                self.test_severity = auto(key, v, |k, v| {
                    parse_usize(k, v)?.try_into().map_err(|_| bad(k, v, "a severity"))
                })?
            }
            "corrupt_test" => self.corrupt_test = parse_bool(key, v)?,
            "pgd_epsilon" => self.pgd_epsilon = parse_float(key, v)?,
            "pgd_alpha" => self.pgd_alpha = parse_float(key, v)?,
            "pgd_train_steps" => self.pgd_train_steps = parse_usize(key, v)?,
            "pgd_eval_steps" => self.pgd_eval_steps = parse_usize(key, v)?,
            "pgd_random_start" => self.pgd_random_start = parse_bool(key, v)?,
            "eval_attack" => self.eval_attack = auto(key, v, parse_bool)?,
            "data_ratio" => self.data_ratio = parse_float(key, v)?,
            "method" => {
                self.method =
                    Method::parse(v).ok_or_else(|| bad(key, v, "a known method"))?
            }
            "sparsity" => self.sparsity = parse_float(key, v)?,
            "epochs" => self.epochs = parse_usize(key, v)?,
            "batch_size" => self.batch_size = parse_usize(key, v)?,
            "lr" => self.lr = parse_float(key, v)?,
            "momentum" => self.momentum = parse_float(key, v)?,
            "weight_decay" => self.weight_decay = parse_float(key, v)?,
            "milestones" => self.milestones = auto(key, v, |k, v| parse_list(k, v, ','))?,
            "lr_factor" => self.lr_factor = parse_float(key, v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "model" => {
                self.arch = match v {
                    "miniconvnet" => Arch::MiniConvNet,
                    "mlp" => Arch::Mlp,
                    _ => return Err(bad(key, v, "miniconvnet|mlp")),
                }
            }
            "channels" => self.channels = parse_list(key, v, ',')?,
            "kernel" => self.kernel = parse_usize(key, v)?,
            "hidden" => self.hidden = parse_list(key, v, ',')?,
            "gmp_start" => self.gmp_start = parse_float(key, v)?,
            "gmp_end" => self.gmp_end = parse_float(key, v)?,
            "gmp_interval" => self.gmp_interval = parse_usize(key, v)?,
            "set_zeta" => self.set_zeta = parse_float(key, v)?,
            "set_interval" => self.set_interval = parse_usize(key, v)?,
            "set_stop" => self.set_stop = parse_float(key, v)?,
            "snip_batch" => self.snip_batch = parse_usize(key, v)?,
            "eval_batch" => self.eval_batch = parse_usize(key, v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a config file's assignments on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn resolved_milestones(&self) -> Vec<usize> {
        match &self.milestones {
            Some(m) => m.clone(),
            None => {
                let mut m: Vec<usize> = [0.5, 0.75]
                    .iter()
                    .map(|f| (f * self.epochs as f64).round() as usize)
                    .filter(|&e| e > 0 && e < self.epochs)
                    .collect();
                m.dedup();
                m
            }
        }
    }

    pub fn resolved_eval_attack(&self) -> bool {
        self.eval_attack.unwrap_or(self.hardness == Hardness::Adversarial)
    }

    pub fn resolved_test_severity(&self) -> u8 {
        self.test_severity.unwrap_or(self.severity)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: &str| Err(Error::config(k, m));
        if self.classes < 2 || self.classes > 256 {
            return err("classes", "must be in 2..=256");
        }
        if let DataSource::Synthetic(s) = &self.data {
            let mut s = s.clone();
            s.classes = self.classes;
            s.validate().map_err(|e| Error::config("synth", e.to_string()))?;
            if self.synth_test_per_class == 0 {
                return err("synth_test_per_class", "must be positive");
            }
        }
        match self.method {
            Method::Dense if self.sparsity != 0.0 => return err("sparsity", "dense method requires 0"),
            Method::Dense => {}
            _ if !(self.sparsity > 0.0 && self.sparsity < 1.0) => {
                return err("sparsity", "must lie in (0, 1) for sparse methods")
            }
            _ => {}
        }
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return err("data_ratio", "must lie in (0, 1]");
        }
        if !(self.el2n_keep_frac > 0.0 && self.el2n_keep_frac <= 1.0) {
            return err("el2n_keep_frac", "must lie in (0, 1]");
        }
        if self.el2n_models == 0 || self.el2n_epochs == Some(0) {
            return err("el2n_models", "scoring needs at least one model and one epoch");
        }
        for (k, s) in [("severity", self.severity), ("test_severity", self.resolved_test_severity())] {
            if !(1..=6).contains(&s) {
                return err(k, "must be in 1..=6");
            }
        }
        if !(self.pgd_epsilon >= 0.0) {
            return err("pgd_epsilon", "must be nonnegative");
        }
        if !(self.pgd_alpha > 0.0) {
            return err("pgd_alpha", "must be positive");
        }
        if self.epochs == 0 {
            return err("epochs", "must be positive");
        }
        if self.batch_size == 0 || self.eval_batch == 0 || self.snip_batch == 0 {
            return err("batch_size", "batch sizes must be positive");
        }
        let m = self.resolved_milestones();
        if m.windows(2).any(|w| w[0] >= w[1]) || m.iter().any(|&e| e >= self.epochs) {
            return err("milestones", "must be strictly increasing and below epochs");
        }
        if !(self.lr > 0.0) {
            return err("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return err("weight_decay", "must be nonnegative");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return err("lr_factor", "must lie in (0, 1)");
        }
        if self.arch == Arch::MiniConvNet && (self.channels.is_empty() || self.kernel % 2 == 0) {
            return err("channels", "miniconvnet needs channels and an odd kernel");
        }
        if !(0.0..=self.gmp_end).contains(&self.gmp_start) || self.gmp_end > 1.0 || self.gmp_interval == 0 {
            return err("gmp_start", "need 0 ≤ gmp_start ≤ gmp_end ≤ 1 and gmp_interval > 0");
        }
        if !(0.0..=1.0).contains(&self.set_zeta) || !(0.0..=1.0).contains(&self.set_stop) || self.set_interval == 0 {
            return err("set_zeta", "need set_zeta, set_stop in [0, 1] and set_interval > 0");
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match &self.data {
            DataSource::Synthetic(s) => Some(SynthSpec {
                classes: self.classes,
                ..s.clone()
            }),
            DataSource::Files(_) => None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            milestones: self.resolved_milestones(),
            lr_factor: self.lr_factor,
            seed: self.seed,
            adversarial: (self.hardness == Hardness::Adversarial).then(|| self.train_attack()),
            eval_attack: self.resolved_eval_attack().then(|| self.eval_attack_config()),
            eval_batch: self.eval_batch,
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn train_attack(&self) -> PgdConfig {
        PgdConfig {
            epsilon: self.pgd_epsilon,
            alpha: self.pgd_alpha,
            steps: self.pgd_train_steps,
            random_start: self.pgd_random_start,
        }
    }

    pub fn eval_attack_config(&self) -> PgdConfig {
        PgdConfig {
            steps: self.pgd_eval_steps,
            ..self.train_attack()
        }
    }

    pub fn method_options(&self) -> MethodOptions {
        MethodOptions {
            gmp: GmpOptions {
                start_frac: self.gmp_start,
                end_frac: self.gmp_end,
                interval: self.gmp_interval,
            },
            set: SetOptions {
                zeta: self.set_zeta,
                interval: self.set_interval,
                stop_frac: self.set_stop,
            },
            snip_batch: self.snip_batch,
        }
    }

    /// Every key with its effective value, in [`KEYS`] order. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let synth = self.synth_spec();
        let mut out = Vec::new();
        for &k in KEYS {
            let v = match k {
                "data" => match &self.data {
                    DataSource::Synthetic(_) => "synthetic".to_string(),
                    DataSource::Files(p) => p.display().to_string(),
                },
                "classes" => self.classes.to_string(),
                "data_seed" => self.data_seed.to_string(),
                "synth_test_per_class" => self.synth_test_per_class.to_string(),
                k if k.starts_with("synth_") => {
                    let Some(s) = &synth else { continue };
                    match k {
                        "synth_per_class" => s.per_class.to_string(),
                        "synth_dims" => join(&s.dims, "x"),
                        "synth_blobs" => s.blobs.to_string(),
                        "synth_overlap" => s.overlap.to_string(),
                        "synth_jitter" => s.jitter.to_string(),
                        _ => s.noise.to_string(),
                    }
                }
                "hardness" => self.hardness.as_str().to_string(),
                "el2n_keep_frac" => self.el2n_keep_frac.to_string(),
                "el2n_models" => self.el2n_models.to_string(),
                "el2n_epochs" => self.el2n_epochs.unwrap_or(self.epochs).to_string(),
                "corruption" => self.corruption.as_str().to_string(),
                "severity" => self.severity.to_string(),
                "test_severity" => self.resolved_test_severity().to_string(),
                "corrupt_test" => self.corrupt_test.to_string(),
                "pgd_epsilon" => self.pgd_epsilon.to_string(),
                "pgd_alpha" => self.pgd_alpha.to_string(),
                "pgd_train_steps" => self.pgd_train_steps.to_string(),
                "pgd_eval_steps" => self.pgd_eval_steps.to_string(),
                "pgd_random_start" => self.pgd_random_start.to_string(),
                "eval_attack" => self.resolved_eval_attack().to_string(),
                "data_ratio" => self.data_ratio.to_string(),
                "method" => self.method.as_str().to_string(),
                "sparsity" => self.sparsity.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "lr" => self.lr.to_string(),
                "momentum" => self.momentum.to_string(),
                "weight_decay" => self.weight_decay.to_string(),
                "milestones" => {
                    let m = self.resolved_milestones();
                    if m.is_empty() {
                        "none".to_string()
                    } else {
                        join(&m, ",")
                    }
                }
                "lr_factor" => self.lr_factor.to_string(),
                "seed" => self.seed.to_string(),
                "model" => self.arch.as_str().to_string(),
                "channels" => join(&self.channels, ","),
                "kernel" => self.kernel.to_string(),
                "hidden" => join(&self.hidden, ","),
                "gmp_start" => self.gmp_start.to_string(),
                "gmp_end" => self.gmp_end.to_string(),
                "gmp_interval" => self.gmp_interval.to_string(),
                "set_zeta" => self.set_zeta.to_string(),
                "set_interval" => self.set_interval.to_string(),
                "set_stop" => self.set_stop.to_string(),
                "snip_batch" => self.snip_batch.to_string(),
                "eval_batch" => self.eval_batch.to_string(),
                "record_wall_time" => self.record_wall_time.to_string(),
                _ => unreachable!("key table out of sync: {k}"),
            };
            out.push((k, v));
        }
        out
    }

    /// Replayable config text: feeding it back through [`ExperimentConfig::from_text`]
    /// reproduces this config.
    pub fn to_manifest(&self) -> String {
        let mut s = format!(
            "# sparselab run manifest\n# code version: {} {}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

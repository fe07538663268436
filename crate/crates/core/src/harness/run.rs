use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::{save_masks, save_model};
use super::config::{Arch, DataSource, ExperimentConfig, Hardness};
use crate::data::{
    corrupt, el2n_score, filter_hard, make_synthetic, subsample, CorruptionSpec, Dataset, ScoreRecord, Split,
};
use crate::error::{Error, Result};
use crate::model::{miniconvnet_spec, mlp_spec, Model, ModelSpec};
use crate::sparsifiers::{run_method, Dense};
use crate::sparsity::{density_csv, density_report, DensityRow, FlopsLedger, MaskSet, Phase};
use crate::tensor::Float;
use crate::train::{derive_seed, MetricsRecord, TrainObserver, Trainer};

/// Files of a run directory, and nothing else.
pub const RUN_FILES: [&str; 6] = ["manifest", "metrics.csv", "density.csv", "flops.json", "masks.bin", "model.bin"];

const MODEL_STREAM: u64 = 0x6d6f_64656c;
const SCORE_STREAM: u64 = 0x656c_326e;
const CORRUPT_STREAM: u64 = 0x6372_7074;
const RATIO_STREAM: u64 = 0x7261_7469_6f;

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_acc,test_clean_acc,test_adv_acc,global_sparsity,cumulative_flops,wall_seconds";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        let adv = r.test_adv_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let wall = r.wall_seconds.map(|w| format!("{w:.3}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{adv},{:.6},{:.0},{wall}",
            r.epoch, r.train_loss, r.train_acc, r.test_clean_acc, r.global_sparsity, r.cumulative_flops
        )
        .unwrap();
    }
    out
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::input("metrics file has an unexpected header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::input(format!("malformed metrics row `{line}`"));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])? as Float,
                train_acc: num(f[2])? as Float,
                test_clean_acc: num(f[3])? as Float,
                test_adv_acc: opt(f[4])?.map(|v| v as Float),
                global_sparsity: num(f[5])? as Float,
                cumulative_flops: num(f[6])?,
                wall_seconds: opt(f[7])?,
            })
        })
        .collect()
}

/// Raw train and test splits named by the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synthetic(_) => {
            let spec = cfg.synth_spec().expect("synthetic source");
            let train = make_synthetic(&spec, Split::Train, cfg.data_seed)?;
            let test_spec = crate::data::SynthSpec {
                per_class: cfg.synth_test_per_class,
                ..spec
            };
            let test = make_synthetic(&test_spec, Split::Test, cfg.data_seed)?;
            Ok((train, test))
        }
        DataSource::Files(dir) => Ok((
            Dataset::load(dir, Split::Train, cfg.classes)?,
            Dataset::load(dir, Split::Test, cfg.classes)?,
        )),
    }
}

pub fn model_spec(cfg: &ExperimentConfig, sample_dims: &[usize]) -> Result<ModelSpec> {
    match cfg.arch {
        Arch::MiniConvNet => {
            let dims: [usize; 3] = sample_dims
                .try_into()
                .map_err(|_| Error::config("model", "miniconvnet needs [C, H, W] samples"))?;
            miniconvnet_spec(dims, &cfg.channels, cfg.kernel, cfg.classes)
        }
        Arch::Mlp => mlp_spec(sample_dims, &cfg.hidden, cfg.classes),
    }
}

/// Freshly initialized model for this run's seed.
pub fn build_model(cfg: &ExperimentConfig, sample_dims: &[usize]) -> Result<Model> {
    Ok(Model::from_spec(model_spec(cfg, sample_dims)?, derive_seed(cfg.seed, MODEL_STREAM, 0)))
}

/// Dense clean training run used by EL2N scoring; model `k` of the ensemble
/// depends only on `data_seed` and `k`.
pub fn train_scoring_models(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<Model>> {
    (0..cfg.el2n_models)
        .map(|k| {
            let seed = derive_seed(cfg.data_seed, SCORE_STREAM, k as u64);
            let epochs = cfg.el2n_epochs.unwrap_or(cfg.epochs);
            let scoring = ExperimentConfig {
                epochs,
                milestones: if epochs == cfg.epochs { cfg.milestones.clone() } else { None },
                seed,
                hardness: Hardness::None,
                eval_attack: Some(false),
                ..cfg.clone()
            };
            let tc = scoring.train_config();
            let mut model = Model::from_spec(model_spec(cfg, train.sample_dims())?, seed);
            let mut masks = model.spec().full_masks();
            let trainer = Trainer {
                config: &tc,
                train,
                test,
            };
            let mut ledger = FlopsLedger::default();
            trainer.run(&mut model, &mut masks, &mut Dense, Phase::SparseTrain, 0, &mut ledger, &mut ())?;
            Ok(model)
        })
        .collect()
}

fn corruption_spec(cfg: &ExperimentConfig, severity: u8, k: u64) -> CorruptionSpec {
    CorruptionSpec {
        kind: cfg.corruption,
        severity,
        seed: derive_seed(cfg.data_seed, CORRUPT_STREAM, k),
    }
}

fn corrupt_test(cfg: &ExperimentConfig, test: Dataset) -> Result<Dataset> {
    if cfg.hardness == Hardness::Corruption && cfg.corrupt_test {
        corrupt(&test, &corruption_spec(cfg, cfg.resolved_test_severity(), 1))
    } else {
        Ok(test)
    }
}

/// The evaluation split exactly as a run sees it, without touching the
/// training split.
pub fn load_test_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let test = match &cfg.data {
        DataSource::Synthetic(_) => {
            let spec = crate::data::SynthSpec {
                per_class: cfg.synth_test_per_class,
                ..cfg.synth_spec().expect("synthetic source")
            };
            make_synthetic(&spec, Split::Test, cfg.data_seed)?
        }
        DataSource::Files(dir) => Dataset::load(dir, Split::Test, cfg.classes)?,
    };
    corrupt_test(cfg, test)
}

/// Training and test data after the hardness regime and data-ratio subsampling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    /// EL2N scores of the full training split, when scored.
    pub scores: Option<Vec<ScoreRecord>>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    let (train, test, scores) = match cfg.hardness {
        Hardness::None | Hardness::Adversarial => (train, test, None),
        Hardness::El2n => {
            let models = train_scoring_models(cfg, &train, &test)?;
            let refs: Vec<(&Model, Option<&MaskSet>)> = models.iter().map(|m| (m, None)).collect();
            let scores = el2n_score(&refs, &train, cfg.eval_batch)?;
            let values: Vec<Float> = scores.iter().map(|s| s.el2n).collect();
            (filter_hard(&train, &values, cfg.el2n_keep_frac)?, test, Some(scores))
        }
        Hardness::Corruption => {
            let train = corrupt(&train, &corruption_spec(cfg, cfg.severity, 0))?;
            (train, corrupt_test(cfg, test)?, None)
        }
    };
    let train = if cfg.data_ratio < 1.0 {
        subsample(&train, cfg.data_ratio, derive_seed(cfg.data_seed, RATIO_STREAM, 0))?
    } else {
        train
    };
    Ok(Prepared { train, test, scores })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub ledger: FlopsLedger,
    pub density: Vec<DensityRow>,
    pub masks: MaskSet,
    pub model: Model,
}

impl RunSummary {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("runs have at least one epoch")
    }
}

/// Trains on already prepared data and writes the run directory.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    data: &Prepared,
    out_dir: impl AsRef<Path>,
    observer: &mut dyn TrainObserver,
) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = out_dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tc = cfg.train_config();
    let trainer = Trainer {
        config: &tc,
        train: &data.train,
        test: &data.test,
    };
    let mut model = build_model(cfg, data.train.sample_dims())?;
    let mut ledger = FlopsLedger::default();
    let (records, masks) = run_method(
        cfg.method,
        cfg.sparsity,
        &cfg.method_options(),
        &trainer,
        &mut model,
        &mut ledger,
        observer,
    )?;
    ledger.final_params = masks.nonzero_count();
    let density = density_report(&masks, model.layer_shapes())?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("manifest", &cfg.to_manifest())?;
    write("metrics.csv", &metrics_csv(&records))?;
    write("density.csv", &density_csv(&density))?;
    write("flops.json", &ledger.to_json())?;
    save_masks(dir.join("masks.bin"), &masks)?;
    save_model(dir.join("model.bin"), &model)?;
    Ok(RunSummary {
        dir,
        records,
        ledger,
        density,
        masks,
        model,
    })
}

/// Full pipeline: data, hardness regime, method lifecycle, artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data, out_dir, &mut ())
}

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Arg, ArgAction, ArgMatches, Args, FromArgMatches, Parser, Subcommand};
use sparselab::data::{
    corrupt, el2n_score, filter_hard, read_scores_csv, scores_csv, CorruptionKind, CorruptionSpec, Dataset,
    PgdConfig, Split,
};
use sparselab::harness::{
    build_model, load_datasets, load_masks, load_model_into, load_test_data, model_spec, run_experiment,
    run_jobs_in_process, run_sweep, train_scoring_models, ExperimentConfig, SweepAxes, SweepJob, KEYS,
};
use sparselab::sparsity::{density_csv, density_report, flops_forward, FlopsLedger};
use sparselab::train::evaluate;
use sparselab::{Error, Float, Result};

#[derive(Parser)]
#[command(name = "sparselab", version, about = "Sparse training on hard samples at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train and test splits into a directory.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the scoring ensemble and write per-sample EL2N scores.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the hardest fraction of a training split by score.
    Filter {
        /// Dataset directory holding train and test files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        keep_frac: Float,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write corrupted copies of a dataset's splits.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: CorruptionKind,
        #[arg(long)]
        severity: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// `train`, `test` or `both`; untouched splits are copied.
        #[arg(long, default_value = "both")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Cartesian product of axis values and seeds, then aggregate.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated sparsity values.
        #[arg(long)]
        sweep_sparsity: Option<String>,
        /// Comma-separated data ratios.
        #[arg(long)]
        sweep_data_ratio: Option<String>,
        /// Comma-separated corruption severities.
        #[arg(long)]
        sweep_severity: Option<String>,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        /// Worker processes; 0 runs every cell inside this process.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a run's final checkpoint under a PGD attack.
    AttackEval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        epsilon: Option<Float>,
        #[arg(long)]
        alpha: Option<Float>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_random_start: bool,
    },
    /// Per-layer density and FLOPs of a run's checkpoint.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Mask file to report instead of the run's own.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<CorruptionKind, String> {
    CorruptionKind::parse(s).ok_or_else(|| format!("unknown corruption `{s}`"))
}

/// `--config <file>` plus one flag per config key; flags win over the file.
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.file {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut a = ConfigArgs {
            file: None,
            overrides: Vec::new(),
        };
        a.update_from_arg_matches(m)?;
        Ok(a)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        if let Some(f) = m.get_one::<PathBuf>("config") {
            self.file = Some(f.clone());
        }
        for &k in KEYS {
            if let Some(v) = m.get_one::<String>(k) {
                self.overrides.retain(|(key, _)| *key != k);
                self.overrides.push((k, v.clone()));
            }
        }
        // Apply in key order so `data` precedes the synthetic fields.
        self.overrides
            .sort_by_key(|(k, _)| KEYS.iter().position(|x| x == k));
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Line-oriented `key = value` file"),
        );
        KEYS.iter().fold(cmd, |cmd, &k| {
            let long: &'static str = Box::leak(k.replace('_', "-").into_boxed_str());
            let mut arg = Arg::new(k)
                .long(long)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help_heading("Experiment");
            if long != k {
                arg = arg.alias(k);
            }
            cmd.arg(arg)
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(flag, format!("`{p}` is not a valid value")))
        })
        .collect()
}

/// Runs each job as `sparselab train` in up to `workers` child processes.
/// Returns the first failing child's exit code.
fn run_children(jobs: &[SweepJob], workers: usize, cfg_dir: &Path) -> Result<Option<i32>> {
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let mut files = Vec::with_capacity(jobs.len());
    for job in jobs {
        let p = cfg_dir.join(format!("cell{}_seed{}.cfg", job.cell, job.seed));
        write_file(&p, &job.config.to_manifest())?;
        files.push(p);
    }
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<i32>> = Mutex::new(None);
    let spawn_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                log::info!("sweep cell {} seed {}", jobs[i].cell, jobs[i].seed);
                let status = Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&files[i])
                    .arg("--out")
                    .arg(&jobs[i].dir)
                    .status();
                match status {
                    Ok(st) if st.success() => {}
                    Ok(st) => {
                        log::error!("cell {} seed {} failed: {st}", jobs[i].cell, jobs[i].seed);
                        failure.lock().unwrap().get_or_insert(st.code().unwrap_or(1));
                    }
                    Err(e) => {
                        spawn_error.lock().unwrap().get_or_insert(Error::io(&exe, e));
                        failure.lock().unwrap().get_or_insert(4);
                    }
                }
            });
        }
    });
    if let Some(e) = spawn_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(failure.into_inner().unwrap())
}

fn execute(cmd: Cmd) -> Result<Option<i32>> {
    let stdout = &mut std::io::stdout().lock();
    let print = |out: &mut std::io::StdoutLock, text: &str| {
        out.write_all(text.as_bytes()).map_err(|e| Error::io("stdout", e))
    };
    match cmd {
        Cmd::Synth { cfg, out } => {
            let cfg = cfg.resolve()?;
            if cfg.synth_spec().is_none() {
                return Err(Error::config("data", "synth needs `data = synthetic`"));
            }
            let (train, test) = load_datasets(&cfg)?;
            train.save(&out)?;
            test.save(&out)?;
            print(stdout, &format!("wrote {} train and {} test samples to {}\n", train.len(), test.len(), out.display()))?;
        }
        Cmd::Score { cfg, out } => {
            let cfg = cfg.resolve()?;
            let (train, test) = load_datasets(&cfg)?;
            let models = train_scoring_models(&cfg, &train, &test)?;
            let refs: Vec<_> = models.iter().map(|m| (m, None)).collect();
            let scores = el2n_score(&refs, &train, cfg.eval_batch)?;
            write_file(&out, &scores_csv(&scores))?;
        }
        Cmd::Filter {
            input,
            scores,
            keep_frac,
            classes,
            out,
        } => {
            let train = Dataset::load(&input, Split::Train, classes)?;
            let test = Dataset::load(&input, Split::Test, classes)?;
            let text = std::fs::read_to_string(&scores).map_err(|e| Error::io(&scores, e))?;
            let records = read_scores_csv(&text)?;
            if records.len() != train.len() {
                return Err(Error::input(format!(
                    "{} scores for {} training samples",
                    records.len(),
                    train.len()
                )));
            }
            let values: Vec<Float> = records.iter().map(|r| r.el2n).collect();
            let kept = filter_hard(&train, &values, keep_frac)?;
            kept.save(&out)?;
            test.save(&out)?;
            print(stdout, &format!("kept {} of {} training samples\n", kept.len(), train.len()))?;
        }
        Cmd::Corrupt {
            input,
            kind,
            severity,
            seed,
            classes,
            split,
            out,
        } => {
            let splits: &[(Split, u64)] = match split.as_str() {
                "train" => &[(Split::Train, 0)],
                "test" => &[(Split::Test, 1)],
                "both" => &[(Split::Train, 0), (Split::Test, 1)],
                _ => return Err(Error::config("split", format!("`{split}` is not train, test or both"))),
            };
            for sp in [Split::Train, Split::Test] {
                let data = Dataset::load(&input, sp, classes)?;
                let data = match splits.iter().find(|(s, _)| *s == sp) {
                    Some(&(_, k)) => corrupt(
                        &data,
                        &CorruptionSpec {
                            kind,
                            severity,
                            seed: sparselab::train::derive_seed(seed, k, 0),
                        },
                    )?,
                    None => data,
                };
                data.save(&out)?;
            }
        }
        Cmd::Train { cfg, out } => {
            let cfg = cfg.resolve()?;
            let run = run_experiment(&cfg, &out)?;
            let r = run.last();
            let adv = r.test_adv_acc.map(|a| format!(" adv_acc={a:.4}")).unwrap_or_default();
            print(
                stdout,
                &format!(
                    "epoch={} clean_acc={:.4}{adv} sparsity={:.4} flops={:.3e}\n",
                    r.epoch,
                    r.test_clean_acc,
                    r.global_sparsity,
                    run.ledger.total()
                ),
            )?;
        }
        Cmd::Sweep {
            cfg,
            sweep_sparsity,
            sweep_data_ratio,
            sweep_severity,
            seeds,
            jobs,
            out,
        } => {
            let base = cfg.resolve()?;
            let axes = SweepAxes {
                sparsity: sweep_sparsity.map(|s| list("sweep-sparsity", &s)).transpose()?.unwrap_or_default(),
                data_ratio: sweep_data_ratio
                    .map(|s| list("sweep-data-ratio", &s))
                    .transpose()?
                    .unwrap_or_default(),
                severity: sweep_severity.map(|s| list("sweep-severity", &s)).transpose()?.unwrap_or_default(),
            };
            let seeds: Vec<u64> = list("seeds", &seeds)?;
            let mut child_failure = None;
            let cfg_dir = out.join("configs");
            let result = run_sweep(&base, &axes, &seeds, &out, &mut |js| {
                if jobs == 0 {
                    return run_jobs_in_process(js);
                }
                child_failure = run_children(js, jobs, &cfg_dir)?;
                match child_failure {
                    Some(code) => Err(Error::input(format!("a sweep worker exited with code {code}"))),
                    None => Ok(()),
                }
            });
            if let Some(code) = child_failure {
                log::error!("sweep aborted");
                return Ok(Some(code));
            }
            let rows = result?;
            print(stdout, &sparselab::harness::aggregate_csv(&rows))?;
        }
        Cmd::AttackEval {
            run,
            epsilon,
            alpha,
            steps,
            seed,
            no_random_start,
        } => {
            let cfg = ExperimentConfig::from_file(run.join("manifest"))?;
            let test = load_test_data(&cfg)?;
            let mut model = build_model(&cfg, test.sample_dims())?;
            load_model_into(run.join("model.bin"), &mut model)?;
            let masks = load_masks(run.join("masks.bin"))?;
            let base = cfg.eval_attack_config();
            let attack = PgdConfig {
                epsilon: epsilon.unwrap_or(base.epsilon),
                alpha: alpha.unwrap_or(base.alpha),
                steps: steps.unwrap_or(base.steps),
                random_start: base.random_start && !no_random_start,
            };
            attack.validate()?;
            let ev = evaluate(&model, Some(&masks), &test, Some(&attack), seed, cfg.eval_batch)?;
            print(
                stdout,
                &format!(
                    "samples={} clean_acc={:.6} adv_acc={:.6}\n",
                    test.len(),
                    ev.clean_acc,
                    ev.adv_acc.unwrap_or(0.0)
                ),
            )?;
        }
        Cmd::Report { run, masks } => {
            let cfg = ExperimentConfig::from_file(run.join("manifest"))?;
            let test = load_test_data(&cfg)?;
            let spec = model_spec(&cfg, test.sample_dims())?;
            let masks = load_masks(masks.unwrap_or_else(|| run.join("masks.bin")))?;
            let rows = density_report(&masks, &spec.layers)?;
            print(stdout, &density_csv(&rows))?;
            let dense = flops_forward(&spec, None, 1)?;
            let sparse = flops_forward(&spec, Some(&masks), 1)?;
            print(
                stdout,
                &format!(
                    "params={}/{} forward_flops={sparse:.0} dense_forward_flops={dense:.0}\n",
                    masks.nonzero_count(),
                    masks.total_params()
                ),
            )?;
            let ledger_path = run.join("flops.json");
            if ledger_path.exists() {
                let text = std::fs::read_to_string(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
                let l = FlopsLedger::from_json(&text)?;
                print(
                    stdout,
                    &format!(
                        "dense_pretrain={:.0} sparse_train={:.0} retrain={:.0} total={:.0}\n",
                        l.dense_pretrain,
                        l.sparse_train,
                        l.retrain,
                        l.total()
                    ),
                )?;
            }
        }
    }
    Ok(None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(code)) => ExitCode::from(code.clamp(1, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

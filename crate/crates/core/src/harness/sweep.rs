use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::run::{read_metrics_csv, run_experiment};
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Values swept per axis; an empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepAxes {
    pub sparsity: Vec<Float>,
    pub data_ratio: Vec<Float>,
    pub severity: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepJob {
    pub cell: usize,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

/// Cartesian product of the axes times the seeds. Cells are numbered in
/// sparsity-major order; run `(cell, seed)` lives in `cell{cell}_seed{seed}`.
pub fn expand_sweep(base: &ExperimentConfig, axes: &SweepAxes, seeds: &[u64], out: &Path) -> Result<Vec<SweepJob>> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "sweep needs at least one seed"));
    }
    let or_base = |v: &[Float], b: Float| if v.is_empty() { vec![b] } else { v.to_vec() };
    let sparsities = or_base(&axes.sparsity, base.sparsity);
    let ratios = or_base(&axes.data_ratio, base.data_ratio);
    let severities = if axes.severity.is_empty() {
        vec![base.severity]
    } else {
        axes.severity.clone()
    };
    let mut jobs = Vec::new();
    let mut cell = 0;
    for &s in &sparsities {
        for &r in &ratios {
            for &sev in &severities {
                for &seed in seeds {
                    let config = ExperimentConfig {
                        sparsity: s,
                        data_ratio: r,
                        severity: sev,
                        seed,
                        ..base.clone()
                    };
                    config.validate()?;
                    jobs.push(SweepJob {
                        cell,
                        seed,
                        config,
                        dir: out.join(format!("cell{cell}_seed{seed}")),
                    });
                }
                cell += 1;
            }
        }
    }
    Ok(jobs)
}

/// Runs every job sequentially in this process.
pub fn run_jobs_in_process(jobs: &[SweepJob]) -> Result<()> {
    for job in jobs {
        log::info!("sweep cell {} seed {}", job.cell, job.seed);
        run_experiment(&job.config, &job.dir)?;
    }
    Ok(())
}

/// Mean and sample standard deviation over a cell's seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub sparsity: Float,
    pub data_ratio: Float,
    pub severity: u8,
    pub runs: usize,
    pub clean_mean: Float,
    pub clean_std: Float,
    pub adv_mean: Option<Float>,
    pub adv_std: Option<Float>,
    pub flops_mean: f64,
    pub global_sparsity_mean: Float,
}

fn mean_std(xs: &[Float]) -> (Float, Float) {
    let n = xs.len() as Float;
    let mean = xs.iter().sum::<Float>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<Float>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reads each job's final metrics row and reduces per cell.
pub fn aggregate(jobs: &[SweepJob]) -> Result<Vec<AggregateRow>> {
    let cells: BTreeSet<usize> = jobs.iter().map(|j| j.cell).collect();
    cells
        .into_iter()
        .map(|cell| {
            let members: Vec<&SweepJob> = jobs.iter().filter(|j| j.cell == cell).collect();
            let mut finals = Vec::with_capacity(members.len());
            for j in &members {
                let path = j.dir.join("metrics.csv");
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let rec = read_metrics_csv(&text)?
                    .pop()
                    .ok_or_else(|| Error::format(&path, "no epochs recorded"))?;
                finals.push(rec);
            }
            let clean: Vec<Float> = finals.iter().map(|r| r.test_clean_acc).collect();
            let adv: Option<Vec<Float>> = finals.iter().map(|r| r.test_adv_acc).collect();
            let (clean_mean, clean_std) = mean_std(&clean);
            let adv_stats = adv.map(|a| mean_std(&a));
            let c = &members[0].config;
            Ok(AggregateRow {
                sparsity: c.sparsity,
                data_ratio: c.data_ratio,
                severity: c.severity,
                runs: finals.len(),
                clean_mean,
                clean_std,
                adv_mean: adv_stats.map(|s| s.0),
                adv_std: adv_stats.map(|s| s.1),
                flops_mean: finals.iter().map(|r| r.cumulative_flops).sum::<f64>() / finals.len() as f64,
                global_sparsity_mean: finals.iter().map(|r| r.global_sparsity).sum::<Float>() / finals.len() as Float,
            })
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "sparsity,data_ratio,severity,runs,clean_acc_mean,clean_acc_std,adv_acc_mean,adv_acc_std,flops_mean,global_sparsity_mean\n",
    );
    let opt = |v: Option<Float>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{},{:.0},{:.6}",
            r.sparsity,
            r.data_ratio,
            r.severity,
            r.runs,
            r.clean_mean,
            r.clean_std,
            opt(r.adv_mean),
            opt(r.adv_std),
            r.flops_mean,
            r.global_sparsity_mean
        )
        .unwrap();
    }
    out
}

/// Mean clean accuracy as a sparsity × data-ratio grid (first severity only
/// when several were swept). Missing pairs are left empty.
pub fn heatmap_csv(rows: &[AggregateRow]) -> String {
    let mut ratios: Vec<Float> = rows.iter().map(|r| r.data_ratio).collect();
    ratios.sort_by(Float::total_cmp);
    ratios.dedup();
    let mut sparsities: Vec<Float> = rows.iter().map(|r| r.sparsity).collect();
    sparsities.sort_by(Float::total_cmp);
    sparsities.dedup();
    let mut out = String::from("sparsity");
    ratios.iter().for_each(|r| write!(out, ",{r}").unwrap());
    out.push('\n');
    for &s in &sparsities {
        write!(out, "{s}").unwrap();
        for &r in &ratios {
            match rows.iter().find(|row| row.sparsity == s && row.data_ratio == r) {
                Some(row) => write!(out, ",{:.6}", row.clean_mean).unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Expands the sweep, hands the jobs to `execute`, then writes
/// `aggregate.csv` and `heatmap.csv` into `out`.
pub fn run_sweep(
    base: &ExperimentConfig,
    axes: &SweepAxes,
    seeds: &[u64],
    out: &Path,
    execute: &mut dyn FnMut(&[SweepJob]) -> Result<()>,
) -> Result<Vec<AggregateRow>> {
    let jobs = expand_sweep(base, axes, seeds, out)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    execute(&jobs)?;
    let rows = aggregate(&jobs)?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("aggregate.csv", aggregate_csv(&rows))?;
    write("heatmap.csv", heatmap_csv(&rows))?;
    Ok(rows)
}

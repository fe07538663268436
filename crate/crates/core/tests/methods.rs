//! End-to-end method runs on a tiny synthetic task.

use sparselab::data::SynthSpec;
use sparselab::harness::{prepare_data, run_prepared, DataSource, ExperimentConfig, Prepared};
use sparselab::sparsifiers::{initial_random_masks, Method};
use sparselab::sparsity::{solve_erk_plan, PlanKind};
use sparselab::Float;

fn config(method: Method, sparsity: Float, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SynthSpec {
            per_class: 20,
            ..SynthSpec::default()
        }),
        synth_test_per_class: 10,
        method,
        sparsity,
        epochs,
        batch_size: 50,
        ..ExperimentConfig::default()
    }
}

fn run(method: Method, sparsity: Float, epochs: usize, data: &Prepared) -> sparselab::harness::RunSummary {
    let dir = tempfile::tempdir().unwrap();
    run_prepared(&config(method, sparsity, epochs), data, dir.path(), &mut ()).unwrap()
}

#[test]
fn omp_erk_follows_the_erk_allocation() {
    let cfg = config(Method::OmpErk, 0.8, 3);
    let data = prepare_data(&cfg).unwrap();
    let out = run(Method::OmpErk, 0.8, 3, &data);
    let plan = solve_erk_plan(out.model.layer_shapes(), 0.2).unwrap();
    let counts: Vec<usize> = out.density.iter().map(|r| r.nonzeros).collect();
    assert_eq!(counts, plan.counts);
}

#[test]
fn random_erk_matches_set_initial_allocation() {
    let data = prepare_data(&config(Method::Set, 0.9, 6)).unwrap();
    let set = run(Method::Set, 0.9, 6, &data);
    let random = run(Method::Random, 0.9, 6, &data);
    // SET conserves per-layer counts, so its final report equals its initial one.
    let set_counts: Vec<usize> = set.density.iter().map(|r| r.nonzeros).collect();
    let random_counts: Vec<usize> = random.density.iter().map(|r| r.nonzeros).collect();
    assert_eq!(set_counts, random_counts);
    let init = initial_random_masks(set.model.layer_shapes(), PlanKind::Erk, 0.9, 7).unwrap();
    assert_eq!(init.per_layer_nonzeros(), set_counts);
}

#[test]
fn every_method_reaches_its_target() {
    let data = prepare_data(&config(Method::Dense, 0.0, 2)).unwrap();
    for method in Method::ALL {
        let s = if method == Method::Dense { 0.0 } else { 0.7 };
        let out = run(method, s, 5, &data);
        let total: usize = out.density.iter().map(|r| r.params).sum();
        let nnz: usize = out.density.iter().map(|r| r.nonzeros).sum();
        let expected = ((1.0 - s) * total as Float).round() as usize;
        assert_eq!(nnz, expected, "{method}");
        assert_eq!(out.ledger.final_params, nnz, "{method}");
        let epochs = if method.is_two_phase() { 10 } else { 5 };
        assert_eq!(out.records.len(), epochs, "{method}");
        assert!(out.model.all_finite(), "{method}");
    }
}

#[test]
fn dense_rejects_nonzero_sparsity_and_sparse_rejects_zero() {
    let data = prepare_data(&config(Method::Dense, 0.0, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut bad = config(Method::Set, 0.0, 1);
    assert!(run_prepared(&bad, &data, dir.path(), &mut ()).is_err());
    bad.method = Method::Dense;
    bad.sparsity = 0.5;
    assert!(run_prepared(&bad, &data, dir.path(), &mut ()).is_err());
}

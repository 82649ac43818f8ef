use std::path::Path;
use std::time::Instant;

use osar::osar::{run, run_osar, Algorithm, Estimator, RunConfig, RunSeed};
use osar::problems::{ProblemConfig, ProblemSpec, Scenario, SupportKind};
use osar::rns_allocator::DeficitGreedy;
use osar::OsarError;

fn baseline(support: SupportKind) -> ProblemSpec {
    ProblemConfig::synthetic(Scenario::Baseline, support).build(Path::new(".")).unwrap()
}

fn config(p: &ProblemSpec, budget: u64) -> RunConfig {
    RunConfig { budget, ..RunConfig::from_suggested(&p.suggested) }
}

#[test]
fn discrete_runs_conserve_budget_and_are_deterministic() {
    let p = baseline(SupportKind::Discrete);
    let cfg = config(&p, 2500);
    for alg in [Algorithm::Osar, Algorithm::OsarPlus] {
        let t0 = Instant::now();
        let a = run(&p, &cfg, alg, &DeficitGreedy, RunSeed::new(11, 3)).unwrap();
        eprintln!("{} run: {:?}", alg.label(), t0.elapsed());
        let b = run(&p, &cfg, alg, &DeficitGreedy, RunSeed::new(11, 3)).unwrap();
        assert_eq!(a, b);
        assert!(a.spent >= 2500.0);
        let input: f64 = a.input_counts.iter().zip(p.costs()).map(|(&m, c)| m as f64 * c).sum();
        assert_eq!(input + a.simulations as f64, a.spent);
        let shares: f64 = a.alpha.iter().chain(&a.beta).sum();
        assert!((shares - 1.0).abs() < 1e-9);
        assert!(a.snapshots.windows(2).all(|w| w[0].spent < w[1].spent));
        assert!(a.snapshots.iter().all(|s| (0.0..=1.0 + 1e-12).contains(&s.preference)));
    }
}

#[test]
fn budget_equal_to_initial_cost_runs_no_batch() {
    let p = baseline(SupportKind::Discrete);
    let init = 50 * 2 + 121 * 10;
    let r = run_osar(&p, &config(&p, init), Estimator::SampleMean, &DeficitGreedy, RunSeed::new(1, 0)).unwrap();
    assert_eq!(r.snapshots.len(), 1);
    assert_eq!(r.spent, init as f64);
    assert_eq!(r.best, r.snapshots[0].best);
    let err = run_osar(&p, &config(&p, init - 1), Estimator::SampleMean, &DeficitGreedy, RunSeed::new(1, 0));
    assert!(matches!(err, Err(OsarError::Config(_))));
}

#[test]
fn infeasible_epsilon_is_rejected_before_sampling() {
    let p = baseline(SupportKind::Discrete);
    let cfg = RunConfig { epsilon: 0.3, ..config(&p, 4000) };
    let err = run(&p, &cfg, Algorithm::Osar, &DeficitGreedy, RunSeed::new(1, 0));
    assert!(matches!(err, Err(OsarError::Config(_))));
}

#[test]
fn wrong_support_kind_is_a_config_error() {
    let d = baseline(SupportKind::Discrete);
    let c = baseline(SupportKind::Continuous);
    assert!(matches!(run(&d, &config(&d, 4000), Algorithm::OsarFd, &DeficitGreedy, RunSeed::new(0, 0)), Err(OsarError::Config(_))));
    assert!(matches!(run(&c, &config(&c, 4000), Algorithm::Osar, &DeficitGreedy, RunSeed::new(0, 0)), Err(OsarError::Config(_))));
}

#[test]
fn continuous_runs_conserve_budget_and_are_deterministic() {
    let p = baseline(SupportKind::Continuous);
    let cfg = config(&p, 2500);
    for alg in [Algorithm::OsarPlusPlus, Algorithm::OsarFd, Algorithm::OsarPs] {
        let t0 = Instant::now();
        let a = run(&p, &cfg, alg, &DeficitGreedy, RunSeed::new(4, 9)).unwrap();
        eprintln!("{} run: {:?}", alg.label(), t0.elapsed());
        let b = run(&p, &cfg, alg, &DeficitGreedy, RunSeed::new(4, 9)).unwrap();
        assert_eq!(a, b);
        let input: f64 = a.input_counts.iter().zip(p.costs()).map(|(&m, c)| m as f64 * c).sum();
        assert_eq!(input + a.simulations as f64, a.spent);
        assert_eq!(a.alpha.len(), 122);
        let shares: f64 = a.alpha.iter().chain(&a.beta).sum();
        assert!((shares - 1.0).abs() < 1e-9);
    }
}

#[test]
fn dense_variants_reject_empty_dense_set() {
    let mut p = baseline(SupportKind::Continuous);
    p.dense.clear();
    let cfg = config(&p, 2500);
    assert!(matches!(run(&p, &cfg, Algorithm::OsarFd, &DeficitGreedy, RunSeed::new(0, 0)), Err(OsarError::Config(_))));
    let ps = RunConfig { dense_size: Some(0), ..cfg };
    assert!(matches!(run(&p, &ps, Algorithm::OsarPs, &DeficitGreedy, RunSeed::new(0, 0)), Err(OsarError::Config(_))));
}

#[test]
fn supply_chain_run_smoke() {
    let p = ProblemConfig::supply_chain().build(Path::new(".")).unwrap();
    let cfg = config(&p, 4000);
    let t0 = Instant::now();
    let r = run(&p, &cfg, Algorithm::OsarPs, &DeficitGreedy, RunSeed::new(2, 0)).unwrap();
    eprintln!("supply chain OSAR+PS run: {:?}", t0.elapsed());
    assert!(r.best < 6);
    assert_eq!(r.beta.len(), 10);
}

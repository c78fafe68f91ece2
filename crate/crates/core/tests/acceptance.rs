//! Exit criteria. Each test prints one `criterion N: PASS|FAIL` line.

use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use mechnum::experiments::{
    run, run_dual_audit, run_esem_misreport_suite, run_example2, run_example3, run_oracle_check, run_sem_suite,
    EsemMisreportParams, ExperimentConfig, ExperimentKind, Report, SemSuiteParams, Summary,
};

const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const DUAL_AUDIT_BUDGET: Duration = Duration::from_secs(60);
const EXAMPLE2_BUDGET: Duration = Duration::from_secs(30);
const EXAMPLE3_BUDGET: Duration = Duration::from_secs(60);

/// Timed sections run one at a time so wall-clock budgets are not shared.
static TIMED: Mutex<()> = Mutex::new(());

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let _guard = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn dual_audit() -> &'static (Report, Duration) {
    static CELL: OnceLock<(Report, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::defaults(ExperimentKind::DualAudit);
        assert_eq!(cfg.n_samples, 50);
        let (r, t) = timed(|| run_dual_audit(&cfg));
        (r.expect("dual audit runs"), t)
    })
}

fn passed(summary: &Summary, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for n in names {
        let p = summary.property(n).unwrap_or_else(|| panic!("missing property {n}"));
        ok &= p.passed;
        detail.push(format!("{n}={} ({})", p.passed, p.detail));
    }
    (ok, detail.join("; "))
}

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_oracle_equivalence() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::OracleCheck);
    assert_eq!(cfg.n_samples, 50);
    assert!(cfg.oracle.max_users <= 4);
    assert_eq!(cfg.oracle.rel_gap_tol, 1e-3);
    assert_eq!(cfg.oracle.kkt_tol, 1e-4);
    let (r, t) = timed(|| run_oracle_check(&cfg));
    let r = r.unwrap();
    let (ok, detail) = passed(&r.summary, &["sum_value_matches_oracle", "kkt_residual_small", "all_converged"]);
    report(1, ok && t <= ORACLE_BUDGET, &format!("{detail}; runtime {t:?}"));
}

#[test]
fn criterion_2_profitable_demand_reduction() {
    let (r, t) = dual_audit();
    assert!(r.summary.metrics["affording_users"] > 0.0);
    let (ok, detail) = passed(
        &r.summary,
        &["every_affording_user_gains_by_misreport", "profitable_reports_take_less", "truthful_never_the_best_response"],
    );
    report(2, ok && *t <= DUAL_AUDIT_BUDGET, &format!("{detail}; runtime {t:?}"));
}

#[test]
fn criterion_3_price_raising_reports_never_help() {
    let (r, _) = dual_audit();
    let (ok, detail) = passed(&r.summary, &["price_raising_reports_never_help"]);
    report(3, ok, &detail);
}

#[test]
fn criterion_4_scaled_reports_lower_price() {
    let (r, _) = dual_audit();
    let cfg = ExperimentConfig::defaults(ExperimentKind::DualAudit);
    assert_eq!(cfg.audit.scaled_alphas, vec![0.3, 0.5, 0.7, 0.9]);
    let (ok, detail) = passed(&r.summary, &["scaled_reports_lower_price"]);
    report(4, ok, &detail);
}

#[test]
fn criterion_5_one_shot_exchange() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example2);
    assert_eq!(cfg.n_samples, 100);
    assert!(cfg.example2.alphas.iter().all(|a| *a > 0.0 && *a <= 0.5));
    let (r2, t) = timed(|| run_example2(&cfg));
    let r2 = r2.unwrap();
    let p = SemSuiteParams::default();
    assert_eq!((p.instances, p.grid_points), (50, 20));
    let suite = run_sem_suite(&cfg, &p).unwrap();
    let (ok_suite, d_suite) = passed(
        &suite.summary,
        &["misquoting_never_helps", "success_monotone_per_sample", "center_gain_identity", "center_gain_positive", "equal_user_gains"],
    );
    let (ok_shape, d_shape) = passed(&r2.summary, &["success_curve_nondecreasing", "gain_ratio_nonincreasing"]);
    report(5, ok_suite && ok_shape && t <= EXAMPLE2_BUDGET, &format!("{d_suite}; {d_shape}; runtime {t:?}"));
}

#[test]
fn criterion_6_iterative_exchange() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example3);
    assert_eq!(cfg.n_samples, 50);
    assert_eq!(cfg.scenario.n_links, 20);
    assert_eq!((cfg.example3.center_a, cfg.example3.center_sigma, cfg.esem.delta0), (2.0, 0.01, 1e-2));
    assert_eq!(cfg.example3.max_spread, 0.10);
    let (r, t) = timed(|| run_example3(&cfg));
    let r = r.unwrap();
    let (ok, detail) = passed(
        &r.summary,
        &[
            "all_runs_terminate",
            "utilities_nondecreasing",
            "total_conserved",
            "ledger_replays_exactly",
            "final_value_spread",
            "subsidy_products_nonincreasing",
        ],
    );
    report(6, ok && t <= EXAMPLE3_BUDGET, &format!("{detail}; runtime {t:?}"));
}

#[test]
fn criterion_7_untruthful_quotes() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example3);
    let p = EsemMisreportParams::default();
    assert_eq!(p.utility_tol, 1e-9);
    let r = run_esem_misreport_suite(&cfg, &p).unwrap();
    let (ok, detail) = passed(&r.summary, &["inflate_quotes_never_help", "deflate_quotes_never_help", "skip_quotes_never_help"]);
    report(7, ok, &detail);
}

#[test]
fn criterion_8_determinism() {
    let kinds = [
        ExperimentKind::Example1,
        ExperimentKind::Example2,
        ExperimentKind::Example3,
        ExperimentKind::DualAudit,
        ExperimentKind::OracleCheck,
    ];
    let mut mismatches = Vec::new();
    let mut files = 0usize;
    let mut compare = |name: &str, a: &Report, b: &Report| {
        assert!(!a.files.is_empty());
        for ((na, ba), (nb, bb)) in a.files.iter().zip(&b.files) {
            files += 1;
            if na != nb || ba != bb {
                mismatches.push(format!("{name}/{na}"));
            }
        }
        if a.files.len() != b.files.len() {
            mismatches.push(format!("{name}: artifact count"));
        }
    };
    for kind in kinds {
        let cfg = ExperimentConfig::defaults(kind);
        compare(kind.as_str(), &run(&cfg).unwrap(), &run(&cfg).unwrap());
    }
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example2);
    let p = SemSuiteParams::default();
    compare("sem_suite", &run_sem_suite(&cfg, &p).unwrap(), &run_sem_suite(&cfg, &p).unwrap());
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example3);
    let p = EsemMisreportParams::default();
    compare("esem_suite", &run_esem_misreport_suite(&cfg, &p).unwrap(), &run_esem_misreport_suite(&cfg, &p).unwrap());
    report(8, mismatches.is_empty(), &format!("{files} artifacts compared; mismatches: {mismatches:?}"));
}

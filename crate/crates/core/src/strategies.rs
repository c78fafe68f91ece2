//! Reporting strategies under dual pricing and the search for profitable
//! deviations.
//!
//! A deviating user reports a valuation that keeps every structural property
//! of a valuation (so it cannot be told apart from a truthful one), the solver
//! runs on the reports, and the deviator is scored with its true valuation at
//! the resulting allocation and price.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dual_solver::{solve, Allocation, SolverConfig};
use crate::error::{Error, Result};
use crate::valuation::{ComposedUtility, ValuationFn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportingStrategy {
    Truthful,
    /// Report `alpha * v` with `alpha` in (0, 1).
    ScaledValuation { alpha: f64 },
    /// Report the exponential valuation with a different shape parameter.
    MisreportedEps { eps: f64 },
}

impl ReportingStrategy {
    /// The scalar swept over in a misreport sweep (`alpha` or the reported
    /// `eps`); `None` for truthful reporting.
    pub fn param(&self) -> Option<f64> {
        match *self {
            Self::Truthful => None,
            Self::ScaledValuation { alpha } => Some(alpha),
            Self::MisreportedEps { eps } => Some(eps),
        }
    }
}

/// The utility the user would report under strategy `s`.
pub fn reported_utility(true_u: &ComposedUtility, s: ReportingStrategy) -> Result<ComposedUtility> {
    match s {
        ReportingStrategy::Truthful => Ok(true_u.clone()),
        ReportingStrategy::ScaledValuation { alpha } => {
            Ok(true_u.with_valuation(ValuationFn::scaled(alpha, true_u.valuation.clone())?))
        }
        ReportingStrategy::MisreportedEps { eps } => Ok(true_u.with_valuation(true_u.valuation.with_eps(eps)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub allocation: Allocation,
    /// Every user's `u_i(x_i*) - lambda* x_i*` under truthful reporting.
    pub utilities: Vec<f64>,
}

impl Baseline {
    pub fn compute(users: &[ComposedUtility], x_total: f64, x_max: f64, cfg: &SolverConfig) -> Self {
        let allocation = solve(users, x_total, x_max, cfg);
        let utilities = users
            .iter()
            .zip(&allocation.x)
            .map(|(u, x)| u.value(*x) - allocation.lambda_star * x)
            .collect();
        Self { allocation, utilities }
    }

    pub fn fully_allocated(&self, x_total: f64, tol: f64) -> bool {
        self.allocation.total() >= x_total - tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationOutcome {
    pub strategy: ReportingStrategy,
    pub x_under: f64,
    pub lambda_under: f64,
    /// True utility of the deviator: `v_i(x_under) - lambda_under * x_under`.
    pub u_true: f64,
    /// Utility the deviator would get if its report were its valuation.
    pub u_reported: f64,
    pub x_baseline: f64,
    pub lambda_baseline: f64,
    pub u_truthful_baseline: f64,
    pub converged: bool,
}

/// Runs the solver with user `i` reporting under `s` and everyone else truthful.
pub fn deviate_one(
    users: &[ComposedUtility],
    i: usize,
    s: ReportingStrategy,
    x_total: f64,
    x_max: f64,
    cfg: &SolverConfig,
) -> Result<DeviationOutcome> {
    check_index(users, i)?;
    let baseline = Baseline::compute(users, x_total, x_max, cfg);
    deviate_against(users, &baseline, i, s, x_total, x_max, cfg)
}

/// Like [`deviate_one`] with a precomputed truthful baseline.
pub fn deviate_against(
    users: &[ComposedUtility],
    baseline: &Baseline,
    i: usize,
    s: ReportingStrategy,
    x_total: f64,
    x_max: f64,
    cfg: &SolverConfig,
) -> Result<DeviationOutcome> {
    check_index(users, i)?;
    let base = &baseline.allocation;
    if s == ReportingStrategy::Truthful {
        return Ok(DeviationOutcome {
            strategy: s,
            x_under: base.x[i],
            lambda_under: base.lambda_star,
            u_true: baseline.utilities[i],
            u_reported: baseline.utilities[i],
            x_baseline: base.x[i],
            lambda_baseline: base.lambda_star,
            u_truthful_baseline: baseline.utilities[i],
            converged: base.converged,
        });
    }
    let reported = reported_utility(&users[i], s)?;
    let mut reports = users.to_vec();
    reports[i] = reported.clone();
    let alloc = solve(&reports, x_total, x_max, cfg);
    let x_under = alloc.x[i];
    Ok(DeviationOutcome {
        strategy: s,
        x_under,
        lambda_under: alloc.lambda_star,
        u_true: users[i].value(x_under) - alloc.lambda_star * x_under,
        u_reported: reported.value(x_under) - alloc.lambda_star * x_under,
        x_baseline: base.x[i],
        lambda_baseline: base.lambda_star,
        u_truthful_baseline: baseline.utilities[i],
        converged: alloc.converged && base.converged,
    })
}

fn check_index(users: &[ComposedUtility], i: usize) -> Result<()> {
    if i >= users.len() {
        return Err(Error::InvalidParameter(format!("deviator index {i} out of range for {} users", users.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub strategy_param: f64,
    pub utility_raw: f64,
    pub utility_norm: f64,
    pub allocation_raw: f64,
    pub allocation_norm: f64,
    pub lambda: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub outcomes: Vec<DeviationOutcome>,
    /// Grid strategy with the largest true utility, or `Truthful` if nothing
    /// on the grid beats the truthful baseline.
    pub best: ReportingStrategy,
    pub best_utility: f64,
    pub baseline_utility: f64,
    pub baseline_allocation: f64,
    pub baseline_lambda: f64,
}

impl SweepResult {
    /// CSV with columns
    /// `strategy_param,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "strategy_param,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e}",
                p.strategy_param, p.utility_raw, p.utility_norm, p.allocation_raw, p.allocation_norm, p.lambda
            )?;
        }
        Ok(())
    }
}

/// `n` uniformly spaced interior points of `(0, 1)`.
pub fn alpha_grid(n: usize) -> Vec<ReportingStrategy> {
    (1..=n).map(|k| ReportingStrategy::ScaledValuation { alpha: k as f64 / (n + 1) as f64 }).collect()
}

/// `n` uniformly spaced reported `eps` values on `[lo, hi]`.
pub fn eps_grid(lo: f64, hi: f64, n: usize) -> Vec<ReportingStrategy> {
    if n == 1 {
        return vec![ReportingStrategy::MisreportedEps { eps: lo }];
    }
    (0..n).map(|k| ReportingStrategy::MisreportedEps { eps: lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

/// Evaluates [`deviate_one`] at every grid strategy for user `i`.
///
/// With `normalize`, utility and allocation curves are divided by their
/// maximum over the grid; otherwise the `_norm` columns repeat the raw values.
pub fn best_misreport_sweep(
    users: &[ComposedUtility],
    i: usize,
    grid: &[ReportingStrategy],
    x_total: f64,
    x_max: f64,
    cfg: &SolverConfig,
    normalize: bool,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    check_index(users, i)?;
    let baseline = Baseline::compute(users, x_total, x_max, cfg);
    sweep_against(users, &baseline, i, grid, x_total, x_max, cfg, normalize)
}

#[allow(clippy::too_many_arguments)]
pub fn sweep_against(
    users: &[ComposedUtility],
    baseline: &Baseline,
    i: usize,
    grid: &[ReportingStrategy],
    x_total: f64,
    x_max: f64,
    cfg: &SolverConfig,
    normalize: bool,
) -> Result<SweepResult> {
    let outcomes: Vec<DeviationOutcome> = grid
        .iter()
        .map(|s| deviate_against(users, baseline, i, *s, x_total, x_max, cfg))
        .collect::<Result<_>>()?;

    let u_max = outcomes.iter().map(|o| o.u_true).fold(f64::NEG_INFINITY, f64::max);
    let x_max_seen = outcomes.iter().map(|o| o.x_under).fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64, m: f64| if normalize && m != 0.0 { v / m } else { v };
    let points = grid
        .iter()
        .zip(&outcomes)
        .map(|(s, o)| SweepPoint {
            strategy_param: s.param().unwrap_or(f64::NAN),
            utility_raw: o.u_true,
            utility_norm: norm(o.u_true, u_max),
            allocation_raw: o.x_under,
            allocation_norm: norm(o.x_under, x_max_seen),
            lambda: o.lambda_under,
            converged: o.converged,
        })
        .collect();

    let baseline_utility = baseline.utilities[i];
    let (best, best_utility) = outcomes
        .iter()
        .fold((ReportingStrategy::Truthful, baseline_utility), |acc, o| if o.u_true > acc.1 { (o.strategy, o.u_true) } else { acc });

    Ok(SweepResult {
        points,
        outcomes,
        best,
        best_utility,
        baseline_utility,
        baseline_allocation: baseline.allocation.x[i],
        baseline_lambda: baseline.allocation.lambda_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::ObjectiveFn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_id(eps: f64) -> ComposedUtility {
        ComposedUtility::new(ValuationFn::exponential(eps).unwrap(), ObjectiveFn::Identity, 10.0).unwrap()
    }

    #[test]
    fn reported_utility_examples() {
        let u = exp_id(1.0);
        assert_eq!(reported_utility(&u, ReportingStrategy::Truthful).unwrap(), u);
        let half = reported_utility(&u, ReportingStrategy::ScaledValuation { alpha: 0.5 }).unwrap();
        assert!((half.valuation.eval(2f64.ln()).unwrap() - 0.25).abs() < 1e-15);
        let swapped = reported_utility(&exp_id(0.3), ReportingStrategy::MisreportedEps { eps: 0.1 }).unwrap();
        assert_eq!(swapped.valuation, ValuationFn::Exponential { eps: 0.1 });
        assert!(reported_utility(&u, ReportingStrategy::ScaledValuation { alpha: 1.2 }).is_err());
    }

    #[test]
    fn truthful_deviation_equals_baseline() {
        let users = vec![exp_id(0.5), exp_id(1.0), exp_id(1.5)];
        let o = deviate_one(&users, 1, ReportingStrategy::Truthful, 2.0, 10.0, &SolverConfig::default()).unwrap();
        assert_eq!(o.u_true, o.u_truthful_baseline);
        assert_eq!(o.x_under, o.x_baseline);
        assert_eq!(o.lambda_under, o.lambda_baseline);
    }

    #[test]
    fn scaled_report_lowers_price() {
        let users = vec![exp_id(0.5), exp_id(1.0), exp_id(1.5)];
        let cfg = SolverConfig::default();
        for alpha in [0.3, 0.5, 0.7, 0.9] {
            let o = deviate_one(&users, 0, ReportingStrategy::ScaledValuation { alpha }, 2.0, 10.0, &cfg).unwrap();
            assert!(o.x_baseline > 1e-6);
            assert!(o.lambda_under < o.lambda_baseline);
        }
    }

    #[test]
    fn oversupplied_instance_never_rewards_deviation() {
        let users: Vec<_> = [0.5, 1.0, 1.5].iter().map(|e| ComposedUtility::new(ValuationFn::exponential(*e).unwrap(), ObjectiveFn::Identity, 1.0).unwrap()).collect();
        let cfg = SolverConfig::default();
        let mut grid = alpha_grid(19);
        grid.extend(eps_grid(0.05, 5.0, 40));
        for i in 0..3 {
            for s in &grid {
                let o = deviate_one(&users, i, *s, 10.0, 1.0, &cfg).unwrap();
                assert!(o.u_true <= o.u_truthful_baseline + 1e-12, "{s:?}");
            }
        }
    }

    #[test]
    fn singleton_true_eps_grid_picks_truthful() {
        let users = vec![exp_id(0.5), exp_id(1.0)];
        let r = best_misreport_sweep(&users, 1, &[ReportingStrategy::MisreportedEps { eps: 1.0 }], 2.0, 10.0, &SolverConfig::default(), true)
            .unwrap();
        assert_eq!(r.best, ReportingStrategy::Truthful);
        assert!(best_misreport_sweep(&users, 1, &[], 2.0, 10.0, &SolverConfig::default(), true).is_err());
    }

    #[test]
    fn alpha_sweep_finds_demand_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = SolverConfig::default();
        for _ in 0..10 {
            let n = rng.random_range(2..=5);
            let users: Vec<_> = (0..n).map(|_| exp_id(rng.random_range(0.3..2.0))).collect();
            let x_total = rng.random_range(0.5..3.0);
            let base = Baseline::compute(&users, x_total, 10.0, &cfg);
            assert!(base.fully_allocated(x_total, 1e-8));
            for i in 0..n {
                if base.allocation.x[i] <= 1e-3 {
                    continue;
                }
                let r = sweep_against(&users, &base, i, &alpha_grid(99), x_total, 10.0, &cfg, true).unwrap();
                assert!(r.best_utility > r.baseline_utility + 1e-9);
                for (p, o) in r.points.iter().zip(&r.outcomes) {
                    if o.u_true > o.u_truthful_baseline {
                        assert!(p.allocation_raw < r.baseline_allocation);
                    }
                    assert!(p.utility_norm <= 1.0 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn sweep_csv_has_expected_columns() {
        let users = vec![exp_id(0.5), exp_id(1.0)];
        let r = best_misreport_sweep(&users, 0, &alpha_grid(3), 2.0, 10.0, &SolverConfig::default(), true).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "strategy_param,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda");
        assert_eq!(s.lines().count(), 4);
    }
}

//! Dual solver against exhaustive search on small instances.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ExperimentConfig, Report, Summary};
use crate::dual_solver::{brute_force_social_opt_refined, kkt_residual, social_value, solve, SolverConfig};
use crate::error::Result;
use crate::valuation::{ComposedUtility, ObjectiveFn, ValuationFn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub max_users: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub x_max: f64,
    pub total_lo: f64,
    pub total_hi: f64,
    pub grid_n: usize,
    pub levels: usize,
    pub rel_gap_tol: f64,
    pub kkt_tol: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            max_users: 4,
            eps_lo: 0.3,
            eps_hi: 2.0,
            x_max: 3.0,
            total_lo: 0.5,
            total_hi: 3.0,
            grid_n: 21,
            levels: 12,
            rel_gap_tol: 1e-3,
            kkt_tol: 1e-4,
        }
    }
}

fn exp_identity(eps: f64, x_max: f64) -> Result<ComposedUtility> {
    ComposedUtility::new(ValuationFn::exponential(eps)?, ObjectiveFn::Identity, x_max)
}

#[derive(Debug, Clone, PartialEq)]
struct OracleRow {
    n: usize,
    x_total: f64,
    solver: f64,
    oracle: f64,
    rel_gap: f64,
    kkt: f64,
    lambda: f64,
    converged: bool,
}

fn one_instance(p: &OracleParams, solver: &SolverConfig, seed: u64) -> Result<OracleRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=p.max_users.max(2));
    let users: Vec<ComposedUtility> =
        (0..n).map(|_| exp_identity(rng.random_range(p.eps_lo..=p.eps_hi), p.x_max)).collect::<Result<_>>()?;
    let x_total = rng.random_range(p.total_lo..=p.total_hi);
    let alloc = solve(&users, x_total, p.x_max, solver);
    let oracle = brute_force_social_opt_refined(&users, x_total, p.x_max, p.grid_n, p.levels)?;
    let solver_v = social_value(&users, &alloc.x);
    let oracle_v = social_value(&users, &oracle.x);
    Ok(OracleRow {
        n,
        x_total,
        solver: solver_v,
        oracle: oracle_v,
        rel_gap: (oracle_v - solver_v) / oracle_v.abs(),
        kkt: kkt_residual(&alloc, &users, x_total, p.x_max),
        lambda: alloc.lambda_star,
        converged: alloc.converged,
    })
}

pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<Report> {
    let p = cfg.oracle;
    let rows: Vec<OracleRow> =
        (0..cfg.n_samples as u64).into_par_iter().map(|k| one_instance(&p, &cfg.solver, derive_seed(cfg.seed, k))).collect::<Result<_>>()?;

    // Symmetric and oversupplied side instances.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX - 2));
    let mut worst_asym: f64 = 0.0;
    let mut worst_oversupply_price: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(2..=p.max_users.max(2));
        let eps = rng.random_range(p.eps_lo..=p.eps_hi);
        let users: Vec<ComposedUtility> = (0..n).map(|_| exp_identity(eps, p.x_max)).collect::<Result<_>>()?;
        let x_total = rng.random_range(p.total_lo..=p.total_hi);
        let a = solve(&users, x_total, p.x_max, &cfg.solver);
        let (lo, hi) = a.x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        worst_asym = worst_asym.max(hi - lo);
        let over = solve(&users, n as f64 * p.x_max + 1.0, p.x_max, &cfg.solver);
        worst_oversupply_price = worst_oversupply_price.max(over.lambda_star);
    }

    let max_gap = rows.iter().map(|r| r.rel_gap).fold(f64::NEG_INFINITY, f64::max);
    let max_kkt = rows.iter().map(|r| r.kkt).fold(0.0, f64::max);
    let mut summary = Summary::new("oracle_check", cfg);
    summary.check("sum_value_matches_oracle", max_gap <= p.rel_gap_tol, format!("max relative gap {max_gap:e}"));
    summary.check("kkt_residual_small", max_kkt <= p.kkt_tol, format!("max KKT residual {max_kkt:e}"));
    summary.check("all_converged", rows.iter().all(|r| r.converged), "every solve reports convergence");
    summary.check("symmetric_users_get_equal_shares", worst_asym <= 1e-9, format!("max spread {worst_asym:e}"));
    summary.check("oversupply_has_zero_price", worst_oversupply_price == 0.0, format!("max price {worst_oversupply_price:e}"));
    summary.metric("max_relative_gap", max_gap);
    summary.metric("max_kkt_residual", max_kkt);

    let mut report = Report::new(summary);
    report.csv("oracle_check.csv", |w| {
        writeln!(w, "instance,n_users,x_total,solver_value,oracle_value,relative_gap,kkt_residual,lambda,converged")?;
        for (k, r) in rows.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.n, r.x_total, r.solver, r.oracle, r.rel_gap, r.kkt, r.lambda, r.converged
            )?;
        }
        Ok(())
    })?;
    Ok(report)
}

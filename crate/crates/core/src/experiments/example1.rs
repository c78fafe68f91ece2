//! Demand reduction under dual pricing on an eight-link D2D resource block:
//! each link in turn sweeps its reported valuation shape while the others
//! report truthfully.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Report, Summary};
use crate::d2d::sample_scenario;
use crate::error::Result;
use crate::strategies::{eps_grid, sweep_against, Baseline, SweepResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1Params {
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub eps_points: usize,
    /// Allocations below this are treated as "cannot afford any resource".
    pub alloc_tol: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self { eps_lo: 0.02, eps_hi: 1.0, eps_points: 99, alloc_tol: 1e-9 }
    }
}

pub fn run_example1(cfg: &ExperimentConfig) -> Result<Report> {
    let p = cfg.example1;
    let mut scfg = cfg.scenario.clone();
    scfg.seed = cfg.seed;
    let scenario = sample_scenario(&scfg)?;
    let users = scenario.utilities()?;
    let (x_total, x_max) = (scfg.total_power_w, scfg.p_max_w);
    let baseline = Baseline::compute(&users, x_total, x_max, &cfg.solver);
    let grid = eps_grid(p.eps_lo, p.eps_hi, p.eps_points);

    let sweeps: Vec<SweepResult> = (0..users.len())
        .into_par_iter()
        .map(|i| sweep_against(&users, &baseline, i, &grid, x_total, x_max, &cfg.solver, true))
        .collect::<Result<_>>()?;

    let mut summary = Summary::new("example1", cfg);
    let mut norm_ok = true;
    let mut max_ok = true;
    let mut reduction_ok = true;
    let mut unconverged = 0usize;
    let mut affording = 0usize;
    let mut strictly_better = 0usize;
    for s in &sweeps {
        unconverged += s.points.iter().filter(|q| !q.converged).count();
        norm_ok &= s.points.iter().all(|q| q.utility_norm > 0.0 && q.utility_norm <= 1.0);
        let grid_max = s.points.iter().map(|q| q.utility_raw).fold(f64::NEG_INFINITY, f64::max);
        max_ok &= grid_max >= s.baseline_utility;
        if s.baseline_allocation > p.alloc_tol {
            affording += 1;
            strictly_better += usize::from(grid_max > s.baseline_utility);
        }
        reduction_ok &= s
            .points
            .iter()
            .filter(|q| q.utility_raw > s.baseline_utility)
            .all(|q| q.allocation_raw < s.baseline_allocation);
    }
    summary.check("utility_norm_in_unit_interval", norm_ok, "every normalized utility lies in (0, 1]");
    summary.check("grid_max_at_least_truthful", max_ok, "for every link the best swept report is at least as good as the truth");
    summary.check(
        "profitable_reports_take_less",
        reduction_ok,
        "every report beating the truth yields a smaller allocation than the truth",
    );
    summary.check("all_sweep_points_converged", unconverged == 0, format!("{unconverged} unconverged sweep points"));
    summary.metric("lambda_star", baseline.allocation.lambda_star);
    summary.metric("total_allocated", baseline.allocation.total());
    summary.metric("links_with_positive_allocation", affording as f64);
    summary.metric("links_with_profitable_misreport", strictly_better as f64);

    let mut report = Report::new(summary);
    report.csv("scenario.csv", |w| scenario.write_csv(w))?;
    report.csv("example1_curves.csv", |w| {
        use std::io::Write;
        writeln!(w, "link,strategy_param,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda,converged")?;
        for (i, s) in sweeps.iter().enumerate() {
            for q in &s.points {
                writeln!(
                    w,
                    "{i},{},{:e},{:e},{:e},{:e},{:e},{}",
                    q.strategy_param, q.utility_raw, q.utility_norm, q.allocation_raw, q.allocation_norm, q.lambda, q.converged
                )?;
            }
        }
        Ok(())
    })?;
    report.csv("example1_truthful.csv", |w| {
        use std::io::Write;
        writeln!(w, "link,eps_true,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda")?;
        for (i, s) in sweeps.iter().enumerate() {
            let umax = s.points.iter().map(|q| q.utility_raw).fold(f64::NEG_INFINITY, f64::max);
            let xmax = s.points.iter().map(|q| q.allocation_raw).fold(f64::NEG_INFINITY, f64::max);
            writeln!(
                w,
                "{i},{},{:e},{:e},{:e},{:e},{:e}",
                scenario.links[i].eps,
                s.baseline_utility,
                s.baseline_utility / umax,
                s.baseline_allocation,
                if xmax > 0.0 { s.baseline_allocation / xmax } else { 0.0 },
                s.baseline_lambda
            )?;
        }
        Ok(())
    })?;
    Ok(report)
}

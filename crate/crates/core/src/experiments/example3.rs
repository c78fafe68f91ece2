//! Iterative subsidized exchange on a twenty-link resource block, repeated
//! with independent pair-selection seeds on one channel draw.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, lattice_target, ExperimentConfig, Report, Summary};
use crate::d2d::sample_scenario;
use crate::dual_solver::solve;
use crate::error::Result;
use crate::mechanisms::{esem_run, CenterValuation, EsemConfig, EsemOutcome, QuoteStrategy};
use crate::valuation::ComposedUtility;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example3Params {
    pub center_a: f64,
    pub center_sigma: f64,
    /// Euclidean length of the random move from the users' allocation to the
    /// center's target before it is snapped to whole quanta (W).
    pub target_shift_w: f64,
    pub max_spread: f64,
}

impl Default for Example3Params {
    fn default() -> Self {
        Self { center_a: 2.0, center_sigma: 0.01, target_shift_w: 0.05, max_spread: 0.10 }
    }
}

/// The shared instance every run starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct EsemInstance {
    pub users: Vec<ComposedUtility>,
    pub x_star: Vec<f64>,
    pub x_dagger: Vec<f64>,
    pub nu: CenterValuation,
}

pub fn build_esem_instance(cfg: &ExperimentConfig) -> Result<EsemInstance> {
    let p = cfg.example3;
    let mut scfg = cfg.scenario.clone();
    scfg.seed = cfg.seed;
    let scenario = sample_scenario(&scfg)?;
    let users = scenario.utilities()?;
    let alloc = solve(&users, scfg.total_power_w, scfg.p_max_w, &cfg.solver);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX - 1));
    let x_dagger = lattice_target(&alloc.x, cfg.esem.delta0, p.target_shift_w, scfg.p_max_w, &mut rng);
    let nu = CenterValuation::new(p.center_a, p.center_sigma, x_dagger.clone(), 1)?;
    Ok(EsemInstance { users, x_star: alloc.x, x_dagger, nu })
}

pub(crate) fn run_seeded(inst: &EsemInstance, base: &EsemConfig, seed: u64, quotes: &[QuoteStrategy]) -> Result<EsemOutcome> {
    let cfg = EsemConfig { seed, ..*base };
    esem_run(&inst.users, quotes, &inst.x_star, &inst.x_dagger, &inst.nu, &cfg)
}

/// Property checks on a batch of runs from the same start.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct RunAudit {
    pub truncated: usize,
    pub utility_drops: usize,
    pub worst_conservation: f64,
    pub replay_failures: usize,
    pub alpha_theta_increases: usize,
    pub negative_center_steps: usize,
    pub quote_flags: usize,
}

pub(crate) fn audit_runs(runs: &[EsemOutcome], x_star: &[f64]) -> RunAudit {
    let total: f64 = x_star.iter().sum();
    let mut a = RunAudit::default();
    for r in runs {
        a.truncated += usize::from(r.truncated);
        let mut prev = r.initial_utilities.clone();
        for round in &r.rounds {
            a.utility_drops += round.utilities.iter().zip(&prev).filter(|(u, p)| u < p).count();
            prev.clone_from(&round.utilities);
            a.worst_conservation = a.worst_conservation.max((round.x_l.iter().sum::<f64>() - total).abs());
        }
        a.worst_conservation = a.worst_conservation.max((r.x_final.iter().sum::<f64>() - total).abs());
        a.replay_failures += usize::from(!r.ledger.replay_matches());
        a.alpha_theta_increases += r.executed_alpha_theta().windows(2).filter(|w| w[1] > w[0]).count();
        a.negative_center_steps += r.ledger.entries.iter().filter(|e| e.theta - e.subsidy < 0.0).count();
        a.quote_flags += r.ledger.flags.len();
    }
    a
}

pub fn run_example3(cfg: &ExperimentConfig) -> Result<Report> {
    let p = cfg.example3;
    let inst = build_esem_instance(cfg)?;
    let truthful = vec![QuoteStrategy::Truthful; inst.users.len()];
    let runs: Vec<EsemOutcome> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|k| run_seeded(&inst, &cfg.esem, derive_seed(cfg.seed, k), &truthful))
        .collect::<Result<_>>()?;

    let audit = audit_runs(&runs, &inst.x_star);
    let finals: Vec<f64> = runs.iter().map(|r| r.nu_final()).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let spread = (finals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - finals.iter().copied().fold(f64::INFINITY, f64::min)) / mean;

    let mut summary = Summary::new("example3", cfg);
    summary.check("all_runs_terminate", audit.truncated == 0, format!("{} runs hit the iteration cap", audit.truncated));
    summary.check("utilities_nondecreasing", audit.utility_drops == 0, format!("{} per-user drops", audit.utility_drops));
    summary.check("total_conserved", audit.worst_conservation <= 1e-12, format!("max drift {:e}", audit.worst_conservation));
    summary.check("ledger_replays_exactly", audit.replay_failures == 0, format!("{} mismatches", audit.replay_failures));
    summary.check(
        "subsidy_products_nonincreasing",
        audit.alpha_theta_increases == 0,
        format!("{} increases", audit.alpha_theta_increases),
    );
    summary.check("final_value_spread", spread <= p.max_spread, format!("spread/mean = {spread:.4}"));
    summary.metric("nu_initial", inst.nu.eval(&inst.x_star));
    summary.metric("nu_final_mean", mean);
    summary.metric("nu_final_spread", spread);
    summary.metric("exchanges_mean", runs.iter().map(|r| r.ledger.entries.len() as f64).sum::<f64>() / runs.len() as f64);
    summary.metric("runs_reaching_target", runs.iter().filter(|r| r.x_final == inst.x_dagger).count() as f64);
    summary.metric("center_steps_with_net_loss", audit.negative_center_steps as f64);
    summary.metric("quote_flags", audit.quote_flags as f64);
    summary.metric("target_distance", inst.nu.distance(&inst.x_star));

    let mut report = Report::new(summary);
    report.csv("example3_traces.csv", |w| {
        writeln!(w, "run,l,nu,distance,exit")?;
        for (k, r) in runs.iter().enumerate() {
            writeln!(w, "{k},0,{:e},{:e},", r.nu_initial, inst.nu.distance(&inst.x_star))?;
            let exit = serde_json::to_string(&r.exit)?;
            for (idx, round) in r.rounds.iter().enumerate() {
                let last = idx + 1 == r.rounds.len();
                let x_after = if last { &r.x_final } else { &r.rounds[idx + 1].x_l };
                let tag = if last { exit.trim_matches('"') } else { "" };
                writeln!(w, "{k},{},{:e},{:e},{tag}", round.l + 1, round.nu, inst.nu.distance(x_after))?;
            }
        }
        Ok(())
    })?;
    if let Some(first) = runs.first() {
        report.csv("example3_run0_trace.csv", |w| first.write_trace_csv(w))?;
        let mut json = Vec::new();
        first.ledger.write_json(&mut json)?;
        report.raw("example3_run0_ledger.json", json);
    }
    report.csv("example3_allocations.csv", |w| {
        writeln!(w, "link,x_star,x_dagger")?;
        for (i, (a, b)) in inst.x_star.iter().zip(&inst.x_dagger).enumerate() {
            writeln!(w, "{i},{a:e},{b:e}")?;
        }
        Ok(())
    })?;
    Ok(report)
}

//! One-shot subsidized exchange between an energy-efficiency link and a rate
//! link: success probability and center gain against the subsidy fraction.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, nondecreasing, nonincreasing, tangent_target, ExperimentConfig, Report, Summary};
use crate::d2d::sample_scenario;
use crate::dual_solver::solve;
use crate::error::{Error, Result};
use crate::mechanisms::{sem_run, sem_truthful_quotes, CenterValuation, SemOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example2Params {
    pub alphas: Vec<f64>,
    pub center_a: f64,
    pub center_sigma: f64,
    /// The target's distance from the users' allocation is drawn uniformly
    /// from this range (W).
    pub shift_min_w: f64,
    pub shift_max_w: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            alphas: (1..=10).map(|k| 0.05 * k as f64).collect(),
            center_a: 0.02,
            center_sigma: 1e-4,
            shift_min_w: 0.005,
            shift_max_w: 0.03,
        }
    }
}

/// One two-link draw with its truthful quotes; user roles are assigned so
/// that the "giver" is the link whose allocation shrinks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemSample {
    pub x_star: [f64; 2],
    pub x_dagger: [f64; 2],
    pub giver: usize,
    pub rho: f64,
    pub phi: f64,
    pub s_c: f64,
}

pub(crate) fn draw_sem_sample(cfg: &ExperimentConfig, k: u64) -> Result<SemSample> {
    let p = &cfg.example2;
    let mut scfg = cfg.scenario.clone();
    scfg.seed = derive_seed(cfg.seed, k);
    if scfg.n_links != 2 {
        return Err(Error::Config(format!("the one-shot exchange needs exactly 2 links, got {}", scfg.n_links)));
    }
    let scenario = sample_scenario(&scfg)?;
    let users = scenario.utilities()?;
    let alloc = solve(&users, scfg.total_power_w, scfg.p_max_w, &cfg.solver);
    let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed ^ 0x5e3);
    let shift = rng.random_range(p.shift_min_w..=p.shift_max_w);
    let t = tangent_target(&alloc.x, shift, scfg.p_max_w, &mut rng);
    let giver = if t[0] < alloc.x[0] { 0 } else { 1 };
    let recv = 1 - giver;
    let x_star = [alloc.x[0], alloc.x[1]];
    let x_dagger = [t[0], t[1]];
    let (rho, phi) =
        sem_truthful_quotes(&users[giver], &users[recv], [x_star[giver], x_star[recv]], [x_dagger[giver], x_dagger[recv]])?;
    let nu = CenterValuation::new(p.center_a, p.center_sigma, t.clone(), 2)?;
    let s_c = nu.eval(&t) - nu.eval(&alloc.x);
    Ok(SemSample { x_star, x_dagger, giver, rho, phi, s_c })
}

pub fn run_example2(cfg: &ExperimentConfig) -> Result<Report> {
    let p = &cfg.example2;
    if p.alphas.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let samples: Vec<SemSample> =
        (0..cfg.n_samples as u64).into_par_iter().map(|k| draw_sem_sample(cfg, k)).collect::<Result<_>>()?;
    let outcomes: Vec<Vec<SemOutcome>> = p
        .alphas
        .iter()
        .map(|a| samples.iter().map(|s| sem_run(s.rho, s.phi, s.s_c, *a)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let n = samples.len() as f64;
    let mut prob = Vec::new();
    let mut mean_pi_c = Vec::new();
    let mut mean_ratio = Vec::new();
    let mut per_sample_monotone = true;
    let mut positive_gain = true;
    let mut identity_err: f64 = 0.0;
    let mut fairness_err: f64 = 0.0;
    for (ai, (alpha, row)) in p.alphas.iter().zip(&outcomes).enumerate() {
        let wins: Vec<(&SemOutcome, &SemSample)> = row.iter().zip(&samples).filter(|(o, _)| o.success).collect();
        prob.push(wins.len() as f64 / n);
        let k = wins.len().max(1) as f64;
        mean_pi_c.push(wins.iter().map(|(o, _)| o.pi_c).sum::<f64>() / k);
        mean_ratio.push(wins.iter().map(|(o, s)| o.pi_c / s.s_c).sum::<f64>() / k);
        for (o, s) in &wins {
            positive_gain &= o.pi_c > 0.0;
            identity_err = identity_err.max((o.pi_c - ((1.0 - 2.0 * alpha) * s.s_c + s.rho - s.phi)).abs());
            fairness_err = fairness_err.max((o.pi_1 - o.pi_2).abs());
        }
        if ai + 1 < p.alphas.len() && p.alphas[ai + 1] > *alpha {
            per_sample_monotone &= row.iter().zip(&outcomes[ai + 1]).all(|(a, b)| !a.success || b.success);
        }
    }
    // The ratio is only defined where something succeeded.
    let ratio_defined: Vec<f64> = mean_ratio.iter().zip(&prob).filter(|(_, p)| **p > 0.0).map(|(r, _)| *r).collect();

    let mut summary = Summary::new("example2", cfg);
    summary.check("success_monotone_per_sample", per_sample_monotone, "a sample that succeeds at one subsidy fraction succeeds at every larger one");
    summary.check("success_curve_nondecreasing", nondecreasing(&prob, 0.0), format!("{prob:?}"));
    summary.check("center_gain_positive", positive_gain, "every success has a positive center gain");
    summary.check("center_gain_identity", identity_err <= 1e-12, format!("max deviation {identity_err:e}"));
    summary.check("equal_user_gains", fairness_err <= 1e-12, format!("max deviation {fairness_err:e}"));
    summary.check("gain_ratio_nonincreasing", nonincreasing(&ratio_defined, 0.0), format!("{mean_ratio:?}"));
    summary.check(
        "success_curve_non_degenerate",
        prob.first().copied().unwrap_or(0.0) < prob.last().copied().unwrap_or(0.0),
        "success probability rises across the subsidy grid",
    );
    summary.metric("success_probability_min", prob.first().copied().unwrap_or(f64::NAN));
    summary.metric("success_probability_max", prob.last().copied().unwrap_or(f64::NAN));

    let mut report = Report::new(summary);
    report.csv("example2_curve.csv", |w| {
        writeln!(w, "alpha,success_probability,mean_pi_c,mean_pi_c_over_s_c")?;
        for (i, a) in p.alphas.iter().enumerate() {
            writeln!(w, "{a},{},{:e},{:e}", prob[i], mean_pi_c[i], mean_ratio[i])?;
        }
        Ok(())
    })?;
    report.csv("example2_samples.csv", |w| {
        writeln!(w, "sample,giver,x_star_1,x_star_2,x_dagger_1,x_dagger_2,rho,phi,s_c")?;
        for (k, s) in samples.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                s.giver, s.x_star[0], s.x_star[1], s.x_dagger[0], s.x_dagger[1], s.rho, s.phi, s.s_c
            )?;
        }
        Ok(())
    })?;
    Ok(report)
}

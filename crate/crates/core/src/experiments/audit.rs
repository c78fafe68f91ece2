//! Incentive audits: misreporting under dual pricing, quote manipulation in
//! the one-shot exchange, and quote manipulation in the iterative exchange.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::example2::draw_sem_sample;
use super::example3::{audit_runs, build_esem_instance, run_seeded};
use super::{derive_seed, run_example2, ExperimentConfig, Report, Summary};
use crate::error::Result;
use crate::mechanisms::{sem_evaluate, EsemOutcome, QuoteStrategy};
use crate::strategies::{alpha_grid, deviate_against, eps_grid, sweep_against, Baseline, ReportingStrategy};
use crate::valuation::{ComposedUtility, ObjectiveFn, ValuationFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub users_min: usize,
    pub users_max: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub x_max: f64,
    pub alpha_points: usize,
    pub eps_sweep_lo: f64,
    pub eps_sweep_hi: f64,
    pub eps_sweep_points: usize,
    /// Allocations at or below this count as "cannot afford any resource".
    pub alloc_tol: f64,
    pub profit_margin: f64,
    pub price_rise_tol: f64,
    pub utility_tol: f64,
    pub scaled_alphas: Vec<f64>,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            users_min: 2,
            users_max: 5,
            eps_lo: 0.3,
            eps_hi: 2.0,
            x_max: 10.0,
            alpha_points: 99,
            eps_sweep_lo: 0.05,
            eps_sweep_hi: 4.0,
            eps_sweep_points: 99,
            alloc_tol: 1e-6,
            profit_margin: 1e-6,
            price_rise_tol: 1e-6,
            utility_tol: 1e-9,
            scaled_alphas: vec![0.3, 0.5, 0.7, 0.9],
        }
    }
}

/// Random users with an interior allocation each, and the budget that
/// exactly exhausts their demand at a common price.
pub fn fully_allocated_instance(p: &AuditParams, seed: u64) -> Result<(Vec<ComposedUtility>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(p.users_min..=p.users_max);
    let eps: Vec<f64> = (0..n).map(|_| rng.random_range(p.eps_lo..=p.eps_hi)).collect();
    let min_eps = eps.iter().copied().fold(f64::INFINITY, f64::min);
    // Demand of exp(identity) at price l is ln(eps / l) / eps; keep every
    // user strictly inside (0, x_max).
    let floor = eps.iter().map(|e| e * (-e * p.x_max).exp()).fold(0.0, f64::max);
    let price = floor.max(0.05 * min_eps) + rng.random_range(0.2..0.9) * (min_eps - floor.max(0.05 * min_eps));
    let x_total = eps.iter().map(|e| (e / price).ln() / e).sum();
    let users = eps.iter().map(|e| ComposedUtility::new(ValuationFn::exponential(*e)?, ObjectiveFn::Identity, p.x_max)).collect::<Result<_>>()?;
    Ok((users, x_total))
}

#[derive(Debug, Clone, PartialEq)]
struct AuditRow {
    instance: usize,
    user: usize,
    strategy: ReportingStrategy,
    lambda_under: f64,
    lambda_base: f64,
    u_true: f64,
    u_base: f64,
    x_under: f64,
    x_base: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct InstanceAudit {
    rows: Vec<AuditRow>,
    affording_users: usize,
    users_without_profit: Vec<usize>,
    reduction_violations: usize,
    lemma1_points: usize,
    lemma1_violations: usize,
    lemma2_violations: usize,
    truthful_argmax: bool,
    unconverged: usize,
}

fn audit_instance(cfg: &ExperimentConfig, k: usize) -> Result<InstanceAudit> {
    let p = &cfg.audit;
    let (users, x_total) = fully_allocated_instance(p, derive_seed(cfg.seed, k as u64))?;
    let base = Baseline::compute(&users, x_total, p.x_max, &cfg.solver);
    let agrid = alpha_grid(p.alpha_points);
    let egrid = eps_grid(p.eps_sweep_lo, p.eps_sweep_hi, p.eps_sweep_points);
    let mut out = InstanceAudit { truthful_argmax: true, ..Default::default() };
    let mut any_affording = false;
    for i in 0..users.len() {
        let affording = base.allocation.x[i] > p.alloc_tol;
        let sa = sweep_against(&users, &base, i, &agrid, x_total, p.x_max, &cfg.solver, false)?;
        let se = sweep_against(&users, &base, i, &egrid, x_total, p.x_max, &cfg.solver, false)?;
        if affording {
            any_affording = true;
            out.affording_users += 1;
            if sa.best_utility <= sa.baseline_utility + p.profit_margin {
                out.users_without_profit.push(i);
            }
            if sa.best != ReportingStrategy::Truthful {
                // At least one user has a profitable deviation.
                out.truthful_argmax = false;
            }
        }
        for o in sa.outcomes.iter().chain(&se.outcomes) {
            out.unconverged += usize::from(!o.converged);
            if o.u_true > o.u_truthful_baseline && o.x_under >= o.x_baseline {
                out.reduction_violations += 1;
            }
            if o.lambda_under > o.lambda_baseline + p.price_rise_tol {
                out.lemma1_points += 1;
                if o.u_true > o.u_truthful_baseline + p.utility_tol {
                    out.lemma1_violations += 1;
                }
            }
            out.rows.push(AuditRow {
                instance: k,
                user: i,
                strategy: o.strategy,
                lambda_under: o.lambda_under,
                lambda_base: o.lambda_baseline,
                u_true: o.u_true,
                u_base: o.u_truthful_baseline,
                x_under: o.x_under,
                x_base: o.x_baseline,
            });
        }
        if affording {
            for a in &p.scaled_alphas {
                let o = deviate_against(&users, &base, i, ReportingStrategy::ScaledValuation { alpha: *a }, x_total, p.x_max, &cfg.solver)?;
                out.unconverged += usize::from(!o.converged);
                if !(o.lambda_under < o.lambda_baseline) {
                    out.lemma2_violations += 1;
                }
            }
        }
    }
    if !any_affording {
        out.truthful_argmax = false;
    }
    Ok(out)
}

/// Misreporting audit on seeded fully-allocated instances.
pub fn run_dual_audit(cfg: &ExperimentConfig) -> Result<Report> {
    let audits: Vec<InstanceAudit> = (0..cfg.n_samples).into_par_iter().map(|k| audit_instance(cfg, k)).collect::<Result<_>>()?;

    let sum = |f: fn(&InstanceAudit) -> usize| audits.iter().map(f).sum::<usize>();
    let affording = sum(|a| a.affording_users);
    let without_profit = sum(|a| a.users_without_profit.len());
    let reduction = sum(|a| a.reduction_violations);
    let l1_points = sum(|a| a.lemma1_points);
    let l1_viol = sum(|a| a.lemma1_violations);
    let l2_viol = sum(|a| a.lemma2_violations);
    let truthful_best = audits.iter().filter(|a| a.truthful_argmax).count();
    let unconverged = sum(|a| a.unconverged);

    let mut summary = Summary::new("dual_audit", cfg);
    summary.check(
        "every_affording_user_gains_by_misreport",
        without_profit == 0,
        format!("{without_profit} of {affording} users found no deviation beating the truth by the margin"),
    );
    summary.check("profitable_reports_take_less", reduction == 0, format!("{reduction} profitable points with no demand reduction"));
    summary.check(
        "price_raising_reports_never_help",
        l1_viol == 0 && l1_points > 0,
        format!("{l1_viol} violations among {l1_points} price-raising points"),
    );
    summary.check("scaled_reports_lower_price", l2_viol == 0, format!("{l2_viol} violations"));
    summary.check("truthful_never_the_best_response", truthful_best == 0, format!("{truthful_best} instances"));
    summary.check("all_solves_converged", unconverged == 0, format!("{unconverged} unconverged solves"));
    summary.metric("affording_users", affording as f64);
    summary.metric("price_raising_points", l1_points as f64);

    let mut report = Report::new(summary);
    report.csv("dual_audit.csv", |w| {
        writeln!(w, "instance,user,strategy,param,lambda_under,lambda_baseline,u_true,u_baseline,x_under,x_baseline")?;
        for a in &audits {
            for r in &a.rows {
                let (kind, param) = match r.strategy {
                    ReportingStrategy::Truthful => ("truthful", f64::NAN),
                    ReportingStrategy::ScaledValuation { alpha } => ("scaled_valuation", alpha),
                    ReportingStrategy::MisreportedEps { eps } => ("misreported_eps", eps),
                };
                writeln!(
                    w,
                    "{},{},{kind},{param},{:e},{:e},{:e},{:e},{:e},{:e}",
                    r.instance, r.user, r.lambda_under, r.lambda_base, r.u_true, r.u_base, r.x_under, r.x_base
                )?;
            }
        }
        Ok(())
    })?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemSuiteParams {
    pub instances: usize,
    pub grid_points: usize,
    /// Quotes range over `[0, spread * (rho_true + phi_true)]`.
    pub spread: f64,
}

impl Default for SemSuiteParams {
    fn default() -> Self {
        Self { instances: 50, grid_points: 20, spread: 3.0 }
    }
}

/// The one-shot exchange audit: the example-2 shape properties plus a
/// quote-grid test that neither user can gain by misquoting.
pub fn run_sem_suite(cfg: &ExperimentConfig, p: &SemSuiteParams) -> Result<Report> {
    let mut report = run_example2(cfg)?;
    let samples: Vec<_> = (0..p.instances as u64).into_par_iter().map(|k| draw_sem_sample(cfg, 10_000 + k)).collect::<Result<_>>()?;
    let g = p.grid_points.max(2);
    let mut checked = 0usize;
    let mut violations = 0usize;
    for s in &samples {
        let top = p.spread * (s.rho + s.phi).max(1e-12);
        let quotes: Vec<f64> = (0..g).map(|k| top * k as f64 / (g - 1) as f64).collect();
        let above_rho: Vec<f64> = (0..g).map(|k| s.rho + top * k as f64 / (g - 1) as f64).collect();
        let below_phi: Vec<f64> = (0..g).map(|k| s.phi * k as f64 / (g - 1) as f64).collect();
        for alpha in &cfg.example2.alphas {
            for phi in &quotes {
                let truth = sem_evaluate(s.rho, *phi, s.rho, s.phi, s.s_c, *alpha)?.pi_1;
                for rho in &above_rho {
                    checked += 1;
                    violations += usize::from(sem_evaluate(*rho, *phi, s.rho, s.phi, s.s_c, *alpha)?.pi_1 > truth);
                }
            }
            for rho in &quotes {
                let truth = sem_evaluate(*rho, s.phi, s.rho, s.phi, s.s_c, *alpha)?.pi_2;
                for phi in &below_phi {
                    checked += 1;
                    violations += usize::from(sem_evaluate(*rho, *phi, s.rho, s.phi, s.s_c, *alpha)?.pi_2 > truth);
                }
            }
        }
    }
    report.summary.experiment = "sem_suite".into();
    report.summary.check("misquoting_never_helps", violations == 0, format!("{violations} violations in {checked} quote pairs"));
    report.summary.metric("dsic_pairs_checked", checked as f64);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsemMisreportParams {
    pub inflate_factor: f64,
    pub deflate_factor: f64,
    pub skip_rounds: usize,
    pub utility_tol: f64,
}

impl Default for EsemMisreportParams {
    fn default() -> Self {
        Self { inflate_factor: 1.5, deflate_factor: 0.5, skip_rounds: 2, utility_tol: 1e-9 }
    }
}

/// One deviator against the truthful run with the same selection seed.
#[derive(Debug, Clone, PartialEq)]
struct Deviation {
    form: &'static str,
    seed_index: usize,
    user: usize,
    truthful: f64,
    deviating: f64,
}

/// The iterative exchange audit: the example-3 properties, then every
/// participating user in turn inflates, deflates, or withholds its quotes
/// against the truthful run with the same seed.
pub fn run_esem_misreport_suite(cfg: &ExperimentConfig, p: &EsemMisreportParams) -> Result<Report> {
    let mut report = super::run_example3(cfg)?;
    let inst = build_esem_instance(cfg)?;
    let n = inst.users.len();
    let truthful = vec![QuoteStrategy::Truthful; n];
    let participants: Vec<usize> = (0..n).filter(|i| inst.x_star[*i] != inst.x_dagger[*i]).collect();
    let forms = [
        ("inflate", QuoteStrategy::Scale { factor: p.inflate_factor }),
        ("deflate", QuoteStrategy::Scale { factor: p.deflate_factor }),
        ("skip", QuoteStrategy::SkipRounds { rounds: p.skip_rounds }),
    ];
    let seeds: Vec<u64> = (0..cfg.n_samples as u64).map(|k| derive_seed(cfg.seed, k)).collect();
    let base_runs: Vec<EsemOutcome> = seeds.par_iter().map(|s| run_seeded(&inst, &cfg.esem, *s, &truthful)).collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for f in 0..forms.len() {
        for s in 0..seeds.len() {
            jobs.extend(participants.iter().map(|u| (f, s, *u)));
        }
    }
    let results: Vec<(Deviation, EsemOutcome)> = jobs
        .par_iter()
        .map(|&(f, s, u)| {
            let mut q = truthful.clone();
            q[u] = forms[f].1;
            let run = run_seeded(&inst, &cfg.esem, seeds[s], &q)?;
            let dev = Deviation {
                form: forms[f].0,
                seed_index: s,
                user: u,
                truthful: base_runs[s].final_utilities()[u],
                deviating: run.final_utilities()[u],
            };
            Ok((dev, run))
        })
        .collect::<Result<_>>()?;

    let deviating_runs: Vec<EsemOutcome> = results.iter().map(|(_, r)| r.clone()).collect();
    let audit = audit_runs(&deviating_runs, &inst.x_star);
    let mut summary = std::mem::replace(&mut report.summary, Summary::new("esem_suite", cfg));
    summary.experiment = "esem_suite".into();
    for (name, _) in &forms {
        let rows: Vec<&Deviation> = results.iter().map(|(d, _)| d).filter(|d| d.form == *name).collect();
        let bad = rows.iter().filter(|d| d.deviating > d.truthful + p.utility_tol).count();
        let worst = rows.iter().map(|d| d.deviating - d.truthful).fold(f64::NEG_INFINITY, f64::max);
        summary.check(
            &format!("{name}_quotes_never_help"),
            bad == 0,
            format!("{bad} of {} deviations beat the truthful run; largest gain {worst:e}", rows.len()),
        );
        summary.metric(&format!("{name}_max_gain"), worst);
        summary.metric(&format!("{name}_violations"), bad as f64);
    }
    summary.check("deviating_runs_terminate", audit.truncated == 0, format!("{} truncated", audit.truncated));
    summary.metric("deviating_runs_quote_flags", audit.quote_flags as f64);
    summary.metric("deviating_runs", deviating_runs.len() as f64);
    report.summary = summary;

    report.csv("esem_misreports.csv", |w| {
        writeln!(w, "form,seed_index,user,truthful_utility,deviating_utility,gain")?;
        for (d, _) in &results {
            writeln!(w, "{},{},{},{:e},{:e},{:e}", d.form, d.seed_index, d.user, d.truthful, d.deviating, d.deviating - d.truthful)?;
        }
        Ok(())
    })?;
    Ok(report)
}

//! Distributed dual decomposition for
//! `max sum_i u_i(x_i)  s.t.  sum_i x_i <= X,  0 <= x_i <= x_max`.
//!
//! The center broadcasts a price, every user reports the maximizer of
//! `u_i(x) - price * x`, and the center moves the price along the excess
//! demand. A brute-force grid search over the feasible set is provided as an
//! independent oracle, together with a KKT residual.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect_decreasing;
use crate::valuation::{ComposedUtility, ObjectiveFn};

const LN_2: f64 = std::f64::consts::LN_2;

/// How the center moves the price between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `lambda + delta * excess`, projected onto `lambda >= 0`.
    Fixed { delta: f64 },
    /// Same as `Fixed` with `delta / sqrt(j + 1)`.
    Diminishing { delta: f64 },
    /// Keeps a bracket on the price from the sign of the excess demand and
    /// moves by safeguarded false position (Illinois variant) inside it.
    Bracketed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda0: f64,
    pub step: StepRule,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { lambda0: 0.0, step: StepRule::Bracketed, tol: 1e-10, max_iter: 10_000 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0) {
            return Err(Error::Config("lambda0 must be nonnegative".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        match self.step {
            StepRule::Fixed { delta } | StepRule::Diminishing { delta } if !(delta > 0.0) => {
                Err(Error::Config("step delta must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: f64,
    pub iter: usize,
    pub reports: Vec<f64>,
    /// `(lambda^j, x^j)` per iteration when tracing is on.
    pub history: Option<Vec<(f64, Vec<f64>)>>,
}

impl DualState {
    pub fn new(lambda0: f64, n_users: usize, traced: bool) -> Self {
        Self { lambda: lambda0.max(0.0), iter: 0, reports: vec![0.0; n_users], history: traced.then(Vec::new) }
    }

    /// Trace as CSV with columns `iter,lambda,x_1..x_N`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.reports.len();
        let header: Vec<String> =
            ["iter".to_string(), "lambda".to_string()].into_iter().chain((1..=n).map(|i| format!("x_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (j, (lambda, x)) in self.history.iter().flatten().enumerate() {
            let xs: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{j},{lambda:e},{}", xs.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<f64>,
    pub lambda_star: f64,
    pub converged: bool,
    pub iters_used: usize,
}

impl Allocation {
    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// Sum of utilities at `x`.
pub fn social_value(users: &[ComposedUtility], x: &[f64]) -> f64 {
    users.iter().zip(x).map(|(u, xi)| u.value(*xi)).sum()
}

/// Maximizer of `u(x) - lambda * x` over `[0, min(x_max, domain_hi)]`.
///
/// Exponential valuations over identity or rate objectives have closed forms;
/// everything else solves the first-order condition by bisection on the
/// (nonincreasing) marginal. A price equal to the marginal at zero yields 0.
pub fn best_response(u: &ComposedUtility, lambda: f64, x_max: f64) -> f64 {
    let hi = x_max.min(u.domain_hi());
    if hi <= 0.0 {
        return 0.0;
    }
    if let Some((k, eps)) = u.valuation.exponential_form() {
        match u.objective {
            ObjectiveFn::Identity => {
                if lambda <= 0.0 {
                    return hi;
                }
                let x = (k * eps / lambda).ln() / eps;
                return x.clamp(0.0, hi);
            }
            ObjectiveFn::Rate { .. } => {
                if lambda <= 0.0 {
                    return hi;
                }
                // u'(p) = (k eps a / ln2) (1 + a p)^-(1 + eps/ln2)
                let a = u.objective.snr_slope().expect("rate has a slope");
                let kappa = eps / LN_2;
                let ratio = k * kappa * a / lambda;
                let x = (ratio.ln() / (1.0 + kappa)).exp_m1() / a;
                return x.clamp(0.0, hi);
            }
            ObjectiveFn::EnergyEfficiency { .. } => {}
        }
    }
    let foc = |x: f64| u.marginal(x) - lambda;
    if foc(0.0) <= 0.0 {
        return 0.0;
    }
    if foc(hi) >= 0.0 {
        return hi;
    }
    bisect_decreasing(foc, 0.0, hi)
}

/// One price update: `lambda <- max(0, lambda + delta * (sum x - X))`.
pub fn dual_iterate(state: &DualState, responses: &[f64], x_total: f64, delta: f64) -> DualState {
    let excess: f64 = responses.iter().sum::<f64>() - x_total;
    let mut next = state.clone();
    next.lambda = (state.lambda + delta * excess).max(0.0);
    next.iter = state.iter + 1;
    next.reports = responses.to_vec();
    if let Some(h) = next.history.as_mut() {
        h.push((state.lambda, responses.to_vec()));
    }
    next
}

pub fn solve(users: &[ComposedUtility], x_total: f64, x_max: f64, cfg: &SolverConfig) -> Allocation {
    solve_traced(users, x_total, x_max, cfg, false).0
}

/// Runs the price loop and also returns the final [`DualState`] (with the
/// per-iteration history when `traced`).
pub fn solve_traced(
    users: &[ComposedUtility],
    x_total: f64,
    x_max: f64,
    cfg: &SolverConfig,
    traced: bool,
) -> (Allocation, DualState) {
    let n = users.len();
    let mut state = DualState::new(cfg.lambda0, n, traced);
    let respond = |lambda: f64| -> Vec<f64> { users.iter().map(|u| best_response(u, lambda, x_max)).collect() };

    let mut bracket = Bracket::default();
    let mut prev: Option<Vec<f64>> = None;
    let mut converged = false;

    while state.iter < cfg.max_iter {
        let x = respond(state.lambda);
        let sum: f64 = x.iter().sum();
        let excess = sum - x_total;

        let stable = prev.as_ref().is_some_and(|p| p.iter().zip(&x).all(|(a, b)| (a - b).abs() <= cfg.tol));
        let feasible = excess <= cfg.tol;
        let slack_ok = state.lambda * (-excess).max(0.0) <= cfg.tol * x_total.max(1.0);
        let inactive = state.lambda == 0.0 && excess <= 0.0;
        if inactive || (stable && feasible && slack_ok) {
            state.reports = x;
            converged = true;
            break;
        }

        let delta = match cfg.step {
            StepRule::Fixed { delta } => delta,
            StepRule::Diminishing { delta } => delta / ((state.iter + 1) as f64).sqrt(),
            StepRule::Bracketed => {
                let next = bracket.next_price(state.lambda, excess);
                // Express the bracketed move as an equivalent step so the
                // update itself stays the projected subgradient step.
                if excess != 0.0 {
                    (next - state.lambda) / excess
                } else {
                    0.0
                }
            }
        };
        prev = Some(x.clone());
        state = dual_iterate(&state, &x, x_total, delta);
        if let StepRule::Bracketed = cfg.step {
            if bracket.exhausted() {
                // Price resolution is at machine precision; report what we have.
                let x = respond(state.lambda);
                let excess = x.iter().sum::<f64>() - x_total;
                converged = excess <= cfg.tol && state.lambda * (-excess).max(0.0) <= cfg.tol * x_total.max(1.0);
                state.reports = x;
                break;
            }
        }
    }
    if !converged && state.iter >= cfg.max_iter {
        state.reports = respond(state.lambda);
    }
    let alloc = Allocation { x: state.reports.clone(), lambda_star: state.lambda, converged, iters_used: state.iter };
    (alloc, state)
}

/// Price bracket maintained by the `Bracketed` rule.
#[derive(Debug, Default)]
struct Bracket {
    /// Largest price seen with positive excess demand.
    lo: Option<(f64, f64)>,
    /// Smallest price seen with nonpositive excess demand.
    hi: Option<(f64, f64)>,
    side: i8,
}

impl Bracket {
    fn next_price(&mut self, lambda: f64, excess: f64) -> f64 {
        if excess > 0.0 {
            if self.lo.is_some() && self.side == -1 {
                if let Some(h) = self.hi.as_mut() {
                    h.1 *= 0.5;
                }
            }
            self.lo = Some((lambda, excess));
            self.side = -1;
        } else {
            if self.hi.is_some() && self.side == 1 {
                if let Some(l) = self.lo.as_mut() {
                    l.1 *= 0.5;
                }
            }
            self.hi = Some((lambda, excess));
            self.side = 1;
        }
        match (self.lo, self.hi) {
            (Some((l, _)), None) => {
                if l > 0.0 {
                    4.0 * l
                } else {
                    1e-3
                }
            }
            (None, Some((h, _))) => 0.25 * h,
            (Some((l, zl)), Some((h, zh))) => {
                let cand = l + zl * (h - l) / (zl - zh);
                let mid = 0.5 * (l + h);
                // Geometric bisection when the bracket spans many decades.
                let geo = if l > 0.0 && h / l > 16.0 { (l * h).sqrt() } else { mid };
                if cand.is_finite() && cand > l && cand < h && (h / l.max(f64::MIN_POSITIVE) <= 16.0) {
                    cand
                } else {
                    geo
                }
            }
            (None, None) => unreachable!(),
        }
    }

    fn exhausted(&self) -> bool {
        match (self.lo, self.hi) {
            (Some((l, _)), Some((h, _))) => h - l <= 4.0 * f64::EPSILON * h.abs().max(f64::MIN_POSITIVE),
            _ => false,
        }
    }
}

/// Exhaustive grid search over `{0 <= x_i <= min(x_max, domain_hi_i), sum x_i <= X}`
/// with `grid_n` points per axis.
pub fn brute_force_social_opt(users: &[ComposedUtility], x_total: f64, x_max: f64, grid_n: usize) -> Result<Allocation> {
    let boxes: Vec<(f64, f64)> = users.iter().map(|u| (0.0, x_max.min(u.domain_hi()))).collect();
    grid_search(users, x_total, &boxes, grid_n)
}

/// Repeated grid search, each level re-gridding a box of two cells around the
/// previous level's best point. `levels = 1` is plain [`brute_force_social_opt`].
pub fn brute_force_social_opt_refined(
    users: &[ComposedUtility],
    x_total: f64,
    x_max: f64,
    grid_n: usize,
    levels: usize,
) -> Result<Allocation> {
    let full: Vec<(f64, f64)> = users.iter().map(|u| (0.0, x_max.min(u.domain_hi()))).collect();
    let mut boxes = full.clone();
    let mut best = grid_search(users, x_total, &boxes, grid_n)?;
    for _ in 1..levels {
        boxes = boxes
            .iter()
            .zip(&best.x)
            .zip(&full)
            .map(|(((lo, hi), xi), (flo, fhi))| {
                let cell = (hi - lo) / (grid_n - 1) as f64;
                ((xi - 2.0 * cell).max(*flo), (xi + 2.0 * cell).min(*fhi))
            })
            .collect();
        let cand = grid_search(users, x_total, &boxes, grid_n)?;
        if social_value(users, &cand.x) >= social_value(users, &best.x) {
            best = cand;
        }
    }
    Ok(best)
}

const ORACLE_MAX_USERS: usize = 5;

fn grid_search(users: &[ComposedUtility], x_total: f64, boxes: &[(f64, f64)], grid_n: usize) -> Result<Allocation> {
    let n = users.len();
    if n == 0 || n > ORACLE_MAX_USERS {
        return Err(Error::UnsupportedScale(format!("grid oracle supports 1..={ORACLE_MAX_USERS} users, got {n}")));
    }
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid_n must be at least 2".into()));
    }
    let axes: Vec<Vec<(f64, f64)>> = users
        .iter()
        .zip(boxes)
        .map(|(u, (lo, hi))| {
            (0..grid_n)
                .map(|k| {
                    let x = lo + (hi - lo) * k as f64 / (grid_n - 1) as f64;
                    (x, u.value(x))
                })
                .collect()
        })
        .collect();

    let mut best_x = vec![0.0; n];
    let mut best_val = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n];
    let mut cur = vec![0.0; n];
    // Depth-first enumeration with pruning on the budget.
    fn recurse(
        depth: usize,
        axes: &[Vec<(f64, f64)>],
        budget_left: f64,
        acc: f64,
        idx: &mut [usize],
        cur: &mut [f64],
        best_x: &mut [f64],
        best_val: &mut f64,
    ) {
        if depth == axes.len() {
            if acc > *best_val {
                *best_val = acc;
                best_x.copy_from_slice(cur);
            }
            return;
        }
        for (k, (x, v)) in axes[depth].iter().enumerate() {
            if *x > budget_left + 1e-15 {
                break;
            }
            idx[depth] = k;
            cur[depth] = *x;
            recurse(depth + 1, axes, budget_left - x, acc + v, idx, cur, best_x, best_val);
        }
    }
    recurse(0, &axes, x_total, 0.0, &mut idx, &mut cur, &mut best_x, &mut best_val);
    if best_val == f64::NEG_INFINITY {
        return Err(Error::Domain("no feasible grid point".into()));
    }
    Ok(Allocation { x: best_x, lambda_star: f64::NAN, converged: true, iters_used: 0 })
}

/// Largest KKT violation of `alloc` for the problem defined by `users`,
/// `x_total` and `x_max`: stationarity (with sign conditions at the bounds),
/// primal feasibility and complementary slackness.
pub fn kkt_residual(alloc: &Allocation, users: &[ComposedUtility], x_total: f64, x_max: f64) -> f64 {
    let lambda = alloc.lambda_star;
    let mut worst: f64 = 0.0;
    for (u, &x) in users.iter().zip(&alloc.x) {
        let hi = x_max.min(u.domain_hi());
        let grad = u.marginal(x);
        let scale = 1e-12 * hi.max(1.0);
        let r = if x <= scale {
            (grad - lambda).max(0.0)
        } else if x >= hi - scale {
            (lambda - grad).max(0.0)
        } else {
            (grad - lambda).abs()
        };
        let box_violation = (-x).max(0.0) + (x - hi).max(0.0);
        worst = worst.max(r + box_violation);
    }
    let sum: f64 = alloc.x.iter().sum();
    let primal = (sum - x_total).max(0.0);
    let slackness = (lambda * (x_total - sum)).abs();
    worst + primal + slackness + (-lambda).max(0.0)
}

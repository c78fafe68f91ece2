//! Iterative multiuser subsidized exchange.
//!
//! Each round, users above their target quote the loss of giving up one
//! quantum, users below quote the gain of receiving one, and the center
//! executes one randomly chosen pair whose subsidized surplus is positive.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::center::CenterValuation;
use crate::error::{Error, Result};
use crate::valuation::ComposedUtility;

/// A remaining gap within this fraction of the quantum is closed in one step.
const SNAP_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// Caps each pair's subsidy fraction so executed `alpha * theta` never grows.
    Guarded,
    /// Uses `alpha0` for every pair.
    Unguarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaUpdate {
    Constant,
    /// `delta <- max(factor * delta, floor)` after every round.
    Geometric { factor: f64, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsemConfig {
    pub delta0: f64,
    pub alpha0: f64,
    pub alpha_schedule: AlphaSchedule,
    pub delta_update: DeltaUpdate,
    pub max_iter: usize,
    pub seed: u64,
    /// Keep the per-round quote and surplus matrices in the round records.
    pub record_matrices: bool,
}

impl Default for EsemConfig {
    fn default() -> Self {
        Self {
            delta0: 1e-2,
            alpha0: 0.5,
            alpha_schedule: AlphaSchedule::Guarded,
            delta_update: DeltaUpdate::Constant,
            max_iter: 100_000,
            seed: 0,
            record_matrices: true,
        }
    }
}

impl EsemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::Config(format!("exchange quantum must be positive, got {}", self.delta0)));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 0.5) {
            return Err(Error::Config(format!("subsidy fraction must lie in (0, 1/2], got {}", self.alpha0)));
        }
        if let DeltaUpdate::Geometric { factor, floor } = self.delta_update {
            if !(factor > 0.0 && factor <= 1.0 && floor > 0.0) {
                return Err(Error::Config(format!("geometric quantum update needs factor in (0, 1] and floor > 0, got {factor}, {floor}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a user turns its true loss or gain into a quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuoteStrategy {
    Truthful,
    /// Multiplies every quote by `factor` (above 1 inflates, below 1 deflates).
    Scale { factor: f64 },
    /// Sits out the first `rounds` rounds, then quotes truthfully.
    SkipRounds { rounds: usize },
}

impl QuoteStrategy {
    fn quote(&self, truth: f64, round: usize) -> Option<f64> {
        match *self {
            Self::Truthful => Some(truth),
            Self::Scale { factor } => Some(truth * factor),
            Self::SkipRounds { rounds } => (round >= rounds).then_some(truth),
        }
    }
}

/// Per-round bookkeeping over the givers (rows) and receivers (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMatrices {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub theta: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub w: Vec<Vec<u8>>,
    /// Givers (user indices) with at least one profitable receiver.
    pub r_i_plus: Vec<usize>,
}

impl RoundMatrices {
    pub fn from_parts(s1: Vec<usize>, s2: Vec<usize>, theta: Vec<Vec<f64>>, psi: Vec<Vec<f64>>) -> Self {
        let w: Vec<Vec<u8>> = psi.iter().map(|row| row.iter().map(|p| u8::from(*p > 0.0)).collect()).collect();
        let r_i_plus = s1.iter().zip(&w).filter(|(_, row)| row.contains(&1)).map(|(i, _)| *i).collect();
        Self { s1, s2, theta, psi, w, r_i_plus }
    }

    pub fn is_zero(&self) -> bool {
        self.r_i_plus.is_empty()
    }
}

fn partition(x: &[f64], target: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let s1 = (0..x.len()).filter(|k| target[*k] < x[*k]).collect();
    let s2 = (0..x.len()).filter(|k| target[*k] > x[*k]).collect();
    (s1, s2)
}

/// The quantum a user can move without passing its target.
fn own_step(gap: f64, delta: f64) -> f64 {
    if gap <= delta * (1.0 + SNAP_REL) {
        gap
    } else {
        delta
    }
}

fn moved(x: &[f64], i: usize, j: usize, step: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] -= step;
    y[j] += step;
    y
}

/// Center gain, surplus and indicator matrices for one round with one quote
/// per giver (`rho`, aligned with the givers) and receiver (`phi`).
///
/// A pair's tentative move is the quantum, shortened to whichever of the two
/// users' remaining gaps is smaller.
pub fn esem_round_matrices(
    x_l: &[f64],
    x_dagger: &[f64],
    rho: &[f64],
    phi: &[f64],
    nu: &CenterValuation,
    alpha_l: f64,
    delta_l: f64,
) -> Result<RoundMatrices> {
    if x_l.len() != x_dagger.len() {
        return Err(Error::InvalidParameter("allocation and target lengths differ".into()));
    }
    let (s1, s2) = partition(x_l, x_dagger);
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::Precondition("both the giver and receiver sets must be non-empty".into()));
    }
    if rho.len() != s1.len() || phi.len() != s2.len() {
        return Err(Error::Precondition(format!(
            "need {} giver and {} receiver quotes, got {} and {}",
            s1.len(),
            s2.len(),
            rho.len(),
            phi.len()
        )));
    }
    let nu_l = nu.eval(x_l);
    let mut theta = Vec::with_capacity(s1.len());
    let mut psi = Vec::with_capacity(s1.len());
    for (r, &i) in s1.iter().enumerate() {
        let gi = own_step(x_l[i] - x_dagger[i], delta_l);
        let (mut trow, mut prow) = (Vec::new(), Vec::new());
        for (c, &j) in s2.iter().enumerate() {
            let step = gi.min(own_step(x_dagger[j] - x_l[j], delta_l));
            let t = nu.eval(&moved(x_l, i, j, step)) - nu_l;
            trow.push(t);
            prow.push(alpha_l * t + phi[c] - rho[r]);
        }
        theta.push(trow);
        psi.push(prow);
    }
    Ok(RoundMatrices::from_parts(s1, s2, theta, psi))
}

/// Subsidy fraction for a pair whose center gain is `theta`, capped so the
/// executed product `alpha * theta` does not exceed any earlier one.
pub fn esem_alpha_guard(proposed_alpha: f64, theta: f64, history: &[f64]) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Inconsistency(format!(
            "pair with non-positive center gain {theta} cannot carry a positive subsidized surplus"
        )));
    }
    let cap = history.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(proposed_alpha.min(cap / theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub giver: usize,
    pub receiver: usize,
    pub step: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Subsidy granted to each side, `alpha * theta`.
    pub alpha_theta: f64,
    pub rho: f64,
    pub phi: f64,
    /// Charged to the receiver: `rho - alpha * theta`.
    pub charge: f64,
    /// Paid to the giver: `phi + alpha * theta`.
    pub payment: f64,
    /// Net center outlay: `payment - charge`.
    pub subsidy: f64,
}

/// A quote that contradicts concavity of the quoting user's implied valuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteFlag {
    pub round: usize,
    pub user: usize,
    /// 1 for a giver's loss quote, 2 for a receiver's gain quote.
    pub role: u8,
    pub previous: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferLedger {
    /// Net money received by each user (payments minus charges).
    pub transfers: Vec<f64>,
    pub center_subsidy: f64,
    /// Sum of the center gains of executed exchanges.
    pub nu_gain: f64,
    pub entries: Vec<LedgerEntry>,
    pub flags: Vec<QuoteFlag>,
}

impl TransferLedger {
    pub fn new(n_users: usize) -> Self {
        Self { transfers: vec![0.0; n_users], center_subsidy: 0.0, nu_gain: 0.0, entries: Vec::new(), flags: Vec::new() }
    }

    fn book(&mut self, e: LedgerEntry) {
        self.transfers[e.giver] += e.payment;
        self.transfers[e.receiver] -= e.charge;
        self.center_subsidy += e.subsidy;
        self.nu_gain += e.theta;
        self.entries.push(e);
    }

    /// Rebuilds `(transfers, center_subsidy, nu_gain)` from the entries alone.
    pub fn replay(&self) -> (Vec<f64>, f64, f64) {
        let mut fresh = Self::new(self.transfers.len());
        for e in &self.entries {
            fresh.book(*e);
        }
        (fresh.transfers, fresh.center_subsidy, fresh.nu_gain)
    }

    /// Whether replaying the entries reproduces the stored balances bit for bit.
    pub fn replay_matches(&self) -> bool {
        let (t, s, g) = self.replay();
        t == self.transfers && s == self.center_subsidy && g == self.nu_gain
    }

    /// Center's accumulated net: valuation gains minus subsidies.
    pub fn center_net(&self) -> f64 {
        self.nu_gain - self.center_subsidy
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// No giver or no receiver is left: the target has been reached.
    Completed,
    /// No pair had a positive subsidized surplus.
    NoProfitablePair,
    /// Random probing eliminated every candidate without finding a profitable pair.
    CandidatesExhausted,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRound {
    pub l: usize,
    pub x_l: Vec<f64>,
    pub delta: f64,
    /// Each user's quote at its own quantum; `None` for non-members and abstainers.
    pub rho: Vec<Option<f64>>,
    pub phi: Vec<Option<f64>>,
    /// Empty unless the run records matrices.
    pub matrices: Option<RoundMatrices>,
    pub selected_pair: Option<(usize, usize)>,
    pub exchange: Option<LedgerEntry>,
    /// Center valuation and per-user cumulative utility after the round.
    pub nu: f64,
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsemOutcome {
    pub x_final: Vec<f64>,
    pub ledger: TransferLedger,
    pub rounds: Vec<ExchangeRound>,
    pub exit: ExitReason,
    pub truncated: bool,
    pub nu_initial: f64,
    /// Per-user cumulative utility before the first round.
    pub initial_utilities: Vec<f64>,
}

impl EsemOutcome {
    pub fn nu_final(&self) -> f64 {
        self.rounds.last().map_or(self.nu_initial, |r| r.nu)
    }

    pub fn final_utilities(&self) -> &[f64] {
        self.rounds.last().map_or(&self.initial_utilities, |r| &r.utilities)
    }

    /// Executed `alpha * theta` products in order.
    pub fn executed_alpha_theta(&self) -> Vec<f64> {
        self.ledger.entries.iter().map(|e| e.alpha_theta).collect()
    }

    /// Round trace with columns
    /// `l,selected_i,selected_j,delta,theta,psi,rho,phi,charge,payment,nu,u_1..u_N`.
    /// Fields of rounds without an exchange are left empty.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.x_final.len();
        let mut header = String::from("l,selected_i,selected_j,delta,theta,psi,rho,phi,charge,payment,nu");
        for k in 1..=n {
            header.push_str(&format!(",u_{k}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.rounds {
            let ex = match &r.exchange {
                Some(e) => format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                    e.giver,
                    e.receiver,
                    e.step,
                    e.theta,
                    e.alpha_theta + e.phi - e.rho,
                    e.rho,
                    e.phi,
                    e.charge,
                    e.payment
                ),
                None => format!(",,{:e},,,,,,", r.delta),
            };
            let us: Vec<String> = r.utilities.iter().map(|u| format!("{u:e}")).collect();
            writeln!(w, "{},{ex},{:e},{}", r.l, r.nu, us.join(","))?;
        }
        Ok(())
    }
}

struct PairQuote {
    step: f64,
    theta: f64,
    alpha: f64,
    alpha_theta: f64,
    rho: f64,
    phi: f64,
    psi: f64,
}

/// Tracks each user's last quote to flag quotes that contradict concavity.
struct QuoteHistory {
    last: Vec<Option<(u8, f64, f64, f64)>>,
}

impl QuoteHistory {
    fn check(&mut self, round: usize, user: usize, role: u8, x: f64, step: f64, q: f64) -> Option<QuoteFlag> {
        let mut flag = None;
        if let Some((prev_role, px, pstep, pq)) = self.last[user] {
            let tol = 1e-12 * pq.abs().max(q.abs());
            let bad = prev_role == role
                && pstep == step
                && match role {
                    1 => x < px && q < pq - tol,
                    _ => x > px && q > pq + tol,
                };
            if bad {
                flag = Some(QuoteFlag { round, user, role, previous: pq, current: q });
            }
        }
        self.last[user] = Some((role, x, step, q));
        flag
    }
}

fn round_rng(seed: u64, l: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(l as u64);
    rng
}

/// Runs the iterative exchange from `x_star` toward `x_dagger`.
///
/// `users` are the true utilities (used to form truthful quotes and to score
/// everyone); `quotes[k]` says how user `k` turns its truth into reports.
/// Quotes are requested per pair at the pair's executed quantum, so an
/// exchange shortened at the end of a user's path is priced at its real size.
pub fn esem_run(
    users: &[ComposedUtility],
    quotes: &[QuoteStrategy],
    x_star: &[f64],
    x_dagger: &[f64],
    nu: &CenterValuation,
    cfg: &EsemConfig,
) -> Result<EsemOutcome> {
    cfg.validate()?;
    let n = users.len();
    if quotes.len() != n || x_star.len() != n || x_dagger.len() != n || nu.x_dagger.len() != n {
        return Err(Error::InvalidParameter(format!(
            "length mismatch: {n} users, {} quote rules, {} start, {} target, {} center target",
            quotes.len(),
            x_star.len(),
            x_dagger.len(),
            nu.x_dagger.len()
        )));
    }
    if x_star.iter().chain(x_dagger).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Precondition("start and target allocations must be finite and nonnegative".into()));
    }

    let base: Vec<f64> = users.iter().zip(x_star).map(|(u, x)| u.value(*x)).collect();
    let mut x = x_star.to_vec();
    let mut ledger = TransferLedger::new(n);
    let mut history = QuoteHistory { last: vec![None; n] };
    let mut executed: Vec<f64> = Vec::new();
    let mut rounds = Vec::new();
    let mut delta = cfg.delta0;
    let nu_initial = nu.eval(&x);
    let utilities_at = |x: &[f64], ledger: &TransferLedger| -> Vec<f64> {
        (0..n).map(|k| users[k].value(x[k]) - base[k] + ledger.transfers[k]).collect()
    };
    let initial_utilities = utilities_at(&x, &ledger);

    let mut exit = ExitReason::MaxIter;
    let mut truncated = true;
    for l in 0..cfg.max_iter {
        let (s1, s2) = partition(&x, x_dagger);
        if s1.is_empty() || s2.is_empty() {
            exit = ExitReason::Completed;
            truncated = false;
            break;
        }

        // Per-user quotes at the user's own quantum, for the record and the
        // consistency flags.
        let mut rho_rec = vec![None; n];
        let mut phi_rec = vec![None; n];
        for &i in &s1 {
            let s = own_step(x[i] - x_dagger[i], delta);
            let truth = users[i].value(x[i]) - users[i].value(x[i] - s);
            if let Some(q) = quotes[i].quote(truth, l) {
                rho_rec[i] = Some(q);
                if let Some(f) = history.check(l, i, 1, x[i], s, q) {
                    ledger.flags.push(f);
                }
            }
        }
        for &j in &s2 {
            let s = own_step(x_dagger[j] - x[j], delta);
            let truth = users[j].value(x[j] + s) - users[j].value(x[j]);
            if let Some(q) = quotes[j].quote(truth, l) {
                phi_rec[j] = Some(q);
                if let Some(f) = history.check(l, j, 2, x[j], s, q) {
                    ledger.flags.push(f);
                }
            }
        }

        let nu_l = nu.eval(&x);
        let mut pairs: Vec<Vec<Option<PairQuote>>> = Vec::with_capacity(s1.len());
        for &i in &s1 {
            let gi = own_step(x[i] - x_dagger[i], delta);
            let mut row = Vec::with_capacity(s2.len());
            for &j in &s2 {
                let step = gi.min(own_step(x_dagger[j] - x[j], delta));
                let rho = quotes[i].quote(users[i].value(x[i]) - users[i].value(x[i] - step), l);
                let phi = quotes[j].quote(users[j].value(x[j] + step) - users[j].value(x[j]), l);
                row.push(match (rho, phi) {
                    (Some(rho), Some(phi)) => {
                        let theta = nu.eval(&moved(&x, i, j, step)) - nu_l;
                        // The product is capped directly so the executed sequence is
                        // nonincreasing bit for bit.
                        let (alpha, alpha_theta) = match cfg.alpha_schedule {
                            AlphaSchedule::Guarded if theta > 0.0 => {
                                let cap = executed.iter().copied().fold(f64::INFINITY, f64::min);
                                (esem_alpha_guard(cfg.alpha0, theta, &executed)?, (cfg.alpha0 * theta).min(cap))
                            }
                            _ => (cfg.alpha0, cfg.alpha0 * theta),
                        };
                        Some(PairQuote { step, theta, alpha, alpha_theta, rho, phi, psi: alpha_theta + phi - rho })
                    }
                    _ => None,
                });
            }
            pairs.push(row);
        }
        let theta_m = pairs.iter().map(|r| r.iter().map(|p| p.as_ref().map_or(f64::NAN, |p| p.theta)).collect()).collect();
        let psi_m = pairs.iter().map(|r| r.iter().map(|p| p.as_ref().map_or(f64::NEG_INFINITY, |p| p.psi)).collect()).collect();
        let m = RoundMatrices::from_parts(s1.clone(), s2.clone(), theta_m, psi_m);

        let mut record = ExchangeRound {
            l,
            x_l: x.clone(),
            delta,
            rho: rho_rec,
            phi: phi_rec,
            matrices: None,
            selected_pair: None,
            exchange: None,
            nu: nu_l,
            utilities: Vec::new(),
        };

        if m.is_zero() {
            record.utilities = utilities_at(&x, &ledger);
            record.matrices = cfg.record_matrices.then_some(m);
            rounds.push(record);
            exit = ExitReason::NoProfitablePair;
            truncated = false;
            break;
        }

        // Random probing: rows from the candidate givers, columns from all
        // receivers; a failed probe eliminates both.
        let mut rng = round_rng(cfg.seed, l);
        let mut r_i: Vec<usize> = (0..s1.len()).filter(|r| m.w[*r].contains(&1)).collect();
        let mut r_j: Vec<usize> = (0..s2.len()).collect();
        let mut chosen = None;
        while !r_i.is_empty() && !r_j.is_empty() {
            let a = rng.random_range(0..r_i.len());
            let c = rng.random_range(0..s2.len());
            let row = r_i[a];
            if m.w[row][c] == 0 {
                r_i.remove(a);
                r_j.retain(|k| *k != c);
            } else {
                chosen = Some((row, c));
                break;
            }
        }

        let Some((row, col)) = chosen else {
            record.utilities = utilities_at(&x, &ledger);
            record.matrices = cfg.record_matrices.then_some(m);
            rounds.push(record);
            exit = ExitReason::CandidatesExhausted;
            truncated = false;
            break;
        };

        let (i, j) = (s1[row], s2[col]);
        let p = pairs[row][col].as_ref().expect("profitable pair has quotes");
        let subsidy_each = p.alpha_theta;
        let charge = p.rho - subsidy_each;
        let payment = p.phi + subsidy_each;
        let entry = LedgerEntry {
            round: l,
            giver: i,
            receiver: j,
            step: p.step,
            theta: p.theta,
            alpha: p.alpha,
            alpha_theta: subsidy_each,
            rho: p.rho,
            phi: p.phi,
            charge,
            payment,
            subsidy: payment - charge,
        };
        ledger.book(entry);
        executed.push(subsidy_each);

        x[i] -= p.step;
        x[j] += p.step;
        let snap = SNAP_REL * delta;
        for k in [i, j] {
            if (x[k] - x_dagger[k]).abs() <= snap {
                x[k] = x_dagger[k];
            }
        }

        record.selected_pair = Some((i, j));
        record.exchange = Some(entry);
        record.nu = nu.eval(&x);
        record.utilities = utilities_at(&x, &ledger);
        record.matrices = cfg.record_matrices.then_some(m);
        rounds.push(record);

        if let DeltaUpdate::Geometric { factor, floor } = cfg.delta_update {
            delta = (delta * factor).max(floor);
        }
    }

    if truncated {
        let (s1, s2) = partition(&x, x_dagger);
        if s1.is_empty() || s2.is_empty() {
            exit = ExitReason::Completed;
            truncated = false;
        }
    }

    Ok(EsemOutcome { x_final: x, ledger, rounds, exit, truncated, nu_initial, initial_utilities })
}

//! One-shot two-user subsidized exchange.
//!
//! User 1 gives up resource (quoting its loss `rho`), user 2 receives it
//! (quoting its gain `phi`), and the center, which values the move at `s_c`,
//! subsidizes both sides with `alpha * s_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::valuation::ComposedUtility;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemOutcome {
    pub success: bool,
    /// Amount charged to the receiving user (may be negative: a payment).
    pub charge_user2: f64,
    /// Amount paid to the giving user.
    pub pay_user1: f64,
    pub pi_1: f64,
    pub pi_2: f64,
    pub pi_c: f64,
}

impl SemOutcome {
    fn aborted() -> Self {
        Self { success: false, charge_user2: 0.0, pay_user1: 0.0, pi_1: 0.0, pi_2: 0.0, pi_c: 0.0 }
    }

    /// The allocation after the mechanism: the target on success, the
    /// starting point otherwise.
    pub fn final_allocation(&self, x_star: [f64; 2], x_dagger: [f64; 2]) -> [f64; 2] {
        if self.success {
            x_dagger
        } else {
            x_star
        }
    }
}

/// Truthful quotes `(rho, phi)`: user 1's loss and user 2's gain from moving
/// `x_star` to `x_dagger`.
pub fn sem_truthful_quotes(
    v1: &ComposedUtility,
    v2: &ComposedUtility,
    x_star: [f64; 2],
    x_dagger: [f64; 2],
) -> Result<(f64, f64)> {
    let rho = v1.eval(x_star[0])? - v1.eval(x_dagger[0])?;
    let phi = v2.eval(x_dagger[1])? - v2.eval(x_star[1])?;
    if rho < 0.0 {
        return Err(Error::Precondition(format!(
            "user 1 must not prefer the target: v1(x1*) >= v1(x1+) violated (loss {rho})"
        )));
    }
    if phi < 0.0 {
        return Err(Error::Precondition(format!(
            "user 2 must prefer the target: v2(x2+) >= v2(x2*) violated (gain {phi})"
        )));
    }
    Ok((rho, phi))
}

fn check_alpha(alpha: f64, s_c: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Config(format!("subsidy fraction must lie in (0, 1/2], got {alpha}")));
    }
    if !(s_c >= 0.0) {
        return Err(Error::InvalidParameter(format!("center gain must be nonnegative, got {s_c}")));
    }
    Ok(())
}

/// Runs the exchange on the quotes, scoring both users as if the quotes were
/// their true loss and gain.
pub fn sem_run(rho: f64, phi: f64, s_c: f64, alpha: f64) -> Result<SemOutcome> {
    sem_evaluate(rho, phi, rho, phi, s_c, alpha)
}

/// Runs the exchange on the quoted `(rho, phi)` and scores the users with
/// their true loss `rho_true` and gain `phi_true`.
pub fn sem_evaluate(rho: f64, phi: f64, rho_true: f64, phi_true: f64, s_c: f64, alpha: f64) -> Result<SemOutcome> {
    check_alpha(alpha, s_c)?;
    let subsidy = alpha * s_c;
    if phi + subsidy < rho {
        return Ok(SemOutcome::aborted());
    }
    let charge_user2 = rho - subsidy;
    let pay_user1 = phi + subsidy;
    Ok(SemOutcome {
        success: true,
        charge_user2,
        pay_user1,
        pi_1: pay_user1 - rho_true,
        pi_2: phi_true - charge_user2,
        pi_c: (1.0 - 2.0 * alpha) * s_c + rho - phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::{ObjectiveFn, ValuationFn};
    use proptest::prelude::*;

    fn exp_id(eps: f64) -> ComposedUtility {
        ComposedUtility::new(ValuationFn::exponential(eps).unwrap(), ObjectiveFn::Identity, 10.0).unwrap()
    }

    #[test]
    fn quotes_examples() {
        let (u1, u2) = (exp_id(1.0), exp_id(1.0));
        assert_eq!(sem_truthful_quotes(&u1, &u2, [1.0, 1.0], [1.0, 1.0]).unwrap(), (0.0, 0.0));
        let (rho, phi) = sem_truthful_quotes(&u1, &u2, [1.0, 1.0], [0.5, 1.5]).unwrap();
        assert!((rho - ((-0.5f64).exp() - (-1f64).exp())).abs() < 1e-15);
        assert!((phi - ((-1f64).exp() - (-1.5f64).exp())).abs() < 1e-15);
        assert!(rho > phi);
        assert!(matches!(sem_truthful_quotes(&u1, &u2, [1.0, 1.0], [1.5, 0.5]), Err(Error::Precondition(_))));
    }

    #[test]
    fn run_examples() {
        let o = sem_run(2.0, 1.0, 4.0, 0.25).unwrap();
        assert!(o.success);
        assert_eq!((o.charge_user2, o.pay_user1, o.pi_c), (1.0, 2.0, 3.0));
        assert_eq!(o.final_allocation([1.0, 1.0], [0.5, 1.5]), [0.5, 1.5]);

        let o = sem_run(2.0, 1.0, 1.0, 0.5).unwrap();
        assert!(!o.success);
        assert_eq!((o.charge_user2, o.pay_user1, o.pi_1, o.pi_2, o.pi_c), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(o.final_allocation([1.0, 1.0], [0.5, 1.5]), [1.0, 1.0]);

        let o = sem_run(0.7, 0.7, 2.0, 0.1).unwrap();
        assert!(o.success);
        assert!((o.pi_1 - o.pi_2).abs() <= 1e-12);
        assert!((o.pi_1 - 0.2).abs() < 1e-15);

        assert!(matches!(sem_run(1.0, 1.0, 1.0, 0.6), Err(Error::Config(_))));
        assert!(matches!(sem_run(1.0, 1.0, 1.0, 0.0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn truthful_quotes_fair_and_center_gains(rho in 0.0f64..3.0, phi in 0.0f64..3.0, s_c in 0.0f64..5.0, alpha in 0.01f64..=0.5) {
            let o = sem_run(rho, phi, s_c, alpha).unwrap();
            if o.success {
                prop_assert!((o.pi_1 - o.pi_2).abs() <= 1e-12);
                prop_assert!((o.pi_c - ((1.0 - 2.0 * alpha) * s_c + rho - phi)).abs() <= 1e-12);
            }
        }

        #[test]
        fn misquoting_never_helps(rho_tr in 0.0f64..2.0, phi_tr in 0.0f64..2.0, bump in 0.0f64..2.0, s_c in 0.0f64..4.0, alpha in 0.01f64..=0.5) {
            let truth = sem_evaluate(rho_tr, phi_tr, rho_tr, phi_tr, s_c, alpha).unwrap();
            let inflated = sem_evaluate(rho_tr + bump, phi_tr, rho_tr, phi_tr, s_c, alpha).unwrap();
            prop_assert!(inflated.pi_1 <= truth.pi_1);
            let deflated = sem_evaluate(rho_tr, (phi_tr - bump).max(0.0), rho_tr, phi_tr, s_c, alpha).unwrap();
            prop_assert!(deflated.pi_2 <= truth.pi_2);
        }

        #[test]
        fn success_is_monotone_in_alpha(rho in 0.0f64..2.0, phi in 0.0f64..2.0, s_c in 0.0f64..4.0, a in 0.01f64..=0.5, b in 0.01f64..=0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if sem_run(rho, phi, s_c, lo).unwrap().success {
                prop_assert!(sem_run(rho, phi, s_c, hi).unwrap().success);
            }
        }
    }
}

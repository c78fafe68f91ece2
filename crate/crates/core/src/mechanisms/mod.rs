//! Transfer rules: dual pricing, the two-user subsidized exchange, and its
//! iterative multiuser extension.

mod center;
mod esem;
mod sem;

pub use center::{center_solve_x_dagger, CenterValuation};
pub use esem::{
    esem_alpha_guard, esem_round_matrices, esem_run, AlphaSchedule, DeltaUpdate, EsemConfig, EsemOutcome, ExchangeRound,
    ExitReason, LedgerEntry, QuoteFlag, QuoteStrategy, RoundMatrices, TransferLedger,
};
pub use sem::{sem_evaluate, sem_run, sem_truthful_quotes, SemOutcome};

use crate::error::{Error, Result};

/// Per-user transfers `-lambda * x_i` under dual pricing.
pub fn dual_price_transfer(x: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("price must be nonnegative, got {lambda}")));
    }
    // `0.0 - lambda * x` keeps a free resource at +0.0 rather than -0.0.
    Ok(x.iter().map(|xi| 0.0 - lambda * xi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dual_transfer_examples() {
        assert!(dual_price_transfer(&[1.0, 2.0], 0.0).unwrap().iter().all(|t| *t == 0.0));
        assert_eq!(dual_price_transfer(&[1.0, 2.0], 0.5).unwrap(), vec![-0.5, -1.0]);
        assert!(dual_price_transfer(&[1.0], -0.1).is_err());
    }

    proptest! {
        #[test]
        fn dual_transfers_never_pay_out(x in prop::collection::vec(0.0f64..10.0, 1..8), lambda in 0.0f64..5.0) {
            let t = dual_price_transfer(&x, lambda).unwrap();
            prop_assert!(t.iter().sum::<f64>() <= 0.0);
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::project_box_budget;

/// The center's preference over allocations: `a * exp(-|x - target|^p / sigma)`
/// with the Euclidean norm raised to `norm_power` (1 or 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterValuation {
    pub a: f64,
    pub sigma: f64,
    pub x_dagger: Vec<f64>,
    pub norm_power: u8,
}

impl CenterValuation {
    pub fn new(a: f64, sigma: f64, x_dagger: Vec<f64>, norm_power: u8) -> Result<Self> {
        if !(a > 0.0 && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("center valuation needs a > 0 and sigma > 0, got a={a}, sigma={sigma}")));
        }
        if norm_power != 1 && norm_power != 2 {
            return Err(Error::InvalidParameter(format!("norm power must be 1 or 2, got {norm_power}")));
        }
        if x_dagger.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target allocation must be finite".into()));
        }
        Ok(Self { a, sigma, x_dagger, norm_power })
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.x_dagger).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.distance(x);
        let d = if self.norm_power == 2 { d * d } else { d };
        self.a * (-d / self.sigma).exp()
    }
}

/// The center's preferred allocation: the stored target when it is feasible,
/// otherwise its Euclidean projection onto `{0 <= x <= x_max, sum(x) <= x_total}`.
pub fn center_solve_x_dagger(nu: &CenterValuation, x_total: f64, x_max: f64) -> Vec<f64> {
    let t = &nu.x_dagger;
    let feasible = t.iter().all(|v| (0.0..=x_max).contains(v)) && t.iter().sum::<f64>() <= x_total;
    if feasible {
        t.clone()
    } else {
        project_box_budget(t, 0.0, x_max, x_total, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valuation_peaks_at_target() {
        let nu = CenterValuation::new(2.0, 1.0, vec![1.0, 1.0], 2).unwrap();
        assert_eq!(nu.eval(&[1.0, 1.0]), 2.0);
        assert!((nu.eval(&[2.0, 0.0]) - 2.0 * (-2f64).exp()).abs() < 1e-15);
        let plain = CenterValuation::new(2.0, 1.0, vec![1.0, 1.0], 1).unwrap();
        assert!((plain.eval(&[2.0, 0.0]) - 2.0 * (-(2f64.sqrt())).exp()).abs() < 1e-15);
        assert!(CenterValuation::new(0.0, 1.0, vec![1.0], 2).is_err());
        assert!(CenterValuation::new(1.0, 1.0, vec![1.0], 3).is_err());
    }

    #[test]
    fn solve_returns_feasible_target() {
        let nu = CenterValuation::new(1.0, 1.0, vec![0.2, 0.3], 2).unwrap();
        assert_eq!(center_solve_x_dagger(&nu, 1.0, 0.5), vec![0.2, 0.3]);

        let over = CenterValuation::new(1.0, 1.0, vec![0.6, 0.8, -0.1], 2).unwrap();
        let x = center_solve_x_dagger(&over, 1.0, 0.7);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x.iter().all(|v| (0.0..=0.7).contains(v)));
    }
}

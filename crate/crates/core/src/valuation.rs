//! Objective functions, valuation functions and their composition.
//!
//! An objective maps an allocated resource amount to a performance figure
//! (identity, Shannon-type rate, or energy efficiency). A valuation maps that
//! figure to the user's private worth. The composed utility `v(b(x))` is what
//! the solver and the mechanisms work with.
//!
//! Rates are in bit/s/Hz (base-2 logarithm); energy efficiency in bit/s/Hz/W.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::golden_section_max;

const LN_2: f64 = std::f64::consts::LN_2;

/// Relative tolerance of the golden-section search used for the
/// energy-efficiency peak.
pub const PEAK_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveFn {
    Identity,
    Rate {
        gain: f64,
        noise_plus_interf: f64,
    },
    EnergyEfficiency {
        gain: f64,
        noise_plus_interf: f64,
        circuit_power: f64,
    },
}

impl ObjectiveFn {
    pub fn rate(gain: f64, noise_plus_interf: f64) -> Result<Self> {
        check_positive("gain", gain)?;
        check_positive("noise_plus_interf", noise_plus_interf)?;
        Ok(Self::Rate { gain, noise_plus_interf })
    }

    pub fn energy_efficiency(gain: f64, noise_plus_interf: f64, circuit_power: f64) -> Result<Self> {
        check_positive("gain", gain)?;
        check_positive("noise_plus_interf", noise_plus_interf)?;
        check_positive("circuit_power", circuit_power)?;
        Ok(Self::EnergyEfficiency { gain, noise_plus_interf, circuit_power })
    }

    /// Signal-to-interference-plus-noise ratio per unit of resource.
    pub fn snr_slope(&self) -> Option<f64> {
        match *self {
            Self::Identity => None,
            Self::Rate { gain, noise_plus_interf } | Self::EnergyEfficiency { gain, noise_plus_interf, .. } => {
                Some(gain / noise_plus_interf)
            }
        }
    }

    pub fn is_unimodal(&self) -> bool {
        matches!(self, Self::EnergyEfficiency { .. })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("objective evaluated at negative resource {x}")));
        }
        Ok(self.value(x))
    }

    pub(crate) fn value(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => x,
            Self::Rate { gain, noise_plus_interf } => (gain * x / noise_plus_interf).ln_1p() / LN_2,
            Self::EnergyEfficiency { gain, noise_plus_interf, circuit_power } => {
                (gain * x / noise_plus_interf).ln_1p() / LN_2 / (circuit_power + x)
            }
        }
    }

    pub(crate) fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Rate { gain, noise_plus_interf } => {
                let a = gain / noise_plus_interf;
                a / ((1.0 + a * x) * LN_2)
            }
            Self::EnergyEfficiency { gain, noise_plus_interf, circuit_power } => {
                let a = gain / noise_plus_interf;
                let rate = (a * x).ln_1p() / LN_2;
                let rate_d = a / ((1.0 + a * x) * LN_2);
                let denom = circuit_power + x;
                (rate_d * denom - rate) / (denom * denom)
            }
        }
    }

    /// Maximizer of a unimodal objective on `[0, upper]`.
    pub fn unimodal_peak(&self, upper: f64) -> Result<f64> {
        if !self.is_unimodal() {
            return Err(Error::UnsupportedKind(format!("{self:?} has no interior peak")));
        }
        check_positive("upper", upper)?;
        Ok(golden_section_max(|x| self.value(x), 0.0, upper, PEAK_REL_TOL))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValuationFn {
    /// `1 - exp(-eps * b)`.
    Exponential { eps: f64 },
    /// `alpha * inner(b)` with `alpha` strictly inside (0, 1).
    Scaled { alpha: f64, inner: Box<ValuationFn> },
    /// `weight * b`; concave but not strictly.
    Affine { weight: f64 },
}

impl ValuationFn {
    pub fn exponential(eps: f64) -> Result<Self> {
        check_positive("eps", eps)?;
        Ok(Self::Exponential { eps })
    }

    pub fn scaled(alpha: f64, inner: ValuationFn) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("scale alpha={alpha} must lie in (0, 1)")));
        }
        Ok(Self::Scaled { alpha, inner: Box::new(inner) })
    }

    pub fn affine(weight: f64) -> Result<Self> {
        check_positive("weight", weight)?;
        Ok(Self::Affine { weight })
    }

    pub fn eval(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::Domain(format!("valuation evaluated at negative objective {b}")));
        }
        Ok(self.value(b))
    }

    pub(crate) fn value(&self, b: f64) -> f64 {
        match self {
            Self::Exponential { eps } => -(-eps * b).exp_m1(),
            Self::Scaled { alpha, inner } => alpha * inner.value(b),
            Self::Affine { weight } => weight * b,
        }
    }

    pub(crate) fn derivative(&self, b: f64) -> f64 {
        match self {
            Self::Exponential { eps } => eps * (-eps * b).exp(),
            Self::Scaled { alpha, inner } => alpha * inner.derivative(b),
            Self::Affine { weight } => *weight,
        }
    }

    pub fn is_strictly_concave(&self) -> bool {
        match self {
            Self::Exponential { .. } => true,
            Self::Scaled { inner, .. } => inner.is_strictly_concave(),
            Self::Affine { .. } => false,
        }
    }

    /// `(k, eps)` when the valuation is `k * (1 - exp(-eps * b))`.
    pub fn exponential_form(&self) -> Option<(f64, f64)> {
        match self {
            Self::Exponential { eps } => Some((1.0, *eps)),
            Self::Scaled { alpha, inner } => inner.exponential_form().map(|(k, e)| (alpha * k, e)),
            Self::Affine { .. } => None,
        }
    }

    /// Same valuation family with the exponential shape parameter replaced.
    pub fn with_eps(&self, new_eps: f64) -> Result<Self> {
        check_positive("eps", new_eps)?;
        match self {
            Self::Exponential { .. } => Ok(Self::Exponential { eps: new_eps }),
            Self::Scaled { alpha, inner } => Ok(Self::Scaled { alpha: *alpha, inner: Box::new(inner.with_eps(new_eps)?) }),
            Self::Affine { .. } => Err(Error::UnsupportedKind("affine valuation has no eps".into())),
        }
    }
}

/// `v(b(x))` restricted to `[0, domain_hi]`.
///
/// For energy-efficiency objectives `domain_hi` is the smaller of the resource
/// cap and the objective's peak; requests above it are evaluated at the
/// boundary and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedUtility {
    pub valuation: ValuationFn,
    pub objective: ObjectiveFn,
    domain_hi: f64,
}

impl ComposedUtility {
    pub fn new(valuation: ValuationFn, objective: ObjectiveFn, x_max: f64) -> Result<Self> {
        check_positive("x_max", x_max)?;
        let domain_hi = if objective.is_unimodal() { objective.unimodal_peak(x_max)?.min(x_max) } else { x_max };
        Ok(Self { valuation, objective, domain_hi })
    }

    pub fn domain_hi(&self) -> f64 {
        self.domain_hi
    }

    /// Replaces the valuation and keeps the objective and domain.
    pub fn with_valuation(&self, valuation: ValuationFn) -> Self {
        Self { valuation, objective: self.objective, domain_hi: self.domain_hi }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.eval_flagged(x)?.0)
    }

    /// Value and a flag telling whether `x` was clamped to `domain_hi`.
    pub fn eval_flagged(&self, x: f64) -> Result<(f64, bool)> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("utility evaluated at negative resource {x}")));
        }
        let clamped = x > self.domain_hi;
        Ok((self.value(x), clamped))
    }

    /// Total evaluation used on hot paths; `x` is clamped into the domain.
    pub(crate) fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.domain_hi);
        self.valuation.value(self.objective.value(x))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let slack = 1e-12 * self.domain_hi.max(1.0);
        if !(x >= -slack && x <= self.domain_hi + slack) {
            return Err(Error::Domain(format!("derivative requested at {x} outside [0, {}]", self.domain_hi)));
        }
        Ok(self.marginal(x))
    }

    pub(crate) fn marginal(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.domain_hi);
        self.valuation.derivative(self.objective.value(x)) * self.objective.derivative(x)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name}={v} must be positive and finite")))
    }
}

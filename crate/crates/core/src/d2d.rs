//! Single-microcell underlay D2D scenarios.
//!
//! Each link gets a transmitter-receiver distance, a close-in path loss, an
//! independent Rayleigh fading power and an aggregate interference level drawn
//! as a dB offset above the thermal noise floor. From those, a rate or an
//! energy-efficiency objective is built per link.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::valuation::{ComposedUtility, ObjectiveFn, ValuationFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cell_radius_m: f64,
    pub d2d_dist_min_m: f64,
    pub d2d_dist_max_m: f64,
    /// Thermal noise power spectral density (dBm/Hz).
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub rb_bandwidth_hz: f64,
    /// Per-link transmit power cap (W).
    pub p_max_w: f64,
    /// Cellular transmit power (W).
    pub p_cell_w: f64,
    /// Total D2D transmit power allowed on the resource block (W).
    pub total_power_w: f64,
    pub carrier_ghz: f64,
    pub pathloss_exponent: f64,
    pub interf_over_noise_db_min: f64,
    pub interf_over_noise_db_max: f64,
    /// Circuit power for energy-efficiency links (W).
    pub circuit_power_w: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub n_links: usize,
    /// The first `n_energy_efficiency` links use the energy-efficiency objective.
    pub n_energy_efficiency: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            cell_radius_m: 500.0,
            d2d_dist_min_m: 5.0,
            d2d_dist_max_m: 25.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 6.0,
            rb_bandwidth_hz: 15_000.0,
            p_max_w: 0.1,
            p_cell_w: 0.5,
            total_power_w: 0.4,
            carrier_ghz: 2.0,
            pathloss_exponent: 3.19,
            interf_over_noise_db_min: 5.0,
            interf_over_noise_db_max: 20.0,
            circuit_power_w: 0.01,
            eps_min: 0.1,
            eps_max: 0.3,
            n_links: 8,
            n_energy_efficiency: 0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_radius_m", self.cell_radius_m),
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("p_max_w", self.p_max_w),
            ("p_cell_w", self.p_cell_w),
            ("total_power_w", self.total_power_w),
            ("carrier_ghz", self.carrier_ghz),
            ("pathloss_exponent", self.pathloss_exponent),
            ("circuit_power_w", self.circuit_power_w),
            ("eps_min", self.eps_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name}={v} must be positive")));
            }
        }
        if self.total_power_w < self.p_max_w {
            return Err(Error::Config("total_power_w must be at least p_max_w".into()));
        }
        if !(self.d2d_dist_min_m > 0.0
            && self.d2d_dist_min_m <= self.d2d_dist_max_m
            && self.d2d_dist_max_m < self.cell_radius_m)
        {
            return Err(Error::Config("D2D distance range must lie inside (0, cell_radius_m)".into()));
        }
        if self.d2d_dist_min_m < 1.0 {
            return Err(Error::Config("D2D distances below the 1 m reference are not modelled".into()));
        }
        if self.interf_over_noise_db_min > self.interf_over_noise_db_max {
            return Err(Error::Config("interference dB band is reversed".into()));
        }
        if self.eps_min > self.eps_max {
            return Err(Error::Config("eps range is reversed".into()));
        }
        if self.n_links == 0 {
            return Err(Error::Config("n_links must be at least 1".into()));
        }
        if self.n_energy_efficiency > self.n_links {
            return Err(Error::Config("n_energy_efficiency exceeds n_links".into()));
        }
        Ok(())
    }
}

/// Thermal noise power over one resource block, in watts.
pub fn noise_floor(cfg: &ScenarioConfig) -> f64 {
    dbm_to_watts(noise_floor_dbm(cfg))
}

pub fn noise_floor_dbm(cfg: &ScenarioConfig) -> f64 {
    cfg.noise_psd_dbm_hz + cfg.noise_figure_db + 10.0 * cfg.rb_bandwidth_hz.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Close-in path loss with a 1 m free-space reference.
pub fn pathloss_db(cfg: &ScenarioConfig, distance_m: f64) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::Domain(format!("path loss needs distance >= 1 m, got {distance_m}")));
    }
    Ok(32.4 + 20.0 * cfg.carrier_ghz.log10() + 10.0 * cfg.pathloss_exponent * distance_m.log10())
}

/// Interferers seen by one D2D receiver, as `(transmit power W, channel power gain)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterferenceSources {
    pub same_cell_d2d: Vec<(f64, f64)>,
    pub neighbor_cell_d2d: Vec<(f64, f64)>,
    pub same_cell_cellular: Vec<(f64, f64)>,
    pub neighbor_cellular: Vec<(f64, f64)>,
}

/// Aggregate interference power: the sum of `p * g` over all four sources.
pub fn compute_interference(src: &InterferenceSources) -> f64 {
    [&src.same_cell_d2d, &src.neighbor_cell_d2d, &src.same_cell_cellular, &src.neighbor_cellular]
        .into_iter()
        .flat_map(|terms| terms.iter())
        .map(|(p, g)| p * g)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Rate,
    EnergyEfficiency,
}

impl ObjectiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rate => "rate",
            Self::EnergyEfficiency => "energy_efficiency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDraw {
    pub distance_m: f64,
    /// `|h|^2` with `h ~ CN(0, 1)`.
    pub fading_power: f64,
    /// End-to-end channel power gain (path loss times fading).
    pub gain: f64,
    pub interference_w: f64,
    pub objective_kind: ObjectiveKind,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub noise_w: f64,
    pub links: Vec<LinkDraw>,
    pub objectives: Vec<ObjectiveFn>,
}

impl Scenario {
    /// True composed utilities `1 - exp(-eps * b(p))` on `[0, p_max]`.
    pub fn utilities(&self) -> Result<Vec<ComposedUtility>> {
        self.links
            .iter()
            .zip(&self.objectives)
            .map(|(l, o)| ComposedUtility::new(ValuationFn::exponential(l.eps)?, *o, self.config.p_max_w))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "link,distance_m,gain,interference_w,kind,eps")?;
        for (i, l) in self.links.iter().enumerate() {
            writeln!(w, "{},{},{:e},{:e},{},{}", i, l.distance_m, l.gain, l.interference_w, l.objective_kind.as_str(), l.eps)?;
        }
        Ok(())
    }
}

/// Draws one `CN(0, 1)` fading power `|h|^2`.
pub fn rayleigh_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    0.5 * (re * re + im * im)
}

/// Builds a scenario from `cfg`; a pure function of the configuration and its seed.
pub fn sample_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_w = noise_floor(cfg);
    let mut links = Vec::with_capacity(cfg.n_links);
    let mut objectives = Vec::with_capacity(cfg.n_links);
    for i in 0..cfg.n_links {
        let distance_m = rng.random_range(cfg.d2d_dist_min_m..=cfg.d2d_dist_max_m);
        let fading_power = loop {
            let f = rayleigh_power(&mut rng);
            if f > 0.0 {
                break f;
            }
        };
        let pl = pathloss_db(cfg, distance_m)?;
        let gain = 10f64.powf(-pl / 10.0) * fading_power;
        let offset_db = rng.random_range(cfg.interf_over_noise_db_min..=cfg.interf_over_noise_db_max);
        let interference_w = noise_w * 10f64.powf(offset_db / 10.0);
        let eps = rng.random_range(cfg.eps_min..=cfg.eps_max);
        let objective_kind =
            if i < cfg.n_energy_efficiency { ObjectiveKind::EnergyEfficiency } else { ObjectiveKind::Rate };
        let npi = noise_w + interference_w;
        let objective = match objective_kind {
            ObjectiveKind::Rate => ObjectiveFn::rate(gain, npi)?,
            ObjectiveKind::EnergyEfficiency => ObjectiveFn::energy_efficiency(gain, npi, cfg.circuit_power_w)?,
        };
        links.push(LinkDraw { distance_m, fading_power, gain, interference_w, objective_kind, eps });
        objectives.push(objective);
    }
    Ok(Scenario { config: cfg.clone(), noise_w, links, objectives })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_floor_examples() {
        let cfg = ScenarioConfig::default();
        // -174 + 6 + 10 log10(15000) = -126.2390874... dBm
        assert!((noise_floor_dbm(&cfg) - (-126.239_087_409_443_2)).abs() < 1e-9);
        assert!((watts_to_dbm(noise_floor(&cfg)) - noise_floor_dbm(&cfg)).abs() < 1e-9);

        let bare = ScenarioConfig { noise_figure_db: 0.0, rb_bandwidth_hz: 1.0, ..cfg.clone() };
        assert_eq!(noise_floor_dbm(&bare), -174.0);

        let doubled = ScenarioConfig { rb_bandwidth_hz: 30_000.0, ..cfg.clone() };
        let diff = noise_floor_dbm(&doubled) - noise_floor_dbm(&cfg);
        assert!((diff - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((diff - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn pathloss_examples() {
        let free = ScenarioConfig { carrier_ghz: 1.0, pathloss_exponent: 2.0, ..Default::default() };
        assert!((pathloss_db(&free, 1.0).unwrap() - 32.4).abs() < 1e-12);

        let umi = ScenarioConfig { carrier_ghz: 2.0, pathloss_exponent: 3.19, ..Default::default() };
        assert!((pathloss_db(&umi, 10.0).unwrap() - 70.320_599_913_279_62).abs() < 1e-9);

        let d1 = 7.3;
        let decade = pathloss_db(&umi, 10.0 * d1).unwrap() - pathloss_db(&umi, d1).unwrap();
        assert!((decade - 31.9).abs() < 1e-9);

        assert!(matches!(pathloss_db(&umi, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn interference_examples() {
        assert_eq!(compute_interference(&InterferenceSources::default()), 0.0);
        let one = InterferenceSources { same_cell_d2d: vec![(0.1, 1e-8)], ..Default::default() };
        assert!((compute_interference(&one) - 1e-9).abs() < 1e-24);

        let a = InterferenceSources {
            same_cell_d2d: vec![(0.1, 1e-8)],
            neighbor_cell_d2d: vec![(0.05, 2e-9)],
            same_cell_cellular: vec![(0.5, 3e-10)],
            neighbor_cellular: vec![(0.5, 4e-11)],
        };
        let b = InterferenceSources {
            same_cell_d2d: a.neighbor_cellular.clone(),
            neighbor_cell_d2d: a.same_cell_cellular.clone(),
            same_cell_cellular: a.neighbor_cell_d2d.clone(),
            neighbor_cellular: a.same_cell_d2d.clone(),
        };
        let expected = 0.1 * 1e-8 + 0.05 * 2e-9 + 0.5 * 3e-10 + 0.5 * 4e-11;
        assert!((compute_interference(&a) - expected).abs() < 1e-22);
        assert!((compute_interference(&b) - expected).abs() < 1e-22);
    }

    #[test]
    fn same_seed_gives_identical_scenarios() {
        let cfg = ScenarioConfig { n_links: 20, n_energy_efficiency: 5, seed: 42, ..Default::default() };
        let a = sample_scenario(&cfg).unwrap();
        let b = sample_scenario(&cfg).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let other = sample_scenario(&ScenarioConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn fading_power_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| rayleigh_power(&mut rng)).sum::<f64>() / n as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn draws_respect_configured_bands() {
        let cfg = ScenarioConfig { n_links: 500, n_energy_efficiency: 100, seed: 3, ..Default::default() };
        let s = sample_scenario(&cfg).unwrap();
        let pn = noise_floor(&cfg);
        for (i, l) in s.links.iter().enumerate() {
            assert!(l.interference_w >= pn * 10f64.powf(0.5) * (1.0 - 1e-12));
            assert!(l.interference_w <= pn * 10f64.powf(2.0) * (1.0 + 1e-12));
            assert!((5.0..=25.0).contains(&l.distance_m));
            assert!((0.1..=0.3).contains(&l.eps));
            assert!(l.gain > 0.0);
            let expected = if i < 100 { ObjectiveKind::EnergyEfficiency } else { ObjectiveKind::Rate };
            assert_eq!(l.objective_kind, expected);
        }
    }

    #[test]
    fn drawn_objectives_satisfy_shape_invariants() {
        let cfg = ScenarioConfig { n_links: 40, n_energy_efficiency: 20, seed: 11, ..Default::default() };
        let s = sample_scenario(&cfg).unwrap();
        for o in &s.objectives {
            let xs: Vec<f64> = (0..=200).map(|k| cfg.p_max_w * k as f64 / 200.0).collect();
            let vals: Vec<f64> = xs.iter().map(|x| o.eval(*x).unwrap()).collect();
            match o {
                ObjectiveFn::Rate { .. } => assert!(vals.windows(2).all(|w| w[1] > w[0])),
                ObjectiveFn::EnergyEfficiency { .. } => {
                    let peak = o.unimodal_peak(cfg.p_max_w).unwrap();
                    let fine: Vec<f64> = (0..=400).map(|k| o.eval(peak * 2.0 * k as f64 / 400.0).unwrap()).collect();
                    let ups: Vec<bool> = fine.windows(2).map(|w| w[1] >= w[0]).collect();
                    assert_eq!(ups.windows(2).filter(|w| w[0] != w[1]).count(), 1);
                }
                ObjectiveFn::Identity => unreachable!(),
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ScenarioConfig { total_power_w: 0.05, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { d2d_dist_max_m: 600.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { n_links: 0, ..Default::default() };
        assert!(sample_scenario(&bad).is_err());
    }
}

//! Construction of the center's target allocation as a sum-preserving
//! perturbation of the users' allocation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numeric::project_box_budget;

/// Random direction with zero sum and Euclidean norm `magnitude`.
fn tangent_direction<R: Rng + ?Sized>(n: usize, magnitude: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let mut z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        z.iter_mut().for_each(|v| *v -= mean);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return z.into_iter().map(|v| v * magnitude / norm).collect();
        }
    }
}

/// `x_star` moved by a random zero-sum direction of length `magnitude`, then
/// projected back onto `{0 <= x <= x_max, sum(x) = sum(x_star)}`.
pub fn tangent_target<R: Rng + ?Sized>(x_star: &[f64], magnitude: f64, x_max: f64, rng: &mut R) -> Vec<f64> {
    let dir = tangent_direction(x_star.len(), magnitude, rng);
    let y: Vec<f64> = x_star.iter().zip(&dir).map(|(x, d)| x + d).collect();
    project_box_budget(&y, 0.0, x_max, x_star.iter().sum(), true)
}

/// Like [`tangent_target`], but every coordinate moves by a whole number of
/// quanta `delta`, stays inside `[0, x_max]`, and the moves sum to zero, so an
/// exchange sequence with quantum `delta` can land on it exactly.
pub fn lattice_target<R: Rng + ?Sized>(x_star: &[f64], delta: f64, magnitude: f64, x_max: f64, rng: &mut R) -> Vec<f64> {
    let dir = tangent_direction(x_star.len(), magnitude, rng);
    let want: Vec<f64> = dir.iter().map(|d| d / delta).collect();
    let lo: Vec<i64> = x_star.iter().map(|x| -((x / delta).floor() as i64)).collect();
    let hi: Vec<i64> = x_star.iter().map(|x| ((x_max - x) / delta).floor() as i64).collect();
    let mut k: Vec<i64> = want.iter().zip(lo.iter().zip(&hi)).map(|(w, (l, h))| (w.round() as i64).clamp(*l, *h)).collect();

    // Repair the sum one quantum at a time, always adjusting the coordinate
    // that rounding pushed furthest in the offending direction.
    let mut excess: i64 = k.iter().sum();
    while excess != 0 {
        let down = excess > 0;
        let pick = (0..k.len())
            .filter(|i| if down { k[*i] > lo[*i] } else { k[*i] < hi[*i] })
            .max_by(|a, b| {
                let ea = if down { k[*a] as f64 - want[*a] } else { want[*a] - k[*a] as f64 };
                let eb = if down { k[*b] as f64 - want[*b] } else { want[*b] - k[*b] as f64 };
                ea.total_cmp(&eb).then(b.cmp(a))
            });
        let Some(i) = pick else { break };
        if down {
            k[i] -= 1;
            excess -= 1;
        } else {
            k[i] += 1;
            excess += 1;
        }
    }
    if excess != 0 {
        return x_star.to_vec();
    }
    x_star.iter().zip(&k).map(|(x, ki)| (x + *ki as f64 * delta).clamp(0.0, x_max)).collect()
}

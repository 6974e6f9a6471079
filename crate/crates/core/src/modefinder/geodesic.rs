use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{dot, norm};

/// Axis-aligned box the search draws start points from.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; d],
            hi: vec![hi; d],
        }
    }

    /// The cube `[lo, hi]^d` inflated by `fraction` of its side about its center.
    pub fn inflated_cube(d: usize, lo: f64, hi: f64, fraction: f64) -> Self {
        let pad = 0.5 * fraction * (hi - lo);
        Self::cube(d, lo - pad, hi + pad)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect()
    }

    /// Specular reflection of position and direction at the walls.
    fn reflect(&self, x: &mut [f64], u: &mut [f64]) {
        for i in 0..x.len() {
            let (a, b) = (self.lo[i], self.hi[i]);
            let w = b - a;
            if w <= 0.0 {
                x[i] = a;
                continue;
            }
            // A long step can cross the box more than once.
            for _ in 0..64 {
                if x[i] < a {
                    x[i] = 2.0 * a - x[i];
                    u[i] = -u[i];
                } else if x[i] > b {
                    x[i] = 2.0 * b - x[i];
                    u[i] = -u[i];
                } else {
                    break;
                }
            }
            x[i] = x[i].clamp(a, b);
        }
    }
}

/// Uniform random unit vector.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&z);
        if n > 1e-12 {
            return z.into_iter().map(|v| v / n).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: u64,
}

fn turn(u: &mut [f64], g: &[f64], k: f64) {
    let c = dot(u, g);
    for (ui, gi) in u.iter_mut().zip(g) {
        *ui += k * (gi - c * *ui);
    }
    let n = norm(u);
    if n > 0.0 {
        u.iter_mut().for_each(|v| *v /= n);
    }
}

/// Follows a geodesic of the conformal metric `e^{2αφ} I` from `x0` along
/// `v0` and returns its highest-`φ` point (the latest one on ties).
///
/// In arc length the geodesic obeys `x' = u`, `u' = α (I - u uᵀ) ∇φ`, so it
/// bends toward increasing `φ` and is a straight line where `∇φ = 0`. Each
/// step turns `u` by half a step, moves `x` by `h`, then turns again.
pub fn geodesic_start_proposal<F>(
    phi: F,
    x0: &[f64],
    v0: &[f64],
    steps: usize,
    h: f64,
    alpha: f64,
    bounds: Option<&SearchBox>,
) -> GeodesicResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let n0 = norm(v0);
    let mut u: Vec<f64> = v0.iter().map(|v| v / n0).collect();
    let (mut f, mut g) = phi(&x);
    let mut evaluations = 1;
    let mut best = GeodesicResult {
        point: x.clone(),
        value: f,
        evaluations: 0,
    };
    if !f.is_finite() {
        best.evaluations = evaluations;
        return best;
    }
    for _ in 0..steps {
        turn(&mut u, &g, 0.5 * h * alpha);
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += h * ui;
        }
        if let Some(b) = bounds {
            b.reflect(&mut x, &mut u);
        }
        let (nf, ng) = phi(&x);
        evaluations += 1;
        if !nf.is_finite() || ng.iter().any(|v| !v.is_finite()) {
            break;
        }
        f = nf;
        g = ng;
        if f >= best.value {
            best.point.clone_from(&x);
            best.value = f;
        }
        turn(&mut u, &g, 0.5 * h * alpha);
    }
    best.evaluations = evaluations;
    best
}

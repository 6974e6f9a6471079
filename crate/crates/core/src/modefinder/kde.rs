use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{log_sum_exp, Cholesky, Mat, NumericsError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian kernel density estimate with one shared bandwidth matrix.
#[derive(Clone, Debug)]
pub struct KdeModel {
    centers: Vec<Vec<f64>>,
    bandwidth: Mat,
    chol: Cholesky,
    log_norm: f64,
}

impl KdeModel {
    pub fn new(centers: Vec<Vec<f64>>, bandwidth: Mat) -> Result<Self, NumericsError> {
        assert!(!centers.is_empty(), "KDE needs at least one center");
        let d = centers[0].len();
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(NumericsError::DimensionMismatch { expected: d, got: c.len() });
        }
        if bandwidth.dim() != d {
            return Err(NumericsError::DimensionMismatch {
                expected: d,
                got: bandwidth.dim(),
            });
        }
        let chol = Cholesky::new(&bandwidth)?;
        let log_norm = -0.5 * d as f64 * LN_2PI - 0.5 * chol.log_det() - (centers.len() as f64).ln();
        Ok(Self {
            centers,
            bandwidth,
            chol,
            log_norm,
        })
    }

    /// Silverman's rule: `H = (4/(D+2))^{2/(D+4)} n^{-2/(D+4)} Σ̂`.
    pub fn silverman(samples: Vec<Vec<f64>>) -> Result<Self, NumericsError> {
        let n = samples.len();
        let d = samples[0].len();
        let cov = sample_covariance(&samples);
        let factor = (4.0 / (d as f64 + 2.0)).powf(2.0 / (d as f64 + 4.0)) * (n as f64).powf(-2.0 / (d as f64 + 4.0));
        let h = cov.scaled(factor);
        let (chol, jitter) = Cholesky::with_jitter(&h)?;
        let mut h = h;
        if jitter > 0.0 {
            h.add_diagonal(jitter);
        }
        let log_norm = -0.5 * d as f64 * LN_2PI - 0.5 * chol.log_det() - (n as f64).ln();
        Ok(Self {
            centers: samples,
            bandwidth: h,
            chol,
            log_norm,
        })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidth(&self) -> &Mat {
        &self.bandwidth
    }

    fn kernel_logs(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut logs = Vec::with_capacity(self.centers.len());
        let mut zs = Vec::with_capacity(self.centers.len());
        for c in &self.centers {
            let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
            let z = self.chol.solve_lower(&diff);
            logs.push(self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>());
            zs.push(z);
        }
        (logs, zs)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.kernel_logs(x).0)
    }

    /// Log-density and its gradient.
    pub fn log_density_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (logs, zs) = self.kernel_logs(x);
        let total = log_sum_exp(&logs);
        let mut g = vec![0.0; x.len()];
        for (l, z) in logs.iter().zip(&zs) {
            let r = (l - total).exp();
            if r == 0.0 {
                continue;
            }
            let pull = self.chol.solve_upper(z);
            for (gi, pi) in g.iter_mut().zip(pull) {
                *gi -= r * pi;
            }
        }
        (total, g)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.random_range(0..self.centers.len());
        let z: Vec<f64> = (0..self.bandwidth.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let lz = self.chol.mul_lower(&z);
        self.centers[i].iter().zip(lz).map(|(c, v)| c + v).collect()
    }
}

/// Unbiased sample covariance.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Mat {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i] / n as f64;
        }
    }
    let mut c = Mat::zeros(d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    c.scaled(1.0 / (n.max(2) - 1) as f64)
}

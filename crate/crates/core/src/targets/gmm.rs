use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Moments, Target, TargetError};
use crate::numerics::{distance, log_sum_exp, Cholesky, Mat};
use crate::textfmt;

/// Side of the hypercube the benchmark generator draws means from, before
/// rescaling for separation.
pub const GENERATOR_BASE_SIDE: f64 = 10.0;

/// Minimum pairwise mean separation in units of the largest component
/// standard deviation.
const SEPARATION_SIGMAS: f64 = 8.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    Equal,
    /// `w_k ∝ k / K`
    Proportional,
}

impl WeightScheme {
    pub fn weights(self, k: usize) -> Vec<f64> {
        match self {
            WeightScheme::Equal => vec![1.0 / k as f64; k],
            WeightScheme::Proportional => {
                let total = (k * (k + 1)) as f64 / 2.0;
                (1..=k).map(|i| i as f64 / total).collect()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Mat>,
    factors: Vec<Cholesky>,
    /// `log w_k - D/2 log 2π - 1/2 log|Σ_k|`
    log_norms: Vec<f64>,
    moments: Moments,
    generator_box: Option<(f64, f64)>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Mat>) -> Result<Self, TargetError> {
        let k = weights.len();
        if k == 0 {
            return Err(TargetError::Invalid("mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(TargetError::Invalid("weights, means and covariances differ in length".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(TargetError::Invalid("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TargetError::Invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let d = means[0].len();
        if d == 0 {
            return Err(TargetError::Invalid("dimension must be at least 1".into()));
        }
        let mut factors = Vec::with_capacity(k);
        let mut log_norms = Vec::with_capacity(k);
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != d || c.dim() != d {
                return Err(TargetError::DimensionMismatch {
                    expected: d,
                    got: if m.len() != d { m.len() } else { c.dim() },
                });
            }
            if !c.is_symmetric(1e-12) {
                return Err(TargetError::Invalid(format!("covariance {i} is not symmetric")));
            }
            let f = Cholesky::new(c).map_err(|e| TargetError::Invalid(format!("covariance {i}: {e}")))?;
            log_norms.push(weights[i].ln() - 0.5 * d as f64 * LN_2PI - 0.5 * f.log_det());
            factors.push(f);
        }
        let moments = mixture_moments(&weights, &means, &covariances);
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
            log_norms,
            moments,
            generator_box: None,
        })
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; d]], vec![Mat::identity(d)]).expect("valid standard normal")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Mat] {
        &self.covariances
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Hypercube `[lo, hi]^D` the generator drew the means from.
    pub fn generator_box(&self) -> Option<(f64, f64)> {
        self.generator_box
    }

    /// `log w_k + log N(x | μ_k, Σ_k)` for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.factors)
            .zip(&self.log_norms)
            .map(|((m, f), ln)| {
                let diff: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
                let z = f.solve_lower(&diff);
                ln - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            })
            .collect()
    }

    /// Index of the component with the largest responsibility at `x`.
    pub fn dominant_component(&self, x: &[f64]) -> usize {
        let c = self.component_log_densities(x);
        (0..c.len()).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap()
    }

    /// Exact draw from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z: Vec<f64> = (0..self.means[k].len()).map(|_| rng.sample(StandardNormal)).collect();
        let lz = self.factors[k].mul_lower(&z);
        self.means[k].iter().zip(lz).map(|(m, v)| m + v).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[gmm]\n");
        s.push_str(&format!("dimension = {}\n", self.dim()));
        s.push_str(&format!("components = {}\n", self.n_components()));
        s.push_str(&format!("weights = {}\n", textfmt::format_f64_list(&self.weights)));
        for (i, (m, c)) in self.means.iter().zip(&self.covariances).enumerate() {
            s.push_str(&format!("mean.{i} = {}\n", textfmt::format_f64_list(m)));
            s.push_str(&format!("covariance.{i} = {}\n", textfmt::format_f64_list(c.as_slice())));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TargetError> {
        let doc = textfmt::parse(text)?;
        let mut dim = None;
        let mut count = None;
        let mut weights = None;
        let mut means: Vec<Option<Vec<f64>>> = Vec::new();
        let mut covs: Vec<Option<Vec<f64>>> = Vec::new();
        for e in &doc.entries {
            let key = e.key.strip_prefix("gmm.").unwrap_or(&e.key);
            match key {
                "dimension" => dim = Some(textfmt::parse_usize(&e.value, e.line, key)?),
                "components" => {
                    let k = textfmt::parse_usize(&e.value, e.line, key)?;
                    means.resize(k, None);
                    covs.resize(k, None);
                    count = Some(k);
                }
                "weights" => weights = Some(textfmt::parse_f64_list(&e.value, e.line, key)?),
                _ => {
                    let (kind, idx) = key
                        .split_once('.')
                        .ok_or_else(|| textfmt::FormatError::new(e.line, format!("unknown key '{key}'")))?;
                    let idx = textfmt::parse_usize(idx, e.line, key)?;
                    let slot = match kind {
                        "mean" => &mut means,
                        "covariance" => &mut covs,
                        _ => return Err(textfmt::FormatError::new(e.line, format!("unknown key '{key}'")).into()),
                    };
                    if idx >= slot.len() {
                        return Err(textfmt::FormatError::new(e.line, format!("{key}: index beyond 'components'")).into());
                    }
                    slot[idx] = Some(textfmt::parse_f64_list(&e.value, e.line, key)?);
                }
            }
        }
        let d = dim.ok_or_else(|| TargetError::Invalid("missing 'dimension'".into()))?;
        let k = count.ok_or_else(|| TargetError::Invalid("missing 'components'".into()))?;
        let weights = weights.ok_or_else(|| TargetError::Invalid("missing 'weights'".into()))?;
        if weights.len() != k {
            return Err(TargetError::Invalid("'weights' length differs from 'components'".into()));
        }
        let means: Vec<Vec<f64>> = means
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.ok_or_else(|| TargetError::Invalid(format!("missing mean.{i}"))))
            .collect::<Result<_, _>>()?;
        let covs: Vec<Mat> = covs
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let c = c.ok_or_else(|| TargetError::Invalid(format!("missing covariance.{i}")))?;
                if c.len() != d * d {
                    return Err(TargetError::Invalid(format!("covariance.{i} needs {} entries", d * d)));
                }
                Ok(Mat::from_row_major(d, c))
            })
            .collect::<Result<_, _>>()?;
        Self::new(weights, means, covs)
    }
}

fn mixture_moments(weights: &[f64], means: &[Vec<f64>], covs: &[Mat]) -> Moments {
    let d = means[0].len();
    let mut mean = vec![0.0; d];
    for (w, m) in weights.iter().zip(means) {
        for i in 0..d {
            mean[i] += w * m[i];
        }
    }
    let mut second = Mat::zeros(d);
    for ((w, m), c) in weights.iter().zip(means).zip(covs) {
        second = second.plus(&c.plus(&Mat::outer(m, m)).scaled(*w));
    }
    let covariance = second.minus(&Mat::outer(&mean, &mean)).symmetrized();
    Moments { mean, covariance }
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        log_sum_exp(&self.component_log_densities(x))
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>, TargetError> {
        Ok(self.log_density_and_gradient(x)?.1)
    }

    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), TargetError> {
        if x.len() != self.dim() {
            return Err(TargetError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let d = self.dim();
        let mut logs = Vec::with_capacity(self.weights.len());
        let mut pulls = Vec::with_capacity(self.weights.len());
        for ((m, f), ln) in self.means.iter().zip(&self.factors).zip(&self.log_norms) {
            let diff: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
            let z = f.solve_lower(&diff);
            logs.push(ln - 0.5 * z.iter().map(|v| v * v).sum::<f64>());
            // -Σ^{-1}(x - μ)
            pulls.push(f.solve_upper(&z));
        }
        let total = log_sum_exp(&logs);
        let mut grad = vec![0.0; d];
        for (l, p) in logs.iter().zip(&pulls) {
            let r = (l - total).exp();
            if r == 0.0 {
                continue;
            }
            for i in 0..d {
                grad[i] -= r * p[i];
            }
        }
        Ok((total, grad))
    }

    fn reference_moments(&self) -> Option<&Moments> {
        Some(&self.moments)
    }
}

pub fn gmm_log_density(g: &GaussianMixture, x: &[f64]) -> f64 {
    g.log_density(x)
}

/// Seeded benchmark mixture with unit covariances and well-separated means.
///
/// Means are uniform in `[0, GENERATOR_BASE_SIDE]^D`, then the whole cube is
/// scaled about the origin until every pair of means is at least eight
/// standard deviations apart. Scaling about the origin keeps the means in
/// the positive orthant.
pub fn gmm_generate_benchmark(d: usize, k: usize, scheme: WeightScheme, seed: u64) -> Result<GaussianMixture, TargetError> {
    if d < 1 || k < 1 {
        return Err(TargetError::Invalid(format!("benchmark needs D >= 1 and K >= 1 (got D={d}, K={k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..GENERATOR_BASE_SIDE)).collect())
        .collect();
    let covs = vec![Mat::identity(d); k];
    let largest_sd = 1.0;
    let mut min_sep = f64::INFINITY;
    for i in 0..k {
        for j in 0..i {
            min_sep = min_sep.min(distance(&means[i], &means[j]));
        }
    }
    let target_sep = SEPARATION_SIGMAS * largest_sd;
    let factor = if min_sep.is_finite() && min_sep < target_sep {
        // Nudge past the threshold so rounding never leaves a pair short.
        target_sep / min_sep * (1.0 + 1e-12)
    } else {
        1.0
    };
    for m in &mut means {
        for v in m.iter_mut() {
            *v *= factor;
        }
    }
    let mut g = GaussianMixture::new(scheme.weights(k), means, covs)?;
    g.generator_box = Some((0.0, GENERATOR_BASE_SIDE * factor));
    Ok(g)
}

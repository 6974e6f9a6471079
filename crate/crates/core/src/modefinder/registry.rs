use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use super::kde::KdeModel;
use crate::numerics::{distance, log_sum_exp, symmetric_eigenvalues, Cholesky, Mat, NumericsError};
use crate::targets::LOG_ZERO;
use crate::textfmt::{self, FormatError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative floor for the residual objective: `δ = 1e-12 · max_k f(x_k*)`.
pub const DELTA_RELATIVE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Gaussian,
    Kde,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Kde => "kde",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(ModelKind::Gaussian),
            "kde" => Ok(ModelKind::Kde),
            other => Err(format!("unknown model kind '{other}' (expected gaussian or kde)")),
        }
    }
}

/// Normalized density model of one mode.
#[derive(Clone, Debug)]
pub enum ModeModel {
    Gaussian { mean: Vec<f64>, chol: Cholesky, log_norm: f64 },
    Kde(KdeModel),
}

impl ModeModel {
    pub fn gaussian(mean: Vec<f64>, covariance: &Mat) -> Result<Self, NumericsError> {
        let chol = Cholesky::new(covariance)?;
        let log_norm = -0.5 * mean.len() as f64 * LN_2PI - 0.5 * chol.log_det();
        Ok(ModeModel::Gaussian { mean, chol, log_norm })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            ModeModel::Gaussian { mean, chol, log_norm } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let z = chol.solve_lower(&diff);
                log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            }
            ModeModel::Kde(k) => k.log_density(x),
        }
    }

    pub fn log_density_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            ModeModel::Gaussian { mean, chol, log_norm } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let z = chol.solve_lower(&diff);
                let l = log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
                let g = chol.solve_upper(&z).into_iter().map(|v| -v).collect();
                (l, g)
            }
            ModeModel::Kde(k) => k.log_density_and_gradient(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ModeModel::Gaussian { mean, chol, .. } => {
                let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
                let lz = chol.mul_lower(&z);
                mean.iter().zip(lz).map(|(m, v)| m + v).collect()
            }
            ModeModel::Kde(k) => k.sample(rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeRecord {
    /// Discovery order, from 1.
    pub index: usize,
    pub location: Vec<f64>,
    pub covariance: Mat,
    pub kind: ModelKind,
    pub model: ModeModel,
    /// `log f(x*)`
    pub log_peak: f64,
    /// Unnormalized log mass; `exp(log_mass) · model(x)` approximates `f`
    /// near the mode.
    pub log_mass: f64,
    pub gradient_norm: f64,
    /// Clock reading when the record was added.
    pub time: f64,
    /// BFGS calls made up to and including this discovery.
    pub n_bfgs_at_discovery: u64,
}

impl ModeRecord {
    /// Default dedup radius: half the smallest standard deviation of the
    /// mode's covariance.
    pub fn scale_radius(&self) -> f64 {
        let ev = symmetric_eigenvalues(&self.covariance);
        0.5 * ev[0].max(0.0).sqrt()
    }
}

/// Everything one mode search produced, applied with `ModeRegistry::absorb`.
#[derive(Clone, Debug, Default)]
pub struct SearchOutcome {
    pub record: Option<ModeRecord>,
    pub bfgs_calls: u64,
    pub duplicates: u64,
    pub failures: u64,
    /// Objective evaluations spent, the unit of search cost.
    pub evaluations: u64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ModeRegistry {
    records: Vec<ModeRecord>,
    pub n_bfgs: u64,
    pub successes: u64,
    pub duplicates: u64,
    pub failures: u64,
    /// Fixed dedup radius; `None` uses each new mode's scale.
    pub dedup_radius: Option<f64>,
}

impl ModeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dedup_radius(radius: Option<f64>) -> Self {
        Self {
            dedup_radius: radius,
            ..Self::default()
        }
    }

    pub fn records(&self) -> &[ModeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn locations(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.location.clone()).collect()
    }

    /// Normalized mode weights.
    pub fn weights(&self) -> Vec<f64> {
        let logs: Vec<f64> = self.records.iter().map(|r| r.log_mass).collect();
        let total = log_sum_exp(&logs);
        logs.iter().map(|l| (l - total).exp()).collect()
    }

    /// `log δ` for the residual objective; `δ = 1` when empty.
    pub fn log_delta(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let peak = self.records.iter().map(|r| r.log_peak).fold(f64::NEG_INFINITY, f64::max);
        DELTA_RELATIVE.ln() + peak
    }

    /// `log f̂(x)`; `LOG_ZERO` when empty.
    pub fn log_estimate(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.records.iter().map(|r| r.log_mass + r.model.log_density(x)).collect();
        log_sum_exp(&logs)
    }

    /// `log f̂(x)` and `∇ log f̂(x)`.
    pub fn log_estimate_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if self.records.is_empty() {
            return (LOG_ZERO, vec![0.0; x.len()]);
        }
        let parts: Vec<(f64, Vec<f64>)> = self
            .records
            .iter()
            .map(|r| {
                let (l, g) = r.model.log_density_and_gradient(x);
                (r.log_mass + l, g)
            })
            .collect();
        let logs: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let total = log_sum_exp(&logs);
        let mut grad = vec![0.0; x.len()];
        if total.is_finite() {
            for (l, g) in &parts {
                let r = (l - total).exp();
                for (gi, v) in grad.iter_mut().zip(g) {
                    *gi += r * v;
                }
            }
        }
        (total, grad)
    }

    /// Index of the nearest registered mode.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        (0..self.records.len())
            .min_by(|&a, &b| distance(x, &self.records[a].location).total_cmp(&distance(x, &self.records[b].location)))
    }

    /// Whether a mode at `x` with default radius `scale_radius` would
    /// duplicate a registered one.
    pub fn is_duplicate(&self, x: &[f64], scale_radius: f64) -> bool {
        let r = self.dedup_radius.unwrap_or(scale_radius);
        self.records.iter().any(|m| distance(&m.location, x) <= r)
    }

    /// Applies a search outcome. Returns the index of the new mode, if any.
    pub fn absorb(&mut self, outcome: SearchOutcome, time: f64) -> Option<usize> {
        self.n_bfgs += outcome.bfgs_calls;
        self.duplicates += outcome.duplicates;
        self.failures += outcome.failures;
        let mut rec = outcome.record?;
        if self.is_duplicate(&rec.location, rec.scale_radius()) {
            self.duplicates += 1;
            return None;
        }
        self.successes += 1;
        rec.index = self.records.len() + 1;
        rec.time = time;
        rec.n_bfgs_at_discovery = self.n_bfgs;
        self.records.push(rec);
        Some(self.records.len())
    }

    /// Inserts a record as-is. Used by fixtures and by file loading.
    pub fn push_record(&mut self, mut rec: ModeRecord) {
        rec.index = self.records.len() + 1;
        self.records.push(rec);
    }

    /// One line per mode: `index | time | location | weight | kind |
    /// covariance | log_mass | log_peak`, preceded by `# key = value` headers.
    pub fn to_text(&self, header: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s.push_str("# index | time | location | weight | kind | covariance | log_mass | log_peak\n");
        let w = self.weights();
        for (r, wi) in self.records.iter().zip(w) {
            s.push_str(&format!(
                "{} | {} | {} | {} | {} | {} | {} | {}\n",
                r.index,
                r.time,
                textfmt::format_f64_list(&r.location),
                wi,
                r.kind,
                textfmt::format_f64_list(r.covariance.as_slice()),
                r.log_mass,
                r.log_peak,
            ));
        }
        s
    }

    /// Parses the registry file. Mode models are rebuilt as Gaussians from
    /// the stored covariance; the recorded kind is kept as a label.
    pub fn from_text(text: &str) -> Result<(Vec<(String, String)>, ModeRegistry), FormatError> {
        let mut header = Vec::new();
        let mut reg = ModeRegistry::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let f: Vec<&str> = line.split('|').map(str::trim).collect();
            if f.len() != 8 {
                return Err(FormatError::new(line_no, format!("expected 8 '|'-separated fields, got {}", f.len())));
            }
            let time = textfmt::parse_f64(f[1], line_no, "time")?;
            let location = textfmt::parse_f64_list(f[2], line_no, "location")?;
            let kind: ModelKind = f[4].parse().map_err(|e: String| FormatError::new(line_no, e))?;
            let cov = textfmt::parse_f64_list(f[5], line_no, "covariance")?;
            let d = location.len();
            if cov.len() != d * d {
                return Err(FormatError::new(line_no, format!("covariance needs {} entries", d * d)));
            }
            let covariance = Mat::from_row_major(d, cov);
            let log_mass = textfmt::parse_f64(f[6], line_no, "log_mass")?;
            let log_peak = textfmt::parse_f64(f[7], line_no, "log_peak")?;
            let model = ModeModel::gaussian(location.clone(), &covariance)
                .map_err(|e| FormatError::new(line_no, format!("covariance: {e}")))?;
            reg.push_record(ModeRecord {
                index: 0,
                location,
                covariance,
                kind,
                model,
                log_peak,
                log_mass,
                gradient_norm: f64::NAN,
                time,
                n_bfgs_at_discovery: 0,
            });
        }
        Ok((header, reg))
    }
}

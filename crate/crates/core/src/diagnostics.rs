//! Convergence diagnostics against reference moments.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::numerics::Mat;
use crate::targets::Moments;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("reference sum is zero; use the mean-absolute-error fallback")]
    ZeroDenominator,
    #[error("no samples")]
    Empty,
    #[error("dimension mismatch")]
    DimensionMismatch,
}

/// `Σ_d |μ̂_d - μ*_d| / Σ_d μ*_d`
pub fn rem(estimate: &[f64], reference: &[f64]) -> Result<f64, DiagnosticsError> {
    if estimate.len() != reference.len() {
        return Err(DiagnosticsError::DimensionMismatch);
    }
    let denom: f64 = reference.iter().sum();
    if denom == 0.0 {
        return Err(DiagnosticsError::ZeroDenominator);
    }
    let num: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / denom)
}

/// `Σ_ij |σ̂_ij - σ*_ij| / Σ_ij σ*_ij`
pub fn recov(estimate: &Mat, reference: &Mat) -> Result<f64, DiagnosticsError> {
    rem(estimate.as_slice(), reference.as_slice())
}

/// A relative error, or the mean absolute error when the reference sums
/// to zero (`fallback` set).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorValue {
    pub value: f64,
    pub fallback: bool,
}

pub fn relative_or_absolute(estimate: &[f64], reference: &[f64]) -> ErrorValue {
    match rem(estimate, reference) {
        Ok(value) => ErrorValue { value, fallback: false },
        Err(_) => {
            let n = estimate.len().max(1) as f64;
            let value = estimate.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            ErrorValue { value, fallback: true }
        }
    }
}

/// Welford accumulator for mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: Vec<f64>,
    /// Sum of centered outer products.
    m2: Mat,
}

impl RunningMoments {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: Mat::zeros(d),
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let d = self.mean.len();
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            let di = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[(i, j)] += delta[j] * di;
            }
        }
    }

    /// Exact merge of two accumulators.
    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let d = self.mean.len();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            for j in 0..d {
                self.m2[(i, j)] += other.m2[(i, j)] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..d {
            self.mean[i] += delta[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased `(N-1)` covariance; zero with fewer than two samples.
    pub fn covariance(&self) -> Mat {
        if self.n < 2 {
            return Mat::zeros(self.mean.len());
        }
        self.m2.scaled(1.0 / (self.n - 1) as f64).symmetrized()
    }
}

/// `(N₁μ̂₁ + N₂μ̂₂) / (N₁ + N₂)`
pub fn pooled_mean(a: (u64, &[f64]), b: (u64, &[f64])) -> Result<Vec<f64>, DiagnosticsError> {
    let n = a.0 + b.0;
    if n == 0 {
        return Err(DiagnosticsError::Empty);
    }
    if a.0 == 0 {
        return Ok(b.1.to_vec());
    }
    if b.0 == 0 {
        return Ok(a.1.to_vec());
    }
    if a.1.len() != b.1.len() {
        return Err(DiagnosticsError::DimensionMismatch);
    }
    let (na, nb, n) = (a.0 as f64, b.0 as f64, n as f64);
    Ok(a.1.iter().zip(b.1).map(|(x, y)| (na * x + nb * y) / n).collect())
}

/// Moments split by the registry size the samples were drawn under.
#[derive(Clone, Debug, Default)]
pub struct TaggedMoments {
    pub by_tag: BTreeMap<usize, RunningMoments>,
}

impl TaggedMoments {
    pub fn push(&mut self, tag: usize, x: &[f64]) {
        self.by_tag.entry(tag).or_insert_with(|| RunningMoments::new(x.len())).push(x);
    }

    pub fn merge(&mut self, other: &TaggedMoments) {
        for (tag, m) in &other.by_tag {
            match self.by_tag.get_mut(tag) {
                Some(mine) => mine.merge(m),
                None => {
                    self.by_tag.insert(*tag, m.clone());
                }
            }
        }
    }

    fn collect(&self, d: usize, keep: impl Fn(usize) -> bool) -> RunningMoments {
        let mut acc = RunningMoments::new(d);
        for (tag, m) in &self.by_tag {
            if keep(*tag) {
                acc.merge(m);
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub n: u64,
    pub rem: ErrorValue,
    pub recov: ErrorValue,
}

fn estimate(m: &RunningMoments, reference: &Moments) -> Option<Estimate> {
    if m.count() == 0 {
        return None;
    }
    Some(Estimate {
        n: m.count(),
        rem: relative_or_absolute(m.mean(), &reference.mean),
        recov: relative_or_absolute(m.covariance().as_slice(), reference.covariance.as_slice()),
    })
}

/// Errors of the pooled estimate, of samples drawn with the full registry
/// (`k = K`) and of the earlier ones (`k < K`).
#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub full_registry: usize,
    pub pooled: Option<Estimate>,
    pub complete: Option<Estimate>,
    pub partial: Option<Estimate>,
    /// Pooled REM minus `k = K` REM; `None` when either is unavailable.
    pub bias_contribution: Option<f64>,
}

pub fn bias_report(samples: &TaggedMoments, full_registry: usize, reference: &Moments) -> BiasReport {
    let d = reference.mean.len();
    let pooled = estimate(&samples.collect(d, |_| true), reference);
    let complete = estimate(&samples.collect(d, |t| t >= full_registry), reference);
    let partial = estimate(&samples.collect(d, |t| t < full_registry), reference);
    let bias_contribution = match (&pooled, &complete) {
        (Some(p), Some(c)) => Some(p.rem.value - c.rem.value),
        _ => None,
    };
    BiasReport {
        full_registry,
        pooled,
        complete,
        partial,
        bias_contribution,
    }
}

/// The most recent `capacity` samples.
#[derive(Clone, Debug)]
pub struct SampleWindow {
    capacity: usize,
    buf: VecDeque<Vec<f64>>,
}

impl SampleWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(x.to_vec());
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.buf.iter()
    }

    pub fn mean(&self) -> Option<Vec<f64>> {
        let first = self.buf.front()?;
        let mut m = vec![0.0; first.len()];
        for x in &self.buf {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += xi;
            }
        }
        let n = self.buf.len() as f64;
        Some(m.into_iter().map(|v| v / n).collect())
    }
}

pub const WINDOW: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t_seconds: f64,
    pub rem: f64,
    pub recov: f64,
    pub rem_window: f64,
    pub n_bfgs: u64,
    pub modes_found: usize,
}

#[derive(Clone, Debug, Default)]
pub struct DiagnosticsSeries {
    pub records: Vec<DiagnosticsRecord>,
    /// Set when any value used the absolute-error fallback.
    pub fallback: bool,
}

pub const SERIES_HEADER: &str = "t_seconds,rem,recov,rem_window1000,n_bfgs,modes_found";

impl DiagnosticsSeries {
    /// Appends a record; times are forced strictly increasing and
    /// non-finite values are dropped.
    pub fn push(&mut self, mut r: DiagnosticsRecord) -> bool {
        if ![r.t_seconds, r.rem, r.recov, r.rem_window].iter().all(|v| v.is_finite()) {
            return false;
        }
        if let Some(last) = self.records.last() {
            if r.t_seconds <= last.t_seconds {
                r.t_seconds = last.t_seconds.next_up();
            }
        }
        self.records.push(r);
        true
    }

    pub fn last(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SERIES_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{},{}\n",
                r.t_seconds, r.rem, r.recov, r.rem_window, r.n_bfgs, r.modes_found
            ));
        }
        s
    }
}

/// Pooled moments plus the recent-sample window, as the sampler feeds them.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub moments: RunningMoments,
    pub tagged: TaggedMoments,
    pub window: SampleWindow,
}

impl Tracker {
    pub fn new(d: usize) -> Self {
        Self {
            moments: RunningMoments::new(d),
            tagged: TaggedMoments::default(),
            window: SampleWindow::new(WINDOW),
        }
    }

    pub fn push(&mut self, tag: usize, x: &[f64]) {
        self.moments.push(x);
        self.tagged.push(tag, x);
        self.window.push(x);
    }

    /// Current `(rem, recov, window rem)` against `reference`.
    pub fn errors(&self, reference: &Moments) -> Option<(ErrorValue, ErrorValue, ErrorValue)> {
        if self.moments.count() < 2 {
            return None;
        }
        let r = relative_or_absolute(self.moments.mean(), &reference.mean);
        let c = relative_or_absolute(self.moments.covariance().as_slice(), reference.covariance.as_slice());
        let w = relative_or_absolute(&self.window.mean()?, &reference.mean);
        Some((r, c, w))
    }
}

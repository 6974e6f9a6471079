use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Moments, Target, TargetError, LOG_ZERO};
use crate::numerics::Mat;
use crate::textfmt;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Generator retries before giving up on the minimum-observation rule.
const MAX_GENERATOR_TRIES: usize = 10_000;

/// One sensor pair. Indices below `n_sensors` are unknown sensors; indices
/// from `n_sensors` on refer to anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub i: usize,
    pub j: usize,
    /// Measured distance when the pair was observed.
    pub distance: Option<f64>,
}

impl Observation {
    pub fn observed(&self) -> bool {
        self.distance.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct SensorNetwork {
    n_sensors: usize,
    range: f64,
    sigma: f64,
    anchors: Vec<[f64; 2]>,
    pairs: Vec<Observation>,
    support: Option<(f64, f64)>,
    truth: Option<Vec<f64>>,
    reference: Option<Moments>,
}

impl SensorNetwork {
    pub fn new(
        n_sensors: usize,
        range: f64,
        sigma: f64,
        anchors: Vec<[f64; 2]>,
        pairs: Vec<Observation>,
    ) -> Result<Self, TargetError> {
        if n_sensors < 1 || n_sensors + anchors.len() < 2 {
            return Err(TargetError::Invalid("need at least two sensors".into()));
        }
        if !(range > 0.0) || !range.is_finite() {
            return Err(TargetError::Invalid(format!("range must be positive, got {range}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(TargetError::Invalid(format!("sigma must be positive, got {sigma}")));
        }
        let total = n_sensors + anchors.len();
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            if p.i == p.j || p.i >= total || p.j >= total {
                return Err(TargetError::Invalid(format!("bad sensor pair ({}, {})", p.i, p.j)));
            }
            if p.i >= n_sensors && p.j >= n_sensors {
                return Err(TargetError::Invalid(format!("pair ({}, {}) joins two anchors", p.i, p.j)));
            }
            if !seen.insert((p.i.min(p.j), p.i.max(p.j))) {
                return Err(TargetError::Invalid(format!("pair ({}, {}) listed twice", p.i, p.j)));
            }
            if let Some(d) = p.distance {
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(TargetError::Invalid(format!("pair ({}, {}): distance {d}", p.i, p.j)));
                }
            }
        }
        Ok(Self {
            n_sensors,
            range,
            sigma,
            anchors,
            pairs,
            support: None,
            truth: None,
            reference: None,
        })
    }

    /// Uniform prior on `[lo, hi]` for every coordinate.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = Some((lo, hi));
        self
    }

    pub fn with_truth(mut self, truth: Vec<f64>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_reference(mut self, m: Moments) -> Self {
        self.reference = Some(m);
        self
    }

    /// Same data, different likelihood noise.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self, TargetError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(TargetError::Invalid(format!("sigma must be positive, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    pub fn pairs(&self) -> &[Observation] {
        &self.pairs
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    pub fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    /// Number of observed pairs touching unknown sensor `i`.
    pub fn observation_count(&self, i: usize) -> usize {
        self.pairs.iter().filter(|p| p.observed() && (p.i == i || p.j == i)).count()
    }

    fn position<'a>(&'a self, x: &'a [f64], idx: usize) -> [f64; 2] {
        if idx < self.n_sensors {
            [x[2 * idx], x[2 * idx + 1]]
        } else {
            self.anchors[idx - self.n_sensors]
        }
    }

    fn in_support(&self, x: &[f64]) -> bool {
        match self.support {
            Some((lo, hi)) => x.iter().all(|v| *v >= lo && *v <= hi),
            None => true,
        }
    }

    fn pair_log(&self, p: &Observation, r2: f64) -> f64 {
        let s = r2 / (2.0 * self.range * self.range);
        match p.distance {
            None => {
                if s == 0.0 {
                    LOG_ZERO
                } else {
                    (-(-s).exp_m1()).ln()
                }
            }
            Some(d) => {
                let res = d - r2.sqrt();
                -s - 0.5 * (res / self.sigma).powi(2) - self.sigma.ln() - HALF_LN_2PI
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("n_sensors = {}\n", self.n_sensors));
        s.push_str(&format!("range = {}\n", self.range));
        s.push_str(&format!("sigma = {}\n", self.sigma));
        if let Some((lo, hi)) = self.support {
            s.push_str(&format!("support = {lo}, {hi}\n"));
        }
        for a in &self.anchors {
            s.push_str(&format!("anchor = {}, {}\n", a[0], a[1]));
        }
        if let Some(t) = &self.truth {
            s.push_str(&format!("truth = {}\n", textfmt::format_f64_list(t)));
        }
        if let Some(m) = &self.reference {
            s.push_str(&format!("ref_mean = {}\n", textfmt::format_f64_list(&m.mean)));
            s.push_str(&format!("ref_cov = {}\n", textfmt::format_f64_list(m.covariance.as_slice())));
        }
        s.push_str("# i j o d\n");
        for p in &self.pairs {
            match p.distance {
                Some(d) => s.push_str(&format!("{} {} 1 {}\n", p.i, p.j, d)),
                None => s.push_str(&format!("{} {} 0 0\n", p.i, p.j)),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TargetError> {
        let doc = textfmt::parse(text)?;
        let mut n = None;
        let mut range = None;
        let mut sigma = None;
        let mut support = None;
        let mut anchors = Vec::new();
        let mut truth = None;
        let mut ref_mean = None;
        let mut ref_cov = None;
        for e in &doc.entries {
            let key = e.key.strip_prefix("sensor.").unwrap_or(&e.key);
            match key {
                "n_sensors" => n = Some(textfmt::parse_usize(&e.value, e.line, key)?),
                "range" => range = Some(textfmt::parse_f64(&e.value, e.line, key)?),
                "sigma" => sigma = Some(textfmt::parse_f64(&e.value, e.line, key)?),
                "support" | "anchor" => {
                    let v = textfmt::parse_f64_list(&e.value, e.line, key)?;
                    if v.len() != 2 {
                        return Err(textfmt::FormatError::new(e.line, format!("{key}: expected two numbers")).into());
                    }
                    if key == "support" {
                        support = Some((v[0], v[1]));
                    } else {
                        anchors.push([v[0], v[1]]);
                    }
                }
                "truth" => truth = Some(textfmt::parse_f64_list(&e.value, e.line, key)?),
                "ref_mean" => ref_mean = Some(textfmt::parse_f64_list(&e.value, e.line, key)?),
                "ref_cov" => ref_cov = Some(textfmt::parse_f64_list(&e.value, e.line, key)?),
                _ => return Err(textfmt::FormatError::new(e.line, format!("unknown key '{key}'")).into()),
            }
        }
        let mut pairs = Vec::with_capacity(doc.rows.len());
        for row in &doc.rows {
            if row.fields.len() != 4 {
                return Err(textfmt::FormatError::new(row.line, "expected 'i j o d'").into());
            }
            let i = textfmt::parse_usize(&row.fields[0], row.line, "i")?;
            let j = textfmt::parse_usize(&row.fields[1], row.line, "j")?;
            let o = textfmt::parse_usize(&row.fields[2], row.line, "o")?;
            let d = textfmt::parse_f64(&row.fields[3], row.line, "d")?;
            let distance = match o {
                0 => None,
                1 => Some(d),
                _ => return Err(textfmt::FormatError::new(row.line, "o must be 0 or 1").into()),
            };
            pairs.push(Observation { i, j, distance });
        }
        let n = n.ok_or_else(|| TargetError::Invalid("missing 'n_sensors'".into()))?;
        let range = range.ok_or_else(|| TargetError::Invalid("missing 'range'".into()))?;
        let sigma = sigma.ok_or_else(|| TargetError::Invalid("missing 'sigma'".into()))?;
        let mut net = Self::new(n, range, sigma, anchors, pairs)?;
        net.support = support;
        let d = 2 * n;
        if let Some(t) = truth {
            if t.len() != d {
                return Err(TargetError::Invalid(format!("truth needs {d} entries")));
            }
            net.truth = Some(t);
        }
        match (ref_mean, ref_cov) {
            (Some(m), Some(c)) => {
                if m.len() != d || c.len() != d * d {
                    return Err(TargetError::Invalid("reference moments have the wrong size".into()));
                }
                net.reference = Some(Moments {
                    mean: m,
                    covariance: Mat::from_row_major(d, c),
                });
            }
            (None, None) => {}
            _ => return Err(TargetError::Invalid("ref_mean and ref_cov must come together".into())),
        }
        Ok(net)
    }
}

impl Target for SensorNetwork {
    fn dim(&self) -> usize {
        2 * self.n_sensors
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        if !self.in_support(x) {
            return LOG_ZERO;
        }
        let mut total = 0.0;
        for p in &self.pairs {
            let a = self.position(x, p.i);
            let b = self.position(x, p.j);
            let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let v = self.pair_log(p, r2);
            if v == LOG_ZERO {
                return LOG_ZERO;
            }
            total += v;
        }
        total
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>, TargetError> {
        if x.len() != self.dim() {
            return Err(TargetError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let inv_r2 = 1.0 / (self.range * self.range);
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let mut g = vec![0.0; x.len()];
        for p in &self.pairs {
            let a = self.position(x, p.i);
            let b = self.position(x, p.j);
            let diff = [a[0] - b[0], a[1] - b[1]];
            let r2 = diff[0] * diff[0] + diff[1] * diff[1];
            let coef = match p.distance {
                None => {
                    let s = 0.5 * r2 * inv_r2;
                    if s == 0.0 {
                        return Err(TargetError::ZeroDensity);
                    }
                    inv_r2 / s.exp_m1()
                }
                Some(d) => {
                    let r = r2.sqrt();
                    // (d - r)/r is singular at coincidence; the gradient of the
                    // residual term has no defined direction there.
                    let pull = if r > 0.0 { (d - r) * inv_s2 / r } else { 0.0 };
                    -inv_r2 + pull
                }
            };
            if p.i < self.n_sensors {
                g[2 * p.i] += coef * diff[0];
                g[2 * p.i + 1] += coef * diff[1];
            }
            if p.j < self.n_sensors {
                g[2 * p.j] -= coef * diff[0];
                g[2 * p.j + 1] -= coef * diff[1];
            }
        }
        Ok(g)
    }

    fn reference_moments(&self) -> Option<&Moments> {
        self.reference.as_ref()
    }
}

pub fn sensor_log_density(s: &SensorNetwork, x: &[f64]) -> Result<f64, TargetError> {
    if x.len() != s.dim() {
        return Err(TargetError::DimensionMismatch {
            expected: s.dim(),
            got: x.len(),
        });
    }
    Ok(s.log_density(x))
}

/// Parameters of a random sensor instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub n_sensors: usize,
    pub range: f64,
    /// Measurement noise used when drawing distances.
    pub sigma: f64,
    /// Known sensors added on top of `n_sensors`.
    pub anchors: usize,
    pub support: Option<(f64, f64)>,
    /// Redraw until every unknown sensor has this many observed pairs.
    pub min_observations: usize,
}

impl SensorSpec {
    pub fn plain(n_sensors: usize, range: f64, sigma: f64) -> Self {
        Self {
            n_sensors,
            range,
            sigma,
            anchors: 0,
            support: None,
            min_observations: 0,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<SensorNetwork, TargetError> {
        if self.n_sensors + self.anchors < 2 || self.n_sensors < 1 {
            return Err(TargetError::Invalid("need at least two sensors".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(TargetError::Invalid(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_GENERATOR_TRIES {
            let net = self.draw(&mut rng)?;
            if (0..self.n_sensors).all(|i| net.observation_count(i) >= self.min_observations) {
                return Ok(net);
            }
        }
        Err(TargetError::Invalid(format!(
            "no instance with {} observations per sensor after {MAX_GENERATOR_TRIES} draws",
            self.min_observations
        )))
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<SensorNetwork, TargetError> {
        let total = self.n_sensors + self.anchors;
        let pos: Vec<[f64; 2]> = (0..total).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let mut pairs = Vec::new();
        for i in 0..total {
            for j in 0..i {
                if i >= self.n_sensors && j >= self.n_sensors {
                    continue;
                }
                let r2 = (pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2);
                let p_obs = (-r2 / (2.0 * self.range * self.range)).exp();
                let u: f64 = rng.random();
                let distance = if u < p_obs {
                    let z: f64 = rng.sample(StandardNormal);
                    // A negative measured distance has zero likelihood mass
                    // near it; fold it back.
                    Some((r2.sqrt() + self.sigma * z).abs())
                } else {
                    None
                };
                pairs.push(Observation { i, j, distance });
            }
        }
        // The stored noise must be positive for the likelihood; σ = 0 draws
        // exact distances and keeps a tiny likelihood width.
        let sigma = if self.sigma > 0.0 { self.sigma } else { f64::MIN_POSITIVE.sqrt() };
        let truth: Vec<f64> = pos[..self.n_sensors].iter().flat_map(|p| [p[0], p[1]]).collect();
        let mut net = SensorNetwork::new(self.n_sensors, self.range, sigma, pos[self.n_sensors..].to_vec(), pairs)?
            .with_truth(truth);
        net.support = self.support;
        Ok(net)
    }
}

/// Random instance with truth uniform in the unit square, no anchors and
/// no prior support.
pub fn sensor_generate_instance(n_sensors: usize, range: f64, sigma: f64, seed: u64) -> Result<SensorNetwork, TargetError> {
    SensorSpec::plain(n_sensors, range, sigma).generate(seed)
}

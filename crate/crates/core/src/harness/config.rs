//! Experiment configuration: parsing, validation, serialization.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::modefinder::ModelKind;
use crate::regeneration::{ClockKind, SamplerKind, ScheduleMode, SearchLatency};
use crate::targets::WeightScheme;
use crate::textfmt::{self, Entry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {key}: {message}")]
    Key { key: String, line: usize, message: String },
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error(transparent)]
    Format(#[from] textfmt::FormatError),
}

fn key_err(e: &Entry, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: e.key.clone(),
        line: e.line,
        message: message.into(),
    }
}

/// What to sample.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    /// `gmm-d<D>-k<K>-<equal|prop>`
    Gmm { d: usize, k: usize, scheme: WeightScheme },
    /// `sensor-ns<N>`
    Sensor { n: usize },
    /// `file:<path>`, a mixture or sensor file.
    File(PathBuf),
}

impl FromStr for TargetSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(p) = s.strip_prefix("file:") {
            if p.is_empty() {
                return Err("empty file path".into());
            }
            return Ok(Self::File(PathBuf::from(p)));
        }
        if let Some(rest) = s.strip_prefix("sensor-ns") {
            let n: usize = rest.parse().map_err(|_| format!("bad sensor count in '{s}'"))?;
            if n < 1 {
                return Err("sensor count must be at least 1".into());
            }
            return Ok(Self::Sensor { n });
        }
        if let Some(rest) = s.strip_prefix("gmm-d") {
            let parts: Vec<&str> = rest.split('-').collect();
            if let [d, k, scheme] = parts[..] {
                let d: usize = d.parse().map_err(|_| format!("bad dimension in '{s}'"))?;
                let k: usize = k
                    .strip_prefix('k')
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| format!("bad component count in '{s}'"))?;
                let scheme = match scheme {
                    "equal" => WeightScheme::Equal,
                    "prop" => WeightScheme::Proportional,
                    other => return Err(format!("unknown weight scheme '{other}' (equal, prop)")),
                };
                if d < 1 || k < 1 {
                    return Err("dimension and component count must be positive".into());
                }
                return Ok(Self::Gmm { d, k, scheme });
            }
        }
        Err(format!("unknown target '{s}' (gmm-d<D>-k<K>-<equal|prop>, sensor-ns<N>, file:<path>)"))
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gmm { d, k, scheme } => {
                let s = match scheme {
                    WeightScheme::Equal => "equal",
                    WeightScheme::Proportional => "prop",
                };
                write!(f, "gmm-d{d}-k{k}-{s}")
            }
            Self::Sensor { n } => write!(f, "sensor-ns{n}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcSection {
    pub step_size: f64,
    pub steps: usize,
    pub jitter: f64,
    pub tune: bool,
    pub tune_goal: f64,
    pub tune_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WormholeSection {
    pub influence: f64,
    pub eps_w: f64,
    pub jump_prob: f64,
    pub logdet: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeFinderSection {
    pub alpha: Option<f64>,
    pub steps: usize,
    pub h: Option<f64>,
    pub restarts: usize,
    pub budget: usize,
    pub delta: Option<f64>,
    pub dedup_radius: Option<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub model: ModelKind,
    pub kde_samples: usize,
    pub max_modes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub target_seed: u64,
    pub seed: u64,
    pub name: Option<String>,
    pub sampler: SamplerKind,
    pub schedule: ScheduleMode,
    pub period: usize,
    pub search_latency: SearchLatency,
    pub chains: usize,
    pub samples: usize,
    pub warmup: usize,
    pub budget_seconds: Option<f64>,
    pub output: PathBuf,
    pub workers: usize,
    pub clock: ClockKind,
    pub record_every: usize,
    pub reference_samples: usize,
    pub hmc: HmcSection,
    pub wormhole: WormholeSection,
    pub modefinder: ModeFinderSection,
    pub regeneration: bool,
    pub c_window: usize,
}

impl ExperimentConfig {
    pub fn new(target: TargetSpec) -> Self {
        Self {
            target,
            target_seed: 1,
            seed: 1,
            name: None,
            sampler: SamplerKind::Whmc,
            schedule: ScheduleMode::OnTheFly,
            period: 100,
            search_latency: SearchLatency::Work,
            chains: 4,
            samples: 20_000,
            warmup: 200,
            budget_seconds: None,
            output: PathBuf::from("out"),
            workers: 0,
            clock: ClockKind::Logical,
            record_every: 100,
            reference_samples: 1_000_000,
            hmc: HmcSection {
                step_size: 0.25,
                steps: 12,
                jitter: 0.1,
                tune: true,
                tune_goal: 0.65,
                tune_steps: 5000,
            },
            wormhole: WormholeSection {
                influence: 0.1,
                eps_w: crate::wormhole::DEFAULT_EPS_W,
                jump_prob: crate::wormhole::DEFAULT_JUMP_PROB,
                logdet: true,
            },
            modefinder: ModeFinderSection {
                alpha: None,
                steps: 500,
                h: None,
                restarts: 8,
                budget: 3,
                delta: None,
                dedup_radius: None,
                grad_tol: 1e-6,
                max_iter: 1000,
                model: ModelKind::Gaussian,
                kde_samples: 500,
                max_modes: None,
            },
            regeneration: true,
            c_window: 200,
        }
    }

    /// Output file stem without the seed.
    pub fn run_name(&self) -> String {
        match (&self.name, &self.target) {
            (Some(n), _) => n.clone(),
            (None, TargetSpec::File(p)) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into()),
            (None, t) => t.to_string(),
        }
    }
}

/// Every key with its documentation, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("target", "gmm-d<D>-k<K>-<equal|prop>, sensor-ns<N> or file:<path> (required)"),
    ("target_seed", "seed of the generated target instance"),
    ("seed", "sampler seed; chain c uses stream c"),
    ("name", "output file prefix; auto uses the target id"),
    ("sampler", "hmc | whmc"),
    ("schedule", "all-modes-first | on-the-fly | forced-update"),
    ("chains", "parallel chains"),
    ("samples", "retained samples per chain"),
    ("warmup", "discarded steps per chain"),
    ("budget_seconds", "stop when the run clock passes this; none runs to the sample count"),
    ("output", "output directory"),
    ("workers", "worker threads; 0 uses all cores (results do not depend on it)"),
    ("clock", "logical (1 us per density evaluation, reproducible) | wall"),
    ("record_every", "rounds between diagnostics rows"),
    ("reference_samples", "samples in the long run that sets sensor reference moments"),
    ("hmc.step_size", "leapfrog step size, or the tuner's start value"),
    ("hmc.steps", "leapfrog steps per trajectory"),
    ("hmc.jitter", "step size drawn uniformly from eps*(1 +- jitter)"),
    ("hmc.tune", "tune the step size at fixed trajectory length"),
    ("hmc.tune_goal", "target acceptance rate"),
    ("hmc.tune_steps", "tuning budget in transitions"),
    ("wormhole.F", "influence factor of the wormhole mollifier"),
    ("wormhole.eps_w", "metric shrink factor along a wormhole"),
    ("wormhole.jump_prob", "probability of a mode jump attempt per transition"),
    ("wormhole.logdet", "include the metric log-determinant term"),
    ("modefinder.alpha", "geodesic bending strength; auto is 1/D"),
    ("modefinder.steps", "geodesic steps per start proposal"),
    ("modefinder.h", "geodesic step length; auto is box diameter / steps"),
    ("modefinder.restarts", "geodesic launches per attempt"),
    ("modefinder.budget", "attempts per search call"),
    ("modefinder.delta", "residual floor; auto is 1e-12 of the largest peak"),
    ("modefinder.dedup_radius", "duplicate radius; auto is half the mode's smallest scale"),
    ("modefinder.grad_tol", "BFGS gradient tolerance"),
    ("modefinder.max_iter", "BFGS iteration cap"),
    ("modefinder.model", "gaussian | kde"),
    ("modefinder.kde_samples", "local samples behind a KDE mode model"),
    ("modefinder.max_modes", "stop searching at this many modes; none is unlimited"),
    ("regeneration.enabled", "check for regenerations (on-the-fly and forced-update)"),
    ("regeneration.c_window", "samples behind the median that sets c"),
    ("schedule.period", "forced-update: rounds the search worker may stay idle"),
    ("schedule.search_latency", "work (rounds per N_eps search evaluations) | zero"),
];

fn opt_f64(v: Option<f64>) -> String {
    v.map_or("auto".into(), |x| x.to_string())
}

fn sampler_str(k: SamplerKind) -> &'static str {
    match k {
        SamplerKind::Hmc => "hmc",
        SamplerKind::Whmc => "whmc",
    }
}

fn clock_str(k: ClockKind) -> &'static str {
    match k {
        ClockKind::Wall => "wall",
        ClockKind::Logical => "logical",
    }
}

fn latency_str(k: SearchLatency) -> &'static str {
    match k {
        SearchLatency::Work => "work",
        SearchLatency::Zero => "zero",
    }
}

impl ExperimentConfig {
    /// `(key, value)` for every key in `KEYS` order.
    pub fn values(&self) -> Vec<(&'static str, String)> {
        let m = &self.modefinder;
        let vals = vec![
            self.target.to_string(),
            self.target_seed.to_string(),
            self.seed.to_string(),
            self.name.clone().unwrap_or_else(|| "auto".into()),
            sampler_str(self.sampler).into(),
            self.schedule.to_string(),
            self.chains.to_string(),
            self.samples.to_string(),
            self.warmup.to_string(),
            self.budget_seconds.map_or("none".into(), |b| b.to_string()),
            self.output.display().to_string(),
            self.workers.to_string(),
            clock_str(self.clock).into(),
            self.record_every.to_string(),
            self.reference_samples.to_string(),
            self.hmc.step_size.to_string(),
            self.hmc.steps.to_string(),
            self.hmc.jitter.to_string(),
            self.hmc.tune.to_string(),
            self.hmc.tune_goal.to_string(),
            self.hmc.tune_steps.to_string(),
            self.wormhole.influence.to_string(),
            self.wormhole.eps_w.to_string(),
            self.wormhole.jump_prob.to_string(),
            self.wormhole.logdet.to_string(),
            opt_f64(m.alpha),
            m.steps.to_string(),
            opt_f64(m.h),
            m.restarts.to_string(),
            m.budget.to_string(),
            opt_f64(m.delta),
            opt_f64(m.dedup_radius),
            m.grad_tol.to_string(),
            m.max_iter.to_string(),
            m.model.to_string(),
            m.kde_samples.to_string(),
            m.max_modes.map_or("none".into(), |k| k.to_string()),
            self.regeneration.to_string(),
            self.c_window.to_string(),
            self.period.to_string(),
            latency_str(self.search_latency).into(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(vals).collect()
    }

    /// Text that `parse_config` reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.values() {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                out.push_str(&format!("\n[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }
}

/// Defaults with one comment line per key.
pub fn explain_defaults() -> String {
    let cfg = ExperimentConfig::new(TargetSpec::Gmm {
        d: 10,
        k: 5,
        scheme: WeightScheme::Equal,
    });
    let mut out = String::from("# key = default    # meaning\n");
    for ((key, value), (_, doc)) in cfg.values().into_iter().zip(KEYS) {
        let value = if key == "target" { "(required)".to_string() } else { value };
        out.push_str(&format!("{key} = {value}    # {doc}\n"));
    }
    out
}

fn pos_f64(e: &Entry) -> Result<f64, ConfigError> {
    let v = textfmt::parse_f64(&e.value, e.line, &e.key)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(key_err(e, format!("must be positive, got {v}")));
    }
    Ok(v)
}

fn auto_pos_f64(e: &Entry) -> Result<Option<f64>, ConfigError> {
    if e.value == "auto" {
        Ok(None)
    } else {
        pos_f64(e).map(Some)
    }
}

fn unit_f64(e: &Entry, lo_open: bool, hi_open: bool) -> Result<f64, ConfigError> {
    let v = textfmt::parse_f64(&e.value, e.line, &e.key)?;
    let ok = (if lo_open { v > 0.0 } else { v >= 0.0 }) && (if hi_open { v < 1.0 } else { v <= 1.0 });
    if !ok {
        return Err(key_err(e, format!("out of range, got {v}")));
    }
    Ok(v)
}

fn count(e: &Entry, min: usize) -> Result<usize, ConfigError> {
    let v = textfmt::parse_usize(&e.value, e.line, &e.key)?;
    if v < min {
        return Err(key_err(e, format!("must be at least {min}, got {v}")));
    }
    Ok(v)
}

fn choice<T: FromStr>(e: &Entry, allowed: &str) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| key_err(e, format!("expected one of {allowed}, got '{}'", e.value)))
}

/// Parses and validates a config; unspecified keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let doc = textfmt::parse(text)?;
    if let Some(row) = doc.rows.first() {
        return Err(ConfigError::Format(textfmt::FormatError::new(row.line, "expected 'key = value'")));
    }
    let target_entry = doc
        .entries
        .iter()
        .rev()
        .find(|e| e.key == "target")
        .ok_or_else(|| ConfigError::Missing("target".into()))?;
    let target: TargetSpec = target_entry.value.parse().map_err(|m: String| key_err(target_entry, m))?;
    let mut c = ExperimentConfig::new(target);
    for e in &doc.entries {
        apply(&mut c, e)?;
    }
    Ok(c)
}

fn apply(c: &mut ExperimentConfig, e: &Entry) -> Result<(), ConfigError> {
    let m = &mut c.modefinder;
    match e.key.as_str() {
        "target" => {}
        "target_seed" => c.target_seed = textfmt::parse_u64(&e.value, e.line, &e.key)?,
        "seed" => c.seed = textfmt::parse_u64(&e.value, e.line, &e.key)?,
        "name" => {
            if e.value.is_empty() || e.value.contains(['/', '\\']) {
                return Err(key_err(e, "must be a non-empty file name"));
            }
            c.name = (e.value != "auto").then(|| e.value.clone());
        }
        "sampler" => {
            c.sampler = match e.value.as_str() {
                "hmc" => SamplerKind::Hmc,
                "whmc" => SamplerKind::Whmc,
                _ => return Err(key_err(e, format!("expected hmc or whmc, got '{}'", e.value))),
            }
        }
        "schedule" => c.schedule = choice(e, "all-modes-first, on-the-fly, forced-update")?,
        "chains" => c.chains = count(e, 1)?,
        "samples" => c.samples = count(e, 1)?,
        "warmup" => c.warmup = count(e, 0)?,
        "budget_seconds" => c.budget_seconds = if e.value == "none" { None } else { Some(pos_f64(e)?) },
        "output" => {
            if e.value.is_empty() {
                return Err(key_err(e, "empty path"));
            }
            c.output = PathBuf::from(&e.value);
        }
        "workers" => c.workers = count(e, 0)?,
        "clock" => {
            c.clock = match e.value.as_str() {
                "wall" => ClockKind::Wall,
                "logical" => ClockKind::Logical,
                _ => return Err(key_err(e, format!("expected wall or logical, got '{}'", e.value))),
            }
        }
        "record_every" => c.record_every = count(e, 1)?,
        "reference_samples" => c.reference_samples = count(e, 1)?,
        "hmc.step_size" => c.hmc.step_size = pos_f64(e)?,
        "hmc.steps" => c.hmc.steps = count(e, 1)?,
        "hmc.jitter" => c.hmc.jitter = unit_f64(e, false, true)?,
        "hmc.tune" => c.hmc.tune = textfmt::parse_bool(&e.value, e.line, &e.key)?,
        "hmc.tune_goal" => c.hmc.tune_goal = unit_f64(e, true, true)?,
        "hmc.tune_steps" => c.hmc.tune_steps = count(e, 1)?,
        "wormhole.F" => c.wormhole.influence = pos_f64(e)?,
        "wormhole.eps_w" => c.wormhole.eps_w = unit_f64(e, true, false)?,
        "wormhole.jump_prob" => c.wormhole.jump_prob = unit_f64(e, false, false)?,
        "wormhole.logdet" => c.wormhole.logdet = textfmt::parse_bool(&e.value, e.line, &e.key)?,
        "modefinder.alpha" => m.alpha = auto_pos_f64(e)?,
        "modefinder.steps" => m.steps = count(e, 1)?,
        "modefinder.h" => m.h = auto_pos_f64(e)?,
        "modefinder.restarts" => m.restarts = count(e, 1)?,
        "modefinder.budget" => m.budget = count(e, 1)?,
        "modefinder.delta" => m.delta = auto_pos_f64(e)?,
        "modefinder.dedup_radius" => m.dedup_radius = auto_pos_f64(e)?,
        "modefinder.grad_tol" => m.grad_tol = pos_f64(e)?,
        "modefinder.max_iter" => m.max_iter = count(e, 1)?,
        "modefinder.model" => m.model = choice(e, "gaussian, kde")?,
        "modefinder.kde_samples" => m.kde_samples = count(e, 2)?,
        "modefinder.max_modes" => m.max_modes = if e.value == "none" { None } else { Some(count(e, 1)?) },
        "regeneration.enabled" => c.regeneration = textfmt::parse_bool(&e.value, e.line, &e.key)?,
        "regeneration.c_window" => c.c_window = count(e, 1)?,
        "schedule.period" => c.period = count(e, 1)?,
        "schedule.search_latency" => {
            c.search_latency = match e.value.as_str() {
                "work" => SearchLatency::Work,
                "zero" => SearchLatency::Zero,
                _ => return Err(key_err(e, format!("expected work or zero, got '{}'", e.value))),
            }
        }
        _ => return Err(key_err(e, "unknown key")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config("target = gmm-d10-k5-equal\nseed = 7\n").unwrap();
        let mut expect = ExperimentConfig::new("gmm-d10-k5-equal".parse().unwrap());
        expect.seed = 7;
        assert_eq!(c, expect);
    }

    #[test]
    fn dotted_and_sectioned_keys() {
        let a = parse_config("target = sensor-ns3\nwormhole.F = 0.1\n").unwrap();
        let b = parse_config("target = sensor-ns3\n[wormhole]\nF = 0.1\n").unwrap();
        assert_eq!(a.wormhole.influence, 0.1);
        assert_eq!(a, b);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("target = sensor-ns3\n\nwormhole.F = -1\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("wormhole.F") && msg.contains("line 3"), "{msg}");
        let e = parse_config("target = sensor-ns3\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"));
        assert_eq!(parse_config("seed = 1\n").unwrap_err(), ConfigError::Missing("target".into()));
        assert!(parse_config("target = gmm-d0-k5-equal\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new("file:some/where.txt".parse().unwrap());
        c.modefinder.alpha = Some(0.3);
        c.budget_seconds = Some(12.5);
        c.hmc.step_size = 0.1 + 0.2;
        c.name = Some("x".into());
        c.modefinder.max_modes = Some(4);
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn explain_covers_every_key() {
        let text = explain_defaults();
        for (k, _) in KEYS {
            assert!(text.contains(&format!("{k} = ")), "{k}");
        }
    }
}

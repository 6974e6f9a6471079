use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::diagnostics::bias_report;
use crate::harness::config::{ExperimentConfig, TargetSpec};
use crate::hmc::HmcParams;
use crate::modefinder::{audit_csv, fictitious_mode_audit, ModeFinderConfig, ModeRegistry, SearchBox};
use crate::regeneration::{
    regeneration_csv, run_sampler, ClockKind, RunOutput, SamplerConfig, SamplerKind, Schedule, ScheduleMode, TuneSettings,
    WormholeParams,
};
use crate::targets::{gmm_generate_benchmark, AnyTarget, GaussianMixture, Moments, SensorNetwork, SensorSpec, Target};

pub const SENSOR_RANGE: f64 = 0.3;
pub const SENSOR_SIGMA: f64 = 0.02;
pub const SENSOR_ANCHORS: usize = 3;
pub const SENSOR_SUPPORT: (f64, f64) = (-0.5, 1.5);
/// Padding of the mixture search box, as a fraction of the generator side.
pub const BOX_PADDING: f64 = 0.2;
const REFERENCE_WARMUP: usize = 1000;
const REFERENCE_STREAM_OFFSET: u64 = 0x5eed_0000;

pub fn sensor_spec(n: usize) -> SensorSpec {
    SensorSpec {
        n_sensors: n,
        range: SENSOR_RANGE,
        sigma: SENSOR_SIGMA,
        anchors: SENSOR_ANCHORS,
        support: Some(SENSOR_SUPPORT),
        min_observations: 2,
    }
}

fn mixture_box(g: &GaussianMixture) -> SearchBox {
    let d = g.dim();
    if let Some((lo, hi)) = g.generator_box() {
        return SearchBox::inflated_cube(d, lo, hi, BOX_PADDING);
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (m, c) in g.means().iter().zip(g.covariances()) {
        for i in 0..d {
            let s = 5.0 * c[(i, i)].sqrt();
            lo[i] = lo[i].min(m[i] - s);
            hi[i] = hi[i].max(m[i] + s);
        }
    }
    SearchBox { lo, hi }
}

fn sensor_box(s: &SensorNetwork) -> SearchBox {
    let (lo, hi) = s.support().unwrap_or(SENSOR_SUPPORT);
    SearchBox::cube(s.dim(), lo, hi)
}

/// The target without reference moments for sensors, plus its search box.
pub fn build_target(spec: &TargetSpec, target_seed: u64) -> Result<(AnyTarget, SearchBox)> {
    Ok(match spec {
        TargetSpec::Gmm { d, k, scheme } => {
            let g = gmm_generate_benchmark(*d, *k, *scheme, target_seed)?;
            let b = mixture_box(&g);
            (AnyTarget::Gmm(g), b)
        }
        TargetSpec::Sensor { n } => {
            let s = sensor_spec(*n).generate(target_seed)?;
            let b = sensor_box(&s);
            (AnyTarget::Sensor(s), b)
        }
        TargetSpec::File(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading target file {}", path.display()))?;
            if text.lines().any(|l| l.trim() == "[gmm]") {
                let g = GaussianMixture::from_text(&text)?;
                let b = mixture_box(&g);
                (AnyTarget::Gmm(g), b)
            } else {
                let s = SensorNetwork::from_text(&text)?;
                let b = sensor_box(&s);
                (AnyTarget::Sensor(s), b)
            }
        }
    })
}

pub fn sampler_config(cfg: &ExperimentConfig, bounds: SearchBox) -> SamplerConfig {
    let hmc = HmcParams::new(cfg.hmc.step_size, cfg.hmc.steps).with_jitter(cfg.hmc.jitter);
    let m = &cfg.modefinder;
    let mut mf = ModeFinderConfig::new(bounds);
    mf.alpha = m.alpha;
    mf.steps = m.steps;
    mf.h = m.h;
    mf.restarts = m.restarts;
    mf.budget = m.budget;
    mf.delta = m.delta;
    mf.grad_tol = m.grad_tol;
    mf.max_iter = m.max_iter;
    mf.model = m.model;
    mf.kde_samples = m.kde_samples;
    mf.kde_hmc = hmc.clone();
    mf.max_modes = m.max_modes;
    SamplerConfig {
        kind: cfg.sampler,
        schedule: Schedule {
            mode: cfg.schedule,
            period: cfg.period,
            latency: cfg.search_latency,
        },
        hmc,
        tune: cfg.hmc.tune.then_some(TuneSettings {
            goal: cfg.hmc.tune_goal,
            steps: cfg.hmc.tune_steps,
        }),
        wormhole: WormholeParams {
            eps_w: cfg.wormhole.eps_w,
            influence: cfg.wormhole.influence,
            jump_prob: cfg.wormhole.jump_prob,
            logdet: cfg.wormhole.logdet,
        },
        modefinder: mf,
        regeneration: cfg.regeneration,
        c_window: cfg.c_window,
        chains: cfg.chains,
        samples: cfg.samples,
        warmup: cfg.warmup,
        seed: cfg.seed,
        record_every: cfg.record_every,
        budget_seconds: cfg.budget_seconds,
        clock: cfg.clock,
        workers: cfg.workers,
        keep_samples: false,
        dedup_radius: m.dedup_radius,
    }
}

/// Long all-modes-first run on the sensor posterior; depends only on the
/// instance and the sampler settings, not on `seed`.
pub fn sensor_reference(cfg: &ExperimentConfig, s: &SensorNetwork, bounds: SearchBox) -> Result<Moments> {
    let mut rc = sampler_config(cfg, bounds);
    rc.kind = SamplerKind::Whmc;
    rc.schedule.mode = ScheduleMode::AllModesFirst;
    rc.regeneration = false;
    rc.samples = cfg.reference_samples.div_ceil(cfg.chains);
    rc.warmup = REFERENCE_WARMUP;
    rc.seed = cfg.target_seed.wrapping_add(REFERENCE_STREAM_OFFSET);
    rc.budget_seconds = None;
    rc.clock = ClockKind::Logical;
    let out = run_sampler(s, &rc)?;
    Ok(Moments {
        mean: out.tracker.moments.mean().to_vec(),
        covariance: out.tracker.moments.covariance(),
    })
}

/// Builds the target and attaches sensor reference moments, cached next to
/// the outputs.
pub fn prepare_target(cfg: &ExperimentConfig) -> Result<(AnyTarget, SearchBox)> {
    let (target, bounds) = build_target(&cfg.target, cfg.target_seed)?;
    let AnyTarget::Sensor(s) = target else {
        return Ok((target, bounds));
    };
    if s.reference_moments().is_some() {
        return Ok((AnyTarget::Sensor(s), bounds));
    }
    let cache = cfg
        .output
        .join(format!("{}_{}_reference.txt", cfg.target.to_string().replace([':', '/', '\\'], "_"), cfg.target_seed));
    if let Ok(text) = fs::read_to_string(&cache) {
        if let Ok(cached) = SensorNetwork::from_text(&text) {
            if let Some(m) = cached.reference_moments() {
                if cached.dim() == s.dim() {
                    let m = m.clone();
                    return Ok((AnyTarget::Sensor(s.with_reference(m)), bounds));
                }
            }
        }
    }
    let m = sensor_reference(cfg, &s, bounds.clone())?;
    let s = s.with_reference(m);
    fs::write(&cache, s.to_text()).with_context(|| format!("writing {}", cache.display()))?;
    Ok((AnyTarget::Sensor(s), bounds))
}

pub struct Report {
    pub output: RunOutput,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("na".into(), |x| format!("{x}"))
}

fn summary_text(cfg: &ExperimentConfig, target: &dyn Target, out: &RunOutput) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("name", cfg.run_name());
    kv("target", cfg.target.to_string());
    kv("target_seed", cfg.target_seed.to_string());
    kv("seed", cfg.seed.to_string());
    kv("sampler", if cfg.sampler == SamplerKind::Hmc { "hmc".into() } else { "whmc".into() });
    kv("schedule", cfg.schedule.to_string());
    kv("chains", cfg.chains.to_string());
    let last = out.series.last();
    kv("final_rem", fmt_opt(last.map(|r| r.rem)));
    kv("final_recov", fmt_opt(last.map(|r| r.recov)));
    kv("final_rem_window1000", fmt_opt(last.map(|r| r.rem_window)));
    kv("absolute_error_fallback", out.series.fallback.to_string());
    if let Some(reference) = target.reference_moments() {
        let b = bias_report(&out.tracker.tagged, out.registry.len(), reference);
        kv("rem_full_registry_only", fmt_opt(b.complete.as_ref().map(|e| e.rem.value)));
        kv("rem_partial_registry_only", fmt_opt(b.partial.as_ref().map(|e| e.rem.value)));
        kv("samples_partial_registry", b.partial.as_ref().map_or(0, |e| e.n).to_string());
    }
    kv("n_bfgs", out.registry.n_bfgs.to_string());
    kv("modes_found", out.registry.len().to_string());
    kv("searches", out.searches.to_string());
    kv("regenerations", out.regenerations.len().to_string());
    kv("samples_total", out.tracker.moments.count().to_string());
    kv("step_size", out.hmc.step_size.to_string());
    kv("steps", out.hmc.steps.to_string());
    kv(
        "acceptance",
        out.acceptance.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(","),
    );
    kv("work_units", out.work_units.to_string());
    kv("clock_seconds", out.clock_seconds.to_string());
    kv("wall_seconds", format!("{:.3}", out.wall_seconds));
    kv("warnings", out.warnings.len().to_string());
    s
}

pub fn registry_header(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    vec![
        ("target".into(), cfg.target.to_string()),
        ("target_seed".into(), cfg.target_seed.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ]
}

/// Runs one experiment and writes its files into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating output directory {}", cfg.output.display()))?;
    let (target, bounds) = prepare_target(cfg)?;
    let t = target.as_target();
    let sc = sampler_config(cfg, bounds);
    let out = run_sampler(t, &sc)?;

    let stem = format!("{}_{}", cfg.run_name(), cfg.seed);
    let audit = fictitious_mode_audit(t, &out.registry, cfg.modefinder.grad_tol, cfg.modefinder.max_iter);
    let summary = summary_text(cfg, t, &out);
    let files = [
        ("diagnostics.csv", out.series.to_csv()),
        ("regeneration.csv", regeneration_csv(&out.regenerations)),
        ("registry.txt", out.registry.to_text(&registry_header(cfg))),
        ("audit.csv", audit_csv(&audit)),
        ("summary.txt", summary.clone()),
        ("config.txt", cfg.to_text()),
    ];
    let mut written = Vec::new();
    for (suffix, body) in files {
        let path = cfg.output.join(format!("{stem}_{suffix}"));
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(Report {
        output: out,
        files: written,
        summary,
    })
}

/// Re-optimizes every mode of a saved registry against its target.
pub fn audit_registry_file(path: &Path, grad_tol: f64, max_iter: usize) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (header, reg): (_, ModeRegistry) = ModeRegistry::from_text(&text)?;
    let get = |k: &str| header.iter().find(|(h, _)| h == k).map(|(_, v)| v.clone());
    let Some(spec) = get("target") else {
        bail!("{}: no '# target = ...' header", path.display());
    };
    let spec: TargetSpec = spec.parse().map_err(anyhow::Error::msg)?;
    let seed: u64 = match get("target_seed") {
        Some(v) => v.parse().with_context(|| format!("bad target_seed '{v}'"))?,
        None => 1,
    };
    let (target, _) = build_target(&spec, seed)?;
    Ok(audit_csv(&fictitious_mode_audit(target.as_target(), &reg, grad_tol, max_iter)))
}

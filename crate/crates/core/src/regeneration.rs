//! Regeneration times and the multi-chain sampling orchestrator.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{DiagnosticsRecord, DiagnosticsSeries, SampleWindow, Tracker};
use crate::hmc::{hmc_step, tune_step_size, ChainState, HmcParams, StepInfo};
use crate::modefinder::{find_new_mode, ModeFinderConfig, ModeModel, ModeRegistry, SearchOutcome};
use crate::numerics::log_sum_exp;
use crate::targets::{Target, TargetError};
use crate::wormhole::{whmc_step, WormholeNetwork};

/// `r = S(x_t) Q(x_{t+1}) / T(x_{t+1} | x_t)` from densities.
///
/// Returns 0 for any zero or non-finite input.
pub fn regeneration_probability(pi_t: f64, q_t: f64, pi_t1: f64, q_t1: f64, c: f64) -> f64 {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if !(ok(pi_t) && ok(q_t) && ok(pi_t1) && ok(q_t1) && ok(c)) {
        return 0.0;
    }
    regeneration_log_probability(pi_t.ln() - q_t.ln(), pi_t1.ln() - q_t1.ln(), c.ln())
}

/// Same as `regeneration_probability` with `w = π/q` given in logs.
///
/// `S = min{1, c/w_t}`, `Q = q₁ min{1, w₁/c}`, `T = q₁ min{1, w₁/w_t}`;
/// `q₁` cancels.
pub fn regeneration_log_probability(log_w_t: f64, log_w_t1: f64, log_c: f64) -> f64 {
    if !(log_w_t.is_finite() && log_w_t1.is_finite() && log_c.is_finite()) {
        return 0.0;
    }
    let log_s = (log_c - log_w_t).min(0.0);
    let log_q = (log_w_t1 - log_c).min(0.0);
    let log_t = (log_w_t1 - log_w_t).min(0.0);
    let lr = log_s + log_q - log_t;
    if lr >= 0.0 {
        1.0
    } else {
        lr.exp().clamp(0.0, 1.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("independence proposal needs at least one registered mode")]
    EmptyRegistry,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// Mixture of the registered mode models, with the regeneration constant.
#[derive(Clone, Debug)]
pub struct IndependenceProposal {
    log_weights: Vec<f64>,
    models: Vec<ModeModel>,
    pub log_c: f64,
}

impl IndependenceProposal {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.log_weights.iter().zip(&self.models).map(|(w, m)| w + m.log_density(x)).collect();
        log_sum_exp(&logs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.models.len() - 1;
        for (i, w) in self.log_weights.iter().enumerate() {
            acc += w.exp();
            if u < acc {
                k = i;
                break;
            }
        }
        self.models[k].sample(rng)
    }

    /// `log(π(x)/q(x))` given `log π(x)`.
    pub fn log_ratio(&self, log_pi: f64, x: &[f64]) -> f64 {
        log_pi - self.log_density(x)
    }

    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn set_c(&mut self, c: f64) {
        assert!(c > 0.0, "regeneration constant must be positive");
        self.log_c = c.ln();
    }

    /// Sets `c` to the median of `π/q` over `points`.
    pub fn set_c_median(&mut self, target: &dyn Target, points: &[Vec<f64>]) {
        let mut logs: Vec<f64> = points
            .iter()
            .map(|x| self.log_ratio(target.log_density(x), x))
            .filter(|v| v.is_finite())
            .collect();
        if logs.is_empty() {
            return;
        }
        logs.sort_by(f64::total_cmp);
        let n = logs.len();
        self.log_c = if n % 2 == 1 {
            logs[n / 2]
        } else {
            log_sum_exp(&[logs[n / 2 - 1], logs[n / 2]]) - std::f64::consts::LN_2
        };
    }
}

/// Mixture of the registry's models with normalized Laplace weights; `c = 1`.
pub fn build_independence_proposal(reg: &ModeRegistry) -> Result<IndependenceProposal, SamplerError> {
    if reg.is_empty() {
        return Err(SamplerError::EmptyRegistry);
    }
    Ok(IndependenceProposal {
        log_weights: reg.weights().iter().map(|w| w.ln()).collect(),
        models: reg.records().iter().map(|r| r.model.clone()).collect(),
        log_c: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    AllModesFirst,
    OnTheFly,
    ForcedUpdate,
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all-modes-first" => Ok(Self::AllModesFirst),
            "on-the-fly" => Ok(Self::OnTheFly),
            "forced-update" => Ok(Self::ForcedUpdate),
            other => Err(format!("unknown schedule '{other}' (all-modes-first, on-the-fly, forced-update)")),
        }
    }
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AllModesFirst => "all-modes-first",
            Self::OnTheFly => "on-the-fly",
            Self::ForcedUpdate => "forced-update",
        })
    }
}

/// How long a mode search keeps its result from the chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchLatency {
    /// One round per `N_ε` objective evaluations the search spent.
    Work,
    /// Applied at the start of the next round.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    /// Forced-update: the search worker never idles longer than this many rounds.
    pub period: usize,
    pub latency: SearchLatency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Hmc,
    Whmc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockKind {
    Wall,
    /// Objective evaluations times one microsecond; reproducible.
    Logical,
}

pub const LOGICAL_SECONDS_PER_EVALUATION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WormholeParams {
    pub eps_w: f64,
    pub influence: f64,
    pub jump_prob: f64,
    pub logdet: bool,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub schedule: Schedule,
    pub hmc: HmcParams,
    pub tune: Option<TuneSettings>,
    pub wormhole: WormholeParams,
    pub modefinder: ModeFinderConfig,
    pub regeneration: bool,
    /// Samples behind the median that sets `c`.
    pub c_window: usize,
    pub chains: usize,
    /// Retained samples per chain.
    pub samples: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Rounds between diagnostics records.
    pub record_every: usize,
    pub budget_seconds: Option<f64>,
    pub clock: ClockKind,
    /// Worker threads; 0 picks the machine default.
    pub workers: usize,
    pub keep_samples: bool,
    /// Overrides the registry's duplicate radius.
    pub dedup_radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneSettings {
    pub goal: f64,
    pub steps: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let err = |m: String| Err(SamplerError::Config(m));
        self.hmc.validate().map_err(SamplerError::Config)?;
        if self.chains < 1 {
            return err("chains must be at least 1".into());
        }
        if self.schedule.mode == ScheduleMode::ForcedUpdate && self.schedule.period < 1 {
            return err("forced-update needs period >= 1".into());
        }
        if self.record_every < 1 {
            return err("record_every must be at least 1".into());
        }
        if self.c_window < 1 {
            return err("c_window must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegenEvent {
    pub chain: usize,
    pub step: u64,
    pub r: f64,
    pub triggered: bool,
    pub registry_before: usize,
    pub registry_after: usize,
}

pub const REGEN_HEADER: &str = "chain,step,r,triggered,registry_before,registry_after";

pub fn regeneration_csv(events: &[RegenEvent]) -> String {
    let mut s = String::from(REGEN_HEADER);
    s.push('\n');
    for e in events {
        s.push_str(&format!(
            "{},{},{:e},{},{},{}\n",
            e.chain, e.step, e.r, e.triggered as u8, e.registry_before, e.registry_after
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggedSample {
    pub x: Vec<f64>,
    /// Registry size when the sample was drawn.
    pub tag: usize,
}

#[derive(Debug)]
pub struct RunOutput {
    pub samples: Vec<Vec<TaggedSample>>,
    pub tracker: Tracker,
    pub series: DiagnosticsSeries,
    pub registry: ModeRegistry,
    pub regenerations: Vec<RegenEvent>,
    pub acceptance: Vec<f64>,
    pub hmc: HmcParams,
    pub tune_warning: bool,
    /// Searches started after sampling began.
    pub background_searches: Vec<SearchLog>,
    pub searches: usize,
    pub work_units: u64,
    pub wall_seconds: f64,
    /// Clock reading at the end of the run.
    pub clock_seconds: f64,
    pub warnings: Vec<String>,
    pub rounds: u64,
}

/// Rounds at which a background search started and landed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchLog {
    pub start_round: u64,
    pub due_round: u64,
    pub found: bool,
}

struct Pending {
    outcome: SearchOutcome,
    due_round: u64,
    rounds: u64,
    seconds: f64,
    /// Chain paused by this search and its event index.
    trigger: Option<(usize, usize)>,
}

/// Time on the critical path. Background searches are not on it: their
/// wall time is excluded and their work shows up as latency instead.
struct Clock {
    kind: ClockKind,
    start: Instant,
    excluded: f64,
    work: u64,
}

impl Clock {
    fn now(&self) -> f64 {
        match self.kind {
            ClockKind::Wall => self.start.elapsed().as_secs_f64() - self.excluded,
            ClockKind::Logical => self.work as f64 * LOGICAL_SECONDS_PER_EVALUATION,
        }
    }
}

struct RoundResult {
    info: StepInfo,
    evaluations: u64,
    regeneration: Option<f64>,
}

/// Independence-sampler move toward `y ~ q`. On acceptance, regeneration
/// happens with probability `r`.
fn independence_move(state: &mut ChainState, target: &dyn Target, q: &IndependenceProposal) -> (u64, Option<f64>) {
    let y = q.sample(&mut state.rng);
    let u: f64 = state.rng.random();
    let Ok((ly, gy)) = target.log_density_and_gradient(&y) else {
        return (1, None);
    };
    let lw_x = q.log_ratio(state.log_density, &state.x);
    let lw_y = q.log_ratio(ly, &y);
    if !(lw_y.is_finite() && lw_x.is_finite()) || u.ln() >= lw_y - lw_x {
        return (1, None);
    }
    state.x = y;
    state.log_density = ly;
    state.grad = gy;
    let r = regeneration_log_probability(lw_x, lw_y, q.log_c);
    let u2: f64 = state.rng.random();
    (1, (u2 < r).then_some(r))
}

fn draw_start(
    rng: &mut ChaCha8Rng,
    target: &dyn Target,
    proposal: Option<&IndependenceProposal>,
    cfg: &ModeFinderConfig,
) -> Result<Vec<f64>, SamplerError> {
    for _ in 0..10_000 {
        let x = match proposal {
            Some(q) => q.sample(rng),
            None => cfg.bounds.sample(rng),
        };
        if target.log_density_and_gradient(&x).is_ok() {
            return Ok(x);
        }
    }
    Err(SamplerError::Config("no start point with positive density found".into()))
}

struct Orchestrator<'a> {
    target: &'a dyn Target,
    cfg: &'a SamplerConfig,
    registry: ModeRegistry,
    net: WormholeNetwork,
    proposal: Option<IndependenceProposal>,
    c_buffer: SampleWindow,
    search_rng: ChaCha8Rng,
    aux_rng: ChaCha8Rng,
    work: u64,
    clock: Clock,
    searches: usize,
    log: Vec<SearchLog>,
    warnings: Vec<String>,
}

impl Orchestrator<'_> {
    fn rebuild(&mut self) -> Result<(), SamplerError> {
        if self.cfg.kind == SamplerKind::Whmc {
            let w = &self.cfg.wormhole;
            self.net = WormholeNetwork::new(&self.registry.locations(), w.eps_w, w.influence, w.jump_prob, w.logdet)
                .map_err(SamplerError::Config)?;
        }
        if self.registry.is_empty() {
            self.proposal = None;
            return Ok(());
        }
        let mut q = build_independence_proposal(&self.registry)?;
        let points: Vec<Vec<f64>> = if self.c_buffer.is_full() {
            self.c_buffer.iter().cloned().collect()
        } else {
            (0..self.cfg.c_window).map(|_| q.sample(&mut self.aux_rng)).collect()
        };
        self.serial(points.len() as u64);
        q.set_c_median(self.target, &points);
        self.proposal = Some(q);
        Ok(())
    }

    fn serial(&mut self, evaluations: u64) {
        self.work += evaluations;
        self.clock.work += evaluations;
    }

    /// Runs a search now; `background` ones are kept off the clock.
    fn search(&mut self, background: bool) -> (SearchOutcome, f64) {
        self.searches += 1;
        let t0 = Instant::now();
        let out = find_new_mode(self.target, &self.registry, &self.cfg.modefinder, &mut self.search_rng);
        let seconds = t0.elapsed().as_secs_f64();
        self.work += out.evaluations;
        if background {
            self.clock.excluded += seconds;
        } else {
            self.clock.work += out.evaluations;
        }
        self.warnings.extend(out.warnings.iter().cloned());
        (out, seconds)
    }

    fn launch(&mut self, round: u64, trigger: Option<(usize, usize)>) -> Pending {
        let (outcome, seconds) = self.search(true);
        let rounds = self.latency_rounds(&outcome);
        self.log.push(SearchLog {
            start_round: round,
            due_round: round + 1 + rounds,
            found: outcome.record.is_some(),
        });
        Pending {
            outcome,
            due_round: round + 1 + rounds,
            rounds,
            seconds,
            trigger,
        }
    }

    fn absorb(&mut self, out: SearchOutcome) -> Result<bool, SamplerError> {
        let t = self.clock.now();
        let added = self.registry.absorb(out, t).is_some();
        if added {
            self.rebuild()?;
        }
        Ok(added)
    }

    fn latency_rounds(&self, out: &SearchOutcome) -> u64 {
        match self.cfg.schedule.latency {
            SearchLatency::Zero => 0,
            SearchLatency::Work => out.evaluations.div_ceil(self.cfg.hmc.steps.max(1) as u64),
        }
    }
}

/// Runs the configured sampler and schedule.
///
/// Chains advance in lockstep rounds, in parallel, each with its own RNG
/// stream, so results do not depend on the worker count. Mode searches run
/// on one logical worker between rounds; a search's result reaches the
/// chains after a latency proportional to its cost (see `SearchLatency`),
/// and a chain whose regeneration triggered the search waits for it.
pub fn run_sampler(target: &dyn Target, cfg: &SamplerConfig) -> Result<RunOutput, SamplerError> {
    cfg.validate()?;
    let start = Instant::now();
    let d = target.dim();
    let stream_rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(stream);
        r
    };
    let mut orch = Orchestrator {
        target,
        cfg,
        registry: ModeRegistry::new(),
        net: WormholeNetwork::empty(),
        proposal: None,
        c_buffer: SampleWindow::new(cfg.c_window),
        search_rng: stream_rng(u64::MAX - 1),
        aux_rng: stream_rng(u64::MAX - 2),
        work: 0,
        clock: Clock {
            kind: cfg.clock,
            start,
            excluded: 0.0,
            work: 0,
        },
        searches: 0,
        log: Vec::new(),
        warnings: Vec::new(),
    };
    orch.registry.dedup_radius = cfg.dedup_radius;

    let whmc = cfg.kind == SamplerKind::Whmc;
    if whmc {
        match cfg.schedule.mode {
            ScheduleMode::AllModesFirst => {
                for _ in 0..10_000 {
                    let (out, _) = orch.search(false);
                    if !orch.absorb(out)? {
                        break;
                    }
                }
            }
            ScheduleMode::OnTheFly | ScheduleMode::ForcedUpdate => {
                let (out, _) = orch.search(false);
                orch.absorb(out)?;
            }
        }
        orch.rebuild()?;
    }
    let regen_on = whmc && cfg.regeneration && cfg.schedule.mode != ScheduleMode::AllModesFirst;

    let mut chains = Vec::with_capacity(cfg.chains);
    for c in 0..cfg.chains {
        let mut rng = stream_rng(c as u64);
        let x0 = draw_start(&mut rng, target, orch.proposal.as_ref(), &cfg.modefinder)?;
        chains.push(ChainState::with_rng(target, x0, rng)?);
    }

    let mut params = cfg.hmc.clone();
    let mut tune_warning = false;
    if let Some(t) = cfg.tune {
        let res = tune_step_size(target, &params, t.goal, t.steps, &chains[0].x, cfg.seed)?;
        orch.serial(res.steps_used as u64 * res.params.steps as u64);
        tune_warning = !res.in_band;
        if tune_warning {
            orch.warnings.push(format!("step-size tuning ended outside the band (acceptance {:.3})", res.acceptance));
        }
        params = res.params;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SamplerError::Config(format!("thread pool: {e}")))?;

    let reference = target.reference_moments().cloned();
    let mut tracker = Tracker::new(d);
    let mut series = DiagnosticsSeries::default();
    let mut samples: Vec<Vec<TaggedSample>> = vec![Vec::new(); cfg.chains];
    let mut retained = vec![0usize; cfg.chains];
    let mut steps = vec![0u64; cfg.chains];
    let mut events: Vec<RegenEvent> = Vec::new();
    let mut pending: Option<Pending> = None;
    let mut paused: Option<usize> = None;
    let mut idle_since = 0u64;
    let mut round = 0u64;

    let record = |tracker: &Tracker, series: &mut DiagnosticsSeries, t: f64, reg: &ModeRegistry| {
        if let Some(reference) = &reference {
            if let Some((r, c, w)) = tracker.errors(reference) {
                series.fallback |= r.fallback || c.fallback || w.fallback;
                series.push(DiagnosticsRecord {
                    t_seconds: t,
                    rem: r.value,
                    recov: c.value,
                    rem_window: w.value,
                    n_bfgs: reg.n_bfgs,
                    modes_found: reg.len(),
                });
            }
        }
    };

    loop {
        if retained.iter().all(|&n| n >= cfg.samples) {
            break;
        }
        if let Some(b) = cfg.budget_seconds {
            if orch.clock.now() > b {
                break;
            }
        }
        if pending.as_ref().is_some_and(|p| p.due_round <= round) {
            let p = pending.take().unwrap();
            orch.absorb(p.outcome)?;
            if let Some((chain, ev)) = p.trigger {
                events[ev].registry_after = orch.registry.len();
                if paused == Some(chain) {
                    paused = None;
                }
            }
            idle_since = round;
        }
        if whmc && cfg.schedule.mode == ScheduleMode::ForcedUpdate && pending.is_none() && round - idle_since >= cfg.schedule.period as u64 {
            pending = Some(orch.launch(round, None));
        }

        // Nothing can move until the search lands.
        let idle = (0..cfg.chains).all(|c| paused == Some(c) || retained[c] >= cfg.samples);
        if idle {
            if let Some(p) = &pending {
                // The wait is now on the critical path.
                let skipped = p.due_round.saturating_sub(round);
                orch.clock.work += skipped * params.steps as u64;
                if p.rounds > 0 {
                    orch.clock.excluded -= p.seconds * skipped.min(p.rounds) as f64 / p.rounds as f64;
                }
                round = round.max(p.due_round);
                continue;
            }
        }

        let target_ref = target;
        let net = &orch.net;
        let proposal = if regen_on { orch.proposal.as_ref() } else { None };
        let kind = cfg.kind;
        let params_ref = &params;
        let results: Vec<Option<RoundResult>> = pool.install(|| {
            chains
                .par_iter_mut()
                .enumerate()
                .map(|(c, ch)| {
                    if paused == Some(c) || retained[c] >= cfg.samples {
                        return None;
                    }
                    let info = match kind {
                        SamplerKind::Hmc => hmc_step(ch, target_ref, params_ref),
                        SamplerKind::Whmc => whmc_step(ch, target_ref, net, params_ref),
                    };
                    let mut evaluations = info.evaluations;
                    let mut regeneration = None;
                    if let Some(q) = proposal {
                        let (e, r) = independence_move(ch, target_ref, q);
                        evaluations += e;
                        regeneration = r;
                    }
                    Some(RoundResult {
                        info,
                        evaluations,
                        regeneration,
                    })
                })
                .collect()
        });

        let slowest = results.iter().flatten().map(|r| r.evaluations).max().unwrap_or(0);
        orch.clock.work += slowest;
        for (c, res) in results.into_iter().enumerate() {
            let Some(res) = res else { continue };
            let _ = res.info;
            orch.work += res.evaluations;
            steps[c] += 1;
            let tag = orch.registry.len();
            if steps[c] > cfg.warmup as u64 {
                tracker.push(tag, &chains[c].x);
                if cfg.keep_samples {
                    samples[c].push(TaggedSample {
                        x: chains[c].x.clone(),
                        tag,
                    });
                }
                retained[c] += 1;
            }
            orch.c_buffer.push(&chains[c].x);
            if let Some(r) = res.regeneration {
                let triggered = pending.is_none() && orch.cfg.modefinder.max_modes.is_none_or(|m| orch.registry.len() < m);
                events.push(RegenEvent {
                    chain: c,
                    step: steps[c],
                    r,
                    triggered,
                    registry_before: tag,
                    registry_after: tag,
                });
                if triggered {
                    pending = Some(orch.launch(round, Some((c, events.len() - 1))));
                    paused = Some(c);
                }
            }
        }
        round += 1;
        if round % cfg.record_every as u64 == 0 {
            record(&tracker, &mut series, orch.clock.now(), &orch.registry);
        }
    }
    if round % cfg.record_every as u64 != 0 || round == 0 {
        record(&tracker, &mut series, orch.clock.now(), &orch.registry);
    }

    Ok(RunOutput {
        samples,
        tracker,
        series,
        acceptance: chains.iter().map(|c| c.acceptance_rate()).collect(),
        registry: orch.registry,
        regenerations: events,
        hmc: params,
        tune_warning,
        searches: orch.searches,
        background_searches: orch.log,
        work_units: orch.work,
        wall_seconds: start.elapsed().as_secs_f64(),
        clock_seconds: orch.clock.now(),
        warnings: orch.warnings,
        rounds: round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modefinder::SearchBox;
    use crate::targets::{gmm_generate_benchmark, GaussianMixture, WeightScheme};

    #[test]
    fn unit_ratios_give_one() {
        assert_eq!(regeneration_probability(0.3, 0.3, 0.7, 0.7, 1.0), 1.0);
        assert_eq!(regeneration_log_probability(0.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn hand_example() {
        // w_t = 2, w_{t+1} = 0.5, c = 1: S = 1/2, Q/T = (1/2)/(1/4)
        assert!((regeneration_probability(2.0, 1.0, 0.5, 1.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_c_kills_regeneration() {
        let r = regeneration_probability(2.0, 1.0, 1.5, 1.0, 1e-12);
        assert!(r < 1e-11);
        assert_eq!(regeneration_probability(0.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(regeneration_probability(1.0, f64::NAN, 1.0, 1.0, 1.0), 0.0);
    }

    fn config(kind: SamplerKind, mode: ScheduleMode, bounds: SearchBox) -> SamplerConfig {
        SamplerConfig {
            kind,
            schedule: Schedule {
                mode,
                period: 100,
                latency: SearchLatency::Work,
            },
            hmc: HmcParams::new(0.3, 8),
            tune: None,
            wormhole: WormholeParams {
                eps_w: 1e-4,
                influence: 0.1,
                jump_prob: 0.68,
                logdet: true,
            },
            modefinder: ModeFinderConfig::new(bounds),
            regeneration: true,
            c_window: 200,
            chains: 2,
            samples: 300,
            warmup: 20,
            seed: 5,
            record_every: 50,
            budget_seconds: None,
            clock: ClockKind::Logical,
            workers: 2,
            keep_samples: true,
            dedup_radius: None,
        }
    }

    #[test]
    fn plain_hmc_stream_matches_manual_loop() {
        let t = GaussianMixture::standard_normal(3);
        let bounds = SearchBox::cube(3, -2.0, 2.0);
        let cfg = config(SamplerKind::Hmc, ScheduleMode::OnTheFly, bounds.clone());
        let out = run_sampler(&t, &cfg).unwrap();
        for c in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            rng.set_stream(c as u64);
            let x0 = bounds.sample(&mut rng);
            let mut s = ChainState::with_rng(&t, x0, rng).unwrap();
            for _ in 0..20 {
                hmc_step(&mut s, &t, &cfg.hmc);
            }
            for sample in &out.samples[c] {
                hmc_step(&mut s, &t, &cfg.hmc);
                assert_eq!(sample.x, s.x);
            }
        }
        assert!(out.registry.is_empty());
    }

    #[test]
    fn all_modes_first_tags_full_registry() {
        let t = gmm_generate_benchmark(2, 3, WeightScheme::Equal, 2).unwrap();
        let (lo, hi) = t.generator_box().unwrap();
        let cfg = config(SamplerKind::Whmc, ScheduleMode::AllModesFirst, SearchBox::inflated_cube(2, lo, hi, 0.2));
        let out = run_sampler(&t, &cfg).unwrap();
        assert_eq!(out.registry.len(), 3);
        assert!(out.samples.iter().flatten().all(|s| s.tag == 3));
        assert!(out.regenerations.is_empty());
    }

    #[test]
    fn tags_monotone_and_worker_count_irrelevant() {
        let t = gmm_generate_benchmark(2, 3, WeightScheme::Equal, 2).unwrap();
        let (lo, hi) = t.generator_box().unwrap();
        let mut cfg = config(SamplerKind::Whmc, ScheduleMode::OnTheFly, SearchBox::inflated_cube(2, lo, hi, 0.2));
        cfg.samples = 400;
        let a = run_sampler(&t, &cfg).unwrap();
        for chain in &a.samples {
            assert!(chain.windows(2).all(|w| w[0].tag <= w[1].tag));
        }
        cfg.workers = 1;
        let b = run_sampler(&t, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.series.to_csv(), b.series.to_csv());
    }

    #[test]
    fn forced_update_searches_on_period() {
        let t = gmm_generate_benchmark(2, 2, WeightScheme::Equal, 3).unwrap();
        let (lo, hi) = t.generator_box().unwrap();
        let mut cfg = config(SamplerKind::Whmc, ScheduleMode::ForcedUpdate, SearchBox::inflated_cube(2, lo, hi, 0.2));
        cfg.regeneration = false;
        cfg.samples = 2000;
        let out = run_sampler(&t, &cfg).unwrap();
        // The worker never idles longer than one period.
        let log = &out.background_searches;
        assert!(!log.is_empty() && log[0].start_round <= 100);
        for w in log.windows(2) {
            assert!(w[1].start_round - w[0].due_round <= 100, "{w:?}");
        }
        assert_eq!(out.registry.len(), 2);
    }

    #[test]
    fn rejects_zero_period() {
        let t = GaussianMixture::standard_normal(1);
        let mut cfg = config(SamplerKind::Whmc, ScheduleMode::ForcedUpdate, SearchBox::cube(1, -1.0, 1.0));
        cfg.schedule.period = 0;
        assert!(matches!(run_sampler(&t, &cfg), Err(SamplerError::Config(_))));
    }
}

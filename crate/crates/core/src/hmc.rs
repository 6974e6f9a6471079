//! Plain Hamiltonian Monte Carlo with `U = -log π`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{all_finite, dot, Cholesky, Mat, NumericsError};
use crate::targets::{Target, TargetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("trajectory reached a zero-density point")]
    ZeroDensity,
    #[error("non-finite state in trajectory")]
    NonFinite,
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("implicit update failed: {0}")]
    FixedPoint(NumericsError),
}

/// SPD mass matrix with its factorization.
#[derive(Clone, Debug)]
pub struct MassMatrix {
    matrix: Mat,
    chol: Cholesky,
}

impl MassMatrix {
    pub fn new(matrix: Mat) -> Result<Self, NumericsError> {
        let chol = Cholesky::new(&matrix)?;
        Ok(Self { matrix, chol })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        self.chol.solve(p)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.matrix.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.mul_lower(&z)
    }
}

#[derive(Clone, Debug)]
pub struct HmcParams {
    pub step_size: f64,
    pub steps: usize,
    /// `None` is the identity.
    pub mass: Option<MassMatrix>,
    /// Per-trajectory step size is uniform on `ε(1 ± jitter)`.
    pub jitter: f64,
}

impl HmcParams {
    pub fn new(step_size: f64, steps: usize) -> Self {
        Self {
            step_size,
            steps,
            mass: None,
            jitter: 0.1,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_mass(mut self, m: MassMatrix) -> Self {
        self.mass = Some(m);
        self
    }

    pub fn trajectory_length(&self) -> f64 {
        self.step_size * self.steps as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(format!("step size must be positive, got {}", self.step_size));
        }
        if self.steps < 1 {
            return Err("leapfrog steps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        Ok(())
    }

    pub(crate) fn jittered_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.step_size * (1.0 + self.jitter * (2.0 * u - 1.0))
    }

    pub(crate) fn draw_momentum<R: Rng + ?Sized>(&self, rng: &mut R, d: usize) -> Vec<f64> {
        match &self.mass {
            None => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            Some(m) => m.draw(rng),
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        match &self.mass {
            None => p.to_vec(),
            Some(m) => m.velocity(p),
        }
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * dot(p, &self.velocity(p))
    }
}

/// One Markov chain. The cached log-density and gradient always describe `x`.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub accepted: u64,
    pub proposed: u64,
}

impl ChainState {
    /// Chain `stream` of the generator seeded with `seed`.
    pub fn new(target: &dyn Target, x: Vec<f64>, seed: u64, stream: u64) -> Result<Self, TargetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::with_rng(target, x, rng)
    }

    pub fn with_rng(target: &dyn Target, x: Vec<f64>, rng: ChaCha8Rng) -> Result<Self, TargetError> {
        let (log_density, grad) = target.log_density_and_gradient(&x)?;
        Ok(Self {
            x,
            log_density,
            grad,
            rng,
            accepted: 0,
            proposed: 0,
        })
    }

    /// Moves the chain to `x` without touching the counters.
    pub fn reset_position(&mut self, target: &dyn Target, x: Vec<f64>) -> Result<(), TargetError> {
        let (l, g) = target.log_density_and_gradient(&x)?;
        self.x = x;
        self.log_density = l;
        self.grad = g;
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub(crate) fn record(&mut self, info: &StepInfo) {
        self.proposed += 1;
        if info.accepted {
            self.accepted += 1;
        }
    }
}

/// Outcome of one Metropolis-corrected move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    pub accept_prob: f64,
    /// Objective evaluations spent.
    pub evaluations: u64,
}

/// `min{1, exp(H(s) - H(s'))}`; zero when the proposal energy is not finite.
pub fn acceptance_probability(h_current: f64, h_proposed: f64) -> f64 {
    if !h_proposed.is_finite() || !h_current.is_finite() {
        return 0.0;
    }
    let diff = h_current - h_proposed;
    if diff >= 0.0 {
        1.0
    } else {
        diff.exp()
    }
}

pub(crate) struct EndPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

pub(crate) fn integrate(
    target: &dyn Target,
    x: &[f64],
    grad: &[f64],
    p: &[f64],
    eps: f64,
    n: usize,
    params: &HmcParams,
) -> Result<EndPoint, IntegratorError> {
    let mut x = x.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    let mut l = f64::NAN;
    for _ in 0..n {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        let v = params.velocity(&p);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += eps * vi;
        }
        let (nl, ng) = target.log_density_and_gradient(&x).map_err(|e| match e {
            TargetError::ZeroDensity => IntegratorError::ZeroDensity,
            other => IntegratorError::Target(other),
        })?;
        if !nl.is_finite() || !all_finite(&ng) {
            return Err(IntegratorError::NonFinite);
        }
        l = nl;
        g = ng;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
    }
    if n == 0 {
        l = target.log_density(&x);
    }
    if !all_finite(&x) || !all_finite(&p) {
        return Err(IntegratorError::NonFinite);
    }
    Ok(EndPoint { x, p, log_density: l, grad: g })
}

/// `n` kick-drift-kick steps of size `eps` on `U = -log π`.
pub fn leapfrog(
    target: &dyn Target,
    x: &[f64],
    p: &[f64],
    eps: f64,
    n: usize,
    params: &HmcParams,
) -> Result<(Vec<f64>, Vec<f64>), IntegratorError> {
    let (_, g) = target.log_density_and_gradient(x).map_err(|e| match e {
        TargetError::ZeroDensity => IntegratorError::ZeroDensity,
        other => IntegratorError::Target(other),
    })?;
    let end = integrate(target, x, &g, p, eps, n, params)?;
    Ok((end.x, end.p))
}

/// Energy `-log π(x) + K(p)`.
pub fn hamiltonian(log_density: f64, p: &[f64], params: &HmcParams) -> f64 {
    -log_density + params.kinetic(p)
}

/// One HMC transition. Draw order: step-size jitter, momentum, accept
/// uniform.
pub fn hmc_step(state: &mut ChainState, target: &dyn Target, params: &HmcParams) -> StepInfo {
    let eps = params.jittered_step(&mut state.rng);
    let p = params.draw_momentum(&mut state.rng, state.x.len());
    let h0 = hamiltonian(state.log_density, &p, params);
    let end = integrate(target, &state.x, &state.grad, &p, eps, params.steps, params);
    let u: f64 = state.rng.random();
    let info = match end {
        Ok(e) => {
            let h1 = hamiltonian(e.log_density, &e.p, params);
            let a = acceptance_probability(h0, h1);
            let accepted = u < a;
            if accepted {
                state.x = e.x;
                state.log_density = e.log_density;
                state.grad = e.grad;
            }
            StepInfo {
                accepted,
                accept_prob: a,
                evaluations: params.steps as u64,
            }
        }
        Err(_) => StepInfo {
            accepted: false,
            accept_prob: 0.0,
            evaluations: params.steps as u64,
        },
    };
    state.record(&info);
    info
}

/// Result of step-size adaptation.
#[derive(Clone, Debug)]
pub struct TuneResult {
    pub params: HmcParams,
    /// Mean Metropolis probability of the last verification batch.
    pub acceptance: f64,
    /// False when the band was not reached within the budget.
    pub in_band: bool,
    pub steps_used: usize,
    /// Step size after each adjustment, for inspection.
    pub history: Vec<f64>,
}

pub const TUNE_BATCH: usize = 100;
pub const TUNE_VERIFY: usize = 400;
pub const TUNE_BAND: f64 = 0.05;

fn run_batch(state: &mut ChainState, target: &dyn Target, params: &HmcParams, n: usize) -> f64 {
    let mut sum = 0.0;
    for _ in 0..n {
        sum += hmc_step(state, target, params).accept_prob;
    }
    sum / n as f64
}

fn with_step(params: &HmcParams, eps: f64, length: f64) -> HmcParams {
    let mut p = params.clone();
    p.step_size = eps;
    p.steps = ((length / eps).round() as usize).max(1);
    p
}

/// Stochastic-approximation tuning of `ε` toward a mean acceptance `goal`,
/// holding `ε·N_ε` fixed.
///
/// Batches of 100 steps drive `log ε += γ_n (acc - goal)` with
/// `γ_n = 2 / (n+1)^0.6`. Once a batch lands within ±0.05 of the goal a
/// 400-step batch verifies it.
pub fn tune_step_size(
    target: &dyn Target,
    params: &HmcParams,
    goal: f64,
    budget: usize,
    start: &[f64],
    seed: u64,
) -> Result<TuneResult, TargetError> {
    assert!(goal > 0.0 && goal < 1.0, "goal must lie in (0, 1)");
    let length = params.trajectory_length();
    let mut state = ChainState::new(target, start.to_vec(), seed, u64::MAX)?;
    let mut current = params.clone();
    let mut used = 0;
    let mut n = 0usize;
    let mut history = vec![current.step_size];
    let mut best = (f64::INFINITY, current.clone(), 0.0);
    while used + TUNE_BATCH <= budget {
        let mut acc = run_batch(&mut state, target, &current, TUNE_BATCH);
        used += TUNE_BATCH;
        if (acc - goal).abs() <= TUNE_BAND && used + TUNE_VERIFY <= budget {
            acc = run_batch(&mut state, target, &current, TUNE_VERIFY);
            used += TUNE_VERIFY;
            if (acc - goal).abs() <= TUNE_BAND {
                return Ok(TuneResult {
                    params: current,
                    acceptance: acc,
                    in_band: true,
                    steps_used: used,
                    history,
                });
            }
        }
        if (acc - goal).abs() < best.0 {
            best = ((acc - goal).abs(), current.clone(), acc);
        }
        n += 1;
        let gain = 2.0 / ((n + 1) as f64).powf(0.6);
        let eps = current.step_size * (gain * (acc - goal)).exp();
        current = with_step(params, eps, length);
        history.push(eps);
    }
    Ok(TuneResult {
        params: best.1,
        acceptance: best.2,
        in_band: false,
        steps_used: used,
        history,
    })
}

//! Wormhole HMC: a position-dependent metric that shortens the line
//! between known modes, plus a transit move between mode basins.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::hmc::{acceptance_probability, ChainState, HmcParams, IntegratorError, StepInfo};
use crate::numerics::{distance, dot, fixed_point_solve, norm, Mat};
use crate::targets::{Target, TargetError};

pub const DEFAULT_EPS_W: f64 = 1e-4;
pub const DEFAULT_JUMP_PROB: f64 = 0.68;
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const FIXED_POINT_MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Wormhole {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Unit vector from `a` to `b`.
    pub direction: Vec<f64>,
    pub length: f64,
    pub eps_w: f64,
    pub influence: f64,
}

impl Wormhole {
    pub fn new(a: Vec<f64>, b: Vec<f64>, eps_w: f64, influence: f64) -> Result<Self, String> {
        if a.len() != b.len() {
            return Err("wormhole endpoints differ in dimension".into());
        }
        let length = distance(&a, &b);
        if !(length > 0.0) {
            return Err("wormhole endpoints coincide".into());
        }
        if !(eps_w > 0.0 && eps_w <= 1.0) {
            return Err(format!("eps_w must lie in (0, 1], got {eps_w}"));
        }
        if !(influence > 0.0) {
            return Err(format!("influence factor must be positive, got {influence}"));
        }
        let direction = a.iter().zip(&b).map(|(p, q)| (q - p) / length).collect();
        Ok(Self {
            a,
            b,
            direction,
            length,
            eps_w,
            influence,
        })
    }

    /// Triangle-inequality excess `‖x-a‖ + ‖b-x‖ - ‖b-a‖`, zero on the segment.
    pub fn excess(&self, x: &[f64]) -> f64 {
        let da = distance(x, &self.a);
        let db = distance(x, &self.b);
        let e = da + db - self.length;
        // Points on the segment land a few ulps either side of zero.
        if e <= 4.0 * f64::EPSILON * (da + db + self.length) {
            0.0
        } else {
            e
        }
    }

    /// `G_W = I - (1-ε_W) v_W v_Wᵀ`
    pub fn metric(&self) -> Mat {
        let mut g = Mat::identity(self.direction.len());
        let outer = Mat::outer(&self.direction, &self.direction).scaled(1.0 - self.eps_w);
        g = g.minus(&outer);
        g
    }

    /// `vᵀ G_W v`
    pub fn quad(&self, v: &[f64]) -> f64 {
        let c = dot(v, &self.direction);
        let perp: Vec<f64> = v.iter().zip(&self.direction).map(|(vi, ui)| vi - c * ui).collect();
        dot(&perp, &perp) + self.eps_w * c * c
    }
}

pub fn mollifier(w: &Wormhole, x: &[f64]) -> f64 {
    (-w.excess(x) / w.influence).exp()
}

/// Metric and field restricted to the wormhole that dominates at one point.
#[derive(Clone, Debug)]
pub struct LocalMetric<'a> {
    pub m: f64,
    pub direction: Option<&'a [f64]>,
    /// Eigenvalue along `direction`: `1 - m(1-ε_W)`.
    pub lambda: f64,
}

impl LocalMetric<'_> {
    fn flat() -> Self {
        Self {
            m: 0.0,
            direction: None,
            lambda: 1.0,
        }
    }

    pub fn quad(&self, v: &[f64]) -> f64 {
        match self.direction {
            None => dot(v, v),
            Some(u) => {
                let c = dot(v, u);
                dot(v, v) - (1.0 - self.lambda) * c * c
            }
        }
    }

    pub fn log_det(&self) -> f64 {
        self.lambda.ln()
    }

    /// `v ~ N(0, G⁻¹)` from standard normals `z`.
    pub fn velocity_from_normals(&self, mut z: Vec<f64>) -> Vec<f64> {
        if let Some(u) = self.direction {
            let c = dot(&z, u) * (1.0 / self.lambda.sqrt() - 1.0);
            for (zi, ui) in z.iter_mut().zip(u) {
                *zi += c * ui;
            }
        }
        z
    }

    pub fn field(&self, v: &[f64]) -> Vec<f64> {
        match self.direction {
            None => vec![0.0; v.len()],
            Some(u) => {
                let c = self.m * dot(v, u);
                u.iter().map(|ui| c * ui).collect()
            }
        }
    }

    pub fn matrix(&self, d: usize) -> Mat {
        match self.direction {
            None => Mat::identity(d),
            Some(u) => Mat::identity(d).minus(&Mat::outer(u, u).scaled(1.0 - self.lambda)),
        }
    }
}

/// Wormholes between every pair of registered modes.
#[derive(Clone, Debug)]
pub struct WormholeNetwork {
    modes: Vec<Vec<f64>>,
    wormholes: Vec<Wormhole>,
    pub jump_prob: f64,
    /// Include the log-determinant of the metric in the Hamiltonian.
    pub logdet: bool,
}

impl WormholeNetwork {
    pub fn empty() -> Self {
        Self {
            modes: Vec::new(),
            wormholes: Vec::new(),
            jump_prob: DEFAULT_JUMP_PROB,
            logdet: true,
        }
    }

    pub fn new(modes: &[Vec<f64>], eps_w: f64, influence: f64, jump_prob: f64, logdet: bool) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&jump_prob) {
            return Err(format!("jump probability must lie in [0, 1], got {jump_prob}"));
        }
        let mut wormholes = Vec::new();
        for i in 0..modes.len() {
            for j in i + 1..modes.len() {
                wormholes.push(Wormhole::new(modes[i].clone(), modes[j].clone(), eps_w, influence)?);
            }
        }
        Ok(Self {
            modes: modes.to_vec(),
            wormholes,
            jump_prob,
            logdet,
        })
    }

    pub fn wormholes(&self) -> &[Wormhole] {
        &self.wormholes
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.wormholes.is_empty()
    }

    /// The wormhole with the largest mollifier at `x`.
    pub fn active(&self, x: &[f64]) -> LocalMetric<'_> {
        let mut best: Option<(&Wormhole, f64)> = None;
        for w in &self.wormholes {
            let e = w.excess(x);
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((w, e));
            }
        }
        match best {
            None => LocalMetric::flat(),
            Some((w, e)) => {
                let m = (-e / w.influence).exp();
                if m == 0.0 {
                    return LocalMetric::flat();
                }
                LocalMetric {
                    m,
                    direction: Some(&w.direction),
                    lambda: 1.0 - m * (1.0 - w.eps_w),
                }
            }
        }
    }

    /// Index of the registered mode closest to `x`.
    pub fn nearest_mode(&self, x: &[f64]) -> Option<usize> {
        (0..self.modes.len()).min_by(|&a, &b| distance(x, &self.modes[a]).total_cmp(&distance(x, &self.modes[b])))
    }
}

/// `G(x) = (1 - m) I + m G_W` for the active wormhole.
pub fn metric(net: &WormholeNetwork, x: &[f64]) -> Mat {
    net.active(x).matrix(x.len())
}

/// `f(x, v) = m(x) ⟨v, v_W⟩ v_W` for the active wormhole.
pub fn vector_field(net: &WormholeNetwork, x: &[f64], v: &[f64]) -> Vec<f64> {
    net.active(x).field(v)
}

/// Step diagnostics from the implicit update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeapfrogStats {
    pub fixed_point_iterations: usize,
}

fn to_integrator(e: TargetError) -> IntegratorError {
    match e {
        TargetError::ZeroDensity => IntegratorError::ZeroDensity,
        other => IntegratorError::Target(other),
    }
}

/// One generalized leapfrog step in velocity form. `grad` is `∇log π(x)`;
/// returns `(x', v', log π(x'), ∇log π(x'))`.
#[allow(clippy::type_complexity)]
pub(crate) fn generalized_step_cached(
    net: &WormholeNetwork,
    target: &dyn Target,
    x: &[f64],
    grad: &[f64],
    v: &[f64],
    eps: f64,
    stats: &mut LeapfrogStats,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>), IntegratorError> {
    let vh: Vec<f64> = v.iter().zip(grad).map(|(vi, gi)| vi + 0.5 * eps * gi).collect();
    let f0 = vector_field(net, x, &vh);
    let predictor: Vec<f64> = x
        .iter()
        .zip(&vh)
        .zip(&f0)
        .map(|((xi, vi), fi)| xi + eps * (vi + fi))
        .collect();
    let x_new = if net.is_empty() {
        predictor
    } else {
        let map = |z: &[f64]| {
            let f1 = vector_field(net, z, &vh);
            x.iter()
                .zip(&vh)
                .zip(f0.iter().zip(&f1))
                .map(|((xi, vi), (a, b))| xi + eps * (vi + 0.5 * (a + b)))
                .collect::<Vec<f64>>()
        };
        let fp = fixed_point_solve(map, &predictor, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER).map_err(IntegratorError::FixedPoint)?;
        stats.fixed_point_iterations = stats.fixed_point_iterations.max(fp.iterations);
        fp.point
    };
    let (l, g) = target.log_density_and_gradient(&x_new).map_err(to_integrator)?;
    if !l.is_finite() {
        return Err(IntegratorError::NonFinite);
    }
    let v_new: Vec<f64> = vh.iter().zip(&g).map(|(vi, gi)| vi + 0.5 * eps * gi).collect();
    Ok((x_new, v_new, l, g))
}

/// One step of the generalized leapfrog: explicit half step on `v`,
/// implicit update of `x` by fixed-point iteration, explicit half step on `v`.
pub fn generalized_leapfrog_step(
    net: &WormholeNetwork,
    target: &dyn Target,
    x: &[f64],
    v: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>, LeapfrogStats), IntegratorError> {
    let (_, g) = target.log_density_and_gradient(x).map_err(to_integrator)?;
    let mut stats = LeapfrogStats::default();
    let (x1, v1, _, _) = generalized_step_cached(net, target, x, &g, v, eps, &mut stats)?;
    Ok((x1, v1, stats))
}

/// `-log π(x) + ½ vᵀG(x)v - ½ log det G(x)`.
///
/// With `v ~ N(0, G⁻¹)` the joint density is `π(x) N(v | 0, G⁻¹)`, which
/// carries `+½ log det G` in the density and so `-½ log det G` here.
pub fn whmc_hamiltonian(net: &WormholeNetwork, log_density: f64, x: &[f64], v: &[f64]) -> f64 {
    let local = net.active(x);
    let mut h = -log_density + 0.5 * local.quad(v);
    if net.logdet {
        h -= 0.5 * local.log_det();
    }
    h
}

/// Translates `x` by the offset between its nearest mode and another mode
/// chosen uniformly. Rejected unless the image is nearest to the chosen
/// mode, which makes the move its own reverse.
fn transit(state: &mut ChainState, target: &dyn Target, net: &WormholeNetwork) -> StepInfo {
    let k = net.modes.len();
    let i = net.nearest_mode(&state.x).expect("non-empty network");
    let mut j = state.rng.random_range(0..k - 1);
    if j >= i {
        j += 1;
    }
    let u: f64 = state.rng.random();
    let y: Vec<f64> = state
        .x
        .iter()
        .zip(net.modes[j].iter().zip(&net.modes[i]))
        .map(|(xi, (mj, mi))| xi + mj - mi)
        .collect();
    let mut info = StepInfo {
        accepted: false,
        accept_prob: 0.0,
        evaluations: 1,
    };
    if net.nearest_mode(&y) == Some(j) {
        if let Ok((l, g)) = target.log_density_and_gradient(&y) {
            let a = acceptance_probability(-state.log_density, -l);
            info.accept_prob = a;
            if u < a {
                info.accepted = true;
                state.x = y;
                state.log_density = l;
                state.grad = g;
            }
        }
    }
    info
}

/// One WHMC transition.
///
/// With at least two modes, a uniform draw first decides whether this step
/// is a transit between mode basins (probability `jump_prob`). Otherwise the
/// draw order matches `hmc_step`: jitter, velocity, accept uniform. The mass
/// matrix in `params` is not used; the metric takes its place.
pub fn whmc_step(state: &mut ChainState, target: &dyn Target, net: &WormholeNetwork, params: &HmcParams) -> StepInfo {
    if net.modes.len() >= 2 {
        let u: f64 = state.rng.random();
        if u < net.jump_prob {
            let info = transit(state, target, net);
            state.proposed += 1;
            if info.accepted {
                state.accepted += 1;
            }
            return info;
        }
    }
    let eps = params.jittered_step(&mut state.rng);
    let d = state.x.len();
    let z: Vec<f64> = (0..d).map(|_| state.rng.sample(StandardNormal)).collect();
    let v0 = net.active(&state.x).velocity_from_normals(z);
    let h0 = whmc_hamiltonian(net, state.log_density, &state.x, &v0);
    let mut x = state.x.clone();
    let mut g = state.grad.clone();
    let mut v = v0;
    let mut l = state.log_density;
    let mut stats = LeapfrogStats::default();
    let mut failed = false;
    for _ in 0..params.steps {
        match generalized_step_cached(net, target, &x, &g, &v, eps, &mut stats) {
            Ok((nx, nv, nl, ng)) => {
                x = nx;
                v = nv;
                l = nl;
                g = ng;
            }
            Err(_) => {
                failed = true;
                break;
            }
        }
    }
    let u: f64 = state.rng.random();
    let a = if failed {
        0.0
    } else {
        acceptance_probability(h0, whmc_hamiltonian(net, l, &x, &v))
    };
    let accepted = u < a;
    if accepted {
        state.x = x;
        state.log_density = l;
        state.grad = g;
    }
    state.proposed += 1;
    if accepted {
        state.accepted += 1;
    }
    StepInfo {
        accepted,
        accept_prob: a,
        evaluations: params.steps as u64,
    }
}

/// Largest fixed-point iteration count over a trajectory; instrumentation.
pub fn trajectory_fixed_point_iterations(
    net: &WormholeNetwork,
    target: &dyn Target,
    x: &[f64],
    v: &[f64],
    eps: f64,
    steps: usize,
) -> Result<usize, IntegratorError> {
    let (_, mut g) = target.log_density_and_gradient(x).map_err(to_integrator)?;
    let mut x = x.to_vec();
    let mut v = v.to_vec();
    let mut stats = LeapfrogStats::default();
    for _ in 0..steps {
        let (nx, nv, _, ng) = generalized_step_cached(net, target, &x, &g, &v, eps, &mut stats)?;
        x = nx;
        v = nv;
        g = ng;
    }
    Ok(stats.fixed_point_iterations)
}

/// `‖v_W‖` sanity for tests and audits.
pub fn direction_norm(w: &Wormhole) -> f64 {
    norm(&w.direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmc::{hmc_step, leapfrog};
    use crate::targets::GaussianMixture;

    fn two_mode() -> (GaussianMixture, WormholeNetwork) {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![8.0, 0.0]],
            vec![Mat::identity(2), Mat::identity(2)],
        )
        .unwrap();
        let net = WormholeNetwork::new(g.means(), 1e-4, 0.1, 0.68, true).unwrap();
        (g, net)
    }

    #[test]
    fn mollifier_values() {
        let w = Wormhole::new(vec![0.0, 0.0], vec![4.0, 0.0], 1e-4, 0.1).unwrap();
        assert_eq!(mollifier(&w, &[1.3, 0.0]), 1.0);
        assert_eq!(mollifier(&w, &[0.0, 0.0]), 1.0);
        // Excess F: 2·sqrt(2² + h²) - 4 = 0.1
        let h = (2.05f64.powi(2) - 4.0).sqrt();
        assert!((mollifier(&w, &[2.0, h]) - (-1.0f64).exp()).abs() < 1e-12);
        let h = (2.5f64.powi(2) - 4.0).sqrt();
        assert!((mollifier(&w, &[2.0, h]) - (-10.0f64).exp()).abs() < 1e-15);
        assert!(mollifier(&w, &[5.0, 0.0]) < 1.0);
    }

    #[test]
    fn metric_far_away_is_identity() {
        let (_, net) = two_mode();
        let g = metric(&net, &[4.0, 30.0]);
        assert!(g.max_abs_diff(&Mat::identity(2)) < 1e-8);
        assert_eq!(metric(&WormholeNetwork::empty(), &[1.0, 1.0]), Mat::identity(2));
    }

    #[test]
    fn unit_eps_w_gives_identity() {
        let net = WormholeNetwork::new(&[vec![0.0, 0.0], vec![1.0, 1.0]], 1.0, 0.1, 0.5, true).unwrap();
        assert!(metric(&net, &[0.5, 0.5]).max_abs_diff(&Mat::identity(2)) == 0.0);
    }

    #[test]
    fn contraction_along_direction() {
        let w = Wormhole::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 2.0], 1e-4, 0.1).unwrap();
        let v: Vec<f64> = w.direction.iter().map(|u| 3.0 * u).collect();
        assert!((w.quad(&v) - 9e-4).abs() < 1e-12 * 9e-4);
        let m = w.metric();
        assert!((m.quad_form(&v) - 9e-4).abs() < 1e-12);
    }

    #[test]
    fn field_examples() {
        let (_, net) = two_mode();
        assert_eq!(vector_field(&net, &[4.0, 0.0], &[0.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(vector_field(&net, &[4.0, 0.0], &[1.0, 0.0]), vec![1.0, 0.0]);
        let h = (4.05f64.powi(2) - 16.0).sqrt();
        let f = vector_field(&net, &[4.0, h], &[2.0, 0.0]);
        assert!((f[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn empty_network_matches_plain_leapfrog() {
        let t = GaussianMixture::standard_normal(3);
        let net = WormholeNetwork::empty();
        let x = [0.4, -1.2, 2.0];
        let v = [1.0, 0.5, -0.3];
        let (gx, gv, stats) = generalized_leapfrog_step(&net, &t, &x, &v, 0.2).unwrap();
        let (hx, hv) = leapfrog(&t, &x, &v, 0.2, 1, &HmcParams::new(0.2, 1)).unwrap();
        assert_eq!(stats.fixed_point_iterations, 0);
        for i in 0..3 {
            assert!((gx[i] - hx[i]).abs() <= 1e-12);
            assert!((gv[i] - hv[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn field_adds_transport_on_line() {
        let (t, net) = two_mode();
        let (x1, _, _) = generalized_leapfrog_step(&net, &t, &[4.0, 0.0], &[1.0, 0.0], 0.01).unwrap();
        assert!(x1[0] - 4.0 > 0.01);
    }

    #[test]
    fn fixed_point_iterations_small() {
        let (t, net) = two_mode();
        for x0 in [[4.0, 0.0], [1.0, 0.05], [7.0, -0.02], [0.0, 0.0]] {
            let n = trajectory_fixed_point_iterations(&net, &t, &x0, &[1.5, 0.3], 0.01, 20).unwrap();
            assert!(n <= 10, "{n}");
        }
    }

    #[test]
    fn empty_network_step_matches_hmc_step() {
        let t = GaussianMixture::standard_normal(4);
        let params = HmcParams::new(0.4, 6);
        let mut a = ChainState::new(&t, vec![0.5; 4], 11, 2).unwrap();
        let mut b = a.clone();
        let net = WormholeNetwork::empty();
        for _ in 0..200 {
            let ia = hmc_step(&mut a, &t, &params);
            let ib = whmc_step(&mut b, &t, &net, &params);
            assert_eq!(ia.accepted, ib.accepted);
            for (p, q) in a.x.iter().zip(&b.x) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn metric_eigenvalues_bounded() {
        let (_, net) = two_mode();
        for k in 0..200 {
            let x = [k as f64 * 0.05 - 1.0, (k % 7) as f64 * 0.01];
            let loc = net.active(&x);
            assert!(loc.lambda >= 1e-4 - 1e-15 && loc.lambda <= 1.0);
            assert!(metric(&net, &x).is_symmetric(0.0));
        }
    }

    #[test]
    fn network_has_all_pairs() {
        let modes: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 10.0, 0.0]).collect();
        let net = WormholeNetwork::new(&modes, 1e-4, 0.1, 0.68, true).unwrap();
        assert_eq!(net.wormholes().len(), 10);
        assert!(net.wormholes().iter().all(|w| (direction_norm(w) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn both_modes_visited() {
        let (t, net) = two_mode();
        let params = HmcParams::new(0.3, 5);
        let mut seen = [false, false];
        let mut state = ChainState::new(&t, vec![0.0, 0.0], 3, 0).unwrap();
        for _ in 0..1000 {
            whmc_step(&mut state, &t, &net, &params);
            seen[t.dominant_component(&state.x)] = true;
        }
        assert!(seen[0] && seen[1]);
    }
}

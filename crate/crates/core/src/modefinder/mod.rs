//! Mode discovery: residual objective, geodesic start points, BFGS on the
//! original target, and the registry of found modes.

mod geodesic;
mod kde;
mod registry;

pub use geodesic::{geodesic_start_proposal, random_direction, GeodesicResult, SearchBox};
pub use kde::{sample_covariance, KdeModel};
pub use registry::{ModeModel, ModeRecord, ModeRegistry, ModelKind, SearchOutcome, DELTA_RELATIVE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hmc::{hmc_step, ChainState, HmcParams};
use crate::numerics::{
    bfgs_maximize, default_fd_step, distance, finite_diff_jacobian_of_gradient, log_sum_exp, norm, Cholesky, Mat,
};
use crate::targets::{LogDensityObjective, Target, LOG_ZERO};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct ModeFinderConfig {
    /// Geodesic bending strength; `None` is `1/D`.
    pub alpha: Option<f64>,
    pub steps: usize,
    /// Geodesic step; `None` spreads one box diameter over `steps`.
    pub h: Option<f64>,
    pub restarts: usize,
    /// Attempts per call.
    pub budget: usize,
    /// Absolute residual floor; `None` uses the relative default.
    pub delta: Option<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub model: ModelKind,
    pub kde_samples: usize,
    pub kde_hmc: HmcParams,
    pub bounds: SearchBox,
    pub max_modes: Option<usize>,
}

impl ModeFinderConfig {
    pub fn new(bounds: SearchBox) -> Self {
        Self {
            alpha: None,
            steps: 500,
            h: None,
            restarts: 8,
            budget: 3,
            delta: None,
            grad_tol: 1e-6,
            max_iter: 1000,
            model: ModelKind::Gaussian,
            kde_samples: 500,
            kde_hmc: HmcParams::new(0.014, 10),
            bounds,
            max_modes: None,
        }
    }

    pub fn alpha_for(&self, d: usize) -> f64 {
        self.alpha.unwrap_or(1.0 / d as f64)
    }

    pub fn step_for(&self) -> f64 {
        self.h.unwrap_or(self.bounds.diameter() / self.steps.max(1) as f64)
    }
}

/// `f̂(x) = Σ_k ŵ_k · model_k(x)`; zero for an empty registry.
pub fn mode_density_estimate(reg: &ModeRegistry, x: &[f64]) -> f64 {
    reg.log_estimate(x).exp()
}

/// `x ↦ log f(x) - log(f̂(x) + δ)` with its gradient.
pub fn residual_objective<'a>(
    target: &'a dyn Target,
    reg: &'a ModeRegistry,
    delta: f64,
) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + 'a {
    assert!(delta > 0.0, "residual floor must be positive");
    let log_delta = delta.ln();
    move |x: &[f64]| {
        let (lf, gf) = match target.log_density_and_gradient(x) {
            Ok(v) => v,
            Err(_) => return (LOG_ZERO, vec![f64::NAN; x.len()]),
        };
        let (lh, gh) = reg.log_estimate_and_gradient(x);
        let denom = log_sum_exp(&[lh, log_delta]);
        let share = if lh == LOG_ZERO { 0.0 } else { (lh - denom).exp() };
        let g = gf.iter().zip(&gh).map(|(a, b)| a - share * b).collect();
        (lf - denom, g)
    }
}

/// Floor used by `find_new_mode` for this registry.
pub fn residual_delta(reg: &ModeRegistry, cfg: &ModeFinderConfig) -> f64 {
    cfg.delta.unwrap_or_else(|| reg.log_delta().exp())
}

/// Density model fitted at a stationary point.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub covariance: Mat,
    pub model: ModeModel,
    pub log_mass: f64,
    pub evaluations: u64,
    pub warning: Option<String>,
}

/// Fits a mode model at `x_star`.
///
/// The Gaussian model takes the covariance from the inverse negated
/// Hessian (jitter-regularized) and the Laplace mass
/// `f(x*) (2π)^{D/2} |Σ|^{1/2}`. The KDE model runs a short HMC chain from
/// `x_star` and scales the estimate to match `f` at the peak. A Hessian
/// that cannot be made negative definite falls back to the KDE.
pub fn fit_mode_model<R: Rng + ?Sized>(
    target: &dyn Target,
    x_star: &[f64],
    kind: ModelKind,
    cfg: &ModeFinderConfig,
    rng: &mut R,
) -> Result<FittedModel, String> {
    let d = x_star.len();
    let log_peak = target.log_density(x_star);
    if !log_peak.is_finite() {
        return Err("mode has zero density".into());
    }
    let mut warning = None;
    let mut evaluations = 0u64;
    if kind == ModelKind::Gaussian {
        let h = default_fd_step(x_star);
        let grad = |p: &[f64]| target.log_density_and_gradient(p).ok().map(|v| v.1);
        evaluations += 2 * d as u64;
        let attempt = finite_diff_jacobian_of_gradient(grad, x_star, h)
            .map_err(|e| e.to_string())
            .and_then(|hess| {
                let neg = hess.scaled(-1.0).symmetrized();
                let (chol, _) = Cholesky::with_jitter(&neg).map_err(|e| e.to_string())?;
                let cov = chol.inverse();
                let model = ModeModel::gaussian(x_star.to_vec(), &cov).map_err(|e| e.to_string())?;
                let log_mass = log_peak + 0.5 * d as f64 * LN_2PI - 0.5 * chol.log_det();
                Ok((cov, model, log_mass))
            });
        match attempt {
            Ok((covariance, model, log_mass)) => {
                return Ok(FittedModel {
                    kind,
                    covariance,
                    model,
                    log_mass,
                    evaluations,
                    warning,
                })
            }
            Err(e) => warning = Some(format!("Hessian not negative definite ({e}); using KDE")),
        }
    }
    let seed: u64 = rng.random();
    let mut state = ChainState::with_rng(target, x_star.to_vec(), ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let n = cfg.kde_samples.max(2);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        evaluations += hmc_step(&mut state, target, &cfg.kde_hmc).evaluations;
        samples.push(state.x.clone());
    }
    let covariance = sample_covariance(&samples);
    let kde = KdeModel::silverman(samples).map_err(|e| format!("KDE bandwidth: {e}"))?;
    let log_mass = log_peak - kde.log_density(x_star);
    Ok(FittedModel {
        kind: ModelKind::Kde,
        covariance,
        model: ModeModel::Kde(kde),
        log_mass,
        evaluations,
        warning,
    })
}

/// Up to `cfg.budget` attempts of geodesic start selection on the residual
/// objective followed by BFGS on `log f`. The registry is read, not
/// changed; apply the outcome with `ModeRegistry::absorb`.
pub fn find_new_mode<R: Rng + ?Sized>(
    target: &dyn Target,
    reg: &ModeRegistry,
    cfg: &ModeFinderConfig,
    rng: &mut R,
) -> SearchOutcome {
    let mut out = SearchOutcome::default();
    if cfg.max_modes.is_some_and(|m| reg.len() >= m) {
        return out;
    }
    let d = target.dim();
    let delta = residual_delta(reg, cfg);
    let phi = residual_objective(target, reg, delta);
    let alpha = cfg.alpha_for(d);
    let h = cfg.step_for();
    let objective = LogDensityObjective(target);
    for _ in 0..cfg.budget.max(1) {
        let mut best: Option<GeodesicResult> = None;
        for _ in 0..cfg.restarts.max(1) {
            let x0 = cfg.bounds.sample(rng);
            let v0 = random_direction(rng, d);
            let r = geodesic_start_proposal(&phi, &x0, &v0, cfg.steps, h, alpha, Some(&cfg.bounds));
            out.evaluations += r.evaluations;
            if r.value.is_finite() && best.as_ref().is_none_or(|b| r.value > b.value) {
                best = Some(r);
            }
        }
        let Some(start) = best else {
            out.failures += 1;
            continue;
        };
        let res = bfgs_maximize(&objective, &start.point, cfg.grad_tol, cfg.max_iter);
        out.bfgs_calls += 1;
        out.evaluations += res.evaluations as u64;
        if !res.converged || !res.objective_value.is_finite() {
            out.failures += 1;
            if let Some(msg) = res.diagnostic {
                out.warnings.push(msg);
            }
            continue;
        }
        let fitted = match fit_mode_model(target, &res.maximizer, cfg.model, cfg, rng) {
            Ok(f) => f,
            Err(e) => {
                out.failures += 1;
                out.warnings.push(e);
                continue;
            }
        };
        out.evaluations += fitted.evaluations;
        if let Some(w) = fitted.warning.clone() {
            out.warnings.push(w);
        }
        let rec = ModeRecord {
            index: 0,
            location: res.maximizer,
            covariance: fitted.covariance,
            kind: fitted.kind,
            model: fitted.model,
            log_peak: res.objective_value,
            log_mass: fitted.log_mass,
            gradient_norm: res.gradient_norm,
            time: 0.0,
            n_bfgs_at_discovery: 0,
        };
        if reg.is_duplicate(&rec.location, rec.scale_radius()) {
            out.duplicates += 1;
            continue;
        }
        out.record = Some(rec);
        return out;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub k: usize,
    /// `None` when BFGS failed from this record.
    pub delta_x: Option<f64>,
    pub cumulative: f64,
}

/// Re-runs BFGS on `log f` from every recorded location and reports the
/// displacement to the re-converged point with running sums.
pub fn fictitious_mode_audit(target: &dyn Target, reg: &ModeRegistry, tol: f64, max_iter: usize) -> Vec<AuditRow> {
    let objective = LogDensityObjective(target);
    let mut cumulative = 0.0;
    reg.records()
        .iter()
        .map(|r| {
            let res = bfgs_maximize(&objective, &r.location, tol, max_iter);
            let delta_x = if res.converged {
                let dx = distance(&res.maximizer, &r.location);
                cumulative += dx;
                Some(dx)
            } else {
                None
            };
            AuditRow {
                k: r.index,
                delta_x,
                cumulative,
            }
        })
        .collect()
}

pub const AUDIT_HEADER: &str = "k,delta_x,cumulative";

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut s = String::from(AUDIT_HEADER);
    s.push('\n');
    for r in rows {
        let dx = r.delta_x.map_or_else(|| "nan".to_string(), |v| format!("{v:e}"));
        s.push_str(&format!("{},{},{:e}\n", r.k, dx, r.cumulative));
    }
    s
}

/// Largest gradient norm of `log f` over the registry.
pub fn max_gradient_norm(target: &dyn Target, reg: &ModeRegistry) -> f64 {
    reg.records()
        .iter()
        .map(|r| target.grad_log_density(&r.location).map(|g| norm(&g)).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{gmm_generate_benchmark, GaussianMixture, WeightScheme};

    fn two_mode_1d() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-5.0], vec![5.0]],
            vec![Mat::identity(1), Mat::identity(1)],
        )
        .unwrap()
    }

    fn cfg_1d() -> ModeFinderConfig {
        ModeFinderConfig::new(SearchBox::cube(1, -10.0, 10.0))
    }

    fn register(t: &dyn Target, reg: &mut ModeRegistry, x: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = fit_mode_model(t, &[x], ModelKind::Gaussian, &cfg_1d(), &mut rng).unwrap();
        reg.push_record(ModeRecord {
            index: 0,
            location: vec![x],
            covariance: f.covariance,
            kind: f.kind,
            model: f.model,
            log_peak: t.log_density(&[x]),
            log_mass: f.log_mass,
            gradient_norm: 0.0,
            time: 0.0,
            n_bfgs_at_discovery: 0,
        });
    }

    /// Mode of the two-mode mixture near +5, by bisection of the gradient.
    fn mode_oracle(t: &GaussianMixture) -> f64 {
        let (mut a, mut b) = (4.0, 5.5);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if t.grad_log_density(&[m]).unwrap()[0] > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn empty_registry_keeps_argmax() {
        let t = two_mode_1d();
        let reg = ModeRegistry::new();
        let phi = residual_objective(&t, &reg, 1.0);
        for i in 0..200 {
            let x = -10.0 + 0.1 * i as f64;
            assert!((phi(&[x]).0 - t.log_density(&[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn registered_mode_is_depressed() {
        let t = two_mode_1d();
        let mut reg = ModeRegistry::new();
        register(&t, &mut reg, mode_oracle(&t));
        let delta = residual_delta(&reg, &cfg_1d());
        let phi = residual_objective(&t, &reg, delta);
        let gap = phi(&[-5.0]).0 - phi(&[5.0]).0;
        let bound = (t.log_density(&[-5.0]) - delta.ln()) - 2.0;
        assert!(gap >= bound, "gap {gap}, bound {bound}");
        // Grid oracle: global max of φ on [-10, 10] within 0.1 of -5.
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=20_000 {
            let x = -10.0 + 0.001 * i as f64;
            let v = phi(&[x]).0;
            if v > best.0 {
                best = (v, x);
            }
        }
        assert!((best.1 + 5.0).abs() < 0.1, "{best:?}");
    }

    #[test]
    fn laplace_fit_on_separated_component() {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![40.0, 40.0]],
            vec![Mat::from_diag(&[1.0, 4.0]), Mat::identity(2)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModeFinderConfig::new(SearchBox::cube(2, -5.0, 45.0));
        let f = fit_mode_model(&g, &[0.0, 0.0], ModelKind::Gaussian, &cfg, &mut rng).unwrap();
        assert!((f.covariance[(0, 0)] - 1.0).abs() < 0.02);
        assert!((f.covariance[(1, 1)] - 4.0).abs() < 0.08);
        // Laplace mass of a dominating component is its weight.
        assert!((f.log_mass.exp() - 0.5).abs() < 1e-3);
        let s = GaussianMixture::standard_normal(3);
        let f = fit_mode_model(&s, &[0.0; 3], ModelKind::Gaussian, &cfg_for(3), &mut rng).unwrap();
        assert!(f.covariance.max_abs_diff(&Mat::identity(3)) < 1e-3);
    }

    fn cfg_for(d: usize) -> ModeFinderConfig {
        ModeFinderConfig::new(SearchBox::cube(d, -5.0, 5.0))
    }

    #[test]
    fn finds_the_other_mode() {
        let t = two_mode_1d();
        let mut reg = ModeRegistry::new();
        let plus = mode_oracle(&t);
        register(&t, &mut reg, plus);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = find_new_mode(&t, &reg, &cfg_1d(), &mut rng);
        let rec = out.record.expect("mode found");
        assert!((rec.location[0] + plus).abs() < 1e-4);
        assert_eq!(out.bfgs_calls, 1);
    }

    #[test]
    fn nothing_left_to_find() {
        let t = gmm_generate_benchmark(3, 3, WeightScheme::Equal, 5).unwrap();
        let (lo, hi) = t.generator_box().unwrap();
        let mut cfg = ModeFinderConfig::new(SearchBox::inflated_cube(3, lo, hi, 0.2));
        cfg.budget = 3;
        let mut reg = ModeRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let out = find_new_mode(&t, &reg, &cfg, &mut rng);
            reg.absorb(out, 0.0);
        }
        assert_eq!(reg.len(), 3);
        let before = reg.n_bfgs;
        let out = find_new_mode(&t, &reg, &cfg, &mut rng);
        assert!(out.record.is_none());
        assert_eq!(out.bfgs_calls, 3);
        reg.absorb(out, 0.0);
        assert_eq!(reg.len(), 3);
        assert_eq!(reg.n_bfgs, before + 3);
    }

    #[test]
    fn audit_flags_perturbed_location() {
        let t = two_mode_1d();
        let mut reg = ModeRegistry::new();
        let plus = mode_oracle(&t);
        register(&t, &mut reg, plus);
        register(&t, &mut reg, -plus + 0.5);
        let rows = fictitious_mode_audit(&t, &reg, 1e-8, 200);
        assert!(rows[0].delta_x.unwrap() < 1e-6);
        assert!((rows[1].delta_x.unwrap() - 0.5).abs() < 0.025);
        assert!((rows[1].cumulative - rows[0].delta_x.unwrap() - rows[1].delta_x.unwrap()).abs() < 1e-15);
        let csv = audit_csv(&rows);
        assert!(csv.starts_with("k,delta_x,cumulative\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn kde_model_near_mode() {
        let t = GaussianMixture::standard_normal(2);
        let mut cfg = cfg_for(2);
        cfg.kde_hmc = HmcParams::new(0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = fit_mode_model(&t, &[0.0, 0.0], ModelKind::Kde, &cfg, &mut rng).unwrap();
        assert_eq!(f.kind, ModelKind::Kde);
        assert!((f.covariance[(0, 0)] - 1.0).abs() < 0.3);
        // Peak matched by construction.
        assert!((f.log_mass + f.model.log_density(&[0.0, 0.0]) - t.log_density(&[0.0, 0.0])).abs() < 1e-12);
    }
}

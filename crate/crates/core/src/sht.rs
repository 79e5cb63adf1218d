//! Likelihood-ratio statistics of the sequential test and the forward
//! second-moment system.
//!
//! Three routes to the expected log-likelihood ratio coexist and must agree:
//! the pathwise statistic (stochastic integral against observed increments),
//! its drift-substituted form (the martingale part removed), and an analytic
//! quadrature driven by the moment ODE system (simplified setting only).

use alloc::vec::Vec;

use crate::math;
use crate::model::{ModelParams, Pattern, TimeGrid};
use crate::riccati::{RhsConsts, RiccatiCoeffs};
use crate::simulate::{CostEstimate, PathEnsemble, SinglePath};
use crate::{Error, Result};

/// Pathwise log-likelihood statistic, discretized with left-endpoint (Ito)
/// evaluation:
/// `1/sigma_w^2 [ sum (f_c Y + f_d) dY - sum V (f_c Y + f_d) dt
///   - 1/2 sum (f_c Y + f_d)^2 dt ]`.
pub fn log_likelihood_path(
    path: &SinglePath,
    f_c: &Pattern,
    f_d: &Pattern,
    p: &ModelParams,
    grid: &TimeGrid,
) -> Result<f64> {
    if path.v.len() != grid.n_steps() + 1 {
        return Err(Error::GridMismatch {
            expected: grid.n_steps() + 1,
            found: path.v.len(),
        });
    }
    let (fc_nodes, _) = f_c.stage_values(grid)?;
    let (fd_nodes, _) = f_d.stage_values(grid)?;
    Ok(log_likelihood_nodes(
        &path.v, &path.y, &fc_nodes, &fd_nodes, p, grid,
    ))
}

pub(crate) fn log_likelihood_nodes(
    v: &[f64],
    y: &[f64],
    fc_nodes: &[f64],
    fd_nodes: &[f64],
    p: &ModelParams,
    grid: &TimeGrid,
) -> f64 {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let drift = fc_nodes[k] * y[k] + fd_nodes[k];
        let dy = y[k + 1] - y[k];
        terms.push(drift * dy - v[k] * drift * dt - 0.5 * drift * drift * dt);
    }
    math::pairwise_sum(&terms) / (p.sigma_w * p.sigma_w)
}

/// Drift-substituted form of the statistic: the stochastic integral replaced
/// by the realized control drift, leaving
/// `1/sigma_w^2 sum [ (f_c Y + f_d) beta - 1/2 (f_c Y + f_d)^2 ] dt`.
pub fn drift_form_log_likelihood(
    path: &SinglePath,
    f_c: &Pattern,
    f_d: &Pattern,
    p: &ModelParams,
    grid: &TimeGrid,
) -> Result<f64> {
    let (fc_nodes, _) = f_c.stage_values(grid)?;
    let (fd_nodes, _) = f_d.stage_values(grid)?;
    Ok(drift_form_log_likelihood_nodes(
        &path.y, &path.beta, &fc_nodes, &fd_nodes, p, grid,
    ))
}

pub(crate) fn drift_form_log_likelihood_nodes(
    y: &[f64],
    beta: &[f64],
    fc_nodes: &[f64],
    fd_nodes: &[f64],
    p: &ModelParams,
    grid: &TimeGrid,
) -> f64 {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let drift = fc_nodes[k] * y[k] + fd_nodes[k];
        terms.push((drift * beta[k] - 0.5 * drift * drift) * dt);
    }
    math::pairwise_sum(&terms) / (p.sigma_w * p.sigma_w)
}

/// Both Monte Carlo estimators of the expected log-likelihood ratio and the
/// per-path gap between them (a zero-mean martingale term).
#[derive(Debug, Clone, Copy)]
pub struct LogLikelihoodEstimates {
    pub pathwise: CostEstimate,
    pub drift_form: CostEstimate,
    pub martingale_gap: CostEstimate,
}

impl LogLikelihoodEstimates {
    /// True when the two estimators agree within `k` standard errors of
    /// their per-path difference.
    pub fn estimators_agree(&self, k: f64) -> bool {
        let tol = k * self.martingale_gap.stderr + 1e-12;
        math::abs(self.martingale_gap.mean) <= tol
    }
}

/// Monte Carlo expectation of the statistic over an ensemble, reported via
/// both estimators.
pub fn expected_log_l_mc(
    e: &PathEnsemble,
    f_c: &Pattern,
    f_d: &Pattern,
    p: &ModelParams,
) -> Result<LogLikelihoodEstimates> {
    let grid = e.grid();
    let (fc_nodes, _) = f_c.stage_values(grid)?;
    let (fd_nodes, _) = f_d.stage_values(grid)?;
    let mut pathwise = Vec::with_capacity(e.n_paths());
    let mut drift_form = Vec::with_capacity(e.n_paths());
    let mut gap = Vec::with_capacity(e.n_paths());
    for path in e.paths() {
        let lp = log_likelihood_nodes(&path.v, &path.y, &fc_nodes, &fd_nodes, p, grid);
        let ld = drift_form_log_likelihood_nodes(&path.y, &path.beta, &fc_nodes, &fd_nodes, p, grid);
        pathwise.push(lp);
        drift_form.push(ld);
        gap.push(lp - ld);
    }
    Ok(LogLikelihoodEstimates {
        pathwise: CostEstimate::from_samples(&pathwise),
        drift_form: CostEstimate::from_samples(&drift_form),
        martingale_gap: CostEstimate::from_samples(&gap),
    })
}

/// Second moments `h20 = E[V^2]`, `h11 = E[V Y]`, `h02 = E[Y^2]` of the
/// closed-loop dynamics on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectories {
    grid: TimeGrid,
    pub h20: Vec<f64>,
    pub h11: Vec<f64>,
    pub h02: Vec<f64>,
}

impl MomentTrajectories {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Largest Cauchy-Schwarz violation `h11^2 - h20 h02` over the grid,
    /// normalized by `1 + h20 h02`.
    pub fn max_cauchy_schwarz_violation(&self) -> f64 {
        let mut worst = f64::MIN;
        for k in 0..self.h20.len() {
            let prod = self.h20[k] * self.h02[k];
            let viol = (self.h11[k] * self.h11[k] - prod) / (1.0 + prod);
            if viol > worst {
                worst = viol;
            }
        }
        worst
    }

    pub fn invariants_hold(&self, tol: f64) -> bool {
        self.max_cauchy_schwarz_violation() <= tol
            && self.h20.iter().all(|&x| x >= 0.0)
            && self.h02.iter().all(|&x| x >= 0.0)
    }
}

/// Time derivatives of `(h20, h11, h02)` given the quadratic coefficients.
#[inline]
pub(crate) fn moment_rhs(
    c: &RhsConsts,
    h20: f64,
    h11: f64,
    h02: f64,
    mu: f64,
    eta: f64,
    rho: f64,
    f_c: f64,
) -> [f64; 3] {
    let closure = c.gain * f_c - rho * c.inv_r_beta;
    let d20 = -2.0 * mu * c.inv_r_alpha * h20 - 2.0 * eta * c.inv_r_alpha * h11 + c.sigma_b_sq;
    let d11 = (closure - mu * c.inv_r_alpha) * h11 + (1.0 - eta * c.inv_r_beta) * h20
        - eta * c.inv_r_alpha * h02;
    let d02 = 2.0 * (1.0 - eta * c.inv_r_beta) * h11 + 2.0 * closure * h02 + c.sigma_w_sq;
    [d20, d11, d02]
}

const SIMPLIFIED_TOL: f64 = 1e-9;

/// RK4 forward integration of the moment system from the deterministic
/// initial conditions `(V0^2, V0 Y0, Y0^2)`.
///
/// Requires coefficients from the simplified setting (`gamma` and `theta`
/// identically zero); the analytic statistic below is only derived there.
pub fn solve_moments(
    p: &ModelParams,
    coeffs: &RiccatiCoeffs,
    f_c: &Pattern,
    grid: &TimeGrid,
) -> Result<MomentTrajectories> {
    let max_gamma = math::max_abs(&coeffs.gamma);
    let max_theta = math::max_abs(&coeffs.theta);
    if max_gamma > SIMPLIFIED_TOL || max_theta > SIMPLIFIED_TOL {
        return Err(Error::NotSimplified {
            max_abs_gamma: max_gamma,
            max_abs_theta: max_theta,
        });
    }
    if coeffs.grid() != grid {
        return Err(Error::GridMismatch {
            expected: grid.n_steps() + 1,
            found: coeffs.grid().n_steps() + 1,
        });
    }
    let c = RhsConsts::new(p);
    let (fc_n, fc_h) = f_c.stage_values(grid)?;
    let n = grid.n_steps();
    let dt = grid.dt();

    let mut h20 = Vec::with_capacity(n + 1);
    let mut h11 = Vec::with_capacity(n + 1);
    let mut h02 = Vec::with_capacity(n + 1);
    h20.push(p.v0 * p.v0);
    h11.push(p.v0 * p.y0);
    h02.push(p.y0 * p.y0);

    let mut m = [p.v0 * p.v0, p.v0 * p.y0, p.y0 * p.y0];
    for k in 0..n {
        let zk = [coeffs.mu[k], coeffs.eta[k], coeffs.rho[k]];
        let zk1 = [coeffs.mu[k + 1], coeffs.eta[k + 1], coeffs.rho[k + 1]];
        let zh = [
            0.5 * (zk[0] + zk1[0]),
            0.5 * (zk[1] + zk1[1]),
            0.5 * (zk[2] + zk1[2]),
        ];
        let k1 = moment_rhs(&c, m[0], m[1], m[2], zk[0], zk[1], zk[2], fc_n[k]);
        let m2 = [
            m[0] + 0.5 * dt * k1[0],
            m[1] + 0.5 * dt * k1[1],
            m[2] + 0.5 * dt * k1[2],
        ];
        let k2 = moment_rhs(&c, m2[0], m2[1], m2[2], zh[0], zh[1], zh[2], fc_h[k]);
        let m3 = [
            m[0] + 0.5 * dt * k2[0],
            m[1] + 0.5 * dt * k2[1],
            m[2] + 0.5 * dt * k2[2],
        ];
        let k3 = moment_rhs(&c, m3[0], m3[1], m3[2], zh[0], zh[1], zh[2], fc_h[k]);
        let m4 = [m[0] + dt * k3[0], m[1] + dt * k3[1], m[2] + dt * k3[2]];
        let k4 = moment_rhs(&c, m4[0], m4[1], m4[2], zk1[0], zk1[1], zk1[2], fc_n[k + 1]);
        for i in 0..3 {
            m[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !m[i].is_finite() {
                return Err(Error::NonFinite {
                    context: "moment integration",
                    step: k,
                    path: None,
                });
            }
        }
        h20.push(m[0]);
        h11.push(m[1]);
        h02.push(m[2]);
    }

    Ok(MomentTrajectories {
        grid: grid.clone(),
        h20,
        h11,
        h02,
    })
}

/// Node values of the analytic integrand
/// `1/sigma_w^2 [ (-eta h11 - rho h02)/r_beta f_c
///   + (lambda/(r_beta sigma_w^2) - 1/2) h02 f_c^2 ]`.
pub(crate) fn analytic_integrand_nodes(
    m: &MomentTrajectories,
    coeffs: &RiccatiCoeffs,
    fc_nodes: &[f64],
    p: &ModelParams,
) -> Vec<f64> {
    let c = RhsConsts::new(p);
    let inv_sw2 = 1.0 / c.sigma_w_sq;
    let quad_coeff = c.gain - 0.5;
    let n = m.h20.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let linear = (-coeffs.eta[k] * m.h11[k] - coeffs.rho[k] * m.h02[k]) * c.inv_r_beta;
        out.push(inv_sw2 * (linear * fc_nodes[k] + quad_coeff * m.h02[k] * fc_nodes[k] * fc_nodes[k]));
    }
    out
}

/// Analytic expected log-likelihood ratio in the simplified setting:
/// trapezoidal quadrature of the moment-driven integrand.
pub fn expected_log_l_analytic(
    m: &MomentTrajectories,
    coeffs: &RiccatiCoeffs,
    f_c: &Pattern,
    p: &ModelParams,
) -> Result<f64> {
    let (fc_nodes, _) = f_c.stage_values(m.grid())?;
    let integrand = analytic_integrand_nodes(m, coeffs, &fc_nodes, p);
    Ok(math::trapezoid(&integrand, m.grid().dt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::ControlLaw;
    use crate::riccati::solve_backward;
    use crate::simulate::{simulate_paths, simulate_single};

    fn params_b(lambda: f64) -> ModelParams {
        ModelParams {
            horizon: 0.1,
            sigma_b: 0.1,
            sigma_w: 0.1,
            r_alpha: 1.0,
            r_beta: 10.0,
            r_v: 1.0,
            t_v: 1.0,
            vbar_terminal: 0.0,
            lambda,
            v0: 1.0,
            y0: 2.0,
        }
    }

    fn simplified_law(p: ModelParams, f_c: Pattern, grid: &TimeGrid) -> ControlLaw {
        let f_d = Pattern::zero(grid);
        let vbar = Pattern::zero(grid);
        ControlLaw::new(p, f_c, f_d, &vbar, grid).unwrap()
    }

    #[test]
    fn null_patterns_zero_the_statistic_on_every_path() {
        let p = params_b(0.05);
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let f_c = Pattern::zero(&grid);
        let law = simplified_law(p, f_c.clone(), &grid);
        let f_d = Pattern::zero(&grid);
        let e = simulate_paths(&law, 20, 7).unwrap();
        for path in e.paths() {
            assert_eq!(log_likelihood_path(path, &f_c, &f_d, &p, &grid).unwrap(), 0.0);
        }
        let est = expected_log_l_mc(&e, &f_c, &f_d, &p).unwrap();
        assert_eq!(est.pathwise.mean, 0.0);
        assert_eq!(est.pathwise.stderr, 0.0);
        assert_eq!(est.drift_form.mean, 0.0);
    }

    #[test]
    fn deterministic_path_statistic_matches_direct_quadrature() {
        // The law is built from valid noisy parameters, but the path is
        // generated with both volatilities zeroed, so dY = (V + beta) dt
        // exactly and the statistic reduces to the drift-form quadrature
        // evaluated with the parameter sigma_w.
        let p = params_b(0.05);
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let f_c = Pattern::constant(0.8, &grid).unwrap();
        let law = simplified_law(p, f_c.clone(), &grid);
        let mut p_sim = p;
        p_sim.sigma_b = 0.0;
        p_sim.sigma_w = 0.0;
        let path = simulate_single(&law, &p_sim, &grid, 3, 0).unwrap();

        let f_d = Pattern::zero(&grid);
        let stat = log_likelihood_path(&path, &f_c, &f_d, &p, &grid).unwrap();

        // direct left-endpoint quadrature oracle
        let dt = grid.dt();
        let mut want = 0.0;
        for k in 0..grid.n_steps() {
            let drift = 0.8 * path.y[k];
            want += (drift * path.beta[k] - 0.5 * drift * drift) * dt;
        }
        want /= p.sigma_w * p.sigma_w;
        assert!(
            (stat - want).abs() <= 1e-9 * (1.0 + want.abs()),
            "{stat} vs {want}"
        );
    }

    #[test]
    fn estimators_agree_within_combined_stderr() {
        let p = params_b(0.05);
        let grid = TimeGrid::new(p.horizon, 500).unwrap();
        let f_c = Pattern::constant(1.0, &grid).unwrap();
        let law = simplified_law(p, f_c.clone(), &grid);
        let f_d = Pattern::zero(&grid);
        let e = simulate_paths(&law, 2000, 99).unwrap();
        let est = expected_log_l_mc(&e, &f_c, &f_d, &p).unwrap();
        assert!(
            est.estimators_agree(3.0),
            "gap {} vs stderr {}",
            est.martingale_gap.mean,
            est.martingale_gap.stderr
        );
    }

    #[test]
    fn moments_start_at_deterministic_initials() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let f_c = Pattern::constant(1.0, &grid).unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let coeffs = solve_backward(&p, &f_c, &f_d, &vbar, &grid).unwrap();
        let m = solve_moments(&p, &coeffs, &f_c, &grid).unwrap();
        // V0 = 1, Y0 = 2 -> (1, 2, 4)
        assert_eq!(m.h20[0], 1.0);
        assert_eq!(m.h11[0], 2.0);
        assert_eq!(m.h02[0], 4.0);
        assert!(m.invariants_hold(1e-8));
    }

    #[test]
    fn driftless_moments_follow_closed_form() {
        // Zero coefficients and zero volatilities: h20 stays at V0^2 and
        // h02 grows as (Y0 + V0 t)^2. RK4 integrates these quadratics
        // exactly. The moment solver takes parameters as given.
        let mut p = params_b(0.0);
        p.sigma_b = 0.0;
        p.sigma_w = 0.0;
        let grid = TimeGrid::new(p.horizon, 50).unwrap();
        let f_c = Pattern::zero(&grid);
        let zeros = alloc::vec![0.0; grid.n_steps() + 1];
        let coeffs = RiccatiCoeffs::from_parts(
            grid.clone(),
            zeros.clone(),
            zeros.clone(),
            zeros.clone(),
            zeros.clone(),
            zeros.clone(),
            zeros,
        )
        .unwrap();
        let m = solve_moments(&p, &coeffs, &f_c, &grid).unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            let y_mean = p.y0 + p.v0 * t;
            assert!((m.h20[k] - p.v0 * p.v0).abs() < 1e-12);
            assert!((m.h02[k] - y_mean * y_mean).abs() < 1e-10);
            assert!((m.h11[k] - p.v0 * y_mean).abs() < 1e-11);
        }
    }

    #[test]
    fn solve_moments_rejects_non_simplified_coefficients() {
        let p = ModelParams {
            horizon: 1.0,
            sigma_b: 0.25,
            sigma_w: 0.25,
            r_alpha: 1.0,
            r_beta: 10.0,
            r_v: 1.0,
            t_v: 1.0,
            vbar_terminal: 1.0, // nonzero target -> gamma not identically 0
            lambda: 0.075,
            v0: 2.0,
            y0: 4.0,
        };
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let f_c = Pattern::constant(0.5, &grid).unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let coeffs = solve_backward(&p, &f_c, &f_d, &vbar, &grid).unwrap();
        assert!(matches!(
            solve_moments(&p, &coeffs, &f_c, &grid),
            Err(Error::NotSimplified { .. })
        ));
    }

    #[test]
    fn analytic_statistic_vanishes_for_null_pattern() {
        let p = params_b(0.05);
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let f_c = Pattern::zero(&grid);
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let coeffs = solve_backward(&p, &f_c, &f_d, &vbar, &grid).unwrap();
        let m = solve_moments(&p, &coeffs, &f_c, &grid).unwrap();
        assert_eq!(expected_log_l_analytic(&m, &coeffs, &f_c, &p).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_coefficient_sign_tracks_lambda_threshold() {
        // The f_c^2 weight is (lambda/(r_beta sigma_w^2) - 1/2) h02:
        // negative exactly when lambda < r_beta sigma_w^2 / 2 (here 0.05).
        let grid = TimeGrid::new(0.1, 100).unwrap();
        let f_c = Pattern::constant(1.0, &grid).unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        for (lambda, negative) in [(0.02, true), (0.049, true), (0.051, false), (0.1, false)] {
            let p = params_b(lambda);
            let coeffs = solve_backward(&p, &f_c, &f_d, &vbar, &grid).unwrap();
            let m = solve_moments(&p, &coeffs, &f_c, &grid).unwrap();
            let gain = p.lambda / (p.r_beta * p.sigma_w * p.sigma_w);
            let coeff = (gain - 0.5) * m.h02[50];
            assert_eq!(coeff < 0.0, negative, "lambda {lambda} coeff {coeff}");
            assert!(m.h02[50] > 0.0);
        }
    }

    #[test]
    fn analytic_matches_monte_carlo() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 500).unwrap();
        let f_c = Pattern::constant(1.0, &grid).unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let coeffs = solve_backward(&p, &f_c, &f_d, &vbar, &grid).unwrap();
        let m = solve_moments(&p, &coeffs, &f_c, &grid).unwrap();
        let analytic = expected_log_l_analytic(&m, &coeffs, &f_c, &p).unwrap();

        let law = simplified_law(p, f_c.clone(), &grid);
        let e = simulate_paths(&law, 4000, 2024).unwrap();
        let est = expected_log_l_mc(&e, &f_c, &f_d, &p).unwrap();
        let tol = 3.0 * est.pathwise.stderr;
        assert!(
            (est.pathwise.mean - analytic).abs() <= tol,
            "pathwise {} vs analytic {analytic} (tol {tol})",
            est.pathwise.mean
        );
        let tol = 3.0 * est.drift_form.stderr;
        assert!(
            (est.drift_form.mean - analytic).abs() <= tol,
            "drift form {} vs analytic {analytic} (tol {tol})",
            est.drift_form.mean
        );
    }
}

//! Runtime property checks: structural identities of the solution are
//! measured and reported, so both the test suite and the CLI validation
//! runner exercise a single implementation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::controls::{running_cost_h, ControlLaw};
use crate::model::{ModelParams, Pattern, PatternKind, TimeGrid};
use crate::riccati::{baseline_check, riccati_rhs, solve_backward, RiccatiCoeffs};
use crate::rng;
use crate::sht::{expected_log_l_analytic, solve_moments, MomentTrajectories};
use crate::simulate::blue_mc_stats;
use crate::{math, Result};

/// Outcome of one measured property.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, bound: f64, detail: String) -> Self {
        CheckResult {
            name: String::from(name),
            passed: measured <= bound,
            measured,
            bound,
            detail,
        }
    }
}

/// Decoupling checks: with the intensity at zero, or with null patterns,
/// the cross coefficients vanish and so does the realized beta control on
/// every simulated path.
pub fn corollary_nullity(
    p: &ModelParams,
    f_c_kind: &PatternKind,
    vbar_kind: &PatternKind,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let vbar = Pattern::from_kind(vbar_kind, grid, "vbar")?;
    let mut out = Vec::new();

    // Case 1: lambda = 0 with a nonzero test pattern.
    let mut p0 = *p;
    p0.lambda = 0.0;
    let f_c = Pattern::from_kind(f_c_kind, grid, "f_c")?;
    let f_d = Pattern::zero(grid);
    out.push(nullity_case(
        "corollary_nullity_lambda_zero",
        p0,
        f_c,
        f_d,
        &vbar,
        grid,
        n_paths,
        seed,
    )?);

    // Case 2: null patterns with the configured lambda.
    let f_c = Pattern::zero(grid);
    let f_d = Pattern::zero(grid);
    out.push(nullity_case(
        "corollary_nullity_null_patterns",
        *p,
        f_c,
        f_d,
        &vbar,
        grid,
        n_paths,
        seed + 1,
    )?);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn nullity_case(
    name: &str,
    p: ModelParams,
    f_c: Pattern,
    f_d: Pattern,
    vbar: &Pattern,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CheckResult> {
    let law = ControlLaw::new(p, f_c, f_d, vbar, grid)?;
    let coeffs = law.coeffs();
    let coeff_sup = math::max_abs(&coeffs.eta)
        .max(math::max_abs(&coeffs.rho))
        .max(math::max_abs(&coeffs.theta));
    let stats = blue_mc_stats(&law, vbar, n_paths, seed)?;
    let measured = coeff_sup.max(stats.max_abs_beta);
    let detail = format!(
        "max(|eta|,|rho|,|theta|) = {coeff_sup:.3e}, max|beta_used| = {:.3e} over {n_paths} paths",
        stats.max_abs_beta
    );
    debug_assert!(baseline_check(coeffs, 1e-9) == (coeff_sup <= 1e-9));
    Ok(CheckResult::new(name, measured, 1e-9, detail))
}

/// Residual of the dynamic-programming identity at random interior points:
/// the time derivative comes from the coefficient ODE right-hand side, the
/// spatial derivatives from the quadratic ansatz, and the integrand from the
/// combined running cost at the optimal controls.
pub fn hjb_residual(
    law: &ControlLaw,
    vbar: &Pattern,
    n_points: usize,
    seed: u64,
) -> Result<CheckResult> {
    let p = law.params();
    let grid = law.grid();
    let dt = grid.dt();
    let horizon = grid.horizon();
    let mut worst_ratio = 0.0f64;
    let mut worst_detail = String::new();
    for i in 0..n_points {
        let t = rng::uniform(seed, i as u64, 0, 2, dt, horizon - dt);
        let v = rng::uniform(seed, i as u64, 0, 3, p.v0 - 3.0, p.v0 + 3.0);
        let y = rng::uniform(seed, i as u64, 0, 4, p.y0 - 3.0, p.y0 + 3.0);
        let s = law.coeffs().interpolate(t)?;
        let x = [s.mu, s.eta, s.rho, s.gamma, s.theta, s.xi];
        let xdot = riccati_rhs(t, &x, p, law.f_c(), law.f_d(), vbar)?;
        let dt_value = 0.5 * xdot[0] * v * v
            + xdot[1] * v * y
            + 0.5 * xdot[2] * y * y
            + xdot[3] * v
            + xdot[4] * y
            + xdot[5];
        let dv = s.mu * v + s.eta * y + s.gamma;
        let dy = s.eta * v + s.rho * y + s.theta;
        let alpha = law.alpha_hat(t, v, y)?;
        let beta = law.beta_hat(t, v, y)?;
        let h = running_cost_h(p, law.f_c(), law.f_d(), vbar, t, v, y, alpha, beta)?;
        let residual = dt_value
            + alpha * dv
            + (v + beta) * dy
            + 0.5 * p.sigma_b * p.sigma_b * s.mu
            + 0.5 * p.sigma_w * p.sigma_w * s.rho
            + h;
        let bound = 5.0 * dt * (1.0 + math::abs(law.value_function(t, v, y)?));
        let ratio = math::abs(residual) / bound;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_detail = format!(
                "worst at (t={t:.4}, v={v:.3}, y={y:.3}): residual {residual:.3e}, bound {bound:.3e}"
            );
        }
    }
    Ok(CheckResult::new(
        "hjb_residual",
        worst_ratio,
        1.0,
        worst_detail,
    ))
}

/// Pointwise minimality of the optimal controls inside the dynamic-
/// programming integrand: any perturbation must not decrease it.
pub fn pointwise_minimality(
    law: &ControlLaw,
    vbar: &Pattern,
    n_points: usize,
    seed: u64,
) -> Result<CheckResult> {
    let p = law.params();
    let grid = law.grid();
    let dt = grid.dt();
    let horizon = grid.horizon();
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    for i in 0..n_points {
        let t = rng::uniform(seed, i as u64, 1, 2, dt, horizon - dt);
        let v = rng::uniform(seed, i as u64, 1, 3, p.v0 - 3.0, p.v0 + 3.0);
        let y = rng::uniform(seed, i as u64, 1, 4, p.y0 - 3.0, p.y0 + 3.0);
        let mut da = rng::uniform(seed, i as u64, 1, 5, -1.0, 1.0);
        let mut db = rng::uniform(seed, i as u64, 1, 6, -1.0, 1.0);
        if math::abs(da) < 1e-3 && math::abs(db) < 1e-3 {
            da = 0.1;
            db = -0.1;
        }
        let s = law.coeffs().interpolate(t)?;
        let dv = s.mu * v + s.eta * y + s.gamma;
        let dy = s.eta * v + s.rho * y + s.theta;
        let alpha = law.alpha_hat(t, v, y)?;
        let beta = law.beta_hat(t, v, y)?;
        let integrand = |a: f64, b: f64| -> Result<f64> {
            Ok(a * dv
                + (v + b) * dy
                + running_cost_h(p, law.f_c(), law.f_d(), vbar, t, v, y, a, b)?)
        };
        let at_opt = integrand(alpha, beta)?;
        let perturbed = integrand(alpha + da, beta + db)?;
        let increase = perturbed - at_opt;
        let floor = -1e-10 * (1.0 + math::abs(at_opt));
        let margin = increase - floor;
        if margin < worst {
            worst = margin;
            detail = format!(
                "tightest at (t={t:.4}): increase {increase:.3e} for (da={da:.3}, db={db:.3})"
            );
        }
    }
    // measured is the worst violation (positive when some point decreased)
    let measured = if worst < 0.0 { -worst } else { 0.0 };
    Ok(CheckResult::new(
        "pointwise_minimality",
        measured,
        0.0,
        detail,
    ))
}

/// Step-halving checks on the backward solve. The configured patterns are
/// reused as-is on the refined grids (their piecewise-linear graph is the
/// coefficient function being integrated, and its kinks stay aligned with
/// every refined step), so the measurement isolates the integrator.
///
/// Two results: drift of the initial values between the configured grid and
/// its halving (must stay within 1e-8 relative — coarse grids fail this),
/// and the error-decay ratio per halving against a doubly refined reference
/// (fourth order puts it in [12, 20] wherever the errors are measurable).
pub fn step_halving(
    p: &ModelParams,
    f_c: &Pattern,
    f_d: &Pattern,
    vbar: &Pattern,
    grid: &TimeGrid,
) -> Result<Vec<CheckResult>> {
    let config_n = grid.n_steps();
    let solve_at = |n: usize| -> Result<RiccatiCoeffs> {
        let fine = TimeGrid::new(p.horizon, n)?;
        solve_backward(p, f_c, f_d, vbar, &fine)
    };
    let initials = |s: &RiccatiCoeffs| -> [f64; 6] {
        [
            s.mu[0], s.eta[0], s.rho[0], s.gamma[0], s.theta[0], s.xi[0],
        ]
    };

    let s1 = initials(&solve_at(config_n)?);
    let s2 = initials(&solve_at(2 * config_n)?);
    let s4 = initials(&solve_at(4 * config_n)?);

    let mut rel = 0.0f64;
    for i in 0..6 {
        rel = rel.max(math::abs(s1[i] - s2[i]) / (1.0 + math::abs(s2[i])));
    }
    let mut out = Vec::new();
    out.push(CheckResult::new(
        "step_halving_agreement",
        rel,
        1e-8,
        format!(
            "relative initial-value drift between n = {config_n} and n = {}",
            2 * config_n
        ),
    ));

    let mut ratios = Vec::new();
    for i in 0..6 {
        let e1 = math::abs(s1[i] - s4[i]);
        let e2 = math::abs(s2[i] - s4[i]);
        // skip components whose refinement error sits at roundoff
        if e2 > 1e-12 * (1.0 + math::abs(s4[i])) {
            ratios.push(e1 / e2);
        }
    }
    let (passed, measured, detail) = if ratios.is_empty() {
        (
            true,
            16.0,
            String::from("refinement errors below measurable resolution"),
        )
    } else {
        let worst = ratios.iter().copied().fold(16.0f64, |acc, r| {
            if math::abs(r - 16.0) > math::abs(acc - 16.0) {
                r
            } else {
                acc
            }
        });
        let ok = ratios.iter().all(|r| (12.0..=20.0).contains(r));
        (ok, worst, format!("per-halving ratios at n = {config_n}: {ratios:?}"))
    };
    out.push(CheckResult {
        name: String::from("step_halving_order"),
        passed,
        measured,
        bound: 20.0,
        detail,
    });
    Ok(out)
}

/// Agreement of the three statistic routes: pathwise Monte Carlo, drift-form
/// Monte Carlo, and the analytic moment quadrature (simplified setting).
pub fn consistency_triangle(
    p: &ModelParams,
    f_c_kind: &PatternKind,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CheckResult> {
    let f_c = Pattern::from_kind(f_c_kind, grid, "f_c")?;
    let f_d = Pattern::zero(grid);
    let vbar = Pattern::zero(grid);
    let law = ControlLaw::new(*p, f_c.clone(), f_d, &vbar, grid)?;
    let moments = solve_moments(p, law.coeffs(), &f_c, grid)?;
    let analytic = expected_log_l_analytic(&moments, law.coeffs(), &f_c, p)?;
    let stats = blue_mc_stats(&law, &vbar, n_paths, seed)?;
    let log_l = &stats.log_l;

    let dev = |gap: f64, se: f64| math::abs(gap) / (3.0 * se + 1e-12);
    let d1 = dev(log_l.pathwise.mean - analytic, log_l.pathwise.stderr);
    let d2 = dev(log_l.drift_form.mean - analytic, log_l.drift_form.stderr);
    let d3 = dev(log_l.martingale_gap.mean, log_l.martingale_gap.stderr);
    let measured = d1.max(d2).max(d3);
    let detail = format!(
        "analytic {analytic:.4}, pathwise {:.4} (se {:.4}), drift {:.4} (se {:.4}), gap {:.2e}",
        log_l.pathwise.mean,
        log_l.pathwise.stderr,
        log_l.drift_form.mean,
        log_l.drift_form.stderr,
        log_l.martingale_gap.mean
    );
    Ok(CheckResult::new(
        "consistency_triangle",
        measured,
        1.0,
        detail,
    ))
}

/// Moment invariants: Cauchy-Schwarz with the stated tolerance and
/// nonnegativity of both pure second moments.
pub fn moment_invariants(m: &MomentTrajectories) -> CheckResult {
    let violation = m.max_cauchy_schwarz_violation();
    let nonneg = m.h20.iter().all(|&x| x >= 0.0) && m.h02.iter().all(|&x| x >= 0.0);
    let measured = if nonneg { violation } else { f64::INFINITY };
    CheckResult::new(
        "moment_invariants",
        measured.max(0.0),
        1e-8,
        format!("max normalized Cauchy-Schwarz violation {violation:.3e}, nonnegative: {nonneg}"),
    )
}

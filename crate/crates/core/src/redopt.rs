//! Leader-side pattern optimization: minimize the expected log-likelihood
//! ratio produced by the follower's best response, plus a trust-region
//! penalty that keeps the instilled pattern close to the one currently in
//! use.
//!
//! Three minimizers are provided and cross-checked: pointwise fixed-point
//! iteration (FPI), a forward-backward sweep driven by the exact discrete
//! adjoint of the objective evaluation (FBS), and gradient descent on a
//! low-dimensional basis expansion (GD). All run in the simplified setting
//! `f_d ≡ 0`, `v̄ ≡ 0`, `v̄_T = 0`.

mod adjoint;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::model::{validate_params, ModelParams, Pattern, TimeGrid};
use crate::riccati::{solve_backward, RhsConsts, RiccatiCoeffs};
use crate::sht::{expected_log_l_analytic, solve_moments, MomentTrajectories};
use crate::{Error, Result};

/// Positivity floor for log-barrier iterates.
const KL_FLOOR: f64 = 1e-8;

/// Half-width of the safeguarded search interval used when the pointwise
/// problem loses convexity.
const SAFEGUARD_HALF_WIDTH: f64 = 10.0;

/// Trust-region penalty choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// Integral of `(f - f_init)^2`.
    Quadratic,
    /// Integral of `f_init log(f_init / f)`; needs strictly positive `f`.
    KlLog,
}

impl PenaltyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Quadratic => "quadratic",
            PenaltyKind::KlLog => "kl_log",
        }
    }
}

/// Penalty specification: kind, anchor pattern, and intensity.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub f_init: Pattern,
    pub lambda_reg: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, f_init: Pattern, lambda_reg: f64) -> Result<Self> {
        if !(lambda_reg.is_finite() && lambda_reg >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda_reg",
                message: format!("must be finite and nonnegative, got {lambda_reg}"),
            });
        }
        if kind == PenaltyKind::KlLog {
            require_positive(&f_init)?;
        }
        Ok(PenaltySpec {
            kind,
            f_init,
            lambda_reg,
        })
    }
}

fn require_positive(f: &Pattern) -> Result<()> {
    let n = f.n_steps();
    for (k, &v) in f.values().iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonPositivePattern {
                t: f.horizon() * k as f64 / n as f64,
                value: v,
            });
        }
    }
    Ok(())
}

/// Trapezoidal penalty value.
pub fn penalty_value(f_c: &Pattern, spec: &PenaltySpec) -> Result<f64> {
    if f_c.values().len() != spec.f_init.values().len() {
        return Err(Error::GridMismatch {
            expected: spec.f_init.values().len(),
            found: f_c.values().len(),
        });
    }
    let n = f_c.n_steps();
    let dt = f_c.horizon() / n as f64;
    let mut integrand = Vec::with_capacity(n + 1);
    match spec.kind {
        PenaltyKind::Quadratic => {
            for (v, v0) in f_c.values().iter().zip(spec.f_init.values()) {
                let d = v - v0;
                integrand.push(d * d);
            }
        }
        PenaltyKind::KlLog => {
            require_positive(f_c)?;
            for (v, v0) in f_c.values().iter().zip(spec.f_init.values()) {
                integrand.push(v0 * math::ln(v0 / v));
            }
        }
    }
    Ok(math::trapezoid(&integrand, dt))
}

/// Derivative of the penalty integrand in `f`.
#[inline]
pub(crate) fn penalty_derivative(kind: PenaltyKind, f: f64, f_init: f64) -> f64 {
    match kind {
        PenaltyKind::Quadratic => 2.0 * (f - f_init),
        PenaltyKind::KlLog => -f_init / f,
    }
}

/// Which minimizer produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedMethod {
    Fpi,
    Fbs,
    Gd,
}

impl RedMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RedMethod::Fpi => "fpi",
            RedMethod::Fbs => "fbs",
            RedMethod::Gd => "gd",
        }
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct RedResult {
    pub f_hat: Pattern,
    pub objective: f64,
    pub expected_log_l: f64,
    pub penalty: f64,
    pub method: RedMethod,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// One full objective evaluation: best-response solve, moment solve,
/// analytic statistic, penalty.
pub(crate) struct RedEval {
    pub coeffs: RiccatiCoeffs,
    pub moments: MomentTrajectories,
    pub expected_log_l: f64,
    pub penalty: f64,
    pub objective: f64,
}

fn check_simplified(p: &ModelParams) -> Result<ModelParams> {
    let p = validate_params(*p)?;
    if p.vbar_terminal != 0.0 {
        return Err(Error::InvalidParameter {
            name: "vbar_terminal",
            message: format!(
                "pattern optimization runs in the simplified setting; expected 0, got {}",
                p.vbar_terminal
            ),
        });
    }
    Ok(p)
}

pub(crate) fn evaluate_red(
    f_c: &Pattern,
    p: &ModelParams,
    spec: &PenaltySpec,
    grid: &TimeGrid,
) -> Result<RedEval> {
    let p = check_simplified(p)?;
    let zero = Pattern::zero(grid);
    let coeffs = solve_backward(&p, f_c, &zero, &zero, grid)?;
    let moments = solve_moments(&p, &coeffs, f_c, grid)?;
    let expected_log_l = expected_log_l_analytic(&moments, &coeffs, f_c, &p)?;
    let penalty = penalty_value(f_c, spec)?;
    let objective = expected_log_l + spec.lambda_reg / (p.sigma_w * p.sigma_w) * penalty;
    Ok(RedEval {
        coeffs,
        moments,
        expected_log_l,
        penalty,
        objective,
    })
}

/// The full bilevel objective: the follower's best response is embedded via
/// the backward coefficient solve, the statistic is evaluated analytically
/// through the moment system, and the trust-region penalty is added.
pub fn red_objective(
    f_c: &Pattern,
    p: &ModelParams,
    spec: &PenaltySpec,
    grid: &TimeGrid,
) -> Result<f64> {
    Ok(evaluate_red(f_c, p, spec, grid)?.objective)
}

/// Expected log-likelihood ratio at the unit reference pattern; used to
/// pin down unreported intensity values.
pub fn baseline_expected_log_l(p: &ModelParams, grid: &TimeGrid) -> Result<f64> {
    let p = check_simplified(p)?;
    let ones = Pattern::constant(1.0, grid)?;
    let zero = Pattern::zero(grid);
    let coeffs = solve_backward(&p, &ones, &zero, &zero, grid)?;
    let moments = solve_moments(&p, &coeffs, &ones, grid)?;
    expected_log_l_analytic(&moments, &coeffs, &ones, &p)
}

/// A matched intensity with its baseline statistic.
#[derive(Debug, Clone, Copy)]
pub struct LambdaMatch {
    pub lambda: f64,
    pub baseline: f64,
}

/// Sweeps candidate intensities and returns the first whose baseline
/// statistic (at the unit pattern) lies within `rel_tol` of `target`.
pub fn match_lambda(
    base: &ModelParams,
    candidates: &[f64],
    grid: &TimeGrid,
    target: f64,
    rel_tol: f64,
) -> Result<Option<LambdaMatch>> {
    for &lambda in candidates {
        let mut p = *base;
        p.lambda = lambda;
        let baseline = baseline_expected_log_l(&p, grid)?;
        if math::abs(baseline - target) <= rel_tol * math::abs(target) {
            return Ok(Some(LambdaMatch { lambda, baseline }));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Pointwise scalar minimization
// ---------------------------------------------------------------------------

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..120 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
        if hi - lo < 1e-13 * (1.0 + math::abs(lo) + math::abs(hi)) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizes `c1 f + c2 f^2 + w * penalty(f)` in the scalar `f`. Uses the
/// closed-form stationary point when the total curvature is positive and a
/// safeguarded golden-section search on a trust interval otherwise.
fn pointwise_min(kind: PenaltyKind, c1: f64, c2: f64, w: f64, f_init: f64) -> f64 {
    match kind {
        PenaltyKind::Quadratic => {
            let curvature = 2.0 * c2 + 2.0 * w;
            if curvature > 1e-12 {
                (2.0 * w * f_init - c1) / curvature
            } else {
                let lo = f_init - SAFEGUARD_HALF_WIDTH;
                let hi = f_init + SAFEGUARD_HALF_WIDTH;
                golden_min(lo, hi, |f| {
                    let d = f - f_init;
                    c1 * f + c2 * f * f + w * d * d
                })
            }
        }
        PenaltyKind::KlLog => {
            if c2 > 1e-12 {
                // stationarity: 2 c2 f^2 + c1 f - w f_init = 0, positive root
                let disc = c1 * c1 + 8.0 * c2 * w * f_init;
                let root = (-c1 + math::sqrt(disc)) / (4.0 * c2);
                if root > 0.0 {
                    return root;
                }
            } else if c1 > 1e-12 && w > 0.0 {
                return w * f_init / c1;
            }
            let lo = (f_init - SAFEGUARD_HALF_WIDTH).max(KL_FLOOR);
            let hi = f_init + SAFEGUARD_HALF_WIDTH;
            golden_min(lo, hi, |f| c1 * f + c2 * f * f + w * f_init * math::ln(f_init / f))
        }
    }
}

// ---------------------------------------------------------------------------
// Fixed-point iteration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct FpiOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Convex-combination weight toward the pointwise minimizer, in (0, 1].
    pub damping: f64,
}

impl Default for FpiOptions {
    fn default() -> Self {
        FpiOptions {
            tol: 1e-6,
            max_iter: 500,
            damping: 0.5,
        }
    }
}

fn clip_positive(values: &mut [f64], warned: &mut bool) {
    for v in values {
        if *v < KL_FLOOR {
            if !*warned {
                log::warn!("log-barrier iterate clipped at positivity floor {KL_FLOOR:e}");
                *warned = true;
            }
            *v = KL_FLOOR;
        }
    }
}

fn relative_sup_change(new: &[f64], old: &[f64]) -> f64 {
    let mut diff = 0.0f64;
    for (a, b) in new.iter().zip(old) {
        let d = math::abs(a - b);
        if d > diff {
            diff = d;
        }
    }
    diff / math::max_abs(old).max(1e-8)
}

fn starting_samples(f0: &Pattern, spec: &PenaltySpec, warned: &mut bool) -> Vec<f64> {
    let mut f = f0.values().to_vec();
    if spec.kind == PenaltyKind::KlLog {
        clip_positive(&mut f, warned);
    }
    f
}

/// Fixed-point iteration: solve both ODE systems under the current pattern,
/// minimize the objective integrand pointwise in the pattern value holding
/// the solved trajectories fixed, then take a damped step toward the
/// pointwise minimizer.
pub fn optimize_fpi(
    p: &ModelParams,
    spec: &PenaltySpec,
    f0: &Pattern,
    grid: &TimeGrid,
    opts: FpiOptions,
) -> Result<RedResult> {
    optimize_sweeping(p, spec, f0, grid, opts.tol, opts.max_iter, opts.damping, false)
}

#[derive(Debug, Clone, Copy)]
pub struct FbsOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Convex-combination weight toward the pointwise minimizer, in (0, 1].
    pub relaxation: f64,
}

impl Default for FbsOptions {
    fn default() -> Self {
        FbsOptions {
            tol: 1e-6,
            max_iter: 500,
            relaxation: 0.5,
        }
    }
}

/// Forward-backward sweep: after each state sweep, a costate sweep runs the
/// exact discrete adjoint of the objective evaluation; the pattern update
/// minimizes the pointwise stationarity model built from those costates.
pub fn optimize_fbs(
    p: &ModelParams,
    spec: &PenaltySpec,
    f0: &Pattern,
    grid: &TimeGrid,
    opts: FbsOptions,
) -> Result<RedResult> {
    optimize_sweeping(
        p,
        spec,
        f0,
        grid,
        opts.tol,
        opts.max_iter,
        opts.relaxation,
        true,
    )
}

#[allow(clippy::too_many_arguments)]
fn optimize_sweeping(
    p: &ModelParams,
    spec: &PenaltySpec,
    f0: &Pattern,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
    mix: f64,
    with_costates: bool,
) -> Result<RedResult> {
    let p = check_simplified(p)?;
    if !(0.0 < mix && mix <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "damping",
            message: format!("must lie in (0, 1], got {mix}"),
        });
    }
    let consts = RhsConsts::new(&p);
    let s_w = 1.0 / consts.sigma_w_sq;
    let quad_coeff = consts.gain - 0.5;
    let w_pen = spec.lambda_reg * s_w;
    let f_init = spec.f_init.values();
    let n = grid.n_steps();

    let mut warned = false;
    let mut f = starting_samples(f0, spec, &mut warned);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        let pattern = Pattern::from_samples(f.clone(), grid, f0.label())?;
        let eval = evaluate_red(&pattern, &p, spec, grid)?;
        history.push(eval.objective);

        let costates = if with_costates {
            let (fc_n, fc_h) = pattern.stage_values(grid)?;
            let zs: Vec<[f64; 3]> = (0..=n)
                .map(|k| [eval.coeffs.mu[k], eval.coeffs.eta[k], eval.coeffs.rho[k]])
                .collect();
            let ms: Vec<[f64; 3]> = (0..=n)
                .map(|k| [eval.moments.h20[k], eval.moments.h11[k], eval.moments.h02[k]])
                .collect();
            Some(adjoint::reverse_sweep(
                &p, spec, &zs, &ms, &fc_n, &fc_h, grid.dt(),
            ))
        } else {
            None
        };

        let mut f_new = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let eta = eval.coeffs.eta[k];
            let rho = eval.coeffs.rho[k];
            let h11 = eval.moments.h11[k];
            let h02 = eval.moments.h02[k];
            let a = (-eta * h11 - rho * h02) * consts.inv_r_beta;
            let mut c1 = s_w * a;
            let mut c2 = s_w * quad_coeff * h02;
            if let Some(sweep) = &costates {
                let pz = sweep.costate_z[k];
                let pm = sweep.costate_m[k];
                c1 += consts.gain * (pz[1] * eta + 2.0 * pz[2] * rho + pm[1] * h11 + 2.0 * pm[2] * h02);
                c2 -= consts.source * pz[2];
            }
            let target = pointwise_min(spec.kind, c1, c2, w_pen, f_init[k]);
            f_new.push((1.0 - mix) * f[k] + mix * target);
        }
        if spec.kind == PenaltyKind::KlLog {
            clip_positive(&mut f_new, &mut warned);
        }

        iterations += 1;
        let rel = relative_sup_change(&f_new, &f);
        f = f_new;
        if rel <= tol {
            converged = true;
            break;
        }
    }

    let f_hat = Pattern::from_samples(f, grid, "f_hat")?;
    let eval = evaluate_red(&f_hat, &p, spec, grid)?;
    history.push(eval.objective);
    Ok(RedResult {
        f_hat,
        objective: eval.objective,
        expected_log_l: eval.expected_log_l,
        penalty: eval.penalty,
        method: if with_costates {
            RedMethod::Fbs
        } else {
            RedMethod::Fpi
        },
        iterations,
        converged,
        history,
    })
}

/// Gradient of the objective with respect to the pattern samples, computed
/// by the discrete adjoint. Exposed for stationarity diagnostics.
pub fn objective_gradient(
    f_c: &Pattern,
    p: &ModelParams,
    spec: &PenaltySpec,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let p = check_simplified(p)?;
    let eval = evaluate_red(f_c, &p, spec, grid)?;
    let (fc_n, fc_h) = f_c.stage_values(grid)?;
    let n = grid.n_steps();
    let zs: Vec<[f64; 3]> = (0..=n)
        .map(|k| [eval.coeffs.mu[k], eval.coeffs.eta[k], eval.coeffs.rho[k]])
        .collect();
    let ms: Vec<[f64; 3]> = (0..=n)
        .map(|k| [eval.moments.h20[k], eval.moments.h11[k], eval.moments.h02[k]])
        .collect();
    Ok(adjoint::reverse_sweep(&p, spec, &zs, &ms, &fc_n, &fc_h, grid.dt()).grad)
}

// ---------------------------------------------------------------------------
// Parametric gradient descent
// ---------------------------------------------------------------------------

/// Basis for the parametric minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdBasis {
    Constant,
    /// Powers of `t / T` up to the given degree.
    Polynomial { degree: usize },
    /// Constant plus `cos(2 pi j t / T)`, `sin(2 pi j t / T)` up to order.
    Fourier { order: usize },
}

impl GdBasis {
    pub fn dim(&self) -> usize {
        match self {
            GdBasis::Constant => 1,
            GdBasis::Polynomial { degree } => degree + 1,
            GdBasis::Fourier { order } => 2 * order + 1,
        }
    }

    fn synthesize(&self, coeffs: &[f64], grid: &TimeGrid) -> Vec<f64> {
        let horizon = grid.horizon();
        grid.times()
            .iter()
            .map(|&t| {
                let x = t / horizon;
                match self {
                    GdBasis::Constant => coeffs[0],
                    GdBasis::Polynomial { degree } => {
                        let mut acc = 0.0;
                        let mut pow = 1.0;
                        for i in 0..=*degree {
                            acc += coeffs[i] * pow;
                            pow *= x;
                        }
                        acc
                    }
                    GdBasis::Fourier { order } => {
                        let mut acc = coeffs[0];
                        for j in 1..=*order {
                            let arg = core::f64::consts::TAU * j as f64 * x;
                            acc += coeffs[2 * j - 1] * math::cos(arg);
                            acc += coeffs[2 * j] * math::sin(arg);
                        }
                        acc
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GdOptions {
    pub step: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GdOptions {
    fn default() -> Self {
        GdOptions {
            step: 0.1,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Gradient descent on basis coefficients with central finite-difference
/// gradients and step halving on non-decrease. Evaluations that leave the
/// penalty domain count as non-decrease.
pub fn optimize_param_gd(
    p: &ModelParams,
    spec: &PenaltySpec,
    basis: GdBasis,
    init_coeffs: Option<Vec<f64>>,
    grid: &TimeGrid,
    opts: GdOptions,
) -> Result<RedResult> {
    let p = check_simplified(p)?;
    let dim = basis.dim();
    if dim > 16 {
        return Err(Error::InvalidParameter {
            name: "basis",
            message: format!("dimension {dim} exceeds the supported 16"),
        });
    }
    let mut coeffs = match init_coeffs {
        Some(c) => {
            if c.len() != dim {
                return Err(Error::GridMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            c
        }
        None => {
            // start at the constant best matching the anchor pattern
            let mut c = alloc::vec![0.0; dim];
            let f0 = spec.f_init.values();
            c[0] = math::pairwise_sum(f0) / f0.len() as f64;
            c
        }
    };

    let objective_of = |coeffs: &[f64]| -> Option<f64> {
        let samples = basis.synthesize(coeffs, grid);
        let pattern = Pattern::from_samples(samples, grid, "gd").ok()?;
        red_objective(&pattern, &p, spec, grid).ok()
    };

    let mut j_current = match objective_of(&coeffs) {
        Some(j) => j,
        None => {
            return Err(Error::InvalidParameter {
                name: "init_coeffs",
                message: String::from("initial coefficients violate the penalty domain"),
            })
        }
    };
    let mut history = alloc::vec![j_current];
    let mut step = opts.step;
    let step_floor = opts.step * 1e-14;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        // central finite-difference gradient with adaptive spacing
        let mut grad = alloc::vec![0.0; dim];
        for i in 0..dim {
            let mut eps = 1e-5 * (1.0 + math::abs(coeffs[i]));
            let mut pair = None;
            for _ in 0..40 {
                let mut up = coeffs.clone();
                up[i] += eps;
                let mut dn = coeffs.clone();
                dn[i] -= eps;
                match (objective_of(&up), objective_of(&dn)) {
                    (Some(a), Some(b)) => {
                        pair = Some((a - b) / (2.0 * eps));
                        break;
                    }
                    _ => eps *= 0.5,
                }
            }
            grad[i] = pair.unwrap_or(0.0);
        }

        // backtracking line search with regrowth after accepted steps
        let mut accepted = false;
        while step > step_floor {
            let mut trial = coeffs.clone();
            for i in 0..dim {
                trial[i] -= step * grad[i];
            }
            match objective_of(&trial) {
                Some(j_trial) if j_trial < j_current => {
                    let old = basis.synthesize(&coeffs, grid);
                    let new = basis.synthesize(&trial, grid);
                    let rel = relative_sup_change(&new, &old);
                    let decrease = j_current - j_trial;
                    coeffs = trial;
                    j_current = j_trial;
                    history.push(j_current);
                    iterations += 1;
                    accepted = true;
                    step = (step * 2.0).min(opts.step * 64.0);
                    if rel <= opts.tol || decrease <= opts.tol * (1.0 + math::abs(j_current)) * 1e-3
                    {
                        converged = true;
                    }
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted || converged {
            break;
        }
    }

    let samples = basis.synthesize(&coeffs, grid);
    let f_hat = Pattern::from_samples(samples, grid, "f_hat")?;
    let eval = evaluate_red(&f_hat, &p, spec, grid)?;
    Ok(RedResult {
        f_hat,
        objective: eval.objective,
        expected_log_l: eval.expected_log_l,
        penalty: eval.penalty,
        method: RedMethod::Gd,
        iterations,
        converged,
        history,
    })
}

// ---------------------------------------------------------------------------
// Cross-validation of optimizer results
// ---------------------------------------------------------------------------

/// Pairwise gap between two results.
#[derive(Debug, Clone, Copy)]
pub struct PairGap {
    pub a: usize,
    pub b: usize,
    pub method_a: RedMethod,
    pub method_b: RedMethod,
    pub f_gap: f64,
    pub objective_gap: f64,
    pub flagged: bool,
}

/// Pairwise consistency report over a set of results.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub pairs: Vec<PairGap>,
    pub max_f_gap: f64,
    pub max_objective_gap: f64,
    pub f_tol: f64,
    pub objective_tol: f64,
}

impl ConsistencyReport {
    pub fn all_consistent(&self) -> bool {
        self.pairs.iter().all(|p| !p.flagged)
    }
}

/// Compares patterns (relative sup norm) and objectives (relative gap)
/// pairwise; flags any pair exceeding the tolerances. The results must come
/// from the same configuration, which is checked through the sampling of
/// their patterns.
pub fn cross_validate(
    results: &[RedResult],
    f_tol: f64,
    objective_tol: f64,
) -> Result<ConsistencyReport> {
    if results.len() < 2 {
        return Err(Error::MismatchedResults(String::from(
            "need at least two results to compare",
        )));
    }
    let len = results[0].f_hat.values().len();
    let horizon = results[0].f_hat.horizon();
    for r in results {
        if r.f_hat.values().len() != len || r.f_hat.horizon() != horizon {
            return Err(Error::MismatchedResults(format!(
                "patterns sampled differently: {} vs {len} samples",
                r.f_hat.values().len()
            )));
        }
    }
    let mut pairs = Vec::new();
    let mut max_f_gap = 0.0f64;
    let mut max_objective_gap = 0.0f64;
    for a in 0..results.len() {
        for b in (a + 1)..results.len() {
            let fa = results[a].f_hat.values();
            let fb = results[b].f_hat.values();
            let mut diff = 0.0f64;
            for (x, y) in fa.iter().zip(fb) {
                diff = diff.max(math::abs(x - y));
            }
            let scale = math::max_abs(fa).max(math::max_abs(fb)).max(1e-12);
            let f_gap = diff / scale;
            let ja = results[a].objective;
            let jb = results[b].objective;
            let objective_gap = math::abs(ja - jb) / math::abs(ja).max(math::abs(jb)).max(1e-12);
            let flagged = f_gap > f_tol || objective_gap > objective_tol;
            max_f_gap = max_f_gap.max(f_gap);
            max_objective_gap = max_objective_gap.max(objective_gap);
            pairs.push(PairGap {
                a,
                b,
                method_a: results[a].method,
                method_b: results[b].method,
                f_gap,
                objective_gap,
                flagged,
            });
        }
    }
    Ok(ConsistencyReport {
        pairs,
        max_f_gap,
        max_objective_gap,
        f_tol,
        objective_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn unit_pattern(grid: &TimeGrid) -> Pattern {
        Pattern::constant(1.0, grid).unwrap()
    }

    #[test]
    fn penalty_matches_hand_values() {
        let grid = TimeGrid::new(0.1, 200).unwrap();
        let ones = unit_pattern(&grid);

        let quad = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 1.0).unwrap();
        assert_eq!(penalty_value(&ones, &quad).unwrap(), 0.0);
        let zero = Pattern::zero(&grid);
        // integrand (0 - 1)^2 = 1 over length 0.1
        assert!((penalty_value(&zero, &quad).unwrap() - 0.1).abs() < 1e-15);

        let kl = PenaltySpec::new(PenaltyKind::KlLog, ones.clone(), 1.0).unwrap();
        assert_eq!(penalty_value(&ones, &kl).unwrap(), 0.0);
        // f = e^{-1}: integrand log(e) = 1 over length 0.1
        let inv_e = Pattern::constant((-1.0f64).exp(), &grid).unwrap();
        assert!((penalty_value(&inv_e, &kl).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn kl_penalty_rejects_nonpositive_patterns() {
        let grid = TimeGrid::new(0.1, 50).unwrap();
        let ones = unit_pattern(&grid);
        let kl = PenaltySpec::new(PenaltyKind::KlLog, ones.clone(), 1.0).unwrap();
        let zero = Pattern::zero(&grid);
        assert!(matches!(
            penalty_value(&zero, &kl),
            Err(Error::NonPositivePattern { .. })
        ));
        assert!(PenaltySpec::new(PenaltyKind::KlLog, zero, 1.0).is_err());
    }

    #[test]
    fn null_pattern_with_no_penalty_scores_zero() {
        let p = params_b(0.075);
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones, 0.0).unwrap();
        let zero = Pattern::zero(&grid);
        assert_eq!(red_objective(&zero, &p, &spec, &grid).unwrap(), 0.0);
    }

    #[test]
    fn unit_pattern_baseline_reproduces_reference_statistic() {
        // Reference value 23.21 at the unit pattern, within 5%.
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 1000).unwrap();
        let e = baseline_expected_log_l(&p, &grid).unwrap();
        assert!(
            (e - 23.21).abs() <= 0.05 * 23.21,
            "baseline statistic {e} not within 5% of 23.21"
        );
    }

    #[test]
    fn match_lambda_selects_the_upper_intensity() {
        let p = params_b(0.0); // lambda overwritten by the sweep
        let grid = TimeGrid::new(p.horizon, 1000).unwrap();
        let m = match_lambda(&p, &[0.05, 0.075, 0.1], &grid, 23.21, 0.05)
            .unwrap()
            .expect("one candidate should match");
        assert_eq!(m.lambda, 0.1);
        assert!((m.baseline - 23.21).abs() <= 0.05 * 23.21);
        // a sweep excluding the match comes back empty
        assert!(match_lambda(&p, &[0.05, 0.075], &grid, 23.21, 0.05)
            .unwrap()
            .is_none());
    }

    #[test]
    fn objective_recomposes_from_parts() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 300).unwrap();
        let ones = unit_pattern(&grid);
        for (kind, lreg) in [(PenaltyKind::Quadratic, 0.7), (PenaltyKind::KlLog, 0.3)] {
            let spec = PenaltySpec::new(kind, ones.clone(), lreg).unwrap();
            let r = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();
            let recomposed =
                r.expected_log_l + spec.lambda_reg / (p.sigma_w * p.sigma_w) * r.penalty;
            assert!(
                (r.objective - recomposed).abs() <= 1e-10 * (1.0 + recomposed.abs()),
                "{} vs {recomposed}",
                r.objective
            );
        }
    }

    #[test]
    fn directional_secants_are_consistent() {
        // central difference at eps and eps/2 agree to O(eps^2), and the
        // forward-central gap halves with eps.
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.5).unwrap();
        // random-ish bump direction
        let bump: Vec<f64> = grid
            .times()
            .iter()
            .map(|&t| (60.0 * t).sin() + 0.3)
            .collect();
        let j_at = |scale: f64| {
            let samples: Vec<f64> = ones
                .values()
                .iter()
                .zip(&bump)
                .map(|(f, d)| f + scale * d)
                .collect();
            red_objective(
                &Pattern::from_samples(samples, &grid, "probe").unwrap(),
                &p,
                &spec,
                &grid,
            )
            .unwrap()
        };
        let j0 = j_at(0.0);
        let eps = 1e-3;
        let central = |e: f64| (j_at(e) - j_at(-e)) / (2.0 * e);
        let forward = |e: f64| (j_at(e) - j0) / e;
        let c1 = central(eps);
        let c2 = central(0.5 * eps);
        assert!(
            (c1 - c2).abs() <= 100.0 * eps * eps * (1.0 + c1.abs()),
            "central estimates differ too much: {c1} vs {c2}"
        );
        let gap1 = (forward(eps) - c1).abs();
        let gap2 = (forward(0.5 * eps) - c2).abs();
        let ratio = gap1 / gap2;
        assert!(
            (1.5..=2.6).contains(&ratio),
            "forward-central gap should halve with eps, ratio {ratio}"
        );
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let ones = unit_pattern(&grid);
        for (kind, lreg) in [(PenaltyKind::Quadratic, 0.3), (PenaltyKind::KlLog, 0.2)] {
            let spec = PenaltySpec::new(kind, ones.clone(), lreg).unwrap();
            let f0: Vec<f64> = grid
                .times()
                .iter()
                .map(|&t| 1.0 + 0.3 * (20.0 * t).sin())
                .collect();
            let f = Pattern::from_samples(f0.clone(), &grid, "probe").unwrap();
            let grad = objective_gradient(&f, &p, &spec, &grid).unwrap();
            let eps = 1e-6;
            for &k in &[0usize, 1, 37, 100, 199, 200] {
                let mut up = f0.clone();
                up[k] += eps;
                let mut dn = f0.clone();
                dn[k] -= eps;
                let ju = red_objective(
                    &Pattern::from_samples(up, &grid, "u").unwrap(),
                    &p,
                    &spec,
                    &grid,
                )
                .unwrap();
                let jd = red_objective(
                    &Pattern::from_samples(dn, &grid, "d").unwrap(),
                    &p,
                    &spec,
                    &grid,
                )
                .unwrap();
                let fd = (ju - jd) / (2.0 * eps);
                assert!(
                    (grad[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{:?} node {k}: adjoint {} vs fd {fd}",
                    kind,
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn heavy_regularization_pins_the_anchor() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 300).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 1e6).unwrap();
        for result in [
            optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap(),
            optimize_fbs(&p, &spec, &ones, &grid, FbsOptions::default()).unwrap(),
        ] {
            assert!(result.converged);
            let sup = result
                .f_hat
                .values()
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0f64, f64::max);
            assert!(sup < 1e-3, "{:?}: sup deviation {sup}", result.method);
        }
    }

    #[test]
    fn fpi_reproduces_reference_optimized_statistics() {
        // Log penalty at intensity 0.1 gives ~0.50; quadratic at 1.0 ~2.17.
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 1000).unwrap();
        let ones = unit_pattern(&grid);

        let spec = PenaltySpec::new(PenaltyKind::KlLog, ones.clone(), 0.1).unwrap();
        let r = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();
        assert!(r.converged);
        assert!(
            (r.expected_log_l - 0.50).abs() <= 0.1 * 0.50,
            "kl_log 0.1: {}",
            r.expected_log_l
        );

        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 1.0).unwrap();
        let r = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();
        assert!(r.converged);
        assert!(
            (r.expected_log_l - 2.17).abs() <= 0.1 * 2.17,
            "quadratic 1.0: {}",
            r.expected_log_l
        );
    }

    #[test]
    fn fbs_agrees_with_fpi_and_is_stationary() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 500).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.1).unwrap();
        let fpi = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();
        let fbs = optimize_fbs(&p, &spec, &ones, &grid, FbsOptions::default()).unwrap();
        assert!(fpi.converged && fbs.converged);
        let report = cross_validate(
            &[fpi, fbs.clone()],
            0.05,
            0.01,
        )
        .unwrap();
        assert!(report.all_consistent(), "gaps {:?}", report.pairs);

        // central-difference stationarity of the sweep's fixed point
        let tol = FbsOptions::default().tol;
        let f0 = fbs.f_hat.values().to_vec();
        let eps = 1e-6;
        let mut sup = 0.0f64;
        for k in (0..=grid.n_steps()).step_by(25) {
            let mut up = f0.clone();
            up[k] += eps;
            let mut dn = f0.clone();
            dn[k] -= eps;
            let ju = red_objective(
                &Pattern::from_samples(up, &grid, "u").unwrap(),
                &p,
                &spec,
                &grid,
            )
            .unwrap();
            let jd = red_objective(
                &Pattern::from_samples(dn, &grid, "d").unwrap(),
                &p,
                &spec,
                &grid,
            )
            .unwrap();
            sup = sup.max(((ju - jd) / (2.0 * eps)).abs());
        }
        assert!(
            sup <= 10.0 * tol,
            "finite-difference gradient sup {sup} above 10 tol"
        );
    }

    #[test]
    fn constant_basis_descent_recovers_the_scalar_minimizer() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 300).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.5).unwrap();
        let gd = optimize_param_gd(
            &p,
            &spec,
            GdBasis::Constant,
            None,
            &grid,
            GdOptions::default(),
        )
        .unwrap();
        assert!(gd.converged);
        let gd_value = gd.f_hat.values()[0];

        // golden-section oracle on the same scalar objective
        let j_of = |c: f64| {
            red_objective(
                &Pattern::constant(c, &grid).unwrap(),
                &p,
                &spec,
                &grid,
            )
            .unwrap()
        };
        let oracle = golden_min(-1.0, 2.0, j_of);
        assert!(
            (gd_value - oracle).abs() <= 1e-4,
            "gd {gd_value} vs golden {oracle}"
        );
    }

    #[test]
    fn unregularized_descent_is_monotone() {
        // lambda above half the bound makes the statistic's quadratic term
        // positive, so descent from the unit pattern keeps improving.
        let p = params_b(0.08);
        let grid = TimeGrid::new(p.horizon, 300).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.0).unwrap();
        let gd = optimize_param_gd(
            &p,
            &spec,
            GdBasis::Polynomial { degree: 2 },
            None,
            &grid,
            GdOptions::default(),
        )
        .unwrap();
        for pair in gd.history.windows(2) {
            assert!(pair[1] <= pair[0], "history not monotone: {:?}", gd.history);
        }
        assert!(gd.expected_log_l < baseline_expected_log_l(&p, &grid).unwrap());
    }

    #[test]
    fn stronger_trust_region_stays_closer_and_scores_higher() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 500).unwrap();
        let ones = unit_pattern(&grid);
        let mut results = Vec::new();
        for lreg in [0.1, 1.0] {
            let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), lreg).unwrap();
            let r = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();
            assert!(r.converged);
            results.push(r);
        }
        let deviation = |r: &RedResult| {
            r.f_hat
                .values()
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0f64, f64::max)
        };
        assert!(deviation(&results[1]) <= deviation(&results[0]));
        assert!(results[1].expected_log_l >= results[0].expected_log_l);
        // both strictly improve over the anchor pattern
        let baseline = baseline_expected_log_l(&p, &grid).unwrap();
        for r in &results {
            assert!(r.expected_log_l < baseline);
        }
    }

    #[test]
    fn log_barrier_iterates_stay_positive() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 300).unwrap();
        let ones = unit_pattern(&grid);
        for lreg in [0.1, 1.0] {
            let spec = PenaltySpec::new(PenaltyKind::KlLog, ones.clone(), lreg).unwrap();
            for r in [
                optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap(),
                optimize_fbs(&p, &spec, &ones, &grid, FbsOptions::default()).unwrap(),
            ] {
                assert!(r.converged);
                assert!(r.f_hat.values().iter().all(|&v| v > 0.0));
                // the objective history never sees a domain error
                assert!(r.history.iter().all(|j| j.is_finite()));
            }
        }
    }

    #[test]
    fn cross_validate_flags_corruption_and_rejects_mismatches() {
        let p = params_b(0.1);
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.5).unwrap();
        let r = optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()).unwrap();

        // identical duplicates: all gaps zero
        let report = cross_validate(&[r.clone(), r.clone()], 0.05, 0.01).unwrap();
        assert_eq!(report.max_f_gap, 0.0);
        assert_eq!(report.max_objective_gap, 0.0);
        assert!(report.all_consistent());

        // corrupted copy: pattern scaled by two must be flagged
        let mut bad = r.clone();
        let scaled: Vec<f64> = bad.f_hat.values().iter().map(|v| 2.0 * v).collect();
        bad.f_hat = Pattern::from_samples(scaled, &grid, "corrupted").unwrap();
        let report = cross_validate(&[r.clone(), bad], 0.05, 0.01).unwrap();
        assert!(!report.all_consistent());

        // mismatched sampling is an error, not a report
        let other_grid = TimeGrid::new(p.horizon, 150).unwrap();
        let mut odd = r.clone();
        odd.f_hat = Pattern::constant(1.0, &other_grid).unwrap();
        assert!(matches!(
            cross_validate(&[r, odd], 0.05, 0.01),
            Err(Error::MismatchedResults(_))
        ));
    }

    #[test]
    fn optimizers_require_the_simplified_setting() {
        let mut p = params_b(0.1);
        p.vbar_terminal = 1.0;
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let ones = unit_pattern(&grid);
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, ones.clone(), 0.5).unwrap();
        assert!(matches!(
            optimize_fpi(&p, &spec, &ones, &grid, FpiOptions::default()),
            Err(Error::InvalidParameter {
                name: "vbar_terminal",
                ..
            })
        ));
    }
}

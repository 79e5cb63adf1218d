//! Feedback controls, value function, and cost integrands.

use crate::model::{validate_params, ModelParams, Pattern, TimeGrid};
use crate::riccati::{self, CoeffSample, RiccatiCoeffs};
use crate::{Error, Result};

/// The optimal feedback law. Construction solves the backward coefficient
/// system, so the coefficients always correspond to exactly these
/// parameters and patterns.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    params: ModelParams,
    f_c: Pattern,
    f_d: Pattern,
    coeffs: RiccatiCoeffs,
}

impl ControlLaw {
    pub fn new(
        params: ModelParams,
        f_c: Pattern,
        f_d: Pattern,
        vbar: &Pattern,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let params = validate_params(params)?;
        for pat in [&f_c, &f_d] {
            if !pat.matches_grid(grid) {
                return Err(Error::GridMismatch {
                    expected: grid.n_steps() + 1,
                    found: pat.values().len(),
                });
            }
        }
        let coeffs = riccati::solve_backward(&params, &f_c, &f_d, vbar, grid)?;
        Ok(ControlLaw {
            params,
            f_c,
            f_d,
            coeffs,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn f_c(&self) -> &Pattern {
        &self.f_c
    }

    pub fn f_d(&self) -> &Pattern {
        &self.f_d
    }

    pub fn coeffs(&self) -> &RiccatiCoeffs {
        &self.coeffs
    }

    pub fn grid(&self) -> &TimeGrid {
        self.coeffs.grid()
    }

    fn alpha_from(&self, s: &CoeffSample, v: f64, y: f64) -> f64 {
        -(s.mu * v + s.eta * y + s.gamma) / self.params.r_alpha
    }

    fn beta_from(&self, s: &CoeffSample, f_c: f64, f_d: f64, v: f64, y: f64) -> f64 {
        let gain = self.params.pattern_gain();
        -(s.eta / self.params.r_beta) * v
            + (gain * f_c - s.rho / self.params.r_beta) * y
            + (gain * f_d - s.theta / self.params.r_beta)
    }

    /// Acceleration control at `(t, v, y)`; coefficients interpolated at `t`.
    pub fn alpha_hat(&self, t: f64, v: f64, y: f64) -> Result<f64> {
        let s = self.coeffs.interpolate(t)?;
        Ok(self.alpha_from(&s, v, y))
    }

    /// Instantaneous-velocity control at `(t, v, y)`.
    pub fn beta_hat(&self, t: f64, v: f64, y: f64) -> Result<f64> {
        let s = self.coeffs.interpolate(t)?;
        Ok(self.beta_from(&s, self.f_c.eval(t)?, self.f_d.eval(t)?, v, y))
    }

    /// Quadratic-ansatz value at `(t, v, y)`.
    pub fn value_function(&self, t: f64, v: f64, y: f64) -> Result<f64> {
        let s = self.coeffs.interpolate(t)?;
        Ok(value_from(&s, v, y))
    }

    /// Both controls at grid node `k`; exact node coefficients, no
    /// interpolation. This is the evaluation the simulator uses.
    pub fn controls_at_node(&self, k: usize, v: f64, y: f64) -> (f64, f64) {
        let s = self.coeffs.at_node(k);
        let alpha = self.alpha_from(&s, v, y);
        let beta = self.beta_from(&s, self.f_c.values()[k], self.f_d.values()[k], v, y);
        (alpha, beta)
    }
}

pub(crate) fn value_from(s: &CoeffSample, v: f64, y: f64) -> f64 {
    0.5 * s.mu * v * v + s.eta * v * y + 0.5 * s.rho * y * y + s.gamma * v + s.theta * y + s.xi
}

/// Quadratic running cost with the reference velocity evaluated at `t`:
/// `r_alpha/2 a^2 + r_beta/2 b^2 + r_v/2 (v - vbar(t))^2`.
pub fn running_cost_r(
    p: &ModelParams,
    vbar: &Pattern,
    t: f64,
    v: f64,
    y: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    Ok(running_cost_r_at(p, vbar.eval(t)?, v, y, alpha, beta))
}

#[inline]
pub(crate) fn running_cost_r_at(
    p: &ModelParams,
    vbar_t: f64,
    v: f64,
    _y: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let dv = v - vbar_t;
    0.5 * p.r_alpha * alpha * alpha + 0.5 * p.r_beta * beta * beta + 0.5 * p.r_v * dv * dv
}

/// Terminal cost `g(v, y) = t_v/2 (v - vbar_T)^2`; independent of `y`.
pub fn terminal_cost_g(p: &ModelParams, v: f64, _y: f64) -> f64 {
    let d = v - p.vbar_terminal;
    0.5 * p.t_v * d * d
}

/// Running cost of the combined objective: the quadratic cost plus the
/// likelihood-ratio integrand weighted by the misdirection intensity.
pub fn running_cost_h(
    p: &ModelParams,
    f_c: &Pattern,
    f_d: &Pattern,
    vbar: &Pattern,
    t: f64,
    v: f64,
    y: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let r = running_cost_r(p, vbar, t, v, y, alpha, beta)?;
    Ok(r + misdirection_cost_terms(p, f_c.eval(t)? * y + f_d.eval(t)?, beta))
}

/// The two likelihood-ratio terms of the combined running cost, given the
/// alternative drift `f_c(t) y + f_d(t)`.
#[inline]
pub(crate) fn misdirection_cost_terms(p: &ModelParams, drift: f64, beta: f64) -> f64 {
    let sw2 = p.sigma_w * p.sigma_w;
    -(p.lambda / sw2) * drift * beta + (0.5 * p.lambda / sw2) * drift * drift
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternKind;

    fn params_a() -> ModelParams {
        ModelParams {
            horizon: 1.0,
            sigma_b: 0.25,
            sigma_w: 0.25,
            r_alpha: 1.0,
            r_beta: 10.0,
            r_v: 1.0,
            t_v: 1.0,
            vbar_terminal: 1.0,
            lambda: 0.075,
            v0: 2.0,
            y0: 4.0,
        }
    }

    fn reference_vbar(grid: &TimeGrid) -> Pattern {
        Pattern::from_kind(
            &PatternKind::Affine {
                offset: 2.0,
                slope: -1.0,
            },
            grid,
            "ref",
        )
        .unwrap()
    }

    fn law_with(p: ModelParams, f_c_kind: &PatternKind, n: usize) -> ControlLaw {
        let grid = TimeGrid::new(p.horizon, n).unwrap();
        let f_c = Pattern::from_kind(f_c_kind, &grid, "f_c").unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = reference_vbar(&grid);
        ControlLaw::new(p, f_c, f_d, &vbar, &grid).unwrap()
    }

    #[test]
    fn alpha_at_terminal_time_is_terminal_gradient() {
        let p = params_a();
        let law = law_with(p, &PatternKind::Constant(0.5), 400);
        for (v, y) in [(2.0, 4.0), (-1.0, 0.0), (0.0, 7.0)] {
            let a = law.alpha_hat(p.horizon, v, y).unwrap();
            let want = -(p.t_v / p.r_alpha) * (v - p.vbar_terminal);
            assert!((a - want).abs() < 1e-14, "{a} vs {want}");
        }
    }

    #[test]
    fn lambda_zero_gives_scalar_feedback_in_v_only() {
        let mut p = params_a();
        p.lambda = 0.0;
        p.vbar_terminal = 0.0;
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let f_c = Pattern::constant(0.5, &grid).unwrap();
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let law = ControlLaw::new(p, f_c, f_d, &vbar, &grid).unwrap();
        let t = 0.37;
        let s = law.coeffs().interpolate(t).unwrap();
        for (v, y) in [(1.0, -3.0), (2.0, 11.0)] {
            let a = law.alpha_hat(t, v, y).unwrap();
            assert!((a - (-(s.mu / p.r_alpha) * v)).abs() < 1e-12);
            assert_eq!(law.beta_hat(t, v, y).unwrap(), 0.0);
        }
    }

    #[test]
    fn beta_vanishes_for_null_patterns() {
        let p = params_a();
        let law = law_with(p, &PatternKind::Constant(0.0), 400);
        for t in [0.0, 0.25, 0.99] {
            assert_eq!(law.beta_hat(t, 1.3, -2.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn controls_match_hand_recomputation_from_coefficients() {
        let p = params_a();
        let law = law_with(p, &PatternKind::Constant(0.5), 2000);
        let (t, v, y) = (0.0, 2.0, 4.0);
        let s = law.coeffs().at_node(0);
        let fc = 0.5;
        let gain = p.lambda / (p.r_beta * p.sigma_w * p.sigma_w);
        let alpha_by_hand = -(s.mu * v + s.eta * y + s.gamma) / p.r_alpha;
        let beta_by_hand =
            -(s.eta / p.r_beta) * v + (gain * fc - s.rho / p.r_beta) * y - s.theta / p.r_beta;
        assert!((law.alpha_hat(t, v, y).unwrap() - alpha_by_hand).abs() < 1e-15);
        assert!((law.beta_hat(t, v, y).unwrap() - beta_by_hand).abs() < 1e-15);
    }

    #[test]
    fn value_function_at_terminal_time_is_terminal_cost() {
        let p = params_a();
        let law = law_with(p, &PatternKind::Constant(0.5), 400);
        for (v, y) in [(2.0, 4.0), (1.0, -5.0), (0.0, 0.0)] {
            let val = law.value_function(p.horizon, v, y).unwrap();
            assert!((val - terminal_cost_g(&p, v, y)).abs() < 1e-14);
        }
    }

    #[test]
    fn value_function_ignores_position_in_decoupled_case() {
        let mut p = params_a();
        p.lambda = 0.0;
        p.vbar_terminal = 0.0;
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let f_c = Pattern::zero(&grid);
        let f_d = Pattern::zero(&grid);
        let vbar = Pattern::zero(&grid);
        let law = ControlLaw::new(p, f_c, f_d, &vbar, &grid).unwrap();
        let a = law.value_function(0.4, 1.5, -20.0).unwrap();
        let b = law.value_function(0.4, 1.5, 35.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn running_cost_r_vanishes_on_reference() {
        let p = params_a();
        let grid = TimeGrid::new(p.horizon, 10).unwrap();
        let vbar = reference_vbar(&grid);
        let t = 0.3;
        let v = 2.0 - t;
        assert_eq!(running_cost_r(&p, &vbar, t, v, 9.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn terminal_cost_vanishes_at_target() {
        let p = params_a();
        assert_eq!(terminal_cost_g(&p, p.vbar_terminal, 123.0), 0.0);
    }

    #[test]
    fn h_equals_r_when_lambda_zero() {
        let mut p = params_a();
        p.lambda = 0.0;
        let grid = TimeGrid::new(p.horizon, 10).unwrap();
        let f_c = Pattern::constant(0.7, &grid).unwrap();
        let f_d = Pattern::constant(-0.2, &grid).unwrap();
        let vbar = reference_vbar(&grid);
        for (t, v, y, a, b) in [(0.1, 1.0, 2.0, 0.5, -0.3), (0.8, -2.0, 0.0, 1.0, 1.0)] {
            let h = running_cost_h(&p, &f_c, &f_d, &vbar, t, v, y, a, b).unwrap();
            let r = running_cost_r(&p, &vbar, t, v, y, a, b).unwrap();
            assert_eq!(h, r);
        }
    }
}

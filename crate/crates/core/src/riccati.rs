//! Backward coefficient system of the quadratic value-function ansatz.
//!
//! The value function is `V(t,v,y) = mu/2 v^2 + eta v y + rho/2 y^2 +
//! gamma v + theta y + xi`, whose six coefficients solve a coupled ODE
//! system backward from the terminal weights. The solver is classic RK4
//! with fixed step equal to the grid spacing; pattern values at the half
//! stages are piecewise-linear interpolants, consistent with how patterns
//! are stored.

use alloc::vec::Vec;

use crate::math;
use crate::model::{ModelParams, Pattern, TimeGrid};
use crate::{Error, Result};

/// Coefficient values at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffSample {
    pub mu: f64,
    pub eta: f64,
    pub rho: f64,
    pub gamma: f64,
    pub theta: f64,
    pub xi: f64,
}

/// The six coefficient trajectories sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCoeffs {
    grid: TimeGrid,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
}

impl RiccatiCoeffs {
    /// Assembles trajectories directly; lengths must match the grid.
    /// Intended for synthetic inputs in tests and tooling — the solver is
    /// the normal constructor.
    pub fn from_parts(
        grid: TimeGrid,
        mu: Vec<f64>,
        eta: Vec<f64>,
        rho: Vec<f64>,
        gamma: Vec<f64>,
        theta: Vec<f64>,
        xi: Vec<f64>,
    ) -> Result<Self> {
        let expected = grid.n_steps() + 1;
        for v in [&mu, &eta, &rho, &gamma, &theta, &xi] {
            if v.len() != expected {
                return Err(Error::GridMismatch {
                    expected,
                    found: v.len(),
                });
            }
        }
        Ok(RiccatiCoeffs {
            grid,
            mu,
            eta,
            rho,
            gamma,
            theta,
            xi,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at_node(&self, k: usize) -> CoeffSample {
        CoeffSample {
            mu: self.mu[k],
            eta: self.eta[k],
            rho: self.rho[k],
            gamma: self.gamma[k],
            theta: self.theta[k],
            xi: self.xi[k],
        }
    }

    /// Piecewise-linear interpolation of all six coefficients at `t`.
    pub fn interpolate(&self, t: f64) -> Result<CoeffSample> {
        let horizon = self.grid.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let times = self.grid.times();
        let n = self.grid.n_steps();
        let mut i = math::floor(t / self.grid.dt()) as usize;
        if i >= n {
            i = n - 1;
        }
        while i > 0 && t < times[i] {
            i -= 1;
        }
        while i + 1 < n && t >= times[i + 1] {
            i += 1;
        }
        if t == times[i] {
            return Ok(self.at_node(i));
        }
        if t == times[i + 1] {
            return Ok(self.at_node(i + 1));
        }
        let u = (t - times[i]) / (times[i + 1] - times[i]);
        let lerp = |xs: &[f64]| xs[i] + u * (xs[i + 1] - xs[i]);
        Ok(CoeffSample {
            mu: lerp(&self.mu),
            eta: lerp(&self.eta),
            rho: lerp(&self.rho),
            gamma: lerp(&self.gamma),
            theta: lerp(&self.theta),
            xi: lerp(&self.xi),
        })
    }

    /// Largest absolute value over the grid for each trajectory.
    pub fn max_abs(&self) -> [f64; 6] {
        [
            math::max_abs(&self.mu),
            math::max_abs(&self.eta),
            math::max_abs(&self.rho),
            math::max_abs(&self.gamma),
            math::max_abs(&self.theta),
            math::max_abs(&self.xi),
        ]
    }
}

/// Derived constants of the right-hand side.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RhsConsts {
    pub inv_r_alpha: f64,
    pub inv_r_beta: f64,
    /// lambda / (r_beta sigma_w^2)
    pub gain: f64,
    /// lambda^2/(r_beta sigma_w^4) - lambda/sigma_w^2; zero when lambda = 0.
    pub source: f64,
    pub r_v: f64,
    pub sigma_b_sq: f64,
    pub sigma_w_sq: f64,
}

impl RhsConsts {
    pub fn new(p: &ModelParams) -> Self {
        let sigma_w_sq = p.sigma_w * p.sigma_w;
        // lambda = 0 zeroes both constants exactly, whatever sigma_w is
        let (gain, source) = if p.lambda == 0.0 {
            (0.0, 0.0)
        } else {
            let gain = p.lambda / (p.r_beta * sigma_w_sq);
            (gain, (p.lambda / sigma_w_sq) * (gain - 1.0))
        };
        RhsConsts {
            inv_r_alpha: 1.0 / p.r_alpha,
            inv_r_beta: 1.0 / p.r_beta,
            gain,
            source,
            r_v: p.r_v,
            sigma_b_sq: p.sigma_b * p.sigma_b,
            sigma_w_sq,
        }
    }
}

/// Time derivatives of (mu, eta, rho); these three components close among
/// themselves.
#[inline]
pub(crate) fn rhs_quadratic(c: &RhsConsts, mu: f64, eta: f64, rho: f64, f_c: f64) -> [f64; 3] {
    let d_mu = c.inv_r_alpha * mu * mu + c.inv_r_beta * eta * eta - 2.0 * eta - c.r_v;
    let d_eta =
        c.inv_r_alpha * mu * eta + c.inv_r_beta * rho * eta - rho - c.gain * eta * f_c;
    let d_rho = c.inv_r_alpha * eta * eta + c.inv_r_beta * rho * rho
        - 2.0 * c.gain * rho * f_c
        + c.source * f_c * f_c;
    [d_mu, d_eta, d_rho]
}

/// Full six-component right-hand side at given pattern values.
pub(crate) fn rhs_full(c: &RhsConsts, x: &[f64; 6], f_c: f64, f_d: f64, vbar: f64) -> [f64; 6] {
    let [mu, eta, rho, gamma, theta, xi_] = *x;
    let _ = xi_;
    let [d_mu, d_eta, d_rho] = rhs_quadratic(c, mu, eta, rho, f_c);
    let d_gamma = c.inv_r_alpha * mu * gamma + c.inv_r_beta * eta * theta - theta
        + c.r_v * vbar
        - c.gain * eta * f_d;
    let d_theta = c.inv_r_alpha * eta * gamma + c.inv_r_beta * rho * theta
        - c.gain * theta * f_c
        - c.gain * f_d * rho
        + c.source * f_c * f_d;
    let d_xi = 0.5 * c.inv_r_alpha * gamma * gamma + 0.5 * c.inv_r_beta * theta * theta
        - 0.5 * c.sigma_b_sq * mu
        - 0.5 * c.sigma_w_sq * rho
        - c.gain * f_d * theta
        - 0.5 * c.r_v * vbar * vbar
        + 0.5 * c.source * f_d * f_d;
    [d_mu, d_eta, d_rho, d_gamma, d_theta, d_xi]
}

/// Right-hand side of the coefficient system with patterns evaluated at `t`.
pub fn riccati_rhs(
    t: f64,
    x: &[f64; 6],
    p: &ModelParams,
    f_c: &Pattern,
    f_d: &Pattern,
    vbar: &Pattern,
) -> Result<[f64; 6]> {
    let c = RhsConsts::new(p);
    Ok(rhs_full(&c, x, f_c.eval(t)?, f_d.eval(t)?, vbar.eval(t)?))
}

/// Terminal values of the six coefficients.
pub fn terminal_state(p: &ModelParams) -> [f64; 6] {
    [
        p.t_v,
        0.0,
        0.0,
        -p.t_v * p.vbar_terminal,
        0.0,
        0.5 * p.t_v * p.vbar_terminal * p.vbar_terminal,
    ]
}

/// Integrates the coefficient system backward from `t = T` to `t = 0` with
/// classic RK4 at the grid step. Terminal samples are the terminal weights
/// exactly. Errors name the first step at which a non-finite value appears.
pub fn solve_backward(
    p: &ModelParams,
    f_c: &Pattern,
    f_d: &Pattern,
    vbar: &Pattern,
    grid: &TimeGrid,
) -> Result<RiccatiCoeffs> {
    let c = RhsConsts::new(p);
    let (fc_n, fc_h) = f_c.stage_values(grid)?;
    let (fd_n, fd_h) = f_d.stage_values(grid)?;
    let (vb_n, vb_h) = vbar.stage_values(grid)?;

    let n = grid.n_steps();
    let dt = grid.dt();
    let h = -dt;
    let mut nodes: Vec<[f64; 6]> = alloc::vec![[0.0; 6]; n + 1];
    nodes[n] = terminal_state(p);

    for k in (0..n).rev() {
        let x = nodes[k + 1];
        let k1 = rhs_full(&c, &x, fc_n[k + 1], fd_n[k + 1], vb_n[k + 1]);
        let x2 = add_scaled(&x, &k1, 0.5 * h);
        let k2 = rhs_full(&c, &x2, fc_h[k], fd_h[k], vb_h[k]);
        let x3 = add_scaled(&x, &k2, 0.5 * h);
        let k3 = rhs_full(&c, &x3, fc_h[k], fd_h[k], vb_h[k]);
        let x4 = add_scaled(&x, &k3, h);
        let k4 = rhs_full(&c, &x4, fc_n[k], fd_n[k], vb_n[k]);
        let mut next = [0.0; 6];
        for i in 0..6 {
            next[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !next[i].is_finite() {
                return Err(Error::NonFinite {
                    context: "riccati backward integration",
                    step: k,
                    path: None,
                });
            }
        }
        nodes[k] = next;
    }

    let column = |i: usize| nodes.iter().map(|x| x[i]).collect::<Vec<f64>>();
    Ok(RiccatiCoeffs {
        grid: grid.clone(),
        mu: column(0),
        eta: column(1),
        rho: column(2),
        gamma: column(3),
        theta: column(4),
        xi: column(5),
    })
}

#[inline]
fn add_scaled(x: &[f64; 6], k: &[f64; 6], s: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = x[i] + s * k[i];
    }
    out
}

/// True iff eta, rho, theta all stay within `tol` of zero across the grid,
/// the signature of a solve with `lambda = 0` or null patterns.
pub fn baseline_check(coeffs: &RiccatiCoeffs, tol: f64) -> bool {
    math::max_abs(&coeffs.eta) <= tol
        && math::max_abs(&coeffs.rho) <= tol
        && math::max_abs(&coeffs.theta) <= tol
}

//! Exact discrete adjoint of the pattern-objective evaluation.
//!
//! The objective composes three stages: the backward RK4 solve of
//! `(mu, eta, rho)`, the forward RK4 solve of `(h20, h11, h02)`, and the
//! trapezoidal quadrature of the statistic integrand plus the penalty. The
//! reverse sweep below differentiates that exact composition with respect to
//! the pattern samples, and yields the node costates of all six state
//! trajectories as a byproduct. Gradients are validated against central
//! finite differences in the tests.

use alloc::vec::Vec;

use crate::model::ModelParams;
use crate::riccati::{rhs_quadratic, RhsConsts};
use crate::sht::moment_rhs;

use super::{penalty_derivative, PenaltySpec};

/// Node costates of the six states plus the gradient of the objective with
/// respect to the pattern samples.
pub(crate) struct AdjointSweep {
    /// dJ/df_k for every node.
    pub grad: Vec<f64>,
    /// Costates of (mu, eta, rho) at every node.
    pub costate_z: Vec<[f64; 3]>,
    /// Costates of (h20, h11, h02) at every node.
    pub costate_m: Vec<[f64; 3]>,
}

/// Jacobian of the quadratic-coefficient right-hand side w.r.t. (mu, eta,
/// rho), applied transposed to `w`.
#[inline]
fn fz_transpose(c: &RhsConsts, z: &[f64; 3], f: f64, w: &[f64; 3]) -> [f64; 3] {
    let [mu, eta, rho] = *z;
    let j = [
        [2.0 * c.inv_r_alpha * mu, 2.0 * c.inv_r_beta * eta - 2.0, 0.0],
        [
            c.inv_r_alpha * eta,
            c.inv_r_alpha * mu + c.inv_r_beta * rho - c.gain * f,
            c.inv_r_beta * eta - 1.0,
        ],
        [
            0.0,
            2.0 * c.inv_r_alpha * eta,
            2.0 * c.inv_r_beta * rho - 2.0 * c.gain * f,
        ],
    ];
    // (J^T w)_i = sum_r J[r][i] w[r]
    [
        j[0][0] * w[0] + j[1][0] * w[1] + j[2][0] * w[2],
        j[0][1] * w[0] + j[1][1] * w[1] + j[2][1] * w[2],
        j[0][2] * w[0] + j[1][2] * w[1] + j[2][2] * w[2],
    ]
}

/// `dF/df . w` for the quadratic-coefficient system.
#[inline]
fn ff_dot(c: &RhsConsts, z: &[f64; 3], f: f64, w: &[f64; 3]) -> f64 {
    -c.gain * z[1] * w[1] + (-2.0 * c.gain * z[2] + 2.0 * c.source * f) * w[2]
}

/// Jacobian of the moment right-hand side w.r.t. the moments, transposed.
#[inline]
fn gm_transpose(c: &RhsConsts, z: &[f64; 3], f: f64, w: &[f64; 3]) -> [f64; 3] {
    let [mu, eta, rho] = *z;
    let closure = c.gain * f - rho * c.inv_r_beta;
    let j = [
        [-2.0 * mu * c.inv_r_alpha, -2.0 * eta * c.inv_r_alpha, 0.0],
        [
            1.0 - eta * c.inv_r_beta,
            closure - mu * c.inv_r_alpha,
            -eta * c.inv_r_alpha,
        ],
        [0.0, 2.0 * (1.0 - eta * c.inv_r_beta), 2.0 * closure],
    ];
    [
        j[0][0] * w[0] + j[1][0] * w[1] + j[2][0] * w[2],
        j[0][1] * w[0] + j[1][1] * w[1] + j[2][1] * w[2],
        j[0][2] * w[0] + j[1][2] * w[1] + j[2][2] * w[2],
    ]
}

/// Jacobian of the moment right-hand side w.r.t. (mu, eta, rho), transposed.
#[inline]
fn gz_transpose(c: &RhsConsts, m: &[f64; 3], w: &[f64; 3]) -> [f64; 3] {
    let [h20, h11, h02] = *m;
    let j = [
        [-2.0 * c.inv_r_alpha * h20, -2.0 * c.inv_r_alpha * h11, 0.0],
        [
            -c.inv_r_alpha * h11,
            -c.inv_r_beta * h20 - c.inv_r_alpha * h02,
            -c.inv_r_beta * h11,
        ],
        [0.0, -2.0 * c.inv_r_beta * h11, -2.0 * c.inv_r_beta * h02],
    ];
    [
        j[0][0] * w[0] + j[1][0] * w[1] + j[2][0] * w[2],
        j[0][1] * w[0] + j[1][1] * w[1] + j[2][1] * w[2],
        j[0][2] * w[0] + j[1][2] * w[1] + j[2][2] * w[2],
    ]
}

/// `dG/df . w` for the moment system.
#[inline]
fn gf_dot(c: &RhsConsts, m: &[f64; 3], w: &[f64; 3]) -> f64 {
    c.gain * m[1] * w[1] + 2.0 * c.gain * m[2] * w[2]
}

#[inline]
fn axpy(out: &mut [f64; 3], s: f64, v: &[f64; 3]) {
    for i in 0..3 {
        out[i] += s * v[i];
    }
}

/// Runs the reverse sweep. Inputs are the node trajectories produced by the
/// forward evaluation (quadratic coefficients `z`, moments `m`), the stage
/// pattern values (`fc_n` nodes, `fc_h` step midpoints), and the penalty.
#[allow(clippy::too_many_arguments)]
pub(crate) fn reverse_sweep(
    p: &ModelParams,
    spec: &PenaltySpec,
    z: &[[f64; 3]],
    m: &[[f64; 3]],
    fc_n: &[f64],
    fc_h: &[f64],
    dt: f64,
) -> AdjointSweep {
    let c = RhsConsts::new(p);
    let n = z.len() - 1;
    let s_w = 1.0 / c.sigma_w_sq;
    let quad_coeff = c.gain - 0.5;
    let pen_weight = spec.lambda_reg / c.sigma_w_sq;
    let f_init = spec.f_init.values();

    let mut zbar = alloc::vec![[0.0f64; 3]; n + 1];
    let mut mbar = alloc::vec![[0.0f64; 3]; n + 1];
    let mut grad = alloc::vec![0.0f64; n + 1];
    let mut costate_m = alloc::vec![[0.0f64; 3]; n + 1];

    // Stage A: quadrature adjoints. Trapezoid weights dt/2 at the ends.
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 * dt } else { dt };
        let f = fc_n[k];
        let [_, eta, rho] = z[k];
        let [_, h11, h02] = m[k];
        zbar[k][1] += w * (-s_w * c.inv_r_beta * h11 * f);
        zbar[k][2] += w * (-s_w * c.inv_r_beta * h02 * f);
        mbar[k][1] += w * (-s_w * c.inv_r_beta * eta * f);
        mbar[k][2] += w * (s_w * (-c.inv_r_beta * rho * f + quad_coeff * f * f));
        let a = (-eta * h11 - rho * h02) * c.inv_r_beta;
        let b = quad_coeff * h02;
        grad[k] += w * (s_w * (a + 2.0 * b * f) + pen_weight * penalty_derivative(spec.kind, f, f_init[k]));
    }

    // Stage B: reverse the forward moment steps, newest first.
    let h = dt;
    for k in (0..n).rev() {
        let zk = z[k];
        let zk1 = z[k + 1];
        let zh = [
            0.5 * (zk[0] + zk1[0]),
            0.5 * (zk[1] + zk1[1]),
            0.5 * (zk[2] + zk1[2]),
        ];
        let mk = m[k];
        // recompute stage internals
        let r1 = moment_rhs(&c, mk[0], mk[1], mk[2], zk[0], zk[1], zk[2], fc_n[k]);
        let ma = [
            mk[0] + 0.5 * h * r1[0],
            mk[1] + 0.5 * h * r1[1],
            mk[2] + 0.5 * h * r1[2],
        ];
        let r2 = moment_rhs(&c, ma[0], ma[1], ma[2], zh[0], zh[1], zh[2], fc_h[k]);
        let mb = [
            mk[0] + 0.5 * h * r2[0],
            mk[1] + 0.5 * h * r2[1],
            mk[2] + 0.5 * h * r2[2],
        ];
        let r3 = moment_rhs(&c, mb[0], mb[1], mb[2], zh[0], zh[1], zh[2], fc_h[k]);
        let mc = [mk[0] + h * r3[0], mk[1] + h * r3[1], mk[2] + h * r3[2]];

        let ybar = mbar[k + 1];
        costate_m[k + 1] = ybar;
        axpy(&mut mbar[k], 1.0, &ybar);
        let mut rbar4 = [0.0; 3];
        let mut rbar3 = [0.0; 3];
        let mut rbar2 = [0.0; 3];
        let mut rbar1 = [0.0; 3];
        axpy(&mut rbar1, h / 6.0, &ybar);
        axpy(&mut rbar2, h / 3.0, &ybar);
        axpy(&mut rbar3, h / 3.0, &ybar);
        axpy(&mut rbar4, h / 6.0, &ybar);

        // r4 = G(mc, z_{k+1}, fc_n[k+1])
        let u4 = gm_transpose(&c, &zk1, fc_n[k + 1], &rbar4);
        axpy(&mut mbar[k], 1.0, &u4);
        axpy(&mut rbar3, h, &u4);
        let w4 = gz_transpose(&c, &mc, &rbar4);
        axpy(&mut zbar[k + 1], 1.0, &w4);
        grad[k + 1] += gf_dot(&c, &mc, &rbar4);

        // r3 = G(mb, zh, fc_h[k])
        let u3 = gm_transpose(&c, &zh, fc_h[k], &rbar3);
        axpy(&mut mbar[k], 1.0, &u3);
        axpy(&mut rbar2, 0.5 * h, &u3);
        let w3 = gz_transpose(&c, &mb, &rbar3);
        axpy(&mut zbar[k], 0.5, &w3);
        axpy(&mut zbar[k + 1], 0.5, &w3);
        let d3 = gf_dot(&c, &mb, &rbar3);
        grad[k] += 0.5 * d3;
        grad[k + 1] += 0.5 * d3;

        // r2 = G(ma, zh, fc_h[k])
        let u2 = gm_transpose(&c, &zh, fc_h[k], &rbar2);
        axpy(&mut mbar[k], 1.0, &u2);
        axpy(&mut rbar1, 0.5 * h, &u2);
        let w2 = gz_transpose(&c, &ma, &rbar2);
        axpy(&mut zbar[k], 0.5, &w2);
        axpy(&mut zbar[k + 1], 0.5, &w2);
        let d2 = gf_dot(&c, &ma, &rbar2);
        grad[k] += 0.5 * d2;
        grad[k + 1] += 0.5 * d2;

        // r1 = G(mk, z_k, fc_n[k])
        let u1 = gm_transpose(&c, &zk, fc_n[k], &rbar1);
        axpy(&mut mbar[k], 1.0, &u1);
        let w1 = gz_transpose(&c, &mk, &rbar1);
        axpy(&mut zbar[k], 1.0, &w1);
        grad[k] += gf_dot(&c, &mk, &rbar1);
    }
    costate_m[0] = mbar[0];

    // Stage C: reverse the backward coefficient steps. The forward solve
    // produced z_k from z_{k+1} for k = n-1 .. 0, so the reverse order is
    // k = 0 .. n-1; zbar[k] is complete when its step is processed.
    let h = -dt;
    let mut costate_z = alloc::vec![[0.0f64; 3]; n + 1];
    for k in 0..n {
        costate_z[k] = zbar[k];
        let x = z[k + 1];
        let s1 = rhs3(&c, &x, fc_n[k + 1]);
        let za = [
            x[0] + 0.5 * h * s1[0],
            x[1] + 0.5 * h * s1[1],
            x[2] + 0.5 * h * s1[2],
        ];
        let s2 = rhs3(&c, &za, fc_h[k]);
        let zb = [
            x[0] + 0.5 * h * s2[0],
            x[1] + 0.5 * h * s2[1],
            x[2] + 0.5 * h * s2[2],
        ];
        let s3 = rhs3(&c, &zb, fc_h[k]);
        let zc = [x[0] + h * s3[0], x[1] + h * s3[1], x[2] + h * s3[2]];

        let ybar = zbar[k];
        axpy(&mut zbar[k + 1], 1.0, &ybar);
        let mut sbar4 = [0.0; 3];
        let mut sbar3 = [0.0; 3];
        let mut sbar2 = [0.0; 3];
        let mut sbar1 = [0.0; 3];
        axpy(&mut sbar1, h / 6.0, &ybar);
        axpy(&mut sbar2, h / 3.0, &ybar);
        axpy(&mut sbar3, h / 3.0, &ybar);
        axpy(&mut sbar4, h / 6.0, &ybar);

        // s4 = F(zc, fc_n[k])
        let u4 = fz_transpose(&c, &zc, fc_n[k], &sbar4);
        axpy(&mut zbar[k + 1], 1.0, &u4);
        axpy(&mut sbar3, h, &u4);
        grad[k] += ff_dot(&c, &zc, fc_n[k], &sbar4);

        // s3 = F(zb, fc_h[k])
        let u3 = fz_transpose(&c, &zb, fc_h[k], &sbar3);
        axpy(&mut zbar[k + 1], 1.0, &u3);
        axpy(&mut sbar2, 0.5 * h, &u3);
        let d3 = ff_dot(&c, &zb, fc_h[k], &sbar3);
        grad[k] += 0.5 * d3;
        grad[k + 1] += 0.5 * d3;

        // s2 = F(za, fc_h[k])
        let u2 = fz_transpose(&c, &za, fc_h[k], &sbar2);
        axpy(&mut zbar[k + 1], 1.0, &u2);
        axpy(&mut sbar1, 0.5 * h, &u2);
        let d2 = ff_dot(&c, &za, fc_h[k], &sbar2);
        grad[k] += 0.5 * d2;
        grad[k + 1] += 0.5 * d2;

        // s1 = F(z_{k+1}, fc_n[k+1])
        let u1 = fz_transpose(&c, &x, fc_n[k + 1], &sbar1);
        axpy(&mut zbar[k + 1], 1.0, &u1);
        grad[k + 1] += ff_dot(&c, &x, fc_n[k + 1], &sbar1);
    }
    costate_z[n] = zbar[n];

    AdjointSweep {
        grad,
        costate_z,
        costate_m,
    }
}

#[inline]
fn rhs3(c: &RhsConsts, z: &[f64; 3], f: f64) -> [f64; 3] {
    rhs_quadratic(c, z[0], z[1], z[2], f)
}

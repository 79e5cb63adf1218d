//! Forward Euler-Maruyama simulation of the controlled dynamics and Monte
//! Carlo cost estimation.
//!
//! Noise is drawn from the counter-based generator keyed by
//! `(seed, path, step, channel)`, so ensembles are bit-identical across runs
//! and any distribution of paths over workers. Controls are evaluated at the
//! left endpoint of each step.

use alloc::vec::Vec;

use crate::controls::{self, ControlLaw};
use crate::math;
use crate::model::{ModelParams, Pattern, TimeGrid};
use crate::rng;
use crate::sht;
use crate::{Error, Result};

/// Anything that produces the pair `(alpha, beta)` at a grid node. The
/// optimal law implements this; tests use it to inject perturbed or forced
/// controls through the same simulator.
pub trait ControlPolicy {
    fn controls(&self, k: usize, t: f64, v: f64, y: f64) -> (f64, f64);
}

impl ControlPolicy for ControlLaw {
    fn controls(&self, k: usize, _t: f64, v: f64, y: f64) -> (f64, f64) {
        self.controls_at_node(k, v, y)
    }
}

/// One simulated path: states at every node, observation-noise increments,
/// and the controls realized at every node (the final entry is the law
/// evaluated at the terminal state; stepping uses entries `0..n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePath {
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub dw: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// A Monte Carlo ensemble with its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    seed: u64,
    first_path: u64,
    paths: Vec<SinglePath>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn path(&self, i: usize) -> &SinglePath {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[SinglePath] {
        &self.paths
    }
}

/// Simulates one path of the controlled dynamics.
pub fn simulate_single(
    policy: &impl ControlPolicy,
    p: &ModelParams,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
) -> Result<SinglePath> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = math::sqrt(dt);
    let mut v = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let mut dw = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n + 1);
    let mut beta = Vec::with_capacity(n + 1);
    v.push(p.v0);
    y.push(p.y0);

    let mut vk = p.v0;
    let mut yk = p.y0;
    for k in 0..n {
        let (a, b) = policy.controls(k, grid.time(k), vk, yk);
        let zeta_v = rng::standard_normal(seed, path_index, k as u64, 0);
        let zeta_y = rng::standard_normal(seed, path_index, k as u64, 1);
        let dwk = sqrt_dt * zeta_y;
        let v_next = vk + a * dt + p.sigma_b * sqrt_dt * zeta_v;
        let y_next = yk + (vk + b) * dt + p.sigma_w * dwk;
        if !(v_next.is_finite() && y_next.is_finite()) {
            return Err(Error::NonFinite {
                context: "path simulation",
                step: k,
                path: Some(path_index),
            });
        }
        alpha.push(a);
        beta.push(b);
        dw.push(dwk);
        v.push(v_next);
        y.push(y_next);
        vk = v_next;
        yk = y_next;
    }
    let (a, b) = policy.controls(n, grid.time(n), vk, yk);
    alpha.push(a);
    beta.push(b);

    Ok(SinglePath {
        v,
        y,
        dw,
        alpha,
        beta,
    })
}

/// Simulates an ensemble under an arbitrary policy.
pub fn simulate_paths_with(
    policy: &impl ControlPolicy,
    p: &ModelParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let mut paths = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        paths.push(simulate_single(policy, p, grid, seed, i as u64)?);
    }
    Ok(PathEnsemble {
        grid: grid.clone(),
        seed,
        first_path: 0,
        paths,
    })
}

/// Simulates an ensemble under the optimal feedback law.
pub fn simulate_paths(law: &ControlLaw, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    simulate_paths_with(law, law.params(), law.grid(), n_paths, seed)
}

/// A Monte Carlo estimate: mean, standard error, sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> CostEstimate {
        let (mean, stderr) = math::mean_stderr(samples);
        CostEstimate {
            mean,
            stderr,
            n_paths: samples.len(),
        }
    }
}

/// Trapezoidal primary cost of one path plus its terminal cost.
pub fn path_primary_cost(
    path: &SinglePath,
    p: &ModelParams,
    vbar_nodes: &[f64],
    grid: &TimeGrid,
) -> f64 {
    let n = grid.n_steps();
    let mut integrand = Vec::with_capacity(n + 1);
    for k in 0..=n {
        integrand.push(controls::running_cost_r_at(
            p,
            vbar_nodes[k],
            path.v[k],
            path.y[k],
            path.alpha[k],
            path.beta[k],
        ));
    }
    math::trapezoid(&integrand, grid.dt())
        + controls::terminal_cost_g(p, path.v[n], path.y[n])
}

/// Mean and standard error of the primary cost over an ensemble.
pub fn estimate_primary_cost(
    e: &PathEnsemble,
    p: &ModelParams,
    vbar: &Pattern,
) -> Result<CostEstimate> {
    let (vbar_nodes, _) = vbar.stage_values(&e.grid)?;
    let samples: Vec<f64> = e
        .paths
        .iter()
        .map(|path| path_primary_cost(path, p, &vbar_nodes, &e.grid))
        .collect();
    Ok(CostEstimate::from_samples(&samples))
}

/// Mean and standard error of the combined blue objective: per-path primary
/// cost minus `lambda` times the pathwise log-likelihood statistic.
pub fn estimate_blue_cost(
    e: &PathEnsemble,
    p: &ModelParams,
    f_c: &Pattern,
    f_d: &Pattern,
    vbar: &Pattern,
) -> Result<CostEstimate> {
    let (vbar_nodes, _) = vbar.stage_values(&e.grid)?;
    let (fc_nodes, _) = f_c.stage_values(&e.grid)?;
    let (fd_nodes, _) = f_d.stage_values(&e.grid)?;
    let mut samples = Vec::with_capacity(e.n_paths());
    for path in &e.paths {
        let primary = path_primary_cost(path, p, &vbar_nodes, &e.grid);
        let log_l = sht::log_likelihood_nodes(&path.v, &path.y, &fc_nodes, &fd_nodes, p, &e.grid);
        samples.push(primary - p.lambda * log_l);
    }
    Ok(CostEstimate::from_samples(&samples))
}

/// Streaming Monte Carlo statistics of a blue run: cost estimates, both
/// log-likelihood estimators, and ensemble-mean trajectories. Paths are
/// simulated one at a time, so arbitrarily large ensembles fit in memory.
#[derive(Debug, Clone)]
pub struct BlueMcStats {
    pub primary: CostEstimate,
    pub blue: CostEstimate,
    pub log_l: sht::LogLikelihoodEstimates,
    pub mean_v: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub mean_alpha: Vec<f64>,
    pub mean_beta: Vec<f64>,
    pub max_abs_beta: f64,
}

pub fn blue_mc_stats(
    law: &ControlLaw,
    vbar: &Pattern,
    n_paths: usize,
    seed: u64,
) -> Result<BlueMcStats> {
    let p = law.params();
    let grid = law.grid();
    let n = grid.n_steps();
    let (vbar_nodes, _) = vbar.stage_values(grid)?;
    let (fc_nodes, _) = law.f_c().stage_values(grid)?;
    let (fd_nodes, _) = law.f_d().stage_values(grid)?;

    let mut primary = Vec::with_capacity(n_paths);
    let mut pathwise = Vec::with_capacity(n_paths);
    let mut drift_form = Vec::with_capacity(n_paths);
    let mut gap = Vec::with_capacity(n_paths);
    let mut blue = Vec::with_capacity(n_paths);
    let mut mean_v = alloc::vec![0.0; n + 1];
    let mut mean_y = alloc::vec![0.0; n + 1];
    let mut mean_alpha = alloc::vec![0.0; n + 1];
    let mut mean_beta = alloc::vec![0.0; n + 1];
    let mut max_abs_beta = 0.0f64;

    for i in 0..n_paths {
        let path = simulate_single(law, p, grid, seed, i as u64)?;
        let cost = path_primary_cost(&path, p, &vbar_nodes, grid);
        let lp = sht::log_likelihood_nodes(&path.v, &path.y, &fc_nodes, &fd_nodes, p, grid);
        let ld = sht::drift_form_log_likelihood_nodes(
            &path.y,
            &path.beta,
            &fc_nodes,
            &fd_nodes,
            p,
            grid,
        );
        primary.push(cost);
        pathwise.push(lp);
        drift_form.push(ld);
        gap.push(lp - ld);
        blue.push(cost - p.lambda * lp);
        for k in 0..=n {
            mean_v[k] += path.v[k];
            mean_y[k] += path.y[k];
            mean_alpha[k] += path.alpha[k];
            mean_beta[k] += path.beta[k];
            let ab = math::abs(path.beta[k]);
            if ab > max_abs_beta {
                max_abs_beta = ab;
            }
        }
    }
    let inv = 1.0 / n_paths as f64;
    for k in 0..=n {
        mean_v[k] *= inv;
        mean_y[k] *= inv;
        mean_alpha[k] *= inv;
        mean_beta[k] *= inv;
    }

    Ok(BlueMcStats {
        primary: CostEstimate::from_samples(&primary),
        blue: CostEstimate::from_samples(&blue),
        log_l: sht::LogLikelihoodEstimates {
            pathwise: CostEstimate::from_samples(&pathwise),
            drift_form: CostEstimate::from_samples(&drift_form),
            martingale_gap: CostEstimate::from_samples(&gap),
        },
        mean_v,
        mean_y,
        mean_alpha,
        mean_beta,
        max_abs_beta,
    })
}

/// Streaming Monte Carlo estimates of the terminal second moments
/// `E[V_T^2]`, `E[V_T Y_T]`, `E[Y_T^2]`.
#[derive(Debug, Clone, Copy)]
pub struct TerminalMomentStats {
    pub m20: CostEstimate,
    pub m11: CostEstimate,
    pub m02: CostEstimate,
}

pub fn terminal_moment_stats(
    law: &ControlLaw,
    n_paths: usize,
    seed: u64,
) -> Result<TerminalMomentStats> {
    let p = law.params();
    let grid = law.grid();
    let n = grid.n_steps();
    let mut m20 = Vec::with_capacity(n_paths);
    let mut m11 = Vec::with_capacity(n_paths);
    let mut m02 = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let path = simulate_single(law, p, grid, seed, i as u64)?;
        let (vt, yt) = (path.v[n], path.y[n]);
        m20.push(vt * vt);
        m11.push(vt * yt);
        m02.push(yt * yt);
    }
    Ok(TerminalMomentStats {
        m20: CostEstimate::from_samples(&m20),
        m11: CostEstimate::from_samples(&m11),
        m02: CostEstimate::from_samples(&m02),
    })
}

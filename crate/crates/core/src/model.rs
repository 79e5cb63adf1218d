//! Model parameters, uniform time grids, and sampled time patterns.
//!
//! Everything here is immutable after construction and safe to share across
//! concurrent workers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Scalar constants of the misdirection game.
///
/// `lambda` weights the likelihood-ratio term in the blue objective and must
/// satisfy `0 <= lambda <= r_beta * sigma_w^2` for the backward coefficient
/// system to stay bounded on the whole horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Horizon `T`.
    pub horizon: f64,
    /// Velocity noise volatility.
    pub sigma_b: f64,
    /// Position (observation) noise volatility.
    pub sigma_w: f64,
    /// Acceleration effort weight.
    pub r_alpha: f64,
    /// Instantaneous-velocity effort weight.
    pub r_beta: f64,
    /// Velocity tracking weight.
    pub r_v: f64,
    /// Terminal velocity weight.
    pub t_v: f64,
    /// Terminal velocity target.
    pub vbar_terminal: f64,
    /// Misdirection intensity.
    pub lambda: f64,
    /// Deterministic initial velocity.
    pub v0: f64,
    /// Deterministic initial position.
    pub y0: f64,
}

impl ModelParams {
    /// Upper bound `r_beta * sigma_w^2` for the misdirection intensity.
    pub fn misdirection_bound(&self) -> f64 {
        self.r_beta * self.sigma_w * self.sigma_w
    }

    /// `lambda / (r_beta * sigma_w^2)`, the pattern gain in the controls;
    /// exactly zero when `lambda` is zero.
    pub fn pattern_gain(&self) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda / self.misdirection_bound()
        }
    }

    pub fn validated(self) -> Result<Self> {
        validate_params(self)
    }
}

/// Checks every parameter invariant; returns the parameters unchanged on
/// success and names the violated constraint otherwise.
pub fn validate_params(p: ModelParams) -> Result<ModelParams> {
    fn positive(name: &'static str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                message: format!("must be finite and strictly positive, got {value}"),
            });
        }
        Ok(())
    }
    fn finite(name: &'static str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter {
                name,
                message: format!("must be finite, got {value}"),
            });
        }
        Ok(())
    }

    positive("horizon", p.horizon)?;
    positive("sigma_b", p.sigma_b)?;
    positive("sigma_w", p.sigma_w)?;
    positive("r_alpha", p.r_alpha)?;
    positive("r_beta", p.r_beta)?;
    positive("r_v", p.r_v)?;
    positive("t_v", p.t_v)?;
    finite("vbar_terminal", p.vbar_terminal)?;
    finite("v0", p.v0)?;
    finite("y0", p.y0)?;
    finite("lambda", p.lambda)?;
    if p.lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            message: format!("must be nonnegative, got {}", p.lambda),
        });
    }
    let bound = p.misdirection_bound();
    if p.lambda > bound {
        return Err(Error::InvalidParameter {
            name: "lambda",
            message: format!(
                "lambda exceeds r_beta*sigma_w^2: {} > {bound}",
                p.lambda
            ),
        });
    }
    Ok(p)
}

/// Uniform grid `t_k = k * T / n`, `k = 0..=n`.
///
/// Endpoints are exact: `times[0] == 0` and `times[n] == horizon` bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                message: format!("must be finite and strictly positive, got {horizon}"),
            });
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "n_steps",
                message: String::from("must be at least 1"),
            });
        }
        let times = (0..=n_steps)
            .map(|k| node_time(horizon, n_steps, k))
            .collect();
        Ok(TimeGrid {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Midpoint of the step `[t_k, t_{k+1}]`, used by RK4 half-stages.
    pub fn half_time(&self, k: usize) -> f64 {
        0.5 * (self.times[k] + self.times[k + 1])
    }
}

#[inline]
fn node_time(horizon: f64, n_steps: usize, k: usize) -> f64 {
    // ratio first: k = n gives exactly 1.0, so times[n] == horizon bitwise
    (k as f64 / n_steps as f64) * horizon
}

/// Descriptor for building a pattern from a closed form or raw samples.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternKind {
    Constant(f64),
    /// `amplitude * sin(omega * t)`
    Sinusoid { amplitude: f64, omega: f64 },
    /// `offset + slope * t`
    Affine { offset: f64, slope: f64 },
    Samples(Vec<f64>),
}

/// A real function on `[0, T]`, stored as samples on a uniform grid and
/// evaluated with piecewise-linear interpolation. Grid-time evaluation
/// returns the stored sample exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    horizon: f64,
    values: Vec<f64>,
    label: String,
}

impl Pattern {
    /// Samples a descriptor on the grid. Closed-form kinds are stored
    /// bit-exactly as the closed form evaluated at each node.
    pub fn from_kind(kind: &PatternKind, grid: &TimeGrid, label: &str) -> Result<Pattern> {
        let values: Vec<f64> = match kind {
            PatternKind::Constant(c) => {
                check_finite(*c, "constant pattern value")?;
                (0..=grid.n_steps()).map(|_| *c).collect()
            }
            PatternKind::Sinusoid { amplitude, omega } => {
                check_finite(*amplitude, "sinusoid amplitude")?;
                check_finite(*omega, "sinusoid omega")?;
                grid.times()
                    .iter()
                    .map(|&t| amplitude * math::sin(omega * t))
                    .collect()
            }
            PatternKind::Affine { offset, slope } => {
                check_finite(*offset, "affine offset")?;
                check_finite(*slope, "affine slope")?;
                grid.times().iter().map(|&t| offset + slope * t).collect()
            }
            PatternKind::Samples(samples) => {
                if samples.len() != grid.n_steps() + 1 {
                    return Err(Error::GridMismatch {
                        expected: grid.n_steps() + 1,
                        found: samples.len(),
                    });
                }
                for &s in samples {
                    check_finite(s, "pattern sample")?;
                }
                samples.clone()
            }
        };
        Ok(Pattern {
            horizon: grid.horizon(),
            values,
            label: String::from(label),
        })
    }

    pub fn constant(c: f64, grid: &TimeGrid) -> Result<Pattern> {
        Pattern::from_kind(&PatternKind::Constant(c), grid, "constant")
    }

    pub fn zero(grid: &TimeGrid) -> Pattern {
        Pattern::constant(0.0, grid).expect("zero pattern is always valid")
    }

    pub fn from_samples(samples: Vec<f64>, grid: &TimeGrid, label: &str) -> Result<Pattern> {
        Pattern::from_kind(&PatternKind::Samples(samples), grid, label)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn max_abs(&self) -> f64 {
        math::max_abs(&self.values)
    }

    /// True when this pattern is sampled on exactly the given grid.
    pub fn matches_grid(&self, grid: &TimeGrid) -> bool {
        self.values.len() == grid.n_steps() + 1 && self.horizon == grid.horizon()
    }

    fn node_time(&self, k: usize) -> f64 {
        node_time(self.horizon, self.n_steps(), k)
    }

    /// Piecewise-linear evaluation; exact at grid nodes; errors outside
    /// `[0, T]`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let n = self.n_steps();
        let dt = self.horizon / n as f64;
        let mut i = math::floor(t / dt) as usize;
        if i >= n {
            i = n - 1;
        }
        // Guard against rounding in the index estimate.
        while i > 0 && t < self.node_time(i) {
            i -= 1;
        }
        while i + 1 < n && t >= self.node_time(i + 1) {
            i += 1;
        }
        let t0 = self.node_time(i);
        let t1 = self.node_time(i + 1);
        if t == t0 {
            return Ok(self.values[i]);
        }
        if t == t1 {
            return Ok(self.values[i + 1]);
        }
        let u = (t - t0) / (t1 - t0);
        Ok(self.values[i] + u * (self.values[i + 1] - self.values[i]))
    }

    /// Node values and step-midpoint values on the given grid, as needed by
    /// the RK4 stages. When the pattern lives on that grid the midpoints are
    /// exact averages of adjacent samples.
    pub fn stage_values(&self, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.matches_grid(grid) {
            let nodes = self.values.clone();
            let halves = (0..grid.n_steps())
                .map(|k| 0.5 * (self.values[k] + self.values[k + 1]))
                .collect();
            return Ok((nodes, halves));
        }
        if self.horizon != grid.horizon() {
            return Err(Error::GridMismatch {
                expected: grid.n_steps() + 1,
                found: self.values.len(),
            });
        }
        let nodes = grid
            .times()
            .iter()
            .map(|&t| self.eval(t))
            .collect::<Result<Vec<f64>>>()?;
        let halves = (0..grid.n_steps())
            .map(|k| self.eval(grid.half_time(k)))
            .collect::<Result<Vec<f64>>>()?;
        Ok((nodes, halves))
    }
}

/// Convenience wrapper matching the operation name used elsewhere.
pub fn pattern_eval(f: &Pattern, t: f64) -> Result<f64> {
    f.eval(t)
}

pub fn make_pattern(kind: &PatternKind, grid: &TimeGrid, label: &str) -> Result<Pattern> {
    Pattern::from_kind(kind, grid, label)
}

fn check_finite(value: f64, name: &'static str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            message: format!("must be finite, got {value}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameters used throughout the long-horizon experiments.
    pub(crate) fn long_horizon_params() -> ModelParams {
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

    /// Parameters used by the short-horizon pattern-optimization experiments.
    pub(crate) fn short_horizon_params(lambda: f64) -> ModelParams {
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

    #[test]
    fn accepts_reference_parameter_sets() {
        assert!(validate_params(long_horizon_params()).is_ok());
        for lambda in [0.0, 0.025, 0.05, 0.075] {
            let mut p = long_horizon_params();
            p.lambda = lambda;
            assert!(validate_params(p).is_ok(), "lambda {lambda}");
        }
        for lambda in [0.05, 0.075, 0.1] {
            assert!(validate_params(short_horizon_params(lambda)).is_ok());
        }
    }

    #[test]
    fn lambda_bound_is_r_beta_sigma_w_squared() {
        // r_beta = 10, sigma_w = 0.25 -> bound 0.625
        let p = long_horizon_params();
        assert_eq!(p.misdirection_bound(), 0.625);
        assert!(validate_params(p).is_ok());

        let mut zero = p;
        zero.lambda = 0.0;
        assert!(validate_params(zero).is_ok());

        let mut over = p;
        over.lambda = 1.0;
        let err = validate_params(over).unwrap_err();
        match err {
            Error::InvalidParameter { name, message } => {
                assert_eq!(name, "lambda");
                assert!(message.contains("exceeds"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_weights() {
        let mut p = long_horizon_params();
        p.r_beta = 0.0;
        assert!(matches!(
            validate_params(p),
            Err(Error::InvalidParameter { name: "r_beta", .. })
        ));
        let mut p = long_horizon_params();
        p.sigma_w = -0.1;
        assert!(validate_params(p).is_err());
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(2000), 1.0);
        let grid = TimeGrid::new(0.1, 1000).unwrap();
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(1000), 0.1);
    }

    #[test]
    fn grid_spacing_is_uniform() {
        let grid = TimeGrid::new(0.7, 613).unwrap();
        let dt = grid.dt();
        for k in 0..grid.n_steps() {
            let gap = grid.time(k + 1) - grid.time(k);
            assert!((gap - dt).abs() <= 4.0 * f64::EPSILON * grid.horizon());
        }
    }

    #[test]
    fn constant_pattern_evaluates_everywhere() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = Pattern::constant(0.5, &grid).unwrap();
        for &t in &[0.0, 0.123, 0.5, 0.999, 1.0] {
            assert_eq!(p.eval(t).unwrap(), 0.5);
        }
    }

    #[test]
    fn two_sample_midpoint_interpolates() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let p = Pattern::from_samples(alloc::vec![0.0, 1.0], &grid, "ramp").unwrap();
        assert_eq!(p.eval(0.5).unwrap(), 0.5);
    }

    #[test]
    fn sinusoid_sample_density_is_adequate() {
        // 0.5*sin(10 pi t) evaluated at t = 0.05 (a grid node) is exactly
        // the stored closed-form sample; the closed form there is 0.5.
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let omega = 10.0 * core::f64::consts::PI;
        let p = Pattern::from_kind(
            &PatternKind::Sinusoid {
                amplitude: 0.5,
                omega,
            },
            &grid,
            "sin",
        )
        .unwrap();
        let direct = 0.5 * (omega * 0.05f64).sin();
        assert_eq!(p.eval(0.05).unwrap(), direct);
        assert!((p.eval(0.05).unwrap() - 0.5).abs() < 1e-12);
        // Between nodes the linear interpolant of a dense sinusoid stays
        // within the curvature bound amp * (omega dt)^2 / 8 ~ 1.6e-5.
        let t = 0.05 + grid.dt() / 3.0;
        assert!((p.eval(t).unwrap() - 0.5 * (omega * t).sin()).abs() < 2e-5);
    }

    #[test]
    fn closed_form_kinds_store_bit_exact_samples() {
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let omega = 10.0 * core::f64::consts::PI;
        let sin = Pattern::from_kind(
            &PatternKind::Sinusoid {
                amplitude: 0.5,
                omega,
            },
            &grid,
            "sin",
        )
        .unwrap();
        let affine = Pattern::from_kind(
            &PatternKind::Affine {
                offset: 2.0,
                slope: -1.0,
            },
            &grid,
            "ref",
        )
        .unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            assert_eq!(sin.values()[k], 0.5 * (omega * t).sin());
            assert_eq!(affine.values()[k], 2.0 - t);
        }
        assert_eq!(affine.values()[0], 2.0);
        assert_eq!(affine.values()[400], 1.0);
        let zero = Pattern::constant(0.0, &grid).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = Pattern::constant(1.0, &grid).unwrap();
        assert!(matches!(p.eval(-0.01), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(p.eval(1.01), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn samples_length_must_match_grid() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!(matches!(
            Pattern::from_samples(alloc::vec![0.0; 4], &grid, "bad"),
            Err(Error::GridMismatch {
                expected: 5,
                found: 4
            })
        ));
    }

    #[test]
    fn stage_values_use_exact_midpoint_averages_on_matching_grid() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let p = Pattern::from_kind(
            &PatternKind::Affine {
                offset: 1.0,
                slope: 2.0,
            },
            &grid,
            "aff",
        )
        .unwrap();
        let (nodes, halves) = p.stage_values(&grid).unwrap();
        assert_eq!(nodes, p.values());
        for k in 0..8 {
            assert_eq!(halves[k], 0.5 * (p.values()[k] + p.values()[k + 1]));
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Piecewise-linear interpolation is Lipschitz with the max
            // adjacent-sample slope.
            #[test]
            fn eval_is_lipschitz(
                values in proptest::collection::vec(-10.0f64..10.0, 5..20),
                a in 0.0f64..1.0,
                b in 0.0f64..1.0,
            ) {
                let n = values.len() - 1;
                let grid = TimeGrid::new(1.0, n).unwrap();
                let p = Pattern::from_samples(values.clone(), &grid, "prop").unwrap();
                let dt = grid.dt();
                let lip = (0..n)
                    .map(|k| (values[k + 1] - values[k]).abs() / dt)
                    .fold(0.0f64, f64::max);
                let (fa, fb) = (p.eval(a).unwrap(), p.eval(b).unwrap());
                prop_assert!((fa - fb).abs() <= lip * (a - b).abs() + 1e-9);
            }

            #[test]
            fn grid_nodes_evaluate_to_stored_samples(
                values in proptest::collection::vec(-5.0f64..5.0, 3..30),
            ) {
                let n = values.len() - 1;
                let grid = TimeGrid::new(0.37, n).unwrap();
                let p = Pattern::from_samples(values.clone(), &grid, "prop").unwrap();
                for (k, &t) in grid.times().iter().enumerate() {
                    prop_assert_eq!(p.eval(t).unwrap(), values[k]);
                }
            }
        }
    }
}

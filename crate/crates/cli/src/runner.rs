//! Executes parsed experiments and emits their artifacts.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use deception_lq_core::controls::ControlLaw;
use deception_lq_core::diagnostics::{
    consistency_triangle, corollary_nullity, hjb_residual, moment_invariants,
    pointwise_minimality, step_halving, CheckResult,
};
use deception_lq_core::model::{validate_params, Pattern, PatternKind, TimeGrid};
use deception_lq_core::redopt::{
    baseline_expected_log_l, cross_validate, match_lambda, optimize_fbs, optimize_fpi,
    optimize_param_gd, FbsOptions, FpiOptions, GdOptions, PenaltySpec, RedMethod, RedResult,
};
use deception_lq_core::riccati::{solve_backward, RiccatiCoeffs};
use deception_lq_core::sht::{expected_log_l_analytic, solve_moments, MomentTrajectories};
use deception_lq_core::simulate::{blue_mc_stats, simulate_single, BlueMcStats};

use crate::config::{ExperimentConfig, ExperimentKind, Overrides, RedOptConfig};
use crate::export::{ArtifactSink, CsvCell, ManifestGrid, ManifestOverrides, RunManifest};

/// Result of a run: where artifacts went and, for validation runs, whether
/// every property passed.
pub struct RunOutcome {
    pub validate_passed: Option<bool>,
}

/// Runs a parsed experiment end to end, including the manifest.
pub fn run(
    cfg: &ExperimentConfig,
    expected_kind: &str,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<RunOutcome> {
    if cfg.experiment.name() != expected_kind {
        bail!(
            "config stage mismatch: subcommand expects kind `{expected_kind}` but the config declares `{}`",
            cfg.experiment.name()
        );
    }
    let started = Instant::now();
    let mut sink = ArtifactSink::new(out_dir)?;
    let grid = TimeGrid::new(cfg.params.horizon, cfg.n_steps).context("building the time grid")?;

    let mut validate_passed = None;
    let seed = match &cfg.experiment {
        ExperimentKind::BlueSim { mc, .. } | ExperimentKind::BlueSweep { mc, .. } => Some(mc.seed),
        ExperimentKind::Validate { seed, .. } => Some(*seed),
        _ => None,
    };

    match &cfg.experiment {
        ExperimentKind::BlueSim { mc, cases } => {
            run_blue_sim(cfg, &grid, mc.n_paths, mc.seed, mc.export_paths, cases, &mut sink)
                .context("stage blue-sim")?
        }
        ExperimentKind::BlueSweep { mc, lambdas } => {
            run_blue_sweep(cfg, &grid, mc.n_paths, mc.seed, lambdas, &mut sink)
                .context("stage blue-sweep")?
        }
        ExperimentKind::RedOpt(red) => {
            run_red_opt(cfg, &grid, red, &mut sink).context("stage red-opt")?
        }
        ExperimentKind::Moments => run_moments(cfg, &grid, &mut sink).context("stage moments")?,
        ExperimentKind::Validate {
            n_paths,
            seed,
            points,
        } => {
            validate_passed = Some(
                run_validate(cfg, &grid, *n_paths, *seed, *points, &mut sink)
                    .context("stage validate")?,
            );
        }
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.experiment.name().to_string(),
        config_echo: cfg.raw.clone(),
        overrides: ManifestOverrides {
            seed: overrides.seed,
            n_paths: overrides.n_paths,
            n_steps: overrides.n_steps,
        },
        grid: ManifestGrid {
            n_steps: grid.n_steps(),
            dt: grid.dt(),
            horizon: grid.horizon(),
        },
        seed,
        duration_ms: started.elapsed().as_millis(),
        artifacts: Vec::new(),
    };
    manifest.write(&mut sink)?;
    Ok(RunOutcome { validate_passed })
}

fn coeff_rows(coeffs: &RiccatiCoeffs) -> Vec<Vec<CsvCell>> {
    let grid = coeffs.grid();
    (0..=grid.n_steps())
        .map(|k| {
            vec![
                CsvCell::Num(grid.time(k)),
                CsvCell::Num(coeffs.mu[k]),
                CsvCell::Num(coeffs.eta[k]),
                CsvCell::Num(coeffs.rho[k]),
                CsvCell::Num(coeffs.gamma[k]),
                CsvCell::Num(coeffs.theta[k]),
                CsvCell::Num(coeffs.xi[k]),
            ]
        })
        .collect()
}

const COEFF_HEADER: [&str; 7] = ["t", "mu", "eta", "rho", "gamma", "theta", "xi"];
const TRAJ_HEADER: [&str; 5] = ["t", "V", "Y", "alpha", "beta"];

#[derive(Serialize)]
struct CaseSummary {
    case: String,
    lambda: f64,
    j_primary: f64,
    j_primary_stderr: f64,
    e_log_l: f64,
    e_log_l_stderr: f64,
    j_blue: f64,
    j_blue_stderr: f64,
    mean_y_terminal: f64,
}

fn summarize(name: &str, lambda: f64, stats: &BlueMcStats) -> CaseSummary {
    CaseSummary {
        case: name.to_string(),
        lambda,
        j_primary: stats.primary.mean,
        j_primary_stderr: stats.primary.stderr,
        e_log_l: stats.log_l.pathwise.mean,
        e_log_l_stderr: stats.log_l.pathwise.stderr,
        j_blue: stats.blue.mean,
        j_blue_stderr: stats.blue.stderr,
        mean_y_terminal: *stats.mean_y.last().unwrap(),
    }
}

fn summary_row(s: &CaseSummary) -> Vec<CsvCell> {
    vec![
        CsvCell::Text(s.case.clone()),
        CsvCell::Num(s.lambda),
        CsvCell::Num(s.j_primary),
        CsvCell::Num(s.j_primary_stderr),
        CsvCell::Num(s.e_log_l),
        CsvCell::Num(s.e_log_l_stderr),
        CsvCell::Num(s.j_blue),
        CsvCell::Num(s.j_blue_stderr),
        CsvCell::Num(s.mean_y_terminal),
    ]
}

const SUMMARY_HEADER: [&str; 9] = [
    "case",
    "lambda",
    "j_primary",
    "j_primary_stderr",
    "e_log_l",
    "e_log_l_stderr",
    "j_blue",
    "j_blue_stderr",
    "mean_y_terminal",
];

#[allow(clippy::too_many_arguments)]
fn run_blue_sim(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    export_paths: usize,
    cases: &[crate::config::BlueCase],
    sink: &mut ArtifactSink,
) -> Result<()> {
    let vbar = Pattern::from_kind(&cfg.vbar, grid, "vbar")?;
    let f_d = Pattern::from_kind(&cfg.f_d, grid, "f_d")?;
    let mut summaries = Vec::new();

    for case in cases {
        let mut params = cfg.params;
        if let Some(lambda) = case.lambda {
            params.lambda = lambda;
        }
        let f_c = Pattern::from_kind(&case.f_c, grid, "f_c")?;
        let law = ControlLaw::new(params, f_c, f_d.clone(), &vbar, grid)
            .with_context(|| format!("case `{}`", case.name))?;

        sink.write_csv(
            &format!("{}_coeffs.csv", case.name),
            &COEFF_HEADER,
            &coeff_rows(law.coeffs()),
        )?;

        let stats = blue_mc_stats(&law, &vbar, n_paths, seed)
            .with_context(|| format!("case `{}`", case.name))?;
        let mean_rows: Vec<Vec<CsvCell>> = (0..=grid.n_steps())
            .map(|k| {
                vec![
                    CsvCell::Num(grid.time(k)),
                    CsvCell::Num(stats.mean_v[k]),
                    CsvCell::Num(stats.mean_y[k]),
                    CsvCell::Num(stats.mean_alpha[k]),
                    CsvCell::Num(stats.mean_beta[k]),
                ]
            })
            .collect();
        sink.write_csv(&format!("{}_mean.csv", case.name), &TRAJ_HEADER, &mean_rows)?;

        for i in 0..export_paths.min(n_paths) {
            let path = simulate_single(&law, &params, grid, seed, i as u64)?;
            let rows: Vec<Vec<CsvCell>> = (0..=grid.n_steps())
                .map(|k| {
                    vec![
                        CsvCell::Num(grid.time(k)),
                        CsvCell::Num(path.v[k]),
                        CsvCell::Num(path.y[k]),
                        CsvCell::Num(path.alpha[k]),
                        CsvCell::Num(path.beta[k]),
                    ]
                })
                .collect();
            sink.write_csv(&format!("{}_path{i}.csv", case.name), &TRAJ_HEADER, &rows)?;
        }

        summaries.push(summarize(&case.name, params.lambda, &stats));
    }

    let rows: Vec<Vec<CsvCell>> = summaries.iter().map(summary_row).collect();
    sink.write_csv("summary.csv", &SUMMARY_HEADER, &rows)?;
    sink.write_json("summary.json", &summaries)?;
    Ok(())
}

fn run_blue_sweep(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    lambdas: &[f64],
    sink: &mut ArtifactSink,
) -> Result<()> {
    let vbar = Pattern::from_kind(&cfg.vbar, grid, "vbar")?;
    let f_d = Pattern::from_kind(&cfg.f_d, grid, "f_d")?;
    let f_c_kind = cfg.f_c.as_ref().expect("checked at parse time");
    let f_c = Pattern::from_kind(f_c_kind, grid, "f_c")?;

    let mut summaries = Vec::new();
    for &lambda in lambdas {
        let mut params = cfg.params;
        params.lambda = lambda;
        let law = ControlLaw::new(params, f_c.clone(), f_d.clone(), &vbar, grid)
            .with_context(|| format!("lambda = {lambda}"))?;
        let stats = blue_mc_stats(&law, &vbar, n_paths, seed)?;
        summaries.push(summarize(&format!("lambda_{lambda}"), lambda, &stats));
    }

    let rows: Vec<Vec<CsvCell>> = summaries.iter().map(summary_row).collect();
    sink.write_csv("sweep.csv", &SUMMARY_HEADER, &rows)?;
    sink.write_json("sweep.json", &summaries)?;
    Ok(())
}

#[derive(Serialize)]
struct BaselineRecord {
    lambda: f64,
    baseline_e_log_l: f64,
    matched: bool,
    candidates: Option<Vec<f64>>,
    target: Option<f64>,
}

#[derive(Serialize)]
struct RedRecord {
    method: String,
    penalty: String,
    lambda_reg: f64,
    objective: f64,
    expected_log_l: f64,
    penalty_value: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct ConsistencyRecord {
    penalty: String,
    lambda_reg: f64,
    method_a: String,
    method_b: String,
    f_gap: f64,
    objective_gap: f64,
    flagged: bool,
}

fn require_null_pattern(kind: &PatternKind, name: &str) -> Result<()> {
    if !matches!(kind, PatternKind::Constant(c) if *c == 0.0) {
        bail!("{name} must be the zero pattern in the simplified setting");
    }
    Ok(())
}

fn run_red_opt(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    red: &RedOptConfig,
    sink: &mut ArtifactSink,
) -> Result<()> {
    require_null_pattern(&cfg.f_d, "f_d")?;
    require_null_pattern(&cfg.vbar, "vbar")?;
    if cfg.params.vbar_terminal != 0.0 {
        bail!("params.vbar_terminal must be 0 in the simplified setting");
    }

    // resolve the intensity, by baseline matching when candidates are given
    let mut params = cfg.params;
    let baseline = match &red.lambda_candidates {
        Some(candidates) => {
            let matched = match_lambda(
                &params,
                candidates,
                grid,
                red.baseline_target,
                red.baseline_rel_tol,
            )?;
            match matched {
                Some(m) => {
                    params.lambda = m.lambda;
                    BaselineRecord {
                        lambda: m.lambda,
                        baseline_e_log_l: m.baseline,
                        matched: true,
                        candidates: Some(candidates.clone()),
                        target: Some(red.baseline_target),
                    }
                }
                None => BaselineRecord {
                    lambda: params.lambda,
                    baseline_e_log_l: baseline_expected_log_l(&params, grid)?,
                    matched: false,
                    candidates: Some(candidates.clone()),
                    target: Some(red.baseline_target),
                },
            }
        }
        None => BaselineRecord {
            lambda: params.lambda,
            baseline_e_log_l: baseline_expected_log_l(&params, grid)?,
            matched: false,
            candidates: None,
            target: None,
        },
    };
    sink.write_json("baseline.json", &baseline)?;

    let f_init = Pattern::from_kind(&red.f_init, grid, "f_init")?;
    let f0 = match &red.f0 {
        Some(kind) => Pattern::from_kind(kind, grid, "f0")?,
        None => f_init.clone(),
    };

    let mut records = Vec::new();
    let mut consistency_rows = Vec::new();
    for &penalty_kind in &red.penalties {
        for &lambda_reg in &red.lambda_regs {
            let spec = PenaltySpec::new(penalty_kind, f_init.clone(), lambda_reg)?;
            let mut group: Vec<RedResult> = Vec::new();
            for &method in &red.methods {
                let result = match method {
                    RedMethod::Fpi => optimize_fpi(
                        &params,
                        &spec,
                        &f0,
                        grid,
                        FpiOptions {
                            tol: red.tol,
                            max_iter: red.max_iter,
                            damping: red.damping,
                        },
                    )?,
                    RedMethod::Fbs => optimize_fbs(
                        &params,
                        &spec,
                        &f0,
                        grid,
                        FbsOptions {
                            tol: red.tol,
                            max_iter: red.max_iter,
                            relaxation: red.relaxation,
                        },
                    )?,
                    RedMethod::Gd => optimize_param_gd(
                        &params,
                        &spec,
                        red.gd_basis,
                        None,
                        grid,
                        GdOptions {
                            step: red.gd_step,
                            max_iter: red.max_iter,
                            tol: red.tol,
                        },
                    )?,
                };

                let rows: Vec<Vec<CsvCell>> = (0..=grid.n_steps())
                    .map(|k| {
                        vec![
                            CsvCell::Num(grid.time(k)),
                            CsvCell::Num(result.f_hat.values()[k]),
                        ]
                    })
                    .collect();
                sink.write_csv(
                    &format!(
                        "fhat_{}_{}_lreg{lambda_reg}.csv",
                        method.name(),
                        penalty_kind.name()
                    ),
                    &["t", "f_hat"],
                    &rows,
                )?;

                records.push(RedRecord {
                    method: method.name().to_string(),
                    penalty: penalty_kind.name().to_string(),
                    lambda_reg,
                    objective: result.objective,
                    expected_log_l: result.expected_log_l,
                    penalty_value: result.penalty,
                    iterations: result.iterations,
                    converged: result.converged,
                });
                group.push(result);
            }

            if group.len() >= 2 {
                let report = cross_validate(&group, 0.05, 0.01)?;
                for pair in &report.pairs {
                    consistency_rows.push(ConsistencyRecord {
                        penalty: penalty_kind.name().to_string(),
                        lambda_reg,
                        method_a: pair.method_a.name().to_string(),
                        method_b: pair.method_b.name().to_string(),
                        f_gap: pair.f_gap,
                        objective_gap: pair.objective_gap,
                        flagged: pair.flagged,
                    });
                }
            }
        }
    }

    let rows: Vec<Vec<CsvCell>> = records
        .iter()
        .map(|r| {
            vec![
                CsvCell::Text(r.method.clone()),
                CsvCell::Text(r.penalty.clone()),
                CsvCell::Num(r.lambda_reg),
                CsvCell::Num(r.objective),
                CsvCell::Num(r.expected_log_l),
                CsvCell::Num(r.penalty_value),
                CsvCell::Int(r.iterations as i64),
                CsvCell::Text(r.converged.to_string()),
            ]
        })
        .collect();
    sink.write_csv(
        "results.csv",
        &[
            "method",
            "penalty",
            "lambda_reg",
            "objective",
            "expected_log_l",
            "penalty_value",
            "iterations",
            "converged",
        ],
        &rows,
    )?;
    sink.write_json("results.json", &records)?;

    let rows: Vec<Vec<CsvCell>> = consistency_rows
        .iter()
        .map(|r| {
            vec![
                CsvCell::Text(r.penalty.clone()),
                CsvCell::Num(r.lambda_reg),
                CsvCell::Text(r.method_a.clone()),
                CsvCell::Text(r.method_b.clone()),
                CsvCell::Num(r.f_gap),
                CsvCell::Num(r.objective_gap),
                CsvCell::Text(r.flagged.to_string()),
            ]
        })
        .collect();
    sink.write_csv(
        "consistency.csv",
        &[
            "penalty",
            "lambda_reg",
            "method_a",
            "method_b",
            "f_gap",
            "objective_gap",
            "flagged",
        ],
        &rows,
    )?;
    sink.write_json("consistency.json", &consistency_rows)?;
    Ok(())
}

#[derive(Serialize)]
struct MomentsSummary {
    expected_log_l_analytic: f64,
    max_cauchy_schwarz_violation: f64,
}

fn run_moments(cfg: &ExperimentConfig, grid: &TimeGrid, sink: &mut ArtifactSink) -> Result<()> {
    require_null_pattern(&cfg.f_d, "f_d")?;
    require_null_pattern(&cfg.vbar, "vbar")?;
    if cfg.params.vbar_terminal != 0.0 {
        bail!("params.vbar_terminal must be 0 in the simplified setting");
    }
    let params = validate_params(cfg.params).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let f_c_kind = cfg.f_c.as_ref().expect("checked at parse time");
    let f_c = Pattern::from_kind(f_c_kind, grid, "f_c")?;
    let zero = Pattern::zero(grid);
    let coeffs = solve_backward(&params, &f_c, &zero, &zero, grid)?;
    let moments = solve_moments(&params, &coeffs, &f_c, grid)?;
    let e = expected_log_l_analytic(&moments, &coeffs, &f_c, &params)?;

    sink.write_csv("coeffs.csv", &COEFF_HEADER, &coeff_rows(&coeffs))?;
    let rows: Vec<Vec<CsvCell>> = (0..=grid.n_steps())
        .map(|k| {
            vec![
                CsvCell::Num(grid.time(k)),
                CsvCell::Num(moments.h20[k]),
                CsvCell::Num(moments.h11[k]),
                CsvCell::Num(moments.h02[k]),
            ]
        })
        .collect();
    sink.write_csv("moments.csv", &["t", "h20", "h11", "h02"], &rows)?;
    sink.write_json(
        "summary.json",
        &MomentsSummary {
            expected_log_l_analytic: e,
            max_cauchy_schwarz_violation: moments.max_cauchy_schwarz_violation(),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct PropertyRecord {
    name: String,
    passed: bool,
    measured: f64,
    bound: f64,
    detail: String,
}

impl From<&CheckResult> for PropertyRecord {
    fn from(c: &CheckResult) -> Self {
        PropertyRecord {
            name: c.name.clone(),
            passed: c.passed,
            measured: c.measured,
            bound: c.bound,
            detail: c.detail.clone(),
        }
    }
}

#[derive(Serialize)]
struct ValidateReport {
    passed: bool,
    properties: Vec<PropertyRecord>,
}

fn run_validate(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    points: usize,
    sink: &mut ArtifactSink,
) -> Result<bool> {
    let mut properties: Vec<PropertyRecord> = Vec::new();

    // parameter validation runs first; the rest need valid parameters
    let params = match validate_params(cfg.params) {
        Ok(p) => {
            properties.push(PropertyRecord {
                name: "params_validation".to_string(),
                passed: true,
                measured: cfg.params.lambda,
                bound: cfg.params.misdirection_bound(),
                detail: "all parameter invariants hold".to_string(),
            });
            Some(p)
        }
        Err(e) => {
            properties.push(PropertyRecord {
                name: "params_validation".to_string(),
                passed: false,
                measured: cfg.params.lambda,
                bound: cfg.params.misdirection_bound(),
                detail: e.to_string(),
            });
            None
        }
    };

    if let Some(p) = params {
        let f_c_kind = cfg.f_c.as_ref().expect("checked at parse time");
        let f_c = Pattern::from_kind(f_c_kind, grid, "f_c")?;
        let f_d = Pattern::from_kind(&cfg.f_d, grid, "f_d")?;
        let vbar = Pattern::from_kind(&cfg.vbar, grid, "vbar")?;

        for c in corollary_nullity(&p, f_c_kind, &cfg.vbar, grid, n_paths.min(200), seed)? {
            properties.push(PropertyRecord::from(&c));
        }
        for c in step_halving(&p, &f_c, &f_d, &vbar, grid)? {
            properties.push(PropertyRecord::from(&c));
        }

        let law = ControlLaw::new(p, f_c.clone(), f_d.clone(), &vbar, grid)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        properties.push(PropertyRecord::from(&hjb_residual(
            &law,
            &vbar,
            points,
            seed,
        )?));
        properties.push(PropertyRecord::from(&pointwise_minimality(
            &law,
            &vbar,
            points,
            seed + 1,
        )?));

        // statistic consistency and moment invariants run on the simplified
        // variant of the configured parameters
        let mut simplified = p;
        simplified.vbar_terminal = 0.0;
        properties.push(PropertyRecord::from(&consistency_triangle(
            &simplified,
            f_c_kind,
            grid,
            n_paths,
            seed + 2,
        )?));
        let zero = Pattern::zero(grid);
        let coeffs = solve_backward(&simplified, &f_c, &zero, &zero, grid)?;
        let moments: MomentTrajectories = solve_moments(&simplified, &coeffs, &f_c, grid)?;
        properties.push(PropertyRecord::from(&moment_invariants(&moments)));
    }

    let passed = properties.iter().all(|p| p.passed);
    for p in &properties {
        println!(
            "{} {}: measured {:.6e} (bound {:.6e}) — {}",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.measured,
            p.bound,
            p.detail
        );
    }
    sink.write_json("report.json", &ValidateReport { passed, properties })?;
    Ok(passed)
}

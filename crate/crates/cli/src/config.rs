//! Experiment configuration: a flat, diff-friendly key-value file with
//! dotted keys (TOML syntax). Unknown keys are rejected so that typos fail
//! loudly, and every required key for the chosen experiment kind must be
//! present.

use anyhow::{anyhow, bail, Context, Result};
use toml::value::{Table, Value};

use deception_lq_core::model::{ModelParams, PatternKind};
use deception_lq_core::redopt::{GdBasis, PenaltyKind, RedMethod};

/// Monte Carlo block shared by the simulation kinds.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub export_paths: usize,
}

/// One named case of a trajectory-comparison run.
#[derive(Debug, Clone)]
pub struct BlueCase {
    pub name: String,
    pub f_c: PatternKind,
    pub lambda: Option<f64>,
}

/// Options of the pattern-optimization kind.
#[derive(Debug, Clone)]
pub struct RedOptConfig {
    pub methods: Vec<RedMethod>,
    pub penalties: Vec<PenaltyKind>,
    pub lambda_regs: Vec<f64>,
    pub f_init: PatternKind,
    pub f0: Option<PatternKind>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub relaxation: f64,
    pub gd_basis: GdBasis,
    pub gd_step: f64,
    pub lambda_candidates: Option<Vec<f64>>,
    pub baseline_target: f64,
    pub baseline_rel_tol: f64,
}

/// Kind-specific payload.
#[derive(Debug, Clone)]
pub enum ExperimentKind {
    BlueSim {
        mc: McConfig,
        cases: Vec<BlueCase>,
    },
    BlueSweep {
        mc: McConfig,
        lambdas: Vec<f64>,
    },
    RedOpt(RedOptConfig),
    Moments,
    Validate {
        n_paths: usize,
        seed: u64,
        points: usize,
    },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::BlueSim { .. } => "blue_sim",
            ExperimentKind::BlueSweep { .. } => "blue_sweep",
            ExperimentKind::RedOpt(_) => "red_opt",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Validate { .. } => "validate",
        }
    }
}

/// A fully parsed experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub n_steps: usize,
    /// Top-level alternative pattern; present for every kind except
    /// blue_sim, which carries one per case.
    pub f_c: Option<PatternKind>,
    pub f_d: PatternKind,
    pub vbar: PatternKind,
    pub experiment: ExperimentKind,
    /// The raw config text, echoed into the manifest.
    pub raw: String,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Table = toml::from_str(text).context("config is not valid key-value text")?;

        let kind_name = take_string(&mut table, "kind")?;
        let params = parse_params(&mut table)?;
        let n_steps = {
            let mut grid = take_table(&mut table, "grid")?;
            let n = take_usize(&mut grid, "grid.n_steps", "n_steps")?;
            reject_unknown(&grid, "grid")?;
            n
        };
        let f_d = match take_opt(&mut table, "f_d") {
            Some(v) => parse_pattern(v, "f_d")?,
            None => PatternKind::Constant(0.0),
        };
        let vbar = match take_opt(&mut table, "vbar") {
            Some(v) => parse_pattern(v, "vbar")?,
            None => PatternKind::Constant(0.0),
        };
        let f_c = match take_opt(&mut table, "f_c") {
            Some(v) => Some(parse_pattern(v, "f_c")?),
            None => None,
        };

        let experiment = match kind_name.as_str() {
            "blue_sim" => parse_blue_sim(&mut table)?,
            "blue_sweep" => {
                if f_c.is_none() {
                    bail!("blue_sweep requires an f_c pattern");
                }
                parse_blue_sweep(&mut table)?
            }
            "red_opt" => ExperimentKind::RedOpt(parse_red_opt(&mut table)?),
            "moments" => {
                if f_c.is_none() {
                    bail!("moments requires an f_c pattern");
                }
                ExperimentKind::Moments
            }
            "validate" => {
                if f_c.is_none() {
                    bail!("validate requires an f_c pattern");
                }
                parse_validate(&mut table)?
            }
            other => bail!("unknown experiment kind `{other}`"),
        };

        reject_unknown(&table, "")?;

        Ok(ExperimentConfig {
            params,
            n_steps,
            f_c,
            f_d,
            vbar,
            experiment,
            raw: text.to_string(),
        })
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(n) = overrides.n_steps {
            self.n_steps = n;
        }
        match &mut self.experiment {
            ExperimentKind::BlueSim { mc, .. } | ExperimentKind::BlueSweep { mc, .. } => {
                if let Some(s) = overrides.seed {
                    mc.seed = s;
                }
                if let Some(n) = overrides.n_paths {
                    mc.n_paths = n;
                }
            }
            ExperimentKind::Validate { n_paths, seed, .. } => {
                if let Some(s) = overrides.seed {
                    *seed = s;
                }
                if let Some(n) = overrides.n_paths {
                    *n_paths = n;
                }
            }
            ExperimentKind::RedOpt(_) | ExperimentKind::Moments => {}
        }
    }
}

fn parse_params(table: &mut Table) -> Result<ModelParams> {
    let mut t = take_table(table, "params")?;
    let mut get = |key: &'static str| take_f64(&mut t, "params", key);
    let params = ModelParams {
        horizon: get("horizon")?,
        sigma_b: get("sigma_b")?,
        sigma_w: get("sigma_w")?,
        r_alpha: get("r_alpha")?,
        r_beta: get("r_beta")?,
        r_v: get("r_v")?,
        t_v: get("t_v")?,
        vbar_terminal: get("vbar_terminal")?,
        lambda: get("lambda")?,
        v0: get("v0")?,
        y0: get("y0")?,
    };
    reject_unknown(&t, "params")?;
    Ok(params)
}

fn parse_pattern(value: Value, path: &str) -> Result<PatternKind> {
    let mut t = match value {
        Value::Table(t) => t,
        _ => bail!("`{path}` must be a table of pattern fields"),
    };
    let kind = take_string(&mut t, "kind").with_context(|| format!("in `{path}`"))?;
    let pattern = match kind.as_str() {
        "constant" => PatternKind::Constant(take_f64(&mut t, path, "value")?),
        "sinusoid" => PatternKind::Sinusoid {
            amplitude: take_f64(&mut t, path, "amplitude")?,
            omega: take_f64(&mut t, path, "omega")?,
        },
        "affine" => PatternKind::Affine {
            offset: take_f64(&mut t, path, "offset")?,
            slope: take_f64(&mut t, path, "slope")?,
        },
        "samples" => PatternKind::Samples(take_f64_array(&mut t, path, "values")?),
        other => bail!("`{path}.kind`: unknown pattern kind `{other}`"),
    };
    reject_unknown(&t, path)?;
    Ok(pattern)
}

fn parse_mc(table: &mut Table) -> Result<McConfig> {
    let mut t = take_table(table, "mc")?;
    let n_paths = take_usize(&mut t, "mc", "n_paths")?;
    let seed = take_u64(&mut t, "mc", "seed")?;
    let export_paths = match t.remove("export_paths") {
        Some(v) => usize_of(v, "mc.export_paths")?,
        None => 1,
    };
    reject_unknown(&t, "mc")?;
    Ok(McConfig {
        n_paths,
        seed,
        export_paths,
    })
}

fn parse_blue_sim(table: &mut Table) -> Result<ExperimentKind> {
    let mc = parse_mc(table)?;
    let names: Vec<String> = take_string_array(table, "", "cases")?;
    if names.is_empty() {
        bail!("blue_sim needs at least one case");
    }
    let mut case_table = take_table(table, "case")?;
    let mut cases = Vec::new();
    for name in names {
        let mut t = take_table(&mut case_table, &name)
            .with_context(|| format!("case `{name}` listed but not defined"))?;
        let f_c = parse_pattern(
            t.remove("f_c")
                .ok_or_else(|| anyhow!("case `{name}` needs an f_c pattern"))?,
            &format!("case.{name}.f_c"),
        )?;
        let lambda = match t.remove("lambda") {
            Some(v) => Some(f64_of(v, &format!("case.{name}.lambda"))?),
            None => None,
        };
        reject_unknown(&t, &format!("case.{name}"))?;
        cases.push(BlueCase { name, f_c, lambda });
    }
    reject_unknown(&case_table, "case")?;
    Ok(ExperimentKind::BlueSim { mc, cases })
}

fn parse_blue_sweep(table: &mut Table) -> Result<ExperimentKind> {
    let mc = parse_mc(table)?;
    let mut sweep = take_table(table, "sweep")?;
    let lambdas = take_f64_array(&mut sweep, "sweep", "lambdas")?;
    if lambdas.is_empty() {
        bail!("sweep.lambdas must not be empty");
    }
    reject_unknown(&sweep, "sweep")?;
    Ok(ExperimentKind::BlueSweep { mc, lambdas })
}

fn parse_red_opt(table: &mut Table) -> Result<RedOptConfig> {
    let mut t = take_table(table, "red")?;

    let methods = take_string_array(&mut t, "red", "methods")?
        .iter()
        .map(|m| match m.as_str() {
            "fpi" => Ok(RedMethod::Fpi),
            "fbs" => Ok(RedMethod::Fbs),
            "gd" => Ok(RedMethod::Gd),
            other => Err(anyhow!("red.methods: unknown method `{other}`")),
        })
        .collect::<Result<Vec<_>>>()?;
    let penalties = take_string_array(&mut t, "red", "penalties")?
        .iter()
        .map(|p| match p.as_str() {
            "quadratic" => Ok(PenaltyKind::Quadratic),
            "kl_log" => Ok(PenaltyKind::KlLog),
            other => Err(anyhow!("red.penalties: unknown penalty `{other}`")),
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda_regs = take_f64_array(&mut t, "red", "lambda_regs")?;
    if methods.is_empty() || penalties.is_empty() || lambda_regs.is_empty() {
        bail!("red.methods, red.penalties and red.lambda_regs must not be empty");
    }

    let f_init = parse_pattern(
        t.remove("f_init")
            .ok_or_else(|| anyhow!("red.f_init pattern is required"))?,
        "red.f_init",
    )?;
    let f0 = match t.remove("f0") {
        Some(v) => Some(parse_pattern(v, "red.f0")?),
        None => None,
    };

    let tol = opt_f64(&mut t, "red.tol", 1e-6)?;
    let max_iter = match t.remove("max_iter") {
        Some(v) => usize_of(v, "red.max_iter")?,
        None => 500,
    };
    let damping = opt_f64(&mut t, "red.damping", 0.5)?;
    let relaxation = opt_f64(&mut t, "red.relaxation", 0.5)?;
    let gd_step = opt_f64(&mut t, "red.gd_step", 0.1)?;
    let gd_basis = match t.remove("gd_basis") {
        Some(Value::String(s)) => parse_basis(&s)?,
        Some(_) => bail!("red.gd_basis must be a string"),
        None => GdBasis::Polynomial { degree: 3 },
    };

    let mut lambda_candidates = None;
    let mut baseline_target = 0.0;
    let mut baseline_rel_tol = 0.05;
    if let Some(v) = table.remove("lambda") {
        let mut lt = match v {
            Value::Table(lt) => lt,
            _ => bail!("`lambda` must be a table"),
        };
        lambda_candidates = Some(take_f64_array(&mut lt, "lambda", "candidates")?);
        baseline_target = take_f64(&mut lt, "lambda", "baseline_target")?;
        baseline_rel_tol = opt_f64(&mut lt, "lambda.baseline_rel_tol", 0.05)?;
        reject_unknown(&lt, "lambda")?;
    }

    reject_unknown(&t, "red")?;
    Ok(RedOptConfig {
        methods,
        penalties,
        lambda_regs,
        f_init,
        f0,
        tol,
        max_iter,
        damping,
        relaxation,
        gd_basis,
        gd_step,
        lambda_candidates,
        baseline_target,
        baseline_rel_tol,
    })
}

fn parse_validate(table: &mut Table) -> Result<ExperimentKind> {
    let mc = parse_mc(table)?;
    let points = match take_opt(table, "validate") {
        Some(Value::Table(mut vt)) => {
            let points = match vt.remove("points") {
                Some(v) => usize_of(v, "validate.points")?,
                None => 100,
            };
            reject_unknown(&vt, "validate")?;
            points
        }
        Some(_) => bail!("`validate` must be a table"),
        None => 100,
    };
    Ok(ExperimentKind::Validate {
        n_paths: mc.n_paths,
        seed: mc.seed,
        points,
    })
}

fn parse_basis(s: &str) -> Result<GdBasis> {
    if s == "constant" {
        return Ok(GdBasis::Constant);
    }
    if let Some(d) = s.strip_prefix("poly") {
        let degree: usize = d.parse().map_err(|_| anyhow!("bad basis `{s}`"))?;
        return Ok(GdBasis::Polynomial { degree });
    }
    if let Some(m) = s.strip_prefix("fourier") {
        let order: usize = m.parse().map_err(|_| anyhow!("bad basis `{s}`"))?;
        return Ok(GdBasis::Fourier { order });
    }
    bail!("red.gd_basis: unknown basis `{s}` (use constant, poly<d>, fourier<m>)")
}

// --- toml plumbing -------------------------------------------------------

fn take_opt(table: &mut Table, key: &str) -> Option<Value> {
    table.remove(key)
}

fn take_table(table: &mut Table, key: &str) -> Result<Table> {
    match table.remove(key) {
        Some(Value::Table(t)) => Ok(t),
        Some(_) => bail!("`{key}` must be a table"),
        None => bail!("missing required section `{key}`"),
    }
}

fn take_string(table: &mut Table, key: &str) -> Result<String> {
    match table.remove(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => bail!("`{key}` must be a string"),
        None => bail!("missing required key `{key}`"),
    }
}

fn f64_of(v: Value, path: &str) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(x),
        Value::Integer(i) => Ok(i as f64),
        _ => bail!("`{path}` must be a number"),
    }
}

fn usize_of(v: Value, path: &str) -> Result<usize> {
    match v {
        Value::Integer(i) if i >= 0 => Ok(i as usize),
        _ => bail!("`{path}` must be a nonnegative integer"),
    }
}

fn take_f64(table: &mut Table, section: &str, key: &str) -> Result<f64> {
    let path = dotted(section, key);
    match table.remove(key) {
        Some(v) => f64_of(v, &path),
        None => bail!("missing required key `{path}`"),
    }
}

fn opt_f64(table: &mut Table, path: &str, default: f64) -> Result<f64> {
    let key = path.rsplit('.').next().unwrap();
    match table.remove(key) {
        Some(v) => f64_of(v, path),
        None => Ok(default),
    }
}

fn take_usize(table: &mut Table, section: &str, key: &str) -> Result<usize> {
    let path = dotted(section, key);
    match table.remove(key) {
        Some(v) => usize_of(v, &path),
        None => bail!("missing required key `{path}`"),
    }
}

fn take_u64(table: &mut Table, section: &str, key: &str) -> Result<u64> {
    let path = dotted(section, key);
    match table.remove(key) {
        Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
        Some(_) => bail!("`{path}` must be a nonnegative integer"),
        None => bail!("missing required key `{path}`"),
    }
}

fn take_f64_array(table: &mut Table, section: &str, key: &str) -> Result<Vec<f64>> {
    let path = dotted(section, key);
    match table.remove(key) {
        Some(Value::Array(xs)) => xs.into_iter().map(|v| f64_of(v, &path)).collect(),
        Some(_) => bail!("`{path}` must be an array of numbers"),
        None => bail!("missing required key `{path}`"),
    }
}

fn take_string_array(table: &mut Table, section: &str, key: &str) -> Result<Vec<String>> {
    let path = dotted(section, key);
    match table.remove(key) {
        Some(Value::Array(xs)) => xs
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => bail!("`{path}` must be an array of strings"),
            })
            .collect(),
        Some(_) => bail!("`{path}` must be an array of strings"),
        None => bail!("missing required key `{path}`"),
    }
}

fn dotted(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Rejects any key left in the table after parsing, reporting its full
/// dotted path.
fn reject_unknown(table: &Table, section: &str) -> Result<()> {
    if let Some(key) = table.keys().next() {
        bail!("unknown key `{}`", dotted(section, key));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_SWEEP: &str = r#"
kind = "blue_sweep"
params.horizon = 1.0
params.sigma_b = 0.25
params.sigma_w = 0.25
params.r_alpha = 1.0
params.r_beta = 10.0
params.r_v = 1.0
params.t_v = 1.0
params.vbar_terminal = 1.0
params.lambda = 0.075
params.v0 = 2.0
params.y0 = 4.0
grid.n_steps = 2000
vbar.kind = "affine"
vbar.offset = 2.0
vbar.slope = -1.0
f_c.kind = "sinusoid"
f_c.amplitude = 1.0
f_c.omega = 31.41592653589793
mc.n_paths = 10000
mc.seed = 42
sweep.lambdas = [0.0, 0.025, 0.05, 0.075]
"#;

    #[test]
    fn parses_a_sweep_config() {
        let cfg = ExperimentConfig::parse(MINIMAL_SWEEP).unwrap();
        assert_eq!(cfg.n_steps, 2000);
        assert_eq!(cfg.params.lambda, 0.075);
        match &cfg.experiment {
            ExperimentKind::BlueSweep { mc, lambdas } => {
                assert_eq!(mc.n_paths, 10000);
                assert_eq!(lambdas.len(), 4);
            }
            other => panic!("wrong kind {}", other.name()),
        }
        assert!(matches!(cfg.vbar, PatternKind::Affine { .. }));
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = MINIMAL_SWEEP.replace("mc.seed = 42", "mc.seed = 42\nmc.sede = 1");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("mc.sede"), "{err}");

        let bad = format!("{MINIMAL_SWEEP}\nextra = 1\n");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn missing_required_key_is_reported_with_path() {
        let bad = MINIMAL_SWEEP.replace("params.r_beta = 10.0\n", "");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("params.r_beta"), "{err}");
    }

    #[test]
    fn overrides_patch_seed_paths_and_grid() {
        let mut cfg = ExperimentConfig::parse(MINIMAL_SWEEP).unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            n_paths: Some(100),
            n_steps: Some(500),
        });
        assert_eq!(cfg.n_steps, 500);
        match &cfg.experiment {
            ExperimentKind::BlueSweep { mc, .. } => {
                assert_eq!(mc.seed, 7);
                assert_eq!(mc.n_paths, 100);
            }
            _ => unreachable!(),
        }
    }
}

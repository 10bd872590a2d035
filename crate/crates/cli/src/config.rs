//! Run configuration files.
//!
//! A config is a small TOML file with an `[experiment]` section, an optional `[data]`
//! section (CSV input instead of a synthetic design) and an optional `[output]`
//! section. Unknown keys are rejected. See `presets/` for complete examples.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use optsub::simulation::experiment::DEFAULT_PILOT_REDRAWS;
use optsub::simulation::{DataSource, DesignKind, DesignSpec, ExperimentConfig, SamplingMode};
use optsub::{Criterion, FitOptions, GlmFamily, Intercept, Method, PilotMethod};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::dataset::{ColumnRef, CsvOptions};
use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    experiment: Option<RawExperiment>,
    data: Option<RawData>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    name: Option<String>,
    family: Option<String>,
    design: Option<String>,
    n: Option<usize>,
    dim: Option<usize>,
    beta0: Option<String>,
    intercept: Option<bool>,
    noise_sd: Option<f64>,
    r_p: Option<usize>,
    r_grid: Option<Vec<usize>>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    criteria: Option<Vec<String>>,
    methods: Option<Vec<String>>,
    pilot: Option<String>,
    pilot_p_m: Option<f64>,
    trim_alpha: Option<f64>,
    mode: Option<String>,
    exclude_pilot: Option<bool>,
    max_pilot_redraws: Option<usize>,
    linear_shortcut: Option<bool>,
    record_timings: Option<bool>,
    max_iter: Option<usize>,
    tol_grad: Option<f64>,
    tol_step: Option<f64>,
    ridge_jitter: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    path: Option<PathBuf>,
    response: Option<String>,
    standardize: Option<bool>,
    intercept: Option<bool>,
    has_header: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    report: Option<PathBuf>,
    manifest: Option<PathBuf>,
    probabilities: Option<PathBuf>,
    estimate: Option<PathBuf>,
    to_measure: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Design { spec: DesignSpec, n: usize },
    Csv { path: PathBuf, options: CsvOptions },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub probabilities: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
    pub to_measure: Option<PathBuf>,
}

/// A fully resolved config: every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub family: GlmFamily,
    pub source: Source,
    pub beta0_spec: Option<String>,
    pub beta0: Option<DVector<f64>>,
    /// Intercept column for synthetic designs (CSV sources use `[data] intercept`).
    pub intercept: bool,
    pub noise_sd: f64,
    pub r_p: usize,
    pub r_grid: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
    pub methods: Vec<Method>,
    pub pilot: PilotMethod,
    pub trim_alpha: f64,
    pub mode: SamplingMode,
    pub exclude_pilot: bool,
    pub max_pilot_redraws: usize,
    pub linear_shortcut: bool,
    pub record_timings: bool,
    pub fit: FitOptions,
    pub output: OutputPaths,
}

/// Default covariate dimension per family (desk scale for Poisson).
pub fn default_dim(family: GlmFamily) -> usize {
    match family {
        GlmFamily::Linear => 30,
        GlmFamily::Logistic | GlmFamily::Poisson => 20,
    }
}

/// `const:v`, `list:a,b,...` or `preset:linear-30`.
pub fn parse_beta0(spec: &str, len: usize) -> Result<DVector<f64>, String> {
    let (kind, rest) = spec.split_once(':').ok_or_else(|| {
        format!("beta0 `{spec}` must look like const:<v>, list:<a,b,...> or preset:linear-30")
    })?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("beta0: `{s}` is not a number"))
    };
    let beta = match kind.trim() {
        "const" => DVector::from_element(len, parse(rest)?),
        "list" => DVector::from_vec(rest.split(',').map(parse).collect::<Result<Vec<_>, _>>()?),
        "preset" => match rest.trim() {
            "linear-30" => {
                let mut v = vec![0.1; 30];
                v[5..25].fill(10.0);
                DVector::from_vec(v)
            }
            other => return Err(format!("unknown beta0 preset `{other}`")),
        },
        other => return Err(format!("unknown beta0 kind `{other}`")),
    };
    if beta.len() != len {
        return Err(format!(
            "beta0 has {} entries, the model has {len} coefficients",
            beta.len()
        ));
    }
    Ok(beta)
}

fn parse_pilot(name: &str, p_m: Option<f64>) -> Result<PilotMethod, String> {
    match name.trim().to_ascii_lowercase().as_str() {
        "srs" | "simple-random" | "uniform" => Ok(PilotMethod::SimpleRandom),
        "case-control" | "casecontrol" => Ok(PilotMethod::CaseControl { p_m }),
        other => Err(format!(
            "unknown pilot method `{other}` (expected srs or case-control)"
        )),
    }
}

fn parse_mode(name: &str) -> Result<SamplingMode, String> {
    match name.trim().to_ascii_lowercase().as_str() {
        "unconditional" => Ok(SamplingMode::Unconditional),
        "conditional" => Ok(SamplingMode::Conditional),
        other => Err(format!(
            "unknown mode `{other}` (expected unconditional or conditional)"
        )),
    }
}

/// Reads and resolves a config file. Problems with individual values are collected
/// and reported together.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Like [`parse_config`]; relative data paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, CliError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut errs = Vec::new();
    let e = raw.experiment.unwrap_or_default();

    let family = match e.family.as_deref().map(str::parse::<GlmFamily>) {
        Some(Ok(f)) => f,
        Some(Err(err)) => {
            errs.push(err.to_string());
            GlmFamily::Logistic
        }
        None => {
            errs.push("experiment.family is required".into());
            GlmFamily::Logistic
        }
    };

    let source = match (&raw.data, &e.design) {
        (Some(_), Some(_)) => {
            errs.push("give either experiment.design or a [data] section, not both".into());
            None
        }
        (None, None) => {
            errs.push("experiment.design or a [data] section is required".into());
            None
        }
        (None, Some(design)) => {
            let kind = design
                .parse::<DesignKind>()
                .map_err(|e| errs.push(e.to_string()))
                .ok();
            let dim = e.dim.unwrap_or(default_dim(family));
            if e.n.is_none() {
                errs.push("experiment.n is required for synthetic designs".into());
            }
            match (
                kind,
                DesignSpec::new(kind.unwrap_or(DesignKind::MzNormal), dim),
            ) {
                (Some(_), Ok(spec)) => Some(Source::Design {
                    spec,
                    n: e.n.unwrap_or(0),
                }),
                (_, Err(err)) => {
                    errs.push(err.to_string());
                    None
                }
                (None, _) => None,
            }
        }
        (Some(d), None) => {
            if e.n.is_some() || e.dim.is_some() {
                errs.push(
                    "experiment.n and experiment.dim come from the data file when [data] is used"
                        .into(),
                );
            }
            match (&d.path, &d.response) {
                (Some(p), Some(resp)) => Some(Source::Csv {
                    path: if p.is_absolute() {
                        p.clone()
                    } else {
                        base.join(p)
                    },
                    options: CsvOptions {
                        response: ColumnRef::parse(resp),
                        standardize: d.standardize.unwrap_or(true),
                        intercept: d.intercept.unwrap_or(true),
                        has_header: d.has_header.unwrap_or(true),
                    },
                }),
                _ => {
                    errs.push("[data] needs both path and response".into());
                    None
                }
            }
        }
    };

    let intercept = e.intercept.unwrap_or(false);
    let beta0_spec = match (&source, &e.beta0) {
        (Some(Source::Design { spec, .. }), None) => Some(match family {
            GlmFamily::Logistic => "const:1".to_string(),
            GlmFamily::Poisson => "const:0.5".to_string(),
            GlmFamily::Linear if spec.dim == 30 && !intercept => "preset:linear-30".to_string(),
            GlmFamily::Linear => "const:1".to_string(),
        }),
        (_, b) => b.clone(),
    };
    let beta0 = match (&source, &beta0_spec) {
        (Some(Source::Design { spec, .. }), Some(b)) => {
            parse_beta0(b, spec.dim + usize::from(intercept))
                .map_err(|m| errs.push(m))
                .ok()
        }
        (Some(Source::Csv { .. }), Some(_)) => {
            errs.push("beta0 is only used with synthetic designs".into());
            None
        }
        _ => None,
    };

    let criteria = match &e.criteria {
        None => vec![Criterion::AOpt, Criterion::LOpt],
        Some(list) => list
            .iter()
            .filter_map(|c| {
                c.parse::<Criterion>()
                    .map_err(|err| errs.push(err.to_string()))
                    .ok()
            })
            .collect(),
    };
    let methods = match &e.methods {
        None => vec![Method::Unweighted, Method::Weighted],
        Some(list) => list
            .iter()
            .filter_map(|m| {
                m.parse::<Method>()
                    .map_err(|err| errs.push(err.to_string()))
                    .ok()
            })
            .collect(),
    };
    let pilot = parse_pilot(e.pilot.as_deref().unwrap_or("srs"), e.pilot_p_m)
        .map_err(|m| errs.push(m))
        .unwrap_or_default();
    let default_mode = match source {
        Some(Source::Csv { .. }) => SamplingMode::Conditional,
        _ => SamplingMode::Unconditional,
    };
    let mode = match &e.mode {
        None => default_mode,
        Some(m) => parse_mode(m)
            .map_err(|msg| errs.push(msg))
            .unwrap_or(default_mode),
    };
    let default_trim = match &source {
        Some(Source::Design { spec, .. }) if spec.kind == DesignKind::T1 => 0.05,
        _ => 0.0,
    };
    let defaults = FitOptions::default();
    let fit = FitOptions {
        tol_grad: e.tol_grad.unwrap_or(defaults.tol_grad),
        tol_step: e.tol_step.unwrap_or(defaults.tol_step),
        max_iter: e.max_iter.unwrap_or(defaults.max_iter),
        ridge_jitter: e.ridge_jitter.unwrap_or(defaults.ridge_jitter),
        init: None,
    };

    let r_p = e.r_p.unwrap_or_else(|| {
        if !(family == GlmFamily::Linear && e.linear_shortcut.unwrap_or(true)) {
            errs.push("experiment.r_p is required".into());
        }
        0
    });
    let r_grid = e.r_grid.clone().unwrap_or_else(|| {
        errs.push("experiment.r_grid is required".into());
        Vec::new()
    });
    let seed = e.seed.unwrap_or_else(|| {
        errs.push("experiment.seed is required".into());
        0
    });

    let name = e.name.clone().unwrap_or_else(|| match &source {
        Some(Source::Design { spec, .. }) => spec.kind.name().to_string(),
        Some(Source::Csv { path, .. }) => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into()),
        None => String::new(),
    });

    if !errs.is_empty() {
        return Err(CliError::Validation(errs));
    }
    let cfg = RunConfig {
        name,
        family,
        source: source.expect("checked above"),
        beta0_spec,
        beta0,
        intercept,
        noise_sd: e.noise_sd.unwrap_or(3.0),
        r_p,
        r_grid,
        repetitions: e.repetitions.unwrap_or(1),
        seed,
        criteria,
        methods,
        pilot,
        trim_alpha: e.trim_alpha.unwrap_or(default_trim),
        mode,
        exclude_pilot: e.exclude_pilot.unwrap_or(false),
        max_pilot_redraws: e.max_pilot_redraws.unwrap_or(DEFAULT_PILOT_REDRAWS),
        linear_shortcut: e.linear_shortcut.unwrap_or(true),
        record_timings: e.record_timings.unwrap_or(false),
        fit,
        output: OutputPaths {
            report: raw.output.report,
            manifest: raw.output.manifest,
            probabilities: raw.output.probabilities,
            estimate: raw.output.estimate,
            to_measure: raw.output.to_measure,
        },
    };
    let v = cfg.violations(None);
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Validation(v))
    }
}

impl RunConfig {
    fn uses_shortcut(&self) -> bool {
        self.family == GlmFamily::Linear && self.linear_shortcut
    }

    /// Rule violations; `n` is the data size when it is known from a loaded file.
    pub fn violations(&self, n: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        let n = n.or(match &self.source {
            Source::Design { n, .. } => Some(*n),
            Source::Csv { .. } => None,
        });
        if self.repetitions == 0 {
            out.push("repetitions must be at least 1".into());
        }
        if self.r_grid.is_empty() {
            out.push("r_grid is empty".into());
        }
        for &r in &self.r_grid {
            if r == 0 {
                out.push("r_grid entries must be at least 1".into());
            }
            if let Some(n) = n {
                if r > n {
                    out.push(format!("r_grid entry {r} exceeds n = {n}"));
                }
            }
        }
        if !self.uses_shortcut() {
            if self.r_p == 0 {
                out.push("r_p must be at least 1".into());
            }
            if let Some(n) = n {
                if self.r_p > n {
                    out.push(format!("r_p = {} exceeds n = {n}", self.r_p));
                }
            }
        }
        if n == Some(0) {
            out.push("n must be positive".into());
        }
        if self.criteria.is_empty() {
            out.push("criteria is empty".into());
        }
        if self.methods.is_empty() {
            out.push("methods is empty".into());
        }
        if !(0.0..0.5).contains(&self.trim_alpha) {
            out.push(format!(
                "trim_alpha must lie in [0, 0.5), got {}",
                self.trim_alpha
            ));
        }
        if self.family == GlmFamily::Linear && !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            out.push(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if let PilotMethod::CaseControl { p_m } = self.pilot {
            if self.family != GlmFamily::Logistic {
                out.push("case-control pilots need the logistic family".into());
            }
            if let Some(p) = p_m {
                if !(p > 0.0 && p < 1.0) {
                    out.push(format!("pilot_p_m must lie in (0, 1), got {p}"));
                }
            }
        }
        if matches!(self.source, Source::Csv { .. }) && self.mode == SamplingMode::Unconditional {
            out.push("data files cannot be regenerated; use mode = \"conditional\"".into());
        }
        if let Err(e) = self.fit.validate() {
            out.push(e.to_string());
        }
        out
    }

    /// Library experiment config for a synthetic design or a loaded dataset.
    pub fn experiment(&self, data: Option<std::sync::Arc<optsub::Dataset>>) -> ExperimentConfig {
        let source = match (&self.source, data) {
            (_, Some(d)) => DataSource::Fixed {
                name: self.name.clone(),
                data: d,
            },
            (Source::Design { spec, .. }, None) => DataSource::Design(*spec),
            (Source::Csv { .. }, None) => panic!("CSV sources need the loaded dataset"),
        };
        ExperimentConfig {
            family: self.family,
            source,
            n: match &self.source {
                Source::Design { n, .. } => *n,
                Source::Csv { .. } => 0,
            },
            beta0: self.beta0.clone(),
            intercept: if self.intercept {
                Intercept::Add
            } else {
                Intercept::None
            },
            noise_sd: self.noise_sd,
            r_p: self.r_p,
            r_grid: self.r_grid.clone(),
            repetitions: self.repetitions,
            criteria: self.criteria.clone(),
            methods: self.methods.clone(),
            pilot: self.pilot,
            trim_alpha: self.trim_alpha,
            seed: self.seed,
            mode: self.mode,
            exclude_pilot: self.exclude_pilot,
            max_pilot_redraws: self.max_pilot_redraws,
            fit: self.fit.clone(),
            record_timings: self.record_timings,
            linear_shortcut: self.linear_shortcut,
        }
    }

    /// The resolved config as JSON, for manifests and estimate files.
    pub fn to_json(&self) -> Value {
        let source = match &self.source {
            Source::Design { spec, n } => json!({
                "design": spec.kind.name(),
                "dim": spec.dim,
                "n": n,
                "intercept": self.intercept,
                "beta0": self.beta0_spec,
                "noise_sd": if self.family == GlmFamily::Linear { json!(self.noise_sd) } else { Value::Null },
            }),
            Source::Csv { path, options } => json!({
                "path": path.display().to_string(),
                "response": options.response.to_string(),
                "standardize": options.standardize,
                "intercept": options.intercept,
                "has_header": options.has_header,
            }),
        };
        let pilot = match self.pilot {
            PilotMethod::SimpleRandom => json!({"method": "srs"}),
            PilotMethod::CaseControl { p_m } => json!({"method": "case-control", "p_m": p_m}),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        json!({
            "name": self.name,
            "family": self.family.name(),
            "source": source,
            "r_p": self.r_p,
            "r_grid": self.r_grid,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "criteria": self.criteria.iter().map(|c| c.label()).collect::<Vec<_>>(),
            "methods": self.methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
            "pilot": pilot,
            "trim_alpha": self.trim_alpha,
            "mode": self.mode.label(),
            "exclude_pilot": self.exclude_pilot,
            "max_pilot_redraws": self.max_pilot_redraws,
            "linear_shortcut": self.linear_shortcut,
            "record_timings": self.record_timings,
            "fit": {
                "tol_grad": self.fit.tol_grad,
                "tol_step": self.fit.tol_step,
                "max_iter": self.fit.max_iter,
                "ridge_jitter": self.fit.ridge_jitter,
            },
            "output": {
                "report": path(&self.output.report),
                "manifest": path(&self.output.manifest),
                "probabilities": path(&self.output.probabilities),
                "estimate": path(&self.output.estimate),
                "to_measure": path(&self.output.to_measure),
            },
        })
    }
}

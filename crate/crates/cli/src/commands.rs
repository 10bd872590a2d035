use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use optsub::simulation::{generate_design, generate_response, run_experiment, ExperimentReport};
use optsub::{
    draw_pilot_with_redraws, estimate_on_draw, fit_mle, linear_plan, os_probabilities,
    pilot_estimate, sample_with_replacement, simple_random_pilot, Criterion, Dataset, GlmFamily,
    Intercept, Method, PilotEstimate, PilotMethod, SamplingPlan,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{RunConfig, Source};
use crate::dataset::load_csv_dataset;
use crate::error::CliError;

pub const REPORT_HEADER: [&str; 14] = [
    "setting",
    "family",
    "criterion",
    "method",
    "r",
    "r_p",
    "S",
    "emse",
    "emp_var",
    "mean_trace_vhat",
    "rel_eff",
    "mean_iters",
    "wall_ms",
    "seed",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

/// Writes to `path`, or to stdout when there is none.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Report CSV with the fixed header; floats use the shortest round-trip form.
pub fn write_report<W: Write>(report: &ExperimentReport, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for c in &report.cells {
        w.write_record([
            c.setting.clone(),
            c.family.name().to_string(),
            c.criterion.clone(),
            c.method.label().to_string(),
            c.r.to_string(),
            c.r_p.to_string(),
            c.repetitions.to_string(),
            c.emse.to_string(),
            opt(c.empirical_variance),
            opt(c.mean_trace_vhat),
            opt(c.relative_efficiency),
            c.mean_iterations.to_string(),
            opt(c.wall_ms),
            c.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<Option<Dataset>, CliError> {
    match &cfg.source {
        Source::Csv { path, options } => {
            let loaded = load_csv_dataset(path, options)?;
            let v = cfg.violations(Some(loaded.dataset.n()));
            if !v.is_empty() {
                return Err(CliError::Validation(v));
            }
            loaded.dataset.validate_responses(cfg.family)?;
            Ok(Some(loaded.dataset))
        }
        Source::Design { .. } => Ok(None),
    }
}

fn base_manifest(command: &str, cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("optsub"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("config".into(), cfg.to_json());
    m
}

pub struct SimulateArgs {
    pub report: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

/// Runs the configured campaign and writes the report CSV and the run manifest.
pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<ExperimentReport, CliError> {
    let started = Instant::now();
    let data = load(cfg)?.map(Arc::new);
    if let Some(d) = &data {
        if d.y().is_some_and(|y| y.iter().any(|v| v.is_nan())) {
            return Err(CliError::Data(
                "simulation on a data file needs every response measured".into(),
            ));
        }
    }
    let exp = cfg.experiment(data);
    let report = run_experiment(&exp)?;

    let report_path = args.report.clone().or_else(|| cfg.output.report.clone());
    write_report(&report, sink(report_path.as_deref())?)?;

    let mut m = base_manifest("simulate", cfg);
    m.insert("mode".into(), json!(report.mode.label()));
    m.insert("threads".into(), json!(rayon::current_num_threads()));
    m.insert(
        "wall_ms".into(),
        json!(started.elapsed().as_secs_f64() * 1e3),
    );
    m.insert("cells".into(), json!(report.cells.len()));
    m.insert("beta_ref".into(), json!(report.beta_ref.as_slice()));
    m.insert(
        "dropped".into(),
        Value::Array(
            report
                .dropped
                .iter()
                .map(|d| json!({"criterion": d.criterion, "method": d.method.label(), "r": d.r, "failures": d.failures}))
                .collect(),
        ),
    );
    m.insert("pilot_redraws".into(), json!(report.pilot_redraws));
    m.insert("failure_count".into(), json!(report.failures.len()));
    m.insert(
        "failures".into(),
        Value::Array(
            report
                .failures
                .iter()
                .take(50)
                .map(|f| {
                    json!({"repetition": f.repetition, "criterion": f.criterion, "method": f.method.label(), "r": f.r, "message": f.message})
                })
                .collect(),
        ),
    );
    if let Some(path) = args
        .manifest
        .clone()
        .or_else(|| cfg.output.manifest.clone())
    {
        write_json(Some(&path), &Value::Object(m))?;
    }
    for d in &report.dropped {
        eprintln!(
            "warning: dropped {}/{}/r={} ({} failed repetitions)",
            d.criterion,
            d.method.label(),
            d.r,
            d.failures
        );
    }
    Ok(report)
}

/// Full data for `probabilities` and `fit`: the CSV file, or one synthetic draw from
/// the config seed (the same generator then drives the pilot and the subsample).
fn full_data(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Dataset, CliError> {
    if let Some(d) = load(cfg)? {
        return Ok(d);
    }
    let Source::Design { spec, n } = &cfg.source else {
        unreachable!("load handles CSV sources")
    };
    let x = generate_design(spec, *n, rng);
    let data = Dataset::new(
        x,
        None,
        if cfg.intercept {
            Intercept::Add
        } else {
            Intercept::None
        },
    )?;
    let beta0 = cfg.beta0.as_ref().expect("designs always resolve beta0");
    let y = generate_response(cfg.family, data.x(), beta0, rng, cfg.noise_sd)?;
    Ok(data.with_responses(y)?)
}

fn unmeasured(data: &Dataset, rows: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| !data.is_measured(i))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

enum PlanStage {
    Ready {
        plan: SamplingPlan,
        pilot: Option<PilotEstimate>,
        pilot_ms: f64,
        plan_ms: f64,
    },
    NeedPilot(Vec<usize>),
}

fn build_plan(
    cfg: &RunConfig,
    data: &Dataset,
    criterion: &Criterion,
    on_demand: bool,
    rng: &mut ChaCha8Rng,
) -> Result<PlanStage, CliError> {
    if cfg.family == GlmFamily::Linear && cfg.linear_shortcut {
        let t = Instant::now();
        let plan = linear_plan(data.x(), criterion.clone())?;
        return Ok(PlanStage::Ready {
            plan,
            pilot: None,
            pilot_ms: 0.0,
            plan_ms: t.elapsed().as_secs_f64() * 1e3,
        });
    }
    let t = Instant::now();
    let pilot = if on_demand {
        if cfg.pilot != PilotMethod::SimpleRandom {
            return Err(CliError::Config(
                "--responses-on-demand needs a simple random pilot (case-control pilots read every response)".into(),
            ));
        }
        let idx = simple_random_pilot(data.n(), cfg.r_p, rng)?;
        let missing = unmeasured(data, &idx);
        if !missing.is_empty() {
            return Ok(PlanStage::NeedPilot(missing));
        }
        pilot_estimate(cfg.family, data, &idx, &cfg.fit)?
    } else {
        draw_pilot_with_redraws(
            cfg.family,
            data,
            cfg.r_p,
            cfg.pilot,
            &cfg.fit,
            cfg.max_pilot_redraws,
            rng,
        )?
        .0
    };
    let pilot_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let mut plan = os_probabilities(cfg.family, data.x(), &pilot, criterion.clone())?;
    if cfg.exclude_pilot {
        plan = plan.excluding(&pilot.pilot_indices)?;
    }
    Ok(PlanStage::Ready {
        plan,
        pilot: Some(pilot),
        pilot_ms,
        plan_ms: t.elapsed().as_secs_f64() * 1e3,
    })
}

fn write_rows(path: &Path, rows: &[usize]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["row_index"])?;
    for r in rows {
        w.write_record([r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub struct ProbabilitiesArgs {
    pub criterion: Option<Criterion>,
    pub output: Option<PathBuf>,
    pub responses_on_demand: bool,
    pub to_measure: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done,
    /// Rows whose responses must be measured before the command can finish.
    NeedResponses {
        stage: &'static str,
        rows: Vec<usize>,
    },
}

fn need(
    stage: &'static str,
    rows: Vec<usize>,
    to_measure: Option<&Path>,
) -> Result<Outcome, CliError> {
    match to_measure {
        Some(p) => write_rows(p, &rows)?,
        None => eprintln!("rows to measure: {rows:?}"),
    }
    eprintln!(
        "{} {stage} row(s) need responses; fill them in and rerun with the same config",
        rows.len()
    );
    Ok(Outcome::NeedResponses { stage, rows })
}

/// Writes the sampling probabilities (`row_index,pi`) for one criterion.
pub fn probabilities(cfg: &RunConfig, args: &ProbabilitiesArgs) -> Result<Outcome, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = full_data(cfg, &mut rng)?;
    let criterion = args
        .criterion
        .clone()
        .unwrap_or_else(|| cfg.criteria[0].clone());
    let to_measure = args
        .to_measure
        .clone()
        .or_else(|| cfg.output.to_measure.clone());
    let plan = match build_plan(cfg, &data, &criterion, args.responses_on_demand, &mut rng)? {
        PlanStage::NeedPilot(rows) => return need("pilot", rows, to_measure.as_deref()),
        PlanStage::Ready { plan, .. } => plan,
    };
    let path = args
        .output
        .clone()
        .or_else(|| cfg.output.probabilities.clone());
    let mut w = csv::Writer::from_writer(sink(path.as_deref())?);
    w.write_record(["row_index", "pi"])?;
    for (i, p) in plan.probabilities.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    if let Some(mpath) = &cfg.output.manifest {
        let mut m = base_manifest("probabilities", cfg);
        m.insert("criterion".into(), json!(criterion.label()));
        m.insert("m_hat".into(), json!(plan.m_hat));
        m.insert("population".into(), json!(plan.population));
        write_json(Some(mpath), &Value::Object(m))?;
    }
    Ok(Outcome::Done)
}

pub struct FitArgs {
    pub method: Method,
    pub criterion: Option<Criterion>,
    pub r: Option<usize>,
    pub responses_on_demand: bool,
    pub full_fit: bool,
    pub output: Option<PathBuf>,
    pub to_measure: Option<PathBuf>,
}

/// One two-stage estimate on the configured data, written as JSON.
pub fn fit(cfg: &RunConfig, args: &FitArgs) -> Result<(Outcome, Option<Value>), CliError> {
    let total = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = full_data(cfg, &mut rng)?;
    let criterion = args
        .criterion
        .clone()
        .unwrap_or_else(|| cfg.criteria[0].clone());
    let r = args.r.unwrap_or(cfg.r_grid[0]);
    if r == 0 || r > data.n() {
        return Err(CliError::Validation(vec![format!(
            "r = {r} must lie in [1, n = {}]",
            data.n()
        )]));
    }
    let to_measure = args
        .to_measure
        .clone()
        .or_else(|| cfg.output.to_measure.clone());
    let (plan, pilot, pilot_ms, plan_ms) =
        match build_plan(cfg, &data, &criterion, args.responses_on_demand, &mut rng)? {
            PlanStage::NeedPilot(rows) => {
                return Ok((need("pilot", rows, to_measure.as_deref())?, None))
            }
            PlanStage::Ready {
                plan,
                pilot,
                pilot_ms,
                plan_ms,
            } => (plan, pilot, pilot_ms, plan_ms),
        };
    let draw = sample_with_replacement(&plan, r, &mut rng)?;
    if args.responses_on_demand {
        let missing = unmeasured(&data, &draw.indices);
        if !missing.is_empty() {
            return Ok((need("subsample", missing, to_measure.as_deref())?, None));
        }
    }
    let pilot_size = pilot.as_ref().map_or(0, |p| p.r_p);
    let t = Instant::now();
    let est = estimate_on_draw(
        cfg.family,
        &data,
        &plan,
        &draw,
        args.method,
        &cfg.fit,
        pilot_size,
    )?;
    let fit_ms = t.elapsed().as_secs_f64() * 1e3;

    let mut out = serde_json::Map::new();
    out.insert("seed".into(), json!(cfg.seed));
    out.insert("family".into(), json!(cfg.family.name()));
    out.insert("method".into(), json!(args.method.label()));
    out.insert("criterion".into(), json!(criterion.label()));
    out.insert("r".into(), json!(r));
    out.insert("r_p".into(), json!(pilot_size));
    out.insert("n".into(), json!(data.n()));
    out.insert("distinct_rows".into(), json!(draw.distinct()));
    out.insert("beta".into(), json!(est.beta.as_slice()));
    out.insert(
        "trace_vhat".into(),
        json!(est.variance.as_ref().map(|v| v.trace())),
    );
    out.insert(
        "se".into(),
        json!(est.variance.as_ref().map(|v| v
            .diagonal()
            .iter()
            .map(|d| d.sqrt())
            .collect::<Vec<_>>())),
    );
    out.insert("m_hat".into(), json!(plan.m_hat));
    out.insert("iterations".into(), json!(est.fit.iterations));
    out.insert(
        "pilot_iterations".into(),
        json!(pilot.as_ref().map(|p| p.iterations)),
    );
    if args.full_fit {
        let t = Instant::now();
        let full = fit_mle(cfg.family, &data, None, &cfg.fit)?.require_converged()?;
        let full_ms = t.elapsed().as_secs_f64() * 1e3;
        out.insert("beta_mle".into(), json!(full.beta.as_slice()));
        out.insert(
            "distance_to_mle".into(),
            json!((&est.beta - &full.beta).norm()),
        );
        out.insert("full_fit_ms".into(), json!(full_ms));
    }
    out.insert(
        "timings_ms".into(),
        json!({"pilot": pilot_ms, "probabilities": plan_ms, "fit": fit_ms, "total": total.elapsed().as_secs_f64() * 1e3}),
    );
    out.insert("config".into(), cfg.to_json());
    let value = Value::Object(out);
    let path = args.output.clone().or_else(|| cfg.output.estimate.clone());
    write_json(path.as_deref(), &value)?;
    Ok((Outcome::Done, Some(value)))
}

/// Coefficients from a `fit` JSON file.
pub fn beta_from_json(value: &Value) -> Option<DVector<f64>> {
    let v: Vec<f64> = value
        .get("beta")?
        .as_array()?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<_>>()?;
    Some(DVector::from_vec(v))
}

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, Intercept};
use crate::error::{Error, Result};
use crate::estimators::{estimate_on_draw, linear_plan, Method};
use crate::family::GlmFamily;
use crate::sampling::{
    draw_pilot_with_redraws, os_probabilities, sample_with_replacement, Criterion, PilotMethod,
    SamplingPlan,
};
use crate::simulation::designs::{generate_design, generate_response, DesignSpec};
use crate::simulation::metrics::{empirical_variance, emse, relative_efficiency};
use crate::solver::{fit_mle, FitOptions};

/// Share of failed repetitions above which a cell is dropped from the report.
pub const MAX_FAILURE_RATE: f64 = 0.01;

pub const DEFAULT_PILOT_REDRAWS: usize = 10;

#[derive(Debug, Clone)]
pub enum DataSource {
    /// Synthetic design; data are generated from `beta0`, which is also the reference.
    Design(DesignSpec),
    /// A fixed dataset with every response measured; the reference is its full-data MLE.
    Fixed { name: String, data: Arc<Dataset> },
}

impl DataSource {
    pub fn name(&self) -> &str {
        match self {
            DataSource::Design(spec) => spec.kind.name(),
            DataSource::Fixed { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// New full data every repetition.
    #[default]
    Unconditional,
    /// One full dataset; only pilots and subsamples vary across repetitions.
    Conditional,
}

impl SamplingMode {
    pub fn label(self) -> &'static str {
        match self {
            SamplingMode::Unconditional => "unconditional",
            SamplingMode::Conditional => "conditional",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: GlmFamily,
    pub source: DataSource,
    /// Full-data size for synthetic designs (ignored for fixed data).
    pub n: usize,
    /// True coefficients for synthetic designs, intercept first when one is added.
    pub beta0: Option<DVector<f64>>,
    pub intercept: Intercept,
    pub noise_sd: f64,
    pub r_p: usize,
    pub r_grid: Vec<usize>,
    pub repetitions: usize,
    pub criteria: Vec<Criterion>,
    pub methods: Vec<Method>,
    pub pilot: PilotMethod,
    pub trim_alpha: f64,
    pub seed: u64,
    pub mode: SamplingMode,
    pub exclude_pilot: bool,
    /// Fresh pilot draws allowed per repetition when a pilot sample is separated or
    /// rank-deficient; counted in [`ExperimentReport::pilot_redraws`].
    pub max_pilot_redraws: usize,
    pub fit: FitOptions,
    pub record_timings: bool,
    /// Linear family only: build the plan from the full Gram matrix and skip the pilot.
    pub linear_shortcut: bool,
}

impl ExperimentConfig {
    /// A synthetic-design config with both criteria, both methods and no intercept.
    pub fn new(family: GlmFamily, spec: DesignSpec, n: usize, beta0: DVector<f64>) -> Self {
        ExperimentConfig {
            family,
            source: DataSource::Design(spec),
            n,
            beta0: Some(beta0),
            intercept: Intercept::None,
            noise_sd: 3.0,
            r_p: 500,
            r_grid: vec![1000],
            repetitions: 100,
            criteria: vec![Criterion::AOpt, Criterion::LOpt],
            methods: vec![Method::Unweighted, Method::Weighted],
            pilot: PilotMethod::SimpleRandom,
            trim_alpha: 0.0,
            seed: 1,
            mode: SamplingMode::Unconditional,
            exclude_pilot: false,
            max_pilot_redraws: DEFAULT_PILOT_REDRAWS,
            fit: FitOptions::default(),
            record_timings: false,
            linear_shortcut: family == GlmFamily::Linear,
        }
    }

    fn uses_shortcut(&self) -> bool {
        self.linear_shortcut && self.family == GlmFamily::Linear
    }

    /// Pilot size as reported (0 when the linear shortcut skips the pilot).
    pub fn reported_r_p(&self) -> usize {
        if self.uses_shortcut() {
            0
        } else {
            self.r_p
        }
    }

    /// Label written in the `setting` column; conditional synthetic runs are marked.
    pub fn setting_label(&self) -> String {
        match (&self.source, self.mode) {
            (DataSource::Design(spec), SamplingMode::Conditional) => {
                format!("{}/conditional", spec.kind.name())
            }
            _ => self.source.name().to_string(),
        }
    }

    fn full_size(&self) -> usize {
        match &self.source {
            DataSource::Design(_) => self.n,
            DataSource::Fixed { data, .. } => data.n(),
        }
    }

    /// Collects every problem instead of stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.full_size();
        if n == 0 {
            out.push("full-data size must be positive".to_string());
        }
        if self.repetitions == 0 {
            out.push("repetitions must be at least 1".to_string());
        }
        if self.r_grid.is_empty() {
            out.push("r grid is empty".to_string());
        }
        if self.r_grid.contains(&0) {
            out.push("every subsample size r must be at least 1".to_string());
        }
        if self.criteria.is_empty() {
            out.push("no sampling criterion selected".to_string());
        }
        if self.methods.is_empty() {
            out.push("no estimation method selected".to_string());
        }
        if !(0.0..0.5).contains(&self.trim_alpha) {
            out.push(format!(
                "trim_alpha must lie in [0, 0.5), got {}",
                self.trim_alpha
            ));
        }
        if !self.uses_shortcut() {
            if self.r_p == 0 {
                out.push("pilot size r_p must be at least 1".to_string());
            } else if self.r_p > n {
                out.push(format!(
                    "pilot size {} exceeds full-data size {n}",
                    self.r_p
                ));
            }
        }
        if let Err(e) = self.fit.validate() {
            out.push(e.to_string());
        }
        match &self.source {
            DataSource::Design(spec) => {
                let p = spec.dim + usize::from(self.intercept == Intercept::Add);
                match &self.beta0 {
                    None => out.push("synthetic designs need beta0".to_string()),
                    Some(b) if b.len() != p => out.push(format!(
                        "beta0 has {} entries, the design has {p} columns",
                        b.len()
                    )),
                    Some(_) => {}
                }
                if self.family == GlmFamily::Linear
                    && !(self.noise_sd > 0.0 && self.noise_sd.is_finite())
                {
                    out.push(format!("noise_sd must be positive, got {}", self.noise_sd));
                }
            }
            DataSource::Fixed { data, .. } => {
                if self.mode == SamplingMode::Unconditional {
                    out.push(
                        "fixed datasets cannot be regenerated; use conditional mode".to_string(),
                    );
                }
                if let Err(e) = data.validate_responses(self.family) {
                    out.push(e.to_string());
                } else if data.y().is_some_and(|y| y.iter().any(|v| v.is_nan())) {
                    out.push("fixed datasets need every response measured".to_string());
                }
            }
        }
        if let Some(Criterion::GeneralL(l)) = self
            .criteria
            .iter()
            .find(|c| matches!(c, Criterion::GeneralL(_)))
        {
            let p = match &self.source {
                DataSource::Design(spec) => {
                    spec.dim + usize::from(self.intercept == Intercept::Add)
                }
                DataSource::Fixed { data, .. } => data.p(),
            };
            if l.ncols() != p {
                out.push(format!(
                    "L has {} columns, the model has {p} coefficients",
                    l.ncols()
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }
}

/// One (criterion, r, method) row of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub setting: String,
    pub family: GlmFamily,
    pub criterion: String,
    pub method: Method,
    pub r: usize,
    pub r_p: usize,
    /// Successful repetitions.
    pub repetitions: usize,
    pub emse: f64,
    pub empirical_variance: Option<f64>,
    /// Unweighted cells only.
    pub mean_trace_vhat: Option<f64>,
    /// `emse_weighted / emse_unweighted` for the same criterion and r, on both rows.
    pub relative_efficiency: Option<f64>,
    pub mean_iterations: f64,
    /// Mean per-repetition estimation time; only when timings are recorded.
    pub wall_ms: Option<f64>,
    pub failures: usize,
    pub seed: u64,
    /// Per-repetition estimates in repetition order.
    pub estimates: Vec<DVector<f64>>,
    /// Diagonals of the variance estimates (unweighted cells), aligned with `estimates`.
    pub vhat_diagonals: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepFailure {
    pub repetition: usize,
    pub criterion: String,
    pub method: Method,
    pub r: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedCell {
    pub criterion: String,
    pub method: Method,
    pub r: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub setting: String,
    pub mode: SamplingMode,
    pub seed: u64,
    pub repetitions: usize,
    pub beta_ref: DVector<f64>,
    pub cells: Vec<CellReport>,
    pub dropped: Vec<DroppedCell>,
    pub failures: Vec<RepFailure>,
    /// Pilot samples discarded and redrawn, summed over repetitions.
    pub pilot_redraws: usize,
    /// Total wall time of the run (always measured, never part of the cells unless asked).
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn cell(&self, criterion: &str, method: Method, r: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.criterion == criterion && c.method == method && c.r == r)
    }
}

#[derive(Debug, Clone)]
struct CellDraw {
    beta: DVector<f64>,
    vhat_diag: Option<DVector<f64>>,
    iterations: usize,
    wall: Duration,
}

struct RepOutcome {
    cells: Vec<std::result::Result<CellDraw, String>>,
    pilot_redraws: usize,
}

struct CellKey {
    criterion: usize,
    r: usize,
    method: Method,
}

fn cell_keys(config: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for c in 0..config.criteria.len() {
        for &r in &config.r_grid {
            for &method in &config.methods {
                keys.push(CellKey {
                    criterion: c,
                    r,
                    method,
                });
            }
        }
    }
    keys
}

fn synthesize(
    config: &ExperimentConfig,
    spec: &DesignSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let x = generate_design(spec, config.n, rng);
    let data = Dataset::new(x, None, config.intercept)?;
    let beta0 = config.beta0.as_ref().expect("validated");
    let y = generate_response(config.family, data.x(), beta0, rng, config.noise_sd)?;
    data.with_responses(y)
}

fn plan_for(
    config: &ExperimentConfig,
    data: &Dataset,
    criterion: &Criterion,
    pilot: Option<&crate::sampling::PilotEstimate>,
) -> Result<SamplingPlan> {
    match pilot {
        None => linear_plan(data.x(), criterion.clone()),
        Some(p) => {
            let plan = os_probabilities(config.family, data.x(), p, criterion.clone())?;
            if config.exclude_pilot {
                plan.excluding(&p.pilot_indices)
            } else {
                Ok(plan)
            }
        }
    }
}

fn run_repetition(
    config: &ExperimentConfig,
    keys: &[CellKey],
    shared: Option<&Dataset>,
    s: usize,
) -> RepOutcome {
    let fail_all = |stage: &str, e: Error, pilot_redraws: usize| RepOutcome {
        cells: keys.iter().map(|_| Err(format!("{stage}: {e}"))).collect(),
        pilot_redraws,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(s as u64));
    let owned;
    let data = match (shared, &config.source) {
        (Some(d), _) => d,
        (None, DataSource::Design(spec)) => match synthesize(config, spec, &mut rng) {
            Ok(d) => {
                owned = d;
                &owned
            }
            Err(e) => return fail_all("data", e, 0),
        },
        (None, DataSource::Fixed { .. }) => unreachable!("fixed data is always shared"),
    };

    // one pilot per repetition, shared by every criterion
    let (pilot, pilot_redraws) = if config.uses_shortcut() {
        (None, 0)
    } else {
        match draw_pilot_with_redraws(
            config.family,
            data,
            config.r_p,
            config.pilot,
            &config.fit,
            config.max_pilot_redraws,
            &mut rng,
        ) {
            Ok((p, k)) => (Some(p), k),
            Err(e) => return fail_all("pilot", e, config.max_pilot_redraws),
        }
    };
    let pilot_size = pilot.as_ref().map_or(0, |p| p.r_p);

    let mut out = Vec::with_capacity(keys.len());
    for (ci, criterion) in config.criteria.iter().enumerate() {
        let plan = plan_for(config, data, criterion, pilot.as_ref());
        for &r in &config.r_grid {
            // one draw per (criterion, r), shared by both methods
            let draw = plan.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                sample_with_replacement(p, r, &mut rng).map_err(|e| format!("draw: {e}"))
            });
            for key in keys.iter().filter(|k| k.criterion == ci && k.r == r) {
                let res = match (&plan, &draw) {
                    (Ok(plan), Ok(draw)) => {
                        let start = Instant::now();
                        estimate_on_draw(
                            config.family,
                            data,
                            plan,
                            draw,
                            key.method,
                            &config.fit,
                            pilot_size,
                        )
                        .map(|est| CellDraw {
                            vhat_diag: est.variance.as_ref().map(|v| v.diagonal()),
                            iterations: est.fit.iterations,
                            beta: est.beta,
                            wall: start.elapsed(),
                        })
                        .map_err(|e| format!("subsample fit: {e}"))
                    }
                    (Err(e), _) => Err(format!("plan: {e}")),
                    (_, Err(e)) => Err(e.clone()),
                };
                out.push(res);
            }
        }
    }
    RepOutcome {
        cells: out,
        pilot_redraws,
    }
}

/// Runs `repetitions` independent replications in parallel (repetition `s` is seeded
/// with `seed + s`) and aggregates them in repetition order, so the report does not
/// depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let keys = cell_keys(config);

    let (shared, beta_ref) = match &config.source {
        DataSource::Design(spec) => {
            let beta0 = config.beta0.clone().expect("validated");
            let shared = if config.mode == SamplingMode::Conditional {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                Some(Arc::new(synthesize(config, spec, &mut rng)?))
            } else {
                None
            };
            (shared, beta0)
        }
        DataSource::Fixed { data, .. } => {
            let full = fit_mle(config.family, data, None, &config.fit)?.require_converged()?;
            (Some(Arc::clone(data)), full.beta)
        }
    };

    let outcomes: Vec<RepOutcome> = (1..=config.repetitions)
        .into_par_iter()
        .map(|s| run_repetition(config, &keys, shared.as_deref(), s))
        .collect();

    let setting = config.setting_label();
    let mut cells = Vec::new();
    let mut dropped = Vec::new();
    let mut failures = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        let criterion = config.criteria[key.criterion].label().to_string();
        let mut ok = Vec::new();
        let mut failed = 0;
        for (s, rep) in outcomes.iter().enumerate() {
            match &rep.cells[k] {
                Ok(d) => ok.push(d),
                Err(message) => {
                    failed += 1;
                    failures.push(RepFailure {
                        repetition: s + 1,
                        criterion: criterion.clone(),
                        method: key.method,
                        r: key.r,
                        message: message.clone(),
                    });
                }
            }
        }
        if ok.is_empty() || failed as f64 > MAX_FAILURE_RATE * config.repetitions as f64 {
            dropped.push(DroppedCell {
                criterion,
                method: key.method,
                r: key.r,
                failures: failed,
            });
            continue;
        }
        let estimates: Vec<DVector<f64>> = ok.iter().map(|d| d.beta.clone()).collect();
        let vhat_diagonals: Vec<DVector<f64>> =
            ok.iter().filter_map(|d| d.vhat_diag.clone()).collect();
        let count = ok.len() as f64;
        let mean_trace_vhat = (vhat_diagonals.len() == ok.len())
            .then(|| vhat_diagonals.iter().map(|d| d.sum()).sum::<f64>() / count);
        cells.push(CellReport {
            setting: setting.clone(),
            family: config.family,
            criterion,
            method: key.method,
            r: key.r,
            r_p: config.reported_r_p(),
            repetitions: ok.len(),
            emse: emse(&estimates, &beta_ref, config.trim_alpha)?,
            empirical_variance: empirical_variance(&estimates).ok(),
            mean_trace_vhat,
            relative_efficiency: None,
            mean_iterations: ok.iter().map(|d| d.iterations as f64).sum::<f64>() / count,
            wall_ms: config
                .record_timings
                .then(|| ok.iter().map(|d| d.wall.as_secs_f64() * 1e3).sum::<f64>() / count),
            failures: failed,
            seed: config.seed,
            estimates,
            vhat_diagonals,
        });
    }

    for i in 0..cells.len() {
        if cells[i].method != Method::Weighted {
            continue;
        }
        let partner = cells.iter().position(|c| {
            c.method == Method::Unweighted && c.criterion == cells[i].criterion && c.r == cells[i].r
        });
        if let Some(j) = partner {
            if let Ok(re) = relative_efficiency(cells[i].emse, cells[j].emse) {
                cells[i].relative_efficiency = Some(re);
                cells[j].relative_efficiency = Some(re);
            }
        }
    }

    Ok(ExperimentReport {
        setting,
        mode: config.mode,
        seed: config.seed,
        repetitions: config.repetitions,
        beta_ref,
        cells,
        dropped,
        failures,
        pilot_redraws: outcomes.iter().map(|o| o.pilot_redraws).sum(),
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::designs::DesignKind;

    fn small(kind: DesignKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            GlmFamily::Logistic,
            DesignSpec::new(kind, 3).unwrap(),
            2000,
            DVector::from_element(3, 0.5),
        );
        c.r_p = 200;
        c.r_grid = vec![200, 400];
        c.repetitions = 4;
        c
    }

    #[test]
    fn report_is_deterministic() {
        let mut c = small(DesignKind::MzNormal);
        c.repetitions = 2;
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.cells.len(), 2 * 2 * 2);
        assert!(a.cells.iter().all(|cell| cell.wall_ms.is_none()));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let c = small(DesignKind::NzNormal);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| run_experiment(&c)).unwrap();
        let b = three.install(|| run_experiment(&c)).unwrap();
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn relative_efficiency_matches_cells() {
        let r = run_experiment(&small(DesignKind::MzNormal)).unwrap();
        for crit in ["A-OS", "L-OS"] {
            for rr in [200, 400] {
                let w = r.cell(crit, Method::Weighted, rr).unwrap();
                let uw = r.cell(crit, Method::Unweighted, rr).unwrap();
                assert_eq!(w.relative_efficiency, Some(w.emse / uw.emse));
                assert_eq!(uw.relative_efficiency, w.relative_efficiency);
                assert!(uw.mean_trace_vhat.is_some());
                assert!(w.mean_trace_vhat.is_none());
            }
        }
    }

    #[test]
    fn conditional_mode_is_labeled() {
        let mut c = small(DesignKind::MzNormal);
        c.mode = SamplingMode::Conditional;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.setting, "mzNormal/conditional");
        assert!(r
            .cells
            .iter()
            .all(|cell| cell.setting == "mzNormal/conditional"));
    }

    #[test]
    fn fixed_data_uses_full_mle_and_requires_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = DesignSpec::new(DesignKind::MzNormal, 3).unwrap();
        let x = generate_design(&spec, 3000, &mut rng);
        let y = generate_response(
            GlmFamily::Logistic,
            &x,
            &DVector::from_element(3, 0.5),
            &mut rng,
            1.0,
        )
        .unwrap();
        let data = Arc::new(Dataset::new(x, Some(y), Intercept::Add).unwrap());
        let mut c = small(DesignKind::MzNormal);
        c.source = DataSource::Fixed {
            name: "fixed".into(),
            data: Arc::clone(&data),
        };
        c.beta0 = None;
        assert!(c.validate().is_err());
        c.mode = SamplingMode::Conditional;
        let r = run_experiment(&c).unwrap();
        let full = fit_mle(GlmFamily::Logistic, &data, None, &FitOptions::default()).unwrap();
        assert_eq!(r.beta_ref, full.beta);
        assert_eq!(r.beta_ref.len(), 4);
    }

    #[test]
    fn violations_are_all_listed() {
        let mut c = small(DesignKind::MzNormal);
        c.r_grid = vec![];
        c.repetitions = 0;
        c.beta0 = Some(DVector::zeros(2));
        let v = c.violations();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn linear_shortcut_reports_no_pilot() {
        let mut c = ExperimentConfig::new(
            GlmFamily::Linear,
            DesignSpec::new(DesignKind::MzNormal, 3).unwrap(),
            1000,
            DVector::from_element(3, 0.5),
        );
        c.r_grid = vec![100];
        c.repetitions = 3;
        let r = run_experiment(&c).unwrap();
        assert!(r
            .cells
            .iter()
            .all(|cell| cell.r_p == 0 && cell.mean_iterations == 1.0));
    }

    #[test]
    fn failing_cells_are_dropped() {
        // every pilot is single-class, so all repetitions fail
        let mut c = small(DesignKind::MzNormal);
        c.beta0 = Some(DVector::from_element(3, 40.0));
        c.source = DataSource::Design(DesignSpec::new(DesignKind::Exp, 3).unwrap());
        c.repetitions = 2;
        let r = run_experiment(&c).unwrap();
        assert!(r.cells.is_empty());
        assert_eq!(r.dropped.len(), 8);
        assert_eq!(r.failures.len(), 16);
    }
}

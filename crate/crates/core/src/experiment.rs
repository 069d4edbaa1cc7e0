//! Seeded simulation runs, `(p, lambda)` sweeps and comparison of measured
//! asymptotic errors against the closed form and its bounds.
//!
//! Each run owns two random streams: one drives mobility, the other the
//! sensing draws. In a sweep the mobility seed depends only on the run index,
//! so every cell sees the same trajectories for a given run and cells differ
//! only through their sensing parameters. The sensing seed depends on the
//! cell and run indices. See [`crate::rng`] for the derivation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::init_population;
use crate::rng::{derive_seed, stream, MOBILITY_STREAM, SENSING_STREAM};
use crate::sensing::{BucketMap, DensityField, SensingParams, Snapshot};
use crate::theory::{self, normalized_error, DensityVector};
use crate::world_graph::WorldGraph;

/// Default number of trailing decay samples averaged into the asymptotic
/// error.
pub const DEFAULT_TAIL: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSource {
    /// Open grid without obstacles.
    Grid { rows: usize, cols: usize },
    /// `.`/`#` obstacle grid file.
    GridFile { path: PathBuf },
    /// Sectioned node/edge CSV.
    GraphFile { path: PathBuf },
}

impl WorldSource {
    pub fn build(&self) -> Result<WorldGraph> {
        match self {
            WorldSource::Grid { rows, cols } => WorldGraph::open_grid(*rows, *cols),
            WorldSource::GridFile { path } => WorldGraph::load_grid_file(path),
            WorldSource::GraphFile { path } => WorldGraph::load_csv(path),
        }
    }

    fn resolve_relative(&mut self, base: &Path) {
        match self {
            WorldSource::GridFile { path } | WorldSource::GraphFile { path } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
    }
}

fn default_world() -> WorldSource {
    WorldSource::Grid { rows: 40, cols: 40 }
}
fn default_people() -> usize {
    200
}
fn default_sensors() -> usize {
    20
}
fn default_v_person() -> u32 {
    1
}
fn default_v_sensor() -> u32 {
    3
}
fn default_radius() -> f64 {
    1.0
}
fn default_p() -> f64 {
    1.0
}
fn default_steps() -> u64 {
    5000
}
fn default_coarsening() -> u32 {
    2
}
fn default_stride() -> u64 {
    1
}
fn default_tail() -> usize {
    DEFAULT_TAIL
}

/// Simulation configuration. Every field has a desk-scale default, so `{}`
/// is a valid configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_world")]
    pub world: WorldSource,
    #[serde(default = "default_people")]
    pub n_people: usize,
    #[serde(default = "default_sensors")]
    pub n_sensors: usize,
    #[serde(default = "default_v_person")]
    pub v_person: u32,
    #[serde(default = "default_v_sensor")]
    pub v_sensor: u32,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Side length, in grid units, of the square cells merged into one
    /// density bucket. 1 keeps one bucket per node.
    #[serde(default = "default_coarsening")]
    pub bucket_coarsening: u32,
    #[serde(default)]
    pub seed: u64,
    /// Ticks between consecutive decay-series samples.
    #[serde(default = "default_stride")]
    pub error_stride: u64,
    #[serde(default = "default_tail")]
    pub tail: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SimConfig {
    /// Reads a JSON configuration; relative world paths are resolved against
    /// the configuration file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: SimConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.world.resolve_relative(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensing()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.v_person == 0 || self.v_sensor == 0 {
            return Err(Error::InvalidConfig("speeds must be >= 1".into()));
        }
        if self.bucket_coarsening == 0 {
            return Err(Error::InvalidConfig("bucket_coarsening must be >= 1".into()));
        }
        if self.error_stride == 0 {
            return Err(Error::InvalidConfig("error_stride must be >= 1".into()));
        }
        if self.tail == 0 {
            return Err(Error::InvalidConfig("tail must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sensing(&self) -> Result<SensingParams> {
        SensingParams::new(self.p, self.lambda, self.radius)
    }
}

/// Seeds of the two streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub mobility: u64,
    pub sensing: u64,
}

impl RunSeeds {
    /// Streams of a standalone run seeded with `seed`.
    pub fn from_seed(seed: u64) -> Self {
        RunSeeds {
            mobility: derive_seed(seed, &[MOBILITY_STREAM]),
            sensing: derive_seed(seed, &[SENSING_STREAM]),
        }
    }

    /// Streams of run `run` in cell `(p_index, lambda_index)` of a sweep.
    pub fn for_sweep(seed_root: u64, p_index: usize, lambda_index: usize, run: usize) -> Self {
        RunSeeds {
            mobility: derive_seed(seed_root, &[MOBILITY_STREAM, run as u64]),
            sensing: derive_seed(
                seed_root,
                &[SENSING_STREAM, p_index as u64, lambda_index as u64, run as u64],
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub step: u64,
    pub cumulative_samples: u64,
    pub error: f64,
}

/// Normalized error of the running snapshot as samples accumulate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecaySeries {
    rows: Vec<DecayRow>,
}

impl DecaySeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; steps must increase strictly, samples must not decrease
    /// and the error must lie in `[0, 1]`.
    pub fn push(&mut self, row: DecayRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step || row.cumulative_samples < last.cumulative_samples {
                return Err(Error::Domain(format!(
                    "decay row at step {} does not follow step {}",
                    row.step, last.step
                )));
            }
        }
        if !(0.0..=1.0).contains(&row.error) {
            return Err(Error::Domain(format!("error {} outside [0, 1]", row.error)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        let mut s = Self::new();
        for (i, &error) in errors.iter().enumerate() {
            s.push(DecayRow {
                step: i as u64 + 1,
                cumulative_samples: i as u64 + 1,
                error,
            })?;
        }
        Ok(s)
    }

    pub fn rows(&self) -> &[DecayRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.error)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "cumulative_samples", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.cumulative_samples.to_string(),
                r.error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Point-wise mean of equally sampled series.
    pub fn average(series: &[DecaySeries]) -> Result<DecaySeries> {
        let first = series.first().ok_or(Error::EmptySeries)?;
        for s in series {
            if s.len() != first.len()
                || s.rows.iter().zip(&first.rows).any(|(a, b)| a.step != b.step)
            {
                return Err(Error::Domain("decay series are not sampled identically".into()));
            }
        }
        let n = series.len() as f64;
        let rows = (0..first.len())
            .map(|i| {
                let error = series.iter().map(|s| s.rows[i].error).sum::<f64>() / n;
                let samples =
                    series.iter().map(|s| s.rows[i].cumulative_samples).sum::<u64>() / series.len() as u64;
                DecayRow {
                    step: first.rows[i].step,
                    cumulative_samples: samples,
                    error: error.clamp(0.0, 1.0),
                }
            })
            .collect();
        Ok(DecaySeries { rows })
    }
}

/// Mean of the last `min(tail, len)` errors.
pub fn asymptotic_error(series: &DecaySeries, tail: usize) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if tail == 0 {
        return Err(Error::Domain("tail length must be >= 1".into()));
    }
    if series.len() < tail {
        log::warn!(
            "decay series has {} samples, fewer than the tail of {tail}; averaging all",
            series.len()
        );
    }
    let take = tail.min(series.len());
    let sum: f64 = series.rows[series.len() - take..].iter().map(|r| r.error).sum();
    Ok(sum / take as f64)
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: DecaySeries,
    pub snapshot: Snapshot,
    pub buckets: BucketMap,
}

/// Runs one simulation with the seeds derived from `cfg.seed`.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let world = cfg.world.build()?;
    run_on_world(&world, cfg, RunSeeds::from_seed(cfg.seed))
}

/// Runs one simulation on an already built world.
pub fn run_on_world(world: &WorldGraph, cfg: &SimConfig, seeds: RunSeeds) -> Result<SimOutput> {
    cfg.validate()?;
    let params = cfg.sensing()?;
    let buckets = BucketMap::coarsened(world, cfg.bucket_coarsening)?;
    let mut field = DensityField::new(buckets.clone());
    let mut move_rng = stream(seeds.mobility);
    let mut sense_rng = stream(seeds.sensing);
    let mut agents = init_population(
        world,
        cfg.n_people,
        cfg.n_sensors,
        cfg.v_person,
        cfg.v_sensor,
        &mut move_rng,
    )?;

    let mut series = DecaySeries::new();
    for tick in 1..=cfg.steps {
        for agent in agents.iter_mut() {
            agent.step(world, &mut move_rng)?;
        }
        field.record_step(world, &agents, &params, &mut sense_rng);
        if tick % cfg.error_stride == 0 || tick == cfg.steps {
            let snap = field.snapshot()?;
            series.push(DecayRow {
                step: tick,
                cumulative_samples: field.cumulative_samples(),
                error: normalized_error(&snap.psi, &snap.phi)?,
            })?;
        }
    }
    Ok(SimOutput {
        series,
        snapshot: field.snapshot()?,
        buckets,
    })
}

/// Grid of sensing parameters to sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub p_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub runs: usize,
    pub seed_root: u64,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub p_index: usize,
    pub lambda_index: usize,
    pub p: f64,
    pub lambda: f64,
    /// Per-run decay curves, indexed by run.
    pub runs: Vec<DecaySeries>,
    /// Point-wise mean of `runs`.
    pub mean_curve: DecaySeries,
    /// Tail mean of `mean_curve`.
    pub asymptotic_mean: f64,
    /// Sample standard deviation of the per-run tail means.
    pub asymptotic_std: f64,
    /// True density of run 0.
    pub phi: DensityVector,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    /// Standard error of the mean asymptotic error.
    pub fn sem(&self) -> f64 {
        if self.runs.is_empty() {
            return f64::NAN;
        }
        self.asymptotic_std / (self.runs.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    /// Cells in row-major `(p, lambda)` order.
    pub cells: Vec<SweepCell>,
    pub tail: usize,
}

impl SweepTable {
    pub fn cell(&self, p_index: usize, lambda_index: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.p_index == p_index && c.lambda_index == lambda_index)
    }

    /// True density of the first successful run, for theory comparison.
    pub fn representative_phi(&self) -> Option<&DensityVector> {
        self.cells.iter().find(|c| c.error.is_none()).map(|c| &c.phi)
    }
}

/// Runs every `(p, lambda)` cell `spec.runs` times on a pool of `threads`
/// workers (0 = all cores). Results do not depend on the thread count.
pub fn sweep(world: &WorldGraph, base: &SimConfig, spec: &SweepSpec, threads: usize) -> Result<SweepTable> {
    base.validate()?;
    if spec.p_values.is_empty() || spec.lambda_values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one p and one lambda".into()));
    }
    if spec.runs == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one run per cell".into()));
    }
    for &p in &spec.p_values {
        SensingParams::new(p, 0.0, base.radius)?;
    }
    for &l in &spec.lambda_values {
        SensingParams::new(0.0, l, base.radius)?;
    }

    let n_l = spec.lambda_values.len();
    let jobs: Vec<(usize, usize, usize)> = (0..spec.p_values.len())
        .flat_map(|pi| (0..n_l).flat_map(move |li| (0..spec.runs).map(move |run| (pi, li, run))))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<SimOutput>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(pi, li, run)| {
                let mut cfg = base.clone();
                cfg.p = spec.p_values[pi];
                cfg.lambda = spec.lambda_values[li];
                run_on_world(world, &cfg, RunSeeds::for_sweep(spec.seed_root, pi, li, run))
            })
            .collect()
    });

    let mut results = results.into_iter();
    let mut cells = Vec::with_capacity(spec.p_values.len() * n_l);
    for pi in 0..spec.p_values.len() {
        for li in 0..n_l {
            let outputs: Vec<Result<SimOutput>> = results.by_ref().take(spec.runs).collect();
            cells.push(build_cell(spec, pi, li, outputs, base.tail));
        }
    }
    Ok(SweepTable {
        cells,
        tail: base.tail,
    })
}

fn build_cell(
    spec: &SweepSpec,
    pi: usize,
    li: usize,
    outputs: Vec<Result<SimOutput>>,
    tail: usize,
) -> SweepCell {
    let (p, lambda) = (spec.p_values[pi], spec.lambda_values[li]);
    let failed = |msg: String| {
        log::error!("sweep cell p={p} lambda={lambda} failed: {msg}");
        SweepCell {
            p_index: pi,
            lambda_index: li,
            p,
            lambda,
            runs: Vec::new(),
            mean_curve: DecaySeries::new(),
            asymptotic_mean: f64::NAN,
            asymptotic_std: f64::NAN,
            phi: DensityVector::uniform(0.0, 1).expect("valid"),
            error: Some(msg),
        }
    };

    let mut runs = Vec::with_capacity(outputs.len());
    let mut phi = None;
    for out in outputs {
        match out {
            Ok(o) => {
                phi.get_or_insert(o.snapshot.phi);
                runs.push(o.series);
            }
            Err(e) => return failed(e.to_string()),
        }
    }
    let summary = (|| -> Result<(DecaySeries, f64, f64)> {
        let mean_curve = DecaySeries::average(&runs)?;
        let asymptotic_mean = asymptotic_error(&mean_curve, tail)?;
        let per_run = runs
            .iter()
            .map(|s| asymptotic_error(s, tail))
            .collect::<Result<Vec<_>>>()?;
        Ok((mean_curve, asymptotic_mean, sample_std(&per_run)))
    })();
    match summary {
        Ok((mean_curve, asymptotic_mean, asymptotic_std)) => SweepCell {
            p_index: pi,
            lambda_index: li,
            p,
            lambda,
            runs,
            mean_curve,
            asymptotic_mean,
            asymptotic_std,
            phi: phi.expect("at least one run"),
            error: None,
        },
        Err(e) => failed(e.to_string()),
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Theory prediction for one `(p, lambda)` pair against a true density with
/// mean `h` and shape `c`. Entries are `None` where the formula is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub closed_form: Option<f64>,
    pub bound_tight: Option<f64>,
    pub bound_loose: Option<f64>,
}

pub fn predict(p: f64, lambda: f64, h: f64, c: f64) -> Prediction {
    let closed_form = if p > 0.0 {
        theory::closed_form_error(p, lambda / h, c).ok()
    } else if lambda > 0.0 {
        // Zero detection rate leaves only the flat false-positive floor.
        theory::flat_sensing_error(c).ok()
    } else {
        None
    };
    Prediction {
        closed_form,
        bound_tight: theory::bound_tight(p, lambda, h, c).ok(),
        bound_loose: theory::bound_loose(p, lambda, h).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellComparison {
    pub p: f64,
    pub lambda: f64,
    pub measured: Option<f64>,
    pub measured_std: Option<f64>,
    pub measured_sem: Option<f64>,
    pub n_runs: usize,
    #[serde(flatten)]
    pub prediction: Prediction,
    pub exceeds_bound_tight: bool,
    pub exceeds_bound_loose: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    /// Mean true density of the representative run.
    pub h: f64,
    /// Shape parameter of the representative run.
    pub c: f64,
    pub buckets: usize,
    pub tail: usize,
    pub cells: Vec<CellComparison>,
}

/// Compares every cell's asymptotic error with the closed form and bounds
/// evaluated at the `h` and `c` of `phi`.
pub fn compare_to_theory(table: &SweepTable, phi: &DensityVector) -> Result<TheoryReport> {
    let h = theory::mean_density(phi);
    let c = theory::shape_c(phi)?;
    let cells = table
        .cells
        .iter()
        .map(|cell| {
            let prediction = predict(cell.p, cell.lambda, h, c);
            let measured = cell.error.is_none().then_some(cell.asymptotic_mean);
            let exceeds = |bound: Option<f64>| match (measured, bound) {
                (Some(m), Some(b)) => m > b,
                _ => false,
            };
            CellComparison {
                p: cell.p,
                lambda: cell.lambda,
                measured,
                measured_std: measured.map(|_| cell.asymptotic_std),
                measured_sem: measured.map(|_| cell.sem()),
                n_runs: cell.n_runs(),
                exceeds_bound_tight: exceeds(prediction.bound_tight),
                exceeds_bound_loose: exceeds(prediction.bound_loose),
                prediction,
                error: cell.error.clone(),
            }
        })
        .collect();
    Ok(TheoryReport {
        h,
        c,
        buckets: phi.len(),
        tail: table.tail,
        cells,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `p,lambda,asymptotic_mean,asymptotic_std,n_runs,closed_form,bound_tight,bound_loose`.
pub fn write_sweep_csv<W: Write>(report: &TheoryReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "p",
        "lambda",
        "asymptotic_mean",
        "asymptotic_std",
        "n_runs",
        "closed_form",
        "bound_tight",
        "bound_loose",
    ])?;
    for c in &report.cells {
        w.write_record([
            c.p.to_string(),
            c.lambda.to_string(),
            fmt_opt(c.measured),
            fmt_opt(c.measured_std),
            c.n_runs.to_string(),
            fmt_opt(c.prediction.closed_form),
            fmt_opt(c.prediction.bound_tight),
            fmt_opt(c.prediction.bound_loose),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulationReport<'a> {
    config: &'a SimConfig,
    buckets: usize,
    cumulative_samples: u64,
    final_error: f64,
    asymptotic_error: f64,
    h: f64,
    c: Option<f64>,
    #[serde(flatten)]
    prediction: Option<Prediction>,
}

/// Writes `decay_0_0.csv`, `snapshot.csv` and `report.json` for a single run.
pub fn write_simulation_outputs(cfg: &SimConfig, out: &SimOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    out.series.write_csv(create(&dir.join("decay_0_0.csv"))?)?;
    out.snapshot
        .write_csv(&out.buckets, create(&dir.join("snapshot.csv"))?)?;

    let phi = &out.snapshot.phi;
    let h = theory::mean_density(phi);
    let c = theory::shape_c(phi).ok();
    let report = SimulationReport {
        config: cfg,
        buckets: phi.len(),
        cumulative_samples: out.series.rows().last().map_or(0, |r| r.cumulative_samples),
        final_error: out.series.rows().last().map_or(f64::NAN, |r| r.error),
        asymptotic_error: asymptotic_error(&out.series, cfg.tail)?,
        h,
        c,
        prediction: c.map(|c| predict(cfg.p, cfg.lambda, h, c)),
    };
    write_json(&dir.join("report.json"), &report)
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    config: &'a SimConfig,
    p_values: &'a [f64],
    lambda_values: &'a [f64],
    runs: usize,
    seed_root: u64,
    theory: &'a TheoryReport,
}

/// Writes `sweep.csv`, `report.json` and one `decay_<cell>_<run>.csv` per
/// run, where `<cell>` is the row-major cell index.
pub fn write_sweep_outputs(
    base: &SimConfig,
    spec: &SweepSpec,
    table: &SweepTable,
    report: &TheoryReport,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_sweep_csv(report, create(&dir.join("sweep.csv"))?)?;
    let summary = SweepReport {
        config: base,
        p_values: &spec.p_values,
        lambda_values: &spec.lambda_values,
        runs: spec.runs,
        seed_root: spec.seed_root,
        theory: report,
    };
    write_json(&dir.join("report.json"), &summary)?;
    for (idx, cell) in table.cells.iter().enumerate() {
        for (run, series) in cell.runs.iter().enumerate() {
            series.write_csv(create(&dir.join(format!("decay_{idx}_{run}.csv")))?)?;
        }
    }
    Ok(())
}

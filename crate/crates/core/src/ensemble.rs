//! Trajectory ensembles: seeding, parallel execution and aggregation.
//!
//! Trajectories are grouped into fixed chunks of [`CHUNK_SIZE`]. Each chunk
//! is accumulated sequentially by one worker and the chunk aggregates are
//! merged in chunk order, so a run's output depends only on its seed and
//! spec, never on the number of workers or on scheduling.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lattice::{make_initial, Boundary, InitialState, ModelParams, WaveFunction};
use crate::lindblad::{LindbladIntegrator, LindbladState};
use crate::noise::NoiseStream;
use crate::observables::{measure, EnsembleSummary, GridSpec, SummaryAccumulator, TrajectoryRecord};
use crate::results::RunMeta;
use crate::unravelling::{drive, JumpLog, NoiseVariant, UnravellingKind};

/// Trajectories per work unit.
pub const CHUNK_SIZE: u64 = 32;
/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "TBNOISE_WORKERS";
/// Memory the working set of a run may claim.
pub const MEMORY_BUDGET_BYTES: u64 = 4 << 30;
/// Complex buffers of lattice size held per trajectory in flight.
const BUFFERS_PER_TRAJECTORY: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub params: ModelParams,
    pub unravelling: UnravellingKind,
    pub initial: InitialState,
    pub n_trajectories: u64,
    pub grid: GridSpec,
    pub output: Option<PathBuf>,
    /// Keep every trajectory's record in addition to the summary.
    pub keep_records: bool,
}

impl RunSpec {
    pub fn new(params: ModelParams, unravelling: UnravellingKind, initial: InitialState, n_trajectories: u64) -> Self {
        Self {
            params,
            unravelling,
            initial,
            n_trajectories,
            grid: GridSpec::default(),
            output: None,
            keep_records: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_trajectories == 0 {
            return Err(Error::Config("need at least one trajectory".into()));
        }
        Ok(())
    }

    /// Output times; rounded to whole steps for time-stepped unravellings.
    pub fn times(&self) -> Result<Vec<f64>> {
        let dt = self.unravelling.is_time_stepped().then_some(self.params.dt);
        self.grid.times(self.params.t_max, dt)
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            gamma: self.params.gamma,
            n_sites: self.params.n_sites,
            dt: self.params.dt,
            t_max: self.params.t_max,
            boundary: self.params.boundary,
            unravelling: self.unravelling.tag().to_string(),
            noise: self.unravelling.noise_variant().to_string(),
            seed: self.params.seed,
            initial: self.initial.to_string(),
            code_version: crate::CODE_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub summary: EnsembleSummary,
    /// Per-trajectory records in trajectory order, when requested.
    pub records: Option<Vec<TrajectoryRecord>>,
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn check_memory(n_sites: usize, workers: usize, extra: u64) -> Result<()> {
    let per = n_sites as u64 * 16 * BUFFERS_PER_TRAJECTORY;
    let need = per * workers as u64 + extra;
    if need > MEMORY_BUDGET_BYTES {
        return Err(Error::Config(format!(
            "run needs about {} MiB, above the {} MiB budget; use fewer workers or sites",
            need >> 20,
            MEMORY_BUDGET_BYTES >> 20
        )));
    }
    Ok(())
}

/// Runs `work` on every chunk of `0..n` with `workers` threads and returns
/// the chunk results in chunk order. The error reported is the one from the
/// lowest failing chunk, so failures are as reproducible as results.
fn run_chunks<T, F>(n: u64, workers: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<u64>) -> Result<T> + Sync,
{
    let n_chunks = n.div_ceil(CHUNK_SIZE) as usize;
    let first_failure = AtomicUsize::new(usize::MAX);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Option<Result<T>>> = pool.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                if c > first_failure.load(Ordering::Relaxed) {
                    return None;
                }
                let lo = c as u64 * CHUNK_SIZE;
                let out = work(lo..(lo + CHUNK_SIZE).min(n));
                if out.is_err() {
                    first_failure.fetch_min(c, Ordering::Relaxed);
                }
                Some(out)
            })
            .collect()
    });
    results.into_iter().map_while(|r| r).collect()
}

fn abort(index: u64, seed: u64, err: Error) -> Error {
    Error::TrajectoryAbort { index, seed, source: Box::new(err) }
}

/// One trajectory of `spec`, recorded on `times`. Trajectory `index` always
/// draws the same noise, so a failing trajectory can be replayed alone.
pub fn run_trajectory(
    spec: &RunSpec,
    psi0: &WaveFunction,
    index: u64,
    times: &[f64],
) -> Result<(TrajectoryRecord, JumpLog)> {
    let mut stream = NoiseStream::new(spec.params.seed, index, spec.unravelling.noise_kind());
    let mut record = TrajectoryRecord::with_capacity(times.len());
    let log = drive(spec.unravelling, &spec.params, psi0.clone(), &mut stream, times, |i, _, state| {
        record.push(times[i], measure(state))
    })
    .map_err(|e| abort(index, spec.params.seed, e))?;
    Ok((record, log))
}

pub fn run_ensemble(spec: &RunSpec) -> Result<EnsembleSummary> {
    Ok(run_ensemble_with(spec, worker_count()?)?.summary)
}

pub fn run_ensemble_with(spec: &RunSpec, workers: usize) -> Result<EnsembleOutput> {
    spec.validate()?;
    let times = spec.times()?;
    let record_bytes = if spec.keep_records {
        spec.n_trajectories * times.len() as u64 * 5 * 8
    } else {
        0
    };
    check_memory(spec.params.n_sites, workers, record_bytes)?;
    let psi0 = make_initial(&spec.params, &spec.initial)?;
    log::info!(
        "{} trajectories of {} at gamma = {} on {} sites, {} workers",
        spec.n_trajectories,
        spec.unravelling,
        spec.params.gamma,
        spec.params.n_sites,
        workers
    );
    let chunks = run_chunks(spec.n_trajectories, workers, |range| {
        let mut acc = SummaryAccumulator::new(times.clone());
        let mut records = Vec::new();
        for index in range {
            let (record, _) = run_trajectory(spec, &psi0, index, &times)?;
            acc.add_record(&record);
            if spec.keep_records {
                records.push(record);
            }
        }
        Ok((acc, records))
    })?;
    let mut total = SummaryAccumulator::new(times);
    let mut all_records = spec.keep_records.then(Vec::new);
    for (acc, records) in chunks {
        total.merge(&acc);
        if let Some(all) = all_records.as_mut() {
            all.extend(records);
        }
    }
    Ok(EnsembleOutput { summary: total.finish(spec.meta()), records: all_records })
}

/// Settings of an unravelling-equivalence check against direct integration.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub params: ModelParams,
    pub initial: InitialState,
    pub checkpoints: Vec<f64>,
    pub n_trajectories: u64,
    pub unravellings: Vec<UnravellingKind>,
    /// Rate handed to the master-equation oracle; `None` means `params.gamma`.
    /// Setting it to something else gives a negative control.
    pub oracle_gamma: Option<f64>,
    /// Largest corrected `|z|` that still passes.
    pub z_threshold: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            params: ModelParams {
                gamma: 4.0,
                n_sites: 11,
                boundary: Boundary::Periodic,
                t_max: 2.0,
                ..Default::default()
            },
            initial: InitialState::delta(),
            checkpoints: vec![0.5, 1.0, 2.0],
            n_trajectories: 5_000,
            unravellings: default_compare_kinds(),
            oracle_gamma: None,
            z_threshold: 4.0,
        }
    }
}

pub fn default_compare_kinds() -> Vec<UnravellingKind> {
    vec![
        UnravellingKind::Wnp,
        UnravellingKind::Qsd(NoiseVariant::Complex),
        UnravellingKind::Qsd(NoiseVariant::Real),
        UnravellingKind::Jump,
        UnravellingKind::JumpEventDriven,
    ]
}

/// Largest lattice accepted by the equivalence check.
pub const MAX_COMPARE_SITES: usize = 15;
/// Standard errors below this count as a deterministic ensemble.
pub const DEGENERATE_STDERR: f64 = 1e-12;
/// Absolute agreement required of a deterministic ensemble.
pub const DETERMINISTIC_TOLERANCE: f64 = 1e-3;

/// Ensemble mean of `|ψ⟩⟨ψ|` with elementwise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorEstimate {
    pub mean: Array2<Complex64>,
    pub stderr_re: Array2<f64>,
    pub stderr_im: Array2<f64>,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct ProjectorAccumulator {
    // Per checkpoint, row-major moments of the real and imaginary parts.
    re: Vec<Vec<crate::observables::Moments>>,
    im: Vec<Vec<crate::observables::Moments>>,
    n_sites: usize,
}

impl ProjectorAccumulator {
    fn new(checkpoints: usize, n_sites: usize) -> Self {
        let blank = vec![vec![Default::default(); n_sites * n_sites]; checkpoints];
        Self { re: blank.clone(), im: blank, n_sites }
    }

    fn observe(&mut self, k: usize, psi: &WaveFunction) {
        let n = self.n_sites;
        for i in 0..n {
            for j in 0..n {
                let v = psi.amps[i] * psi.amps[j].conj();
                self.re[k][i * n + j].push(v.re);
                self.im[k][i * n + j].push(v.im);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.re.iter_mut().zip(&other.re).chain(self.im.iter_mut().zip(&other.im)) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    fn estimate(&self, k: usize) -> ProjectorEstimate {
        let n = self.n_sites;
        ProjectorEstimate {
            mean: Array2::from_shape_fn((n, n), |(i, j)| {
                Complex64::new(self.re[k][i * n + j].mean, self.im[k][i * n + j].mean)
            }),
            stderr_re: Array2::from_shape_fn((n, n), |(i, j)| self.re[k][i * n + j].stderr()),
            stderr_im: Array2::from_shape_fn((n, n), |(i, j)| self.im[k][i * n + j].stderr()),
            n: self.re[k][0].n,
        }
    }
}

/// Ensemble-averaged projectors of one unravelling at each checkpoint.
pub fn ensemble_projectors(
    params: &ModelParams,
    kind: UnravellingKind,
    initial: &InitialState,
    checkpoints: &[f64],
    n_trajectories: u64,
    workers: usize,
) -> Result<Vec<ProjectorEstimate>> {
    let psi0 = make_initial(params, initial)?;
    let n = params.n_sites;
    let chunks = run_chunks(n_trajectories, workers, |range| {
        let mut acc = ProjectorAccumulator::new(checkpoints.len(), n);
        for index in range {
            let mut stream = NoiseStream::new(params.seed, index, kind.noise_kind());
            drive(kind, params, psi0.clone(), &mut stream, checkpoints, |k, _, psi| acc.observe(k, psi))
                .map_err(|e| abort(index, params.seed, e))?;
        }
        Ok(acc)
    })?;
    let mut total = ProjectorAccumulator::new(checkpoints.len(), n);
    for acc in &chunks {
        total.merge(acc);
    }
    Ok((0..checkpoints.len()).map(|k| total.estimate(k)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// One compared matrix element.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub unravelling: UnravellingKind,
    pub t: f64,
    pub row: usize,
    pub col: usize,
    pub part: Part,
    pub estimate: f64,
    pub oracle: f64,
    pub stderr: f64,
    pub z: f64,
    /// `|z|` after the Bonferroni correction over every comparison in the report.
    pub z_corrected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub entries: Vec<ZScore>,
    pub estimates: Vec<(UnravellingKind, Vec<ProjectorEstimate>)>,
    pub oracle: Vec<Array2<Complex64>>,
    pub checkpoints: Vec<f64>,
    pub max_corrected_z: f64,
    pub z_threshold: f64,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_corrected_z < self.z_threshold
    }

    pub fn worst(&self) -> Option<&ZScore> {
        self.entries.iter().max_by(|a, b| a.z_corrected.total_cmp(&b.z_corrected))
    }

    /// `max |z|` per unravelling, before correction.
    pub fn max_raw_z(&self, kind: UnravellingKind) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.unravelling == kind)
            .fold(0.0, |m, e| m.max(e.z.abs()))
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        match self.worst() {
            Some(w) => format!(
                "{verdict} max corrected |z| = {:.3} (threshold {}) at {} t={} ({},{}) {}",
                self.max_corrected_z,
                self.z_threshold,
                w.unravelling,
                w.t,
                w.row,
                w.col,
                if w.part == Part::Re { "re" } else { "im" }
            ),
            None => format!("{verdict} no comparisons"),
        }
    }

    /// z-score table followed by the verdict as a `#` line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("unravelling,noise,t,row,col,part,estimate,oracle,stderr,z,z_corrected\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                e.unravelling.tag(),
                e.unravelling.noise_variant(),
                e.t,
                e.row,
                e.col,
                if e.part == Part::Re { "re" } else { "im" },
                e.estimate,
                e.oracle,
                e.stderr,
                e.z,
                e.z_corrected
            ));
        }
        out.push_str(&format!("# {}\n", self.summary_line()));
        out
    }
}

/// Two-sided Bonferroni correction of a z-score over `m` comparisons,
/// mapped back to a z-score.
pub fn bonferroni_z(z: f64, m: usize) -> f64 {
    let normal = Normal::standard();
    let z = z.abs();
    if z.is_infinite() {
        return z;
    }
    let p = 2.0 * normal.cdf(-z);
    if p == 0.0 || p < 1e-300 {
        // Far tail: log p ≈ -z²/2, so the correction subtracts 2 ln m from z².
        return (z * z - 2.0 * (m as f64).ln()).max(0.0).sqrt();
    }
    let pc = (p * m as f64).min(1.0);
    if pc >= 1.0 {
        return 0.0;
    }
    // Lower-tail quantile keeps precision for tiny p.
    -normal.inverse_cdf(pc / 2.0)
}

fn z_of(estimate: f64, oracle: f64, stderr: f64) -> f64 {
    let diff = estimate - oracle;
    if stderr < DEGENERATE_STDERR {
        if diff.abs() <= DETERMINISTIC_TOLERANCE {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    } else {
        diff / stderr
    }
}

/// Compares each unravelling's averaged projector with the master equation
/// at every checkpoint, element by element (upper triangle; imaginary parts
/// off the diagonal only).
pub fn compare_unravellings(spec: &CompareSpec, workers: usize) -> Result<EquivalenceReport> {
    let p = &spec.params;
    p.validate()?;
    if p.n_sites > MAX_COMPARE_SITES || p.boundary != Boundary::Periodic {
        return Err(Error::Config(format!(
            "equivalence check needs a periodic lattice of at most {MAX_COMPARE_SITES} sites"
        )));
    }
    if spec.n_trajectories < 2 {
        return Err(Error::Config("equivalence check needs at least two trajectories".into()));
    }
    if spec.checkpoints.is_empty() || spec.checkpoints.windows(2).any(|w| w[1] <= w[0]) || spec.checkpoints[0] <= 0.0 {
        return Err(Error::Config("checkpoints must be positive and increasing".into()));
    }
    let mut grid = spec.checkpoints.clone();
    for t in &mut grid {
        *t = (*t / p.dt).round() * p.dt;
    }

    let oracle_gamma = spec.oracle_gamma.unwrap_or(p.gamma);
    let mut state = LindbladState::from_initial(p, &spec.initial)?;
    let mut integ = LindbladIntegrator::new(oracle_gamma, p.boundary, p.n_sites, crate::lindblad::LINDBLAD_DT)?;
    let mut oracle = Vec::new();
    for &t in &grid {
        integ.evolve_to(&mut state, t)?;
        oracle.push(state.rho.rho.clone());
    }

    let mut estimates = Vec::new();
    for &kind in &spec.unravellings {
        let est = ensemble_projectors(p, kind, &spec.initial, &grid, spec.n_trajectories, workers)?;
        estimates.push((kind, est));
    }

    let n = p.n_sites;
    let mut entries = Vec::new();
    for (kind, est) in &estimates {
        for (k, e) in est.iter().enumerate() {
            for i in 0..n {
                for j in i..n {
                    let mut parts = vec![(Part::Re, e.mean[(i, j)].re, oracle[k][(i, j)].re, e.stderr_re[(i, j)])];
                    if i != j {
                        parts.push((Part::Im, e.mean[(i, j)].im, oracle[k][(i, j)].im, e.stderr_im[(i, j)]));
                    }
                    for (part, estimate, o, se) in parts {
                        entries.push(ZScore {
                            unravelling: *kind,
                            t: grid[k],
                            row: i,
                            col: j,
                            part,
                            estimate,
                            oracle: o,
                            stderr: se,
                            z: z_of(estimate, o, se),
                            z_corrected: 0.0,
                        });
                    }
                }
            }
        }
    }
    let m = entries.len();
    let mut max_corrected_z: f64 = 0.0;
    for e in &mut entries {
        e.z_corrected = bonferroni_z(e.z, m);
        max_corrected_z = max_corrected_z.max(e.z_corrected);
    }
    Ok(EquivalenceReport {
        entries,
        estimates,
        oracle,
        checkpoints: grid,
        max_corrected_z,
        z_threshold: spec.z_threshold,
    })
}

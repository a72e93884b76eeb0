//! Observables, ensemble statistics and the curve fits applied to them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::WaveFunction;
use crate::results::RunMeta;

/// `(⟨x̂⟩, ⟨x̂²⟩, σ², P)` of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub mean_x: f64,
    pub mean_x2: f64,
    pub var_x: f64,
    /// Participation number `1 / Σ|c_n|⁴`.
    pub pn: f64,
}

pub fn measure(psi: &WaveFunction) -> Observables {
    let mut total = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    let mut fourth = 0.0;
    for (i, c) in psi.amps.iter().enumerate() {
        let p = c.norm_sqr();
        if p == 0.0 {
            continue;
        }
        let x = psi.coordinate(i) as f64;
        total += p;
        first += p * x;
        second += p * x * x;
        fourth += p * p;
    }
    let mean_x = first / total;
    let mut var_x = 0.0;
    for (i, c) in psi.amps.iter().enumerate() {
        let p = c.norm_sqr();
        if p != 0.0 {
            let d = psi.coordinate(i) as f64 - mean_x;
            var_x += p * d * d;
        }
    }
    Observables {
        mean_x,
        mean_x2: second / total,
        var_x: var_x / total,
        pn: total * total / fourth,
    }
}

/// Observables of one trajectory on the output grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_x2: Vec<f64>,
    pub var_x: Vec<f64>,
    pub pn: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            grid: Vec::with_capacity(n),
            mean_x: Vec::with_capacity(n),
            mean_x2: Vec::with_capacity(n),
            var_x: Vec::with_capacity(n),
            pn: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, obs: Observables) {
        self.grid.push(t);
        self.mean_x.push(obs.mean_x);
        self.mean_x2.push(obs.mean_x2);
        self.var_x.push(obs.var_x);
        self.pn.push(obs.pn);
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Time average of `σ²` over the (uniform or not) grid, by the trapezoid rule.
    pub fn time_averaged_variance(&self) -> f64 {
        trapezoid_mean(&self.grid, &self.var_x)
    }
}

fn trapezoid_mean(t: &[f64], y: &[f64]) -> f64 {
    if t.len() < 2 {
        return y.first().copied().unwrap_or(f64::NAN);
    }
    let mut area = 0.0;
    for i in 1..t.len() {
        area += 0.5 * (y[i] + y[i - 1]) * (t[i] - t[i - 1]);
    }
    area / (t[t.len() - 1] - t[0])
}

/// Streaming mean and variance (Welford), mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Per-time accumulators for `⟨x̂²⟩`, `⟨x̂⟩²`, `σ²` and `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryAccumulator {
    pub times: Vec<f64>,
    pub mean_x2: Vec<Moments>,
    pub mean_x_sq: Vec<Moments>,
    pub var_x: Vec<Moments>,
    pub pn: Vec<Moments>,
}

impl SummaryAccumulator {
    pub fn new(times: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            times,
            mean_x2: vec![Moments::default(); n],
            mean_x_sq: vec![Moments::default(); n],
            var_x: vec![Moments::default(); n],
            pn: vec![Moments::default(); n],
        }
    }

    pub fn observe(&mut self, index: usize, obs: &Observables) {
        self.mean_x2[index].push(obs.mean_x2);
        self.mean_x_sq[index].push(obs.mean_x * obs.mean_x);
        self.var_x[index].push(obs.var_x);
        self.pn[index].push(obs.pn);
    }

    pub fn add_record(&mut self, record: &TrajectoryRecord) {
        for i in 0..record.len() {
            let obs = Observables {
                mean_x: record.mean_x[i],
                mean_x2: record.mean_x2[i],
                var_x: record.var_x[i],
                pn: record.pn[i],
            };
            self.observe(i, &obs);
        }
    }

    pub fn merge(&mut self, other: &SummaryAccumulator) {
        for (a, b) in [
            (&mut self.mean_x2, &other.mean_x2),
            (&mut self.mean_x_sq, &other.mean_x_sq),
            (&mut self.var_x, &other.var_x),
            (&mut self.pn, &other.pn),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    pub fn n_trajectories(&self) -> u64 {
        self.mean_x2.first().map_or(0, |m| m.n)
    }

    pub fn finish(&self, meta: RunMeta) -> EnsembleSummary {
        let means = |v: &[Moments]| v.iter().map(|m| m.mean).collect();
        let errs = |v: &[Moments]| v.iter().map(|m| m.stderr()).collect();
        EnsembleSummary {
            meta,
            n_trajectories: self.n_trajectories(),
            t: self.times.clone(),
            mean_x2: means(&self.mean_x2),
            mean_x_sq: means(&self.mean_x_sq),
            mean_var: means(&self.var_x),
            mean_pn: means(&self.pn),
            stderr_mean_x2: errs(&self.mean_x2),
            stderr_mean_x_sq: errs(&self.mean_x_sq),
            stderr_mean_var: errs(&self.var_x),
            stderr_mean_pn: errs(&self.pn),
        }
    }
}

/// Ensemble means `M[·]` with their standard errors on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub meta: RunMeta,
    pub n_trajectories: u64,
    pub t: Vec<f64>,
    pub mean_x2: Vec<f64>,
    pub mean_x_sq: Vec<f64>,
    pub mean_var: Vec<f64>,
    pub mean_pn: Vec<f64>,
    pub stderr_mean_x2: Vec<f64>,
    pub stderr_mean_x_sq: Vec<f64>,
    pub stderr_mean_var: Vec<f64>,
    pub stderr_mean_pn: Vec<f64>,
}

impl EnsembleSummary {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Named column, as used by the result files.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        Some(match name {
            "t" => &self.t,
            "mean_x2" => &self.mean_x2,
            "mean_x_sq" => &self.mean_x_sq,
            "mean_var" => &self.mean_var,
            "mean_pn" => &self.mean_pn,
            "stderr_mean_x2" => &self.stderr_mean_x2,
            "stderr_mean_x_sq" => &self.stderr_mean_x_sq,
            "stderr_mean_var" => &self.stderr_mean_var,
            "stderr_mean_pn" => &self.stderr_mean_pn,
            _ => return None,
        })
    }
}

/// Output time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// `t = 0` followed by `t_min · 10^{k/points_per_decade}` up to `t_max`.
    Log { t_min: f64, points_per_decade: usize },
    /// `points` equally spaced intervals on `[0, t_max]`.
    Linear { points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Log { t_min: 1e-2, points_per_decade: 40 }
    }
}

impl GridSpec {
    /// Grid times on `[0, t_max]`. With `dt` given every time is rounded to
    /// a whole number of steps and duplicates are removed.
    pub fn times(&self, t_max: f64, dt: Option<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0];
        match *self {
            GridSpec::Log { t_min, points_per_decade } => {
                if !(t_min > 0.0) || points_per_decade == 0 {
                    return Err(Error::Config(
                        "log grid needs t_min > 0 and points_per_decade > 0".into(),
                    ));
                }
                let mut k = 0;
                loop {
                    let t = t_min * 10f64.powf(k as f64 / points_per_decade as f64);
                    if t > t_max * (1.0 - 1e-12) {
                        break;
                    }
                    out.push(t);
                    k += 1;
                }
                out.push(t_max);
            }
            GridSpec::Linear { points } => {
                if points == 0 {
                    return Err(Error::Config("linear grid needs at least one interval".into()));
                }
                out.extend((1..=points).map(|k| t_max * k as f64 / points as f64));
            }
        }
        if let Some(dt) = dt {
            for t in &mut out {
                *t = (*t / dt).round() * dt;
            }
        }
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `y = intercept + slope · x`.
    Linear,
    /// `y = amplitude · x^exponent`, fitted in log–log coordinates.
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    /// Intercept (linear) or amplitude (power law).
    pub a: f64,
    /// Slope (linear) or exponent (power law).
    pub b: f64,
    pub a_stderr: f64,
    pub b_stderr: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    /// Root-mean-square residual in the fitted coordinates.
    pub residual_norm: f64,
}

impl FitResult {
    pub fn slope(&self) -> f64 {
        self.b
    }

    pub fn exponent(&self) -> f64 {
        self.b
    }

    pub fn amplitude(&self) -> f64 {
        self.a
    }

    /// Machine-readable one-line summary.
    pub fn to_line(&self) -> String {
        format!(
            "model={} a={} b={} a_stderr={} b_stderr={} window_lo={} window_hi={} n={} rms_residual={}",
            match self.model {
                FitModel::Linear => "linear",
                FitModel::PowerLaw => "power_law",
            },
            self.a,
            self.b,
            self.a_stderr,
            self.b_stderr,
            self.window.0,
            self.window.1,
            self.n_points,
            self.residual_norm
        )
    }
}

struct LineFit {
    intercept: f64,
    slope: f64,
    intercept_se: f64,
    slope_se: f64,
    rms: f64,
}

fn least_squares_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = (n - 2.0).max(1.0);
    let s2 = ss_res / dof;
    LineFit {
        intercept,
        slope,
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        slope_se: (s2 / sxx).sqrt(),
        rms: (ss_res / n).sqrt(),
    }
}

fn in_window(x: f64, window: (f64, f64)) -> bool {
    let tol = 1e-9 * window.1.abs().max(1.0);
    x >= window.0 - tol && x <= window.1 + tol
}

/// Slope of `M⟨x̂²⟩(t) - M⟨x̂²⟩(0)` over `window`, with a free intercept.
pub fn fit_diffusion(summary: &EnsembleSummary, window: (f64, f64)) -> Result<FitResult> {
    let y0 = *summary
        .mean_x2
        .first()
        .ok_or_else(|| Error::Fit("empty summary".into()))?;
    let (x, y): (Vec<f64>, Vec<f64>) = summary
        .t
        .iter()
        .zip(&summary.mean_x2)
        .filter(|(t, _)| in_window(**t, window))
        .map(|(t, m)| (*t, m - y0))
        .unzip();
    if x.len() < 5 {
        return Err(Error::Fit(format!(
            "diffusion window [{}, {}] holds {} points, need at least 5",
            window.0,
            window.1,
            x.len()
        )));
    }
    let f = least_squares_line(&x, &y);
    Ok(FitResult {
        model: FitModel::Linear,
        a: f.intercept,
        b: f.slope,
        a_stderr: f.intercept_se,
        b_stderr: f.slope_se,
        window,
        n_points: x.len(),
        residual_norm: f.rms,
    })
}

/// Power law `y = a·x^b` over the points with `x` in `window`.
pub fn fit_power_law(x: &[f64], y: &[f64], window: (f64, f64)) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::Fit("x and y differ in length".into()));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&xi, &yi) in x.iter().zip(y) {
        if !in_window(xi, window) {
            continue;
        }
        if !(xi > 0.0 && yi > 0.0) {
            return Err(Error::Domain(format!(
                "power-law fit needs positive data, got ({xi}, {yi})"
            )));
        }
        lx.push(xi.ln());
        ly.push(yi.ln());
    }
    if lx.len() < 3 {
        return Err(Error::Fit(format!(
            "power-law window [{}, {}] holds {} points, need at least 3",
            window.0,
            window.1,
            lx.len()
        )));
    }
    let f = least_squares_line(&lx, &ly);
    if !f.slope.is_finite() {
        return Err(Error::Fit("degenerate power-law fit".into()));
    }
    let amplitude = f.intercept.exp();
    Ok(FitResult {
        model: FitModel::PowerLaw,
        a: amplitude,
        b: f.slope,
        a_stderr: amplitude * f.intercept_se,
        b_stderr: f.slope_se,
        window,
        n_points: lx.len(),
        residual_norm: f.rms,
    })
}

/// Earliest `γt` included in the asymptotic average.
pub const ASYMPTOTIC_GAMMA_T: f64 = 40.0;

/// Time average of `M[σ²]` over `γt ∈ [40, end]`.
pub fn asymptotic_variance(summary: &EnsembleSummary, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("asymptotic variance needs gamma > 0, got {gamma}")));
    }
    let start = ASYMPTOTIC_GAMMA_T / gamma;
    let (t, v): (Vec<f64>, Vec<f64>) = summary
        .t
        .iter()
        .zip(&summary.mean_var)
        .filter(|(t, _)| **t >= start * (1.0 - 1e-9))
        .map(|(t, v)| (*t, *v))
        .unzip();
    if t.len() < 2 {
        let end = summary.t.last().copied().unwrap_or(0.0);
        return Err(Error::Range(format!(
            "series ends at γt = {}; need at least two points beyond γt = {ASYMPTOTIC_GAMMA_T}",
            end * gamma
        )));
    }
    Ok(trapezoid_mean(&t, &v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceFit {
    /// Fitted decay time of the off-diagonal norm.
    pub tau: f64,
    pub tau_stderr: f64,
    /// RMS residual of `ln(norm)` about the fitted line.
    pub residual: f64,
    /// Set when the decay is visibly non-exponential.
    pub poor_fit: bool,
}

/// Residual of `ln(norm)` above which the decay is flagged non-exponential.
pub const COHERENCE_RESIDUAL_LIMIT: f64 = 1e-3;

/// Exponential decay time of an off-diagonal norm series.
pub fn coherence_time_estimate(times: &[f64], norms: &[f64]) -> Result<CoherenceFit> {
    let (t, ln): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(norms)
        .filter(|(_, n)| **n > 0.0)
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    if t.len() < 3 {
        return Err(Error::Fit("need at least three positive off-diagonal norms".into()));
    }
    let f = least_squares_line(&t, &ln);
    if !(f.slope < 0.0) {
        return Err(Error::Fit(format!("off-diagonal norm does not decay (rate {})", -f.slope)));
    }
    let tau = -1.0 / f.slope;
    let poor_fit = f.rms > COHERENCE_RESIDUAL_LIMIT;
    if poor_fit {
        log::warn!("off-diagonal decay is not exponential: rms log residual {:.3e}", f.rms);
    }
    Ok(CoherenceFit { tau, tau_stderr: tau * tau * f.slope_se, residual: f.rms, poor_fit })
}

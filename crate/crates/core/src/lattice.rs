//! State types shared by every solver: model parameters, wave functions,
//! density matrices and initial-state construction.
//!
//! All quantities are dimensionless. Time is measured in units of
//! `2ma²/ħ`, the noise strength `gamma` in units of `ħ³/(2ma²)`, and lattice
//! coordinates are signed integers.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time step of the full-scale stochastic integrations.
pub const DEFAULT_DT: f64 = 1e-4;

/// Largest tail weight a Gaussian packet may lose past the lattice edges.
pub const MAX_TAIL_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::Open => "open",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            other => Err(Error::Config(format!(
                "unknown boundary `{other}` (expected `open` or `periodic`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: f64,
    pub dt: f64,
    pub n_sites: usize,
    pub boundary: Boundary,
    pub seed: u64,
    pub t_max: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            dt: DEFAULT_DT,
            n_sites: 1000,
            boundary: Boundary::Open,
            seed: 0,
            t_max: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n_sites < 3 {
            return Err(Error::Config(format!(
                "need at least 3 lattice sites, got {}",
                self.n_sites
            )));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be > 0, got {}", self.t_max)));
        }
        Ok(())
    }

    /// Signed coordinate of array index 0. Coordinates are centred so that
    /// the site labelled 0 sits in the middle of the chain.
    pub fn origin_offset(&self) -> i64 {
        -((self.n_sites / 2) as i64)
    }
}

/// Amplitudes `c_n` of a single trajectory.
///
/// Array index `i` corresponds to lattice coordinate `i + origin_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub amps: Array1<Complex64>,
    pub origin_offset: i64,
}

impl WaveFunction {
    pub fn new(amps: Array1<Complex64>, origin_offset: i64) -> Self {
        Self { amps, origin_offset }
    }

    pub fn zeros(n_sites: usize, origin_offset: i64) -> Self {
        Self::new(Array1::zeros(n_sites), origin_offset)
    }

    /// Position eigenstate `|site⟩`.
    pub fn localized(n_sites: usize, origin_offset: i64, site: i64) -> Result<Self> {
        let mut psi = Self::zeros(n_sites, origin_offset);
        let idx = psi.index_of(site).ok_or_else(|| {
            Error::Config(format!("site {site} is not on the lattice"))
        })?;
        psi.amps[idx] = Complex64::new(1.0, 0.0);
        Ok(psi)
    }

    pub fn n_sites(&self) -> usize {
        self.amps.len()
    }

    pub fn coordinate(&self, index: usize) -> i64 {
        index as i64 + self.origin_offset
    }

    pub fn index_of(&self, coordinate: i64) -> Option<usize> {
        let idx = coordinate - self.origin_offset;
        (0..self.n_sites() as i64).contains(&idx).then_some(idx as usize)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn weights(&self) -> Array1<f64> {
        self.amps.mapv(|c| c.norm_sqr())
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Domain(format!("cannot normalise a state of norm {norm}")));
        }
        let inv = 1.0 / norm;
        self.amps.mapv_inplace(|c| c * inv);
        Ok(())
    }

    /// `|ψ⟩⟨ψ|` as a dense matrix.
    pub fn projector(&self) -> Array2<Complex64> {
        let n = self.n_sites();
        Array2::from_shape_fn((n, n), |(i, j)| self.amps[i] * self.amps[j].conj())
    }
}

/// Ensemble state `ρ_{n,m}` over the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: Array2<Complex64>,
    pub origin_offset: i64,
}

impl DensityMatrix {
    pub fn from_pure(psi: &WaveFunction) -> Self {
        Self { rho: psi.projector(), origin_offset: psi.origin_offset }
    }

    /// `𝟙/N`, the stationary state of the periodic chain.
    pub fn maximally_mixed(n_sites: usize, origin_offset: i64) -> Self {
        let mut rho = Array2::zeros((n_sites, n_sites));
        for i in 0..n_sites {
            rho[(i, i)] = Complex64::new(1.0 / n_sites as f64, 0.0);
        }
        Self { rho, origin_offset }
    }

    pub fn n_sites(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.diag().sum()
    }

    pub fn diagonal(&self) -> Array1<f64> {
        self.rho.diag().mapv(|c| c.re)
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n_sites();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Checks trace, Hermiticity and diagonal positivity.
    pub fn check(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).norm() > 1e-8 {
            return Err(Error::Domain(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::Domain(format!("not Hermitian (max deviation {herm:e})")));
        }
        for (i, d) in self.rho.diag().iter().enumerate() {
            if d.re < -1e-10 || d.im.abs() > 1e-10 {
                return Err(Error::Domain(format!("diagonal entry {i} is {d}")));
            }
        }
        Ok(())
    }

    /// Whether the smallest eigenvalue is at least `-tol`, decided by a
    /// Cholesky factorisation of `ρ + tol·𝟙`.
    pub fn is_positive_within(&self, tol: f64) -> bool {
        let n = self.n_sites();
        let mut l = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            let mut d = self.rho[(j, j)].re + tol;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            l[(j, j)] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = self.rho[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        true
    }
}

/// Initial condition for a run. All constructed states are real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Amplitudes `∝ exp(-(n-center)²/4σ²)`, so that `|c_n|²` has variance σ².
    GaussianPacket { variance: f64, center: i64 },
    DeltaSite { site: i64 },
    Uniform,
}

impl InitialState {
    pub fn gaussian(variance: f64) -> Self {
        InitialState::GaussianPacket { variance, center: 0 }
    }

    pub fn delta() -> Self {
        InitialState::DeltaSite { site: 0 }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::GaussianPacket { variance, center } => {
                write!(f, "gaussian(variance={variance},center={center})")
            }
            InitialState::DeltaSite { site } => write!(f, "delta(site={site})"),
            InitialState::Uniform => f.write_str("uniform"),
        }
    }
}

/// Accepts the short forms `delta[:site]`, `gaussian:variance[:center]` and
/// `uniform`, as well as the `Display` form echoed into result files.
impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse initial state `{s}`"));
        let s = s.trim();
        let (kind, args): (&str, Vec<&str>) = match s.split_once('(') {
            Some((k, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let vals = inner
                    .split(',')
                    .map(|kv| kv.split_once('=').map(|(_, v)| v.trim()).ok_or_else(bad))
                    .collect::<Result<_>>()?;
                (k, vals)
            }
            None => {
                let mut parts = s.split(':');
                let k = parts.next().unwrap_or_default();
                (k, parts.map(str::trim).collect())
            }
        };
        match (kind.trim(), args.len()) {
            ("uniform", 0) => Ok(InitialState::Uniform),
            ("delta", 0 | 1) => {
                let site = args.first().map(|v| v.parse()).transpose().map_err(|_| bad())?.unwrap_or(0);
                Ok(InitialState::DeltaSite { site })
            }
            ("gaussian", 1 | 2) => {
                let variance = args[0].parse().map_err(|_| bad())?;
                let center = args.get(1).map(|v| v.parse()).transpose().map_err(|_| bad())?.unwrap_or(0);
                Ok(InitialState::GaussianPacket { variance, center })
            }
            _ => Err(bad()),
        }
    }
}

pub fn make_initial(params: &ModelParams, spec: &InitialState) -> Result<WaveFunction> {
    params.validate()?;
    let n = params.n_sites;
    let offset = params.origin_offset();
    let lo = offset;
    let hi = offset + n as i64 - 1;
    match *spec {
        InitialState::DeltaSite { site } => WaveFunction::localized(n, offset, site),
        InitialState::Uniform => {
            let a = Complex64::new((1.0 / n as f64).sqrt(), 0.0);
            Ok(WaveFunction::new(Array1::from_elem(n, a), offset))
        }
        InitialState::GaussianPacket { variance, center } => {
            if !(variance >= 0.0 && variance.is_finite()) {
                return Err(Error::Config(format!("packet variance must be >= 0, got {variance}")));
            }
            if !(lo..=hi).contains(&center) {
                return Err(Error::Config(format!(
                    "packet centre {center} outside lattice [{lo}, {hi}]"
                )));
            }
            if variance == 0.0 {
                return WaveFunction::localized(n, offset, center);
            }
            let weight = |x: i64| (-((x - center) as f64).powi(2) / (2.0 * variance)).exp();
            // Weight over a range wide enough that the remainder underflows.
            let reach = (40.0 * variance.sqrt()).ceil() as i64 + n as i64;
            let total: f64 = (center - reach..=center + reach).map(weight).sum();
            let inside: f64 = (lo..=hi).map(weight).sum();
            let tail = 1.0 - inside / total;
            if tail > MAX_TAIL_WEIGHT {
                return Err(Error::Config(format!(
                    "gaussian packet of variance {variance} loses weight {tail:e} past the \
                     lattice edges (limit {MAX_TAIL_WEIGHT:e}); use more sites"
                )));
            }
            let amps = Array1::from_shape_fn(n, |i| {
                let x = i as i64 + offset;
                Complex64::new((-((x - center) as f64).powi(2) / (4.0 * variance)).exp(), 0.0)
            });
            let mut psi = WaveFunction::new(amps, offset);
            psi.normalize()?;
            Ok(psi)
        }
    }
}

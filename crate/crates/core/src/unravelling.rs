//! Single-trajectory integrators for the unravellings of the Lindblad
//! equation `ρ̇ = -i[H, ρ] + γ(diag[ρ] - ρ)`.
//!
//! * white-noise potential: `dc_n = i(c_{n+1}+c_{n-1}-2c_n)dt - i√γ c_n dW_n - (γ/2) c_n dt`
//! * quantum state diffusion, with `p_n = |c_n|²`:
//!   `dc_n = i(…)dt + γ(p_n - ½ - ½Σp_m²) c_n dt + √γ (dξ_n - Σ p_m dξ_m) c_n`
//! * quantum jumps: collapse onto `|n⟩` at rate `γ`, site drawn with
//!   probability `p_n`, free evolution in between.
//!
//! Stochastic updates are Euler–Maruyama steps followed by explicit
//! renormalisation. On open chains only an active window of sites is
//! integrated: it grows when weight above [`GROW_WEIGHT`] reaches its edge and
//! sheds sites whose weight has fallen below [`SHRINK_WEIGHT`].

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{self, PropagatorColumn};
use crate::lattice::{Boundary, ModelParams, WaveFunction};
use crate::noise::{NoiseKind, NoiseStream};

/// Largest tolerated `|‖ψ‖ - 1|` before renormalisation.
pub const MAX_NORM_DEVIATION: f64 = 1e-2;
/// Largest `γ·dt` accepted by the time-stepped jump unravelling.
pub const MAX_JUMP_PROBABILITY: f64 = 0.01;
/// Edge weight that makes the active window grow.
pub const GROW_WEIGHT: f64 = 1e-30;
/// Weight below which an edge site (and its inner neighbour) is dropped.
pub const SHRINK_WEIGHT: f64 = 1e-34;
/// Weight on the outermost sites of an open chain that aborts a trajectory.
pub const EDGE_WEIGHT_LIMIT: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseVariant {
    #[default]
    Complex,
    Real,
}

impl NoiseVariant {
    pub fn noise_kind(self) -> NoiseKind {
        match self {
            NoiseVariant::Complex => NoiseKind::ComplexWiener,
            NoiseVariant::Real => NoiseKind::RealWiener,
        }
    }
}

impl fmt::Display for NoiseVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseVariant::Complex => "complex",
            NoiseVariant::Real => "real",
        })
    }
}

impl FromStr for NoiseVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(NoiseVariant::Complex),
            "real" => Ok(NoiseVariant::Real),
            other => Err(Error::Config(format!(
                "unknown noise variant `{other}` (expected `complex` or `real`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnravellingKind {
    Wnp,
    Qsd(NoiseVariant),
    /// QSD with the Hamiltonian term dropped.
    QsdWideOpen(NoiseVariant),
    /// Literal time-stepped jump rule.
    Jump,
    /// Exponential waiting times with analytic free propagation in between.
    JumpEventDriven,
}

impl UnravellingKind {
    pub const TAGS: [&'static str; 5] = ["wnp", "qsd", "qsd-wide", "jump", "jump-event"];

    pub fn parse(tag: &str, noise: NoiseVariant) -> Result<Self> {
        Ok(match tag {
            "wnp" => UnravellingKind::Wnp,
            "qsd" => UnravellingKind::Qsd(noise),
            "qsd-wide" | "qsd_wide_open" => UnravellingKind::QsdWideOpen(noise),
            "jump" => UnravellingKind::Jump,
            "jump-event" | "jump_event_driven" => UnravellingKind::JumpEventDriven,
            other => {
                return Err(Error::Config(format!(
                    "unknown unravelling `{other}` (expected one of {})",
                    Self::TAGS.join(", ")
                )))
            }
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            UnravellingKind::Wnp => "wnp",
            UnravellingKind::Qsd(_) => "qsd",
            UnravellingKind::QsdWideOpen(_) => "qsd-wide",
            UnravellingKind::Jump => "jump",
            UnravellingKind::JumpEventDriven => "jump-event",
        }
    }

    pub fn noise_variant(self) -> NoiseVariant {
        match self {
            UnravellingKind::Qsd(v) | UnravellingKind::QsdWideOpen(v) => v,
            _ => NoiseVariant::Complex,
        }
    }

    /// Kind of Gaussian increments the trajectory's stream must carry.
    pub fn noise_kind(self) -> NoiseKind {
        match self {
            UnravellingKind::Wnp => NoiseKind::RealWiener,
            UnravellingKind::Qsd(v) | UnravellingKind::QsdWideOpen(v) => v.noise_kind(),
            // Jumps only consume uniform and exponential draws.
            UnravellingKind::Jump | UnravellingKind::JumpEventDriven => NoiseKind::RealWiener,
        }
    }

    pub fn has_kinetic_term(self) -> bool {
        !matches!(self, UnravellingKind::QsdWideOpen(_))
    }

    pub fn is_time_stepped(self) -> bool {
        !matches!(self, UnravellingKind::JumpEventDriven)
    }
}

impl fmt::Display for UnravellingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub site: i64,
}

/// Collapse history of a jump trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpLog {
    pub events: Vec<JumpEvent>,
}

impl JumpLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Waiting times, the first one measured from `t = 0`.
    pub fn waiting_times(&self) -> Vec<f64> {
        let mut last = 0.0;
        self.events
            .iter()
            .map(|e| {
                let w = e.time - last;
                last = e.time;
                w
            })
            .collect()
    }

    /// Distances between consecutive collapse sites. With `start` given, the
    /// first collapse is measured from that site as well.
    pub fn displacements(&self, start: Option<i64>) -> Vec<i64> {
        let mut prev = start;
        let mut out = Vec::with_capacity(self.events.len());
        for e in &self.events {
            if let Some(p) = prev {
                out.push(e.site - p);
            }
            prev = Some(e.site);
        }
        out
    }
}

/// Index of the site selected by `u ∈ [0, 1)` from the inverse CDF of the
/// weights in `amps`.
pub fn sample_site(amps: &[Complex64], u: f64) -> usize {
    let total: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, c) in amps.iter().enumerate() {
        let p = c.norm_sqr();
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if acc > target {
            return i;
        }
    }
    last_nonzero
}

/// Euler–Maruyama integrator for the time-stepped unravellings.
///
/// Owns scratch buffers and the active window, so one `Stepper` is created per
/// trajectory and reused for every step.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: UnravellingKind,
    gamma: f64,
    dt: f64,
    boundary: Boundary,
    time: f64,
    steps: u64,
    lo: usize,
    hi: usize,
    guard_edges: bool,
    kin: Vec<Complex64>,
    real_noise: Vec<f64>,
    complex_noise: Vec<Complex64>,
    last_norm_deviation: f64,
    jumps: JumpLog,
}

impl Stepper {
    pub fn new(kind: UnravellingKind, params: &ModelParams, psi: &WaveFunction) -> Result<Self> {
        params.validate()?;
        if !kind.is_time_stepped() {
            return Err(Error::Config(
                "the event-driven jump unravelling is not time-stepped; use jump_event_driven"
                    .into(),
            ));
        }
        if psi.n_sites() != params.n_sites {
            return Err(Error::Config(format!(
                "state has {} sites but the model has {}",
                psi.n_sites(),
                params.n_sites
            )));
        }
        if kind == UnravellingKind::Jump && params.gamma * params.dt > MAX_JUMP_PROBABILITY {
            return Err(Error::Config(format!(
                "jump probability per step γ·dt = {} exceeds {MAX_JUMP_PROBABILITY}",
                params.gamma * params.dt
            )));
        }
        let n = psi.n_sites();
        let (lo, hi, guard_edges) = match params.boundary {
            Boundary::Periodic => (0, n, false),
            Boundary::Open => {
                let (lo, hi) = hamiltonian::support(psi).ok_or_else(|| {
                    Error::Domain("cannot integrate an empty wave function".into())
                })?;
                let edge = psi.amps[0].norm_sqr().max(psi.amps[n - 1].norm_sqr());
                (lo, hi + 1, edge < EDGE_WEIGHT_LIMIT)
            }
        };
        Ok(Self {
            kind,
            gamma: params.gamma,
            dt: params.dt,
            boundary: params.boundary,
            time: 0.0,
            steps: 0,
            lo,
            hi,
            guard_edges,
            kin: vec![ZERO; n],
            real_noise: vec![0.0; n],
            complex_noise: vec![ZERO; n],
            last_norm_deviation: 0.0,
            jumps: JumpLog::default(),
        })
    }

    pub fn kind(&self) -> UnravellingKind {
        self.kind
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `‖ψ‖ - 1` of the most recent step, before renormalisation.
    pub fn last_norm_deviation(&self) -> f64 {
        self.last_norm_deviation
    }

    /// Active index range `[lo, hi)`.
    pub fn window(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub fn jump_log(&self) -> &JumpLog {
        &self.jumps
    }

    pub fn into_jump_log(self) -> JumpLog {
        self.jumps
    }

    pub fn step(&mut self, psi: &mut WaveFunction, stream: &mut NoiseStream) -> Result<()> {
        if self.steps == 0 && self.boundary == Boundary::Open {
            // Tails below the support threshold are dropped, not frozen.
            let (lo, hi) = (self.lo, self.hi);
            for (i, c) in psi.amps.iter_mut().enumerate() {
                if i < lo || i >= hi {
                    *c = ZERO;
                }
            }
        }
        let kinetic = self.kind.has_kinetic_term();
        if kinetic && self.boundary == Boundary::Open {
            self.adjust_window(psi)?;
        }
        let amps = psi.amps.as_slice_mut().expect("contiguous amplitudes");
        let (lo, hi) = (self.lo, self.hi);
        let window = &mut amps[lo..hi];
        let kin = &mut self.kin[lo..hi];
        if kinetic {
            hamiltonian::kinetic_into(window, self.boundary, kin);
        }
        match self.kind {
            UnravellingKind::Wnp => {
                let noise = &mut self.real_noise[lo..hi];
                stream.fill_real(noise, self.dt);
                wnp_update(window, kin, noise, self.gamma, self.dt);
            }
            UnravellingKind::Qsd(v) => self.qsd_update::<true>(v, lo, hi, window, stream),
            UnravellingKind::QsdWideOpen(v) => self.qsd_update::<false>(v, lo, hi, window, stream),
            UnravellingKind::Jump => {
                if stream.uniform() < self.gamma * self.dt {
                    let u = stream.uniform();
                    let idx = lo + sample_site(window, u);
                    window.fill(ZERO);
                    amps[idx] = Complex64::new(1.0, 0.0);
                    self.time = (self.steps + 1) as f64 * self.dt;
                    self.steps += 1;
                    self.jumps.events.push(JumpEvent { time: self.time, site: psi.coordinate(idx) });
                    self.last_norm_deviation = 0.0;
                    if self.boundary == Boundary::Open {
                        self.lo = idx;
                        self.hi = idx + 1;
                    }
                    return Ok(());
                }
                for (c, k) in window.iter_mut().zip(kin.iter()) {
                    *c += k * self.dt;
                }
            }
            UnravellingKind::JumpEventDriven => unreachable!("rejected in Stepper::new"),
        }
        self.steps += 1;
        self.time = self.steps as f64 * self.dt;
        self.renormalize(psi)?;
        if !kinetic && self.boundary == Boundary::Open {
            self.shrink_window(psi);
        }
        Ok(())
    }

    fn qsd_update<const KINETIC: bool>(
        &mut self,
        variant: NoiseVariant,
        lo: usize,
        hi: usize,
        window: &mut [Complex64],
        stream: &mut NoiseStream,
    ) {
        let gamma = self.gamma;
        let dt = self.dt;
        let sqrt_gamma = gamma.sqrt();
        let noise = &mut self.complex_noise[lo..hi];
        match variant {
            NoiseVariant::Complex => stream.fill_complex(noise, dt),
            NoiseVariant::Real => {
                let real = &mut self.real_noise[lo..hi];
                stream.fill_real(real, dt);
                for (x, r) in noise.iter_mut().zip(real.iter()) {
                    *x = Complex64::new(*r, 0.0);
                }
            }
        }
        let mut sum_p2 = 0.0;
        let mut mean_xi = ZERO;
        for (c, xi) in window.iter().zip(noise.iter()) {
            let p = c.norm_sqr();
            sum_p2 += p * p;
            mean_xi += xi * p;
        }
        let kin = &self.kin[lo..hi];
        for ((c, xi), k) in window.iter_mut().zip(noise.iter()).zip(kin.iter()) {
            let p = c.norm_sqr();
            let factor = gamma * (p - 0.5 - 0.5 * sum_p2) * dt + sqrt_gamma * (xi - mean_xi);
            let mut dc = *c * factor;
            if KINETIC {
                dc += k * dt;
            }
            *c += dc;
        }
    }

    fn renormalize(&mut self, psi: &mut WaveFunction) -> Result<()> {
        let window = &mut psi.amps.as_slice_mut().unwrap()[self.lo..self.hi];
        let norm = window.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        self.last_norm_deviation = norm - 1.0;
        if !((norm - 1.0).abs() <= MAX_NORM_DEVIATION) {
            return Err(Error::Instability { time: self.time, norm });
        }
        let inv = 1.0 / norm;
        for c in window {
            *c *= inv;
        }
        Ok(())
    }

    fn adjust_window(&mut self, psi: &mut WaveFunction) -> Result<()> {
        let n = psi.n_sites();
        let amps = psi.amps.as_slice_mut().unwrap();
        if amps[self.lo].norm_sqr() > GROW_WEIGHT {
            if self.lo == 0 {
                if self.guard_edges && amps[0].norm_sqr() > EDGE_WEIGHT_LIMIT {
                    return Err(Error::Boundary { time: self.time, site: psi.origin_offset });
                }
            } else {
                self.lo -= 1;
            }
        }
        if amps[self.hi - 1].norm_sqr() > GROW_WEIGHT {
            if self.hi == n {
                if self.guard_edges && amps[n - 1].norm_sqr() > EDGE_WEIGHT_LIMIT {
                    return Err(Error::Boundary {
                        time: self.time,
                        site: psi.origin_offset + n as i64 - 1,
                    });
                }
            } else {
                self.hi += 1;
            }
        }
        self.shrink_window(psi);
        Ok(())
    }

    fn shrink_window(&mut self, psi: &mut WaveFunction) {
        let amps = psi.amps.as_slice_mut().unwrap();
        while self.hi - self.lo > 2
            && amps[self.lo].norm_sqr() < SHRINK_WEIGHT
            && amps[self.lo + 1].norm_sqr() < SHRINK_WEIGHT
        {
            amps[self.lo] = ZERO;
            self.lo += 1;
        }
        while self.hi - self.lo > 2
            && amps[self.hi - 1].norm_sqr() < SHRINK_WEIGHT
            && amps[self.hi - 2].norm_sqr() < SHRINK_WEIGHT
        {
            amps[self.hi - 1] = ZERO;
            self.hi -= 1;
        }
    }
}

fn wnp_update(window: &mut [Complex64], kin: &[Complex64], dw: &[f64], gamma: f64, dt: f64) {
    let damp = 1.0 - 0.5 * gamma * dt;
    let sqrt_gamma = gamma.sqrt();
    for ((c, k), w) in window.iter_mut().zip(kin).zip(dw) {
        let factor = Complex64::new(damp, -sqrt_gamma * w);
        *c = *c * factor + k * dt;
    }
}

fn single_step(
    kind: UnravellingKind,
    psi: &mut WaveFunction,
    params: &ModelParams,
    stream: &mut NoiseStream,
) -> Result<Stepper> {
    let mut stepper = Stepper::new(kind, params, psi)?;
    stepper.step(psi, stream)?;
    Ok(stepper)
}

/// One white-noise-potential step over the whole lattice.
pub fn wnp_step(psi: &mut WaveFunction, params: &ModelParams, stream: &mut NoiseStream) -> Result<()> {
    single_step(UnravellingKind::Wnp, psi, params, stream).map(|_| ())
}

/// One quantum-state-diffusion step over the whole lattice.
pub fn qsd_step(
    psi: &mut WaveFunction,
    params: &ModelParams,
    stream: &mut NoiseStream,
    variant: NoiseVariant,
) -> Result<()> {
    single_step(UnravellingKind::Qsd(variant), psi, params, stream).map(|_| ())
}

/// One wide-open QSD step; the noise variant follows the stream's kind.
pub fn qsd_wide_open_step(
    psi: &mut WaveFunction,
    params: &ModelParams,
    stream: &mut NoiseStream,
) -> Result<()> {
    let variant = match stream.kind() {
        NoiseKind::ComplexWiener => NoiseVariant::Complex,
        NoiseKind::RealWiener => NoiseVariant::Real,
    };
    single_step(UnravellingKind::QsdWideOpen(variant), psi, params, stream).map(|_| ())
}

/// One step of the time-stepped jump rule; a collapse is returned if one
/// happened.
pub fn jump_step(
    psi: &mut WaveFunction,
    params: &ModelParams,
    stream: &mut NoiseStream,
) -> Result<Option<JumpEvent>> {
    let stepper = single_step(UnravellingKind::Jump, psi, params, stream)?;
    Ok(stepper.jumps.events.first().copied())
}

/// Collapses `psi` onto a site drawn from its weights with the uniform `u`.
pub fn collapse(psi: &mut WaveFunction, u: f64) -> i64 {
    let amps = psi.amps.as_slice_mut().unwrap();
    let idx = sample_site(amps, u);
    amps.fill(ZERO);
    amps[idx] = Complex64::new(1.0, 0.0);
    psi.coordinate(idx)
}

/// Integrates one trajectory and hands the state to `observe` at each grid
/// time. Grid times of time-stepped kinds are rounded to whole steps.
pub fn drive<F>(
    kind: UnravellingKind,
    params: &ModelParams,
    mut psi: WaveFunction,
    stream: &mut NoiseStream,
    grid: &[f64],
    mut observe: F,
) -> Result<JumpLog>
where
    F: FnMut(usize, f64, &WaveFunction),
{
    if !kind.is_time_stepped() {
        return drive_event_driven(params, psi, stream, grid, observe);
    }
    let mut stepper = Stepper::new(kind, params, &psi)?;
    for (i, &t) in grid.iter().enumerate() {
        let target = (t / params.dt).round() as u64;
        while stepper.steps() < target {
            stepper.step(&mut psi, stream)?;
        }
        observe(i, stepper.time(), &psi);
    }
    Ok(stepper.into_jump_log())
}

fn drive_event_driven<F>(
    params: &ModelParams,
    psi: WaveFunction,
    stream: &mut NoiseStream,
    grid: &[f64],
    mut observe: F,
) -> Result<JumpLog>
where
    F: FnMut(usize, f64, &WaveFunction),
{
    params.validate()?;
    let mut log = JumpLog::default();
    let mut anchor = psi;
    let mut anchor_time = 0.0;
    let mut next_jump = stream.exponential(params.gamma);
    for (i, &t) in grid.iter().enumerate() {
        while next_jump <= t {
            let mut state =
                hamiltonian::free_evolve(&anchor, next_jump - anchor_time, params.boundary)
                    .map_err(|e| retime(e, next_jump))?;
            let site = collapse(&mut state, stream.uniform());
            log.events.push(JumpEvent { time: next_jump, site });
            anchor = state;
            anchor_time = next_jump;
            next_jump += stream.exponential(params.gamma);
        }
        let state = hamiltonian::free_evolve(&anchor, t - anchor_time, params.boundary)
            .map_err(|e| retime(e, t))?;
        observe(i, t, &state);
    }
    Ok(log)
}

fn retime(err: Error, time: f64) -> Error {
    match err {
        Error::Boundary { site, .. } => Error::Boundary { time, site },
        other => other,
    }
}

/// Event-driven jump trajectory recorded on `grid`.
pub fn jump_event_driven(
    psi: WaveFunction,
    params: &ModelParams,
    stream: &mut NoiseStream,
    grid: &[f64],
) -> Result<(crate::observables::TrajectoryRecord, JumpLog)> {
    let mut record = crate::observables::TrajectoryRecord::with_capacity(grid.len());
    let log = drive_event_driven(params, psi, stream, grid, |_, t, state| {
        record.push(t, crate::observables::measure(state));
    })?;
    Ok((record, log))
}

/// Free evolution for `tau` followed by a collapse drawn with `u`.
pub fn free_flight_and_collapse(
    psi: &WaveFunction,
    tau: f64,
    u: f64,
    boundary: Boundary,
) -> Result<(WaveFunction, i64)> {
    let column = PropagatorColumn::new(tau)?;
    let mut state = hamiltonian::free_evolve_with(psi, &column, boundary)?;
    let site = collapse(&mut state, u);
    Ok((state, site))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_initial, InitialState};

    fn params(gamma: f64, n: usize, boundary: Boundary) -> ModelParams {
        ModelParams { gamma, n_sites: n, boundary, dt: 1e-4, seed: 3, t_max: 1.0 }
    }

    #[test]
    fn zero_noise_reduces_to_schrodinger_euler() {
        let p = params(0.0, 64, Boundary::Periodic);
        let psi0 = make_initial(&p, &InitialState::gaussian(4.0)).unwrap();
        let kin = hamiltonian::apply_kinetic(&psi0, Boundary::Periodic);
        let mut expected = psi0.clone();
        expected.amps = &psi0.amps + &kin.mapv(|k| k * p.dt);
        expected.normalize().unwrap();

        let mut a = psi0.clone();
        wnp_step(&mut a, &p, &mut NoiseStream::new(1, 0, NoiseKind::RealWiener)).unwrap();
        let mut b = psi0.clone();
        qsd_step(&mut b, &p, &mut NoiseStream::new(1, 0, NoiseKind::ComplexWiener), NoiseVariant::Complex)
            .unwrap();
        for got in [a, b] {
            let diff = (&got.amps - &expected.amps).iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(diff < 1e-14, "{diff}");
        }
    }

    #[test]
    fn position_eigenstate_is_wide_open_fixed_point() {
        for variant in [NoiseVariant::Complex, NoiseVariant::Real] {
            let p = params(16.0, 21, Boundary::Open);
            let psi0 = WaveFunction::localized(21, -10, 2).unwrap();
            let mut psi = psi0.clone();
            let mut stream = NoiseStream::new(9, 0, variant.noise_kind());
            for _ in 0..100 {
                qsd_wide_open_step(&mut psi, &p, &mut stream).unwrap();
            }
            assert_eq!(psi, psi0);
        }
    }

    #[test]
    fn wnp_without_kinetic_term_keeps_mean_weights() {
        // With the hopping switched off each site only picks up a random
        // phase and the deterministic -γ/2 damping; averaged over the noise
        // the Euler update multiplies |c_n|² by exactly 1 + γ²dt²/4.
        let (gamma, dt) = (4.0, 1e-3);
        let c = Complex64::new(0.6, 0.2);
        let mut stream = NoiseStream::new(2, 0, NoiseKind::RealWiener);
        let samples = 100_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut kin = [ZERO];
        for _ in 0..samples {
            let mut amp = [c];
            let dw = stream.draw_real_increments(1, dt);
            kin[0] = ZERO;
            wnp_update(&mut amp, &kin, dw.as_slice().unwrap(), gamma, dt);
            let r = amp[0].norm_sqr() / c.norm_sqr();
            acc += r;
            acc2 += r * r;
        }
        let mean = acc / samples as f64;
        let se = ((acc2 / samples as f64 - mean * mean) / samples as f64).sqrt();
        let expect = 1.0 + gamma * gamma * dt * dt / 4.0;
        assert!((mean - expect).abs() < 4.0 * se, "mean ratio {mean} ± {se}");
    }

    #[test]
    fn norm_is_restored_every_step() {
        let p = params(8.0, 201, Boundary::Open);
        let psi0 = make_initial(&p, &InitialState::gaussian(4.0)).unwrap();
        for kind in [
            UnravellingKind::Wnp,
            UnravellingKind::Qsd(NoiseVariant::Complex),
            UnravellingKind::Qsd(NoiseVariant::Real),
            UnravellingKind::QsdWideOpen(NoiseVariant::Complex),
            UnravellingKind::Jump,
        ] {
            let mut psi = psi0.clone();
            let mut stream = NoiseStream::new(4, 0, kind.noise_kind());
            let mut stepper = Stepper::new(kind, &p, &psi).unwrap();
            for _ in 0..2000 {
                stepper.step(&mut psi, &mut stream).unwrap();
                assert!((psi.norm_sqr() - 1.0).abs() < 1e-12, "{kind}");
            }
        }
    }

    fn mean_accumulated_drift(kind: UnravellingKind, dt: f64, trajectories: u64) -> f64 {
        let p = ModelParams { gamma: 8.0, dt, n_sites: 256, boundary: Boundary::Periodic, seed: 0, t_max: 0.5 };
        let psi0 = make_initial(&p, &InitialState::Uniform).unwrap();
        let steps = (p.t_max / dt).round() as u64;
        let mut total = 0.0;
        for k in 0..trajectories {
            let mut psi = psi0.clone();
            let mut stream = NoiseStream::new(17, k, kind.noise_kind());
            let mut stepper = Stepper::new(kind, &p, &psi).unwrap();
            for _ in 0..steps {
                stepper.step(&mut psi, &mut stream).unwrap();
                let d = stepper.last_norm_deviation();
                total += d * (2.0 + d);
            }
        }
        total / trajectories as f64
    }

    #[test]
    fn norm_drift_before_renormalisation_is_first_order_in_dt() {
        let kind = UnravellingKind::Wnp;
        // The mean drift per unit time is O(dt); its sampling noise shrinks
        // with lattice size and trajectory count (about 6% on the ratio here).
        let coarse = mean_accumulated_drift(kind, 1e-3, 4000);
        let fine = mean_accumulated_drift(kind, 5e-4, 4000);
        let ratio = coarse / fine;
        assert!((1.6..2.4).contains(&ratio), "drift {coarse} vs {fine}, ratio {ratio}");
    }

    #[test]
    fn instability_is_reported() {
        let p = ModelParams { gamma: 50.0, dt: 0.05, n_sites: 32, boundary: Boundary::Periodic, seed: 0, t_max: 1.0 };
        let mut psi = make_initial(&p, &InitialState::Uniform).unwrap();
        let mut stream = NoiseStream::new(0, 0, NoiseKind::RealWiener);
        let mut stepper = Stepper::new(UnravellingKind::Wnp, &p, &psi).unwrap();
        let err = (0..100)
            .find_map(|_| stepper.step(&mut psi, &mut stream).err())
            .expect("coarse step must blow up");
        assert!(matches!(err, Error::Instability { .. }));
    }

    #[test]
    fn jump_rejects_large_probability_per_step() {
        let p = ModelParams { gamma: 200.0, ..params(1.0, 32, Boundary::Periodic) };
        let psi = make_initial(&p, &InitialState::Uniform).unwrap();
        assert!(matches!(Stepper::new(UnravellingKind::Jump, &p, &psi), Err(Error::Config(_))));
    }

    #[test]
    fn collapse_probabilities_follow_weights() {
        let amps = [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 0.5f64.sqrt()),
            Complex64::new(0.5, 0.0),
        ];
        // Cumulative weights 0.25, 0.75, 1.0.
        assert_eq!(sample_site(&amps, 0.0), 0);
        assert_eq!(sample_site(&amps, 0.2499), 0);
        assert_eq!(sample_site(&amps, 0.25), 1);
        assert_eq!(sample_site(&amps, 0.7499), 1);
        assert_eq!(sample_site(&amps, 0.9999), 2);
    }

    #[test]
    fn jump_step_collapse_rate() {
        // Per step the total collapse probability is γ·dt.
        let p = ModelParams { gamma: 20.0, dt: 5e-4, ..params(1.0, 16, Boundary::Periodic) };
        let psi0 = make_initial(&p, &InitialState::Uniform).unwrap();
        let mut stream = NoiseStream::new(8, 0, NoiseKind::RealWiener);
        let trials = 200_000;
        let mut hits = 0;
        for _ in 0..trials {
            let mut psi = psi0.clone();
            if jump_step(&mut psi, &p, &mut stream).unwrap().is_some() {
                hits += 1;
                assert!((psi.norm_sqr() - 1.0).abs() < 1e-15);
            }
        }
        let rate = p.gamma * p.dt;
        let se = (rate * (1.0 - rate) / trials as f64).sqrt();
        let observed = hits as f64 / trials as f64;
        assert!((observed - rate).abs() < 4.0 * se, "{observed} vs {rate}");
    }

    #[test]
    fn zero_waiting_time_only_collapses() {
        let p = params(2.0, 101, Boundary::Open);
        let psi = make_initial(&p, &InitialState::gaussian(4.0)).unwrap();
        let (after, site) = free_flight_and_collapse(&psi, 0.0, 0.5, Boundary::Open).unwrap();
        // u = 0.5 selects the median site of the symmetric packet.
        assert_eq!(site, 0);
        assert_eq!(after, WaveFunction::localized(101, psi.origin_offset, 0).unwrap());
    }

    #[test]
    fn event_driven_without_noise_is_free_evolution() {
        let p = params(0.0, 201, Boundary::Open);
        let psi = make_initial(&p, &InitialState::delta()).unwrap();
        let grid = [0.0, 1.0, 2.0, 5.0];
        let mut stream = NoiseStream::new(0, 0, NoiseKind::RealWiener);
        let (record, log) = jump_event_driven(psi, &p, &mut stream, &grid).unwrap();
        assert!(log.is_empty());
        for (t, v) in grid.iter().zip(&record.var_x) {
            assert!((v - 2.0 * t * t).abs() <= 1e-9 * (1.0 + 2.0 * t * t));
        }
    }

    #[test]
    fn active_window_matches_full_lattice() {
        // Without noise the update is deterministic, so a run restricted to
        // the active window must agree with one over every site.
        let p = params(0.0, 1001, Boundary::Open);
        let psi0 = make_initial(&p, &InitialState::gaussian(4.0)).unwrap();
        let run = |full: bool| {
            let mut psi = psi0.clone();
            let mut stream = NoiseStream::new(5, 0, NoiseKind::RealWiener);
            let mut stepper = Stepper::new(UnravellingKind::Wnp, &p, &psi).unwrap();
            if full {
                stepper.lo = 0;
                stepper.hi = p.n_sites;
            }
            for _ in 0..20_000 {
                stepper.step(&mut psi, &mut stream).unwrap();
            }
            (psi, stepper.window())
        };
        let (windowed, (lo, hi)) = run(false);
        let (full, _) = run(true);
        assert!(hi - lo < 300, "window {lo}..{hi}");
        let diff = (&windowed.amps - &full.amps).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-13, "max amplitude difference {diff}");
    }

    #[test]
    fn active_window_stays_local_under_localizing_noise() {
        let p = params(5.0, 1001, Boundary::Open);
        let mut psi = make_initial(&p, &InitialState::gaussian(4.0)).unwrap();
        let mut stream = NoiseStream::new(5, 0, NoiseKind::ComplexWiener);
        let mut stepper = Stepper::new(UnravellingKind::Qsd(NoiseVariant::Complex), &p, &psi).unwrap();
        for _ in 0..3000 {
            stepper.step(&mut psi, &mut stream).unwrap();
        }
        let (lo, hi) = stepper.window();
        assert!(hi - lo < 200, "window {lo}..{hi}");
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(psi.amps.iter().enumerate().all(|(i, c)| (lo..hi).contains(&i) || *c == ZERO));
    }
}

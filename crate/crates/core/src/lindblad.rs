//! Direct integration of the master equation
//! `ρ̇ = -i[H, ρ] + γ(diag[ρ] - ρ)` on small dense lattices, together with
//! the large-γ reductions: adiabatic off-diagonals and the classical
//! diffusion equation for the weights.

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{make_initial, Boundary, DensityMatrix, InitialState, ModelParams};
use crate::observables::EnsembleSummary;
use crate::results::RunMeta;

/// Default step of the fourth-order integrator.
pub const LINDBLAD_DT: f64 = 1e-3;
/// Largest lattice accepted for dense integration.
pub const MAX_DENSE_SITES: usize = 256;
/// Positivity is only checked up to this size (the check is cubic in N).
pub const POSITIVITY_SITES: usize = 64;
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Steps between positivity checks.
pub const POSITIVITY_INTERVAL: u64 = 10;
/// Largest symmetrisation or trace correction tolerated in one step.
pub const MAX_CORRECTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladState {
    pub rho: DensityMatrix,
    pub t: f64,
}

impl LindbladState {
    pub fn new(rho: DensityMatrix) -> Self {
        Self { rho, t: 0.0 }
    }

    pub fn from_initial(params: &ModelParams, initial: &InitialState) -> Result<Self> {
        let psi = make_initial(params, initial)?;
        Ok(Self::new(DensityMatrix::from_pure(&psi)))
    }

    pub fn weights(&self) -> WeightVector {
        WeightVector { p: self.rho.diagonal(), origin_offset: self.rho.origin_offset }
    }
}

#[inline]
fn neighbour(i: usize, step: isize, n: usize, boundary: Boundary) -> Option<usize> {
    let j = i as isize + step;
    if j >= 0 && (j as usize) < n {
        Some(j as usize)
    } else if boundary == Boundary::Periodic {
        Some(j.rem_euclid(n as isize) as usize)
    } else {
        None
    }
}

/// Right-hand side of the master equation, elementwise:
/// `ρ̇_{nm} = i(ρ_{n+1,m} + ρ_{n-1,m} - ρ_{n,m+1} - ρ_{n,m-1}) + γ(δ_{nm} - 1)ρ_{nm}`.
pub fn lindblad_rhs(rho: &Array2<Complex64>, gamma: f64, boundary: Boundary, out: &mut Array2<Complex64>) {
    let n = rho.nrows();
    let i = Complex64::i();
    for r in 0..n {
        let up = neighbour(r, 1, n, boundary);
        let down = neighbour(r, -1, n, boundary);
        for c in 0..n {
            let mut hop = Complex64::new(0.0, 0.0);
            if let Some(u) = up {
                hop += rho[(u, c)];
            }
            if let Some(d) = down {
                hop += rho[(d, c)];
            }
            if let Some(u) = neighbour(c, 1, n, boundary) {
                hop -= rho[(r, u)];
            }
            if let Some(d) = neighbour(c, -1, n, boundary) {
                hop -= rho[(r, d)];
            }
            let damp = if r == c { 0.0 } else { -gamma };
            out[(r, c)] = i * hop + damp * rho[(r, c)];
        }
    }
}

/// Classical fourth-order Runge–Kutta integrator with symmetrisation and
/// trace renormalisation after every step.
#[derive(Debug, Clone)]
pub struct LindbladIntegrator {
    gamma: f64,
    boundary: Boundary,
    dt: f64,
    steps: u64,
    max_correction: f64,
    k: [Array2<Complex64>; 4],
    stage: Array2<Complex64>,
}

impl LindbladIntegrator {
    pub fn new(gamma: f64, boundary: Boundary, n_sites: usize, dt: f64) -> Result<Self> {
        if n_sites > MAX_DENSE_SITES {
            return Err(Error::Config(format!(
                "dense master-equation integration is limited to {MAX_DENSE_SITES} sites, got {n_sites}"
            )));
        }
        if !(gamma >= 0.0) || !(dt > 0.0) {
            return Err(Error::Config(format!("need gamma >= 0 and dt > 0, got {gamma}, {dt}")));
        }
        let z = Array2::zeros((n_sites, n_sites));
        Ok(Self {
            gamma,
            boundary,
            dt,
            steps: 0,
            max_correction: 0.0,
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            stage: z,
        })
    }

    pub fn for_params(params: &ModelParams) -> Result<Self> {
        Self::new(params.gamma, params.boundary, params.n_sites, LINDBLAD_DT)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Largest symmetrisation or trace correction applied so far.
    pub fn max_correction(&self) -> f64 {
        self.max_correction
    }

    /// One step of size `h`.
    pub fn step_by(&mut self, state: &mut LindbladState, h: f64) -> Result<()> {
        let (g, b) = (self.gamma, self.boundary);
        let rho = &mut state.rho.rho;
        lindblad_rhs(rho, g, b, &mut self.k[0]);
        Zip::from(&mut self.stage).and(&*rho).and(&self.k[0]).for_each(|s, r, k| *s = r + 0.5 * h * k);
        lindblad_rhs(&self.stage, g, b, &mut self.k[1]);
        Zip::from(&mut self.stage).and(&*rho).and(&self.k[1]).for_each(|s, r, k| *s = r + 0.5 * h * k);
        lindblad_rhs(&self.stage, g, b, &mut self.k[2]);
        Zip::from(&mut self.stage).and(&*rho).and(&self.k[2]).for_each(|s, r, k| *s = r + h * k);
        lindblad_rhs(&self.stage, g, b, &mut self.k[3]);
        let [k1, k2, k3, k4] = &self.k;
        Zip::from(&mut *rho)
            .and(k1)
            .and(k2)
            .and(k3)
            .and(k4)
            .for_each(|r, a, b, c, d| *r += (h / 6.0) * (a + 2.0 * b + 2.0 * c + d));
        state.t += h;
        self.steps += 1;

        let herm = symmetrize(rho);
        let tr: f64 = rho.diag().iter().map(|c| c.re).sum();
        rho.mapv_inplace(|c| c / tr);
        let correction = herm.max((tr - 1.0).abs());
        self.max_correction = self.max_correction.max(correction);
        if correction > MAX_CORRECTION {
            return Err(Error::Integration {
                time: state.t,
                reason: format!("invariant correction {correction:e} exceeds {MAX_CORRECTION:e}"),
            });
        }
        let n = rho.nrows();
        if n <= POSITIVITY_SITES && self.steps % POSITIVITY_INTERVAL == 0 {
            check_positive(state)?;
        }
        Ok(())
    }

    pub fn step(&mut self, state: &mut LindbladState) -> Result<()> {
        self.step_by(state, self.dt)
    }

    /// Advances to `t_end` in equal steps no longer than `dt`.
    pub fn evolve_to(&mut self, state: &mut LindbladState, t_end: f64) -> Result<()> {
        let span = t_end - state.t;
        if span <= 0.0 {
            return Ok(());
        }
        let n = (span / self.dt - 1e-9).ceil().max(1.0) as u64;
        let h = span / n as f64;
        for _ in 0..n {
            self.step_by(state, h)?;
        }
        state.t = t_end;
        if state.rho.n_sites() <= POSITIVITY_SITES {
            check_positive(state)?;
        }
        Ok(())
    }
}

fn check_positive(state: &LindbladState) -> Result<()> {
    if state.rho.is_positive_within(POSITIVITY_TOL) {
        Ok(())
    } else {
        Err(Error::Integration {
            time: state.t,
            reason: format!("density matrix has an eigenvalue below -{POSITIVITY_TOL:e}"),
        })
    }
}

/// `ρ ← (ρ + ρ†)/2`, returning the largest entry changed.
fn symmetrize(rho: &mut Array2<Complex64>) -> f64 {
    let n = rho.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let a = rho[(i, j)];
            let b = rho[(j, i)].conj();
            let m = 0.5 * (a + b);
            worst = worst.max((a - m).norm());
            rho[(i, j)] = m;
            rho[(j, i)] = m.conj();
        }
    }
    worst
}

/// One integrator step of size `dt`.
pub fn lindblad_step(state: &mut LindbladState, params: &ModelParams, dt: f64) -> Result<()> {
    LindbladIntegrator::new(params.gamma, params.boundary, state.rho.n_sites(), dt)?.step(state)
}

/// Largest elementwise difference between runs to `t_end` with steps `dt`
/// and `dt/2`.
pub fn step_halving_error(
    state: &LindbladState,
    gamma: f64,
    boundary: Boundary,
    dt: f64,
    t_end: f64,
) -> Result<f64> {
    let n = state.rho.n_sites();
    let mut coarse = state.clone();
    LindbladIntegrator::new(gamma, boundary, n, dt)?.evolve_to(&mut coarse, t_end)?;
    let mut fine = state.clone();
    LindbladIntegrator::new(gamma, boundary, n, dt / 2.0)?.evolve_to(&mut fine, t_end)?;
    Ok(Zip::from(&coarse.rho.rho)
        .and(&fine.rho.rho)
        .fold(0.0f64, |m, a, b| m.max((a - b).norm())))
}

/// `max_n |ρ_{n+k,n}| / max_n ρ_{n,n}` for each `k`, wrapping on periodic chains.
pub fn offdiagonal_profile(state: &LindbladState, boundary: Boundary) -> Vec<f64> {
    let rho = &state.rho.rho;
    let n = rho.nrows();
    let peak = rho.diag().iter().fold(0.0f64, |m, c| m.max(c.re));
    (0..n)
        .map(|k| {
            let mut worst: f64 = 0.0;
            for col in 0..n {
                let row = col + k;
                let row = match boundary {
                    Boundary::Periodic => row % n,
                    Boundary::Open if row < n => row,
                    Boundary::Open => break,
                };
                worst = worst.max(rho[(row, col)].norm());
            }
            worst / peak
        })
        .collect()
}

/// Frobenius norm of the off-diagonal part of `ρ`.
pub fn offdiagonal_norm(rho: &DensityMatrix) -> f64 {
    let mut s = 0.0;
    for ((i, j), c) in rho.rho.indexed_iter() {
        if i != j {
            s += c.norm_sqr();
        }
    }
    s.sqrt()
}

/// `𝟙/N + ε X_k` where `X_k` is one on the `±k`-th periodic off-diagonals.
/// The perturbation is translation invariant and traceless, so it decays
/// at exactly `γ`.
pub fn dephasing_mode(n_sites: usize, k: usize, epsilon: f64) -> Result<DensityMatrix> {
    if k == 0 || 2 * k >= n_sites {
        return Err(Error::Config(format!("off-diagonal index {k} invalid for {n_sites} sites")));
    }
    // Eigenvalues of X_k lie in [-2, 2].
    if !(epsilon.abs() * 2.0 < 1.0 / n_sites as f64) {
        return Err(Error::Config(format!("amplitude {epsilon} would make the state non-positive")));
    }
    let mut rho = DensityMatrix::maximally_mixed(n_sites, -((n_sites / 2) as i64));
    for i in 0..n_sites {
        let j = (i + k) % n_sites;
        rho.rho[(j, i)] = Complex64::new(epsilon, 0.0);
        rho.rho[(i, j)] = Complex64::new(epsilon, 0.0);
    }
    Ok(rho)
}

/// Site weights `p_n = ρ_{n,n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub p: Array1<f64>,
    pub origin_offset: i64,
}

impl WeightVector {
    pub fn new(p: Array1<f64>, origin_offset: i64) -> Result<Self> {
        let total = p.sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        if let Some(bad) = p.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!("negative weight {bad}")));
        }
        Ok(Self { p, origin_offset })
    }

    pub fn delta(n_sites: usize, origin_offset: i64, site: i64) -> Result<Self> {
        let idx = site - origin_offset;
        if idx < 0 || idx >= n_sites as i64 {
            return Err(Error::Config(format!("site {site} outside the lattice")));
        }
        let mut p = Array1::zeros(n_sites);
        p[idx as usize] = 1.0;
        Self::new(p, origin_offset)
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(i, p)| p * (i as i64 + self.origin_offset) as f64).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.p
            .iter()
            .enumerate()
            .map(|(i, p)| p * ((i as i64 + self.origin_offset) as f64 - m).powi(2))
            .sum()
    }
}

/// `ρ_{n+1,n} ≈ (i/γ)(p_n - p_{n+1})` for every bond (`N-1` open, `N` periodic).
pub fn adiabatic_offdiagonals(
    weights: &WeightVector,
    gamma: f64,
    boundary: Boundary,
) -> Result<Array1<Complex64>> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("adiabatic estimate needs gamma > 0, got {gamma}")));
    }
    let p = &weights.p;
    let n = p.len();
    let bonds = if boundary == Boundary::Periodic { n } else { n - 1 };
    Ok(Array1::from_shape_fn(bonds, |b| {
        Complex64::new(0.0, (p[b] - p[(b + 1) % n]) / gamma)
    }))
}

/// Explicit step of `ṗ_n = (2/γ)(p_{n+1} + p_{n-1} - 2p_n)` written as bond
/// fluxes, so `Σ p` is conserved to roundoff. Open chains reflect.
pub fn reduced_diffusion_step(
    weights: &mut WeightVector,
    gamma: f64,
    dt: f64,
    boundary: Boundary,
) -> Result<()> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("reduced diffusion needs gamma > 0, got {gamma}")));
    }
    let courant = dt * 4.0 / gamma;
    if courant > 0.5 {
        return Err(Error::Range(format!(
            "explicit diffusion step unstable: dt·4/γ = {courant} exceeds 0.5"
        )));
    }
    let rate = 2.0 / gamma;
    let n = weights.p.len();
    let bonds = if boundary == Boundary::Periodic { n } else { n - 1 };
    let flux: Vec<f64> =
        (0..bonds).map(|b| dt * rate * (weights.p[b] - weights.p[(b + 1) % n])).collect();
    for (b, f) in flux.into_iter().enumerate() {
        weights.p[b] -= f;
        weights.p[(b + 1) % n] += f;
    }
    Ok(())
}

/// Observables of `ρ` in the ensemble-summary layout (zero standard errors).
pub fn run_lindblad(
    params: &ModelParams,
    initial: &InitialState,
    times: &[f64],
    meta: RunMeta,
) -> Result<EnsembleSummary> {
    let mut state = LindbladState::from_initial(params, initial)?;
    let mut integ = LindbladIntegrator::for_params(params)?;
    let k = times.len();
    let mut out = EnsembleSummary {
        meta,
        n_trajectories: 1,
        t: Vec::with_capacity(k),
        mean_x2: Vec::with_capacity(k),
        mean_x_sq: Vec::with_capacity(k),
        mean_var: Vec::with_capacity(k),
        mean_pn: Vec::with_capacity(k),
        stderr_mean_x2: vec![0.0; k],
        stderr_mean_x_sq: vec![0.0; k],
        stderr_mean_var: vec![0.0; k],
        stderr_mean_pn: vec![0.0; k],
    };
    for &t in times {
        integ.evolve_to(&mut state, t)?;
        let w = state.weights();
        let mean = w.mean();
        let var = w.variance();
        out.t.push(t);
        out.mean_x2.push(var + mean * mean);
        out.mean_x_sq.push(mean * mean);
        out.mean_var.push(var);
        out.mean_pn.push(1.0 / w.p.iter().map(|p| p * p).sum::<f64>());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::free_evolve;
    use crate::lattice::WaveFunction;

    #[test]
    fn maximally_mixed_ring_is_stationary() {
        let rho = DensityMatrix::maximally_mixed(12, -6);
        let mut out = Array2::zeros((12, 12));
        lindblad_rhs(&rho.rho, 3.0, Boundary::Periodic, &mut out);
        assert!(out.iter().all(|c| *c == Complex64::new(0.0, 0.0)));
        let mut state = LindbladState::new(rho.clone());
        LindbladIntegrator::new(3.0, Boundary::Periodic, 12, LINDBLAD_DT)
            .unwrap()
            .evolve_to(&mut state, 1.0)
            .unwrap();
        let dev = Zip::from(&state.rho.rho).and(&rho.rho).fold(0.0f64, |m, a, b| m.max((a - b).norm()));
        assert!(dev < 1e-10, "drift {dev}");
    }

    #[test]
    fn zero_gamma_is_unitary_evolution() {
        let params = ModelParams { gamma: 0.0, n_sites: 41, ..Default::default() };
        let psi0 = WaveFunction::localized(41, params.origin_offset(), 0).unwrap();
        let mut state = LindbladState::new(DensityMatrix::from_pure(&psi0));
        LindbladIntegrator::for_params(&params).unwrap().evolve_to(&mut state, 1.0).unwrap();
        let psi = free_evolve(&psi0, 1.0, Boundary::Open).unwrap();
        let exact = psi.projector();
        let err = Zip::from(&state.rho.rho).and(&exact).fold(0.0f64, |m, a, b| m.max((a - b).norm()));
        assert!(err < 1e-6, "max deviation {err}");
    }

    #[test]
    fn dephasing_mode_decays_at_gamma() {
        let gamma = 5.0;
        let eps = 0.01;
        let mut state = LindbladState::new(dephasing_mode(16, 1, eps).unwrap());
        let n0 = offdiagonal_norm(&state.rho);
        let mut integ = LindbladIntegrator::new(gamma, Boundary::Periodic, 16, LINDBLAD_DT).unwrap();
        integ.evolve_to(&mut state, 1.0 / gamma).unwrap();
        let ratio = offdiagonal_norm(&state.rho) / n0;
        let expected = (-1.0f64).exp();
        assert!((ratio / expected - 1.0).abs() < 1e-4, "ratio {ratio}");
    }

    #[test]
    fn trace_and_hermiticity_hold() {
        let params = ModelParams { gamma: 2.0, n_sites: 21, ..Default::default() };
        let mut state = LindbladState::from_initial(&params, &InitialState::gaussian(2.0)).unwrap();
        let mut integ = LindbladIntegrator::for_params(&params).unwrap();
        integ.evolve_to(&mut state, 0.5).unwrap();
        state.rho.check().unwrap();
        assert!(integ.max_correction() < MAX_CORRECTION);
        assert!((state.rho.trace() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn non_positive_state_is_reported() {
        let mut rho = DensityMatrix::maximally_mixed(4, 0);
        rho.rho[(0, 0)] = Complex64::new(1.0, 0.0);
        rho.rho[(1, 1)] = Complex64::new(-0.5, 0.0);
        let mut state = LindbladState::new(rho);
        let mut integ = LindbladIntegrator::new(1.0, Boundary::Periodic, 4, LINDBLAD_DT).unwrap();
        let err = integ.evolve_to(&mut state, 0.01).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }

    #[test]
    fn step_halving_is_fourth_order() {
        let params = ModelParams { gamma: 3.0, n_sites: 15, boundary: Boundary::Periodic, ..Default::default() };
        let state = LindbladState::from_initial(&params, &InitialState::delta()).unwrap();
        let e1 = step_halving_error(&state, 3.0, Boundary::Periodic, 0.02, 0.4).unwrap();
        let e2 = step_halving_error(&state, 3.0, Boundary::Periodic, 0.01, 0.4).unwrap();
        assert!(e1 / e2 > 12.0 && e1 / e2 < 20.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn profile_of_diagonal_state() {
        let state = LindbladState::new(DensityMatrix::maximally_mixed(8, 0));
        let prof = offdiagonal_profile(&state, Boundary::Open);
        assert_eq!(prof[0], 1.0);
        assert!(prof[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adiabatic_estimate_of_uniform_and_sloped_weights() {
        let w = WeightVector::new(Array1::from_elem(10, 0.1), 0).unwrap();
        let est = adiabatic_offdiagonals(&w, 20.0, Boundary::Periodic).unwrap();
        assert!(est.iter().all(|c| c.norm() == 0.0));
        let p = Array1::from_shape_fn(4, |i| (i + 1) as f64 / 10.0);
        let est = adiabatic_offdiagonals(&WeightVector::new(p, 0).unwrap(), 10.0, Boundary::Open).unwrap();
        assert_eq!(est.len(), 3);
        assert!(est.iter().all(|c| c.re == 0.0 && (c.im + 0.01).abs() < 1e-15));
    }

    #[test]
    fn reduced_diffusion_conserves_and_spreads() {
        let gamma = 40.0;
        let mut w = WeightVector::delta(201, -100, 0).unwrap();
        let dt = 0.5;
        for _ in 0..200 {
            reduced_diffusion_step(&mut w, gamma, dt, Boundary::Open).unwrap();
        }
        assert!((w.p.sum() - 1.0).abs() < 1e-13);
        // Explicit steps add exactly dt·4/γ to the variance while no weight
        // reaches the edges.
        let expected = 4.0 / gamma * 100.0;
        assert!((w.variance() / expected - 1.0).abs() < 1e-10, "variance {}", w.variance());
    }

    #[test]
    fn uniform_weights_are_a_fixed_point() {
        let mut w = WeightVector::new(Array1::from_elem(8, 0.125), 0).unwrap();
        reduced_diffusion_step(&mut w, 10.0, 1.0, Boundary::Periodic).unwrap();
        assert!(w.p.iter().all(|p| *p == 0.125));
    }

    #[test]
    fn unstable_reduced_step_is_rejected() {
        let mut w = WeightVector::delta(8, 0, 3).unwrap();
        assert!(matches!(reduced_diffusion_step(&mut w, 4.0, 0.6, Boundary::Open), Err(Error::Range(_))));
    }
}

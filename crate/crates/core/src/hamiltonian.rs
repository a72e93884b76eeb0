//! Tight-binding kinetic term and exact free propagation.
//!
//! In dimensionless units `H = Σ_n (2|n⟩⟨n| - |n⟩⟨n+1| - |n+1⟩⟨n|)`, so that
//! `-iHψ` has components `i(c_{n+1} + c_{n-1} - 2c_n)`. On the infinite chain
//! `⟨n|e^{-iHt}|0⟩ = e^{-2it} g_n(t)` with `g_n(t) = i^n J_n(2t)`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Boundary, WaveFunction};

/// Largest |n| for which the propagator is evaluated.
pub const MAX_ORDER: usize = 200;
/// Largest time for which the propagator is evaluated.
pub const MAX_TIME: f64 = 50.0;
/// Sites closer than this to an open edge may not be reached by `free_evolve`.
pub const EDGE_MARGIN: i64 = 10;
/// Weight below which a site counts as empty when locating the support.
pub const SUPPORT_EPS: f64 = 1e-28;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `out_n = i(c_{n+1} + c_{n-1} - 2c_n)` over a contiguous block of sites.
///
/// With `Boundary::Open` the neighbours outside the slice are zero; with
/// `Boundary::Periodic` the slice is treated as a ring.
pub fn kinetic_into(amps: &[Complex64], boundary: Boundary, out: &mut [Complex64]) {
    let n = amps.len();
    debug_assert_eq!(n, out.len());
    if n == 0 {
        return;
    }
    let zero = Complex64::new(0.0, 0.0);
    let (left_edge, right_edge) = match boundary {
        Boundary::Open => (zero, zero),
        Boundary::Periodic => (amps[n - 1], amps[0]),
    };
    for i in 0..n {
        let left = if i == 0 { left_edge } else { amps[i - 1] };
        let right = if i + 1 == n { right_edge } else { amps[i + 1] };
        let lap = left + right - 2.0 * amps[i];
        out[i] = Complex64::new(-lap.im, lap.re);
    }
}

pub fn apply_kinetic(psi: &WaveFunction, boundary: Boundary) -> Array1<Complex64> {
    let mut out = Array1::zeros(psi.n_sites());
    kinetic_into(
        psi.amps.as_slice().expect("contiguous amplitudes"),
        boundary,
        out.as_slice_mut().unwrap(),
    );
    out
}

/// Dense Hamiltonian matrix.
pub fn hamiltonian_matrix(n_sites: usize, boundary: Boundary) -> Array2<f64> {
    let mut h = Array2::zeros((n_sites, n_sites));
    for i in 0..n_sites {
        h[(i, i)] = 2.0;
        if i + 1 < n_sites {
            h[(i, i + 1)] = -1.0;
            h[(i + 1, i)] = -1.0;
        }
    }
    if boundary == Boundary::Periodic && n_sites > 2 {
        h[(0, n_sites - 1)] = -1.0;
        h[(n_sites - 1, 0)] = -1.0;
    }
    h
}

/// `J_0(x) ..= J_{nmax}(x)` for `x ≥ 0` by Miller's backward recurrence,
/// normalised with `J_0 + 2 Σ_k J_{2k} = 1`.
pub fn bessel_j_orders(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let scale = (nmax as f64).max(x);
    let mut start = (scale + 30.0 + (60.0 * scale).sqrt()) as usize;
    start += start % 2;

    let mut j = vec![0.0; start + 2];
    j[start] = 1e-30;
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        j[k - 1] = (2.0 * k as f64 / x) * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in &mut j[k - 1..] {
                *v *= 1e-250;
            }
            sum *= 1e-250;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            sum += 2.0 * j[k - 1];
        }
    }
    sum += j[0];
    for (o, v) in out.iter_mut().zip(&j) {
        *o = v / sum;
    }
    out
}

fn i_pow(n: i64) -> Complex64 {
    match n.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => I,
        2 => Complex64::new(-1.0, 0.0),
        _ => -I,
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=MAX_TIME).contains(&t) {
        return Err(Error::Range(format!(
            "propagator time {t} outside [0, {MAX_TIME}]"
        )));
    }
    Ok(())
}

/// `g_n(t) = i^n J_n(2t)`, the free propagator without the on-site phase.
pub fn free_propagator(n: i64, t: f64) -> Result<Complex64> {
    check_time(t)?;
    let order = n.unsigned_abs() as usize;
    if order > MAX_ORDER {
        return Err(Error::Range(format!("propagator order {n} exceeds {MAX_ORDER}")));
    }
    let j = bessel_j_orders(order, 2.0 * t)[order];
    // J_{-n} = (-1)^n J_n and i^{-n} (-1)^n = i^n, so g is even in n.
    Ok(i_pow(order as i64) * j)
}

/// All non-negligible `g_n(t)`, `|n| ≤ half_width`.
#[derive(Debug, Clone)]
pub struct PropagatorColumn {
    g: Vec<Complex64>,
    half_width: usize,
    pub dt_elapsed: f64,
}

impl PropagatorColumn {
    pub fn new(t: f64) -> Result<Self> {
        check_time(t)?;
        let x = 2.0 * t;
        let nmax = ((x + 20.0 + 10.0 * x.cbrt()).ceil() as usize).min(MAX_ORDER);
        let j = bessel_j_orders(nmax, x);
        // Trim the tail past the light cone once it is numerically empty.
        let mut half_width = nmax;
        while half_width > 0 && half_width as f64 > x && j[half_width].powi(2) < 1e-34 {
            half_width -= 1;
        }
        let g = (-(half_width as i64)..=half_width as i64)
            .map(|n| i_pow(n.abs()) * j[n.unsigned_abs() as usize])
            .collect();
        Ok(Self { g, half_width, dt_elapsed: t })
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// `g_n`, zero outside the stored range.
    pub fn get(&self, n: i64) -> Complex64 {
        if n.unsigned_abs() as usize > self.half_width {
            Complex64::new(0.0, 0.0)
        } else {
            self.g[(n + self.half_width as i64) as usize]
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.g.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Index range `[lo, hi]` of sites carrying weight above [`SUPPORT_EPS`].
pub fn support(psi: &WaveFunction) -> Option<(usize, usize)> {
    let lo = psi.amps.iter().position(|c| c.norm_sqr() > SUPPORT_EPS)?;
    let hi = psi.amps.iter().rposition(|c| c.norm_sqr() > SUPPORT_EPS)?;
    Some((lo, hi))
}

/// Reach of free evolution over time `t` that an open chain must leave free.
pub fn light_cone_reach(column: &PropagatorColumn) -> i64 {
    let cone = (2.0 * column.dt_elapsed).ceil() as i64 + EDGE_MARGIN;
    cone.max(column.half_width() as i64)
}

/// `e^{-iHt}ψ` via the analytic propagator.
///
/// On a ring the infinite-chain propagator is summed over images, which is
/// exact. On an open chain the support must stay [`light_cone_reach`] sites
/// away from both edges.
pub fn free_evolve(psi: &WaveFunction, t: f64, boundary: Boundary) -> Result<WaveFunction> {
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let column = PropagatorColumn::new(t)?;
    free_evolve_with(psi, &column, boundary)
}

pub fn free_evolve_with(
    psi: &WaveFunction,
    column: &PropagatorColumn,
    boundary: Boundary,
) -> Result<WaveFunction> {
    let n = psi.n_sites();
    let (lo, hi) = support(psi)
        .ok_or_else(|| Error::Domain("cannot propagate an empty wave function".into()))?;
    let w = column.half_width() as i64;
    if boundary == Boundary::Open {
        let reach = light_cone_reach(column);
        if (lo as i64) < reach {
            return Err(Error::Boundary { time: column.dt_elapsed, site: psi.coordinate(0) });
        }
        if ((n - 1 - hi) as i64) < reach {
            return Err(Error::Boundary { time: column.dt_elapsed, site: psi.coordinate(n - 1) });
        }
    }
    let phase = Complex64::from_polar(1.0, -2.0 * column.dt_elapsed);
    let mut out = Array1::<Complex64>::zeros(n);
    for j in lo..=hi {
        let c = psi.amps[j];
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let c = c * phase;
        for d in -w..=w {
            let target = j as i64 + d;
            let idx = match boundary {
                Boundary::Open => target as usize,
                Boundary::Periodic => target.rem_euclid(n as i64) as usize,
            };
            out[idx] += column.get(d) * c;
        }
    }
    Ok(WaveFunction::new(out, psi.origin_offset))
}

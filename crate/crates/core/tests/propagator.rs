use ndarray::{Array1, Array2};
use num_complex::Complex64;
use proptest::prelude::*;
use tbnoise::hamiltonian::{free_evolve, hamiltonian_matrix};
use tbnoise::{Boundary, WaveFunction};

/// `exp(-iHt)` by scaling and squaring of a truncated Taylor series.
fn dense_propagator(h: &Array2<f64>, t: f64) -> Array2<Complex64> {
    let n = h.nrows();
    let norm: f64 = h.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = ((norm * t).log2().ceil() as i32 + 4).max(0);
    let scale = t / 2f64.powi(squarings);
    let a = h.mapv(|v| Complex64::new(0.0, -v * scale));
    let mut result = Array2::<Complex64>::eye(n);
    let mut term = Array2::<Complex64>::eye(n);
    for k in 1..=30 {
        term = term.dot(&a).mapv(|v| v / k as f64);
        result = result + &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

#[test]
fn propagator_matches_dense_matrix_exponential() {
    let n = 101;
    let offset = -50;
    let t = 2.0;
    let u = dense_propagator(&hamiltonian_matrix(n, Boundary::Open), t);
    for start in [-20i64, -5, 0, 3, 20] {
        let psi = WaveFunction::localized(n, offset, start).unwrap();
        let out = free_evolve(&psi, t, Boundary::Open).unwrap();
        let col = (start - offset) as usize;
        for row in 0..n {
            let diff = (out.amps[row] - u[(row, col)]).norm();
            assert!(diff < 1e-8, "start {start}, row {row}: diff {diff:e}");
        }
    }
}

#[test]
fn periodic_propagator_matches_dense_matrix_exponential() {
    let n = 101;
    let u = dense_propagator(&hamiltonian_matrix(n, Boundary::Periodic), 2.0);
    let amps = Array1::from_shape_fn(n, |i| {
        let x = i as f64 - 50.0;
        Complex64::new((-x * x / 16.0).exp(), 0.1 * x)
    });
    let mut psi = WaveFunction::new(amps, -50);
    psi.normalize().unwrap();
    let out = free_evolve(&psi, 2.0, Boundary::Periodic).unwrap();
    let expected = u.dot(&psi.amps);
    for (a, b) in out.amps.iter().zip(expected.iter()) {
        assert!((a - b).norm() < 1e-8);
    }
}

#[test]
fn small_ring_wraps_in_both_directions() {
    let n = 11;
    for t in [0.3, 1.0, 3.0] {
        let u = dense_propagator(&hamiltonian_matrix(n, Boundary::Periodic), t);
        for start in -5..=5i64 {
            let psi = WaveFunction::localized(n, -5, start).unwrap();
            let out = free_evolve(&psi, t, Boundary::Periodic).unwrap();
            let col = (start + 5) as usize;
            for row in 0..n {
                let diff = (out.amps[row] - u[(row, col)]).norm();
                assert!(diff < 1e-8, "t {t}, start {start}, row {row}: diff {diff:e}");
            }
        }
    }
}

#[test]
fn delta_spreads_as_two_t_squared() {
    let psi = WaveFunction::localized(301, -150, 0).unwrap();
    for t in [1.0, 2.0, 4.0, 10.0] {
        let out = free_evolve(&psi, t, Boundary::Open).unwrap();
        let w = out.weights();
        let mean: f64 = w.iter().enumerate().map(|(i, p)| p * out.coordinate(i) as f64).sum();
        let var: f64 = w.iter().enumerate().map(|(i, p)| p * (out.coordinate(i) as f64 - mean).powi(2)).sum();
        let exact = 2.0 * t * t;
        assert!((var - exact).abs() < 1e-3 * exact, "t={t}: {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn free_evolution_is_unitary(
        parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
        t in 0.0f64..8.0,
        periodic in any::<bool>(),
    ) {
        let n = 161;
        let mut amps = Array1::zeros(n);
        for (k, (re, im)) in parts.iter().enumerate() {
            amps[76 + k] = Complex64::new(*re, *im);
        }
        prop_assume!(amps.iter().map(|c: &Complex64| c.norm_sqr()).sum::<f64>() > 1e-3);
        let mut psi = WaveFunction::new(amps, -80);
        psi.normalize().unwrap();
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Open };
        let out = free_evolve(&psi, t, boundary).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-8);
    }
}

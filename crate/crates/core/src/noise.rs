//! Reproducible noise streams.
//!
//! Trajectory `k` of a run with base seed `s` draws from the ChaCha8 stream
//! selected by `(s, k)`: the key is derived from `s` and the 64-bit stream
//! counter is set to `k`. Streams are independent of how trajectories are
//! scheduled across threads.

use ndarray::Array1;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Real Wiener increments `dW_n`, variance `dt`.
    RealWiener,
    /// Complex increments `dξ_n` with independent real and imaginary parts of
    /// variance `dt/2` each.
    ComplexWiener,
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    kind: NoiseKind,
}

impl NoiseStream {
    pub fn new(base_seed: u64, trajectory: u64, kind: NoiseKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(trajectory);
        Self { rng, kind }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn draw_real_increments(&mut self, n_sites: usize, dt: f64) -> Array1<f64> {
        let mut out = Array1::zeros(n_sites);
        self.fill_real(out.as_slice_mut().unwrap(), dt);
        out
    }

    pub fn draw_complex_increments(&mut self, n_sites: usize, dt: f64) -> Array1<Complex64> {
        let mut out = Array1::zeros(n_sites);
        self.fill_complex(out.as_slice_mut().unwrap(), dt);
        out
    }

    pub fn fill_real(&mut self, out: &mut [f64], dt: f64) {
        assert_eq!(self.kind, NoiseKind::RealWiener, "stream does not carry real noise");
        let sd = dt.sqrt();
        for x in out {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = sd * z;
        }
    }

    pub fn fill_complex(&mut self, out: &mut [Complex64], dt: f64) {
        assert_eq!(self.kind, NoiseKind::ComplexWiener, "stream does not carry complex noise");
        let sd = (0.5 * dt).sqrt();
        for x in out {
            let re: f64 = StandardNormal.sample(&mut self.rng);
            let im: f64 = StandardNormal.sample(&mut self.rng);
            *x = Complex64::new(sd * re, sd * im);
        }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Exponential waiting time with the given rate; infinite for rate 0.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(&mut self.rng);
        e / rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Mean/variance accumulator local to the tests so the checks stay
    // independent of the observables module.
    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        (mean, s2 / n as f64 - mean * mean, n)
    }

    #[test]
    fn real_increments_have_variance_dt() {
        let dt = 1e-4;
        let mut stream = NoiseStream::new(7, 0, NoiseKind::RealWiener);
        let samples = stream.draw_real_increments(1_000_000, dt);
        let (mean, var, n) = moments(samples.iter().copied());
        // 4σ bound on the mean, 1% on the variance (σ_var/var = sqrt(2/n) ≈ 0.14%).
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn real_increments_uncorrelated_between_sites() {
        let dt = 1e-4;
        let mut stream = NoiseStream::new(11, 3, NoiseKind::RealWiener);
        let draws = 500_000;
        let mut products = Vec::with_capacity(draws);
        for _ in 0..draws {
            let dw = stream.draw_real_increments(2, dt);
            products.push(dw[0] * dw[1]);
        }
        let (mean, _, n) = moments(products.into_iter());
        // Var(dW_0 dW_1) = dt².
        assert!(mean.abs() < 4.0 * dt / (n as f64).sqrt(), "cross moment {mean}");
    }

    #[test]
    fn complex_increments_match_correlation_structure() {
        let dt = 1e-4;
        let mut stream = NoiseStream::new(5, 1, NoiseKind::ComplexWiener);
        let xi = stream.draw_complex_increments(1_000_000, dt);
        let n = xi.len() as f64;
        let (_, var_re, _) = moments(xi.iter().map(|c| c.re));
        let (_, var_im, _) = moments(xi.iter().map(|c| c.im));
        assert!((var_re / (dt / 2.0) - 1.0).abs() < 0.01, "Re variance {var_re}");
        assert!((var_im / (dt / 2.0) - 1.0).abs() < 0.01, "Im variance {var_im}");
        let (cross, _, _) = moments(xi.iter().map(|c| c.re * c.im));
        assert!(cross.abs() < 4.0 * (dt / 2.0) / n.sqrt(), "Re·Im moment {cross}");
        let (abs2, _, _) = moments(xi.iter().map(|c| c.norm_sqr()));
        assert!((abs2 / dt - 1.0).abs() < 0.01, "M|dξ|² = {abs2}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = NoiseStream::new(42, 9, NoiseKind::ComplexWiener);
        let mut b = NoiseStream::new(42, 9, NoiseKind::ComplexWiener);
        assert_eq!(a.draw_complex_increments(64, 1e-3), b.draw_complex_increments(64, 1e-3));
        assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        let mut c = NoiseStream::new(42, 10, NoiseKind::ComplexWiener);
        assert_ne!(a.draw_complex_increments(8, 1e-3), c.draw_complex_increments(8, 1e-3));
    }

    #[test]
    fn exponential_rate_zero_never_fires() {
        let mut s = NoiseStream::new(1, 1, NoiseKind::RealWiener);
        assert!(s.exponential(0.0).is_infinite());
        let (mean, _, _) = moments((0..200_000).map(|_| s.exponential(4.0)));
        assert!((mean * 4.0 - 1.0).abs() < 4.0 / (200_000f64).sqrt());
    }
}

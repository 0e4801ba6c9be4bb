//! Trigonometric interpolation on the unit circle with an odd number of
//! equispaced nodes `s_j = j / N`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Smallest odd integer `>= n` (and at least 5).
pub fn odd_size(n: usize) -> usize {
    let n = n.max(5);
    if n % 2 == 1 {
        n
    } else {
        n + 1
    }
}

/// Real trigonometric polynomial of degree `K = (N - 1) / 2`, stored by its
/// nonnegative-frequency coefficients `c_0..c_K` so that
/// `x(s) = c_0 + 2 Re sum_k c_k e^{2 pi i k s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigInterpolant {
    n: usize,
    coeffs: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n % 2 == 1 && n >= 3, "trigonometric interpolation needs an odd node count");
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        let k = (n - 1) / 2;
        let coeffs = buf[..=k].iter().map(|c| c * scale).collect();
        Self { n, coeffs }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Samples on an `n`-point grid; zero-padding or truncating the spectrum.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        assert!(n % 2 == 1);
        let k_new = (n - 1) / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, c) in self.coeffs.iter().enumerate().take(k_new + 1) {
            buf[k] = *c;
            if k > 0 {
                buf[n - k] = c.conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    pub fn resample(&self, n: usize) -> Self {
        Self::from_samples(&self.samples(n))
    }

    /// `d`-th derivative at `s` (`d` in 0..=2).
    pub fn eval_deriv(&self, s: f64, d: u32) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * s);
        let w = 2.0 * PI;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            let factor = match d {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, w * k as f64),
                _ => Complex64::new(-(w * k as f64).powi(2), 0.0),
            };
            acc = (acc + c * factor) * z;
        }
        let base = if d == 0 { self.coeffs[0].re } else { 0.0 };
        base + 2.0 * acc.re
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_deriv(s, 0)
    }

    /// Samples of `x'` on the node grid.
    pub fn derivative_samples(&self) -> Vec<f64> {
        self.transformed_samples(|k| Complex64::new(0.0, 2.0 * PI * k as f64))
    }

    /// Samples of `x(. - tau)` on the node grid.
    pub fn shifted_samples(&self, tau: f64) -> Vec<f64> {
        self.transformed_samples(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * tau))
    }

    /// Samples of `x'(. - tau)` on the node grid.
    pub fn shifted_derivative_samples(&self, tau: f64) -> Vec<f64> {
        self.transformed_samples(|k| {
            Complex64::new(0.0, 2.0 * PI * k as f64) * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * tau)
        })
    }

    /// Values of the `d`-th derivative at `offset + i / n_out`, `i < n_out`,
    /// for any `n_out >= N`.
    pub fn grid_values(&self, n_out: usize, d: u32, offset: f64) -> Vec<f64> {
        assert!(n_out >= self.n);
        self.transformed_on(n_out, |k| {
            let w = 2.0 * PI * k as f64;
            let deriv = match d {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, w),
                _ => Complex64::new(-w * w, 0.0),
            };
            deriv * Complex64::from_polar(1.0, w * offset)
        })
    }

    fn transformed_samples(&self, mult: impl Fn(usize) -> Complex64) -> Vec<f64> {
        self.transformed_on(self.n, mult)
    }

    fn transformed_on(&self, n: usize, mult: impl Fn(usize) -> Complex64) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, c) in self.coeffs.iter().enumerate() {
            let v = c * mult(k);
            if k == 0 {
                buf[0] = Complex64::new(v.re, 0.0);
            } else {
                buf[k] = v;
                buf[n - k] = v.conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Largest coefficient modulus among the top eighth of the harmonics,
    /// relative to the largest nonconstant coefficient.
    pub fn tail_ratio(&self) -> f64 {
        let k = self.coeffs.len() - 1;
        let peak = self.coeffs[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let start = (k - k / 8).max(1);
        self.coeffs[start..].iter().map(|c| c.norm()).fold(0.0, f64::max) / peak
    }
}

/// First row generator of the spectral differentiation matrix:
/// `D[j][k] = row[(j - k) mod N]`.
pub fn diff_row(n: usize) -> Vec<f64> {
    (0..n)
        .map(|d| {
            if d == 0 {
                0.0
            } else {
                let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                sign * PI / (PI * d as f64 / n as f64).sin()
            }
        })
        .collect()
}

/// Cardinal function of odd-`N` trigonometric interpolation,
/// `sin(N pi x) / (N sin(pi x))`.
pub fn dirichlet(n: usize, x: f64) -> f64 {
    let x = x - x.round();
    let den = (PI * x).sin();
    if den.abs() < 1e-8 {
        // Sum form, to avoid cancellation near the nodes.
        let k = (n - 1) / 2;
        let sum: f64 = (1..=k).map(|j| (2.0 * PI * j as f64 * x).cos()).sum();
        return (1.0 + 2.0 * sum) / n as f64;
    }
    (n as f64 * PI * x).sin() / (n as f64 * den)
}

/// Row generator of the shift matrix `S(tau)`, where `(S x)_j = x(s_j - tau)`:
/// `S[j][k] = row[(j - k) mod N]`.
pub fn shift_row(n: usize, tau: f64) -> Vec<f64> {
    (0..n)
        .map(|d| dirichlet(n, d as f64 / n as f64 - tau))
        .collect()
}

/// Samples of the mirrored function `s -> x(-s)`.
pub fn mirror(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    (0..n).map(|j| samples[(n - j) % n]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(j as f64 / n as f64)).collect()
    }

    fn test_fn(s: f64) -> f64 {
        (2.0 * PI * s).cos().exp() + 0.3 * (4.0 * PI * s).sin()
    }

    fn test_fn_prime(s: f64) -> f64 {
        -2.0 * PI * (2.0 * PI * s).sin() * (2.0 * PI * s).cos().exp() + 1.2 * PI * (4.0 * PI * s).cos()
    }

    #[test]
    fn odd_sizes() {
        assert_eq!(odd_size(128), 129);
        assert_eq!(odd_size(129), 129);
        assert_eq!(odd_size(2), 5);
    }

    #[test]
    fn spectral_evaluation_and_derivative() {
        let n = 65;
        let t = TrigInterpolant::from_samples(&grid(n, test_fn));
        for s in [0.013, 0.25, 0.5, 0.777] {
            assert!((t.eval(s) - test_fn(s)).abs() < 1e-13);
            assert!((t.eval_deriv(s, 1) - test_fn_prime(s)).abs() < 1e-11);
        }
        let d = t.derivative_samples();
        let row = diff_row(n);
        let x = grid(n, test_fn);
        for j in 0..n {
            let dx: f64 = (0..n).map(|k| row[(j + n - k) % n] * x[k]).sum();
            assert!((dx - d[j]).abs() < 1e-10, "{j}: {dx} vs {}", d[j]);
            assert!((d[j] - test_fn_prime(j as f64 / n as f64)).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_matrix_matches_interpolant() {
        let n = 33;
        let x = grid(n, test_fn);
        let t = TrigInterpolant::from_samples(&x);
        for tau in [0.25, 1.0 / 3.0, 0.0, 2.0 / 33.0, 0.9] {
            let row = shift_row(n, tau);
            let shifted = t.shifted_samples(tau);
            for j in 0..n {
                let y: f64 = (0..n).map(|k| row[(j + n - k) % n] * x[k]).sum();
                let exact = test_fn(j as f64 / n as f64 - tau);
                assert!((y - shifted[j]).abs() < 1e-12);
                assert!((y - exact).abs() < 1e-9, "tau {tau}: {y} vs {exact}");
            }
        }
    }

    #[test]
    fn resampling_preserves_function() {
        let t = TrigInterpolant::from_samples(&grid(41, test_fn));
        let fine = t.resample(81);
        for s in [0.1, 0.37, 0.91] {
            assert!((fine.eval(s) - t.eval(s)).abs() < 1e-13);
        }
        assert!(fine.tail_ratio() < 1e-13);
        let m = mirror(&grid(41, test_fn));
        let tm = TrigInterpolant::from_samples(&m);
        assert!((tm.eval(0.2) - test_fn(-0.2)).abs() < 1e-12);
        let vals = t.grid_values(100, 1, 0.005);
        for (i, v) in vals.iter().enumerate() {
            let s = 0.005 + i as f64 / 100.0;
            assert!((v - t.eval_deriv(s, 1)).abs() < 1e-10);
        }
    }
}

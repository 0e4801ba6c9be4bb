//! Gauss-Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point rule on `[-1, 1]`, by Newton's method
/// on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// A fixed rule mapped to arbitrary intervals.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn integrate<E>(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x)?;
        }
        Ok(acc * half)
    }

    /// Composite rule over `[a, b]` split at the given interior points.
    pub fn integrate_split<E>(
        &self,
        a: f64,
        b: f64,
        breaks: &[f64],
        mut f: impl FnMut(f64) -> Result<f64, E>,
    ) -> Result<f64, E> {
        let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        points.sort_by(f64::total_cmp);
        points.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        let mut acc = 0.0;
        let mut lo = a;
        for hi in points.into_iter().chain(std::iter::once(b)) {
            if hi - lo > 1e-14 {
                acc += self.integrate(lo, hi, &mut f)?;
            }
            lo = hi;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials_and_smooth_functions() {
        let (x, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((m - 2.0 / 11.0).abs() < 1e-14);
        let rule = GaussLegendre::new(64);
        let v = rule.integrate::<()>(0.0, 3.0, |t| Ok(t.exp())).unwrap();
        assert!((v - (3.0f64.exp() - 1.0)).abs() < 1e-12);
        let (x5, w5) = gauss_legendre(5);
        assert!((x5[2]).abs() < 1e-15 && (w5[2] - 128.0 / 225.0).abs() < 1e-15);
    }

    #[test]
    fn splitting_at_a_kink() {
        let rule = GaussLegendre::new(16);
        let f = |t: f64| Ok::<f64, ()>((t - 0.3).abs());
        let exact = 0.5 * 0.3 * 0.3 + 0.5 * 0.7 * 0.7;
        let v = rule.integrate_split(0.0, 1.0, &[0.3], f).unwrap();
        assert!((v - exact).abs() < 1e-15);
    }
}

//! One-dimensional quadrature rules.

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A Gauss–Legendre rule mapped to `[a, b]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(node, weight)` pairs on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (m + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Composite Simpson weights for `n` intervals on `[a, b]` (`n` even).
pub fn simpson_weights(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 2 && n % 2 == 0, "Simpson needs an even number of intervals");
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_is_exact_for_polynomials() {
        for n in 1..12 {
            let rule = GaussRule::new(n);
            for deg in 0..2 * n {
                let got = rule.integrate(-0.3, 1.7, |x| x.powi(deg as i32));
                let exact = (1.7f64.powi(deg as i32 + 1) - (-0.3f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                assert!((got - exact).abs() < 1e-12 * (1.0 + exact.abs()), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn simpson_integrates_cubics() {
        let w = simpson_weights(4, 0.0, 2.0);
        let got: f64 = w.iter().enumerate().map(|(i, w)| w * (0.5 * i as f64).powi(3)).sum();
        assert!((got - 4.0).abs() < 1e-14);
    }
}

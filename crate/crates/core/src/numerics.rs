//! Small numerical kernels shared by the solvers.

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.959963984540054;

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n-1]` are
/// ignored.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = M x
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// Thomas factorization, reusable across right-hand sides.
    pub fn factor(&self) -> TridiagonalLu {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut inv_m = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let m = self.diag[i] - if i > 0 { self.lower[i] * prev_c } else { 0.0 };
            inv_m[i] = 1.0 / m;
            c[i] = if i + 1 < n { self.upper[i] * inv_m[i] } else { 0.0 };
            prev_c = c[i];
        }
        TridiagonalLu { lower: self.lower.clone(), c, inv_m }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.factor().solve_in_place(&mut x);
        x
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    c: Vec<f64>,
    inv_m: Vec<f64>,
}

impl TridiagonalLu {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let prev = if i > 0 { self.lower[i] * x[i - 1] } else { 0.0 };
            x[i] = (x[i] - prev) * self.inv_m[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.c[i] * x[i + 1];
        }
    }

    /// True when every pivot is finite and nonzero.
    pub fn is_regular(&self) -> bool {
        self.inv_m.iter().all(|v| v.is_finite())
    }
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Some(LineFit { slope, intercept, r2 })
}

/// Sample mean with normal-approximation 95% half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Radical inverse of `index` in `base` (van der Corput).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Halton point `index` in [0, 1)^dim (dim ≤ 8). Index 0 is skipped by callers.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|k| radical_inverse(index, PRIMES[k])).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_product() {
        let n = 9;
        let mut m = Tridiagonal::zeros(n);
        for i in 0..n {
            m.diag[i] = 4.0 + i as f64 * 0.1;
            m.lower[i] = -1.0 - 0.05 * i as f64;
            m.upper[i] = -0.7;
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        m.apply(&x, &mut b);
        let y = m.solve(&b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|t| 1.5 - 0.25 * t).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.25).abs() < 1e-14);
        assert!((f.intercept - 1.5).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halton_base_two_prefix() {
        let v: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn mean_ci_of_constant_is_exact() {
        let (m, h) = mean_ci(&[3.0; 10]);
        assert_eq!(m, 3.0);
        assert_eq!(h, 0.0);
    }
}

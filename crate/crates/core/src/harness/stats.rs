//! Monte Carlo summaries, least squares, and small dense linear algebra.

use crate::error::{Result, SdeError};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    /// `∞` when fewer than two samples are available.
    pub std_err: f64,
    pub samples: usize,
}

impl MeanEstimate {
    /// Two-pass mean and standard error, summed in the given order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_err: f64::INFINITY, samples: 0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, std_err: f64::INFINITY, samples: 1 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Self { mean, std_err: (var / n as f64).sqrt(), samples: n }
    }

    /// `(mean - target) / std_err`.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn brackets(&self, target: f64, k: f64) -> bool {
        self.z_score(target).abs() <= k
    }

    /// A single sample gives no usable interval.
    pub fn interval_is_infinite(&self) -> bool {
        !self.std_err.is_finite()
    }
}

/// One named comparison of an estimate against a target.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub target: f64,
    /// Allowed deviation in standard errors, or `None` for an absolute
    /// tolerance given in `abs_tol`.
    pub sigmas: Option<f64>,
    pub abs_tol: f64,
}

impl MomentCheck {
    pub fn sigma(name: impl Into<String>, est: MeanEstimate, target: f64, sigmas: f64) -> Self {
        Self { name: name.into(), estimate: est.mean, std_err: est.std_err, target, sigmas: Some(sigmas), abs_tol: 0.0 }
    }

    pub fn absolute(name: impl Into<String>, estimate: f64, std_err: f64, target: f64, tol: f64) -> Self {
        Self { name: name.into(), estimate, std_err, target, sigmas: None, abs_tol: tol }
    }

    pub fn passed(&self) -> bool {
        let diff = (self.estimate - self.target).abs();
        match self.sigmas {
            Some(k) => diff <= k * self.std_err,
            None => diff <= self.abs_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
}

impl Fit {
    /// `exp(intercept) x^slope`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
///
/// The returned slope is the raw regression slope: positive for error
/// against step size, negative for error against cost.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(SdeError::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(SdeError::DegenerateFit(format!("non-positive or non-finite point {p:?}")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) {
        return Err(SdeError::DegenerateFit("all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(Fit { slope, intercept: my - slope * mx })
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty range");
        if a[pivot][col] == 0.0 {
            return Err(SdeError::DegenerateFit("singular system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Determinant by LU with partial pivoting; `m` is row-major `n × n`.
pub fn determinant(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for row in col + 1..n {
            let f = m[row * n + col] / p;
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

/// Least-squares coefficients and standard errors of `y` on the columns
/// of `x` (no intercept), from accumulated normal equations.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    p: usize,
    xtx: Vec<Vec<f64>>,
    xty: Vec<f64>,
    yty: f64,
    n: usize,
}

impl LeastSquares {
    pub fn new(p: usize) -> Self {
        Self { p, xtx: vec![vec![0.0; p]; p], xty: vec![0.0; p], yty: 0.0, n: 0 }
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        for i in 0..self.p {
            for j in 0..self.p {
                self.xtx[i][j] += x[i] * x[j];
            }
            self.xty[i] += x[i] * y;
        }
        self.yty += y * y;
        self.n += 1;
    }

    /// `(coefficients, standard errors)`.
    pub fn solve(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.n <= self.p {
            return Err(SdeError::DegenerateFit(format!("{} observations for {} regressors", self.n, self.p)));
        }
        let beta = solve(self.xtx.clone(), self.xty.clone())?;
        let fitted: f64 = beta.iter().zip(&self.xty).map(|(b, v)| b * v).sum();
        let rss = (self.yty - fitted).max(0.0);
        let sigma2 = rss / (self.n - self.p) as f64;
        let mut se = Vec::with_capacity(self.p);
        for j in 0..self.p {
            let mut e = vec![0.0; self.p];
            e[j] = 1.0;
            let col = solve(self.xtx.clone(), e)?;
            se.push((sigma2 * col[j]).sqrt());
        }
        Ok((beta, se))
    }
}

/// `Γ(k/2)` for a positive integer `k`, exact up to rounding.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0, "Γ(0) is undefined");
    let (mut value, mut arg) = if k.is_multiple_of(2) { (1.0, 2) } else { (std::f64::consts::PI.sqrt(), 1) };
    while arg < k {
        value *= arg as f64 / 2.0;
        arg += 2;
    }
    value
}

/// `E|Z|^n = 2^{n/2} Γ((n+1)/2) / √π` for standard normal `Z`.
pub fn half_normal_moment(n: u32) -> f64 {
    2f64.powf(n as f64 / 2.0) * gamma_half(n + 1) / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;
    use proptest::prelude::*;

    #[test]
    fn mean_estimate_basics() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let single = MeanEstimate::from_samples(&[0.3]);
        assert_eq!(single.mean, 0.3);
        assert!(single.interval_is_infinite());
        assert!(single.brackets(100.0, 4.0));
    }

    #[test]
    fn exact_power_laws() {
        let f = fit_rate(&[(0.5, 0.5), (0.25, 0.25), (0.125, 0.125)]).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        let f = fit_rate(&[(0.25, 0.5), (1.0 / 16.0, 0.25), (1.0 / 64.0, 0.125)]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.predict(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]).is_err());
    }

    #[test]
    fn noisy_synthetic_power_law() {
        // 10% multiplicative noise on error = 3 h^0.75
        for seed in 0..20u64 {
            let mut rng = KeyedRng::new(seed, &[42]);
            let pts: Vec<(f64, f64)> = (2..10)
                .map(|k| {
                    let h = 2f64.powi(-k);
                    (h, 3.0 * h.powf(0.75) * (1.0 + 0.1 * (2.0 * rng.uniform() - 1.0)))
                })
                .collect();
            let f = fit_rate(&pts).unwrap();
            assert!((f.slope - 0.75).abs() < 0.05, "seed {seed}: {}", f.slope);
        }
    }

    #[test]
    fn linear_solve_and_determinant() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        let mut m = [0.0, 2.0, 1.0, 3.0];
        assert_eq!(determinant(&mut m, 2), -2.0);
        let mut m = [2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 1.0, 1.0, 4.0];
        assert!((determinant(&mut m, 3) - 24.0).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn half_normal_moments() {
        assert!((half_normal_moment(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((half_normal_moment(2) - 1.0).abs() < 1e-15);
        assert!((half_normal_moment(3) - 2.0 * 2f64.sqrt() / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((half_normal_moment(4) - 3.0).abs() < 1e-14);
        assert!((gamma_half(7) - 15.0 / 8.0 * std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn least_squares_recovers_plane() {
        let mut ls = LeastSquares::new(2);
        let mut rng = KeyedRng::new(1, &[]);
        for _ in 0..1000 {
            let x = [rng.gaussian(), rng.gaussian()];
            ls.add(&x, 2.0 * x[0] - 0.5 * x[1] + 0.01 * rng.gaussian());
        }
        let (b, se) = ls.solve().unwrap();
        assert!((b[0] - 2.0).abs() < 5.0 * se[0]);
        assert!((b[1] + 0.5).abs() < 5.0 * se[1]);
        assert!(se[0] < 1e-3);
    }

    proptest! {
        #[test]
        fn fit_recovers_any_exact_power(slope in -3.0f64..3.0, scale in 0.01f64..100.0) {
            let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 11.0].iter().map(|&x: &f64| (x, scale * x.powf(slope))).collect();
            let f = fit_rate(&pts).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-10);
        }
    }
}

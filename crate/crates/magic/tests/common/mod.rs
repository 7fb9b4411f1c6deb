//! Shared oracles for the integration suites: quadrature, finite-difference
//! Jacobians, and nonparametric test helpers. Everything here is independent
//! of the library's own computational paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Composite Simpson rule with `points` nodes (made odd if necessary).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    let m = if points % 2 == 0 { points + 1 } else { points.max(3) };
    let h = (b - a) / (m - 1) as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let w = if i == 0 || i == m - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Normalized CDF of an unnormalized density tabulated on an even grid.
pub struct GridCdf {
    pub xs: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridCdf {
    pub fn build(density: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Self {
        let m = points.max(3);
        let h = (hi - lo) / (m - 1) as f64;
        let xs: Vec<f64> = (0..m).map(|i| lo + i as f64 * h).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| density(x)).collect();
        let mut cdf = vec![0.0; m];
        for i in 1..m {
            cdf[i] = cdf[i - 1] + 0.5 * (vals[i - 1] + vals[i]) * h;
        }
        let total = cdf[m - 1];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Self { xs, cdf }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let h = self.xs[1] - self.xs[0];
        let idx = ((x - self.xs[0]) / h).floor() as usize;
        let idx = idx.min(self.xs.len() - 2);
        let frac = (x - self.xs[idx]) / h;
        self.cdf[idx] + frac * (self.cdf[idx + 1] - self.cdf[idx])
    }

    /// Upper-tail probability of `t` under the tabulated law.
    pub fn sf(&self, t: f64) -> f64 {
        1.0 - self.eval(t)
    }
}

/// Sup distance between the empirical CDF of `draws` and a reference CDF.
pub fn sup_ecdf_distance(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((i as f64 + 1.0) / n - f).abs());
    }
    sup
}

/// Log-determinant of the finite-difference Jacobian of `psi` at `at`.
pub fn fd_jacobian_logdet(psi: impl Fn(&DVector<f64>) -> DVector<f64>, at: &DVector<f64>, h: f64) -> f64 {
    let d = at.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut plus = at.clone();
        plus[j] += h;
        let mut minus = at.clone();
        minus[j] -= h;
        let col = (psi(&plus) - psi(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    let lu = jac.lu();
    let u = lu.u();
    (0..d).map(|k| u[(k, k)].abs().ln()).sum()
}

/// Two-sample Mann-Whitney z-statistic (normal approximation).
pub fn mann_whitney_z(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut rank_sum_a = 0.0;
    for (rank, &(_, who)) in all.iter().enumerate() {
        if who == 0 {
            rank_sum_a += (rank + 1) as f64;
        }
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    (u - mean) / sd
}

pub fn randn_matrix(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn randn_vector(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Design with columns scaled to unit Euclidean norm.
pub fn unit_norm_design(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let mut x = randn_matrix(n, p, rng);
    for mut c in x.column_iter_mut() {
        let nrm = c.norm();
        c /= nrm;
    }
    x
}

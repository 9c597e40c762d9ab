#![allow(dead_code)]

pub mod props;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use wsign_core::elliptical::rng_for;
use wsign_core::{DataMatrix, EllipticalModel, Family};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, 7);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let qr = gaussian_matrix(p, p, seed).qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&DVector::from_iterator(p, (0..p).map(|i| r[(i, i)].signum())));
    q * signs
}

pub fn diag_model(family: Family, diag: &[f64]) -> EllipticalModel {
    EllipticalModel::diagonal(family, diag).unwrap()
}

pub fn sample(model: &EllipticalModel, n: usize, seed: u64) -> DataMatrix {
    model.sample(n, seed).unwrap()
}

pub fn table_families() -> Vec<Family> {
    vec![
        Family::Normal,
        Family::StudentT(5),
        Family::StudentT(6),
        Family::StudentT(10),
        Family::StudentT(15),
        Family::StudentT(25),
    ]
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// `|a - b|` in the max norm.
pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Brute-force minimizer of `sum_i w_i |x_i - q|` by repeated grid zooming;
/// returns the best objective found. The objective is convex, so shrinking
/// a grid around the incumbent cannot lose the minimum.
pub fn brute_force_median_objective(x: &DMatrix<f64>, w: &[f64]) -> f64 {
    let (n, p) = x.shape();
    let obj = |q: &[f64]| -> f64 {
        (0..n)
            .map(|i| w[i] * (0..p).map(|j| (x[(i, j)] - q[j]).powi(2)).sum::<f64>().sqrt())
            .sum()
    };
    let lo: Vec<f64> = (0..p).map(|j| x.column(j).min()).collect();
    let hi: Vec<f64> = (0..p).map(|j| x.column(j).max()).collect();
    let mut center: Vec<f64> = (0..p).map(|j| 0.5 * (lo[j] + hi[j])).collect();
    let mut half: Vec<f64> = (0..p).map(|j| 0.5 * (hi[j] - lo[j]).max(1e-12)).collect();
    let steps: usize = if p == 1 { 2001 } else { 201 };
    let mut best = obj(&center);
    // data points are candidate minimizers too
    for i in 0..n {
        let xi: Vec<f64> = (0..p).map(|j| x[(i, j)]).collect();
        let v = obj(&xi);
        if v < best {
            best = v;
            center = xi;
        }
    }
    for _ in 0..40 {
        let mut arg = center.clone();
        let mut q = vec![0.0; p];
        let total = (steps as usize).pow(p as u32);
        for flat in 0..total {
            let mut f = flat;
            for j in 0..p {
                let k = f % steps;
                f /= steps;
                q[j] = center[j] - half[j] + 2.0 * half[j] * k as f64 / (steps - 1) as f64;
            }
            let v = obj(&q);
            if v < best {
                best = v;
                arg.copy_from_slice(&q);
            }
        }
        center = arg;
        for h in half.iter_mut() {
            *h *= 0.1;
        }
    }
    best
}

/// Smooth synthetic curves `mu(t) + c_i phi(t) + noise` on `m` equispaced
/// points. Rows `0..n_clean` are clean.
pub fn clean_curves(n: usize, m: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
    let t = DVector::from_iterator(m, (0..m).map(|l| l as f64 / (m - 1) as f64));
    let mut rng = rng_for(seed, 11);
    let mut values = DMatrix::zeros(n, m);
    for i in 0..n {
        let c: f64 = rng.sample(StandardNormal);
        let c2: f64 = rng.sample::<f64, _>(StandardNormal) * 0.3;
        for l in 0..m {
            let tl = t[l];
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
            values[(i, l)] = (std::f64::consts::PI * tl).sin()
                + c * (2.0 * std::f64::consts::PI * tl).sin()
                + c2 * (2.0 * std::f64::consts::PI * tl).cos()
                + noise;
        }
    }
    (t, values)
}

/// `n_clean` curves from [`clean_curves`] followed by six planted outliers:
/// three amplitude outliers (the mean shape scaled by 8) and three shape
/// outliers (a narrow bump or a high-frequency wiggle). Returns the design,
/// the values and the planted row indices.
pub fn planted_curves(n_clean: usize, m: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>, Vec<usize>) {
    let (t, clean) = clean_curves(n_clean + 6, m, seed);
    let mut values = clean;
    let pi = std::f64::consts::PI;
    let planted: Vec<usize> = (n_clean..n_clean + 6).collect();
    for (k, &i) in planted.iter().enumerate() {
        for l in 0..m {
            let tl = t[l];
            values[(i, l)] = match k {
                0..=2 => 8.0 * (pi * tl).sin() * (1.0 + 0.1 * k as f64),
                3 => (pi * tl).sin() + 5.0 * (-(tl - 0.3).powi(2) / 0.004).exp(),
                4 => (pi * tl).sin() + 2.0 * (14.0 * pi * tl).sin(),
                _ => (pi * tl).sin() - 5.0 * (-(tl - 0.75).powi(2) / 0.006).exp(),
            };
        }
    }
    (t, values, planted)
}

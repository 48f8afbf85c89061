use rand::Rng;

use crate::rng::rng_from_seed;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix storage mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * self.cols..(i + 1) * self.cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    fn tmul_vec(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, vi) in v.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius_norm(w: &Matrix) -> f64 {
    norm(&w.data)
}

/// Largest singular value by power iteration on `W^T W`.
///
/// Runs at most `iters` rounds and stops early once the estimate is stable
/// to machine precision. The zero matrix returns 0.
pub fn spectral_norm(w: &Matrix, iters: usize) -> f64 {
    let iters = iters.max(1);
    if w.rows == 0 || w.cols == 0 || w.data.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    // Fixed pseudo-random start: a constant vector can be orthogonal to the
    // top singular direction.
    let mut rng = rng_from_seed(0x5eed_5eed);
    let mut v: Vec<f64> = (0..w.cols).map(|_| rng.gen_range(0.5..1.5)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut wv = vec![0.0; w.rows];
    let mut sigma = 0.0;
    for _ in 0..iters {
        w.mul_vec(&v, &mut wv);
        let s = norm(&wv);
        if s == 0.0 {
            // Start vector in the null space; perturb deterministically.
            v.iter_mut().enumerate().for_each(|(i, x)| *x += 1.0 / (i + 2) as f64);
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            continue;
        }
        w.tmul_vec(&wv, &mut v);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let done = (s - sigma).abs() <= 1e-15 * s;
        sigma = s;
        if done {
            break;
        }
    }
    w.mul_vec(&v, &mut wv);
    norm(&wv).max(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn simple_norms() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 4), 10), 0.0);
        assert!((spectral_norm(&Matrix::identity(3), 50) - 1.0).abs() < 1e-12);
        let d = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm(&d, 200) - 3.0).abs() < 1e-10);
        assert!((frobenius_norm(&d) - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matches_svd() {
        let mut rng = rng_from_seed(42);
        for trial in 0..5 {
            let (r, c) = (10, 7 + trial);
            let data: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect();
            let w = Matrix::new(r, c, data.clone());
            let svd = nalgebra::DMatrix::from_row_slice(r, c, &data).svd(false, false);
            let top = svd.singular_values.max();
            let est = spectral_norm(&w, 5000);
            assert!((est - top).abs() / top < 1e-5, "{est} vs {top}");
        }
    }

    #[test]
    fn converged_estimate_is_stable() {
        let mut rng = rng_from_seed(3);
        let w = Matrix::new(6, 6, (0..36).map(|_| StandardNormal.sample(&mut rng)).collect());
        let a = spectral_norm(&w, 2000);
        let b = spectral_norm(&w, 20000);
        assert!((a - b).abs() / b <= 1e-6);
    }
}

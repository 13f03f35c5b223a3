//! Symmetric variable-band (skyline) storage and its Cholesky factorization.
//!
//! Row `i` stores the lower-triangular entries from column `first[i]` up to
//! the diagonal. Fill-in of a Cholesky factor stays inside this profile, so
//! the factor reuses the same layout.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// Builds a zero matrix whose row `i` is nonzero from column `first[i]`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "skyline row {i} starts after its diagonal");
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Self {
            first,
            start,
            data: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    fn index(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            None
        } else {
            Some(self.start[i] + j - self.first[i])
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)` (and implicitly `(j, i)`); panics outside the
    /// profile.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .index(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside skyline profile"));
        self.data[k] += v;
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.get(i, i)))
    }

    pub fn add_diagonal(&mut self, d: &DVector<f64>) {
        for i in 0..self.dim() {
            self.add(i, i, d[i]);
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let f = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            for (off, &a) in row.iter().enumerate() {
                let j = f + off;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place `L Lᵀ` factorization; fails if a pivot is not positive.
    pub fn cholesky(&self) -> Result<SkylineCholesky> {
        let mut l = self.clone();
        let n = l.dim();
        for i in 0..n {
            let fi = l.first[i];
            let si = l.start[i];
            for j in fi..=i {
                let fj = l.first[j];
                let sj = l.start[j];
                let k0 = fi.max(fj);
                let mut sum = l.data[si + j - fi];
                let ri = &l.data[si + k0 - fi..si + j - fi];
                let rj = &l.data[sj + k0 - fj..sj + j - fj];
                sum -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::LinearSolveFailure(format!(
                            "non-positive pivot {sum:e} at row {i}"
                        )));
                    }
                    l.data[si + i - fi] = sum.sqrt();
                } else {
                    l.data[si + j - fi] = sum / l.data[sj + j - fj];
                }
            }
        }
        Ok(SkylineCholesky { l })
    }
}

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.l;
        let n = l.dim();
        let mut y = b.clone();
        for i in 0..n {
            let f = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            let mut s = y[i];
            for (off, &a) in row[..row.len() - 1].iter().enumerate() {
                s -= a * y[f + off];
            }
            y[i] = s / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let f = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            y[i] /= row[row.len() - 1];
            let yi = y[i];
            for (off, &a) in row[..row.len() - 1].iter().enumerate() {
                y[f + off] -= a * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, seed: u64) -> (SkylineMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first: Vec<usize> = (0..n).map(|i| i.saturating_sub(rng.random_range(0..5))).collect();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in first[i]..i {
                let v = rng.random_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, i)] = 10.0 + rng.random_range(0.0..1.0);
        }
        let mut s = SkylineMatrix::new(first.clone());
        for i in 0..n {
            for j in first[i]..=i {
                s.add(i, j, a[(i, j)]);
            }
        }
        (s, a)
    }

    #[test]
    fn solve_matches_dense() {
        let (s, a) = random_banded(60, 1);
        let b = DVector::from_fn(60, |i, _| (i as f64).sin());
        let x = s.cholesky().unwrap().solve(&b);
        let dense = a.clone().cholesky().unwrap().solve(&b);
        assert!((x - &dense).norm() < 1e-12);
        assert!((s.mul_vec(&dense) - a * &dense).norm() < 1e-12);
    }

    #[test]
    fn indefinite_rejected() {
        let mut s = SkylineMatrix::new(vec![0, 0]);
        s.add(0, 0, 1.0);
        s.add(1, 0, 2.0);
        s.add(1, 1, 1.0);
        assert!(matches!(s.cholesky(), Err(Error::LinearSolveFailure(_))));
    }

    #[test]
    fn symmetric_access() {
        let mut s = SkylineMatrix::new(vec![0, 0, 1]);
        s.add(0, 1, 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert_eq!(s.get(2, 0), 0.0);
        assert_eq!(s.stored(), 1 + 2 + 2);
    }
}

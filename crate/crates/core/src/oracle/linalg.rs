//! Dense complex matrices for the oracles. Deliberately naive.

use num_complex::Complex64;

use crate::error::{Result, SonicError};

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self { rows: r, cols: c, data }
    }

    pub fn from_real(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self { rows, cols, data: values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Solve `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, rhs.rows);
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = a.norm_inf().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a.get(x, col).norm().total_cmp(&a.get(y, col).norm()))
                .unwrap();
            if a.get(pivot, col).norm() <= 1e-14 * scale {
                return Err(SonicError::Singular(format!("zero pivot in column {col}")));
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                for j in 0..m {
                    b.data.swap(pivot * m + j, col * m + j);
                }
            }
            let p = a.get(col, col);
            for row in col + 1..n {
                let f = a.get(row, col) / p;
                if f == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in col..n {
                    let v = a.get(row, j) - f * a.get(col, j);
                    a.set(row, j, v);
                }
                for j in 0..m {
                    let v = b.get(row, j) - f * b.get(col, j);
                    b.set(row, j, v);
                }
            }
        }
        let mut x = CMatrix::zeros(n, m);
        for j in 0..m {
            for row in (0..n).rev() {
                let mut acc = b.get(row, j);
                for k in row + 1..n {
                    acc -= a.get(row, k) * x.get(k, j);
                }
                x.set(row, j, acc / a.get(row, row));
            }
        }
        Ok(x)
    }
}

/// Matrix exponential by scaling and squaring with a degree-6 Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let norm = a.norm_inf();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a.scale(Complex64::new(0.5f64.powi(squarings as i32), 0.0));

    // Padé(6,6) coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
    const Q: usize = 6;
    let mut coeffs = [0.0f64; Q + 1];
    coeffs[0] = 1.0;
    for k in 1..=Q {
        coeffs[k] = coeffs[k - 1] * (Q - k + 1) as f64 / (k * (2 * Q - k + 1)) as f64;
    }
    let mut num = CMatrix::identity(n);
    let mut den = CMatrix::identity(n);
    let mut power = CMatrix::identity(n);
    for (k, &c) in coeffs.iter().enumerate().skip(1) {
        power = power.mul(&scaled);
        let term = power.scale(Complex64::new(c, 0.0));
        num = num.add(&term);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den = den.add(&term.scale(Complex64::new(sign, 0.0)));
    }
    let mut result = den.solve(&num).expect("Padé denominator is well conditioned after scaling");
    for _ in 0..squarings {
        result = result.mul(&result);
    }
    result
}

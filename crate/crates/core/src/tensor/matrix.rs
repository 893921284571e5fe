use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix with fixed dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        super::gemv(&self.data, self.rows, self.cols, x, &mut out);
        Ok(out)
    }

    /// `Mᵀ y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::shape(format!(
                "tr_matvec: ({}x{})ᵀ times vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        super::gemv_t_acc(&self.data, self.rows, self.cols, y, &mut out);
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                super::axpy(a, other.row(k), &mut out.data[r * other.cols..(r + 1) * other.cols]);
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| (0..r).all(|c| (self.get(r, c) - self.get(c, r)).abs() <= tol))
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_check_shapes() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(m.tr_matvec(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert!(m.matvec(&[1.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let mtm = m.transpose().matmul(&m).unwrap();
        assert_eq!(mtm.as_slice(), &[10.0, 14.0, 14.0, 20.0]);
        assert!(mtm.is_symmetric(0.0));
    }
}

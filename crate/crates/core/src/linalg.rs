//! Small dense linear algebra over any [`Field`].
//!
//! Two independent routes to a linear solve are provided: LU factorization
//! with partial pivoting (the production path) and Cramer's rule with
//! determinants from fraction-free Bareiss elimination (the cross-check).

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> DenseMatrix<T> {
    pub fn from_elem(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Fails when `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    /// Copy with column `j` replaced by `values`.
    pub fn with_column(&self, j: usize, values: &[T]) -> Self {
        let mut out = self.clone();
        for (i, v) in values.iter().enumerate().take(self.rows) {
            out.set(i, j, v.clone());
        }
        out
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl<T: Field> DenseMatrix<T> {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        self.rows_iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn scaled(&self, c: &T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.clone() * c.clone()).collect(),
        }
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        let mut best = T::zero();
        for j in 0..self.cols {
            let s = (0..self.rows).fold(T::zero(), |acc, i| acc + self.get(i, j).abs());
            if s > best {
                best = s;
            }
        }
        best
    }

    pub fn max_abs_off_diagonal(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j && self.get(i, j).abs() > best {
                    best = self.get(i, j).abs();
                }
            }
        }
        best
    }
}

/// LU factorization `P A = L U` with partial pivoting.
#[derive(Debug, Clone)]
pub struct LuFactorization<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
    sign_negative: bool,
    singular: bool,
}

impl<T: Field> LuFactorization<T> {
    pub fn new(a: &DenseMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign_negative = false;
        let mut singular = false;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in (k + 1)..n {
                let cand = lu.get(i, k).abs();
                if cand > best {
                    best = cand;
                    p = i;
                }
            }
            if best.is_zero() {
                singular = true;
                continue;
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
                sign_negative = !sign_negative;
            }
            let pivot = lu.get(k, k).clone();
            for i in (k + 1)..n {
                let factor = lu.get(i, k).clone() / pivot.clone();
                lu.set(i, k, factor.clone());
                for j in (k + 1)..n {
                    let v = lu.get(i, j).clone() - factor.clone() * lu.get(k, j).clone();
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            sign_negative,
            singular,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn determinant(&self) -> T {
        if self.singular {
            return T::zero();
        }
        let mut det = (0..self.dim()).fold(T::one(), |acc, i| acc * self.lu.get(i, i).clone());
        if self.sign_negative {
            det = -det;
        }
        det
    }

    /// Solves `A x = b` with the stored factors.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        if self.singular {
            return Err(Error::SingularSystem { det: 0.0 });
        }
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for i in 0..n {
            for j in 0..i {
                let v = y[i].clone() - self.lu.get(i, j).clone() * y[j].clone();
                y[i] = v;
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let v = y[i].clone() - self.lu.get(i, j).clone() * y[j].clone();
                y[i] = v;
            }
            y[i] = y[i].clone() / self.lu.get(i, i).clone();
        }
        Ok(y)
    }

    pub fn inverse(&self) -> Result<DenseMatrix<T>> {
        let n = self.dim();
        let mut inv = DenseMatrix::from_elem(n, n, T::zero());
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.solve(&e)?;
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        Ok(inv)
    }
}

/// Determinant by fraction-free (Bareiss) elimination with row pivoting.
///
/// Exact for rational scalars; independent of [`LuFactorization`].
pub fn bareiss_determinant<T: Field>(a: &DenseMatrix<T>) -> Result<T> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(T::one());
    }
    let mut m = a.clone();
    let mut negate = false;
    let mut prev = T::one();
    for k in 0..n - 1 {
        let mut p = k;
        let mut best = m.get(k, k).abs();
        for i in (k + 1)..n {
            let cand = m.get(i, k).abs();
            if cand > best {
                best = cand;
                p = i;
            }
        }
        if best.is_zero() {
            return Ok(T::zero());
        }
        if p != k {
            m.swap_rows(p, k);
            negate = !negate;
        }
        let pivot = m.get(k, k).clone();
        for i in (k + 1)..n {
            for j in (k + 1)..n {
                let v = (m.get(i, j).clone() * pivot.clone()
                    - m.get(i, k).clone() * m.get(k, j).clone())
                    / prev.clone();
                m.set(i, j, v);
            }
            m.set(i, k, T::zero());
        }
        prev = pivot;
    }
    let det = m.get(n - 1, n - 1).clone();
    Ok(if negate { -det } else { det })
}

/// Solves `A x = b` by Cramer's rule: `x_j = det(A_j) / det(A)` where `A_j`
/// has column `j` replaced by `b`.
pub fn cramer_solve<T: Field>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side of length {} for a {}x{} system",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let det = bareiss_determinant(a)?;
    if det.is_zero() {
        return Err(Error::SingularSystem { det: 0.0 });
    }
    (0..a.ncols())
        .map(|j| Ok(bareiss_determinant(&a.with_column(j, b))? / det.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn r(n: i64, d: i64) -> Ratio<i64> {
        Ratio::new(n, d)
    }

    #[test]
    fn lu_and_bareiss_agree_on_small_matrix() {
        let a = DenseMatrix::from_rows(vec![
            vec![2.0, 1.0, 1.0],
            vec![4.0, -6.0, 0.0],
            vec![-2.0, 7.0, 2.0f64],
        ])
        .unwrap();
        let lu = LuFactorization::new(&a).unwrap();
        assert!((lu.determinant() - (-16.0)).abs() < 1e-12);
        assert!((bareiss_determinant(&a).unwrap() - (-16.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_rational_determinant() {
        let a = DenseMatrix::from_rows(vec![vec![r(1, 1), r(-42, 100)], vec![r(-33, 100), r(1, 1)]])
            .unwrap();
        assert_eq!(bareiss_determinant(&a).unwrap(), r(8614, 10000));
        assert_eq!(LuFactorization::new(&a).unwrap().determinant(), r(8614, 10000));
    }

    #[test]
    fn cramer_matches_lu_exactly_over_rationals() {
        let a = DenseMatrix::from_rows(vec![
            vec![r(1, 1), r(-1, 5), r(-1, 3)],
            vec![r(-1, 2), r(1, 1), r(0, 1)],
            vec![r(-1, 7), r(-2, 7), r(1, 1)],
        ])
        .unwrap();
        let b = vec![r(3, 1), r(-1, 2), r(5, 4)];
        let x1 = cramer_solve(&a, &b).unwrap();
        let x2 = LuFactorization::new(&a).unwrap().solve(&b).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(a.mul_vec(&x1), b);
    }

    #[test]
    fn singular_matrix_detected() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let lu = LuFactorization::new(&a).unwrap();
        assert_eq!(lu.determinant(), 0.0);
        assert!(matches!(lu.solve(&[1.0, 1.0]), Err(Error::SingularSystem { .. })));
        assert!(matches!(cramer_solve(&a, &[1.0, 1.0]), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let a = DenseMatrix::from_elem(2, 3, 0.0);
        assert!(matches!(LuFactorization::new(&a), Err(Error::NotSquare { rows: 2, cols: 3 })));
        assert!(matches!(bareiss_determinant(&a), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, -0.42], vec![-0.33, 1.0f64]]).unwrap();
        let inv = LuFactorization::new(&a).unwrap().inverse().unwrap();
        for j in 0..2 {
            let col = a.mul_vec(&inv.column(j));
            for (i, v) in col.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-14f64);
            }
        }
    }
}

//! Dense row-major matrices and the small linear-algebra kernel used by the
//! curvature and escape-time tooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite entry at index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {} columns vs vector of length {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute asymmetry `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `(m + mᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<Matrix> {
        self.require_square()?;
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        Ok(s)
    }

    fn require_square(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// One line per row, comma separated, shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Matrix> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Matrix::from_rows(&rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Matrix> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Sum of the diagonal.
pub fn trace(m: &Matrix) -> Result<f64> {
    m.require_square()?;
    Ok((0..m.rows).map(|i| m.get(i, i)).sum())
}

/// One eigenpair of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized first; asymmetry above `1e-9` (relative to the
/// largest entry) is rejected. Eigenpairs are returned with eigenvalues in
/// descending order and unit-norm eigenvectors.
pub fn sym_eigen(m: &Matrix) -> Result<Vec<EigenPair>> {
    m.require_square()?;
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite entry".into()));
    }
    let n = m.rows;
    let scale = m.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    if m.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::Data(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            m.asymmetry()
        )));
    }
    let mut a = m.symmetrized()?;
    let mut v = Matrix::identity(n);

    let total = a.frobenius_norm();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // tan of the rotation angle, smaller root for stability
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|j| EigenPair {
            value: a.get(j, j),
            vector: (0..n).map(|i| v.get(i, j)).collect(),
        })
        .collect();
    pairs.sort_by(|x, y| y.value.total_cmp(&x.value));
    Ok(pairs)
}

/// Rebuild `V Λ Vᵀ` from eigenpairs.
pub fn reconstruct(pairs: &[EigenPair]) -> Matrix {
    let n = pairs.len();
    let mut m = Matrix::zeros(n, n);
    for pair in pairs {
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] += pair.value * pair.vector[i] * pair.vector[j];
            }
        }
    }
    m
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, 0);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = StandardNormal.sample(&mut rng);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn diagonal_eigenvalues() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert_eq!(e[0].value, 2.0);
        assert_eq!(e[1].value, 1.0);
    }

    #[test]
    fn swap_matrix_eigenvalues() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert!((e[0].value - 1.0).abs() < 1e-14);
        assert!((e[1].value + 1.0).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_trace_identity() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 9);
            let m = random_symmetric(n, seed);
            let e = sym_eigen(&m).unwrap();
            let r = reconstruct(&e);
            let diff: f64 = m
                .data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-8 * m.frobenius_norm(), "seed {seed}: {diff}");
            let tr = trace(&m).unwrap();
            let sum: f64 = e.iter().map(|p| p.value).sum();
            assert!((tr - sum).abs() <= 1e-8 * tr.abs().max(1.0));
            for w in e.windows(2) {
                assert!(w[0].value >= w[1].value);
            }
            for p in &e {
                assert!((norm_sq(&p.vector) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_errors() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(sym_eigen(&m), Err(Error::Dimension(_))));
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&m), Err(Error::Data(_))));
        assert!(matches!(
            Matrix::from_vec(1, 1, vec![f64::NAN]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn trace_examples() {
        assert_eq!(trace(&Matrix::identity(3)).unwrap(), 3.0);
        let m = Matrix::from_rows(&[vec![2.0, 5.0], vec![7.0, 1.0]]).unwrap();
        assert_eq!(trace(&m).unwrap(), 3.0);
        assert!(matches!(
            trace(&Matrix::zeros(2, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn csv_and_json_are_bit_exact() {
        let m = Matrix::from_rows(&[
            vec![0.1, -1e-300, 1.0 / 3.0],
            vec![6.02214076e23, f64::MIN_POSITIVE, -0.0],
        ])
        .unwrap();
        let back = Matrix::from_csv(&m.to_csv()).unwrap();
        let back_json = Matrix::from_json(&m.to_json()).unwrap();
        for (a, (b, c)) in m.data().iter().zip(back.data().iter().zip(back_json.data())) {
            assert_eq!(a.to_bits(), b.to_bits());
            assert_eq!(a.to_bits(), c.to_bits());
        }
        assert!(Matrix::from_json(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}

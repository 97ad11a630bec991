//! Dense symmetric matrix storage and the factorizations the sampler leans on.
//!
//! Storage is dense on purpose: the per-column conditional needs dense rows of
//! the submatrix inverse, so sparsity lives in the screen set, not here. All
//! indices in the library API are 0-based; the CLI converts to 1-based output.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Pivots at or below this floor abort the rank-one inverse update.
pub const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum MatError {
    /// The leading minor of the given order (1-based) is not positive.
    #[error("matrix not positive definite: leading minor of order {0} is not positive")]
    NotPositiveDefinite(usize),
    #[error("degenerate pivot at index {index}: {value:e}")]
    DegeneratePivot { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Dense symmetric p x p matrix. The lower triangle is authoritative;
/// mutation through [`SymMatrix::set`] keeps both triangles in sync.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    pub fn zeros(p: usize) -> Self {
        assert!(p >= 1, "dimension must be at least 1");
        SymMatrix {
            data: Array2::zeros((p, p)),
        }
    }

    pub fn identity(p: usize) -> Self {
        let mut m = Self::zeros(p);
        for j in 0..p {
            m.data[[j, j]] = 1.0;
        }
        m
    }

    /// Builds from row-major data, mirroring the lower triangle onto the
    /// upper so the symmetry invariant holds exactly.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatError> {
        let p = rows.len();
        if p == 0 {
            return Err(MatError::DimMismatch("empty matrix".into()));
        }
        let mut data = Array2::zeros((p, p));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(MatError::DimMismatch(format!(
                    "row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        Ok(Self::from_lower_of(data))
    }

    /// Wraps a square array, taking the lower triangle as authoritative.
    pub fn from_lower_of(a: Array2<f64>) -> Self {
        let p = a.nrows();
        assert_eq!(p, a.ncols(), "matrix must be square");
        let mut data = a;
        for i in 0..p {
            for j in (i + 1)..p {
                data[[i, j]] = data[[j, i]];
            }
        }
        SymMatrix { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[[j, k]]
    }

    /// Sets both (j,k) and (k,j).
    #[inline]
    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[[j, k]] = v;
        self.data[[k, j]] = v;
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference; matrices must share dimensions.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Partition of a symmetric matrix around one target column: the submatrix
/// with that row/column deleted, the deleted column's off-diagonal entries,
/// and its diagonal entry.
#[derive(Clone, Debug)]
pub struct PartitionView {
    pub target: usize,
    pub sigma11: SymMatrix,
    pub sigma12: Array1<f64>,
    pub sigma22: f64,
}

impl PartitionView {
    /// Splits `a` around column `j` (0-based).
    pub fn split(a: &SymMatrix, j: usize) -> Result<Self, MatError> {
        let p = a.dim();
        if j >= p {
            return Err(MatError::IndexOutOfRange { index: j, dim: p });
        }
        if p < 2 {
            return Err(MatError::DimMismatch(
                "cannot partition a 1x1 matrix".into(),
            ));
        }
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let mut s11 = SymMatrix::zeros(p - 1);
        for (r, &gr) in rest.iter().enumerate() {
            for (c, &gc) in rest.iter().enumerate() {
                s11.data[[r, c]] = a.data[[gr, gc]];
            }
        }
        let sigma12 = Array1::from_iter(rest.iter().map(|&k| a.data[[k, j]]));
        Ok(PartitionView {
            target: j,
            sigma11: s11,
            sigma12,
            sigma22: a.data[[j, j]],
        })
    }

    /// Reassembles the source matrix. Round-trips bit-identically.
    pub fn reassemble(&self) -> SymMatrix {
        let p = self.sigma11.dim() + 1;
        let j = self.target;
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let mut out = SymMatrix::zeros(p);
        for (r, &gr) in rest.iter().enumerate() {
            for (c, &gc) in rest.iter().enumerate() {
                out.data[[gr, gc]] = self.sigma11.data[[r, c]];
            }
        }
        for (r, &gr) in rest.iter().enumerate() {
            out.data[[gr, j]] = self.sigma12[r];
            out.data[[j, gr]] = self.sigma12[r];
        }
        out.data[[j, j]] = self.sigma22;
        out
    }
}

/// Lower-triangular Cholesky factor, `L * L^T = A`. Fails with the 1-based
/// order of the first non-positive leading minor.
pub fn cholesky_factor(a: &SymMatrix) -> Result<Array2<f64>, MatError> {
    cholesky_of_array(a.as_array())
}

pub(crate) fn cholesky_of_array(a: &Array2<f64>) -> Result<Array2<f64>, MatError> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        // Off-diagonal entries of row j.
        for k in 0..j {
            let mut s = a[[j, k]];
            let (row_j, row_k) = (l.row(j), l.row(k));
            for i in 0..k {
                s -= row_j[i] * row_k[i];
            }
            l[[j, k]] = s / l[[k, k]];
        }
        let mut d = a[[j, j]];
        let row_j = l.row(j);
        for i in 0..j {
            d -= row_j[i] * row_j[i];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(MatError::NotPositiveDefinite(j + 1));
        }
        l[[j, j]] = d.sqrt();
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`, in place.
pub(crate) fn solve_lower_inplace(l: &Array2<f64>, b: &mut [f64]) {
    let p = l.nrows();
    for i in 0..p {
        let row = l.row(i);
        let mut s = b[i];
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / row[i];
    }
}

/// Solves `L^T x = b` for lower-triangular `L`, in place.
pub(crate) fn solve_lower_transpose_inplace(l: &Array2<f64>, b: &mut [f64]) {
    let p = l.nrows();
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Full inverse of a positive definite matrix via its Cholesky factor.
pub fn full_inverse(a: &SymMatrix) -> Result<SymMatrix, MatError> {
    Ok(SymMatrix::from_lower_of(inverse_of_array(a.as_array())?))
}

pub(crate) fn inverse_of_array(a: &Array2<f64>) -> Result<Array2<f64>, MatError> {
    let l = cholesky_of_array(a)?;
    let p = a.nrows();
    // Invert L in place: L^{-1} is lower triangular.
    let mut linv = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        linv[[j, j]] = 1.0 / l[[j, j]];
        for i in (j + 1)..p {
            let mut s = 0.0;
            for k in j..i {
                s += l[[i, k]] * linv[[k, j]];
            }
            linv[[i, j]] = -s / l[[i, i]];
        }
    }
    // A^{-1} = L^{-T} L^{-1}; fill the lower triangle and mirror.
    let mut inv = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = 0.0;
            // Sum over k >= max(i, j); linv[k, i] and linv[k, j] are nonzero
            // only for k >= column index.
            for k in i..p {
                s += linv[[k, i]] * linv[[k, j]];
            }
            inv[[i, j]] = s;
            inv[[j, i]] = s;
        }
    }
    Ok(inv)
}

/// Recovers the inverse of `Sigma` with row/column `j` deleted from
/// `Omega = Sigma^{-1}` in O(p^2): the (p-1) x (p-1) block inverse equals
/// `Omega_11 - omega_12 omega_12^T / omega_22` after rotating `j` last.
pub fn woodbury_submatrix_inverse(omega: &SymMatrix, j: usize) -> Result<SymMatrix, MatError> {
    let p = omega.dim();
    if j >= p {
        return Err(MatError::IndexOutOfRange { index: j, dim: p });
    }
    if p < 2 {
        return Err(MatError::DimMismatch(
            "cannot delete a column from a 1x1 matrix".into(),
        ));
    }
    let w = embedded_submatrix_inverse(omega.as_array(), j)?;
    let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let mut out = SymMatrix::zeros(p - 1);
    for (r, &gr) in rest.iter().enumerate() {
        for c in 0..=r {
            let v = w[[gr, rest[c]]];
            out.data[[r, c]] = v;
            out.data[[c, r]] = v;
        }
    }
    Ok(out)
}

/// Same rank-one update kept at full dimension: returns `W` with
/// `W[rest, rest]` equal to the deleted-submatrix inverse and row/column `j`
/// exactly zero. The sampler works with this form to avoid index remapping.
pub(crate) fn embedded_submatrix_inverse(
    omega: &Array2<f64>,
    j: usize,
) -> Result<Array2<f64>, MatError> {
    let p = omega.nrows();
    let pivot = omega[[j, j]];
    if pivot <= PIVOT_FLOOR {
        return Err(MatError::DegeneratePivot {
            index: j,
            value: pivot,
        });
    }
    let col_j = omega.column(j).to_owned();
    let mut w = omega.clone();
    let inv_pivot = 1.0 / pivot;
    for r in 0..p {
        let cr = col_j[r] * inv_pivot;
        if cr == 0.0 {
            continue;
        }
        let mut row = w.row_mut(r);
        for c in 0..p {
            row[c] -= cr * col_j[c];
        }
    }
    // The algebra zeroes row/column j; enforce it bitwise.
    w.row_mut(j).fill(0.0);
    w.column_mut(j).fill(0.0);
    Ok(w)
}

/// Symmetric permutation moving index `j` to the last position, shifting the
/// indices after `j` down by one.
pub fn rotate_to_last(a: &SymMatrix, j: usize) -> Result<SymMatrix, MatError> {
    let p = a.dim();
    if j >= p {
        return Err(MatError::IndexOutOfRange { index: j, dim: p });
    }
    let perm: Vec<usize> = (0..p).filter(|&k| k != j).chain(std::iter::once(j)).collect();
    Ok(permute(a, &perm))
}

/// Inverse of [`rotate_to_last`]: moves the last index back to position `j`.
pub fn rotate_from_last(a: &SymMatrix, j: usize) -> Result<SymMatrix, MatError> {
    let p = a.dim();
    if j >= p {
        return Err(MatError::IndexOutOfRange { index: j, dim: p });
    }
    let fwd: Vec<usize> = (0..p).filter(|&k| k != j).chain(std::iter::once(j)).collect();
    let mut inv = vec![0usize; p];
    for (new_pos, &old) in fwd.iter().enumerate() {
        inv[old] = new_pos;
    }
    Ok(permute(a, &inv))
}

fn permute(a: &SymMatrix, perm: &[usize]) -> SymMatrix {
    let p = a.dim();
    let mut out = SymMatrix::zeros(p);
    for r in 0..p {
        for c in 0..p {
            out.data[[r, c]] = a.data[[perm[r], perm[c]]];
        }
    }
    out
}

/// Reads a rectangular matrix from a comma-separated file. A first line with
/// any non-numeric field is treated as a header row and skipped.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>, MatError> {
    let text = std::fs::read_to_string(path).map_err(|e| MatError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<Array2<f64>, MatError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(MatError::CsvParse {
                            line: lineno + 1,
                            msg: format!("expected {w} fields, found {}", vals.len()),
                        });
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(e) => {
                // Only the first line may be a header.
                if rows.is_empty() && width.is_none() {
                    continue;
                }
                return Err(MatError::CsvParse {
                    line: lineno + 1,
                    msg: e.to_string(),
                });
            }
        }
    }
    let n = rows.len();
    let w = width.ok_or(MatError::CsvParse {
        line: 0,
        msg: "no data rows".into(),
    })?;
    let mut out = Array2::zeros((n, w));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Writes a matrix row-major as comma-separated values. Float formatting is
/// shortest-round-trip, so rewrites under identical inputs are byte-identical.
pub fn write_matrix_csv(
    path: &Path,
    a: &Array2<f64>,
    header: Option<&[String]>,
) -> Result<(), MatError> {
    let mut text = String::new();
    if let Some(names) = header {
        text.push_str(&names.join(","));
        text.push('\n');
    }
    for row in a.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                text.push(',');
            }
            let _ = write!(text, "{v}");
            first = false;
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| MatError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spd(p: usize, seed: u64) -> SymMatrix {
        // G G^T + p I is comfortably positive definite.
        let mut rng = crate::randdist::RngStream::new(seed, 7001);
        let mut g = Array2::<f64>::zeros((p, p));
        for v in g.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let mut a = SymMatrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                let mut s = if i == j { p as f64 } else { 0.0 };
                for k in 0..p {
                    s += g[[i, k]] * g[[j, k]];
                }
                a.set(i, j, s);
            }
        }
        a
    }

    fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        a.dot(b)
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_factor(&SymMatrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(l[[i, j]], want);
            }
        }
    }

    #[test]
    fn cholesky_2x2_closed_form() {
        let a = SymMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky_factor(&a).unwrap();
        assert!((l[[0, 0]] - 2.0).abs() < 1e-15);
        assert!((l[[1, 0]] - 1.0).abs() < 1e-15);
        assert!((l[[1, 1]] - 1.4142135623730951).abs() < 1e-15);
        // Direct multiplication oracle: L L^T must reproduce A.
        let llt = matmul(&l, &l.t().to_owned());
        for i in 0..2 {
            for j in 0..2 {
                assert!((llt[[i, j]] - a.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_indefinite_reports_minor() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(cholesky_factor(&a), Err(MatError::NotPositiveDefinite(2)));
    }

    #[test]
    fn cholesky_round_trip_bound() {
        for seed in 0..5 {
            let a = random_spd(8, seed);
            let l = cholesky_factor(&a).unwrap();
            let llt = matmul(&l, &l.t().to_owned());
            let mut err: f64 = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    err = err.max((llt[[i, j]] - a.get(i, j)).abs());
                }
            }
            assert!(err < 1e-12 * a.max_abs(), "err {err}");
        }
    }

    #[test]
    fn inverse_identity() {
        let inv = full_inverse(&SymMatrix::identity(4)).unwrap();
        assert_eq!(inv.max_abs_diff(&SymMatrix::identity(4)), 0.0);
    }

    #[test]
    fn inverse_2x2_closed_form() {
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let inv = full_inverse(&a).unwrap();
        // ad - bc = 3; inverse is [[2,-1],[-1,2]]/3.
        assert!((inv.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((inv.get(0, 1) + 1.0 / 3.0).abs() < 1e-15);
        assert!((inv.get(1, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_residual_oracle() {
        let a = random_spd(6, 42);
        let inv = full_inverse(&a).unwrap();
        let prod = matmul(a.as_array(), inv.as_array());
        let mut err: f64 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((prod[[i, j]] - want).abs());
            }
        }
        assert!(err < 1e-10, "residual {err}");
    }

    #[test]
    fn inverse_rejects_indefinite() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            full_inverse(&a),
            Err(MatError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn woodbury_identity_case() {
        let got = woodbury_submatrix_inverse(&SymMatrix::identity(3), 1).unwrap();
        assert_eq!(got.max_abs_diff(&SymMatrix::identity(2)), 0.0);
    }

    #[test]
    fn woodbury_2x2_case() {
        // Sigma = [[2,1],[1,2]] has inverse [[2/3,-1/3],[-1/3,2/3]]; deleting
        // the second row/column leaves Sigma_11 = [2] with inverse [0.5].
        let sigma = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let omega = full_inverse(&sigma).unwrap();
        let got = woodbury_submatrix_inverse(&omega, 1).unwrap();
        assert_eq!(got.dim(), 1);
        assert!((got.get(0, 0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        // Brute-force oracle: invert the deleted submatrix directly.
        for seed in 0..4 {
            let p = 5 + (seed as usize % 3);
            let a = random_spd(p, 100 + seed);
            let omega = full_inverse(&a).unwrap();
            for j in 0..p {
                let got = woodbury_submatrix_inverse(&omega, j).unwrap();
                let direct = full_inverse(&PartitionView::split(&a, j).unwrap().sigma11).unwrap();
                assert!(
                    got.max_abs_diff(&direct) < 1e-8,
                    "p={p} j={j} diff={}",
                    got.max_abs_diff(&direct)
                );
            }
        }
    }

    #[test]
    fn woodbury_property_random_spd_up_to_20() {
        let mut rng = crate::randdist::RngStream::new(99, 1);
        for _ in 0..20 {
            let p = 2 + (rng.random::<u32>() % 19) as usize;
            let a = random_spd(p, rng.random::<u64>());
            let omega = full_inverse(&a).unwrap();
            let j = (rng.random::<u32>() as usize) % p;
            let got = woodbury_submatrix_inverse(&omega, j).unwrap();
            let direct = full_inverse(&PartitionView::split(&a, j).unwrap().sigma11).unwrap();
            assert!(got.max_abs_diff(&direct) < 1e-8);
        }
    }

    #[test]
    fn woodbury_degenerate_pivot() {
        let mut omega = SymMatrix::identity(3);
        omega.set(1, 1, 0.0);
        assert!(matches!(
            woodbury_submatrix_inverse(&omega, 1),
            Err(MatError::DegeneratePivot { index: 1, .. })
        ));
    }

    #[test]
    fn rotate_last_is_noop() {
        let a = random_spd(4, 3);
        let r = rotate_to_last(&a, 3).unwrap();
        assert_eq!(r, a);
    }

    #[test]
    fn rotate_moves_diagonal_entry() {
        let a = SymMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 5.0],
            vec![3.0, 5.0, 6.0],
        ])
        .unwrap();
        let r = rotate_to_last(&a, 0).unwrap();
        assert_eq!(r.get(2, 2), 1.0);
        assert_eq!(r.get(0, 0), 4.0);
    }

    #[test]
    fn rotate_round_trip_bit_identical() {
        let a = random_spd(7, 11);
        for j in 0..7 {
            let fwd = rotate_to_last(&a, j).unwrap();
            let back = rotate_from_last(&fwd, j).unwrap();
            assert_eq!(back, a);
        }
    }

    #[test]
    fn partition_reassemble_round_trip() {
        let a = random_spd(6, 5);
        for j in 0..6 {
            let view = PartitionView::split(&a, j).unwrap();
            assert_eq!(view.reassemble(), a);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let a = random_spd(4, 8).into_array();
        write_matrix_csv(&path, &a, None).unwrap();
        let b = read_matrix_csv(&path).unwrap();
        assert_eq!(a, b);
        // With a header row.
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        write_matrix_csv(&path, &a, Some(&names)).unwrap();
        let c = read_matrix_csv(&path).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(matches!(
            parse_matrix_csv("1,2,3\n4,5\n"),
            Err(MatError::CsvParse { line: 2, .. })
        ));
    }
}

//! Dense linear algebra used throughout the crate.
//!
//! Storage and the symmetric eigen / SVD kernels come from `nalgebra`; this
//! module adds the ordering, sign and validation conventions the training code
//! relies on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix. Column `j` holds sample `j`.
pub type Matrix = DMatrix<f64>;

/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Sign with the convention `sgn(0) = +1`.
pub fn sgn(x: f64) -> Result<i8> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("sgn of non-finite value {x}")));
    }
    Ok(sign_bit(x))
}

/// `sgn` for values already known to be finite.
#[inline]
pub(crate) fn sign_bit(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// Rejects matrices that are empty or contain NaN / infinite entries.
pub fn ensure_valid(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

/// Builds a matrix from column-major data, validating shape and finiteness.
pub fn matrix_from_columns(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} values cannot fill a {rows}x{cols} matrix",
            data.len()
        )));
    }
    let m = Matrix::from_vec(rows, cols, data);
    ensure_valid(&m, "matrix")?;
    Ok(m)
}

/// Per-row mean of `x`.
pub fn row_means(x: &Matrix) -> Vector {
    let m = x.ncols() as f64;
    x.column_sum() / m
}

/// Sample covariance `(1/(m-1)) (X - mu 1^T)(X - mu 1^T)^T`.
pub fn covariance(x: &Matrix) -> Result<Matrix> {
    let m = x.ncols();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    let mu = row_means(x);
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mu;
    }
    let mut cov = &centered * centered.transpose();
    cov /= (m - 1) as f64;
    // Products of the same operand are symmetric up to rounding; make it exact.
    let d = cov.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_valid(a, "symmetric matrix")?;
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(mut v: Vector) -> Vector {
    let mut pivot: f64 = 0.0;
    for &x in v.iter() {
        if x.abs() > pivot.abs() + 1e-12 {
            pivot = x;
        }
    }
    if pivot < 0.0 {
        v.neg_mut();
    }
    v
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: Matrix,
}

/// The `k` eigenpairs of largest eigenvalue of symmetric `a`.
///
/// Eigenvectors are returned with their largest-magnitude component positive
/// so repeated calls on equal inputs give equal outputs.
pub fn top_eigenpairs(a: &Matrix, k: usize) -> Result<EigenPairs> {
    check_symmetric(a)?;
    let d = a.nrows();
    if k == 0 || k > d {
        return Err(Error::Dimension(format!(
            "requested {k} eigenvectors of a {d}x{d} matrix"
        )));
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut vectors = Matrix::zeros(d, k);
    let mut values = Vec::with_capacity(k);
    for (out, &idx) in order.iter().take(k).enumerate() {
        let v = canonical_sign(eig.eigenvectors.column(idx).into_owned());
        vectors.set_column(out, &v);
        values.push(eig.eigenvalues[idx]);
    }
    Ok(EigenPairs { values, vectors })
}

/// Orthonormal eigenvectors (as columns) for the `k` largest eigenvalues.
pub fn top_eigenvectors(a: &Matrix, k: usize) -> Result<Matrix> {
    Ok(top_eigenpairs(a, k)?.vectors)
}

/// Thin singular value decomposition `M = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `a x r` with orthonormal columns.
    pub u: Matrix,
    /// `r = min(a, b)` non-negative values, descending.
    pub singular_values: Vec<f64>,
    /// `b x r` with orthonormal columns.
    pub v: Matrix,
}

/// SVD for the small matrices met during initialization.
pub fn svd_small(m: &Matrix) -> Result<Svd> {
    ensure_valid(m, "svd input")?;
    let svd = nalgebra::SVD::new(m.clone(), true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Contract("SVD did not produce U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Contract("SVD did not produce V^T".into()))?;
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut uo = Matrix::zeros(m.nrows(), r);
    let mut vo = Matrix::zeros(m.ncols(), r);
    let mut sigma = Vec::with_capacity(r);
    for (out, &idx) in order.iter().enumerate() {
        uo.set_column(out, &u.column(idx));
        vo.set_column(out, &v_t.row(idx).transpose());
        sigma.push(svd.singular_values[idx]);
    }
    Ok(Svd {
        u: uo,
        singular_values: sigma,
        v: vo,
    })
}

/// Orthogonal factor of the QR decomposition of a square matrix, with the
/// column signs fixed so that `R` has a non-negative diagonal.
pub fn orthogonal_factor(a: &Matrix) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("orthogonal_factor needs a square matrix".into()));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    Ok(q)
}

/// Per-feature affine map `x -> (x - mean) * scale` fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vector,
    pub scale: Vector,
}

impl Standardizer {
    /// Zero-mean, unit-variance per row. Constant rows get scale 1.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let m = x.ncols();
        if m < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: m });
        }
        let mean = row_means(x);
        let mut scale = Vector::zeros(x.nrows());
        for i in 0..x.nrows() {
            let var = x
                .row(i)
                .iter()
                .map(|v| (v - mean[i]).powi(2))
                .sum::<f64>()
                / (m - 1) as f64;
            scale[i] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} features, data has {}",
                self.mean.len(),
                x.nrows()
            )));
        }
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            col -= &self.mean;
            col.component_mul_assign(&self.scale);
        }
        Ok(out)
    }
}

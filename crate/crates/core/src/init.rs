//! Starting points for training: ITQ codes, PCA weights, rectangular identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::network::{forward_to, LayerSchedule, Mode, NetworkParams};
use crate::numerics::{
    covariance, ensure_valid, orthogonal_factor, row_means, svd_small, top_eigenvectors, Matrix,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItqConfig {
    pub rotation_iterations: usize,
    pub seed: u64,
}

impl Default for ItqConfig {
    fn default() -> Self {
        Self {
            rotation_iterations: 50,
            seed: 0,
        }
    }
}

/// Output of [`itq`] with the fitted rotation and loss history.
#[derive(Debug, Clone)]
pub struct Itq {
    pub codes: CodeMatrix,
    /// Final `L x L` rotation.
    pub rotation: Matrix,
    /// Top-`L` principal directions of the centered data, one per column.
    pub projection: Matrix,
    /// `||B - R^T P||_F^2` after every half-step: code update then rotation update.
    pub losses: Vec<f64>,
    /// `||R^T R - I||_F` after every rotation update, the initial rotation included.
    pub orthogonality: Vec<f64>,
}

fn quantization_loss(codes: &Matrix, rotated: &Matrix) -> f64 {
    (codes - rotated).norm_squared()
}

fn signs(m: &Matrix) -> Matrix {
    m.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// Iterative quantization of the centered data onto its top-`bits` principal
/// directions.
///
/// 1. center `x` and project onto the top-`bits` PCA directions: `P = E^T Xc`;
/// 2. draw a random rotation `R` (QR of a seeded Gaussian matrix);
/// 3. alternate `B = sgn(R^T P)` and the orthogonal Procrustes update
///    `R = U V^T` with `P B^T = U S V^T`;
/// 4. return `B = sgn(R^T P)` for the final rotation.
pub fn itq(x: &Matrix, bits: usize, cfg: &ItqConfig) -> Result<Itq> {
    ensure_valid(x, "ITQ input")?;
    let (d, m) = x.shape();
    if bits == 0 || bits > d {
        return Err(Error::Dimension(format!(
            "ITQ code length {bits} must be between 1 and the data dimension {d}"
        )));
    }
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    if cfg.rotation_iterations == 0 {
        return Err(Error::Parameter("ITQ needs at least one rotation iteration".into()));
    }

    let mu = row_means(x);
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mu;
    }
    let projection = top_eigenvectors(&covariance(x)?, bits)?;
    let p = projection.transpose() * &centered;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gaussian = Matrix::from_fn(bits, bits, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut rotation = orthogonal_factor(&gaussian)?;
    let identity = Matrix::identity(bits, bits);
    let mut orthogonality = vec![(rotation.transpose() * &rotation - &identity).norm()];
    let mut losses = Vec::with_capacity(2 * cfg.rotation_iterations);

    for _ in 0..cfg.rotation_iterations {
        let rotated = rotation.transpose() * &p;
        let b = signs(&rotated);
        losses.push(quantization_loss(&b, &rotated));

        let svd = svd_small(&(&p * b.transpose()))?;
        rotation = &svd.u * svd.v.transpose();
        orthogonality.push((rotation.transpose() * &rotation - &identity).norm());
        losses.push(quantization_loss(&b, &(rotation.transpose() * &p)));
    }

    let codes = CodeMatrix::from_signs(&(rotation.transpose() * &p))?;
    Ok(Itq {
        codes,
        rotation,
        projection,
        losses,
        orthogonality,
    })
}

/// ITQ codes for `x` with `bits` bits per sample.
pub fn itq_codes(x: &Matrix, bits: usize, cfg: &ItqConfig) -> Result<CodeMatrix> {
    Ok(itq(x, bits, cfg)?.codes)
}

/// Weight matrix whose rows are the top eigenvectors of `cov(h_prev)`.
///
/// When `s_next` exceeds the input width only `s_l` orthonormal rows exist;
/// the remaining rows are seeded random unit vectors.
pub fn pca_weight_init(h_prev: &Matrix, s_next: usize, seed: u64) -> Result<Matrix> {
    if s_next == 0 {
        return Err(Error::Parameter("layer must have at least one unit".into()));
    }
    let width = h_prev.nrows();
    let cov = covariance(h_prev)?;
    let k = s_next.min(width);
    let vectors = top_eigenvectors(&cov, k)?;
    let mut w = Matrix::zeros(s_next, width);
    w.rows_mut(0, k).copy_from(&vectors.transpose());
    if s_next > width {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in width..s_next {
            let mut row: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            for (j, v) in row.into_iter().enumerate() {
                w[(i, j)] = v;
            }
        }
    }
    Ok(w)
}

/// `rows x cols` matrix with ones on the main diagonal.
pub fn rect_identity(rows: usize, cols: usize) -> Matrix {
    Matrix::identity(rows, cols)
}

/// Initial network parameters: zero biases and PCA weights computed layer by
/// layer on the forward activations. Unsupervised networks use the
/// rectangular identity for the reconstruction layer instead of PCA.
pub fn initial_params(schedule: &LayerSchedule, x: &Matrix, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(schedule.clone());
    let n = schedule.layers();
    let pca_layers = match schedule.mode() {
        Mode::Unsupervised => n - 2,
        Mode::Supervised => n - 1,
    };
    let mut h = x.clone();
    for l in 1..=pca_layers {
        let w = pca_weight_init(&h, schedule.units(l + 1), seed.wrapping_add(l as u64))?;
        *params.weight_mut(l) = w;
        if l < pca_layers {
            let trace = forward_to(&params, x, l + 1)?;
            h = trace.output(l + 1).clone();
        }
    }
    if schedule.mode() == Mode::Unsupervised {
        *params.weight_mut(n - 1) = rect_identity(schedule.units(n), schedule.units(n - 1));
    }
    Ok(params)
}

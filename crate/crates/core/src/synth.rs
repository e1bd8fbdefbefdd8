//! Seeded Gaussian-mixture datasets for experiments and tests.
//!
//! Cluster `c` has mean `r * s * Q e`, where `e` is `+e_{c/2}` for even `c` and
//! `-e_{c/2}` for odd `c`, `r = separation / sqrt(2)`, `s` is the noise scale
//! and `Q` a random orthogonal matrix. Any two means are therefore at least
//! `separation * sigma` apart. Samples are `mean + sigma * N(0, I)`, laid out
//! cluster by cluster.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{orthogonal_factor, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub clusters: usize,
    pub dims: usize,
    pub samples_per_cluster: usize,
    /// Extra held-out samples per cluster, returned separately.
    pub queries_per_cluster: usize,
    /// Minimum distance between cluster means, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            dims: 16,
            samples_per_cluster: 100,
            queries_per_cluster: 0,
            separation: 10.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub x: Matrix,
    pub labels: Vec<u32>,
    pub queries: Matrix,
    pub query_labels: Vec<u32>,
    /// Cluster means as columns.
    pub means: Matrix,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.dims == 0 || self.samples_per_cluster == 0 {
            return Err(Error::Parameter(
                "clusters, dims and samples per cluster must all be positive".into(),
            ));
        }
        if self.clusters > 2 * self.dims {
            return Err(Error::Parameter(format!(
                "at most {} clusters fit in {} dimensions",
                2 * self.dims,
                self.dims
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::Parameter(format!("bad separation {}", self.separation)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let d = spec.dims;
    let gaussian = Matrix::from_fn(d, d, |_, _| normal());
    let q = orthogonal_factor(&gaussian)?;
    let radius = spec.separation * spec.sigma / std::f64::consts::SQRT_2;
    let mut means = Matrix::zeros(d, spec.clusters);
    for c in 0..spec.clusters {
        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
        means.set_column(c, &(q.column(c / 2) * (sign * radius)));
    }
    let mut draw = |per: usize| {
        let mut x = Matrix::zeros(d, spec.clusters * per);
        let mut labels = Vec::with_capacity(spec.clusters * per);
        for c in 0..spec.clusters {
            for i in 0..per {
                let j = c * per + i;
                for r in 0..d {
                    x[(r, j)] = means[(r, c)] + spec.sigma * normal();
                }
                labels.push(c as u32);
            }
        }
        (x, labels)
    };
    let (x, labels) = draw(spec.samples_per_cluster);
    let (queries, query_labels) = draw(spec.queries_per_cluster);
    Ok(SynthData {
        x,
        labels,
        queries,
        query_labels,
        means,
    })
}

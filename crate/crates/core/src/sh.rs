//! Supervised hashing network.
//!
//! The last layer `H = H(n)` is the code layer. With `S` the pairwise label
//! matrix (`+1` for same-class pairs, `-1` otherwise) the objective is
//!
//! ```text
//! J = 1/(2m) ||H^T H / L - S||^2
//!   + l1/2   sum_l ||W(l)||^2
//!   + l2/(2m) ||H - B||^2
//!   + l3/2   ||H H^T / m - I||^2
//!   + l4/(2m) ||H 1||^2
//! ```
//!
//! and the code step is simply `B = sgn(H)`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::init::{initial_params, itq_codes, ItqConfig};
use crate::network::{backprop, forward, LayerSchedule, Mode, NetworkParams};
use crate::numerics::{ensure_valid, Matrix};
use crate::optimizer::LbfgsConfig;
use crate::uh::param_step;
use crate::{Penalties, Phase, TraceEntry, Trained};

#[derive(Debug, Clone, PartialEq)]
pub struct ShConfig {
    pub penalties: Penalties,
    /// Outer alternating iterations `T`.
    pub iterations: usize,
    pub schedule: LayerSchedule,
    pub lbfgs: LbfgsConfig,
    /// Samples kept per class before building the pairwise matrix.
    pub per_class_sample: Option<usize>,
    /// Largest allowed `m * m` for the dense pairwise label matrix.
    pub max_pairwise_entries: usize,
    pub itq_iterations: usize,
    pub seed: u64,
}

pub const DEFAULT_MAX_PAIRWISE_ENTRIES: usize = 1 << 26;

impl ShConfig {
    /// Defaults: `T = 5`, 3000 samples per class, 50 ITQ rotations.
    pub fn new(schedule: LayerSchedule) -> Self {
        Self {
            penalties: Penalties::SUPERVISED,
            iterations: 5,
            schedule,
            lbfgs: LbfgsConfig::default(),
            per_class_sample: Some(3000),
            max_pairwise_entries: DEFAULT_MAX_PAIRWISE_ENTRIES,
            itq_iterations: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalties.validate()?;
        self.lbfgs.validate()?;
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations (T) must be at least 1".into()));
        }
        if self.per_class_sample == Some(0) {
            return Err(Error::Parameter("per_class_sample must be at least 1".into()));
        }
        if self.itq_iterations == 0 {
            return Err(Error::Parameter("itq_iterations must be at least 1".into()));
        }
        if self.schedule.mode() != Mode::Supervised {
            return Err(Error::Parameter("supervised training needs a supervised schedule".into()));
        }
        Ok(())
    }
}

/// `S_ij = +1` when samples `i` and `j` share a label, `-1` otherwise.
pub fn pairwise_labels(labels: &[u32]) -> Matrix {
    let m = labels.len();
    Matrix::from_fn(m, m, |i, j| if labels[i] == labels[j] { 1.0 } else { -1.0 })
}

fn check_shapes(params: &NetworkParams, codes: &CodeMatrix, x: &Matrix, s: &Matrix) -> Result<()> {
    let sched = params.schedule();
    if sched.mode() != Mode::Supervised {
        return Err(Error::Parameter("expected a supervised network".into()));
    }
    if x.nrows() != sched.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, network expects {}",
            x.nrows(),
            sched.input_dim()
        )));
    }
    let m = x.ncols();
    if codes.bits() != sched.code_length() || codes.samples() != m {
        return Err(Error::Dimension(format!(
            "codes are {}x{}, expected {}x{m}",
            codes.bits(),
            codes.samples(),
            sched.code_length()
        )));
    }
    if s.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "pairwise matrix is {}x{}, expected {m}x{m}",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

/// Objective value and gradient, laid out like `params`.
pub fn evaluate(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    s: &Matrix,
    penalties: &Penalties,
) -> Result<(f64, NetworkParams)> {
    check_shapes(params, codes, x, s)?;
    let n = params.schedule().layers();
    let m = x.ncols() as f64;
    let trace = forward(params, x)?;
    let h = trace.output(n);
    let bits = h.nrows();
    let l = bits as f64;
    let b = codes.to_matrix();

    let sim_gap = h.transpose() * h / l - s;
    let binding_gap = h - &b;
    let gram_gap = h * h.transpose() / m - Matrix::identity(bits, bits);
    let row_sums = h.column_sum();

    let value = sim_gap.norm_squared() / (2.0 * m)
        + 0.5 * penalties.weight_decay * params.weight_norm_sq()
        + penalties.binding / (2.0 * m) * binding_gap.norm_squared()
        + 0.5 * penalties.independence * gram_gap.norm_squared()
        + penalties.balance / (2.0 * m) * row_sums.norm_squared();

    // Gradient with respect to Z(n); the last layer is linear.
    let sym = &sim_gap + sim_gap.transpose();
    let mut delta = (h * sym) / (m * l)
        + binding_gap * (penalties.binding / m)
        + (&gram_gap * h) * (2.0 * penalties.independence / m);
    let balance = &row_sums * (penalties.balance / m);
    for mut col in delta.column_iter_mut() {
        col += &balance;
    }
    let mut grads = NetworkParams::zeros(params.schedule().clone());
    backprop(params, &trace, delta, n, penalties.weight_decay, &mut grads)?;
    Ok((value, grads))
}

pub fn objective_sh(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    s: &Matrix,
    penalties: &Penalties,
) -> Result<f64> {
    Ok(evaluate(params, codes, x, s, penalties)?.0)
}

pub fn gradient_sh(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    s: &Matrix,
    penalties: &Penalties,
) -> Result<NetworkParams> {
    Ok(evaluate(params, codes, x, s, penalties)?.1)
}

/// Code step: `sgn(H)` is the global minimizer of `||H - B||^2` over binary `B`.
pub fn b_step_sh(h: &Matrix) -> Result<CodeMatrix> {
    CodeMatrix::from_signs(h)
}

/// Keeps at most `k` samples of each class, chosen uniformly without
/// replacement. Returns the kept column indices in ascending order, so the
/// original column order is preserved.
pub fn per_class_indices(labels: &[u32], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Parameter("per-class sample size must be at least 1".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(j);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_class.values() {
        if members.len() <= k {
            keep.extend_from_slice(members);
        } else {
            let picked = rand::seq::index::sample(&mut rng, members.len(), k);
            keep.extend(picked.iter().map(|i| members[i]));
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Per-class subsampling of a labelled dataset.
pub fn per_class_subsample(x: &Matrix, labels: &[u32], k: usize, seed: u64) -> Result<(Matrix, Vec<u32>)> {
    if labels.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{} labels for {} samples",
            labels.len(),
            x.ncols()
        )));
    }
    let keep = per_class_indices(labels, k, seed)?;
    Ok((x.select_columns(&keep), keep.iter().map(|&j| labels[j]).collect()))
}

/// Alternating supervised training.
///
/// Builds `S` (after optional per-class subsampling), starts from ITQ codes
/// and PCA weights for every layer with zero biases, runs one parameter step
/// and then `T` rounds of (code step, parameter step).
pub fn train_sh(x: &Matrix, labels: &[u32], cfg: &ShConfig) -> Result<Trained> {
    cfg.validate()?;
    ensure_valid(x, "training data")?;
    if labels.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{} labels for {} samples",
            labels.len(),
            x.ncols()
        )));
    }
    let sched = &cfg.schedule;
    if x.nrows() != sched.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, schedule expects {}",
            x.nrows(),
            sched.input_dim()
        )));
    }

    let samples = match cfg.per_class_sample {
        Some(k) => per_class_indices(labels, k, cfg.seed)?,
        None => (0..x.ncols()).collect(),
    };
    let m = samples.len();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    if m.saturating_mul(m) > cfg.max_pairwise_entries {
        return Err(Error::Parameter(format!(
            "{m} training samples need a {m}x{m} pairwise matrix, above the budget of {} entries; \
             lower per_class_sample or raise max_pairwise_entries",
            cfg.max_pairwise_entries
        )));
    }
    let x = x.select_columns(&samples);
    let y: Vec<u32> = samples.iter().map(|&j| labels[j]).collect();
    let s = pairwise_labels(&y);

    let itq_cfg = ItqConfig {
        rotation_iterations: cfg.itq_iterations,
        seed: cfg.seed,
    };
    let mut codes = itq_codes(&x, sched.code_length(), &itq_cfg)?;
    let mut params = initial_params(sched, &x, cfg.seed)?;
    let pen = cfg.penalties;

    let mut history = vec![TraceEntry {
        iteration: 0,
        phase: Phase::Init,
        objective: objective_sh(&params, &codes, &x, &s, &pen)?,
    }];
    let (p, value) = param_step(params, &cfg.lbfgs, |p| evaluate(p, &codes, &x, &s, &pen))?;
    params = p;
    history.push(TraceEntry {
        iteration: 0,
        phase: Phase::Params,
        objective: value,
    });
    let mut param_steps = 1;
    let mut code_steps = 0;

    for t in 1..=cfg.iterations {
        let h = forward(&params, &x)?.output(sched.layers()).clone();
        codes = b_step_sh(&h)?;
        code_steps += 1;
        history.push(TraceEntry {
            iteration: t,
            phase: Phase::Codes,
            objective: objective_sh(&params, &codes, &x, &s, &pen)?,
        });

        let (p, value) = param_step(params, &cfg.lbfgs, |p| evaluate(p, &codes, &x, &s, &pen))?;
        params = p;
        param_steps += 1;
        history.push(TraceEntry {
            iteration: t,
            phase: Phase::Params,
            objective: value,
        });
    }

    Ok(Trained {
        params,
        codes,
        history,
        code_steps,
        param_steps,
        samples,
    })
}

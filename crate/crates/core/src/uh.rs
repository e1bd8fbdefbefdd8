//! Unsupervised hashing network.
//!
//! With `H = H(n-1)` the code layer output, `B` the binary auxiliary codes and
//! `m` the number of samples, the objective is
//!
//! ```text
//! J = 1/(2m) ||X - W(n-1) B - c(n-1) 1^T||^2
//!   + l1/2   sum_l ||W(l)||^2
//!   + l2/(2m) ||H - B||^2
//!   + l3/2   ||H H^T / m - I||^2
//!   + l4/(2m) ||H 1||^2
//! ```
//!
//! Training alternates an L-BFGS step over all weights and biases with a
//! discrete cyclic coordinate descent over the rows of `B`.

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::init::{initial_params, itq_codes, ItqConfig};
use crate::network::{affine, backprop, forward_to, LayerSchedule, Mode, NetworkParams};
use crate::numerics::{ensure_valid, sign_bit, Matrix};
use crate::optimizer::{minimize, LbfgsConfig};
use crate::{Penalties, Phase, TraceEntry, Trained};

#[derive(Debug, Clone, PartialEq)]
pub struct UhConfig {
    pub penalties: Penalties,
    /// Outer alternating iterations `T`.
    pub iterations: usize,
    pub schedule: LayerSchedule,
    pub lbfgs: LbfgsConfig,
    /// Upper bound on full passes over the rows of `B` per code step.
    pub b_step_max_sweeps: usize,
    pub itq_iterations: usize,
    pub seed: u64,
}

impl UhConfig {
    /// Defaults: `T = 10`, five sweeps per code step, 50 ITQ rotations.
    pub fn new(schedule: LayerSchedule) -> Self {
        Self {
            penalties: Penalties::UNSUPERVISED,
            iterations: 10,
            schedule,
            lbfgs: LbfgsConfig::default(),
            b_step_max_sweeps: 5,
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
        if self.b_step_max_sweeps == 0 {
            return Err(Error::Parameter("b_step_max_sweeps must be at least 1".into()));
        }
        if self.itq_iterations == 0 {
            return Err(Error::Parameter("itq_iterations must be at least 1".into()));
        }
        if self.schedule.mode() != Mode::Unsupervised {
            return Err(Error::Parameter("unsupervised training needs an unsupervised schedule".into()));
        }
        Ok(())
    }
}

fn check_shapes(params: &NetworkParams, codes: &CodeMatrix, x: &Matrix) -> Result<()> {
    let s = params.schedule();
    if s.mode() != Mode::Unsupervised {
        return Err(Error::Parameter("expected an unsupervised network".into()));
    }
    if x.nrows() != s.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, network expects {}",
            x.nrows(),
            s.input_dim()
        )));
    }
    if codes.bits() != s.code_length() || codes.samples() != x.ncols() {
        return Err(Error::Dimension(format!(
            "codes are {}x{}, expected {}x{}",
            codes.bits(),
            codes.samples(),
            s.code_length(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Objective value and its gradient, laid out like `params`.
pub fn evaluate(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    penalties: &Penalties,
) -> Result<(f64, NetworkParams)> {
    check_shapes(params, codes, x)?;
    let n = params.schedule().layers();
    let code_layer = n - 1;
    let m = x.ncols() as f64;
    let trace = forward_to(params, x, code_layer)?;
    let h = trace.output(code_layer);
    let b = codes.to_matrix();
    let bits = h.nrows();

    let w_out = params.weight(n - 1);
    let residual = x - affine(w_out, &b, params.bias(n - 1));
    let binding_gap = h - &b;
    let gram_gap = h * h.transpose() / m - Matrix::identity(bits, bits);
    let row_sums = h.column_sum();

    let value = residual.norm_squared() / (2.0 * m)
        + 0.5 * penalties.weight_decay * params.weight_norm_sq()
        + penalties.binding / (2.0 * m) * binding_gap.norm_squared()
        + 0.5 * penalties.independence * gram_gap.norm_squared()
        + penalties.balance / (2.0 * m) * row_sums.norm_squared();

    let mut grads = NetworkParams::zeros(params.schedule().clone());
    *grads.weight_mut(n - 1) = -(&residual * b.transpose()) / m + w_out * penalties.weight_decay;
    *grads.bias_mut(n - 1) = -residual.column_sum() / m;

    // Gradient with respect to Z(n-1); the code layer is linear.
    let mut delta = binding_gap * (penalties.binding / m)
        + (&gram_gap * h) * (2.0 * penalties.independence / m);
    let balance = &row_sums * (penalties.balance / m);
    for mut col in delta.column_iter_mut() {
        col += &balance;
    }
    backprop(params, &trace, delta, code_layer, penalties.weight_decay, &mut grads)?;
    Ok((value, grads))
}

/// Objective value at `(params, codes)`.
pub fn objective_uh(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    penalties: &Penalties,
) -> Result<f64> {
    Ok(evaluate(params, codes, x, penalties)?.0)
}

/// Analytic gradient of [`objective_uh`] with respect to all weights and biases.
pub fn gradient_uh(
    params: &NetworkParams,
    codes: &CodeMatrix,
    x: &Matrix,
    penalties: &Penalties,
) -> Result<NetworkParams> {
    Ok(evaluate(params, codes, x, penalties)?.1)
}

/// Code-step objective `||X - W(n-1) B - c(n-1) 1^T||^2 + l2 ||H(n-1) - B||^2`.
pub fn b_step_objective(
    params: &NetworkParams,
    x: &Matrix,
    codes: &CodeMatrix,
    binding: f64,
) -> Result<f64> {
    check_shapes(params, codes, x)?;
    let n = params.schedule().layers();
    let trace = forward_to(params, x, n - 1)?;
    let b = codes.to_matrix();
    let residual = x - affine(params.weight(n - 1), &b, params.bias(n - 1));
    Ok(residual.norm_squared() + binding * (trace.output(n - 1) - b).norm_squared())
}

/// Outcome of the coordinate descent over code rows.
#[derive(Debug, Clone)]
pub struct CodeStep {
    pub codes: CodeMatrix,
    /// Full passes over the rows that were performed.
    pub sweeps: usize,
    /// True when the last pass changed no row.
    pub converged: bool,
}

/// Discrete cyclic coordinate descent on the code rows.
///
/// With `V = X - c 1^T`, `Q = W^T V + l2 H` and `G = W^T W`, row `k` is set to
/// `sgn(q_k - sum_{i != k} G_ki b_i)`, the exact minimizer over that row with
/// the other rows fixed. Rows are visited in ascending order; passes repeat
/// until one changes nothing or `max_sweeps` is reached.
pub fn dcc(
    params: &NetworkParams,
    x: &Matrix,
    start: &CodeMatrix,
    binding: f64,
    max_sweeps: usize,
) -> Result<CodeStep> {
    check_shapes(params, start, x)?;
    let n = params.schedule().layers();
    let trace = forward_to(params, x, n - 1)?;
    let h = trace.output(n - 1);
    let w = params.weight(n - 1);
    let mut v = x.clone();
    for mut col in v.column_iter_mut() {
        col -= params.bias(n - 1);
    }
    let q = w.transpose() * v + h * binding;
    let gram = w.transpose() * w;
    let (bits, m) = (start.bits(), start.samples());
    let mut b = start.to_matrix();

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for k in 0..bits {
            for j in 0..m {
                let mut t = q[(k, j)];
                for i in 0..bits {
                    if i != k {
                        t -= gram[(k, i)] * b[(i, j)];
                    }
                }
                let new = f64::from(sign_bit(t));
                if new != b[(k, j)] {
                    b[(k, j)] = new;
                    changed = true;
                }
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(CodeStep {
        codes: CodeMatrix::from_signs(&b)?,
        sweeps,
        converged,
    })
}

/// Code step: minimizes [`b_step_objective`] over `B` by [`dcc`].
pub fn b_step_uh(
    params: &NetworkParams,
    x: &Matrix,
    start: &CodeMatrix,
    binding: f64,
    max_sweeps: usize,
) -> Result<CodeMatrix> {
    Ok(dcc(params, x, start, binding, max_sweeps)?.codes)
}

/// L-BFGS over all weights and biases with the codes fixed, warm-started at `params`.
pub(crate) fn param_step<F>(params: NetworkParams, lbfgs: &LbfgsConfig, mut eval: F) -> Result<(NetworkParams, f64)>
where
    F: FnMut(&NetworkParams) -> Result<(f64, NetworkParams)>,
{
    let schedule = params.schedule().clone();
    let res = minimize(
        |flat: &[f64]| {
            let p = NetworkParams::from_flat(schedule.clone(), flat)?;
            let (v, g) = eval(&p)?;
            Ok((v, g.to_flat()))
        },
        params.to_flat(),
        lbfgs,
    )?;
    Ok((NetworkParams::from_flat(schedule, &res.x)?, res.value))
}

/// Alternating training.
///
/// ITQ codes and PCA / rectangular-identity weights with zero biases start the
/// run; one parameter step follows, then `T` rounds of (code step, parameter
/// step), each L-BFGS call warm-started from the previous parameters. The
/// history holds the objective at the start and after every half-step.
pub fn train_uh(x: &Matrix, cfg: &UhConfig) -> Result<Trained> {
    cfg.validate()?;
    ensure_valid(x, "training data")?;
    let s = &cfg.schedule;
    if x.nrows() != s.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, schedule expects {}",
            x.nrows(),
            s.input_dim()
        )));
    }
    if x.ncols() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.ncols() });
    }

    let itq_cfg = ItqConfig {
        rotation_iterations: cfg.itq_iterations,
        seed: cfg.seed,
    };
    let mut codes = itq_codes(x, s.code_length(), &itq_cfg)?;
    let mut params = initial_params(s, x, cfg.seed)?;
    let pen = cfg.penalties;

    let mut history = vec![TraceEntry {
        iteration: 0,
        phase: Phase::Init,
        objective: objective_uh(&params, &codes, x, &pen)?,
    }];

    let (p, value) = param_step(params, &cfg.lbfgs, |p| evaluate(p, &codes, x, &pen))?;
    params = p;
    history.push(TraceEntry {
        iteration: 0,
        phase: Phase::Params,
        objective: value,
    });
    let mut param_steps = 1;
    let mut code_steps = 0;

    for t in 1..=cfg.iterations {
        codes = b_step_uh(&params, x, &codes, pen.binding, cfg.b_step_max_sweeps)?;
        code_steps += 1;
        history.push(TraceEntry {
            iteration: t,
            phase: Phase::Codes,
            objective: objective_uh(&params, &codes, x, &pen)?,
        });

        let (p, value) = param_step(params, &cfg.lbfgs, |p| evaluate(p, &codes, x, &pen))?;
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
        samples: (0..x.ncols()).collect(),
    })
}

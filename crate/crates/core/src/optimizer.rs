//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The search direction comes from the usual two-loop recursion over the last
//! `memory` curvature pairs, scaled by `s^T y / y^T y`. Step lengths are found
//! by bracketing followed by safeguarded cubic interpolation. Every accepted
//! step satisfies
//!
//! ```text
//! f(x + a d) <= f(x) + c1 a g^T d
//! |g(x + a d)^T d| <= c2 |g^T d|
//! ```
//!
//! so the accepted objective values never increase.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `max_i |g_i|` drops to this value.
    pub grad_tolerance: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 50,
            grad_tolerance: 1e-6,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 20,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Parameter("L-BFGS memory must be at least 1".into()));
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Parameter(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if !self.grad_tolerance.is_finite() || self.grad_tolerance < 0.0 {
            return Err(Error::Parameter(format!(
                "gradient tolerance must be finite and non-negative, got {}",
                self.grad_tolerance
            )));
        }
        if self.max_line_search_steps == 0 {
            return Err(Error::Parameter("line search needs at least one step".into()));
        }
        Ok(())
    }
}

/// Why [`minimize`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient infinity norm reached the tolerance.
    Converged,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the best point seen
    /// so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the start point followed by the value after every accepted step.
    pub values: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

struct Evaluator<F> {
    f: F,
    dim: usize,
    count: usize,
}

impl<F> Evaluator<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        let (v, g) = (self.f)(x)?;
        if g.len() != self.dim {
            return Err(Error::Contract(format!(
                "gradient has {} entries, expected {}",
                g.len(),
                self.dim
            )));
        }
        Ok((v, g))
    }
}

struct Trial {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

enum Search {
    Accepted(Trial),
    /// Lowest-value trial that still satisfied sufficient decrease, if any.
    Failed(Option<Trial>),
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, kept inside
/// the middle 80% of the interval; falls back to bisection.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let candidate = if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        let denom = db - da + 2.0 * d2;
        if denom != 0.0 {
            b - (b - a) * (db + d2 - d1) / denom
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };
    if candidate.is_finite() && candidate >= lo + margin && candidate <= hi - margin {
        candidate
    } else if candidate.is_finite() {
        candidate.clamp(lo + margin, hi - margin)
    } else {
        0.5 * (lo + hi)
    }
}

fn line_search<F>(
    eval: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    initial_step: f64,
    cfg: &LbfgsConfig,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let armijo = |alpha: f64, value: f64| value <= f0 + cfg.wolfe_c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -cfg.wolfe_c2 * slope0;

    let mut best: Option<Trial> = None;
    let keep_best = |t: &Trial, best: &mut Option<Trial>| {
        if t.value < f0 && armijo(t.alpha, t.value) && best.as_ref().is_none_or(|b| t.value < b.value) {
            *best = Some(Trial {
                alpha: t.alpha,
                value: t.value,
                grad: t.grad.clone(),
                slope: t.slope,
            });
        }
    };

    let mut steps = 0usize;
    let mut prev = Trial {
        alpha: 0.0,
        value: f0,
        grad: Vec::new(),
        slope: slope0,
    };
    let mut alpha = initial_step;

    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if steps >= cfg.max_line_search_steps {
            return Ok(Search::Failed(best));
        }
        steps += 1;
        let (value, grad) = eval.eval(&axpy(x, alpha, dir))?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        let slope = dot(&grad, dir);
        let trial = Trial {
            alpha,
            value,
            grad,
            slope,
        };
        keep_best(&trial, &mut best);
        if !armijo(alpha, value) || (prev.alpha > 0.0 && value >= prev.value) {
            break (prev, trial);
        }
        if curvature(slope) {
            return Ok(Search::Accepted(trial));
        }
        if slope >= 0.0 {
            break (trial, prev);
        }
        alpha *= 2.0;
        prev = trial;
    };

    // Zoom phase: `lo` satisfies sufficient decrease and has the lowest value
    // among the bracket ends.
    while steps < cfg.max_line_search_steps {
        steps += 1;
        let a = cubic_step(lo.alpha, lo.value, lo.slope, hi.alpha, hi.value, hi.slope);
        if (a - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
            break;
        }
        let (value, grad) = eval.eval(&axpy(x, a, dir))?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            hi = Trial {
                alpha: a,
                value: f64::INFINITY,
                grad: Vec::new(),
                slope: f64::NAN,
            };
            continue;
        }
        let slope = dot(&grad, dir);
        let trial = Trial {
            alpha: a,
            value,
            grad,
            slope,
        };
        keep_best(&trial, &mut best);
        if !armijo(a, value) || value >= lo.value {
            hi = trial;
        } else {
            if curvature(slope) {
                return Ok(Search::Accepted(trial));
            }
            if slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = trial;
        }
    }
    Ok(Search::Failed(best))
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian `H`.
fn direction(grad: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let k = s_hist.len();
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
    for i in (0..k).rev() {
        alphas[i] = rho[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..k {
        let beta = rho[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `objective` starting from `x0`.
///
/// The callback returns the value and gradient at a point; it is also called
/// at trial points that end up rejected. The returned value never exceeds the
/// value at `x0`.
pub fn minimize<F>(objective: F, x0: Vec<f64>, config: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    let mut eval = Evaluator {
        f: objective,
        dim: x0.len(),
        count: 0,
    };
    let mut x = x0;
    let (mut value, mut grad) = eval.eval(&x)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidStart);
    }

    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(config.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(config.memory);
    let mut values = vec![value];
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&grad) <= config.grad_tolerance {
            break Termination::Converged;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        let mut dir = direction(&grad, &s_hist, &y_hist);
        let mut slope = dot(&grad, &dir);
        if !slope.is_finite() || slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let initial_step = if s_hist.is_empty() {
            let gnorm = dot(&grad, &grad).sqrt();
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let trial = match line_search(&mut eval, &x, value, slope, &dir, initial_step, config)? {
            Search::Accepted(t) => t,
            Search::Failed(best) => {
                if let Some(t) = best {
                    x = axpy(&x, t.alpha, &dir);
                    value = t.value;
                    iterations += 1;
                    values.push(value);
                }
                break Termination::LineSearchFailed;
            }
        };

        let x_new = axpy(&x, trial.alpha, &dir);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == config.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new;
        value = trial.value;
        grad = trial.grad;
        iterations += 1;
        values.push(value);
    };

    Ok(Minimum {
        x,
        value,
        iterations,
        evaluations: eval.count,
        termination,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic(a: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            let v = x.iter().zip(&a).map(|(xi, ai)| (xi - ai).powi(2)).sum();
            Ok((v, g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((v, g))
    }

    #[test]
    fn shifted_quadratic() {
        let cfg = LbfgsConfig {
            grad_tolerance: 1e-10,
            ..Default::default()
        };
        let res = minimize(quadratic(vec![1.0, 2.0, 3.0]), vec![0.0; 3], &cfg).unwrap();
        assert!(res.iterations < 50);
        for (xi, ai) in res.x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - ai).abs() < 1e-8);
        }
        assert_eq!(res.termination, Termination::Converged);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = LbfgsConfig {
            max_iterations: 500,
            grad_tolerance: 1e-10,
            ..Default::default()
        };
        let res = minimize(rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-5, "{:?}", res);
        assert!((res.x[1] - 1.0).abs() < 1e-5, "{:?}", res);
        assert!(res.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn first_step_follows_negative_gradient() {
        let mut points: Vec<Vec<f64>> = Vec::new();
        let f = |x: &[f64]| {
            points.push(x.to_vec());
            rosenbrock(x)
        };
        let cfg = LbfgsConfig {
            max_iterations: 1,
            ..Default::default()
        };
        minimize(f, vec![-1.2, 1.0], &cfg).unwrap();
        let (_, g0) = rosenbrock(&[-1.2, 1.0]).unwrap();
        let step: Vec<f64> = points[1].iter().zip([-1.2, 1.0]).map(|(p, x)| p - x).collect();
        // step is a positive multiple of -g0
        let cross = step[0] * g0[1] - step[1] * g0[0];
        assert!(cross.abs() < 1e-12 * dot(&step, &step).sqrt() * dot(&g0, &g0).sqrt());
        assert!(dot(&step, &g0) < 0.0);
    }

    #[test]
    fn accepted_steps_satisfy_strong_wolfe() {
        let mut seen: Vec<(Vec<f64>, f64, Vec<f64>)> = Vec::new();
        let f = |x: &[f64]| {
            let (v, g) = rosenbrock(x)?;
            seen.push((x.to_vec(), v, g.clone()));
            Ok((v, g))
        };
        let cfg = LbfgsConfig {
            max_iterations: 40,
            grad_tolerance: 0.0,
            ..Default::default()
        };
        let res = minimize(f, vec![-1.2, 1.0], &cfg).unwrap();
        assert!(res.values.len() > 2);
        let accepted: Vec<&(Vec<f64>, f64, Vec<f64>)> = res
            .values
            .iter()
            .map(|v| seen.iter().find(|e| e.1 == *v).unwrap())
            .collect();
        for pair in accepted.windows(2) {
            let (x0, f0, g0) = pair[0];
            let (x1, f1, g1) = pair[1];
            let s: Vec<f64> = x1.iter().zip(x0).map(|(a, b)| a - b).collect();
            let slope0 = dot(g0, &s);
            assert!(slope0 < 0.0);
            assert!(*f1 <= f0 + cfg.wolfe_c1 * slope0);
            assert!(dot(g1, &s).abs() <= cfg.wolfe_c2 * slope0.abs() + 1e-15);
        }
    }

    #[test]
    fn convex_quadratic_converges_within_dimension_plus_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2usize, 4, 6, 8] {
            // A = Q diag(lambda) Q^T, lambda in [1, 10]
            let m = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let q = crate::numerics::orthogonal_factor(&m).unwrap();
            let lam = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(1.0..10.0));
            let a = &q * nalgebra::DMatrix::from_diagonal(&lam) * q.transpose();
            let xstar = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            // Written around the minimizer so values near it keep full relative precision.
            let f = |x: &[f64]| {
                let e = nalgebra::DVector::from_column_slice(x) - &xstar;
                let ae = &a * &e;
                Ok((0.5 * e.dot(&ae), ae.as_slice().to_vec()))
            };
            let cfg = LbfgsConfig {
                memory: 10,
                grad_tolerance: 1e-10,
                max_iterations: d + 5,
                // Finite termination needs (near-)exact line searches; cubic
                // interpolation is exact along a quadratic.
                wolfe_c2: 1e-3,
                ..Default::default()
            };
            let res = minimize(f, vec![0.0; d], &cfg).unwrap();
            assert_eq!(res.termination, Termination::Converged, "d={d}: {res:?}");
        }
    }

    #[test]
    fn rejects_non_finite_start() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(
            minimize(f, vec![0.0], &LbfgsConfig::default()),
            Err(Error::InvalidStart)
        ));
    }

    #[test]
    fn rejects_gradient_of_wrong_length() {
        let f = |_: &[f64]| Ok((1.0, vec![0.0, 1.0]));
        assert!(matches!(
            minimize(f, vec![0.0], &LbfgsConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = LbfgsConfig::default();
        cfg.wolfe_c1 = 0.95;
        assert!(cfg.validate().is_err());
        let cfg = LbfgsConfig {
            memory: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn never_ends_above_start() {
        // Non-smooth objective: line search may fail, but never returns a worse point.
        let f = |x: &[f64]| {
            let v: f64 = x.iter().map(|v| v.abs()).sum();
            Ok((v, x.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect()))
        };
        let res = minimize(f, vec![0.3, -0.7], &LbfgsConfig::default()).unwrap();
        assert!(res.value <= 1.0);
    }
}

//! Learning binary hash codes with binary deep neural networks.
//!
//! The crate trains two kinds of hashing networks on real-valued feature
//! vectors:
//!
//! * an unsupervised autoencoder-style network ([`uh`]) whose penultimate
//!   layer is tied to a binary auxiliary code matrix and whose last layer
//!   reconstructs the input from that code;
//! * a supervised network ([`sh`]) whose last layer is tied to the binary
//!   codes and whose code inner products are fitted to a pairwise label
//!   matrix.
//!
//! Both are trained by alternating between an L-BFGS step on the network
//! parameters ([`optimizer`]) and a closed-form step on the binary codes.
//! Trained networks are evaluated with the Hamming-space retrieval tools in
//! [`search`].
//!
//! All matrices are column-per-sample: a dataset of `m` points in `D`
//! dimensions is a `D x m` [`Matrix`].

pub mod cli;
pub mod codes;
pub mod config;
pub mod error;
pub mod init;
pub mod io;
pub mod network;
pub mod numerics;
pub mod optimizer;
pub mod search;
pub mod sh;
pub mod synth;
pub mod uh;

pub use codes::CodeMatrix;
pub use error::{Error, Result};
pub use network::{ForwardTrace, LayerSchedule, Mode, NetworkParams};
pub use numerics::Matrix;
pub use optimizer::LbfgsConfig;

/// Penalty weights shared by the unsupervised and supervised objectives.
///
/// `weight_decay` multiplies the squared Frobenius norm of every weight
/// matrix, `binding` ties the real-valued code layer to the binary codes,
/// `independence` pushes the code-layer Gram matrix towards the identity and
/// `balance` pushes every bit's sum over the samples towards zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub weight_decay: f64,
    pub binding: f64,
    pub independence: f64,
    pub balance: f64,
}

impl Penalties {
    /// Values used for unsupervised training.
    pub const UNSUPERVISED: Penalties = Penalties {
        weight_decay: 1e-5,
        binding: 5e-2,
        independence: 1e-2,
        balance: 1e-6,
    };

    /// Values used for supervised training.
    pub const SUPERVISED: Penalties = Penalties {
        weight_decay: 1e-3,
        binding: 5.0,
        independence: 1.0,
        balance: 1e-4,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.weight_decay),
            ("lambda2", self.binding),
            ("lambda3", self.independence),
            ("lambda4", self.balance),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One recorded value of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// Outer iteration; 0 covers initialization and the first parameter step.
    pub iteration: usize,
    pub phase: Phase,
    pub objective: f64,
}

/// Which half-step produced a [`TraceEntry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Objective at the initial parameters and initial codes.
    Init,
    /// After a binary code update.
    Codes,
    /// After an L-BFGS update of the weights and biases.
    Params,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Codes => "b",
            Phase::Params => "wc",
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub params: NetworkParams,
    /// Binary auxiliary variable after the last code step.
    pub codes: CodeMatrix,
    pub history: Vec<TraceEntry>,
    /// Number of code steps performed.
    pub code_steps: usize,
    /// Number of L-BFGS parameter steps performed.
    pub param_steps: usize,
    /// Columns of the input data used for training, ascending.
    pub samples: Vec<usize>,
}

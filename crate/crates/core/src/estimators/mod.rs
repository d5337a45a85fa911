//! Statistical targets: speed, diffusivity, steady-state means, the
//! first-order expansion coefficient, and probes of the a-priori bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{BiasSpec, ConductanceField, Environment, MAX_MOVES};
use crate::rng::{combine, derive_seed, tag_hash, StreamId};
use crate::walk::{config_hash, LocalFunction, Walker};

pub mod probes;
pub mod speed;
pub mod steady;

pub use probes::*;
pub use speed::*;
pub use steady::*;

/// A point estimate with its standard error. Vector and matrix targets are
/// stored flattened (row-major for matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_replicas: usize,
    pub estimator_id: String,
    pub config_hash: u64,
    pub notes: String,
}

impl Estimate {
    pub fn new(id: &str, value: Vec<f64>, stderr: Vec<f64>, n_replicas: usize, config_hash: u64) -> Self {
        debug_assert_eq!(value.len(), stderr.len());
        Self {
            value,
            stderr,
            n_replicas,
            estimator_id: id.to_string(),
            config_hash,
            notes: String::new(),
        }
    }

    pub fn scalar(id: &str, value: f64, stderr: f64, n_replicas: usize, config_hash: u64) -> Self {
        Self::new(id, vec![value], vec![stderr], n_replicas, config_hash)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(&note.into());
        self
    }

    pub fn value(&self) -> f64 {
        self.value[0]
    }

    pub fn se(&self) -> f64 {
        self.stderr[0]
    }

    pub fn component(&self, i: usize) -> (f64, f64) {
        (self.value[i], self.stderr[i])
    }

    /// Finite values and nonnegative standard errors.
    pub fn is_valid(&self) -> bool {
        self.value.iter().all(|v| v.is_finite()) && self.stderr.iter().all(|s| *s >= 0.0 && !s.is_nan())
    }
}

/// Field, bias and Monte Carlo budget for one replica-parallel estimator.
/// Replica r uses environment seed derive_seed(seed, tag + "-env", r) and
/// walk stream (seed, tag, r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub field: ConductanceField,
    pub bias: BiasSpec,
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(field: ConductanceField, bias: BiasSpec, horizon: usize, replicas: usize, seed: u64) -> Result<Self> {
        if field.dimension != bias.dim() {
            return Err(LabError::DimensionMismatch {
                expected: field.dimension,
                got: bias.dim(),
            });
        }
        if replicas == 0 {
            return Err(crate::error::invalid("replicas", "must be >= 1"));
        }
        Ok(Self {
            field,
            bias,
            horizon,
            replicas,
            seed,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Ok(Self {
            bias: self.bias.with_lambda(lambda)?,
            ..*self
        })
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..*self }
    }

    pub fn with_replicas(&self, replicas: usize) -> Self {
        Self { replicas, ..*self }
    }

    pub fn dim(&self) -> usize {
        self.field.dimension
    }

    pub fn env(&self, tag: &str, r: u64) -> ConductanceField {
        self.field
            .with_seed(derive_seed(self.seed, &format!("{tag}-env"), r))
    }

    pub fn stream(&self, tag: &str, r: u64) -> StreamId {
        StreamId::new(self.seed, tag, r)
    }

    /// Pins field law, bias, budget, seed and estimator tag.
    pub fn hash(&self, tag: &str) -> u64 {
        let mut h = config_hash(&self.field.with_seed(self.seed), &self.bias);
        h = combine(h, self.horizon as u64);
        h = combine(h, self.replicas as u64);
        combine(h, tag_hash(tag))
    }
}

/// Runs `f` for replicas 0..n and returns results in replica order.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// f at the walker's current environment.
#[inline]
pub(crate) fn f_at<E: Environment + ?Sized>(walker: &mut Walker<'_, E>, env: &E, f: &LocalFunction) -> f64 {
    let mut inc = [0.0; MAX_MOVES];
    let n = walker.moves();
    inc[..n].copy_from_slice(walker.incident());
    f.eval_with(env, walker.position(), &inc[..n])
}

/// Exact drift of the walk in a constant environment.
pub fn homogeneous_speed(bias: &BiasSpec) -> Vec<f64> {
    let d = bias.dim();
    let tilt = bias.tilt_factors();
    let total: f64 = tilt[..2 * d].iter().sum();
    let mut v = vec![0.0; d];
    for (m, t) in tilt[..2 * d].iter().enumerate() {
        let mv = crate::lattice::Move(m);
        v[mv.axis()] += mv.sign() as f64 * t / total;
    }
    v
}

pub(crate) fn require_bias(bias: &BiasSpec, what: &'static str) -> Result<()> {
    if bias.lambda > 0.0 {
        Ok(())
    } else {
        Err(LabError::NeedsBias(what))
    }
}

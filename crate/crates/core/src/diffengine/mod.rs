//! Exact derivatives for small dense networks.
//!
//! The engine is deliberately narrow: affine layers, ELU, and the
//! reductions the Koopman losses need. Objectives that contain
//! Jacobian-vector products are differentiated reverse-over-forward, which
//! needs the second derivative of the activation in the backward sweep.

mod elu;
mod mlp;

pub use elu::{elu, elu_d1, elu_d2};
pub use mlp::{
    mlp_backward, mlp_eval, mlp_forward, mlp_jvp, mlp_jvp_eval, Activation, DualBatch, InputCotangents, Layer, Mlp,
    MlpParams, MlpSpec, Trace,
};

use crate::error::{Error, Result};

/// Named contiguous range of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Value of a scalar objective, its named contributions, and its gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub terms: Vec<(&'static str, f64)>,
    pub gradient: Vec<f64>,
}

/// A scalar objective over a flat vector of trainable scalars.
pub trait Objective {
    fn blocks(&self) -> Vec<Block>;
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;
}

/// Evaluates `objective` at `theta` and checks every term and gradient entry
/// for finiteness.
pub fn objective_gradient<O: Objective + ?Sized>(objective: &O, theta: &[f64]) -> Result<Evaluation> {
    let eval = objective.evaluate(theta)?;
    if let Some((name, _)) = eval.terms.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric { term: (*name).into() });
    }
    if !eval.value.is_finite() {
        return Err(Error::Numeric { term: "total".into() });
    }
    check_finite(&objective.blocks(), &eval.gradient, "gradient")?;
    Ok(eval)
}

/// Names the block holding the first non-finite entry of `values`.
pub fn check_finite(blocks: &[Block], values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let name = blocks
            .iter()
            .find(|b| (b.start..b.start + b.len).contains(&i))
            .map_or("<unknown>", |b| b.name.as_str());
        return Err(Error::Numeric {
            term: format!("{what} of {name}"),
        });
    }
    Ok(())
}

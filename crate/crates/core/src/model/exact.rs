use ndarray::{array, Array2, ArrayView2};

use super::Autoencoder;
use crate::diffengine::DualBatch;
use crate::dynamics::{exact_invariant_subspace, InvariantSubspace};
use crate::error::{Error, Result};

/// The closed-form Koopman autoencoder of the fixed-point system:
/// `φ(x) = (x₁, x₁², x₂ − b x₁²)`, `L = diag(μ, 2μ, λ)` and the linear
/// decoder `x = (z₁, b z₂ + z₃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactModel {
    pub subspace: InvariantSubspace,
    pub l: Array2<f64>,
    pub c: Array2<f64>,
}

impl ExactModel {
    pub fn fixed_point(mu: f64, lambda: f64) -> Result<Self> {
        let subspace = exact_invariant_subspace(mu, lambda)?;
        let b = subspace.b;
        Ok(ExactModel {
            subspace,
            l: Array2::from_diag(&array![mu, 2.0 * mu, lambda]),
            c: array![[1.0, 0.0, 0.0], [0.0, b, 1.0]],
        })
    }

    fn check(x: &ArrayView2<f64>, d: usize, what: &str) -> Result<()> {
        if x.ncols() != d {
            return Err(Error::dim(what, format!("(_, {d})"), format!("{:?}", x.dim())));
        }
        Ok(())
    }
}

impl Autoencoder for ExactModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn latent_dim(&self) -> usize {
        3
    }

    fn generator(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }

    fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Self::check(&x, 2, "encoder input")?;
        let mut z = Array2::zeros((x.nrows(), 3));
        for (i, row) in x.rows().into_iter().enumerate() {
            let phi = self.subspace.eigenfunctions([row[0], row[1]]);
            for k in 0..3 {
                z[[i, k]] = phi[k];
            }
        }
        Ok(z)
    }

    fn encode_jvp(&self, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
        Self::check(&v, 2, "encoder tangent")?;
        let primal = self.encode(x)?;
        let mut tangent = Array2::zeros(primal.dim());
        for i in 0..x.nrows() {
            let g = self.subspace.gradients([x[[i, 0]], x[[i, 1]]]);
            for k in 0..3 {
                tangent[[i, k]] = g[k][0] * v[[i, 0]] + g[k][1] * v[[i, 1]];
            }
        }
        Ok(DualBatch { primal, tangent })
    }

    fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        Self::check(&z, 3, "decoder input")?;
        Ok(z.dot(&self.c.t()))
    }

    fn decode_jvp(&self, z: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
        Self::check(&v, 3, "decoder tangent")?;
        Ok(DualBatch {
            primal: self.decode(z)?,
            tangent: v.dot(&self.c.t()),
        })
    }
}

//! The Koopman autoencoder: encoder, latent generator `L`, decoder and
//! optional trainable physical parameters.

mod checkpoint;
mod exact;

pub(crate) use checkpoint::json_error;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use exact::ExactModel;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::diffengine::{Activation, Block, DualBatch, Mlp, MlpParams, MlpSpec};
use crate::error::{Error, Result};
use crate::rng::{tag, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// `x̂ = C z`
    LinearNoBias,
    /// ELU network from latent to state.
    Mlp,
}

/// A physical parameter of the right-hand side (`mu`, `lambda`, `nu`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParamSpec {
    pub name: String,
    pub trainable: bool,
    /// Fixed value, or the initial value of a trainable parameter. A
    /// trainable parameter without one starts at Uniform(-1, 1).
    pub init: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_bias: bool,
    pub decoder: DecoderKind,
    /// Hidden widths of the `Mlp` decoder; ignored for `LinearNoBias`.
    pub decoder_hidden: Vec<usize>,
    pub decoder_bias: bool,
    pub decoder_output_bias: bool,
    /// Restrict `L` to its diagonal.
    #[serde(default)]
    pub diagonal_l: bool,
    #[serde(default)]
    pub phys: Vec<PhysParamSpec>,
}

impl Architecture {
    /// ELU encoder with the given hidden widths and a linear decoder.
    pub fn linear_decoder(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Self {
        Architecture {
            input_dim,
            latent_dim,
            encoder_hidden: hidden.to_vec(),
            encoder_bias: true,
            decoder: DecoderKind::LinearNoBias,
            decoder_hidden: Vec::new(),
            decoder_bias: false,
            decoder_output_bias: false,
            diagonal_l: false,
            phys: Vec::new(),
        }
    }

    /// ELU encoder and ELU decoder mirroring each other.
    pub fn nonlinear_decoder(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Self {
        Architecture {
            decoder: DecoderKind::Mlp,
            decoder_hidden: hidden.iter().rev().copied().collect(),
            decoder_bias: true,
            decoder_output_bias: true,
            ..Architecture::linear_decoder(input_dim, hidden, latent_dim)
        }
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.encoder_hidden);
        widths.push(self.latent_dim);
        let act = if self.encoder_hidden.is_empty() { Activation::Identity } else { Activation::Elu };
        MlpSpec::new(widths, act, self.encoder_bias).map_err(|e| prefix(e, "arch.encoder"))
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        match self.decoder {
            DecoderKind::LinearNoBias => {
                MlpSpec::linear(self.latent_dim, self.input_dim, false).map_err(|e| prefix(e, "arch.decoder"))
            }
            DecoderKind::Mlp => {
                let mut widths = vec![self.latent_dim];
                widths.extend(&self.decoder_hidden);
                widths.push(self.input_dim);
                let act = if self.decoder_hidden.is_empty() { Activation::Identity } else { Activation::Elu };
                let mut spec = MlpSpec::new(widths, act, self.decoder_bias).map_err(|e| prefix(e, "arch.decoder"))?;
                *spec.bias.last_mut().unwrap() = self.decoder_output_bias;
                Ok(spec)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("arch.input_dim", "must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("arch.latent_dim", "must be positive"));
        }
        self.encoder_spec()?;
        self.decoder_spec()?;
        for (i, p) in self.phys.iter().enumerate() {
            if !p.trainable && p.init.is_none() {
                return Err(Error::config(format!("arch.phys[{i}].init"), "fixed parameter needs a value"));
            }
            if self.phys[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::config(format!("arch.phys[{i}].name"), format!("duplicate `{}`", p.name)));
            }
        }
        Ok(())
    }
}

fn prefix(e: Error, path: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{path}.{field}"), message),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysParam {
    pub name: String,
    pub value: f64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub arch: Architecture,
    pub encoder: Mlp,
    /// `M × M` generator approximation.
    pub l: Array2<f64>,
    pub decoder: Mlp,
    pub phys: Vec<PhysParam>,
    pub seed: u64,
}

fn init_layers(params: &mut MlpParams, rng: &mut Stream) {
    for layer in &mut params.layers {
        let bound = 1.0 / (layer.weight.ncols() as f64).sqrt();
        layer.weight.mapv_inplace(|_| rng.uniform(-bound, bound));
        if let Some(b) = &mut layer.bias {
            b.mapv_inplace(|_| rng.uniform(-bound, bound));
        }
    }
}

/// Fresh model: `L = 0`, weights and biases of a layer with fan-in `n`
/// drawn from Uniform(-1/√n, 1/√n), trainable physical parameters from
/// Uniform(-1, 1) unless an initial value is given.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<KoopmanModel> {
    arch.validate()?;
    let mut encoder = Mlp::zeros(arch.encoder_spec()?);
    let mut decoder = Mlp::zeros(arch.decoder_spec()?);
    init_layers(&mut encoder.params, &mut Stream::derived(seed, tag::ENCODER));
    init_layers(&mut decoder.params, &mut Stream::derived(seed, tag::DECODER));
    let mut rng = Stream::derived(seed, tag::PHYSICS);
    let phys = arch
        .phys
        .iter()
        .map(|p| {
            let drawn = rng.uniform(-1.0, 1.0);
            PhysParam {
                name: p.name.clone(),
                value: p.init.unwrap_or(drawn),
                trainable: p.trainable,
            }
        })
        .collect();
    let m = arch.latent_dim;
    Ok(KoopmanModel {
        arch: arch.clone(),
        encoder,
        l: Array2::zeros((m, m)),
        decoder,
        phys,
        seed,
    })
}

impl KoopmanModel {
    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.eval(x)
    }

    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.eval(z)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(x)?.view())
    }

    pub fn phys_value(&self, name: &str) -> Option<f64> {
        self.phys.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn trainable_phys(&self) -> impl Iterator<Item = &PhysParam> {
        self.phys.iter().filter(|p| p.trainable)
    }

    fn l_len(&self) -> usize {
        let m = self.latent_dim();
        if self.arch.diagonal_l {
            m
        } else {
            m * m
        }
    }

    /// Layout of the flat trainable vector: encoder, `L`, decoder, then
    /// each trainable physical parameter.
    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut push = |name: String, len: usize| {
            out.push(Block { name, start, len });
            start += len;
        };
        push("encoder".into(), self.encoder.params.len());
        push("L".into(), self.l_len());
        push("decoder".into(), self.decoder.params.len());
        for p in self.trainable_phys() {
            push(format!("phys.{}", p.name), 1);
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.blocks().iter().map(|b| b.len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        self.encoder.params.flatten_into(&mut out);
        if self.arch.diagonal_l {
            out.extend(self.l.diag().iter());
        } else {
            out.extend(self.l.iter());
        }
        self.decoder.params.flatten_into(&mut out);
        out.extend(self.trainable_phys().map(|p| p.value));
        out
    }

    /// Loads every trainable scalar from `theta` (layout of [`blocks`](Self::blocks)).
    pub fn assign(&mut self, theta: &[f64]) -> Result<()> {
        let n = self.num_trainable();
        if theta.len() != n {
            return Err(Error::dim("flat parameter vector", n, theta.len()));
        }
        let mut k = self.encoder.params.assign_from(theta);
        let m = self.latent_dim();
        if self.arch.diagonal_l {
            for i in 0..m {
                self.l[[i, i]] = theta[k + i];
            }
            k += m;
        } else {
            for (dst, src) in self.l.iter_mut().zip(&theta[k..k + m * m]) {
                *dst = *src;
            }
            k += m * m;
        }
        k += self.decoder.params.assign_from(&theta[k..]);
        for p in self.phys.iter_mut().filter(|p| p.trainable) {
            p.value = theta[k];
            k += 1;
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> ModelGrad {
        ModelGrad {
            encoder: MlpParams::zeros(&self.encoder.spec),
            l: Array2::zeros(self.l.dim()),
            decoder: MlpParams::zeros(&self.decoder.spec),
            phys: vec![0.0; self.phys.len()],
        }
    }
}

/// Anything with an encoder, a latent generator and a decoder. Analysis
/// and loss evaluation accept any implementation, so closed-form oracles
/// run through the same code as trained networks.
pub trait Autoencoder {
    fn state_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    /// The latent generator `L`.
    fn generator(&self) -> ArrayView2<'_, f64>;
    fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
    /// `(φ(x), ∇φ(x)·v)` per row.
    fn encode_jvp(&self, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch>;
    fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>>;
    /// `(ψ(z), ∇ψ(z)·v)` per row.
    fn decode_jvp(&self, z: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch>;

    fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(x)?.view())
    }
}

impl Autoencoder for KoopmanModel {
    fn state_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn generator(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }

    fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.eval(x)
    }

    fn encode_jvp(&self, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
        self.encoder.jvp_eval(x, v)
    }

    fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.eval(z)
    }

    fn decode_jvp(&self, z: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
        self.decoder.jvp_eval(z, v)
    }
}

/// Gradient with the same structure as the model. `phys` is indexed like
/// `KoopmanModel::phys` (fixed parameters included, dropped on flatten).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub encoder: MlpParams,
    pub l: Array2<f64>,
    pub decoder: MlpParams,
    pub phys: Vec<f64>,
}

impl ModelGrad {
    pub fn add_assign(&mut self, other: &ModelGrad) {
        self.encoder.add_assign(&other.encoder);
        self.l += &other.l;
        self.decoder.add_assign(&other.decoder);
        for (a, b) in self.phys.iter_mut().zip(&other.phys) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in self.encoder.layers.iter_mut().chain(self.decoder.layers.iter_mut()) {
            layer.weight *= s;
            if let Some(b) = &mut layer.bias {
                *b *= s;
            }
        }
        self.l *= s;
        self.phys.iter_mut().for_each(|v| *v *= s);
    }

    /// Flat gradient in the layout of `model.blocks()`.
    pub fn flatten(&self, model: &KoopmanModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.num_trainable());
        self.encoder.flatten_into(&mut out);
        if model.arch.diagonal_l {
            out.extend(self.l.diag().iter());
        } else {
            out.extend(self.l.iter());
        }
        self.decoder.flatten_into(&mut out);
        for (g, p) in self.phys.iter().zip(&model.phys) {
            if p.trainable {
                out.push(*g);
            }
        }
        out
    }
}

//! Versioned JSON checkpoints with exact decimal floats.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, KoopmanModel, PhysParam};
use crate::diffengine::{Layer, Mlp, MlpParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// A model plus the provenance stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: KoopmanModel,
    pub config_hash: String,
}

// 17 significant digits round-trip every binary64 value.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(s: &str, path: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        offset: 0,
        message: format!("{path}: `{s}` is not a number"),
    })
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weight: Vec<Vec<String>>,
    bias: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct PhysRepr {
    name: String,
    value: String,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    encoder: Vec<LayerRepr>,
    #[serde(rename = "L")]
    l: Vec<Vec<String>>,
    decoder: Vec<LayerRepr>,
    phys: Vec<PhysRepr>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    format_version: u64,
    arch: Architecture,
    params: ParamsRepr,
    seed: u64,
    config_hash: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

fn matrix_repr(a: &Array2<f64>) -> Vec<Vec<String>> {
    a.rows().into_iter().map(|r| r.iter().map(|&v| fmt(v)).collect()).collect()
}

fn matrix_from(rows: &[Vec<String>], path: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), ncols));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Shape {
                layer: path.into(),
                expected: format!("{ncols} columns"),
                found: format!("{} columns in row {i}", row.len()),
            });
        }
        for (j, s) in row.iter().enumerate() {
            out[[i, j]] = parse_float(s, path)?;
        }
    }
    Ok(out)
}

fn mlp_repr(p: &MlpParams) -> Vec<LayerRepr> {
    p.layers
        .iter()
        .map(|l| LayerRepr {
            weight: matrix_repr(&l.weight),
            bias: l.bias.as_ref().map(|b| b.iter().map(|&v| fmt(v)).collect()),
        })
        .collect()
}

fn mlp_from(layers: &[LayerRepr], name: &str) -> Result<MlpParams> {
    let layers = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let weight = matrix_from(&l.weight, &format!("{name}.{i}.weight"))?;
            let bias = match &l.bias {
                Some(b) => Some(Array1::from(
                    b.iter()
                        .map(|s| parse_float(s, &format!("{name}.{i}.bias")))
                        .collect::<Result<Vec<_>>>()?,
                )),
                None => None,
            };
            Ok(Layer { weight, bias })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpParams { layers })
}

/// Converts serde's line/column position into a byte offset in `text`.
pub(crate) fn json_error(text: &str, e: serde_json::Error) -> Error {
    let line = e.line().max(1);
    let offset: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum::<usize>() + e.column().saturating_sub(1);
    Error::Parse {
        offset: offset.min(text.len()) as u64,
        message: e.to_string(),
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let m = &self.model;
        let repr = CheckpointRepr {
            format_version: FORMAT_VERSION,
            arch: m.arch.clone(),
            params: ParamsRepr {
                encoder: mlp_repr(&m.encoder.params),
                l: matrix_repr(&m.l),
                decoder: mlp_repr(&m.decoder.params),
                phys: m
                    .phys
                    .iter()
                    .map(|p| PhysRepr {
                        name: p.name.clone(),
                        value: fmt(p.value),
                        trainable: p.trainable,
                    })
                    .collect(),
            },
            seed: m.seed,
            config_hash: self.config_hash.clone(),
        };
        serde_json::to_string_pretty(&repr).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let repr: CheckpointRepr = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
        Self::from_repr(repr, None)
    }

    /// Like [`from_json`](Self::from_json) but checks every parameter array
    /// against `arch` instead of the architecture recorded in the file.
    pub fn from_json_for(text: &str, arch: &Architecture) -> Result<Checkpoint> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let repr: CheckpointRepr = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
        Self::from_repr(repr, Some(arch))
    }

    fn from_repr(repr: CheckpointRepr, expect: Option<&Architecture>) -> Result<Checkpoint> {
        let arch = expect.cloned().unwrap_or(repr.arch);
        arch.validate()?;
        let enc_spec = arch.encoder_spec()?;
        let dec_spec = arch.decoder_spec()?;
        let encoder = mlp_from(&repr.params.encoder, "encoder")?;
        encoder.check(&enc_spec, "encoder")?;
        let decoder = mlp_from(&repr.params.decoder, "decoder")?;
        decoder.check(&dec_spec, "decoder")?;
        let l = matrix_from(&repr.params.l, "L")?;
        let m = arch.latent_dim;
        if l.dim() != (m, m) {
            return Err(Error::Shape {
                layer: "L".into(),
                expected: format!("{m}x{m}"),
                found: format!("{}x{}", l.nrows(), l.ncols()),
            });
        }
        let names: Vec<&str> = arch.phys.iter().map(|p| p.name.as_str()).collect();
        let found: Vec<&str> = repr.params.phys.iter().map(|p| p.name.as_str()).collect();
        if names != found {
            return Err(Error::Shape {
                layer: "phys".into(),
                expected: format!("{names:?}"),
                found: format!("{found:?}"),
            });
        }
        let phys = repr
            .params
            .phys
            .iter()
            .map(|p| {
                Ok(PhysParam {
                    name: p.name.clone(),
                    value: parse_float(&p.value, &format!("phys.{}", p.name))?,
                    trainable: p.trainable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = KoopmanModel {
            arch,
            encoder: Mlp { spec: enc_spec, params: encoder },
            l,
            decoder: Mlp { spec: dec_spec, params: decoder },
            phys,
            seed: repr.seed,
        };
        Ok(Checkpoint {
            model,
            config_hash: repr.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

pub fn save_checkpoint(model: &KoopmanModel, config_hash: &str, path: &Path) -> Result<()> {
    Checkpoint {
        model: model.clone(),
        config_hash: config_hash.to_string(),
    }
    .save(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

pub fn load_checkpoint(path: &Path) -> Result<KoopmanModel> {
    Ok(Checkpoint::load(path)?.model)
}

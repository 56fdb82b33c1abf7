//! Model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_model, Architecture, ContentIndicator, ContentModel, DcfConfig, LinearModel, ModelSpec, NnError};
use crate::corpus::{FeatureSchema, Vocabulary};

pub const MAGIC: &[u8; 8] = b"SPARSECF";
pub const FORMAT_VERSION: u32 = 1;

/// A model with the schema and vocabularies its inputs were tokenized with.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub schema: FeatureSchema,
    pub vocabularies: Vec<Vocabulary>,
    pub model: ContentModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: Architecture,
    schema: FeatureSchema,
    vocabularies: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dcf: Option<DcfConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cross_buckets: Option<usize>,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn tensors(model: &ContentModel) -> Vec<(String, Vec<usize>, &[f64])> {
    match model {
        ContentModel::Linear { model, .. } => {
            vec![("theta".to_string(), vec![model.dim()], model.theta.as_slice())]
        }
        ContentModel::Dcf(m) => m.tensors(),
    }
}

fn tensors_mut(model: &mut ContentModel) -> Vec<&mut [f64]> {
    match model {
        ContentModel::Linear { model, .. } => vec![model.theta.as_mut_slice()],
        ContentModel::Dcf(m) => m.tensors_mut(),
    }
}

pub fn write_model<W: Write>(mut w: W, bundle: &ModelBundle) -> Result<(), NnError> {
    let list = tensors(&bundle.model);
    let (dcf, cross_buckets) = match &bundle.model {
        ContentModel::Linear { features, .. } => (None, Some(features.cross_buckets)),
        ContentModel::Dcf(m) => (Some(m.config.clone()), None),
    };
    let header = Header {
        arch: bundle.model.arch(),
        schema: bundle.schema.clone(),
        vocabularies: bundle.vocabularies.iter().map(|v| v.tokens().to_vec()).collect(),
        dcf,
        cross_buckets,
        tensors: list
            .iter()
            .map(|(name, shape, _)| TensorInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, data) in &list {
        for v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelBundle, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a model file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(NnError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    let mut json = Vec::new();
    r.by_ref().take(len).read_to_end(&mut json)?;
    if json.len() as u64 != len {
        return Err(NnError::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;

    let vocabularies: Vec<Vocabulary> = header.vocabularies.into_iter().map(Vocabulary::from_tokens).collect();
    let vocab_sizes: Vec<usize> = vocabularies.iter().map(Vocabulary::len).collect();
    let mut model = match (header.arch, header.dcf, header.cross_buckets) {
        (Architecture::Linear, None, Some(buckets)) => {
            let features = ContentIndicator::new(vocab_sizes, buckets)?;
            ContentModel::Linear {
                model: LinearModel::zeros(features.dim()),
                features,
            }
        }
        (arch, Some(config), None) if arch != Architecture::Linear => {
            let spec = ModelSpec {
                arch,
                d_emb: config.d_emb,
                d_item: config.d_item,
                d_head: config.d_head,
                d_rnn: config.d_rnn,
                tied: config.tied,
                activation: config.activation,
                cross_buckets: 0,
            };
            init_model(&spec, &header.schema, &vocab_sizes, 0)?
        }
        _ => return Err(NnError::Format("header does not match its architecture".into())),
    };

    let expected: Vec<TensorInfo> = tensors(&model)
        .into_iter()
        .map(|(name, shape, _)| TensorInfo { name, shape })
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(NnError::Format(format!(
            "{} tensors declared, architecture has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (e, f) in expected.iter().zip(&header.tensors) {
        if e.name != f.name || e.shape != f.shape {
            return Err(NnError::Shape {
                name: f.name.clone(),
                expected: e.shape.clone(),
                found: f.shape.clone(),
            });
        }
    }
    for slot in tensors_mut(&mut model) {
        for v in slot.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
    }
    if r.read(&mut b8)? != 0 {
        return Err(NnError::Format("trailing bytes after tensors".into()));
    }
    Ok(ModelBundle {
        schema: header.schema,
        vocabularies,
        model,
    })
}

pub fn save_model(path: &Path, bundle: &ModelBundle) -> Result<(), NnError> {
    write_model(BufWriter::new(File::create(path)?), bundle)
}

pub fn load_model(path: &Path) -> Result<ModelBundle, NnError> {
    read_model(BufReader::new(File::open(path)?))
}

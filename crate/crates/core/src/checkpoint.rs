//! Model checkpoints: one file holding the architecture and every weight.
//!
//! Layout: a little-endian `u32` header length, a JSON header describing
//! the architecture and the parameter names in order, then one FMAT block
//! per parameter in exactly that order. Loading rebuilds the model from
//! the recorded architecture and overwrites its weights, so a checkpoint
//! is self-contained.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combiner::{CVectorModel, CombinerConfig};
use crate::encoders::{Encoder, HornnConfig, TdnnConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_fmat, write_fmat};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
enum EncoderSpec {
    Tdnn(TdnnConfig),
    Hornn(HornnConfig),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    encoders: Vec<EncoderSpec>,
    combiner: CombinerConfig,
    /// Parameter names in serialization order.
    tensors: Vec<String>,
    /// Arbitrary caller context, echoed back on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    experiment: Option<serde_json::Value>,
}

/// Serialize a model. `experiment` is stored verbatim in the header for
/// provenance and returned by the loader.
pub fn write_checkpoint(
    w: &mut impl Write,
    model: &CVectorModel,
    experiment: Option<serde_json::Value>,
) -> Result<()> {
    let encoders = model
        .encoders()
        .iter()
        .map(|e| match e {
            Encoder::Tdnn(t) => EncoderSpec::Tdnn(t.config().clone()),
            Encoder::Hornn(h) => EncoderSpec::Hornn(h.config().clone()),
        })
        .collect();
    let named = model.named_params();
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        encoders,
        combiner: model.config().clone(),
        tensors: named.iter().map(|(name, _)| name.clone()).collect(),
        experiment,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let len = u32::try_from(header_bytes.len())
        .map_err(|_| Error::Data("checkpoint header exceeds u32 length".into()))?;
    let io_err = |e: std::io::Error| Error::io("checkpoint stream", e);
    w.write_all(&len.to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    for (_, tensor) in named {
        write_fmat(w, tensor).map_err(io_err)?;
    }
    Ok(())
}

/// Deserialize a model and the experiment context stored with it.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(CVectorModel, Option<serde_json::Value>)> {
    let io_err = |e: std::io::Error| Error::io("checkpoint stream", e);
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(io_err)?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes).map_err(|e| {
        Error::Data(format!("checkpoint header is not valid JSON: {e}"))
    })?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
            header.version
        )));
    }

    // architecture init values are placeholders; every weight is
    // overwritten below
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoders = header
        .encoders
        .iter()
        .map(|spec| match spec {
            EncoderSpec::Tdnn(cfg) => Encoder::init_tdnn(&mut rng, cfg.clone()),
            EncoderSpec::Hornn(cfg) => Encoder::init_hornn(&mut rng, cfg.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = CVectorModel::init(&mut rng, encoders, header.combiner.clone())?;

    let expected: Vec<String> = model
        .named_params()
        .iter()
        .map(|(name, _)| name.clone())
        .collect();
    if header.tensors != expected {
        return Err(Error::Data(format!(
            "checkpoint parameter list does not match its architecture: \
             stored {:?} vs expected {:?}",
            header.tensors, expected
        )));
    }

    for (name, param) in model.named_params_mut() {
        let loaded = read_fmat(r)?;
        if loaded.shape() != param.shape() {
            return Err(Error::Data(format!(
                "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                loaded.shape(),
                param.shape()
            )));
        }
        *param = loaded.with_grad();
    }
    Ok((model, header.experiment))
}

pub fn save_checkpoint(
    path: &Path,
    model: &CVectorModel,
    experiment: Option<serde_json::Value>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, experiment)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CVectorModel, Option<serde_json::Value>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_checkpoint(&mut bytes.as_slice())
}

//! `SEGC` model checkpoint: magic, u16 version, u32-prefixed JSON header,
//! u64 parameter count, then the parameters as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::check_preamble;
use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::netcore::{Model, ModelSpec};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SEGC";
pub const CHECKPOINT_VERSION: u16 = 1;
const PREAMBLE_LEN: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub in_channels: usize,
    pub num_classes: usize,
    pub epoch: usize,
    pub config: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub config: Option<TrainConfig>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        spec: ck.model.spec.clone(),
        in_channels: ck.model.in_channels(),
        num_classes: ck.model.params.layout.num_classes,
        epoch: ck.epoch,
        config: ck.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::invalid("checkpoint header too large"))?;
    let values = &ck.model.params.values;
    let mut out = Vec::with_capacity(PREAMBLE_LEN + json.len() + 8 + 8 * values.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    check_preamble(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, PREAMBLE_LEN)?;
    let json_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count_at = PREAMBLE_LEN + json_len;
    if bytes.len() < count_at + 8 {
        return Err(Error::Truncated { expected: (count_at + 8) as u64, actual: bytes.len() as u64 });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE_LEN..count_at])?;
    let n = u64::from_le_bytes(bytes[count_at..count_at + 8].try_into().unwrap());
    let total = (n as u128) * 8 + (count_at + 8) as u128;
    if (bytes.len() as u128) < total {
        return Err(Error::Truncated { expected: total.min(u64::MAX as u128) as u64, actual: bytes.len() as u64 });
    }
    if (bytes.len() as u128) > total {
        return Err(Error::CountMismatch(format!("{n} parameters declared but {} trailing bytes remain", bytes.len() as u128 - total)));
    }
    let values: Vec<f64> =
        bytes[count_at + 8..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let expected = crate::netcore::ParamLayout::new(&header.spec, header.in_channels, header.num_classes).len;
    if values.len() != expected {
        return Err(Error::CountMismatch(format!("model spec needs {expected} parameters, checkpoint holds {}", values.len())));
    }
    let model = Model::from_params(header.spec, header.in_channels, header.num_classes, values)?;
    Ok(Checkpoint { model, epoch: header.epoch, config: header.config })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = Model::new(ModelSpec::default(), 3, 4, 9).unwrap();
        Checkpoint { model, epoch: 7, config: Some(TrainConfig::default()) }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn damaged_checkpoints_are_rejected() {
        let good = encode_checkpoint(&sample()).unwrap();
        assert!(matches!(decode_checkpoint(b"SEGD\x01\x00\0\0\0\0"), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_checkpoint(&good[..good.len() - 3]), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_checkpoint(&long), Err(Error::CountMismatch(_))));
        let mut v = good;
        v[5] = 1;
        assert!(matches!(decode_checkpoint(&v), Err(Error::UnsupportedVersion { .. })));
    }
}

//! `SEGD` dataset container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `SEGD` |
//! | 2 | format version (u16) |
//! | 20 | examples, height, width, channels, classes (u32 each) |
//! | per example | image as `H*W*C` f32 row-major, clean mask `H*W` bytes, noisy mask `H*W` bytes |
//! | 4 | metadata length (u32) |
//! | n | UTF-8 JSON metadata |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMask};
use crate::synthgen::{Dataset, Provenance, Split};

pub const DATASET_MAGIC: [u8; 4] = *b"SEGD";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 5 * 4;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    class_names: Vec<String>,
    splits: Vec<Split>,
    provenance: Option<Provenance>,
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the container")))
}

/// Serializes `data`. Image values must be exactly representable as f32.
pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    data.validate()?;
    let (h, w, c) = data.dims().unwrap_or((0, 0, 0));
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * h * w * (4 * c + 2));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for (v, what) in [(data.len(), "example count"), (h, "height"), (w, "width"), (c, "channel count"), (data.num_classes, "class count")] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    for i in 0..data.len() {
        for &v in data.images[i].data() {
            let f = v as f32;
            if f64::from(f).to_bits() != v.to_bits() {
                return Err(Error::invalid(format!("image {i} holds {v}, which is not exactly representable as f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(data.clean_masks[i].data());
        out.extend_from_slice(data.noisy_masks[i].data());
    }
    let meta = Metadata {
        class_names: data.class_names.clone(),
        splits: data.splits.clone(),
        provenance: data.provenance.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    out.extend_from_slice(&u32_field(json.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

fn le_u32(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as usize
}

/// Checks magic and version, the parts shared with the checkpoint format.
pub(super) fn check_preamble(bytes: &[u8], magic: [u8; 4], version: u16, header_len: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: header_len as u64, actual: bytes.len() as u64 });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(Error::Truncated { expected: header_len as u64, actual: bytes.len() as u64 });
    }
    let v = u16::from_le_bytes([bytes[4], bytes[5]]);
    if v != version {
        return Err(Error::UnsupportedVersion { found: v, supported: version });
    }
    Ok(())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    check_preamble(bytes, DATASET_MAGIC, DATASET_VERSION, HEADER_LEN)?;
    let [n, h, w, c, k] = std::array::from_fn(|i| le_u32(bytes, 6 + 4 * i));
    let per_example = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(4 * c + 2))
        .ok_or_else(|| Error::CountMismatch(format!("declared image size {h}x{w}x{c} overflows")))?;
    let payload_end = n
        .checked_mul(per_example)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::CountMismatch(format!("declared example count {n} overflows")))?;
    if bytes.len() < payload_end + 4 {
        return Err(Error::Truncated { expected: (payload_end + 4) as u64, actual: bytes.len() as u64 });
    }
    let meta_len = le_u32(bytes, payload_end);
    let total = payload_end + 4 + meta_len;
    if bytes.len() < total {
        return Err(Error::Truncated { expected: total as u64, actual: bytes.len() as u64 });
    }
    if bytes.len() > total {
        return Err(Error::CountMismatch(format!(
            "declared counts account for {total} bytes but the file has {}",
            bytes.len()
        )));
    }
    let meta: Metadata = serde_json::from_slice(&bytes[payload_end + 4..total])?;
    if meta.class_names.len() != k {
        return Err(Error::CountMismatch(format!("header declares {k} classes, metadata names {}", meta.class_names.len())));
    }
    if meta.splits.len() != n {
        return Err(Error::CountMismatch(format!("header declares {n} examples, metadata tags {}", meta.splits.len())));
    }
    let (hw, img_len) = (h * w, h * w * c);
    let mut images = Vec::with_capacity(n);
    let mut clean_masks = Vec::with_capacity(n);
    let mut noisy_masks = Vec::with_capacity(n);
    let mut at = HEADER_LEN;
    for _ in 0..n {
        let img = bytes[at..at + 4 * img_len]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        images.push(Grid::new(h, w, c, img)?);
        at += 4 * img_len;
        clean_masks.push(LabelMask::new(h, w, bytes[at..at + hw].to_vec())?);
        at += hw;
        noisy_masks.push(LabelMask::new(h, w, bytes[at..at + hw].to_vec())?);
        at += hw;
    }
    let data = Dataset {
        num_classes: k,
        class_names: meta.class_names,
        images,
        clean_masks,
        noisy_masks,
        splits: meta.splits,
        provenance: meta.provenance,
    };
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(data)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

//! RFW1 weight files: magic, length-prefixed JSON config, then named arrays.

use std::collections::HashMap;
use std::path::Path;

use super::{push_f32s, push_u32, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::generator::{build_generator, GeneratorConfig, GeneratorWeights};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"RFW1";

pub fn encode_weights(w: &GeneratorWeights) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&w.config).map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    push_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    let mut status = Ok(());
    w.visit(&mut |name, t| {
        if status.is_err() {
            return;
        }
        status = (|| {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            push_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                push_u32(&mut out, d)?;
            }
            push_f32s(&mut out, t.data());
            Ok(())
        })();
    });
    status.map(|_| out)
}

/// Parses a weight file and checks every array against the shapes implied by
/// its embedded config.
pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<GeneratorWeights> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(WEIGHT_MAGIC)?;
    let json_len = r.u32("config length")? as usize;
    let json_at = r.offset();
    let json = r.take(json_len, "config block")?;
    let config: GeneratorConfig = serde_json::from_slice(json)
        .map_err(|e| r.error_at(json_at, format!("config block is not valid JSON: {e}")))?;

    let mut arrays: HashMap<String, Tensor> = HashMap::new();
    while r.remaining() > 0 {
        let at = r.offset();
        let name_len = r.u32("array name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "array name")?)
            .map_err(|_| r.error_at(at + 4, "array name is not UTF-8"))?
            .to_string();
        let rank = r.u32("array rank")? as usize;
        if !(1..=3).contains(&rank) {
            return Err(r.error_at(r.offset() - 4, format!("array {name}: rank {rank} outside 1..=3")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("array extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(count) = count.filter(|&c| c > 0) else {
            return Err(r.error_at(at, format!("array {name}: invalid extents {shape:?}")));
        };
        let data = r.f32s(count, &format!("array {name}"))?;
        if arrays.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(r.error_at(at, format!("duplicate array {name}")));
        }
    }

    let mut weights = build_generator(&config)?;
    let mut problem = None;
    weights.visit_mut(&mut |name, slot| {
        if problem.is_some() {
            return;
        }
        match arrays.remove(&name) {
            None => problem = Some(format!("array {name} missing from weight file")),
            Some(t) if t.shape() != slot.shape() => {
                problem = Some(format!(
                    "array {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                ))
            }
            Some(t) => *slot = t,
        }
    });
    if let Some(msg) = problem {
        return Err(Error::config(format!("{}: {msg}", path.display())));
    }
    if let Some(extra) = arrays.keys().min() {
        return Err(Error::config(format!("{}: unexpected array {extra}", path.display())));
    }
    Ok(weights)
}

pub fn save_weights(path: &Path, w: &GeneratorWeights) -> Result<()> {
    write_file(path, &encode_weights(w)?)
}

pub fn load_weights(path: &Path) -> Result<GeneratorWeights> {
    decode_weights(&read_file(path)?, path)
}

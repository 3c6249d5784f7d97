//! Checkpoint file: one UTF-8 manifest line, then one tensor container record
//! per parameter in manifest order.
//!
//! ```text
//! rfuda-checkpoint v1 hash=<16 hex> arch=<arch> params=<name>:<d0>x<d1>...;...\n
//! ```
//!
//! Values are stored as `f32`.

use std::fs;
use std::path::Path;

use super::{Arch, ModelParams, PARAM_NAMES};
use crate::dataset::{decode_tensor, encode_tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_TAG: &str = "rfuda-checkpoint v1";

fn manifest_line(params: &ModelParams) -> String {
    let entries: Vec<String> = params
        .named()
        .map(|(name, t)| {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            format!("{name}:{}", dims.join("x"))
        })
        .collect();
    format!(
        "{CHECKPOINT_TAG} hash={:016x} arch={} params={}\n",
        params.arch().config_hash(),
        params.arch(),
        entries.join(";")
    )
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut bytes = manifest_line(params).into_bytes();
    for t in params.tensors() {
        bytes.extend(encode_tensor(t));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
        offset: 0,
        message: "missing manifest line".into(),
    })?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format {
        offset: 0,
        message: "manifest line is not UTF-8".into(),
    })?;
    let rest = line.strip_prefix(CHECKPOINT_TAG).ok_or_else(|| Error::Format {
        offset: 0,
        message: format!("expected `{CHECKPOINT_TAG}`"),
    })?;
    let mut hash = None;
    let mut arch = None;
    let mut names = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("hash", v)) => hash = u64::from_str_radix(v, 16).ok(),
            Some(("arch", v)) => arch = Some(Arch::parse(v)?),
            Some(("params", v)) => names = Some(v.to_string()),
            _ => {}
        }
    }
    let bad = |m: &str| Error::Format {
        offset: 0,
        message: m.to_string(),
    };
    let arch = arch.ok_or_else(|| bad("manifest lacks arch"))?;
    if hash != Some(arch.config_hash()) {
        return Err(bad("architecture hash does not match arch string"));
    }
    let listed: Vec<&str> = names
        .as_deref()
        .ok_or_else(|| bad("manifest lacks params"))?
        .split(';')
        .map(|e| e.split(':').next().unwrap_or(""))
        .collect();
    if listed != PARAM_NAMES {
        return Err(bad("parameter list does not match this model"));
    }
    let mut offset = nl + 1;
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    for _ in PARAM_NAMES {
        let (t, used) = decode_tensor(&bytes[offset..], offset as u64)?;
        offset += used;
        tensors.push(t);
    }
    if offset != bytes.len() {
        return Err(Error::Format {
            offset: offset as u64,
            message: "trailing bytes after last parameter".into(),
        });
    }
    ModelParams::from_tensors(arch, tensors)
}

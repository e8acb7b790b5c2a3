//! Named-tensor checkpoint container.
//!
//! Layout: a UTF-8 manifest of newline-terminated lines, then the raw payload.
//!
//! ```text
//! molmeta-checkpoint
//! format_version 1
//! dtype f64
//! config <key> = <value>            (zero or more)
//! tensor <name> <rows> <cols> <offset> <nbytes>   (one per tensor)
//! payload <total bytes>
//! end
//! <payload: row-major little-endian values, tensors back to back>
//! ```
//!
//! Offsets are relative to the payload start and must be contiguous in
//! manifest order.

use std::path::Path;

use crate::autodiff::{ParameterSet, Tensor};
use crate::data::DataError;
use crate::scalar::{Dtype, Scalar};

pub const MAGIC: &str = "molmeta-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// A loaded checkpoint before it is matched against a model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub dtype: Dtype,
    pub config: Vec<(String, String)>,
    pub params: ParameterSet<T>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Verifies names and shapes against `expected`, naming the first offending tensor.
    pub fn check_layout(&self, expected: &[(String, [usize; 2])]) -> Result<(), DataError> {
        for (name, shape) in expected {
            match self.params.get(name) {
                None => return Err(DataError::MissingTensor(name.clone())),
                Some(t) if t.shape() != *shape => {
                    return Err(DataError::ShapeMismatch {
                        name: name.clone(),
                        found: t.shape(),
                        expected: *shape,
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self
            .params
            .names()
            .find(|n| !expected.iter().any(|(e, _)| e == n))
        {
            return Err(DataError::UnexpectedTensor(extra.to_string()));
        }
        Ok(())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Serializes `params` (stored in `T`'s precision) with a config snapshot.
pub fn encode_checkpoint<T: Scalar>(
    params: &ParameterSet<T>,
    config: &[(String, String)],
) -> Result<Vec<u8>, DataError> {
    let mut manifest = format!(
        "{MAGIC}\nformat_version {FORMAT_VERSION}\ndtype {}\n",
        T::DTYPE.name()
    );
    for (k, v) in config {
        if k.contains(['\n', '=']) || v.contains('\n') || k.trim() != k || k.is_empty() {
            return Err(DataError::Malformed(format!(
                "config entry {k:?} cannot be stored"
            )));
        }
        manifest.push_str(&format!("config {k} = {v}\n"));
    }
    let mut payload = Vec::new();
    for (name, t) in params.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(DataError::Malformed(format!(
                "tensor name {name:?} cannot be stored"
            )));
        }
        let offset = payload.len();
        for &x in t.data() {
            x.write_le(&mut payload);
        }
        manifest.push_str(&format!(
            "tensor {name} {} {} {offset} {}\n",
            t.rows(),
            t.cols(),
            payload.len() - offset
        ));
    }
    manifest.push_str(&format!("payload {}\nend\n", payload.len()));
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(
    params: &ParameterSet<T>,
    config: &[(String, String)],
    path: &Path,
) -> Result<(), DataError> {
    let bytes = encode_checkpoint(params, config)?;
    std::fs::write(path, bytes).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode_checkpoint(&bytes)
}

/// Parses a container, converting values to `T` if the stored dtype differs.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, DataError> {
    let corrupt = |msg: &str| DataError::CorruptFile(msg.to_string());
    let mut pos = 0;
    let mut next_line = || -> Result<&str, DataError> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("manifest is not terminated"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("manifest is not UTF-8"))
    };

    if next_line()? != MAGIC {
        return Err(corrupt("missing magic line"));
    }
    let version: u32 = next_line()?
        .strip_prefix("format_version ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| corrupt("missing format_version"))?;
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dtype = next_line()?
        .strip_prefix("dtype ")
        .and_then(Dtype::from_name)
        .ok_or_else(|| corrupt("missing or unknown dtype"))?;

    let mut config = Vec::new();
    let mut tensors: Vec<(String, usize, usize, usize, usize)> = Vec::new();
    let total = loop {
        let line = next_line()?;
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "config" => {
                let (k, v) = rest
                    .split_once(" = ")
                    .ok_or_else(|| corrupt("bad config line"))?;
                config.push((k.to_string(), v.to_string()));
            }
            "tensor" => {
                let f: Vec<&str> = rest.split(' ').collect();
                let nums: Option<Vec<usize>> = f
                    .get(1..5)
                    .map(|s| s.iter().map(|x| x.parse().ok()).collect())
                    .flatten();
                match (f.len(), nums) {
                    (5, Some(n)) => tensors.push((f[0].to_string(), n[0], n[1], n[2], n[3])),
                    _ => return Err(corrupt("bad tensor line")),
                }
            }
            "payload" => {
                break rest
                    .parse::<usize>()
                    .map_err(|_| corrupt("bad payload line"))?
            }
            _ => return Err(corrupt("unexpected manifest line")),
        }
    };
    if next_line()? != "end" {
        return Err(corrupt("missing end line"));
    }
    drop(next_line);
    let payload = &bytes[pos..];
    if payload.len() != total {
        return Err(corrupt("payload length does not match manifest"));
    }

    let size = dtype.size();
    let mut expected_offset = 0;
    let mut params = ParameterSet::new();
    for (name, rows, cols, offset, nbytes) in tensors {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| corrupt("tensor too large"))?;
        if offset != expected_offset || nbytes != count * size || offset + nbytes > payload.len() {
            return Err(corrupt(&format!("tensor {name} has inconsistent offsets")));
        }
        expected_offset += nbytes;
        let raw = &payload[offset..offset + nbytes];
        let data: Vec<T> = match dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::read_le(c)))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::read_le(c) as f64))
                .collect(),
        };
        let t = Tensor::new(rows, cols, data).map_err(|_| corrupt("tensor size"))?;
        params
            .insert(name.clone(), t)
            .map_err(|_| corrupt(&format!("duplicate tensor {name}")))?;
    }
    if expected_offset != payload.len() {
        return Err(corrupt("payload has trailing bytes"));
    }
    Ok(Checkpoint {
        format_version: version,
        dtype,
        config,
        params,
    })
}

//! Checkpoint file: one line of UTF-8 JSON (a list of `{name, shape,
//! byte_offset}` entries) followed by a contiguous little-endian f64 payload.
//! Loading is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

pub fn save<S: Scalar>(path: &Path, params: &[(String, &Tensor<S>)]) -> Result<()> {
    let mut manifest = Vec::with_capacity(params.len());
    let mut offset = 0usize;
    for (name, t) in params {
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            byte_offset: offset,
        });
        offset += t.numel() * 8;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    for (_, t) in params {
        for v in t.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Invalid("checkpoint missing manifest delimiter".into()))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[..nl])?;
    let payload = &bytes[nl + 1..];
    let mut out = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let numel: usize = entry.shape.iter().product();
        let end = entry.byte_offset + numel * 8;
        if end > payload.len() {
            return Err(Error::Invalid(format!(
                "checkpoint payload truncated: {} needs bytes {}..{} of {}",
                entry.name,
                entry.byte_offset,
                end,
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(numel);
        for chunk in payload[entry.byte_offset..end].chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            data.push(S::of_f64(v));
        }
        out.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    Ok(out)
}

//! Tensor and checkpoint file formats.
//!
//! A tensor file is a UTF-8 header line `shape: d0 d1 ...` followed by the
//! elements as little-endian 32-bit floats in row-major order. A checkpoint
//! is a magic line, `key=value` metadata, a blank line, then named tensors
//! (`tensor: <name>` followed by a tensor block). Readers never panic on
//! malformed input; they return parse/integrity errors.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &str = "ht-checkpoint v1";
/// Upper bound on elements in a single serialized tensor; everything this
/// workspace stores is far below it, and it keeps hostile headers from
/// driving huge allocations.
const MAX_NUMEL: usize = 1 << 24;

fn read_line(r: &mut impl BufRead) -> Result<Option<String>> {
    let mut line = String::new();
    let n = r
        .read_line(&mut line)
        .map_err(|e| Error::Parse(format!("unreadable line: {e}")))?;
    if n == 0 {
        return Ok(None);
    }
    while line.ends_with('\n') || line.ends_with('\r') {
        line.pop();
    }
    Ok(Some(line))
}

fn parse_shape_line(line: &str) -> Result<Vec<usize>> {
    let rest = line
        .strip_prefix("shape:")
        .ok_or_else(|| Error::Parse(format!("expected `shape:` header, got `{line}`")))?;
    let mut shape = Vec::new();
    for tok in rest.split_whitespace() {
        let d: usize = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad shape extent `{tok}`")))?;
        if d == 0 {
            return Err(Error::Parse("zero extent in shape header".to_string()));
        }
        shape.push(d);
    }
    if shape.is_empty() {
        return Err(Error::Parse("empty shape header".to_string()));
    }
    let mut numel: usize = 1;
    for &d in &shape {
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::Parse("shape overflows".to_string()))?;
        if numel > MAX_NUMEL {
            return Err(Error::Parse(format!(
                "tensor of {numel}+ elements exceeds the format limit"
            )));
        }
    }
    Ok(shape)
}

/// Serialize one tensor (values quantized to f32 by the format).
pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "shape: {}", dims.join(" "))?;
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Parse one tensor block. Values come back as exact f32s held in f64.
pub fn read_tensor(r: &mut impl BufRead) -> Result<Tensor> {
    let line = read_line(r)?.ok_or_else(|| Error::Parse("missing shape header".to_string()))?;
    read_tensor_body(r, &line)
}

fn read_tensor_body(r: &mut impl BufRead, shape_line: &str) -> Result<Tensor> {
    let shape = parse_shape_line(shape_line)?;
    let numel: usize = shape.iter().product();
    let mut buf = vec![0u8; numel * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Parse(format!("truncated tensor payload: {e}")))?;
    let data: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("non-finite value in tensor payload".to_string()));
    }
    Tensor::from_vec(&shape, data)
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = File::create(path)?;
    write_tensor(&mut f, t)
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let f = File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_tensor(&mut BufReader::new(f))
}

/// Named-tensor container with ordered string metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Checkpoint {
        Checkpoint {
            kind: kind.to_string(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .meta(key)
            .ok_or_else(|| Error::Parse(format!("checkpoint missing `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Parse(format!("checkpoint `{key}` value `{v}` unparsable")))
    }

    pub fn push(&mut self, name: &str, t: &Tensor) {
        self.tensors.push((name.to_string(), t.detach()));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Integrity(format!("checkpoint missing tensor `{name}`")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "kind={}", self.kind)?;
        for (k, v) in &self.meta {
            if k.contains(['\n', '=']) || v.contains('\n') {
                return Err(Error::Input(format!("unencodable metadata key `{k}`")));
            }
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w)?;
        for (name, t) in &self.tensors {
            if name.contains('\n') {
                return Err(Error::Input(format!("unencodable tensor name `{name}`")));
            }
            writeln!(w, "tensor: {name}")?;
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Checkpoint> {
        let magic = read_line(r)?.ok_or_else(|| Error::Parse("empty checkpoint".to_string()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse(format!("bad magic line `{magic}`")));
        }
        let mut kind = None;
        let mut meta = Vec::new();
        loop {
            let line = read_line(r)?
                .ok_or_else(|| Error::Parse("checkpoint header not terminated".to_string()))?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
            if k == "kind" {
                kind = Some(v.to_string());
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }
        let kind = kind.ok_or_else(|| Error::Parse("checkpoint missing kind".to_string()))?;
        let mut tensors = Vec::new();
        while let Some(line) = read_line(r)? {
            if line.is_empty() {
                continue;
            }
            let name = line
                .strip_prefix("tensor: ")
                .ok_or_else(|| Error::Parse(format!("expected `tensor:` line, got `{line}`")))?;
            if tensors.len() >= 4096 {
                return Err(Error::Parse("too many tensors in checkpoint".to_string()));
            }
            let shape_line = read_line(r)?
                .ok_or_else(|| Error::Parse(format!("tensor `{name}` missing shape")))?;
            let t = read_tensor_body(r, &shape_line)?;
            tensors.push((name.to_string(), t));
        }
        Ok(Checkpoint {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let f = File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::read_from(&mut BufReader::new(f))
    }
}

//! Portable binary model file.
//!
//! All integers and floats are little-endian.
//!
//! | field            | type                    | notes                                  |
//! |------------------|-------------------------|----------------------------------------|
//! | magic            | 4 bytes                 | `INHM` vendor model, `INHT` adapted    |
//! | format_version   | u32                     | currently 1                            |
//! | input_dim        | u64                     |                                        |
//! | m_dims           | u32 count, u64 each     | backbone widths                        |
//! | e_dims           | u32 count, u64 each     | embedder widths                        |
//! | num_shared       | u64                     | `|C_s|`                                |
//! | num_negative     | u64                     | `K`                                    |
//! | layers           | see below               | `M` layers, `E` layers, `G_s`, `G_n`   |
//! | label count      | u64                     | equals num_shared                      |
//! | shared_labels    | i64 each                |                                        |
//! | source_mean_w    | f64                     | in (0, 1]                              |
//! | checksum         | u32                     | CRC-32 (IEEE) of every preceding byte  |
//!
//! Each layer block is `inputs: u64, outputs: u64`, then `inputs * outputs`
//! f64 weights in row-major order, then `outputs` f64 biases.
//!
//! Validation order is magic, version, checksum, then structure, so a
//! truncated file reports a checksum error.

use std::path::Path;

use crate::error::{Error, FormatField, Result};
use crate::numcore::{Dense, Matrix, ReluStack};

use super::{InheritableModel, NetworkSpec};

pub const FORMAT_VERSION: u32 = 1;

const MAGIC_VENDOR: &[u8; 4] = b"INHM";
const MAGIC_ADAPTED: &[u8; 4] = b"INHT";

/// Which side of the pipeline produced a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Trained by the vendor (`INHM`).
    Vendor,
    /// Adapted by a client (`INHT`).
    Adapted,
}

impl ModelKind {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            ModelKind::Vendor => MAGIC_VENDOR,
            ModelKind::Adapted => MAGIC_ADAPTED,
        }
    }
}

pub fn encode(model: &InheritableModel, kind: ModelKind) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(kind.magic());
    w.u32(FORMAT_VERSION);
    let spec = &model.spec;
    w.u64(spec.input_dim as u64);
    w.u32(spec.m_dims.len() as u32);
    for &d in &spec.m_dims {
        w.u64(d as u64);
    }
    w.u32(spec.e_dims.len() as u32);
    for &d in &spec.e_dims {
        w.u64(d as u64);
    }
    w.u64(spec.num_shared as u64);
    w.u64(spec.num_negative as u64);
    let layers = model
        .backbone
        .layers
        .iter()
        .chain(&model.embedder.layers)
        .chain([&model.shared_head, &model.negative_head]);
    for layer in layers {
        w.u64(layer.inputs() as u64);
        w.u64(layer.outputs() as u64);
        for &v in layer.weight.data().iter().chain(&layer.bias) {
            w.f64(v);
        }
    }
    w.u64(model.shared_labels.len() as u64);
    for &l in &model.shared_labels {
        w.i64(l);
    }
    w.f64(model.source_mean_w);
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<(ModelKind, InheritableModel)> {
    let kind = match bytes.get(0..4) {
        Some(m) if m == MAGIC_VENDOR => ModelKind::Vendor,
        Some(m) if m == MAGIC_ADAPTED => ModelKind::Adapted,
        Some(m) => {
            return Err(Error::format(
                FormatField::Magic,
                format!("expected INHM or INHT, found {:?}", String::from_utf8_lossy(m)),
            ))
        }
        None => return Err(Error::format(FormatField::Magic, "file shorter than the magic")),
    };
    let version = bytes
        .get(4..8)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(FormatField::Version, "file ends before the version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            FormatField::Version,
            format!("unsupported version {version}, this build reads {FORMAT_VERSION}"),
        ));
    }
    if bytes.len() < 12 {
        return Err(Error::format(FormatField::Checksum, "file ends before the checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::format(
            FormatField::Checksum,
            format!("stored {stored:#010x}, computed {computed:#010x} (truncated or corrupted file)"),
        ));
    }

    let mut r = Reader { buf: body, pos: 8 };
    let spec_err = |e: Error| match e {
        Error::Format { message, .. } => Error::format(FormatField::Spec, message),
        other => other,
    };
    let input_dim = r.usize().map_err(spec_err)?;
    let m_dims = r.dims().map_err(spec_err)?;
    let e_dims = r.dims().map_err(spec_err)?;
    let num_shared = r.usize().map_err(spec_err)?;
    let num_negative = r.usize().map_err(spec_err)?;
    let spec = NetworkSpec {
        input_dim,
        m_dims,
        e_dims,
        num_shared,
        num_negative,
    };
    spec.validate()
        .map_err(|e| Error::format(FormatField::Spec, e.to_string()))?;

    let mut fan_in = spec.input_dim;
    let mut backbone = Vec::new();
    for &w in &spec.m_dims {
        backbone.push(r.layer(fan_in, w)?);
        fan_in = w;
    }
    let mut embedder = Vec::new();
    for &w in &spec.e_dims {
        embedder.push(r.layer(fan_in, w)?);
        fan_in = w;
    }
    let shared_head = r.layer(fan_in, spec.num_shared)?;
    let negative_head = r.layer(fan_in, spec.num_negative)?;

    let count = r
        .usize()
        .map_err(|_| Error::format(FormatField::Labels, "missing label count"))?;
    if count != spec.num_shared {
        return Err(Error::format(
            FormatField::Labels,
            format!("{count} labels for {} shared classes", spec.num_shared),
        ));
    }
    let mut shared_labels = Vec::with_capacity(count);
    for _ in 0..count {
        shared_labels.push(
            r.i64()
                .map_err(|_| Error::format(FormatField::Labels, "label block truncated"))?,
        );
    }
    let source_mean_w = r
        .f64()
        .map_err(|_| Error::format(FormatField::SourceMeanWeight, "missing value"))?;
    if r.pos != body.len() {
        return Err(Error::format(
            FormatField::SourceMeanWeight,
            format!("{} unexpected trailing bytes", body.len() - r.pos),
        ));
    }

    let model = InheritableModel {
        spec,
        backbone: ReluStack { layers: backbone },
        embedder: ReluStack { layers: embedder },
        shared_head,
        negative_head,
        shared_labels,
        source_mean_w,
    };
    model.validate().map_err(|e| {
        let field = if !(source_mean_w > 0.0 && source_mean_w <= 1.0) {
            FormatField::SourceMeanWeight
        } else {
            FormatField::Labels
        };
        Error::format(field, e.to_string())
    })?;
    Ok((kind, model))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a vendor model (`INHM`).
pub fn save_model(model: &InheritableModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(model, ModelKind::Vendor))
}

/// Writes an adapted model (`INHT`).
pub fn save_adapted(model: &InheritableModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(model, ModelKind::Adapted))
}

/// Reads a model file of either kind.
pub fn load_any(path: impl AsRef<Path>) -> Result<(ModelKind, InheritableModel)> {
    decode(&read_file(path.as_ref())?)
}

/// Reads a vendor model, rejecting adapted files.
pub fn load_model(path: impl AsRef<Path>) -> Result<InheritableModel> {
    match load_any(path)? {
        (ModelKind::Vendor, m) => Ok(m),
        (ModelKind::Adapted, _) => Err(Error::format(
            FormatField::Magic,
            "expected a vendor model (INHM), found an adapted model (INHT)",
        )),
    }
}

/// Reads an adapted model, rejecting vendor files.
pub fn load_adapted(path: impl AsRef<Path>) -> Result<InheritableModel> {
    match load_any(path)? {
        (ModelKind::Adapted, m) => Ok(m),
        (ModelKind::Vendor, _) => Err(Error::format(
            FormatField::Magic,
            "expected an adapted model (INHT), found a vendor model (INHM)",
        )),
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::format(FormatField::Parameters, "unexpected end of data"))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= 1 << 32)
            .ok_or_else(|| Error::format(FormatField::Spec, format!("implausible size {v}")))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 1024 {
            return Err(Error::format(FormatField::Spec, format!("{n} layers is implausible")));
        }
        (0..n).map(|_| self.usize()).collect()
    }
    fn layer(&mut self, inputs: usize, outputs: usize) -> Result<Dense> {
        let bad = |msg: String| Error::format(FormatField::Parameters, msg);
        let (i, o) = (self.usize()?, self.usize()?);
        if (i, o) != (inputs, outputs) {
            return Err(bad(format!("layer is {i}x{o}, spec implies {inputs}x{outputs}")));
        }
        let mut weights = Vec::with_capacity(i * o);
        for _ in 0..i * o {
            weights.push(self.f64()?);
        }
        let mut bias = Vec::with_capacity(o);
        for _ in 0..o {
            bias.push(self.f64()?);
        }
        let weight = Matrix::new(i, o, weights).map_err(|e| bad(e.to_string()))?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(bad("non-finite bias".into()));
        }
        Ok(Dense { weight, bias })
    }
}

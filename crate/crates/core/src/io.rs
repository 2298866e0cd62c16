//! File formats: field batches (`FGB1`), checkpoints (`FCK1`), run
//! manifests and CSV traces. All binary data is little-endian.
//!
//! Field batch header, 32 bytes:
//!
//! | offset | type   | content          |
//! |--------|--------|------------------|
//! | 0      | [u8;4] | `FGB1`           |
//! | 4      | u16    | version (1)      |
//! | 6      | u8     | dtype (1 = f64)  |
//! | 7      | u8     | reserved         |
//! | 8      | u32    | field count      |
//! | 12     | u16    | nx               |
//! | 14     | u16    | ny               |
//! | 16     | f64    | lx               |
//! | 24     | f64    | ly               |
//!
//! followed by the fields, each row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grf::KernelSpec;
use crate::neuralop::{layout, Activation, FnoConfig, OperatorParams};
use crate::tensorgrid::{Field, GridSpec};
use crate::trainer::{AdamState, StepRecord, TRACE_HEADER};

pub const FIELD_MAGIC: &[u8; 4] = b"FGB1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCK1";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
pub const FIELD_HEADER_LEN: usize = 32;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.reserve(v.len() * 8);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn check_magic(r: &mut Reader, magic: &[u8; 4]) -> Result<()> {
    let m = r.take(4)?;
    if m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = r.u16()?;
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn encode_fields(fields: &[Field]) -> Result<Vec<u8>> {
    let g = match fields.first() {
        Some(f) => *f.grid(),
        None => return Err(Error::InvalidArgument("no fields to write".into())),
    };
    for f in fields {
        g.ensure_same(f.grid())?;
    }
    let count = u32::try_from(fields.len()).map_err(|_| Error::Format("too many fields".into()))?;
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * fields.len() * g.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(0);
    out.extend_from_slice(&count.to_le_bytes());
    for n in [g.nx, g.ny] {
        let n = u16::try_from(n).map_err(|_| Error::Format(format!("grid side {n} exceeds 65535")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.extend_from_slice(&g.lx.to_le_bytes());
    out.extend_from_slice(&g.ly.to_le_bytes());
    for f in fields {
        put_f64s(&mut out, f.values());
    }
    Ok(out)
}

pub fn decode_fields(bytes: &[u8]) -> Result<Vec<Field>> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, FIELD_MAGIC)?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    r.u8()?;
    let count = r.u32()? as usize;
    let (nx, ny) = (r.u16()? as usize, r.u16()? as usize);
    let (lx, ly) = (r.f64()?, r.f64()?);
    let grid = GridSpec::new(nx, ny, lx, ly)?;
    let expect = FIELD_HEADER_LEN as u128 + 8 * (count as u128) * (grid.len() as u128);
    if bytes.len() as u128 != expect {
        return Err(Error::Format(format!(
            "file has {} bytes, header implies {expect}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(Field::new(grid, r.f64s(grid.len())?)?);
    }
    r.done()?;
    Ok(out)
}

pub fn write_fields(path: &Path, fields: &[Field]) -> Result<()> {
    write_atomic(path, &encode_fields(fields)?)
}

pub fn read_fields(path: &Path) -> Result<Vec<Field>> {
    decode_fields(&fs::read(path)?)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Everything needed to sample from a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: OperatorParams,
    pub kernel: KernelSpec,
    pub step: u64,
    pub adam: AdamState,
    pub seed: u64,
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Gelu => 0,
        Activation::Identity => 1,
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let c = self.params.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        for v in [c.n_layers, c.modes, c.width, c.lift_dim, c.proj_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(activation_code(c.activation));
        let k = self.kernel;
        put_f64s(&mut out, &[k.nu, k.length_scale, k.variance, k.mean]);
        let tensors = layout(c);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        let values = self.params.values();
        for t in &tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            put_f64s(&mut out, &values[t.offset..t.offset + t.len()]);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, CHECKPOINT_MAGIC)?;
        r.u16()?;
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let activation = match r.u8()? {
            0 => Activation::Gelu,
            1 => Activation::Identity,
            a => return Err(Error::Format(format!("unknown activation code {a}"))),
        };
        let config = FnoConfig {
            n_layers: dims[0],
            modes: dims[1],
            width: dims[2],
            lift_dim: dims[3],
            proj_dim: dims[4],
            activation,
        };
        config.validate()?;
        let kv = r.f64s(4)?;
        let kernel = KernelSpec::new(kv[0], kv[1], kv[2], kv[3])?;
        let expected = layout(&config);
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Format(format!(
                "{count} tensors, configuration declares {}",
                expected.len()
            )));
        }
        let mut values = Vec::new();
        for t in &expected {
            let len = r.u16()? as usize;
            let name = r.take(len)?;
            if name != t.name.as_bytes() {
                return Err(Error::Format(format!(
                    "tensor {:?} where {} was expected",
                    String::from_utf8_lossy(name),
                    t.name
                )));
            }
            let rank = r.u8()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            if shape != t.shape {
                return Err(Error::Format(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    t.name, t.shape
                )));
            }
            values.extend(r.f64s(t.len())?);
        }
        let n = values.len();
        let params = OperatorParams::from_values(config, values)?;
        let step = r.u64()?;
        let adam_step = r.u64()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let seed = r.u64()?;
        r.done()?;
        Ok(Self {
            params,
            kernel,
            step,
            adam: AdamState { step: adam_step, m, v },
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// `{"key": "value", ...}` with one pair per line, in the given order.
pub fn manifest_text(entries: &[(String, String)]) -> String {
    let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
    let body: Vec<String> = entries
        .iter()
        .map(|(k, v)| format!("  \"{}\": \"{}\"", esc(k), esc(v)))
        .collect();
    format!("{{\n{}\n}}\n", body.join(",\n"))
}

pub fn trace_csv(records: &[StepRecord]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

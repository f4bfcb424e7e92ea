//! Binary checkpoint format.
//!
//! ```text
//! "RPN1"  u32 version
//! u8 direction  u8 arch  u32 bins  u32 hidden  u8 context_frozen  u8 width_mode  u8 activation
//! u32 metadata_len  metadata (utf8)
//! u64 adam_step
//! u32 block_count
//!   per block: u32 name_len, name, u32 rank, rank x u32 dims, f32 values
//! u64 length of everything above
//! ```
//!
//! All integers and floats are little-endian. Parameter blocks come first in
//! model order, followed by `adam.m/<name>` and `adam.v/<name>` blocks.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::colorhist::WidthMode;
use crate::error::{Error, Result};
use crate::model::{Architecture, Direction, ModelParams, NetworkConfig};
use crate::tensor::Activation;

pub const MAGIC: &[u8; 4] = b"RPN1";
pub const VERSION: u32 = 1;

/// Parameters plus the free-form metadata string stored alongside them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub metadata: String,
}

fn code<T: PartialEq + Copy>(table: &[(T, u8)], v: T) -> u8 {
    table
        .iter()
        .find(|(t, _)| *t == v)
        .map(|(_, c)| *c)
        .expect("complete table")
}

fn decode<T: Copy>(table: &[(T, u8)], c: u8, what: &str) -> Result<T> {
    table
        .iter()
        .find(|(_, k)| *k == c)
        .map(|(t, _)| *t)
        .ok_or_else(|| Error::Format(format!("unknown {what} code {c}")))
}

const DIRECTIONS: [(Direction, u8); 2] = [(Direction::RawToSrgb, 0), (Direction::SrgbToRaw, 1)];
const ARCHS: [(Architecture, u8); 3] = [
    (Architecture::Scene, 0),
    (Architecture::Mlp, 1),
    (Architecture::Srcnn, 2),
];
const WIDTH_MODES: [(WidthMode, u8); 2] = [(WidthMode::HalfWidth, 0), (WidthMode::Multiplicative, 1)];
const ACTIVATIONS: [(Activation, u8); 2] = [(Activation::Relu, 0), (Activation::Identity, 1)];

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_block(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode(params: &ModelParams<f32>, metadata: &str) -> Result<Vec<u8>> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(code(&DIRECTIONS, c.direction));
    out.push(code(&ARCHS, c.arch));
    put_u32(&mut out, c.bins)?;
    put_u32(&mut out, c.hidden)?;
    out.push(c.context_frozen as u8);
    out.push(code(&WIDTH_MODES, c.width_mode));
    out.push(code(&ACTIVATIONS, c.activation));
    put_u32(&mut out, metadata.len())?;
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&params.adam.step.to_le_bytes());

    let blocks = params.blocks();
    put_u32(&mut out, blocks.len() * 3)?;
    for b in &blocks {
        put_block(&mut out, &b.name, &b.dims, b.values)?;
    }
    for (prefix, moments) in [("adam.m/", &params.adam.first), ("adam.v/", &params.adam.second)] {
        for (b, m) in blocks.iter().zip(moments) {
            put_block(&mut out, &format!("{prefix}{}", b.name), &b.dims, m)?;
        }
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated checkpoint while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid utf-8")))
    }
}

pub fn decode_bytes(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 16 || &buf[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (missing RPN1 magic)".into()));
    }
    let body_len = buf.len() - 8;
    let stored = u64::from_le_bytes(buf[body_len..].try_into().expect("8 bytes"));
    let mut r = Reader {
        buf: &buf[..body_len],
        pos: 4,
    };
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    if stored != body_len as u64 {
        return Err(Error::Format(format!(
            "length check failed: trailer says {stored} bytes, found {body_len}"
        )));
    }
    let config = NetworkConfig {
        direction: decode(&DIRECTIONS, r.u8("direction")?, "direction")?,
        arch: decode(&ARCHS, r.u8("architecture")?, "architecture")?,
        bins: r.u32("bins")?,
        hidden: r.u32("hidden")?,
        context_frozen: match r.u8("context flag")? {
            0 => false,
            1 => true,
            c => return Err(Error::Format(format!("context flag must be 0 or 1, got {c}"))),
        },
        width_mode: decode(&WIDTH_MODES, r.u8("width mode")?, "width mode")?,
        activation: decode(&ACTIVATIONS, r.u8("activation")?, "activation")?,
    };
    let metadata = r.string("metadata")?;
    let step = r.u64("adam step")?;
    let mut params = ModelParams::zeros(config).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    params.adam.step = step;

    let expected: Vec<(String, Vec<usize>)> = params.blocks().into_iter().map(|b| (b.name, b.dims)).collect();
    let count = r.u32("block count")?;
    if count != expected.len() * 3 {
        return Err(Error::Format(format!(
            "expected {} blocks for this architecture, found {count}",
            expected.len() * 3
        )));
    }
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(count);
    let prefixes = ["", "adam.m/", "adam.v/"];
    for i in 0..count {
        let (name, dims) = &expected[i % expected.len()];
        let want = format!("{}{name}", prefixes[i / expected.len()]);
        let got = r.string("block name")?;
        if got != want {
            return Err(Error::Format(format!("block {i} is {got:?}, expected {want:?}")));
        }
        let rank = r.u32("rank")?;
        let got_dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        if &got_dims != dims {
            return Err(Error::Format(format!(
                "block {want} has dims {got_dims:?}, expected {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, &want)?;
        values.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    if r.pos != body_len {
        return Err(Error::Format(format!(
            "{} unexpected bytes after the last block",
            body_len - r.pos
        )));
    }
    let k = expected.len();
    let mut it = values.into_iter();
    for dst in params.blocks_mut() {
        dst.copy_from_slice(&it.next().expect("counted"));
    }
    params.adam.first = it.by_ref().take(k).collect();
    params.adam.second = it.collect();
    if let Some(h) = &params.hist {
        h.validate()
            .map_err(|e| Error::Format(format!("stored histogram: {e}")))?;
    }
    Ok(Checkpoint { params, metadata })
}

/// Writes atomically: the bytes go to a sibling temporary file which is
/// then renamed over `path`.
pub fn save(path: &Path, params: &ModelParams<f32>, metadata: &str) -> Result<()> {
    let bytes = encode(params, metadata)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

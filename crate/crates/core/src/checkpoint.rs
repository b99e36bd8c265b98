//! Parameter checkpoint container.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic    8 bytes  "SPANCKPT"
//! version  u32
//! n_meta   u32, then n_meta × (u32 len, utf8 key, u32 len, utf8 value)
//! n_arrays u32, then n_arrays × (u32 len, utf8 name, u32 rank,
//!                               rank × u64 extent, product(extents) × f64)
//! ```
//!
//! Array names are `<role>/<parameter>`; network shapes live in the metadata
//! under `<role>.*` keys (see [`Net::describe`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, SpanError};
use crate::linalg::{DenseArray, ParamStore};
use crate::net::Net;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, DenseArray)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a network's parameters and shape description under `role`.
    pub fn insert_net(&mut self, role: &str, net: &Net) {
        self.meta.extend(net.describe(role));
        for (name, array) in net.params().iter() {
            self.arrays.push((format!("{role}/{name}"), array.clone()));
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.meta.contains_key(&format!("{role}.kind"))
    }

    /// Rebuild the network stored under `role`.
    pub fn net(&self, role: &str) -> Result<Net> {
        let (arch, input, output) = Net::parse_description(&self.meta, role)?;
        let prefix = format!("{role}/");
        let mut params = ParamStore::new();
        for (name, array) in &self.arrays {
            if let Some(short) = name.strip_prefix(&prefix) {
                params.add(short, array.clone());
            }
        }
        Net::from_params(&arch, input, output, params)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, array) in &self.arrays {
            write_str(w, name)?;
            w.write_u32::<LittleEndian>(array.shape().len() as u32)?;
            for &extent in array.shape() {
                w.write_u64::<LittleEndian>(extent as u64)?;
            }
            for &x in array.data() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SpanError::Format("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(SpanError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut out = Checkpoint::new();
        let n_meta = r.read_u32::<LittleEndian>()?;
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            out.meta.insert(k, v);
        }
        let n_arrays = r.read_u32::<LittleEndian>()?;
        for _ in 0..n_arrays {
            let name = read_str(r)?;
            let rank = r.read_u32::<LittleEndian>()? as usize;
            if rank > 8 {
                return Err(SpanError::Format(format!("array `{name}` has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.read_u64::<LittleEndian>().map(|x| x as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            out.arrays.push((name, DenseArray::from_vec(&shape, data)?));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(SpanError::Format(format!("string of length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| SpanError::Format("invalid utf-8".into()))
}

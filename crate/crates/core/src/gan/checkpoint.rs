//! TAGW checkpoint format: magic "TAGW", u32 version, then named blocks of
//! [u16 name length, UTF-8 name, u8 rank, u32 dims each, little-endian f64
//! payload] until end of file. Optimizer moments and step counters are
//! stored as additional named blocks so a run can be replayed exactly.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::net::ParamStore;
use super::Adam;

pub const TAGW_MAGIC: &[u8; 4] = b"TAGW";
pub const TAGW_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointData {
    pub blocks: Vec<Block>,
}

impl CheckpointData {
    pub fn get(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|b| b.data.first().copied())
    }
}

fn push_block(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize generator-side and discriminator-side stores plus optimizer
/// state and the epoch marker.
pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    gen_store: &ParamStore<T>,
    disc_store: &ParamStore<T>,
    adam_g: &Adam,
    adam_d: &Adam,
    epoch: usize,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TAGW_MAGIC);
    buf.extend_from_slice(&TAGW_VERSION.to_le_bytes());
    for store in [gen_store, disc_store] {
        for p in store.entries() {
            let as_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
            push_block(&mut buf, &p.name, &p.shape, &as_f64(&p.data));
            push_block(&mut buf, &format!("adam.m.{}", p.name), &p.shape, &as_f64(&p.adam_m));
            push_block(&mut buf, &format!("adam.v.{}", p.name), &p.shape, &as_f64(&p.adam_v));
        }
    }
    push_block(&mut buf, "adam.t.gen", &[1], &[adam_g.t as f64]);
    push_block(&mut buf, "adam.t.disc", &[1], &[adam_d.t as f64]);
    push_block(&mut buf, "epoch", &[1], &[epoch as f64]);
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != TAGW_MAGIC {
        return Err(CoreError::Format(format!(
            "{}: missing TAGW magic",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TAGW_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported TAGW version {version}",
            path.display()
        )));
    }
    let mut blocks = Vec::new();
    let mut off = 8usize;
    let err = |what: &str| CoreError::Format(format!("{}: truncated {what}", path.display()));
    while off < bytes.len() {
        if off + 2 > bytes.len() {
            return Err(err("name length"));
        }
        let name_len = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        if off + name_len > bytes.len() {
            return Err(err("name"));
        }
        let name = String::from_utf8(bytes[off..off + name_len].to_vec())
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        off += name_len;
        if off >= bytes.len() {
            return Err(err("rank"));
        }
        let rank = bytes[off] as usize;
        off += 1;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            if off + 4 > bytes.len() {
                return Err(err("dims"));
            }
            shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
            off += 4;
        }
        let count: usize = shape.iter().product();
        if off + count * 8 > bytes.len() {
            return Err(err("payload"));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let s = off + i * 8;
            data.push(f64::from_le_bytes(bytes[s..s + 8].try_into().unwrap()));
        }
        off += count * 8;
        blocks.push(Block { name, shape, data });
    }
    Ok(CheckpointData { blocks })
}

/// Restore parameter values and optimizer state into existing stores (the
/// stores define which names are expected). Returns the stored epoch.
pub fn restore_stores<T: Scalar>(
    data: &CheckpointData,
    gen_store: &mut ParamStore<T>,
    disc_store: &mut ParamStore<T>,
    adam_g: &mut Adam,
    adam_d: &mut Adam,
) -> Result<usize> {
    for store in [&mut *gen_store, &mut *disc_store] {
        let names: Vec<String> = store.entries().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let block = data
                .get(&name)
                .ok_or_else(|| CoreError::Format(format!("checkpoint missing block {name}")))?;
            let from_f64 = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
            let p = store.get_mut(&name).expect("name from store");
            if p.shape != block.shape {
                return Err(CoreError::Format(format!(
                    "checkpoint block {name} has shape {:?}, expected {:?}",
                    block.shape, p.shape
                )));
            }
            p.data = from_f64(&block.data);
            if let Some(m) = data.get(&format!("adam.m.{name}")) {
                p.adam_m = from_f64(&m.data);
            }
            if let Some(v) = data.get(&format!("adam.v.{name}")) {
                p.adam_v = from_f64(&v.data);
            }
        }
    }
    adam_g.t = data.scalar("adam.t.gen").unwrap_or(0.0) as u64;
    adam_d.t = data.scalar("adam.t.disc").unwrap_or(0.0) as u64;
    Ok(data.scalar("epoch").unwrap_or(0.0) as usize)
}

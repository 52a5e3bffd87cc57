//! Checkpoint file format.
//!
//! ```text
//! magic   4 bytes  "GRNC"
//! version u16      currently 1
//! meta    u32 length + JSON (config echo, seed, epoch)
//! count   u64      parameter count
//! params  count x f32, little endian, in layout order
//! ```
//!
//! Parameters are stored as f32; the in-memory f64 vector is quantized on
//! save, so save -> load -> save is byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::unet::{DenoiserNet, UNetConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GRNC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: UNetConfig,
    pub seed: u64,
    pub epoch: usize,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    net: &DenoiserNet,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let meta = CheckpointMeta {
        config: net.config.clone(),
        seed,
        epoch,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for &p in &net.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(DenoiserNet, CheckpointMeta)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::UnsupportedFormat("not a checkpoint file".into()));
    }
    let mut u16b = [0u8; 2];
    r.read_exact(&mut u16b)?;
    let version = u16::from_le_bytes(u16b);
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "unknown checkpoint version {version}"
        )));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let json_len = u32::from_le_bytes(u32b) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)
        .map_err(|e| Error::CorruptPayload(format!("checkpoint meta: {e}")))?;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let count = u64::from_le_bytes(u64b) as usize;
    let mut net = DenoiserNet::build(meta.config.clone(), 0)?;
    if net.param_count() != count {
        return Err(Error::CorruptPayload(format!(
            "checkpoint has {count} parameters, config implies {}",
            net.param_count()
        )));
    }
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf).map_err(|_| {
        Error::CorruptPayload("checkpoint shorter than parameter count".into())
    })?;
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        net.params[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((net, meta))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &DenoiserNet,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), net, seed, epoch)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(DenoiserNet, CheckpointMeta)> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::unet::UpMode;

    fn cfg() -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            channel_blocks: vec![4, 8],
            convs_per_block: 2,
            up_mode: UpMode::Transposed,
            time_embed_dim: 8,
            norm_groups: 2,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let net = DenoiserNet::build(cfg(), 77).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net, 77, 12).unwrap();
        let (loaded, meta) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(meta.seed, 77);
        assert_eq!(meta.epoch, 12);
        assert_eq!(meta.config, cfg());
        let mut again = Vec::new();
        write_checkpoint(&mut again, &loaded, meta.seed, meta.epoch).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let net = DenoiserNet::build(cfg(), 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net, 1, 0).unwrap();
        bytes.truncate(bytes.len() - 10);
        match read_checkpoint(&bytes[..]) {
            Err(Error::CorruptPayload(_)) => {}
            other => panic!("expected corrupt payload, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn wrong_magic_is_unsupported() {
        let bytes = b"NOPE00000000";
        match read_checkpoint(&bytes[..]) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected unsupported format, got {:?}", other.map(|_| ())),
        }
    }
}

//! Compressed grid storage: a tar container of fixed-layout entries.
//!
//! Each grid is one tar member named `<id>.grid` whose content is a fixed
//! little-endian header followed by a deflate-compressed payload:
//!
//! ```text
//! magic   4 bytes  "GRNM"
//! version u16      currently 1
//! dims    3 x u32  (nz, ny, nx)
//! pitch   f64      meters
//! origin  3 x f64  meters, (x, y, z) of the (0,0,0) voxel corner
//! kind    u8       0 = binary, 1 = sdf
//! packing u8       1 = bit-packed occupancy, 0 = i16 fixed point
//! ```
//!
//! Binary payloads are bit-packed row-major, x fastest, LSB first, spare bits
//! of the last byte zeroed. SDF payloads are signed 16-bit fixed point on
//! [-1, 1] (one quantization step = 1/32767). Free-form string metadata rides
//! in a sibling member `<id>.meta` as JSON. Decoding a binary entry is
//! bit-exact; decoding an SDF entry is exact to one quantization step.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::voxel::{ValueKind, VoxelGrid};

const MAGIC: &[u8; 4] = b"GRNM";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 52;

pub type Metadata = BTreeMap<String, String>;

/// One stored grid: header fields plus the still-compressed payload.
#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub id: String,
    pub dims: [usize; 3],
    pub pitch: f64,
    pub origin: [f64; 3],
    pub kind: ValueKind,
    pub bit_packed: bool,
    /// Deflate-compressed payload bytes.
    pub payload: Vec<u8>,
    pub metadata: Metadata,
}

/// Compress a grid into an archive entry. Only binary and sdf grids persist.
pub fn encode_entry(grid: &VoxelGrid, id: &str, metadata: Metadata) -> Result<ArchiveEntry> {
    if id.is_empty() {
        return Err(Error::invalid("entry id must be non-empty"));
    }
    let raw = match grid.kind {
        ValueKind::Binary => pack_bits(&grid.data),
        ValueKind::Sdf => {
            let mut out = Vec::with_capacity(grid.len() * 2);
            for &v in &grid.data {
                let q = (v * 32767.0).round() as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            out
        }
        ValueKind::Signal => {
            return Err(Error::UnsupportedValueKind {
                expected: "binary or sdf",
                found: "signal",
            })
        }
    };
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw)?;
    let payload = enc.finish()?;
    Ok(ArchiveEntry {
        id: id.to_string(),
        dims: grid.dims,
        pitch: grid.pitch,
        origin: grid.origin,
        kind: grid.kind,
        bit_packed: grid.kind == ValueKind::Binary,
        payload,
        metadata,
    })
}

/// Decompress an entry back into a grid.
pub fn decode_entry(entry: &ArchiveEntry) -> Result<VoxelGrid> {
    let n = entry.dims[0] * entry.dims[1] * entry.dims[2];
    let expected = if entry.bit_packed { n.div_ceil(8) } else { 2 * n };
    let mut raw = Vec::with_capacity(expected);
    DeflateDecoder::new(&entry.payload[..])
        .read_to_end(&mut raw)
        .map_err(|e| Error::CorruptPayload(format!("inflate failed: {e}")))?;
    if raw.len() != expected {
        return Err(Error::CorruptPayload(format!(
            "payload is {} bytes, expected {}",
            raw.len(),
            expected
        )));
    }
    let data = if entry.bit_packed {
        unpack_bits(&raw, n)
    } else {
        raw.chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
            .collect()
    };
    VoxelGrid::new(entry.dims, data, entry.pitch, entry.origin, entry.kind)
}

fn pack_bits(data: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; data.len().div_ceil(8)];
    for (i, &v) in data.iter().enumerate() {
        if v != 0.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(raw: &[u8], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((raw[i / 8] >> (i % 8)) & 1) as f64)
        .collect()
}

fn header_bytes(entry: &ArchiveEntry) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    for (i, &d) in entry.dims.iter().enumerate() {
        h[6 + 4 * i..10 + 4 * i].copy_from_slice(&(d as u32).to_le_bytes());
    }
    h[18..26].copy_from_slice(&entry.pitch.to_le_bytes());
    for (i, &o) in entry.origin.iter().enumerate() {
        h[26 + 8 * i..34 + 8 * i].copy_from_slice(&o.to_le_bytes());
    }
    h[50] = match entry.kind {
        ValueKind::Binary => 0,
        ValueKind::Sdf => 1,
        ValueKind::Signal => unreachable!("signal entries are rejected at encode"),
    };
    h[51] = entry.bit_packed as u8;
    h
}

fn parse_member(id: &str, content: &[u8]) -> Result<ArchiveEntry> {
    if content.len() < HEADER_LEN {
        return Err(Error::CorruptPayload("entry shorter than header".into()));
    }
    if &content[0..4] != MAGIC {
        return Err(Error::UnsupportedFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes([content[4], content[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "unknown header version {version}"
        )));
    }
    let dim = |i: usize| {
        u32::from_le_bytes(content[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize
    };
    let f64_at =
        |off: usize| f64::from_le_bytes(content[off..off + 8].try_into().unwrap());
    let kind = match content[50] {
        0 => ValueKind::Binary,
        1 => ValueKind::Sdf,
        k => return Err(Error::UnsupportedFormat(format!("unknown value kind {k}"))),
    };
    Ok(ArchiveEntry {
        id: id.to_string(),
        dims: [dim(0), dim(1), dim(2)],
        pitch: f64_at(18),
        origin: [f64_at(26), f64_at(34), f64_at(42)],
        kind,
        bit_packed: content[51] != 0,
        payload: content[HEADER_LEN..].to_vec(),
        metadata: Metadata::new(),
    })
}

/// Streaming archive writer. Rejects duplicate ids. Tar headers are fully
/// deterministic (zero mtime/uid/gid), so identical entries produce
/// byte-identical archives.
pub struct ArchiveWriter<W: Write> {
    builder: tar::Builder<W>,
    ids: std::collections::BTreeSet<String>,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(w: W) -> Self {
        ArchiveWriter {
            builder: tar::Builder::new(w),
            ids: Default::default(),
        }
    }

    pub fn append(&mut self, entry: &ArchiveEntry) -> Result<()> {
        if !self.ids.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id.clone()));
        }
        let mut content = Vec::with_capacity(HEADER_LEN + entry.payload.len());
        content.extend_from_slice(&header_bytes(entry));
        content.extend_from_slice(&entry.payload);
        self.append_member(&format!("{}.grid", entry.id), &content)?;
        if !entry.metadata.is_empty() {
            let json = serde_json::to_vec(&entry.metadata)
                .map_err(|e| Error::invalid(format!("metadata serialization: {e}")))?;
            self.append_member(&format!("{}.meta", entry.id), &json)?;
        }
        Ok(())
    }

    fn append_member(&mut self, name: &str, content: &[u8]) -> Result<()> {
        let mut header = tar::Header::new_ustar();
        header.set_size(content.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_cksum();
        self.builder.append_data(&mut header, name, content)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.builder.finish()?;
        Ok(self.builder.into_inner()?)
    }
}

/// Whole-archive reader; payloads stay compressed until decoded.
pub struct ArchiveReader {
    entries: Vec<ArchiveEntry>,
}

impl ArchiveReader {
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut tar = tar::Archive::new(r);
        let mut grids: Vec<ArchiveEntry> = Vec::new();
        let mut metas: BTreeMap<String, Metadata> = BTreeMap::new();
        for member in tar.entries()? {
            let mut member = member?;
            let path = member.path()?.to_string_lossy().into_owned();
            let mut content = Vec::new();
            member.read_to_end(&mut content)?;
            if let Some(id) = path.strip_suffix(".grid") {
                grids.push(parse_member(id, &content)?);
            } else if let Some(id) = path.strip_suffix(".meta") {
                let meta: Metadata = serde_json::from_slice(&content)
                    .map_err(|e| Error::CorruptPayload(format!("metadata json: {e}")))?;
                metas.insert(id.to_string(), meta);
            } else {
                return Err(Error::UnsupportedFormat(format!(
                    "unexpected archive member {path}"
                )));
            }
        }
        for g in &mut grids {
            if let Some(m) = metas.remove(&g.id) {
                g.metadata = m;
            }
        }
        Ok(ArchiveReader { entries: grids })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn decode_all(&self) -> Result<Vec<VoxelGrid>> {
        self.entries.iter().map(decode_entry).collect()
    }
}

/// Write all entries to a new archive file.
pub fn write_archive(path: impl AsRef<Path>, entries: &[ArchiveEntry]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = ArchiveWriter::new(std::io::BufWriter::new(file));
    for e in entries {
        w.append(e)?;
    }
    w.finish()?.into_inner().map_err(|e| e.into_error())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(dims: [usize; 3], seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims[0] * dims[1] * dims[2];
        let data = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        VoxelGrid::new(dims, data, 1e-3, [0.0; 3], ValueKind::Binary).unwrap()
    }

    #[test]
    fn zero_grid_round_trips() {
        let g = VoxelGrid::zeros([16, 32, 32], 1e-3, [0.0; 3]);
        let e = encode_entry(&g, "zero", Metadata::new()).unwrap();
        assert_eq!(decode_entry(&e).unwrap(), g);
    }

    #[test]
    fn random_grid_round_trips_bitwise() {
        let g = random_binary([16, 32, 32], 42);
        let e = encode_entry(&g, "rnd", Metadata::new()).unwrap();
        let back = decode_entry(&e).unwrap();
        assert_eq!(back.data, g.data);
        assert_eq!(back.dims, g.dims);
        assert_eq!(back.pitch, g.pitch);
        assert_eq!(back.origin, g.origin);
    }

    #[test]
    fn signal_kind_rejected() {
        let g = VoxelGrid::new([1, 1, 1], vec![0.3], 1.0, [0.0; 3], ValueKind::Signal).unwrap();
        match encode_entry(&g, "s", Metadata::new()) {
            Err(Error::UnsupportedValueKind { .. }) => {}
            other => panic!("expected unsupported value kind, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let g = random_binary([4, 4, 4], 1);
        let mut e = encode_entry(&g, "t", Metadata::new()).unwrap();
        e.payload.truncate(e.payload.len() / 2);
        match decode_entry(&e) {
            Err(Error::CorruptPayload(_)) => {}
            other => panic!("expected corrupt payload, got {other:?}"),
        }
    }

    #[test]
    fn sdf_round_trips_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let g = VoxelGrid::new([4, 4, 4], data.clone(), 1e-3, [0.0; 3], ValueKind::Sdf).unwrap();
        let e = encode_entry(&g, "sdf", Metadata::new()).unwrap();
        let back = decode_entry(&e).unwrap();
        for (a, b) in data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn duplicate_id_rejected_by_writer() {
        let g = VoxelGrid::zeros([2, 2, 2], 1.0, [0.0; 3]);
        let e = encode_entry(&g, "dup", Metadata::new()).unwrap();
        let mut w = ArchiveWriter::new(Vec::new());
        w.append(&e).unwrap();
        match w.append(&e) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "dup"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn tar_round_trip_with_metadata() {
        let g = random_binary([8, 8, 8], 5);
        let mut meta = Metadata::new();
        meta.insert("phi".into(), "0.41".into());
        meta.insert("seed".into(), "5".into());
        let e = encode_entry(&g, "blk0", meta.clone()).unwrap();
        let mut w = ArchiveWriter::new(Vec::new());
        w.append(&e).unwrap();
        let bytes = w.finish().unwrap();
        let r = ArchiveReader::from_reader(&bytes[..]).unwrap();
        let loaded = r.get("blk0").unwrap();
        assert_eq!(loaded.metadata, meta);
        assert_eq!(decode_entry(loaded).unwrap().data, g.data);
    }

    #[test]
    fn archive_bytes_are_deterministic() {
        let build = || {
            let mut w = ArchiveWriter::new(Vec::new());
            for seed in 0..3u64 {
                let g = random_binary([8, 8, 8], seed);
                w.append(&encode_entry(&g, &format!("g{seed}"), Metadata::new()).unwrap())
                    .unwrap();
            }
            w.finish().unwrap()
        };
        assert_eq!(build(), build());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn round_trip_is_identity_for_any_dims(
            nz in 1usize..=64,
            ny in 1usize..=64,
            nx in 1usize..=64,
            seed in 0u64..1000,
        ) {
            let g = random_binary([nz, ny, nx], seed);
            let e = encode_entry(&g, "p", Metadata::new()).unwrap();
            proptest::prop_assert_eq!(decode_entry(&e).unwrap(), g);
        }
    }

    #[test]
    fn bad_version_is_unsupported() {
        let g = VoxelGrid::zeros([2, 2, 2], 1.0, [0.0; 3]);
        let e = encode_entry(&g, "v", Metadata::new()).unwrap();
        let mut content = Vec::new();
        content.extend_from_slice(&header_bytes(&e));
        content.extend_from_slice(&e.payload);
        content[4] = 99;
        match parse_member("v", &content) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected unsupported format, got {other:?}"),
        }
    }
}

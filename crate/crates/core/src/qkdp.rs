//! QKDP: the binary container for per-head query/key dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "QKDPv001"
//! layers     u32
//! heads      u32
//! n          u32
//! d_h        u32
//! stages     u8        bit (2·stage + indicator); stage 0 pre_ntk, 1 post_ntk,
//!                      2 post_rope; indicator 0 query, 1 key
//! dtype      u8        0 = f32, 1 = f64
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON
//! payload    stage-major (ascending bit), then layer, then head, each head
//!            row-major n × d_h, IEEE-754 little-endian
//! ```
//!
//! Nothing may follow the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rope::{contiguous_positions, FrequencySchedule, HeadTensor, Indicator, Pairing, ScheduleRecipe, Stage};
use crate::spectral::hex_digest;

pub const MAGIC: &[u8; 8] = b"QKDPv001";
const MAGIC_FAMILY: &[u8; 4] = b"QKDP";
const FIXED_HEADER_LEN: usize = 8 + 4 * 4 + 1 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Version(format!("unknown dtype code {other}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn quantize(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

/// JSON metadata block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub model_id: String,
    pub schedule: ScheduleRecipe,
    #[serde(default)]
    pub pairing: Pairing,
    /// Absolute position of row 0.
    #[serde(default)]
    pub position_offset: i64,
    /// Free-form producer details (exporter settings, denoising plan digest, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl DumpMeta {
    pub fn new(model_id: impl Into<String>, schedule: ScheduleRecipe) -> Self {
        Self {
            model_id: model_id.into(),
            schedule,
            pairing: Pairing::Interleaved,
            position_offset: 0,
            provenance: None,
        }
    }
}

pub fn stage_bit(stage: Stage, indicator: Indicator) -> u8 {
    1 << (stage.index() * 2 + indicator.index())
}

fn slot_for_bit(bit: usize) -> (Stage, Indicator) {
    (Stage::ALL[bit / 2], Indicator::ALL[bit % 2])
}

/// A full dump: one `layers × heads` tensor grid per captured stage.
#[derive(Debug, Clone, PartialEq)]
pub struct QKDump {
    pub meta: DumpMeta,
    pub layers: usize,
    pub heads: usize,
    pub n: usize,
    pub d_h: usize,
    pub dtype: DType,
    slots: BTreeMap<(Stage, Indicator), Vec<HeadTensor>>,
}

impl QKDump {
    pub fn new(meta: DumpMeta, layers: usize, heads: usize, n: usize, d_h: usize, dtype: DType) -> Result<Self> {
        if layers == 0 || heads == 0 || n == 0 {
            return Err(Error::Config(format!("empty grid: {layers} layers, {heads} heads, {n} positions")));
        }
        if d_h < 2 || d_h % 2 != 0 {
            return Err(Error::Config(format!("head dimension must be even and >= 2, got {d_h}")));
        }
        Ok(Self { meta, layers, heads, n, d_h, dtype, slots: BTreeMap::new() })
    }

    /// Same header and metadata, no stages.
    pub fn empty_like(&self) -> Self {
        Self { slots: BTreeMap::new(), ..self.clone() }
    }

    fn grid_index(&self, layer: usize, head: usize) -> usize {
        layer * self.heads + head
    }

    /// Installs a full grid for `(stage, indicator)`, ordered layer-major.
    /// Provenance fields are overwritten from the slot; f32 dumps round values
    /// to f32 so the in-memory dump equals what is written.
    pub fn insert_stage(&mut self, stage: Stage, indicator: Indicator, tensors: Vec<HeadTensor>) -> Result<()> {
        if tensors.len() != self.layers * self.heads {
            return Err(Error::Dimension(format!(
                "{stage}/{indicator}: expected {} tensors, got {}",
                self.layers * self.heads,
                tensors.len()
            )));
        }
        let mut grid = Vec::with_capacity(tensors.len());
        for (idx, mut t) in tensors.into_iter().enumerate() {
            if t.values.shape() != (self.n, self.d_h) {
                return Err(Error::Dimension(format!(
                    "{stage}/{indicator} tensor {idx} is {:?}, expected ({}, {})",
                    t.values.shape(),
                    self.n,
                    self.d_h
                )));
            }
            if self.dtype == DType::F32 {
                let q: Vec<f64> = t.values.data().iter().map(|v| self.dtype.quantize(*v)).collect();
                t.values = Matrix::new(self.n, self.d_h, q)?;
            }
            t.stage = stage;
            t.indicator = indicator;
            t.layer = idx / self.heads;
            t.head = idx % self.heads;
            t.pairing = self.meta.pairing;
            grid.push(t);
        }
        self.slots.insert((stage, indicator), grid);
        Ok(())
    }

    pub fn has_stage(&self, stage: Stage, indicator: Indicator) -> bool {
        self.slots.contains_key(&(stage, indicator))
    }

    pub fn stage(&self, stage: Stage, indicator: Indicator) -> Option<&[HeadTensor]> {
        self.slots.get(&(stage, indicator)).map(Vec::as_slice)
    }

    pub fn require_stage(&self, stage: Stage, indicator: Indicator) -> Result<&[HeadTensor]> {
        self.stage(stage, indicator).ok_or_else(|| {
            Error::Provenance(format!("dump has no {stage} {indicator} tensors"))
        })
    }

    pub fn tensor(&self, stage: Stage, indicator: Indicator, layer: usize, head: usize) -> Option<&HeadTensor> {
        if layer >= self.layers || head >= self.heads {
            return None;
        }
        self.stage(stage, indicator).map(|g| &g[self.grid_index(layer, head)])
    }

    pub fn stages(&self) -> impl Iterator<Item = (Stage, Indicator)> + '_ {
        self.slots.keys().copied()
    }

    pub fn stage_bitmap(&self) -> u8 {
        self.slots.keys().fold(0, |acc, (s, i)| acc | stage_bit(*s, *i))
    }

    pub fn schedule(&self) -> Result<FrequencySchedule> {
        self.meta.schedule.build(self.d_h)
    }

    pub fn positions(&self) -> Vec<i64> {
        contiguous_positions(self.meta.position_offset, self.n)
    }

    pub fn payload_len(&self) -> u64 {
        (self.slots.len() * self.layers * self.heads * self.n * self.d_h * self.dtype.width()) as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
        };
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + meta.len() + self.payload_len() as usize);
        out.extend_from_slice(MAGIC);
        for (v, what) in [(self.layers, "layers"), (self.heads, "heads"), (self.n, "n"), (self.d_h, "d_h")] {
            out.extend_from_slice(&dim(v, what)?.to_le_bytes());
        }
        out.push(self.stage_bitmap());
        out.push(self.dtype.code());
        out.extend_from_slice(&dim(meta.len(), "metadata length")?.to_le_bytes());
        out.extend_from_slice(&meta);
        // BTreeMap order over (Stage, Indicator) is ascending bit order.
        for grid in self.slots.values() {
            for t in grid {
                for v in t.values.data() {
                    match self.dtype {
                        DType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                        DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(format!("{} bytes is too short for a QKDP header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            if &bytes[..4] == MAGIC_FAMILY {
                return Err(Error::Version(format!(
                    "QKDP version `{}` (this reader handles v001)",
                    String::from_utf8_lossy(&bytes[4..8])
                )));
            }
            return Err(Error::Format("bad magic, not a QKDP file".into()));
        }
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::Format("truncated QKDP header".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let (layers, heads, n, d_h) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
        let bitmap = bytes[24];
        let dtype = DType::from_code(bytes[25])?;
        let meta_len = u32_at(26);
        if bitmap >> 6 != 0 {
            return Err(Error::Format(format!("stage bitmap {bitmap:#010b} sets undefined bits")));
        }
        let meta_end = FIXED_HEADER_LEN + meta_len;
        if bytes.len() < meta_end {
            return Err(Error::Format("metadata block runs past end of file".into()));
        }
        let meta: DumpMeta = serde_json::from_slice(&bytes[FIXED_HEADER_LEN..meta_end])
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let mut dump = QKDump::new(meta, layers, heads, n, d_h, dtype)
            .map_err(|e| Error::Format(e.to_string()))?;

        let per_head = n * d_h * dtype.width();
        let stage_count = bitmap.count_ones() as usize;
        let expected = (stage_count * layers * heads * per_head) as u64;
        let actual = (bytes.len() - meta_end) as u64;
        if expected != actual {
            return Err(Error::Integrity { expected, actual });
        }

        let mut cursor = meta_end;
        for bit in 0..6 {
            if bitmap & (1 << bit) == 0 {
                continue;
            }
            let (stage, indicator) = slot_for_bit(bit);
            let mut grid = Vec::with_capacity(layers * heads);
            for idx in 0..layers * heads {
                let raw = &bytes[cursor..cursor + per_head];
                cursor += per_head;
                let values: Vec<f64> = match dtype {
                    DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
                    DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                };
                let m = Matrix::new(n, d_h, values).map_err(|e| Error::Format(format!("payload: {e}")))?;
                grid.push(HeadTensor::new(m, stage, indicator, idx / heads, idx % heads)?);
            }
            dump.insert_stage(stage, indicator, grid)?;
        }
        Ok(dump)
    }

    /// Hex SHA-256 of the encoded dump.
    pub fn digest(&self) -> Result<String> {
        Ok(hex_digest(&self.to_bytes()?))
    }
}

pub fn write_dump(dump: &QKDump, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dump.to_bytes()?)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<QKDump> {
    QKDump::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::DEFAULT_BASE;
    use proptest::prelude::*;

    fn meta() -> DumpMeta {
        DumpMeta::new("tiny", ScheduleRecipe::Vanilla { base: DEFAULT_BASE })
    }

    fn grid(layers: usize, heads: usize, n: usize, d_h: usize, salt: f64) -> Vec<HeadTensor> {
        (0..layers * heads)
            .map(|idx| {
                let m = Matrix::from_fn(n, d_h, |i, j| salt + idx as f64 * 0.5 + i as f64 * 0.25 - j as f64 * 0.125);
                HeadTensor::new(m, Stage::PreNtk, Indicator::Query, 0, 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn payload_size_for_tiny_f32_dump() {
        let mut d = QKDump::new(meta(), 1, 1, 2, 4, DType::F32).unwrap();
        d.insert_stage(Stage::PostRope, Indicator::Key, grid(1, 1, 2, 4, 0.0)).unwrap();
        let bytes = d.to_bytes().unwrap();
        let meta_len = u32::from_le_bytes(bytes[26..30].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - FIXED_HEADER_LEN - meta_len, 32);
        assert_eq!(bytes[24], 0b10_0000);
    }

    #[test]
    fn round_trip_is_identity() {
        for dtype in [DType::F32, DType::F64] {
            let mut d = QKDump::new(meta(), 2, 3, 4, 6, dtype).unwrap();
            d.insert_stage(Stage::PreNtk, Indicator::Query, grid(2, 3, 4, 6, 0.1)).unwrap();
            d.insert_stage(Stage::PostRope, Indicator::Key, grid(2, 3, 4, 6, -0.3)).unwrap();
            let bytes = d.to_bytes().unwrap();
            let back = QKDump::from_bytes(&bytes).unwrap();
            assert_eq!(back, d);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            let t = back.tensor(Stage::PostRope, Indicator::Key, 1, 2).unwrap();
            assert_eq!((t.layer, t.head), (1, 2));
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut d = QKDump::new(meta(), 1, 1, 1, 2, DType::F64).unwrap();
        d.insert_stage(Stage::PreNtk, Indicator::Key, grid(1, 1, 1, 2, 0.0)).unwrap();
        let good = d.to_bytes().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(QKDump::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = good.clone();
        v2[7] = b'2';
        assert!(matches!(QKDump::from_bytes(&v2), Err(Error::Version(_))));
        let mut dt = good.clone();
        dt[25] = 7;
        assert!(matches!(QKDump::from_bytes(&dt), Err(Error::Version(_))));
    }

    #[test]
    fn truncated_and_trailing_payloads_are_integrity_errors() {
        let mut d = QKDump::new(meta(), 1, 2, 3, 4, DType::F32).unwrap();
        d.insert_stage(Stage::PostNtk, Indicator::Query, grid(1, 2, 3, 4, 0.0)).unwrap();
        let bytes = d.to_bytes().unwrap();
        let short = &bytes[..bytes.len() - 4];
        match QKDump::from_bytes(short) {
            Err(e @ Error::Integrity { expected: 96, actual: 92 }) => {
                assert!(e.to_string().contains("4 bytes short"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(QKDump::from_bytes(&long), Err(Error::Integrity { expected: 96, actual: 97 })));
    }

    #[test]
    fn grid_must_be_complete() {
        let mut d = QKDump::new(meta(), 2, 2, 3, 4, DType::F32).unwrap();
        assert!(d.insert_stage(Stage::PreNtk, Indicator::Query, grid(1, 2, 3, 4, 0.0)).is_err());
        assert!(d.insert_stage(Stage::PreNtk, Indicator::Query, grid(2, 2, 3, 6, 0.0)).is_err());
        assert!(matches!(d.require_stage(Stage::PostRope, Indicator::Key), Err(Error::Provenance(_))));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(seed in any::<u64>(), layers in 1usize..3, heads in 1usize..3, n in 1usize..5, half in 1usize..4, bits in 1u8..64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d_h = 2 * half;
            let mut d = QKDump::new(meta(), layers, heads, n, d_h, DType::F32).unwrap();
            for bit in 0..6 {
                if bits & (1 << bit) != 0 {
                    let (s, i) = slot_for_bit(bit);
                    let g = (0..layers * heads).map(|_| {
                        let data = (0..n * d_h).map(|_| rng.random_range(-100.0..100.0)).collect();
                        HeadTensor::new(Matrix::new(n, d_h, data).unwrap(), s, i, 0, 0).unwrap()
                    }).collect();
                    d.insert_stage(s, i, g).unwrap();
                }
            }
            let bytes = d.to_bytes().unwrap();
            prop_assert_eq!(bytes[24], bits);
            let back = QKDump::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back, d);
        }
    }
}

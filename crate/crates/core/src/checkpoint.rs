//! `FTHR` tensor container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "FTHR" | version | record count | record*
//! record = name length | name (UTF-8) | rank | dims[rank] | data
//! ```
//!
//! `data` is raw little-endian f32, except for records whose name ends in
//! `.mask`, which hold one byte (0 or 1) per element.

use std::fs;
use std::path::Path;

use crate::analysis::MaskSnapshot;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::thresholding::ThresholdValue;

pub const MAGIC: &[u8; 4] = b"FTHR";
pub const VERSION: u32 = 1;
pub const MASK_SUFFIX: &str = ".mask";

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl RecordData {
    fn len(&self) -> usize {
        match self {
            RecordData::F32(v) => v.len(),
            RecordData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data: RecordData::F32(data),
        }
    }

    pub fn mask(name: impl Into<String>, dims: Vec<usize>, mask: &[bool]) -> Self {
        let mut name = name.into();
        if !name.ends_with(MASK_SUFFIX) {
            name.push_str(MASK_SUFFIX);
        }
        Self {
            name,
            dims,
            data: RecordData::U8(mask.iter().map(|&m| u8::from(m)).collect()),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RecordData::F32(v) => Some(v),
            RecordData::U8(_) => None,
        }
    }

    pub fn as_mask(&self) -> Option<Vec<bool>> {
        match &self.data {
            RecordData::U8(v) => Some(v.iter().map(|&b| b != 0).collect()),
            RecordData::F32(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.records.len(), "record count")?.to_le_bytes());
        for r in &self.records {
            let is_mask = r.name.ends_with(MASK_SUFFIX);
            if is_mask != matches!(r.data, RecordData::U8(_)) {
                return Err(Error::contract(format!(
                    "record {} must use u8 data if and only if its name ends in {MASK_SUFFIX}",
                    r.name
                )));
            }
            if r.dims.iter().product::<usize>() != r.data.len() {
                return Err(Error::Dimension {
                    op: "checkpoint record",
                    lhs: r.dims.clone(),
                    rhs: vec![r.data.len()],
                });
            }
            out.extend_from_slice(&u32_len(r.name.len(), "name length")?.to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&u32_len(r.dims.len(), "rank")?.to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            match &r.data {
                RecordData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                RecordData::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "missing FTHR magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::format(at, "record name is not UTF-8"))?
                .to_owned();
            let rank = r.u32("rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(r.pos, "dimension product overflows"))?;
            let data = if name.ends_with(MASK_SUFFIX) {
                RecordData::U8(r.take(numel, "mask data")?.to_vec())
            } else {
                let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::format(r.pos, "record too large"))?, "tensor data")?;
                RecordData::F32(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                )
            };
            records.push(Record { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after last record"));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// All `.mask` records in file order.
    pub fn masks(&self) -> Vec<(String, Vec<bool>)> {
        self.records
            .iter()
            .filter_map(|r| {
                let m = r.as_mask()?;
                Some((r.name.trim_end_matches(MASK_SUFFIX).to_owned(), m))
            })
            .collect()
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::contract(format!("{what} {n} does not fit in u32")))
}

/// Sparsity of a set of masks: pruned entries over all entries.
pub fn mask_sparsity<'a>(masks: impl IntoIterator<Item = &'a [bool]>) -> f64 {
    let (mut total, mut active) = (0usize, 0usize);
    for m in masks {
        total += m.len();
        active += m.iter().filter(|&&b| b).count();
    }
    if total == 0 {
        0.0
    } else {
        (total - active) as f64 / total as f64
    }
}

impl Model {
    /// Weights, biases, thresholds and current masks, layer by layer.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records = Vec::new();
        for (layer, bias) in self.layers.iter().zip(&self.biases) {
            let dims = layer.weights.shape().to_vec();
            records.push(Record::f32(format!("{}.weight", layer.name), dims.clone(), layer.weights.data().to_vec()));
            records.push(Record::f32(format!("{}.bias", layer.name), bias.shape().to_vec(), bias.data().to_vec()));
            if let Some(t) = layer.threshold() {
                records.push(Record::f32(format!("{}.threshold", layer.name), vec![1], vec![t.get()]));
            }
            records.push(Record::mask(&layer.name, dims, &layer.current_mask()));
        }
        Checkpoint { records }
    }

    /// Restores weights, biases and thresholds saved by [`Model::to_checkpoint`].
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (layer, bias) in self.layers.iter_mut().zip(self.biases.iter_mut()) {
            let fetch = |suffix: &str, shape: &[usize]| -> Result<Vec<f32>> {
                let name = format!("{}.{suffix}", layer.name);
                let rec = ckpt
                    .get(&name)
                    .ok_or_else(|| Error::contract(format!("checkpoint has no record {name}")))?;
                if rec.dims != shape {
                    return Err(Error::Dimension {
                        op: "checkpoint load",
                        lhs: shape.to_vec(),
                        rhs: rec.dims.clone(),
                    });
                }
                rec.as_f32()
                    .map(<[f32]>::to_vec)
                    .ok_or_else(|| Error::contract(format!("record {name} is not f32")))
            };
            let w = fetch("weight", layer.weights.shape())?;
            let b = fetch("bias", bias.shape())?;
            layer.weights = Tensor::new(layer.weights.shape().to_vec(), w)?.requires_grad(true);
            *bias = Tensor::new(bias.shape().to_vec(), b)?.requires_grad(true);
            match ckpt.get(&format!("{}.threshold", layer.name)).and_then(Record::as_f32) {
                Some([t]) => layer.set_threshold(ThresholdValue::new(*t)?),
                Some(_) => return Err(Error::contract(format!("bad threshold record for {}", layer.name))),
                None => layer.clear_threshold(),
            }
        }
        Ok(())
    }
}

/// Encodes per-epoch mask snapshots as `epoch<E>.<layer>.mask` records.
pub fn snapshots_to_checkpoint(snapshots: &[MaskSnapshot], model: &Model) -> Result<Checkpoint> {
    let mut records = Vec::new();
    for s in snapshots {
        if s.layers.len() != model.layers.len() {
            return Err(Error::contract(format!(
                "snapshot at epoch {} has {} layers, model has {}",
                s.epoch,
                s.layers.len(),
                model.layers.len()
            )));
        }
        for (mask, layer) in s.layers.iter().zip(&model.layers) {
            records.push(Record::mask(
                format!("epoch{}.{}", s.epoch, layer.name),
                layer.weights.shape().to_vec(),
                mask,
            ));
        }
    }
    Ok(Checkpoint { records })
}

/// Inverse of [`snapshots_to_checkpoint`]; records are grouped by epoch in
/// file order.
pub fn snapshots_from_checkpoint(ckpt: &Checkpoint) -> Result<Vec<MaskSnapshot>> {
    let mut out: Vec<MaskSnapshot> = Vec::new();
    for rec in &ckpt.records {
        let mask = rec
            .as_mask()
            .ok_or_else(|| Error::contract(format!("record {} is not a mask", rec.name)))?;
        let epoch = rec
            .name
            .strip_prefix("epoch")
            .and_then(|rest| rest.split_once('.'))
            .and_then(|(e, _)| e.parse::<usize>().ok())
            .ok_or_else(|| Error::contract(format!("record {} is not an epoch mask", rec.name)))?;
        match out.last_mut() {
            Some(s) if s.epoch == epoch => s.layers.push(mask),
            _ => out.push(MaskSnapshot {
                epoch,
                layers: vec![mask],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::thresholding::ThresholdOperator;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            records: vec![
                Record::f32("fc0.weight", vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, -0.0]),
                Record::mask("fc0", vec![2, 3], &[true, false, true, true, false, false]),
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FTHR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &10u32.to_le_bytes());
        assert_eq!(&bytes[16..26], b"fc0.weight");
    }

    #[test]
    fn truncation_and_garbage_are_format_errors() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut wrong = bytes;
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn mask_naming_is_enforced() {
        let bad = Checkpoint {
            records: vec![Record::f32("x.mask", vec![1], vec![1.0])],
        };
        assert!(bad.to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(
            values in prop::collection::vec(any::<u32>(), 1..64),
            mask in prop::collection::vec(any::<bool>(), 1..64),
        ) {
            let floats: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).collect();
            let ckpt = Checkpoint {
                records: vec![
                    Record::f32("w", vec![floats.len()], floats),
                    Record::mask("w", vec![mask.len()], &mask),
                ],
            };
            let first = ckpt.to_bytes().unwrap();
            let second = Checkpoint::from_bytes(&first).unwrap().to_bytes().unwrap();
            prop_assert_eq!(first, second);
        }
    }

    #[test]
    fn model_round_trip() {
        let arch: Architecture = "mlp:5-4-3".parse().unwrap();
        let mut model = Model::init(arch.clone(), ThresholdOperator::Soft, 3).unwrap();
        model.layers[0].set_threshold(ThresholdValue::new(0.3).unwrap());
        let ckpt = model.to_checkpoint();
        let mut other = Model::init(arch, ThresholdOperator::Soft, 99).unwrap();
        other.load_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(other.layers[0].weights.data(), model.layers[0].weights.data());
        assert_eq!(other.layers[0].threshold(), model.layers[0].threshold());
        assert_eq!(other.layers[1].threshold(), None);
        assert_eq!(other.to_checkpoint(), ckpt);
        let masks = ckpt.masks();
        assert_eq!(masks[0].0, "fc0");
        assert_eq!(masks[0].1, model.layers[0].current_mask());
    }

    #[test]
    fn snapshot_round_trip() {
        let arch: Architecture = "mlp:2-2-1".parse().unwrap();
        let model = Model::init(arch, ThresholdOperator::Soft, 0).unwrap();
        let snaps: Vec<MaskSnapshot> = (0..3)
            .map(|e| MaskSnapshot {
                epoch: e,
                layers: vec![vec![e % 2 == 0, true, false, true], vec![true, e == 1]],
            })
            .collect();
        let ckpt = snapshots_to_checkpoint(&snaps, &model).unwrap();
        assert_eq!(snapshots_from_checkpoint(&ckpt).unwrap(), snaps);
    }
}

//! Mask stability and FLOPs accounting.
//!
//! FLOPs follow the 2 x multiply-accumulate convention; biases are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};

/// Survivor masks of every prunable layer at the end of an epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSnapshot {
    pub epoch: usize,
    pub layers: Vec<Vec<bool>>,
}

impl MaskSnapshot {
    pub fn flattened(&self) -> Vec<bool> {
        self.layers.concat()
    }

    pub fn sparsity(&self) -> f64 {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        let active: usize = self.layers.iter().flatten().filter(|&&m| m).count();
        if total == 0 {
            0.0
        } else {
            (total - active) as f64 / total as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson {
    pub r: f64,
    /// At least one input had zero variance; `r` is then 1 for identical
    /// inputs and 0 otherwise.
    pub degenerate: bool,
}

/// Pearson correlation of two masks encoded as 0/1.
pub fn mask_pearson(a: &[bool], b: &[bool]) -> Result<Pearson> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "mask lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::contract("correlation needs at least two entries"));
    }
    let n = a.len() as i128;
    let na = a.iter().filter(|&&v| v).count() as i128;
    let nb = b.iter().filter(|&&v| v).count() as i128;
    let nab = a.iter().zip(b).filter(|(&x, &y)| x && y).count() as i128;
    let var_a = na * (n - na);
    let var_b = nb * (n - nb);
    if var_a == 0 || var_b == 0 {
        return Ok(Pearson {
            r: if a == b { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    if a == b {
        return Ok(Pearson {
            r: 1.0,
            degenerate: false,
        });
    }
    let cov = (n * nab - na * nb) as f64;
    let r = cov / ((var_a as f64).sqrt() * (var_b as f64).sqrt());
    Ok(Pearson {
        r: r.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Correlation of each snapshot's (layer-concatenated) mask with the last
/// snapshot's mask.
pub fn stability_curve(snapshots: &[MaskSnapshot]) -> Result<Vec<(usize, f64)>> {
    let last = snapshots
        .last()
        .ok_or_else(|| Error::contract("stability curve of an empty snapshot list"))?;
    let layout: Vec<usize> = last.layers.iter().map(Vec::len).collect();
    let reference = last.flattened();
    snapshots
        .iter()
        .map(|s| {
            let shape: Vec<usize> = s.layers.iter().map(Vec::len).collect();
            if shape != layout {
                return Err(Error::contract(format!(
                    "snapshot at epoch {} has layer sizes {shape:?}, expected {layout:?}",
                    s.epoch
                )));
            }
            Ok((s.epoch, mask_pearson(&s.flattened(), &reference)?.r))
        })
        .collect()
}

pub fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,r\n");
    for (epoch, r) in curve {
        let _ = writeln!(out, "{epoch},{r}");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    pub layer: String,
    pub dense: u64,
    pub sparse: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub dense_total: u64,
    pub sparse_total: u64,
}

impl FlopsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,dense_flops,sparse_flops\n");
        for l in &self.layers {
            let _ = writeln!(out, "{},{},{}", l.layer, l.dense, l.sparse);
        }
        let _ = writeln!(out, "total,{},{}", self.dense_total, self.sparse_total);
        out
    }
}

/// Forward-pass FLOPs of `model` with the given per-layer masks.
///
/// Fully connected: dense `2 * in * out`, sparse `2 * nnz`.
/// Convolution: dense `2 * F * C * kh * kw * H' * W'`, sparse
/// `2 * nnz * H' * W'`.
pub fn flops_count(model: &Model, masks: &[Vec<bool>]) -> Result<FlopsReport> {
    let geometry = model.arch().geometry()?;
    if masks.len() != geometry.len() {
        return Err(Error::contract(format!(
            "{} masks for {} layers",
            masks.len(),
            geometry.len()
        )));
    }
    let mut layers = Vec::with_capacity(geometry.len());
    for ((geo, mask), state) in geometry.iter().zip(masks).zip(&model.layers) {
        let weights = geo.spec.weight_shape().iter().product::<usize>();
        if mask.len() != weights {
            return Err(Error::Dimension {
                op: "flops mask",
                lhs: geo.spec.weight_shape(),
                rhs: vec![mask.len()],
            });
        }
        let nnz = mask.iter().filter(|&&m| m).count() as u64;
        let positions = match geo.spec {
            LayerSpec::Linear { .. } => 1,
            LayerSpec::Conv2d { .. } => (geo.output[1] * geo.output[2]) as u64,
        };
        layers.push(LayerFlops {
            layer: state.name.clone(),
            dense: 2 * weights as u64 * positions,
            sparse: 2 * nnz * positions,
        });
    }
    Ok(FlopsReport {
        dense_total: layers.iter().map(|l| l.dense).sum(),
        sparse_total: layers.iter().map(|l| l.sparse).sum(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::thresholding::ThresholdOperator;
    use proptest::prelude::*;

    fn bools(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn pearson_examples() {
        let a = bools(&[1, 1, 0, 0]);
        assert_eq!(mask_pearson(&a, &a).unwrap().r, 1.0);
        let not_a: Vec<bool> = a.iter().map(|x| !x).collect();
        assert_eq!(mask_pearson(&a, &not_a).unwrap().r, -1.0);
        assert_eq!(mask_pearson(&a, &bools(&[1, 0, 1, 0])).unwrap().r, 0.0);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let ones = bools(&[1, 1, 1]);
        let p = mask_pearson(&ones, &ones).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.r, 1.0);
        let q = mask_pearson(&ones, &bools(&[1, 0, 1])).unwrap();
        assert!(q.degenerate);
        assert_eq!(q.r, 0.0);
        assert!(mask_pearson(&ones, &bools(&[1, 0])).is_err());
        assert!(mask_pearson(&[true], &[true]).is_err());
    }

    /// Textbook Pearson on 0/1 floats.
    fn pearson_reference(a: &[bool], b: &[bool]) -> f64 {
        let x: Vec<f64> = a.iter().map(|&v| f64::from(u8::from(v))).collect();
        let y: Vec<f64> = b.iter().map(|&v| f64::from(u8::from(v))).collect();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_matches_reference(
            pair in prop::collection::vec((any::<bool>(), any::<bool>()), 2..200)
        ) {
            let (a, b): (Vec<bool>, Vec<bool>) = pair.into_iter().unzip();
            let ab = mask_pearson(&a, &b).unwrap();
            let ba = mask_pearson(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            if !ab.degenerate {
                prop_assert!((ab.r - pearson_reference(&a, &b)).abs() < 1e-12);
            }
        }
    }

    fn snapshot(epoch: usize, mask: Vec<bool>) -> MaskSnapshot {
        MaskSnapshot {
            epoch,
            layers: vec![mask],
        }
    }

    #[test]
    fn constant_masks_give_flat_curve() {
        let m = bools(&[1, 0, 1, 1, 0]);
        let snaps: Vec<_> = (0..4).map(|e| snapshot(e, m.clone())).collect();
        let curve = stability_curve(&snaps).unwrap();
        assert!(curve.iter().all(|&(_, r)| r == 1.0));
        assert!(stability_curve(&[]).is_err());
    }

    #[test]
    fn converging_masks_give_increasing_curve() {
        // 100 entries; snapshot e differs from the final mask in the first
        // 10 * (9 - e) positions, so each epoch fixes 10% of the entries.
        let final_mask: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let snaps: Vec<MaskSnapshot> = (0..10)
            .map(|e| {
                let flips = 10 * (9 - e);
                let m = final_mask.iter().enumerate().map(|(i, &v)| if i < flips { !v } else { v }).collect();
                snapshot(e, m)
            })
            .collect();
        let curve = stability_curve(&snaps).unwrap();
        let rs: Vec<f64> = curve.iter().map(|&(_, r)| r).collect();
        // Direct formula: flipping f of 100 balanced, interleaved entries gives r = 1 - 2f/100.
        for (e, r) in rs.iter().enumerate() {
            let flips = 10.0 * (9 - e) as f64;
            assert!((r - (1.0 - 2.0 * flips / 100.0)).abs() < 1e-12);
        }
        assert!(rs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*rs.last().unwrap(), 1.0);
    }

    #[test]
    fn mismatched_snapshot_layout_is_rejected() {
        let snaps = vec![snapshot(0, vec![true, false]), snapshot(1, vec![true, false, true])];
        assert!(stability_curve(&snaps).is_err());
    }

    #[test]
    fn fc_flops_example() {
        let model = Model::init(Architecture::mlp(&[100, 10]).unwrap(), ThresholdOperator::Soft, 0).unwrap();
        let half: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let report = flops_count(&model, &[half]).unwrap();
        assert_eq!(report.dense_total, 2000);
        assert_eq!(report.sparse_total, 1000);
        assert!(flops_count(&model, &[vec![true; 999]]).is_err());
        assert!(flops_count(&model, &[]).is_err());
    }

    #[test]
    fn nested_masks_never_increase_flops() {
        let arch: Architecture = "cnn:1x6x6:conv3k3s1p1,fc4".parse().unwrap();
        let model = Model::init(arch, ThresholdOperator::Soft, 0).unwrap();
        let sizes: Vec<usize> = model.layers.iter().map(|l| l.weights.numel()).collect();
        let mut masks: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![true; n]).collect();
        let mut last = flops_count(&model, &masks).unwrap().sparse_total;
        assert_eq!(last, flops_count(&model, &masks).unwrap().dense_total);
        for step in 0..20 {
            for m in masks.iter_mut() {
                let len = m.len();
                m[(step * 7) % len] = false;
            }
            let now = flops_count(&model, &masks).unwrap().sparse_total;
            assert!(now <= last);
            last = now;
        }
    }
}

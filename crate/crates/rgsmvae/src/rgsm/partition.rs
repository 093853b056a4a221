//! Regularization group assignment.
//!
//! A group is one column of a 2-D weight matrix (one input feature). A layer
//! is regularized iff its kind is fc/lstm/bilstm and its width exceeds 128:
//! output width for FC, hidden width per direction for LSTM. Biases carry no
//! groups.

use crate::layers::{LayerKind, WeightDesc};

pub const WIDTH_THRESHOLD: usize = 128;

/// Column groups over one named weight matrix.
#[derive(Debug, Clone)]
pub struct GroupPartition {
    pub layer: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: LayerKind,
    pub regularized: bool,
}

impl GroupPartition {
    pub fn num_groups(&self) -> usize {
        self.cols
    }

    /// Flat indices of group `g` (column `g`).
    pub fn group_indices(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let cols = self.cols;
        (0..self.rows).map(move |r| r * cols + g)
    }

    pub fn group_norm(&self, w: &[f32], g: usize) -> f64 {
        self.group_indices(g)
            .map(|i| {
                let v = w[i] as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn eligible(kind: LayerKind) -> bool {
    matches!(kind, LayerKind::Fc | LayerKind::Lstm | LayerKind::Bilstm)
}

/// Build partitions for every described weight matrix, applying the
/// kind-and-width targeting rule.
pub fn build_partitions(descs: &[WeightDesc]) -> Vec<GroupPartition> {
    descs
        .iter()
        .map(|d| GroupPartition {
            layer: d.name.clone(),
            rows: d.rows,
            cols: d.cols,
            kind: d.kind,
            regularized: eligible(d.kind) && d.width > WIDTH_THRESHOLD,
        })
        .collect()
}

/// Human-readable include-list, one line per matrix, for startup auditing.
pub fn describe_targets(partitions: &[GroupPartition]) -> String {
    let mut s = String::new();
    for p in partitions {
        s.push_str(&format!(
            "{} kind={} shape=({}, {}) groups={} regularized={}\n",
            p.layer,
            p.kind,
            p.rows,
            p.cols,
            p.num_groups(),
            p.regularized
        ));
    }
    s
}

//! Core data types shared by every stage of the pipeline.
//!
//! All types here are immutable once constructed (apart from builder-style
//! setters on [`PairWeights`]) and can be shared read-only across threads.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features × samples matrix of nonnegative expression levels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    feature_ids: Vec<String>,
    sample_ids: Vec<String>,
    values: Vec<f64>,
}

fn check_unique(ids: &[String], what: &'static str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                source_name: "<memory>".into(),
                what,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

impl ExpressionMatrix {
    pub fn new(feature_ids: Vec<String>, sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if feature_ids.len() < 2 || sample_ids.len() < 2 {
            return Err(Error::Validation(format!(
                "expression matrix needs at least 2 features and 2 samples, got {}x{}",
                feature_ids.len(),
                sample_ids.len()
            )));
        }
        if values.len() != feature_ids.len() * sample_ids.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: feature_ids.len() * sample_ids.len(),
            });
        }
        check_unique(&feature_ids, "feature")?;
        check_unique(&sample_ids, "sample")?;
        let s = sample_ids.len();
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "feature '{}' sample '{}': value {} is not a finite nonnegative number",
                feature_ids[pos / s],
                sample_ids[pos % s],
                values[pos]
            )));
        }
        Ok(Self {
            feature_ids,
            sample_ids,
            values,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let s = self.n_samples();
        &self.values[feature * s..(feature + 1) * s]
    }

    pub fn value(&self, feature: usize, sample: usize) -> f64 {
        self.values[feature * self.n_samples() + sample]
    }

    pub fn column(&self, sample: usize) -> Vec<f64> {
        (0..self.n_features()).map(|f| self.value(f, sample)).collect()
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == id)
    }

    /// Euclidean norm of one feature's levels across every sample, controls included.
    pub fn feature_norm(&self, feature: usize) -> f64 {
        assert!(feature < self.n_features(), "feature index {feature} out of range");
        self.row(feature).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn feature_norms(&self) -> Vec<f64> {
        (0..self.n_features()).map(|f| self.feature_norm(f)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Control,
    Treated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub role: SampleRole,
    /// Empty for controls.
    pub compound: String,
    pub replicate: u32,
    /// Paired control sample; `None` for controls.
    pub control_id: Option<String>,
}

impl SampleRecord {
    /// Leaf label of the form `<compound>_<replicate>`; controls fall back to their id.
    pub fn label(&self) -> String {
        match self.role {
            SampleRole::Treated => format!("{}_{}", self.compound, self.replicate),
            SampleRole::Control => self.sample_id.clone(),
        }
    }
}

/// Validated sample annotations: role, compound, replicate and control pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    records: Vec<SampleRecord>,
    by_id: HashMap<String, usize>,
}

impl SampleMeta {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.sample_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    source_name: "metadata".into(),
                    what: "sample",
                    id: r.sample_id.clone(),
                });
            }
            if r.replicate == 0 {
                return Err(Error::Validation(format!(
                    "sample '{}': replicate must be a positive integer",
                    r.sample_id
                )));
            }
        }
        let mut seen = HashSet::new();
        for r in records.iter().filter(|r| r.role == SampleRole::Treated) {
            if r.compound.is_empty() {
                return Err(Error::Validation(format!(
                    "treated sample '{}' has no compound label",
                    r.sample_id
                )));
            }
            let control = r.control_id.as_deref().ok_or_else(|| Error::MissingControl {
                sample: r.sample_id.clone(),
            })?;
            match by_id.get(control).map(|&i| records[i].role) {
                Some(SampleRole::Control) => {}
                _ => {
                    return Err(Error::DanglingControl {
                        sample: r.sample_id.clone(),
                        control: control.to_string(),
                    })
                }
            }
            if !seen.insert((r.compound.as_str(), r.replicate)) {
                return Err(Error::DuplicateReplicate {
                    compound: r.compound.clone(),
                    replicate: r.replicate,
                });
            }
        }
        Ok(Self { records, by_id })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.by_id.get(sample_id).map(|&i| &self.records[i])
    }

    pub fn treated(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.role == SampleRole::Treated)
    }

    /// Number of treated replicates recorded for `compound`.
    pub fn replicate_count(&self, compound: &str) -> usize {
        self.treated().filter(|r| r.compound == compound).count()
    }
}

/// Features × treated-samples matrix of log2 expression ratios, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMatrix {
    feature_ids: Vec<String>,
    treated_ids: Vec<String>,
    ratios: Vec<f64>,
}

impl RatioMatrix {
    pub fn new(feature_ids: Vec<String>, treated_ids: Vec<String>, ratios: Vec<f64>) -> Result<Self> {
        if ratios.len() != feature_ids.len() * treated_ids.len() {
            return Err(Error::LengthMismatch {
                left: ratios.len(),
                right: feature_ids.len() * treated_ids.len(),
            });
        }
        if treated_ids.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 treated samples, got {}",
                treated_ids.len()
            )));
        }
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("ratio matrix contains non-finite entries".into()));
        }
        Ok(Self {
            feature_ids,
            treated_ids,
            ratios,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treated_ids.len()
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn treated_ids(&self) -> &[String] {
        &self.treated_ids
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let g = self.n_treated();
        &self.ratios[feature * g..(feature + 1) * g]
    }

    pub fn value(&self, feature: usize, treated: usize) -> f64 {
        self.ratios[feature * self.n_treated() + treated]
    }

    pub fn column(&self, treated: usize) -> Vec<f64> {
        (0..self.n_features()).map(|f| self.value(f, treated)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.ratios
    }
}

/// Symmetric weights in {-1, 0, 1} over unordered pairs of treated samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairWeights {
    size: usize,
    // upper triangle, row-major over a < b
    weights: Vec<i8>,
}

impl PairWeights {
    pub fn uniform(size: usize, weight: i8) -> Result<Self> {
        check_weight(weight)?;
        Ok(Self {
            size,
            weights: vec![weight; size * size.saturating_sub(1) / 2],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn slot(&self, a: usize, b: usize) -> usize {
        assert!(a != b, "pair weights are undefined on the diagonal");
        assert!(a < self.size && b < self.size, "sample index out of range");
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        // offset of row a in the packed upper triangle
        a * (2 * self.size - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, a: usize, b: usize) -> i8 {
        self.weights[self.slot(a, b)]
    }

    pub fn set(&mut self, a: usize, b: usize, weight: i8) -> Result<()> {
        check_weight(weight)?;
        let slot = self.slot(a, b);
        self.weights[slot] = weight;
        Ok(())
    }

    /// Number of pairs whose weight is exactly 1.
    pub fn count_positive(&self) -> usize {
        self.weights.iter().filter(|&&w| w == 1).count()
    }

    /// All unordered pairs `(a, b, w)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        (0..self.size).flat_map(move |a| (a + 1..self.size).map(move |b| (a, b, self.get(a, b))))
    }

    pub fn all_nonnegative(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0)
    }
}

fn check_weight(weight: i8) -> Result<()> {
    if (-1..=1).contains(&weight) {
        Ok(())
    } else {
        Err(Error::Validation(format!("pair weight {weight} is not one of -1, 0, 1")))
    }
}

/// A fixed-size feature subset together with its objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Sorted, distinct feature indices.
    pub indices: Vec<usize>,
    pub objective: f64,
    pub u1: f64,
    pub u2: f64,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.indices.binary_search(&feature).is_ok()
    }
}

/// One agglomeration step. Leaves are nodes `0..S`; merge `k` creates node `S + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Height of a node; leaves sit at zero.
    pub fn node_height(&self, node: usize) -> f64 {
        let s = self.n_leaves();
        if node < s {
            0.0
        } else {
            self.merges[node - s].height
        }
    }

    pub fn root(&self) -> usize {
        2 * self.n_leaves() - 2
    }

    /// Leaf indices under `node`, in left-to-right drawing order.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let s = self.n_leaves();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if n < s {
                out.push(n);
            } else {
                let m = &self.merges[n - s];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Leaf indices in drawing order (left subtree first at every merge).
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.n_leaves() == 1 {
            return vec![0];
        }
        self.leaves_under(self.root())
    }

    /// Checks the structural invariants: S-1 merges, every non-root node used
    /// exactly once as a child, children created before parents, and heights
    /// in [0, 1] that never decrease toward the root.
    pub fn validate(&self) -> Result<()> {
        let s = self.n_leaves();
        if s < 2 || self.merges.len() != s - 1 {
            return Err(Error::Validation(format!(
                "dendrogram with {s} leaves must have {} merges, has {}",
                s.saturating_sub(1),
                self.merges.len()
            )));
        }
        let mut used = vec![false; 2 * s - 1];
        for (k, m) in self.merges.iter().enumerate() {
            let node = s + k;
            for child in [m.left, m.right] {
                if child >= node || used[child] {
                    return Err(Error::Validation(format!(
                        "merge {k} has invalid or reused child {child}"
                    )));
                }
                used[child] = true;
                if self.node_height(child) > m.height {
                    return Err(Error::Validation(format!(
                        "merge {k} at height {} lies below child {child}",
                        m.height
                    )));
                }
            }
            if !(0.0..=1.0).contains(&m.height) {
                return Err(Error::Validation(format!(
                    "merge {k} height {} outside [0, 1]",
                    m.height
                )));
            }
        }
        if used[..2 * s - 2].iter().any(|u| !u) {
            return Err(Error::Validation("dendrogram has an unmerged node".into()));
        }
        Ok(())
    }
}

//! Correlation dissimilarity between samples and average-linkage
//! agglomerative clustering.
//!
//! `d(x, y) = (1 - corr(x, y)) / 2` maps Pearson correlation onto [0, 1].
//! Clusters are merged at the smallest mean pairwise dissimilarity; the
//! merged cluster's distances are updated with the size-weighted
//! Lance-Williams rule, which equals the mean over all cross-cluster pairs.

mod export;
mod svg;

pub use export::{to_json, to_newick};
pub use svg::{render_dendrogram_svg, render_scatter_svg, ScatterPlot};

use crate::error::{Error, Result};
use crate::model::{Dendrogram, ExpressionMatrix, Merge, RatioMatrix};
use crate::objective::is_degenerate;

/// Heights may not drop below a child's height by more than this.
const MONOTONE_SLACK: f64 = 1e-12;

/// Symmetric S×S dissimilarities with zero diagonal, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    labels: Vec<String>,
    d: Vec<f64>,
    /// Samples whose profile had zero variance; their off-diagonal entries are 0.5.
    pub degenerate: Vec<usize>,
}

impl DissimilarityMatrix {
    /// Wraps a full row-major matrix after checking symmetry, range and diagonal.
    pub fn from_full(labels: Vec<String>, d: Vec<f64>) -> Result<Self> {
        let s = labels.len();
        if d.len() != s * s {
            return Err(Error::LengthMismatch {
                left: d.len(),
                right: s * s,
            });
        }
        for i in 0..s {
            if d[i * s + i] != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in 0..s {
                let v = d[i * s + j];
                if !(0.0..=1.0).contains(&v) || v != d[j * s + i] {
                    return Err(Error::Validation(format!(
                        "entry ({i}, {j}) = {v} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            d,
            degenerate: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    /// Tab-separated matrix with a label header row and label first column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i]);
            for j in 0..self.len() {
                out.push_str(&format!("\t{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Signed Pearson correlation by the two-pass formula; `None` if either
/// vector is constant.
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if is_degenerate(sxx, n, mx) || is_degenerate(syy, n, my) {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pairwise `(1 - corr) / 2` between sample profiles. A constant profile is
/// treated as uncorrelated with everything (d = 0.5) and listed in
/// [`DissimilarityMatrix::degenerate`].
pub fn dissimilarity(labels: Vec<String>, profiles: &[Vec<f64>]) -> Result<DissimilarityMatrix> {
    let s = profiles.len();
    if s < 2 || labels.len() != s {
        return Err(Error::Validation(format!(
            "need at least 2 profiles with one label each (got {s} profiles, {} labels)",
            labels.len()
        )));
    }
    let len = profiles[0].len();
    if let Some(bad) = profiles.iter().find(|p| p.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: bad.len(),
        });
    }
    if len < 2 {
        return Err(Error::Validation("profiles need at least 2 entries".into()));
    }
    let flat: Vec<bool> = profiles
        .iter()
        .map(|p| pearson(p, p).is_none())
        .collect();
    let mut d = vec![0.0; s * s];
    for i in 0..s {
        for j in i + 1..s {
            let v = match pearson(&profiles[i], &profiles[j]) {
                Some(r) => (1.0 - r) / 2.0,
                None => 0.5,
            };
            d[i * s + j] = v;
            d[j * s + i] = v;
        }
    }
    Ok(DissimilarityMatrix {
        labels,
        d,
        degenerate: (0..s).filter(|&i| flat[i]).collect(),
    })
}

/// Per-treated-sample ratio profiles over `features` (all features if `None`).
pub fn ratio_profiles(ratios: &RatioMatrix, features: Option<&[usize]>) -> Vec<Vec<f64>> {
    (0..ratios.n_treated())
        .map(|g| match features {
            Some(idx) => idx.iter().map(|&f| ratios.value(f, g)).collect(),
            None => ratios.column(g),
        })
        .collect()
}

/// Raw expression profiles of the given sample columns over `features`.
pub fn level_profiles(matrix: &ExpressionMatrix, samples: &[usize], features: Option<&[usize]>) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|&j| match features {
            Some(idx) => idx.iter().map(|&f| matrix.value(f, j)).collect(),
            None => matrix.column(j),
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Cluster {
    node: usize,
    min_leaf: usize,
    size: usize,
    height: f64,
}

/// Average-linkage agglomeration. Among equally close cluster pairs the one
/// whose (smaller, larger) minimum leaf indices compare least is merged first.
pub fn average_linkage(d: &DissimilarityMatrix) -> Dendrogram {
    let s = d.len();
    assert!(s >= 2, "clustering needs at least two samples");
    let mut dist = d.d.clone();
    let mut slots: Vec<Option<Cluster>> = (0..s)
        .map(|i| {
            Some(Cluster {
                node: i,
                min_leaf: i,
                size: 1,
                height: 0.0,
            })
        })
        .collect();
    let mut merges = Vec::with_capacity(s - 1);

    for k in 0..s - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..s {
            let Some(ci) = slots[i] else { continue };
            for j in i + 1..s {
                let Some(cj) = slots[j] else { continue };
                let v = dist[i * s + j];
                let key = (ci.min_leaf.min(cj.min_leaf), ci.min_leaf.max(cj.min_leaf));
                let better = match best {
                    None => true,
                    Some((bv, bkey, _, _)) => v < bv || (v == bv && key < bkey),
                };
                if better {
                    best = Some((v, key, i, j));
                }
            }
        }
        let (height, _, i, j) = best.expect("two active clusters remain");
        let (ci, cj) = (slots[i].unwrap(), slots[j].unwrap());
        let floor = ci.height.max(cj.height);
        assert!(
            height >= floor - MONOTONE_SLACK,
            "average linkage produced an inversion: {height} below {floor}"
        );
        let height = height.max(floor);
        let (left, right) = if ci.min_leaf < cj.min_leaf { (ci, cj) } else { (cj, ci) };
        merges.push(Merge {
            left: left.node,
            right: right.node,
            height,
            size: ci.size + cj.size,
        });

        let (wi, wj) = (ci.size as f64, cj.size as f64);
        for m in 0..s {
            if m == i || m == j || slots[m].is_none() {
                continue;
            }
            let v = (wi * dist[i * s + m] + wj * dist[j * s + m]) / (wi + wj);
            dist[i * s + m] = v;
            dist[m * s + i] = v;
        }
        slots[i] = Some(Cluster {
            node: s + k,
            min_leaf: ci.min_leaf.min(cj.min_leaf),
            size: ci.size + cj.size,
            height,
        });
        slots[j] = None;
    }

    Dendrogram {
        leaves: d.labels.clone(),
        merges,
    }
}

/// Partition into `k` groups by undoing the `k - 1` last (highest) merges.
/// Groups are ordered by smallest leaf index; members are ascending.
pub fn cut(dend: &Dendrogram, k: usize) -> Vec<Vec<usize>> {
    let s = dend.n_leaves();
    assert!(k >= 1 && k <= s, "k = {k} must lie in 1..={s}");
    let mut parent: Vec<usize> = (0..2 * s - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (m, merge) in dend.merges.iter().take(s - k).enumerate() {
        let node = s + m;
        let (a, b) = (find(&mut parent, merge.left), find(&mut parent, merge.right));
        parent[a] = node;
        parent[b] = node;
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for leaf in 0..s {
        let root = find(&mut parent, leaf);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(leaf),
            None => groups.push((root, vec![leaf])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// [`cut`] with leaf labels in place of indices.
pub fn cut_labels(dend: &Dendrogram, k: usize) -> Vec<Vec<String>> {
    cut(dend, k)
        .into_iter()
        .map(|g| g.into_iter().map(|i| dend.leaves[i].clone()).collect())
        .collect()
}

//! Synthetic expression data with planted compound groups.
//!
//! Each feature has a log-normal baseline level `b`. Control replicate `r`
//! is `b * exp(N(0, control_replicate_sd)) * exp(N(0, noise_sd))`.
//! Treated sample `(c, r)` is `b * 2^effect * exp(N(0, noise_sd))`, where
//! `effect` is a compound-specific `N(0, compound_sd)` term on every feature
//! plus, on informative features, the effect of the compound's group. The
//! first two groups have mirror-image effects. Treated samples are paired with the control of the
//! same replicate index.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{save_matrix, write_meta, write_weights, Format};
use crate::model::{ExpressionMatrix, PairWeights, SampleMeta, SampleRecord, SampleRole};
use crate::rng::chain_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub compounds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub groups: Vec<GroupSpec>,
    pub replicates: u32,
    pub n_features: usize,
    pub informative: usize,
    /// Typical |log2 fold change| of a group on an informative feature.
    pub effect_size: f64,
    /// Per-compound log2 effect on every feature, shared by the compound's replicates.
    pub compound_sd: f64,
    /// Natural-log sd of multiplicative noise on every entry.
    pub noise_sd: f64,
    /// Log-normal parameters of the baseline level.
    pub baseline_log_mean: f64,
    pub baseline_log_sd: f64,
    /// Natural-log sd of each control replicate's deviation from the baseline.
    pub control_replicate_sd: f64,
    /// Fraction of entries replaced by exact zeros.
    pub zero_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let group = |label: &str, compounds: &[&str]| GroupSpec {
            label: label.into(),
            compounds: compounds.iter().map(|c| c.to_string()).collect(),
        };
        Self {
            groups: vec![group("G1", &["cmpA", "cmpB"]), group("G2", &["cmpC", "cmpD"])],
            replicates: 2,
            n_features: 500,
            informative: 50,
            effect_size: 2.0,
            compound_sd: 0.3,
            noise_sd: 0.1,
            baseline_log_mean: 1.0,
            baseline_log_sd: 2.0,
            control_replicate_sd: 0.1,
            zero_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.groups.is_empty() || self.groups.iter().any(|g| g.compounds.is_empty()) {
            return bad("every group needs at least one compound".into());
        }
        let compounds: Vec<&String> = self.groups.iter().flat_map(|g| &g.compounds).collect();
        let mut unique = compounds.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != compounds.len() {
            return bad("compound names must be unique across groups".into());
        }
        if compounds.iter().any(|c| c.is_empty()) {
            return bad("compound names must not be empty".into());
        }
        if self.replicates == 0 || compounds.len() * (self.replicates as usize) < 2 {
            return bad("need at least two treated samples".into());
        }
        if self.n_features < 2 || self.informative > self.n_features {
            return bad(format!(
                "informative count {} must not exceed feature count {} (at least 2)",
                self.informative, self.n_features
            ));
        }
        if !(self.effect_size > 0.0 && self.baseline_log_sd > 0.0) {
            return bad("effect size and baseline spread must be positive".into());
        }
        let scales = [
            self.compound_sd,
            self.noise_sd,
            self.control_replicate_sd,
        ];
        if !self.baseline_log_mean.is_finite() || scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("scales must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.zero_fraction) {
            return bad("zero fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: Vec<GroupSpec>,
    /// Indices of informative features, ascending.
    pub informative: Vec<usize>,
    pub informative_ids: Vec<String>,
    pub seed: u64,
}

impl GroundTruth {
    /// Group index of `compound`, if it was generated.
    pub fn group_of(&self, compound: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.compounds.iter().any(|c| c == compound))
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub matrix: ExpressionMatrix,
    pub meta: SampleMeta,
    pub truth: GroundTruth,
}

impl SynthDataset {
    pub fn treated_ids(&self) -> Vec<String> {
        crate::ingest::treated_ids(&self.matrix, &self.meta)
    }

    /// Writes `matrix.tsv`, `meta.tsv`, `weights.tsv` (all pairs 1) and `truth.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_matrix(&self.matrix, &dir.join("matrix.tsv"), Format::Tsv)?;
        let create = |name: &str| {
            let path = dir.join(name);
            fs::File::create(&path).map_err(|e| Error::io(path, e))
        };
        write_meta(&self.meta, create("meta.tsv")?)?;
        let treated = self.treated_ids();
        let weights = PairWeights::uniform(treated.len(), 1)?;
        write_weights(&treated, &weights, create("weights.tsv")?)?;
        let path = dir.join("truth.json");
        let json = serde_json::to_string_pretty(&self.truth)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = chain_rng(spec.seed, 0);
    let f = spec.n_features;
    let reps = spec.replicates as usize;
    let normal = |sd: f64| Normal::new(0.0, sd).expect("validated scale");
    let (noise, ctrl_dev, compound_dev) = (
        normal(spec.noise_sd),
        normal(spec.control_replicate_sd),
        normal(spec.compound_sd),
    );
    let baseline_dist = LogNormal::new(spec.baseline_log_mean, spec.baseline_log_sd).expect("validated scale");

    let baseline: Vec<f64> = (0..f).map(|_| baseline_dist.sample(&mut rng)).collect();
    let mut informative = sample(&mut rng, f, spec.informative).into_vec();
    informative.sort_unstable();

    // shared pattern: random sign, magnitude in [0.5, 1.5] * effect; the first two
    // groups get it with opposite signs, later groups draw their own
    let mut pattern = || -> Vec<f64> {
        (0..informative.len())
            .map(|_| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * spec.effect_size * rng.random_range(0.5..=1.5)
            })
            .collect()
    };
    let shared = pattern();
    let group_effects: Vec<Vec<f64>> = (0..spec.groups.len())
        .map(|g| match g {
            0 => shared.clone(),
            1 => shared.iter().map(|v| -v).collect(),
            _ => pattern(),
        })
        .collect();

    let width = f.to_string().len().max(5);
    let feature_ids: Vec<String> = (0..f).map(|i| format!("rna_{:0width$}", i + 1)).collect();
    let mut sample_ids = Vec::new();
    let mut records = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();

    for r in 1..=reps {
        let id = format!("ctrl_{r}");
        columns.push(
            baseline
                .iter()
                .map(|&b| b * (ctrl_dev.sample(&mut rng) + noise.sample(&mut rng)).exp())
                .collect(),
        );
        records.push(SampleRecord {
            sample_id: id.clone(),
            role: SampleRole::Control,
            compound: String::new(),
            replicate: r as u32,
            control_id: None,
        });
        sample_ids.push(id);
    }
    for (g, group) in spec.groups.iter().enumerate() {
        for compound in &group.compounds {
            let mut effect: Vec<f64> = (0..f).map(|_| compound_dev.sample(&mut rng)).collect();
            for (k, &i) in informative.iter().enumerate() {
                effect[i] += group_effects[g][k];
            }
            for r in 1..=reps {
                let id = format!("{compound}_{r}");
                columns.push(
                    (0..f)
                        .map(|i| baseline[i] * effect[i].exp2() * noise.sample(&mut rng).exp())
                        .collect(),
                );
                records.push(SampleRecord {
                    sample_id: id.clone(),
                    role: SampleRole::Treated,
                    compound: compound.clone(),
                    replicate: r as u32,
                    control_id: Some(format!("ctrl_{r}")),
                });
                sample_ids.push(id);
            }
        }
    }

    if spec.zero_fraction > 0.0 {
        for column in &mut columns {
            for v in column.iter_mut() {
                if rng.random::<f64>() < spec.zero_fraction {
                    *v = 0.0;
                }
            }
        }
        // keep at least one positive entry per column so every column has a replacement value
        for column in &mut columns {
            if column.iter().all(|&v| v == 0.0) {
                column[0] = baseline[0];
            }
        }
    }

    let s = columns.len();
    let mut values = vec![0.0; f * s];
    for (j, column) in columns.iter().enumerate() {
        for (i, &v) in column.iter().enumerate() {
            values[i * s + j] = v;
        }
    }
    let informative_ids = informative.iter().map(|&i| feature_ids[i].clone()).collect();
    Ok(SynthDataset {
        matrix: ExpressionMatrix::new(feature_ids, sample_ids, values)?,
        meta: SampleMeta::new(records)?,
        truth: GroundTruth {
            groups: spec.groups.clone(),
            informative,
            informative_ids,
            seed: spec.seed,
        },
    })
}

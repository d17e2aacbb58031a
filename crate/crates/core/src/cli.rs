//! Command-line pipeline: ingest, ratio computation, selection sweep,
//! clustering and export.
//!
//! Settings come from flags, an optional TOML config file and built-in
//! defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annealer::{self, AnnealSchedule};
use crate::clustering::{
    self, average_linkage, dissimilarity, level_profiles, ratio_profiles, render_dendrogram_svg,
    render_scatter_svg, ScatterPlot,
};
use crate::error::{Error, Result};
use crate::ingest::{self, Format, IngestReport};
use crate::model::{Dendrogram, ExpressionMatrix, PairWeights, RatioMatrix, SampleMeta, SampleRecord, Selection};
use crate::objective::{ObjectiveContext, ObjectiveParams};
use crate::oracle;
use crate::rng::derive_seed;
use crate::synth::{self, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// log2 treated/control ratio profiles
    Ratios,
    /// raw expression levels of the treated samples
    Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Newick,
    Json,
    Svg,
    All,
}

impl OutputFormat {
    fn newick(self) -> bool {
        matches!(self, Self::Newick | Self::All)
    }
    fn json(self) -> bool {
        matches!(self, Self::Json | Self::All)
    }
    fn svg(self) -> bool {
        matches!(self, Self::Svg | Self::All)
    }
}

/// Fully resolved settings for one invocation of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub matrix: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub t_init: f64,
    pub t_final: f64,
    pub gamma: f64,
    pub swaps_per_temp: usize,
    pub restarts: usize,
    pub seed: u64,
    pub return_final: bool,
    pub default_weight: i8,
    pub cluster_mode: ClusterMode,
    pub cluster_all_features: bool,
    pub cut_k: Option<usize>,
    /// Left out of `summary.json` so runs into different directories compare equal.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = AnnealSchedule::default();
        Self {
            matrix: None,
            meta: None,
            weights: None,
            n: vec![100],
            alpha: vec![0.2],
            t_init: schedule.t_init,
            t_final: schedule.t_final,
            gamma: schedule.gamma,
            swaps_per_temp: schedule.swaps_per_temperature,
            restarts: schedule.restarts,
            seed: 0,
            return_final: false,
            default_weight: 1,
            cluster_mode: ClusterMode::Ratios,
            cluster_all_features: false,
            cut_k: None,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::All,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative paths are resolved against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Parameter(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut config.matrix, &mut config.meta, &mut config.weights].into_iter().flatten() {
            resolve(p);
        }
        if text.lines().any(|l| l.trim_start().starts_with("out_dir")) {
            resolve(&mut config.out_dir);
        }
        Ok(config)
    }

    pub fn schedule(&self, seed: u64) -> AnnealSchedule {
        AnnealSchedule {
            t_init: self.t_init,
            t_final: self.t_final,
            gamma: self.gamma,
            swaps_per_temperature: self.swaps_per_temp,
            seed,
            restarts: self.restarts,
            return_final: self.return_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.is_none() || self.meta.is_none() {
            return Err(Error::Parameter("--matrix and --meta are required".into()));
        }
        if !self.cluster_all_features {
            if self.n.is_empty() || self.alpha.is_empty() {
                return Err(Error::Parameter("the n and alpha sweep lists must not be empty".into()));
            }
            if let Some(a) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::Parameter(format!("alpha = {a} is outside [0, 1]")));
            }
            if self.n.contains(&0) {
                return Err(Error::Parameter("subset size n must be positive".into()));
            }
            self.schedule(self.seed).validate()?;
        }
        if !(-1..=1).contains(&self.default_weight) {
            return Err(Error::Parameter(format!(
                "default weight {} must be -1, 0 or 1",
                self.default_weight
            )));
        }
        if self.cut_k == Some(0) {
            return Err(Error::Parameter("--cut-k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rnaselect", version, about = "Feature subset selection by simulated annealing and sample clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the selection sweep and cluster the treated samples
    Run(RunArgs),
    /// Write a synthetic dataset with planted compound groups
    Synth(SynthArgs),
    /// Exhaustively find the optimal subset of a small instance
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Subset size; repeat for a sweep
    #[arg(long = "n")]
    pub n: Vec<usize>,
    /// Weight of the magnitude term; repeat for a sweep
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub t_init: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub swaps_per_temp: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of sample pairs absent from the weights file
    #[arg(long, allow_negative_numbers = true)]
    pub default_weight: Option<i8>,
    #[arg(long, value_enum)]
    pub cluster_mode: Option<ClusterMode>,
    /// Cluster on all features and skip selection
    #[arg(long)]
    pub cluster_all_features: bool,
    /// Also report the partition into this many groups
    #[arg(long)]
    pub cut_k: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Report the last annealing state instead of the best one
    #[arg(long)]
    pub return_final: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        take!(t_init, t_final, gamma, swaps_per_temp, restarts, seed, default_weight, cluster_mode, format, out_dir);
        for (flag, slot) in [(&self.matrix, &mut c.matrix), (&self.meta, &mut c.meta), (&self.weights, &mut c.weights)] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if !self.n.is_empty() {
            c.n = self.n.clone();
        }
        if !self.alpha.is_empty() {
            c.alpha = self.alpha.clone();
        }
        if self.cut_k.is_some() {
            c.cut_k = self.cut_k;
        }
        c.cluster_all_features |= self.cluster_all_features;
        c.return_final |= self.return_final;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with generator settings
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long)]
    pub zero_fraction: Option<f64>,
    #[arg(long)]
    pub control_replicate_sd: Option<f64>,
}

impl SynthArgs {
    pub fn resolve(&self) -> Result<SynthSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Parameter(format!("{}: {}", path.display(), e.message())))?
            }
            None => SynthSpec::default(),
        };
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.features {
            spec.n_features = v;
        }
        if let Some(v) = self.informative {
            spec.informative = v;
        }
        if let Some(v) = self.zero_fraction {
            spec.zero_fraction = v;
        }
        if let Some(v) = self.control_replicate_sd {
            spec.control_replicate_sd = v;
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long = "n")]
    pub n: usize,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub default_weight: i8,
    /// Write the result here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Inputs shared by every sweep cell.
pub struct Inputs {
    pub matrix: ExpressionMatrix,
    pub meta: SampleMeta,
    pub report: IngestReport,
    pub treated: Vec<SampleRecord>,
    pub weights: PairWeights,
    pub context: ObjectiveContext,
}

impl Inputs {
    pub fn load(matrix: &Path, meta: &Path, weights: Option<&Path>, default_weight: i8) -> Result<Self> {
        let (matrix, report) = ingest::load_matrix(matrix, Format::from_path(matrix))?;
        let meta = ingest::load_meta(meta)?;
        let ratios: RatioMatrix = ingest::compute_ratios(&matrix, &meta)?;
        let treated_ids = ratios.treated_ids().to_vec();
        let weights = match weights {
            Some(path) => ingest::load_weights(path, &treated_ids, default_weight)?,
            None => PairWeights::uniform(treated_ids.len(), default_weight)?,
        };
        let treated = treated_ids
            .iter()
            .map(|id| meta.get(id).expect("treated id comes from metadata").clone())
            .collect();
        let context = ObjectiveContext::new(&matrix, ratios)?;
        Ok(Self {
            matrix,
            meta,
            report,
            treated,
            weights,
            context,
        })
    }

    fn labels(&self) -> Vec<String> {
        self.treated.iter().map(SampleRecord::label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramFiles {
    pub newick: Option<String>,
    pub json: Option<String>,
    pub svg: Option<String>,
}

/// One sweep cell in `summary.json`. Paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: String,
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub u: Option<f64>,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub selection: Option<String>,
    pub trace: Option<String>,
    pub dissimilarity: String,
    pub dendrogram: DendrogramFiles,
    pub scatter: Option<String>,
    pub groups: Option<Vec<String>>,
    /// Sample pairs whose correlation was undefined (constant profile).
    pub degenerate_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub features: usize,
    pub samples: usize,
    pub treated: usize,
    pub dropped_features: usize,
    /// Zero entries replaced per sample, keyed by sample id.
    pub zero_replacements: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    pub ingest: IngestSummary,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Serialize)]
struct Timing {
    total_seconds: f64,
    cells: BTreeMap<String, f64>,
}

fn cell_key(n: usize, alpha: f64) -> String {
    format!("n{n}_alpha{alpha}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Text listing of the `k`-group cut. A compound whose replicates all fall
/// into one group is listed once by name; otherwise its samples are listed
/// as `<compound>_<replicate>`.
pub fn report_groups(dend: &Dendrogram, k: usize, leaves: &[SampleRecord]) -> Vec<String> {
    assert_eq!(dend.n_leaves(), leaves.len(), "one record per leaf");
    let groups = clustering::cut(dend, k);
    let mut lines = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        let mut names: Vec<String> = Vec::new();
        for &leaf in members {
            let rec = &leaves[leaf];
            let whole = !rec.compound.is_empty()
                && leaves
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.compound == rec.compound)
                    .all(|(i, _)| members.contains(&i));
            let name = if whole { rec.compound.clone() } else { rec.label() };
            if !names.contains(&name) {
                names.push(name);
            }
        }
        lines.push(format!("group {}: {}", g + 1, names.join(", ")));
    }
    lines
}

fn write_selection(path: &Path, ctx: &ObjectiveContext, selection: &Selection) -> Result<()> {
    let mut text = String::from("feature_index\tfeature_id\tnorm\n");
    let ids = ctx.ratios().feature_ids();
    for &i in &selection.indices {
        let _ = writeln!(text, "{i}\t{}\t{:e}", ids[i], ctx.norms()[i]);
    }
    write_file(path, &text)
}

/// Reads the feature indices back from a selection file.
pub fn read_selection(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(line, l)| {
            l.split('\t').next().unwrap_or("").parse().map_err(|_| Error::Parse {
                source_name: path.display().to_string(),
                line: line + 1,
                column: 1,
                message: "feature index is not an integer".into(),
            })
        })
        .collect()
}

struct CellJob {
    key: String,
    n: Option<usize>,
    alpha: Option<f64>,
    seed: u64,
}

fn run_cell(config: &RunConfig, inputs: &Inputs, job: &CellJob) -> Result<CellSummary> {
    let dir_name = job.key.clone();
    let dir = config.out_dir.join(&dir_name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{dir_name}/{name}");
    let ctx = &inputs.context;

    let mut summary = CellSummary {
        key: job.key.clone(),
        n: job.n,
        alpha: job.alpha,
        seed: None,
        u: None,
        u1: None,
        u2: None,
        selection: None,
        trace: None,
        dissimilarity: rel("dissimilarity.tsv"),
        dendrogram: DendrogramFiles {
            newick: None,
            json: None,
            svg: None,
        },
        scatter: None,
        groups: None,
        degenerate_pairs: 0,
    };

    let selected = match (job.n, job.alpha) {
        (Some(n), Some(alpha)) => {
            let params = ObjectiveParams::new(alpha, n, inputs.weights.clone())?;
            let (selection, trace) = annealer::run(ctx, &params, &config.schedule(job.seed))?;
            write_selection(&dir.join("selection.tsv"), ctx, &selection)?;
            let mut csv = Vec::new();
            trace.write_csv(&mut csv).map_err(|e| Error::io(dir.join("trace.csv"), e))?;
            fs::write(dir.join("trace.csv"), csv).map_err(|e| Error::io(dir.join("trace.csv"), e))?;
            summary.seed = Some(job.seed);
            summary.u = Some(selection.objective);
            summary.u1 = Some(selection.u1);
            summary.u2 = Some(selection.u2);
            summary.selection = Some(rel("selection.tsv"));
            summary.trace = Some(rel("trace.csv"));
            Some(selection.indices)
        }
        _ => None,
    };

    let features = selected.as_deref();
    let profiles = match config.cluster_mode {
        ClusterMode::Ratios => ratio_profiles(ctx.ratios(), features),
        ClusterMode::Levels => {
            let columns: Vec<usize> = inputs
                .treated
                .iter()
                .map(|r| inputs.matrix.sample_index(&r.sample_id).expect("treated sample in matrix"))
                .collect();
            level_profiles(&inputs.matrix, &columns, features)
        }
    };
    let d = dissimilarity(inputs.labels(), &profiles)?;
    summary.degenerate_pairs = d.degenerate.len();
    write_file(&dir.join("dissimilarity.tsv"), &d.to_tsv())?;
    let dend = average_linkage(&d);
    let title = match (job.n, job.alpha) {
        (Some(n), Some(a)) => format!("n = {n}, alpha = {a}"),
        _ => "all features".to_string(),
    };
    if config.format.newick() {
        write_file(&dir.join("dendrogram.nwk"), &(clustering::to_newick(&dend) + "\n"))?;
        summary.dendrogram.newick = Some(rel("dendrogram.nwk"));
    }
    if config.format.json() {
        write_file(&dir.join("dendrogram.json"), &(clustering::to_json(&dend)? + "\n"))?;
        summary.dendrogram.json = Some(rel("dendrogram.json"));
    }
    if config.format.svg() {
        write_file(&dir.join("dendrogram.svg"), &render_dendrogram_svg(&dend, &title))?;
        summary.dendrogram.svg = Some(rel("dendrogram.svg"));
        if let Some(svg) = scatter(inputs, features) {
            write_file(&dir.join("scatter.svg"), &svg)?;
            summary.scatter = Some(rel("scatter.svg"));
        }
    }
    if let Some(k) = config.cut_k {
        let k = k.min(dend.n_leaves());
        let lines = report_groups(&dend, k, &inputs.treated);
        write_file(&dir.join("groups.txt"), &(lines.join("\n") + "\n"))?;
        summary.groups = Some(lines);
    }
    Ok(summary)
}

/// Replicates 1 and 2 of the first compound that has both, selected features in red.
fn scatter(inputs: &Inputs, selected: Option<&[usize]>) -> Option<String> {
    let selected = selected?;
    let first = inputs.treated.iter().find(|r| r.replicate == 1 && inputs.meta.replicate_count(&r.compound) >= 2)?;
    let second = inputs.treated.iter().find(|r| r.compound == first.compound && r.replicate != 1)?;
    let x = inputs.matrix.column(inputs.matrix.sample_index(&first.sample_id)?);
    let y = inputs.matrix.column(inputs.matrix.sample_index(&second.sample_id)?);
    let mut highlighted = vec![false; x.len()];
    for &i in selected {
        highlighted[i] = true;
    }
    Some(render_scatter_svg(&ScatterPlot {
        x: &x,
        y: &y,
        highlighted: &highlighted,
        x_label: &first.label(),
        y_label: &second.label(),
        title: &format!("{} replicates", first.compound),
    }))
}

/// Runs every sweep cell and writes `summary.json` (deterministic) and
/// `timing.json` (wall-clock seconds) into the output directory.
pub fn run_pipeline(config: &RunConfig) -> Result<Summary> {
    config.validate()?;
    let started = Instant::now();
    let inputs = Inputs::load(
        config.matrix.as_deref().expect("validated"),
        config.meta.as_deref().expect("validated"),
        config.weights.as_deref(),
        config.default_weight,
    )?;

    let jobs: Vec<CellJob> = if config.cluster_all_features {
        vec![CellJob {
            key: "all_features".into(),
            n: None,
            alpha: None,
            seed: config.seed,
        }]
    } else {
        let mut jobs = Vec::new();
        for &n in &config.n {
            for &alpha in &config.alpha {
                inputs.context.check_params(&ObjectiveParams::new(alpha, n, inputs.weights.clone())?)?;
                jobs.push(CellJob {
                    key: cell_key(n, alpha),
                    n: Some(n),
                    alpha: Some(alpha),
                    seed: derive_seed(config.seed, jobs.len() as u64),
                });
            }
        }
        let mut keys: Vec<&String> = jobs.iter().map(|j| &j.key).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != jobs.len() {
            return Err(Error::Parameter("sweep lists contain duplicate values".into()));
        }
        jobs
    };

    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let results: Vec<(CellSummary, f64)> = jobs
        .par_iter()
        .map(|job| {
            let t = Instant::now();
            run_cell(config, &inputs, job).map(|s| (s, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;

    let zero_replacements = inputs
        .report
        .zero_replacements
        .iter()
        .map(|z| (z.sample_id.clone(), z.count))
        .collect();
    let summary = Summary {
        config: config.clone(),
        ingest: IngestSummary {
            features: inputs.matrix.n_features(),
            samples: inputs.matrix.n_samples(),
            treated: inputs.treated.len(),
            dropped_features: inputs.report.dropped_features.len(),
            zero_replacements,
        },
        cells: results.iter().map(|(s, _)| s.clone()).collect(),
    };
    write_file(
        &config.out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    let timing = Timing {
        total_seconds: started.elapsed().as_secs_f64(),
        cells: results.iter().map(|(s, t)| (s.key.clone(), *t)).collect(),
    };
    write_file(
        &config.out_dir.join("timing.json"),
        &(serde_json::to_string_pretty(&timing)? + "\n"),
    )?;
    Ok(summary)
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    let spec = args.resolve()?;
    synth::generate(&spec)?.write_to(&args.out_dir)
}

pub fn run_oracle(args: &OracleArgs) -> Result<String> {
    let inputs = Inputs::load(&args.matrix, &args.meta, args.weights.as_deref(), args.default_weight)?;
    let params = ObjectiveParams::new(args.alpha, args.n, inputs.weights.clone())?;
    let result = oracle::exhaustive_optimum(&inputs.context, &params)?;
    let json = serde_json::to_string_pretty(&result)? + "\n";
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    Ok(json)
}

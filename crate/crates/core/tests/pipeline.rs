use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rnaselect::cli::{read_selection, run_pipeline, RunConfig, Summary};
use rnaselect::ingest::{compute_ratios, load_matrix, load_meta, Format};
use rnaselect::model::PairWeights;
use rnaselect::objective::{eval_u, ObjectiveContext, ObjectiveParams};
use rnaselect::synth::{generate, SynthSpec};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rnaselect"))
}

fn dataset(seed: u64) -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&SynthSpec {
        n_features: 300,
        informative: 30,
        compound_sd: 0.5,
        zero_fraction: 0.02,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
    .write_to(&data)
    .unwrap();
    (tmp, data)
}

fn config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        matrix: Some(data.join("matrix.tsv")),
        meta: Some(data.join("meta.tsv")),
        weights: Some(data.join("weights.tsv")),
        n: vec![20],
        alpha: vec![0.0],
        swaps_per_temp: 1,
        gamma: 0.99,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn files_named(dir: &Path, name: &str) -> usize {
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            count += files_named(&path, name);
        } else if path.file_name().is_some_and(|f| f == name) {
            count += 1;
        }
    }
    count
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn single_cell_sweep_writes_one_of_each() {
    let (tmp, data) = dataset(1);
    let out = tmp.path().join("out");
    let summary = run_pipeline(&config(&data, &out)).unwrap();
    assert_eq!(summary.cells.len(), 1);
    assert_eq!(files_named(&out, "selection.tsv"), 1);
    assert_eq!(files_named(&out, "dendrogram.nwk"), 1);
    assert_eq!(files_named(&out, "dendrogram.json"), 1);
    assert_eq!(files_named(&out, "dendrogram.svg"), 1);
    assert_eq!(files_named(&out, "trace.csv"), 1);
    let trace = fs::read_to_string(out.join("n20_alpha0/trace.csv")).unwrap();
    assert!(trace.starts_with("step,temperature,current_u,best_u,accepted_count\n"));
    assert!(out.join("timing.json").exists());
}

#[test]
fn full_grid_has_twelve_cells() {
    let (tmp, data) = dataset(2);
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        n: vec![60, 20, 5],
        alpha: vec![0.0, 0.1, 0.2, 0.3],
        ..config(&data, &out)
    };
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.cells.len(), 12);
    assert_eq!(files_named(&out, "selection.tsv"), 12);
    assert_eq!(files_named(&out, "dendrogram.nwk"), 12);
    let parsed: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(parsed.cells, summary.cells);
}

#[test]
fn reported_u_matches_reevaluated_selection_file() {
    let (tmp, data) = dataset(3);
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        n: vec![10, 40],
        alpha: vec![0.0, 0.3],
        ..config(&data, &out)
    };
    let summary = run_pipeline(&cfg).unwrap();

    let (matrix, _) = load_matrix(&data.join("matrix.tsv"), Format::Tsv).unwrap();
    let meta = load_meta(&data.join("meta.tsv")).unwrap();
    let ctx = ObjectiveContext::new(&matrix, compute_ratios(&matrix, &meta).unwrap()).unwrap();
    for cell in &summary.cells {
        let indices = read_selection(&out.join(cell.selection.as_ref().unwrap())).unwrap();
        assert_eq!(indices.len(), cell.n.unwrap());
        let params =
            ObjectiveParams::new(cell.alpha.unwrap(), indices.len(), PairWeights::uniform(ctx.n_treated(), 1).unwrap())
                .unwrap();
        let e = eval_u(&ctx, &indices, &params);
        assert!((e.u - cell.u.unwrap()).abs() <= 1e-9, "{}: {} vs {}", cell.key, e.u, cell.u.unwrap());
        assert!((e.u1 - cell.u1.unwrap()).abs() <= 1e-9);
        assert!((e.u2 - cell.u2.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn all_features_mode_skips_selection() {
    let (tmp, data) = dataset(4);
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        cluster_all_features: true,
        cut_k: Some(2),
        ..config(&data, &out)
    };
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.cells.len(), 1);
    let cell = &summary.cells[0];
    assert_eq!(cell.key, "all_features");
    assert!(cell.u.is_none() && cell.selection.is_none());
    assert_eq!(files_named(&out, "selection.tsv"), 0);
    assert_eq!(files_named(&out, "dendrogram.nwk"), 1);
    let d = fs::read_to_string(out.join("all_features/dissimilarity.tsv")).unwrap();
    assert_eq!(d.lines().count(), 9);
}

#[test]
fn level_mode_and_format_selection() {
    let (tmp, data) = dataset(5);
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        cluster_mode: rnaselect::cli::ClusterMode::Levels,
        format: rnaselect::cli::OutputFormat::Newick,
        ..config(&data, &out)
    };
    let summary = run_pipeline(&cfg).unwrap();
    assert!(summary.cells[0].dendrogram.svg.is_none());
    assert_eq!(files_named(&out, "dendrogram.nwk"), 1);
    assert_eq!(files_named(&out, "dendrogram.svg"), 0);
}

#[test]
fn planted_groups_reported_at_k2() {
    let (tmp, data) = dataset(6);
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        n: vec![30],
        alpha: vec![0.2],
        gamma: 0.999,
        cut_k: Some(2),
        ..config(&data, &out)
    };
    let summary = run_pipeline(&cfg).unwrap();
    let groups = summary.cells[0].groups.clone().unwrap();
    assert_eq!(groups, vec!["group 1: cmpA, cmpB", "group 2: cmpC, cmpD"]);
    let text = fs::read_to_string(out.join("n30_alpha0.2/groups.txt")).unwrap();
    assert_eq!(text, "group 1: cmpA, cmpB\ngroup 2: cmpC, cmpD\n");
}

#[test]
fn cli_run_with_config_file_and_overrides() {
    let (tmp, data) = dataset(7);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "matrix = \"data/matrix.tsv\"\nmeta = \"data/meta.tsv\"\nn = [15]\nalpha = [0.1, 0.2]\ngamma = 0.99\nout_dir = \"from_file\"\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--alpha", "0.3", "--cut-k", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("from_file/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.cells.len(), 1);
    assert_eq!(summary.cells[0].key, "n15_alpha0.3");
    assert_eq!(summary.config.gamma, 0.99);
}

#[test]
fn exit_codes() {
    let (tmp, data) = dataset(8);
    let run = |extra: &[&str]| {
        bin()
            .arg("run")
            .arg("--matrix")
            .arg(data.join("matrix.tsv"))
            .arg("--meta")
            .arg(data.join("meta.tsv"))
            .arg("--out-dir")
            .arg(tmp.path().join("out"))
            .args(["--gamma", "0.9"])
            .args(extra)
            .output()
            .unwrap()
    };
    assert_eq!(run(&["--n", "5"]).status.code(), Some(0));
    // parameter errors
    assert_eq!(run(&["--alpha", "1.5"]).status.code(), Some(4));
    assert_eq!(run(&["--n", "100000"]).status.code(), Some(4));
    assert_eq!(run(&["--t-final", "5"]).status.code(), Some(4));
    assert_eq!(run(&["--cluster-mode", "bogus"]).status.code(), Some(4));

    // I/O error
    let missing = bin()
        .args(["run", "--matrix", "/nonexistent/m.tsv", "--meta", "/nonexistent/x.tsv"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
    assert!(stderr(&missing).contains("/nonexistent/m.tsv"));

    // validation error: ragged matrix
    let bad = tmp.path().join("bad.tsv");
    fs::write(&bad, "feature\tctrl_1\tctrl_2\ng1\t1\t2\ng2\t3\n").unwrap();
    let ragged = bin()
        .arg("run")
        .arg("--matrix")
        .arg(&bad)
        .arg("--meta")
        .arg(data.join("meta.tsv"))
        .output()
        .unwrap();
    assert_eq!(ragged.status.code(), Some(2), "{}", stderr(&ragged));

    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn synth_subcommand_writes_loadable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, "n_features = 120\ninformative = 12\n\n[[groups]]\nlabel = \"X\"\ncompounds = [\"p\", \"q\"]\n").unwrap();
    let out = bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .args(["--seed", "4", "--out-dir"])
        .arg(tmp.path().join("d"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let (m, _) = load_matrix(&tmp.path().join("d/matrix.tsv"), Format::Tsv).unwrap();
    assert_eq!(m.n_features(), 120);
    assert_eq!(m.n_samples(), 2 + 4);
    assert!(tmp.path().join("d/truth.json").exists());
}

/// Frozen result of the exhaustive search on a planted 12-feature instance.
#[test]
fn oracle_golden_file() {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/oracle_f12_n4.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    golden_instance().write_to(tmp.path()).unwrap();
    let out = bin()
        .arg("oracle")
        .arg("--matrix")
        .arg(tmp.path().join("matrix.tsv"))
        .arg("--meta")
        .arg(tmp.path().join("meta.tsv"))
        .args(["--n", "4", "--alpha", "0.2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let got: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(got["evaluated_count"], 495);
    assert_eq!(got["best_subset"]["indices"], golden["best_subset"]["indices"]);
    let (a, b) = (got["best_u"].as_f64().unwrap(), golden["best_u"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

fn golden_instance() -> rnaselect::synth::SynthDataset {
    generate(&SynthSpec {
        n_features: 12,
        informative: 5,
        zero_fraction: 0.02,
        seed: 1000,
        ..SynthSpec::default()
    })
    .unwrap()
}

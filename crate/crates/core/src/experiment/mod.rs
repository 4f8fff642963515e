//! Experiment commands: data generation, training, comparison, weight grid
//! search, evaluation and dataset statistics. The CLI is a thin wrapper.

mod charts;
mod config;
mod report;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    dataset_stats, load_manifest, render_synthetic, stratified_split, Dataset, DatasetManifest,
    DatasetStats, Layout, ManifestEntry, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::labels::JointLabelSpace;
use crate::metrics::{joint_eval, MetricsReport};
use crate::models::{load_checkpoint, save_checkpoint, HeadKind, ModelParams, Predictor};
use crate::training::{
    grid_search_weights, init_models, run_repeats_from, transfer_init, Approach, BalanceWeights,
    GridTable, RepeatReport, Summary,
};

pub use charts::{grid_heatmap, grouped_bar_chart};
pub use config::{DatasetSource, ExperimentConfig, TransferConfig};
pub use report::{grid_csv, AggregateRow, Report, ReportRow, GRID_HEADER, REPORT_HEADER};

use report::write_file;

/// Result of [`cmd_generate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub samples: usize,
    /// True when byte-identical output already existed and nothing was written.
    pub up_to_date: bool,
    pub stats: DatasetStats,
}

/// Render a synthetic dataset into `out` (pair-directory layout) together with
/// `manifest.csv` and `stats.json`.
pub fn cmd_generate(spec: &SyntheticSpec, out: &Path) -> Result<GenerateOutcome> {
    spec.validate()?;
    let images = render_synthetic(spec)?;
    let manifest = DatasetManifest::new(
        images
            .iter()
            .map(|img| ManifestEntry {
                path: out.join(&img.rel_path),
                species: img.species.clone(),
                disease: img.disease.clone(),
            })
            .collect(),
    );
    let stats = dataset_stats(&manifest)?;
    let stats_json =
        serde_json::to_string_pretty(&stats).map_err(|e| Error::Dataset(e.to_string()))? + "\n";
    let manifest_path = out.join("manifest.csv");
    let stats_path = out.join("stats.json");
    let mut manifest_csv = String::from("path,species,disease\n");
    for img in &images {
        manifest_csv.push_str(&format!(
            "{},{},{}\n",
            img.rel_path.to_string_lossy(),
            img.species,
            img.disease
        ));
    }
    let same = |path: &Path, bytes: &[u8]| fs::read(path).map(|b| b == bytes).unwrap_or(false);
    let up_to_date = same(&manifest_path, manifest_csv.as_bytes())
        && same(&stats_path, stats_json.as_bytes())
        && images
            .iter()
            .all(|img| same(&out.join(&img.rel_path), &img.png));
    if !up_to_date {
        for img in &images {
            write_file(&out.join(&img.rel_path), &img.png)?;
        }
        write_file(&manifest_path, manifest_csv.as_bytes())?;
        write_file(&stats_path, stats_json.as_bytes())?;
    }
    Ok(GenerateOutcome {
        samples: images.len(),
        up_to_date,
        stats,
    })
}

/// `Csv` for a file or a directory holding `manifest.csv`, otherwise `Pairdir`.
pub fn detect_layout(path: &Path) -> Layout {
    if path.is_file() || path.join("manifest.csv").is_file() {
        Layout::Csv
    } else {
        Layout::Pairdir
    }
}

pub fn cmd_stats(root: &Path, layout: Option<Layout>) -> Result<DatasetStats> {
    let manifest = load_manifest(root, layout.unwrap_or_else(|| detect_layout(root)))?;
    dataset_stats(&manifest)
}

/// The dataset, split and manifest an experiment runs on.
pub struct Prepared {
    pub data: Dataset,
    pub split: Split,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let manifest = match &cfg.dataset {
        DatasetSource::Directory { root, layout } => load_manifest(root, *layout)?,
        DatasetSource::Synthetic(spec) => {
            let dir = cfg.output.join("data");
            cmd_generate(spec, &dir)?;
            load_manifest(&dir, Layout::Csv)?
        }
    };
    let split = stratified_split(&manifest, &cfg.split)?;
    let data = Dataset::load(manifest, None, cfg.model.backbone.input_extent)?;
    Ok(Prepared { data, split })
}

fn run_arm(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    approach: Approach,
    weights: &BalanceWeights,
    source: Option<&ModelParams>,
) -> Result<RepeatReport> {
    let spaces = prep.data.spaces();
    let init = |seed: u64| -> Result<Vec<ModelParams>> {
        match source {
            None => init_models(approach, &cfg.model, spaces, seed),
            Some(src) => {
                let fresh = init_models(approach, &cfg.model, spaces, seed)?;
                fresh
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        transfer_init(
                            src,
                            &cfg.transfer.groups,
                            &cfg.transfer.freeze,
                            m.kind(),
                            &cfg.model,
                            spaces,
                            seed ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
                        )
                    })
                    .collect()
            }
        }
    };
    run_repeats_from(
        approach,
        &init,
        &cfg.train,
        weights,
        &prep.data,
        &prep.split,
    )
}

fn checkpoint_names(label: &str, seed: u64, kinds: &[HeadKind]) -> Vec<String> {
    let tag = label.replace('+', "_");
    if kinds.len() == 1 {
        vec![format!("{tag}_seed{seed}.ckpt")]
    } else {
        kinds
            .iter()
            .map(|k| format!("{tag}_seed{seed}_{}.ckpt", k.name()))
            .collect()
    }
}

fn save_run_checkpoints(dir: &Path, label: &str, rep: &RepeatReport) -> Result<()> {
    for run in &rep.runs {
        let kinds: Vec<HeadKind> = run.models.iter().map(ModelParams::kind).collect();
        for (model, name) in run
            .models
            .iter()
            .zip(checkpoint_names(label, run.seed, &kinds))
        {
            save_checkpoint(model, &dir.join("checkpoints").join(name))?;
        }
    }
    Ok(())
}

fn write_common(cfg: &ExperimentConfig, prep: &Prepared) -> Result<()> {
    let out = &cfg.output;
    write_file(&out.join("config.json"), (cfg.to_json() + "\n").as_bytes())?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    prep.data
        .manifest()
        .subset(&prep.split.test)
        .write_csv(&out.join("test_split.csv"), Some(out))
}

fn first_divergence(rep: &RepeatReport) -> Option<Error> {
    rep.failures
        .iter()
        .find_map(|f| f.divergence)
        .map(|(epoch, batch)| Error::Divergence { epoch, batch })
}

/// Repeated training of `cfg.approach`; optionally initialize from a checkpoint.
///
/// Writes `report.csv`, `aggregate.csv`, `report.json`, best checkpoints,
/// `test_split.csv` and the normalized `config.json` under `cfg.output`.
pub fn cmd_train(cfg: &ExperimentConfig, from: Option<&Path>) -> Result<Report> {
    cfg.validate()?;
    let source = from.map(load_checkpoint).transpose()?;
    let prep = prepare(cfg)?;
    write_common(cfg, &prep)?;
    let label = cfg.approach.name();
    let rep = run_arm(cfg, &prep, cfg.approach, &cfg.weights, source.as_ref())?;
    save_run_checkpoints(&cfg.output, label, &rep)?;
    let mut report = Report {
        rows: Vec::new(),
        aggregates: Vec::new(),
    };
    report.push(label, &rep);
    report.write(&cfg.output)?;
    if let Some(e) = first_divergence(&rep) {
        return Err(e);
    }
    if rep.runs.is_empty() {
        return Err(Error::Dataset(format!(
            "every run failed: {}",
            rep.failures.first().map_or("", |f| f.error.as_str())
        )));
    }
    Ok(report)
}

/// The five compared arms: label, approach, weights.
pub fn compare_arms(weights: &BalanceWeights) -> Vec<(&'static str, Approach, BalanceWeights)> {
    vec![
        (
            "multi_model",
            Approach::MultiModel,
            BalanceWeights::UNWEIGHTED,
        ),
        ("powerset", Approach::Powerset, BalanceWeights::UNWEIGHTED),
        (
            "multi_output",
            Approach::MultiOutput,
            BalanceWeights::UNWEIGHTED,
        ),
        ("gsmo", Approach::Gsmo, BalanceWeights::UNWEIGHTED),
        ("gsmo+weights", Approach::Gsmo, *weights),
    ]
}

/// Train every approach on the same split and seeds; write the combined
/// table and one grouped bar chart per target.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    write_common(cfg, &prep)?;
    let mut report = Report {
        rows: Vec::new(),
        aggregates: Vec::new(),
    };
    for (label, approach, weights) in compare_arms(&cfg.weights) {
        let rep = run_arm(cfg, &prep, approach, &weights, None).unwrap_or_else(|e| RepeatReport {
            approach,
            weights: (approach == Approach::Gsmo).then_some(weights),
            runs: Vec::new(),
            failures: vec![crate::training::RunFailure {
                seed: cfg.train.seed,
                error: e.to_string(),
                divergence: None,
            }],
            aggregate: Default::default(),
            epochs: Summary::default(),
        });
        save_run_checkpoints(&cfg.output, label, &rep)?;
        report.push(label, &rep);
    }
    report.write(&cfg.output)?;
    for (target, file) in [
        ("plant", "chart_plant.svg"),
        ("disease", "chart_disease.svg"),
        ("both", "chart_both.svg"),
    ] {
        let groups: Vec<(String, [Summary; 3])> = report
            .ranked_aggregates()
            .into_iter()
            .map(|a| {
                let m = &a.metrics;
                let bars = match target {
                    "plant" => [m.plant_acc, m.plant_f1, m.plant_fpr],
                    "disease" => [m.dis_acc, m.dis_f1, m.dis_fpr],
                    _ => [m.both_acc, m.both_f1, m.both_fpr],
                };
                (a.approach.clone(), bars)
            })
            .collect();
        let svg = grouped_bar_chart(
            &format!("{target}: test accuracy / macro-F1 / macro-FPR"),
            &groups,
        );
        write_file(&cfg.output.join(file), svg.as_bytes())?;
    }
    Ok(report)
}

/// Read a grid file: a JSON array of weight objects or `[b1, b2, d1, d2]` arrays.
pub fn load_grid(path: &Path) -> Result<Vec<BalanceWeights>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Named(BalanceWeights),
        Tuple([f32; 4]),
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let entries: Vec<Entry> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let grid: Vec<BalanceWeights> = entries
        .into_iter()
        .map(|e| match e {
            Entry::Named(w) => w,
            Entry::Tuple([a, b, c, d]) => BalanceWeights::new(a, b, c, d),
        })
        .collect();
    for w in &grid {
        w.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    if grid.is_empty() {
        return Err(Error::Config(format!(
            "{}: weight grid is empty",
            path.display()
        )));
    }
    Ok(grid)
}

/// Grid search over balance weights; writes `grid.csv`, `grid.json` and `heatmap.svg`.
pub fn cmd_gridsearch(cfg: &ExperimentConfig, grid: &[BalanceWeights]) -> Result<GridTable> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    write_common(cfg, &prep)?;
    let table = grid_search_weights(grid, &cfg.model, &cfg.train, &prep.data, &prep.split)?;
    write_file(&cfg.output.join("grid.csv"), grid_csv(&table)?.as_bytes())?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Dataset(e.to_string()))?;
    write_file(&cfg.output.join("grid.json"), json.as_bytes())?;
    write_file(
        &cfg.output.join("heatmap.svg"),
        grid_heatmap(&table).as_bytes(),
    )?;
    Ok(table)
}

fn check_labels(manifest: &DatasetManifest, spaces: &JointLabelSpace) -> Result<()> {
    let species: BTreeSet<&str> = manifest
        .entries()
        .iter()
        .map(|e| e.species.as_str())
        .collect();
    let diseases: BTreeSet<&str> = manifest
        .entries()
        .iter()
        .map(|e| e.disease.as_str())
        .collect();
    let extra_s: Vec<&str> = species
        .iter()
        .copied()
        .filter(|s| spaces.plant().ordinal(s).is_none())
        .collect();
    let extra_d: Vec<&str> = diseases
        .iter()
        .copied()
        .filter(|d| spaces.disease().ordinal(d).is_none())
        .collect();
    let missing_s: Vec<&str> = spaces
        .plant()
        .names()
        .iter()
        .map(String::as_str)
        .filter(|s| !species.contains(s))
        .collect();
    let missing_d: Vec<&str> = spaces
        .disease()
        .names()
        .iter()
        .map(String::as_str)
        .filter(|d| !diseases.contains(d))
        .collect();
    if !extra_s.is_empty() || !extra_d.is_empty() {
        return Err(Error::LabelMismatch(format!(
            "data has labels unknown to the checkpoint: species {extra_s:?}, diseases {extra_d:?}; \
             checkpoint labels missing from the data: species {missing_s:?}, diseases {missing_d:?}"
        )));
    }
    let extra_pairs: BTreeSet<(&str, &str)> = manifest
        .entries()
        .iter()
        .filter(|e| spaces.join_names(&e.species, &e.disease).is_none())
        .map(|e| (e.species.as_str(), e.disease.as_str()))
        .collect();
    if !extra_pairs.is_empty() {
        return Err(Error::LabelMismatch(format!(
            "data has (species, disease) pairs unknown to the checkpoint: {extra_pairs:?}"
        )));
    }
    Ok(())
}

/// Per-sample predictions from [`cmd_eval`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub path: PathBuf,
    pub species: String,
    pub disease: String,
    pub pred_species: String,
    pub pred_disease: String,
}

/// Evaluate one checkpoint (or a single-plant + single-disease pair) on every sample under `data`.
pub fn cmd_eval(
    checkpoints: &[PathBuf],
    data: &Path,
    layout: Option<Layout>,
    batch_size: usize,
) -> Result<(MetricsReport, Vec<SamplePrediction>)> {
    let models = checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    if models.len() == 2 && models[0].spaces() != models[1].spaces() {
        return Err(Error::LabelMismatch(
            "the two checkpoints have different label spaces".into(),
        ));
    }
    let predictor = Predictor::new(models)?;
    let manifest = load_manifest(data, layout.unwrap_or_else(|| detect_layout(data)))?;
    check_labels(&manifest, predictor.spaces())?;
    let dataset = Dataset::load(
        manifest,
        Some(predictor.spaces().clone()),
        predictor.extent(),
    )?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut preds = Vec::with_capacity(all.len());
    for batch in dataset.ordered_batches(&all, batch_size) {
        preds.extend(predictor.predict(&batch?.images)?);
    }
    let truth: Vec<(usize, usize)> = dataset
        .plant_labels()
        .iter()
        .copied()
        .zip(dataset.disease_labels().iter().copied())
        .collect();
    let report = joint_eval(&truth, &preds, predictor.spaces())?;
    let spaces = predictor.spaces();
    let samples = dataset
        .manifest()
        .entries()
        .iter()
        .zip(&preds)
        .map(|(e, &(p, d))| SamplePrediction {
            path: e.path.clone(),
            species: e.species.clone(),
            disease: e.disease.clone(),
            pred_species: spaces.plant().name(p).unwrap_or_default().to_owned(),
            pred_disease: spaces.disease().name(d).unwrap_or_default().to_owned(),
        })
        .collect();
    Ok((report, samples))
}

pub fn write_predictions(path: &Path, samples: &[SamplePrediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in samples {
        w.serialize(s)
            .map_err(|e| Error::Dataset(format!("writing predictions: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Dataset(format!("writing predictions: {e}")))?;
    write_file(path, &bytes)
}

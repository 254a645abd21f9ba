//! The experiment stages. Every stage reads its inputs from and writes its
//! outputs to the experiment directory, so each can be rerun on its own.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use arob_core::atlas::RegionAtlas;
use arob_core::attribution::{attribute_testset, Group, Method};
use arob_core::data::{split_subjectwise, ClassLabel, DatasetSplit, SubjectRecord, VolumeSample};
use arob_core::io::checkpoint::{self, CheckpointMeta};
use arob_core::io::container::{self, Sidecar, VolumeData};
use arob_core::io::{nifti, pgm, write_atomic};
use arob_core::phantom::generate_cohort;
use arob_core::robustness::{build_report, mean_heatmap, CoherenceReport, RunSet};
use arob_core::train::{train_once, AccuracySummary, EpochMetrics, Prediction, RunResult};
use arob_core::{Error, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{parse_run_name, Layout};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Core(Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn reset_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub label: ClassLabel,
    pub timepoints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub shape: [usize; 3],
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub subjects: usize,
    pub samples: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
}

/// Generate the phantom cohort, its atlas and the subject-wise split.
pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<GenSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let (cohort, atlas) = generate_cohort(&cfg.phantom)?;
    let split = split_subjectwise(
        &cohort,
        cfg.split.test_per_class,
        cfg.split.val_per_class,
        cfg.split.seed,
    )?;
    reset_dir(&layout.data().join("volumes"))?;
    for subject in &cohort {
        for s in &subject.timepoints {
            let meta = Sidecar {
                kind: Some("volume".into()),
                subject: Some(s.subject_id.clone()),
                timepoint: Some(s.timepoint),
                label: Some(s.label),
                axes: Some(s.axes),
                ..Default::default()
            };
            container::write_tensor(&layout.volume(&s.key()), &s.volume, Some(&meta))?;
        }
    }
    let atlas_meta = Sidecar {
        kind: Some("atlas".into()),
        ..Default::default()
    };
    container::write_container(
        &layout.atlas_labels(),
        &atlas.label_volume(),
        Some(&atlas_meta),
    )?;
    write_text(&layout.atlas_table(), &atlas.table_text())?;
    let manifest = Manifest {
        shape: cfg.phantom.shape,
        subjects: cohort
            .iter()
            .map(|s| ManifestSubject {
                id: s.subject_id.clone(),
                label: s.label,
                timepoints: s.timepoints.len(),
            })
            .collect(),
    };
    write_json(&layout.manifest(), &manifest)?;
    let ids = SplitIds {
        train: split.train_ids.iter().cloned().collect(),
        validation: split.val_ids.iter().cloned().collect(),
        test: split.test_ids.iter().cloned().collect(),
    };
    write_json(&layout.split(), &ids)?;
    Ok(GenSummary {
        subjects: cohort.len(),
        samples: cohort.iter().map(|s| s.timepoints.len()).sum(),
        train_samples: split.train.len(),
        validation_samples: split.validation.len(),
        test_samples: split.test.len(),
    })
}

/// Read the cohort and split written by [`gen_data`].
pub fn load_data(layout: &Layout) -> CliResult<DatasetSplit> {
    let manifest: Manifest = read_json(&layout.manifest())?;
    let ids: SplitIds = read_json(&layout.split())?;
    let mut cohort = Vec::with_capacity(manifest.subjects.len());
    for subject in &manifest.subjects {
        let timepoints = (0..subject.timepoints)
            .map(|t| {
                let key = format!("{}_t{t}", subject.id);
                let path = layout.volume(&key);
                let (data, meta) = container::read_container(&path)?;
                let volume = match data {
                    VolumeData::F32(v) => v,
                    VolumeData::I32 { .. } => {
                        return Err(Error::format(&path, "expected an f32 volume"))
                    }
                };
                let [d, h, w] = manifest.shape;
                if volume.shape() != [1, d, h, w] {
                    return Err(Error::ShapeMismatch {
                        left: volume.shape().to_vec(),
                        right: vec![1, d, h, w],
                    });
                }
                Ok(VolumeSample {
                    volume,
                    subject_id: subject.id.clone(),
                    timepoint: t,
                    label: subject.label,
                    axes: meta.and_then(|m| m.axes).unwrap_or_default(),
                })
            })
            .collect::<arob_core::Result<Vec<_>>>()?;
        cohort.push(SubjectRecord {
            subject_id: subject.id.clone(),
            label: subject.label,
            timepoints,
        });
    }
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    Ok(DatasetSplit::from_ids(
        &cohort,
        set(&ids.train),
        set(&ids.validation),
        set(&ids.test),
    )?)
}

/// Per-run record persisted next to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
    pub predictions: Vec<Prediction>,
    pub balanced_accuracy: Option<f64>,
    pub failure: Option<String>,
}

impl RunRecord {
    fn from_result(r: &RunResult) -> Self {
        RunRecord {
            run: r.run,
            seed: r.seed,
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss.is_finite().then_some(r.best_val_loss),
            epochs: r.epochs.clone(),
            predictions: r.predictions.clone(),
            balanced_accuracy: r.balanced_accuracy,
            failure: r.failure.clone(),
        }
    }

    fn into_result(self, network: Option<arob_core::nn::Network>) -> RunResult {
        RunResult {
            run: self.run,
            seed: self.seed,
            network,
            epochs: self.epochs,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss.unwrap_or(f64::INFINITY),
            predictions: self.predictions,
            balanced_accuracy: self.balanced_accuracy,
            failure: self.failure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: Vec<usize>,
    pub accuracy: Option<AccuracySummary>,
    pub failed: Vec<usize>,
}

fn epoch_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_balanced_accuracy\n");
    for e in epochs {
        let ba = e
            .val_balanced_accuracy
            .map(|b| format!("{b:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{ba}\n",
            e.epoch, e.train_loss, e.val_loss
        ));
    }
    out
}

fn predictions_csv(preds: &[Prediction]) -> String {
    let mut out = String::from("subject,timepoint,label,predicted\n");
    for p in preds {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.subject_id, p.timepoint, p.label, p.predicted
        ));
    }
    out
}

/// Train `runs` repetitions (default: the configured count), each from seed
/// `base_seed + i`. Failed runs are recorded and do not stop the others.
pub fn train(cfg: &ExperimentConfig, runs: Option<usize>) -> CliResult<TrainSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let split = load_data(&layout)?;
    let count = runs.unwrap_or(cfg.train.repetitions);
    if count == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    reset_dir(&layout.runs())?;
    let mut results = Vec::with_capacity(count);
    for i in 0..count {
        let seed = cfg.train.base_seed.wrapping_add(i as u64);
        log::info!("training run {i} (seed {seed})");
        let result = train_once(&split, &cfg.network, &cfg.train, seed, i)?;
        fs::create_dir_all(layout.run_dir(i)).map_err(|e| io_err(&layout.run_dir(i), e))?;
        if let Some(net) = &result.network {
            let meta = CheckpointMeta {
                run: i,
                seed,
                best_epoch: result.best_epoch,
                epochs_run: result.epochs.len(),
                best_val_loss: result.best_val_loss,
            };
            checkpoint::write_checkpoint(&layout.checkpoint(i), net, &meta)?;
        }
        write_json(&layout.run_record(i), &RunRecord::from_result(&result))?;
        write_text(&layout.run_metrics(i), &epoch_csv(&result.epochs))?;
        write_text(
            &layout.run_predictions(i),
            &predictions_csv(&result.predictions),
        )?;
        results.push(result);
    }
    let mut table = String::from("run,seed,best_epoch,epochs,balanced_accuracy,status\n");
    for r in &results {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.run,
            r.seed,
            r.best_epoch,
            r.epochs.len(),
            r.balanced_accuracy
                .map(|b| format!("{b:.6}"))
                .unwrap_or_default(),
            if r.failed() { "failed" } else { "ok" }
        ));
    }
    write_text(&layout.runs_metrics(), &table)?;
    let summary = TrainSummary {
        runs: results.iter().map(|r| r.run).collect(),
        accuracy: AccuracySummary::from_runs(&results).ok(),
        failed: results
            .iter()
            .filter(|r| r.failed())
            .map(|r| r.run)
            .collect(),
    };
    write_json(&layout.runs_summary(), &summary)?;
    Ok(summary)
}

/// Indices of `run_NN` entries under `dir`, ascending, optionally capped.
fn discover_runs(dir: &Path, limit: Option<usize>) -> CliResult<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut runs: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| parse_run_name(&e.file_name().to_string_lossy()))
        .filter(|&r| limit.is_none_or(|n| r < n))
        .collect();
    runs.sort_unstable();
    runs.dedup();
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub files: usize,
    /// `(run, method, group, count)`
    pub counts: Vec<(usize, Method, Group, usize)>,
}

/// Heatmaps for every correctly classified test sample of each group.
pub fn attribute(
    cfg: &ExperimentConfig,
    runs: Option<usize>,
    methods: &[Method],
    groups: &[Group],
) -> CliResult<AttributeSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let split = load_data(&layout)?;
    let mut summary = AttributeSummary {
        files: 0,
        counts: Vec::new(),
    };
    for run in discover_runs(&layout.runs(), runs)? {
        let record: RunRecord = read_json(&layout.run_record(run))?;
        if record.failure.is_some() {
            log::warn!("skipping failed run {run}");
            continue;
        }
        let (net, _) = checkpoint::read_checkpoint(&layout.checkpoint(run))?;
        let result = record.into_result(Some(net));
        for &method in methods {
            for &group in groups {
                let dir = layout.heatmap_dir(run, method, group);
                reset_dir(&dir)?;
                let maps =
                    attribute_testset(&result, &split.test, method, group, &cfg.attribution)?;
                for h in &maps {
                    let meta = Sidecar {
                        kind: Some("heatmap".into()),
                        method: Some(method.tag().into()),
                        run: Some(run),
                        subject: Some(h.subject_id.clone()),
                        timepoint: Some(h.timepoint),
                        group: Some(group.tag().into()),
                        target_class: Some(h.target),
                        label: Some(group.class()),
                        ..Default::default()
                    };
                    let path = dir.join(format!("{}_t{}.arob", h.subject_id, h.timepoint));
                    container::write_tensor(&path, &h.values, Some(&meta))?;
                }
                log::info!("run {run} {method}/{group}: {} heatmaps", maps.len());
                summary.files += maps.len();
                summary.counts.push((run, method, group, maps.len()));
            }
        }
    }
    Ok(summary)
}

/// The configured atlas override, or the generated phantom atlas.
pub fn load_atlas(cfg: &ExperimentConfig) -> CliResult<RegionAtlas> {
    let layout = Layout::new(&cfg.output_dir);
    let (labels, table) = match (&cfg.atlas.labels, &cfg.atlas.table) {
        (Some(l), Some(t)) => (l.clone(), t.clone()),
        _ => (layout.atlas_labels(), layout.atlas_table()),
    };
    Ok(RegionAtlas::load(&labels, &table)?)
}

fn heatmap_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "arob"))
        .collect();
    files.sort();
    Ok(files)
}

fn write_report_artifacts(
    layout: &Layout,
    report: &CoherenceReport,
    atlas: &RegionAtlas,
    runset: &RunSet,
    methods: &[Method],
) -> CliResult<()> {
    for m in &report.matrices {
        write_text(&layout.matrix(m.method, &m.statistic), &m.matrix.to_csv())?;
    }
    for &method in methods {
        for run in runset.all_runs() {
            if let Some(t) = runset.region_table(method, run, atlas)? {
                write_text(&layout.region_table(run, method), &t.to_csv())?;
            }
        }
    }
    Ok(())
}

/// Average the persisted heatmaps per run, method and group, then derive
/// region tables and pairwise matrices.
pub fn evaluate(
    cfg: &ExperimentConfig,
    runs: Option<usize>,
    methods: &[Method],
    top_k: usize,
) -> CliResult<CoherenceReport> {
    let layout = Layout::new(&cfg.output_dir);
    let atlas = load_atlas(cfg)?;
    reset_dir(&layout.eval())?;
    let mut runset = RunSet::new();
    for run in discover_runs(&layout.heatmaps(), runs)? {
        for &method in methods {
            for group in Group::ALL {
                let files = heatmap_files(&layout.heatmap_dir(run, method, group))?;
                if files.is_empty() {
                    log::warn!("run {run} {method}/{group}: no heatmaps");
                    continue;
                }
                let maps = files
                    .iter()
                    .map(|p| container::read_tensor(p))
                    .collect::<arob_core::Result<Vec<Tensor>>>()?;
                let refs: Vec<&Tensor> = maps.iter().collect();
                let mean = mean_heatmap(&refs)?;
                let meta = Sidecar {
                    kind: Some("mean-heatmap".into()),
                    method: Some(method.tag().into()),
                    run: Some(run),
                    group: Some(group.tag().into()),
                    ..Default::default()
                };
                container::write_tensor(&layout.mean_map(run, method, group), &mean, Some(&meta))?;
                runset.insert(method, group, run, mean)?;
            }
        }
    }
    let report = build_report(
        &runset,
        &atlas,
        methods,
        top_k,
        None,
        Some(cfg.focus_region()),
    )?;
    write_report_artifacts(&layout, &report, &atlas, &runset, methods)?;
    write_json(&layout.coherence(), &report)?;
    Ok(report)
}

fn load_means(layout: &Layout, methods: &[Method]) -> CliResult<RunSet> {
    let dir = layout.eval().join("means");
    let mut runset = RunSet::new();
    for path in heatmap_files(&dir)? {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parts: Vec<&str> = name.split('_').collect();
        let parsed = match parts.as_slice() {
            ["run", r, m, g] => r
                .parse::<usize>()
                .ok()
                .zip(m.parse::<Method>().ok())
                .zip(g.parse::<Group>().ok()),
            _ => None,
        };
        let Some(((run, method), group)) = parsed else {
            log::warn!("ignoring unexpected file {}", path.display());
            continue;
        };
        if methods.contains(&method) {
            runset.insert(method, group, run, container::read_tensor(&path)?)?;
        }
    }
    Ok(runset)
}

/// Final table from the persisted mean maps and training summary.
pub fn report(
    cfg: &ExperimentConfig,
    methods: &[Method],
    top_k: usize,
) -> CliResult<CoherenceReport> {
    let layout = Layout::new(&cfg.output_dir);
    let atlas = load_atlas(cfg)?;
    let runset = load_means(&layout, methods)?;
    let accuracy = if layout.runs_summary().exists() {
        read_json::<TrainSummary>(&layout.runs_summary())?.accuracy
    } else {
        None
    };
    let report = build_report(
        &runset,
        &atlas,
        methods,
        top_k,
        accuracy,
        Some(cfg.focus_region()),
    )?;
    write_text(&layout.report_csv(), &report.to_csv())?;
    write_json(&layout.report_json(), &report)?;
    Ok(report)
}

/// Write sagittal, coronal and axial mid-plane PGMs of a container or NIfTI file.
pub fn slice(
    input: &Path,
    out_dir: Option<&Path>,
    signed: Option<bool>,
) -> CliResult<Vec<PathBuf>> {
    let (volume, meta) = if nifti::looks_like_nifti(input)? {
        (nifti::read_nifti(input)?.to_f32(), None)
    } else {
        let (v, m) = container::read_container(input)?;
        (v.to_f32(), m)
    };
    let signed = signed.unwrap_or_else(|| {
        meta.as_ref()
            .and_then(|m| m.kind.as_deref())
            .is_some_and(|k| k.contains("heatmap"))
            || volume.data().iter().any(|&v| v < 0.0)
    });
    let shading = if signed {
        pgm::Shading::Signed
    } else {
        pgm::Shading::Intensity
    };
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let mut written = Vec::new();
    for (name, rows, cols, values) in pgm::mid_planes(&volume)? {
        let path = dir.join(format!("{stem}_{name}.pgm"));
        pgm::write_pgm(&path, &pgm::shade(&values, rows, cols, shading))?;
        written.push(path);
    }
    Ok(written)
}

/// Convert between the container and NIfTI-1; the direction follows the
/// output extension (`.nii` writes NIfTI).
pub fn convert(input: &Path, output: &Path) -> CliResult<()> {
    let data = if nifti::looks_like_nifti(input)? {
        nifti::read_nifti(input)?
    } else {
        container::read_container(input)?.0
    };
    let data = match data {
        VolumeData::F32(t) if t.rank() == 4 && t.shape()[0] == 1 => {
            let shape = t.shape()[1..].to_vec();
            VolumeData::F32(t.reshape(&shape)?)
        }
        other => other,
    };
    if output.extension().is_some_and(|e| e == "nii") {
        nifti::write_nifti(output, &data)?;
    } else {
        container::write_container(output, &data, None)?;
    }
    Ok(())
}

/// gen-data, train, attribute (all methods, both groups), evaluate, report.
pub fn run_all(cfg: &ExperimentConfig, runs: Option<usize>) -> CliResult<CoherenceReport> {
    gen_data(cfg)?;
    let summary = train(cfg, runs)?;
    if summary.runs.len() == summary.failed.len() {
        return Err(CliError::RunFailure("every training run failed".into()));
    }
    attribute(cfg, None, &Method::ALL, &Group::ALL)?;
    evaluate(cfg, None, &Method::ALL, cfg.evaluation.top_k)?;
    report(cfg, &Method::ALL, cfg.evaluation.top_k)
}

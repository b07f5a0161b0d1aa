//! Corpus-level evaluation and the flag-and-reacquire feedback loop.
//!
//! The core functions work on lookup tables keyed by `(patient_id, tag)` so
//! the same code scores reference oracles, external model outputs and
//! in-memory simulations. The `*_manifest` drivers stream sweeps from disk one
//! at a time.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bswp;
use crate::downstream::{self, OracleConfig, SweepPredictions, Task, TaskLabel, TaskPrediction};
use crate::error::{Error, Result};
use crate::manifest::{self, sweep_key_label, Manifest, SweepKey};
use crate::metrics::{aggregate_patient, ConfusionMatrix, Metrics};
use crate::par::{self, Exec};
use crate::perturb::{self, MixtureSpec, Perturbation, PerturbationPlan, TruncationRange};
use crate::qa::{self, check_coverage, Detections, DetectorReport, QaConfig};
use crate::sweep::{PlacentaLabel, PresentationLabel, Split};
use crate::synthgen::{self, GenParams};

/// Ground truth for one test sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTruth {
    pub key: SweepKey,
    pub presentation: PresentationLabel,
    pub placenta: PlacentaLabel,
    pub plan: Option<PerturbationPlan>,
}

impl SweepTruth {
    pub fn label(&self, task: Task) -> TaskLabel {
        match task {
            Task::SweepTags => TaskLabel::Tag(self.key.1),
            Task::Presentation => TaskLabel::Presentation(self.presentation),
            Task::Placenta => TaskLabel::Placenta(self.placenta),
        }
    }

    pub fn plan(&self) -> PerturbationPlan {
        self.plan.unwrap_or_default()
    }
}

/// Test-split truths in manifest order.
pub fn truths_from_manifest(m: &Manifest) -> Vec<SweepTruth> {
    m.split_entries(Split::Test)
        .flat_map(|e| {
            e.sweeps.iter().map(|s| SweepTruth {
                key: (e.patient_id.clone(), s.tag),
                presentation: e.presentation,
                placenta: e.placenta,
                plan: s.perturbation,
            })
        })
        .collect()
}

pub type PredictionTable = HashMap<SweepKey, SweepPredictions>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: Task,
    pub sweep: Metrics,
    pub patient: Option<Metrics>,
    pub post_sweep: Option<Metrics>,
    pub post_patient: Option<Metrics>,
    pub delta_sweep: Option<Metrics>,
    pub delta_patient: Option<Metrics>,
}

impl TaskRow {
    fn pre(task: Task, sweep: Metrics, patient: Option<Metrics>) -> Self {
        Self {
            task,
            sweep,
            patient,
            post_sweep: None,
            post_patient: None,
            delta_sweep: None,
            delta_patient: None,
        }
    }

    fn with_post(mut self, post_sweep: Metrics, post_patient: Option<Metrics>) -> Self {
        self.delta_sweep = Some(post_sweep.minus(&self.sweep));
        self.delta_patient = post_patient.zip(self.patient).map(|(post, pre)| post.minus(&pre));
        self.post_sweep = Some(post_sweep);
        self.post_patient = post_patient;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub perturbation: Perturbation,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub mixture: Option<MixtureSpec>,
    pub n_patients: usize,
    pub n_sweeps: usize,
    pub detector_source: Option<String>,
    pub prediction_source: Option<String>,
    /// Sweeps replaced by their clean version in the feedback loop.
    pub reacquired: Option<usize>,
    /// Effective run configuration, echoed for provenance.
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub tasks: Vec<TaskRow>,
    pub detectors: Vec<DetectorRow>,
}

impl EvalReport {
    pub fn is_loop(&self) -> bool {
        self.tasks.iter().any(|t| t.post_sweep.is_some())
    }

    pub fn task(&self, task: Task) -> Option<&TaskRow> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn detector(&self, p: Perturbation) -> Option<&DetectorRow> {
        self.detectors.iter().find(|d| d.perturbation == p)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

fn patient_count(truths: &[SweepTruth]) -> usize {
    let mut ids: Vec<&str> = truths.iter().map(|t| t.key.0.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

fn require<'a, V>(map: &'a HashMap<SweepKey, V>, key: &SweepKey) -> Result<&'a V> {
    map.get(key).ok_or_else(|| Error::Coverage {
        missing: vec![sweep_key_label(key)],
    })
}

fn label_names(task: Task) -> Vec<String> {
    task.labels().iter().map(|l| l.as_str().to_owned()).collect()
}

/// Sweep-level and (where defined) patient-level metrics for one task.
pub fn task_metrics(
    truths: &[SweepTruth],
    lookup: impl Fn(&SweepKey) -> Result<TaskPrediction>,
    task: Task,
) -> Result<(Metrics, Option<Metrics>)> {
    let mut sweep_cm = ConfusionMatrix::new(label_names(task));
    let mut per_patient: BTreeMap<&str, (TaskLabel, Vec<TaskPrediction>)> = BTreeMap::new();
    for t in truths {
        let pred = lookup(&t.key)?;
        if pred.task() != task {
            return Err(Error::Validation(format!(
                "{} prediction supplied for {task}",
                pred.task()
            )));
        }
        let truth = t.label(task);
        sweep_cm.record(truth.ordinal(), pred.label.ordinal());
        per_patient
            .entry(t.key.0.as_str())
            .or_insert_with(|| (truth, Vec::new()))
            .1
            .push(pred);
    }
    let sweep = Metrics::of(&sweep_cm)?;
    if !task.has_patient_level() {
        return Ok((sweep, None));
    }
    let mut patient_cm = ConfusionMatrix::new(label_names(task));
    for (truth, preds) in per_patient.values() {
        let agg = aggregate_patient(preds)?;
        patient_cm.record(truth.ordinal(), agg.label.ordinal());
    }
    Ok((sweep, Some(Metrics::of(&patient_cm)?)))
}

/// Downstream metrics of `preds` against test-split truth.
pub fn evaluate_corpus(truths: &[SweepTruth], preds: &PredictionTable, tasks: &[Task]) -> Result<Vec<TaskRow>> {
    check_coverage(preds, &truths.iter().map(|t| t.key.clone()).collect::<Vec<_>>())?;
    tasks
        .iter()
        .map(|&task| {
            let (sweep, patient) = task_metrics(truths, |k| Ok(require(preds, k)?[task.index()]), task)?;
            Ok(TaskRow::pre(task, sweep, patient))
        })
        .collect()
}

/// Detection metrics: each detector's flag against plan membership.
pub fn evaluate_detectors(truths: &[SweepTruth], detections: &Detections) -> Result<Vec<DetectorRow>> {
    check_coverage(detections, &truths.iter().map(|t| t.key.clone()).collect::<Vec<_>>())?;
    Perturbation::ALL
        .iter()
        .map(|&p| {
            let mut cm = ConfusionMatrix::new(vec!["absent".into(), "present".into()]);
            for t in truths {
                let flagged = require(detections, &t.key)?.flag(p);
                cm.record(t.plan().has(p) as usize, flagged as usize);
            }
            Ok(DetectorRow {
                perturbation: p,
                metrics: Metrics::of(&cm)?,
            })
        })
        .collect()
}

/// Feedback loop over precomputed predictions.
///
/// A sweep with any detector flag is reacquired: its prediction is taken from
/// `clean` instead of `perturbed`. Returns task rows with pre, post and delta
/// values, and the number of reacquired sweeps.
pub fn feedback_loop_tables(
    truths: &[SweepTruth],
    perturbed: &PredictionTable,
    clean: &PredictionTable,
    detections: &Detections,
    tasks: &[Task],
) -> Result<(Vec<TaskRow>, usize)> {
    let keys: Vec<SweepKey> = truths.iter().map(|t| t.key.clone()).collect();
    check_coverage(detections, &keys)?;
    let mut reacquired = 0;
    let post = keys
        .iter()
        .map(|k| {
            let src = if require(detections, k)?.any_flag() {
                reacquired += 1;
                clean
            } else {
                perturbed
            };
            Ok((k.clone(), *require(src, k)?))
        })
        .collect::<Result<PredictionTable>>()?;
    Ok((compare_tables(truths, perturbed, &post, tasks)?, reacquired))
}

/// Task rows scoring `pre` and `post` predictions on the same truths.
pub fn compare_tables(
    truths: &[SweepTruth],
    pre: &PredictionTable,
    post: &PredictionTable,
    tasks: &[Task],
) -> Result<Vec<TaskRow>> {
    evaluate_corpus(truths, pre, tasks)?
        .into_iter()
        .map(|row| {
            let task = row.task;
            let (s, p) = task_metrics(truths, |k| Ok(require(post, k)?[task.index()]), task)?;
            Ok(row.with_post(s, p))
        })
        .collect()
}

/// Where QA flags come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DetectorSource {
    Reference(QaConfig),
    /// Flags equal ground-truth plan membership.
    Perfect,
    Never,
    External {
        path: PathBuf,
        thresholds: [f64; 3],
    },
}

impl DetectorSource {
    pub fn describe(&self) -> String {
        match self {
            DetectorSource::Reference(_) => "reference".into(),
            DetectorSource::Perfect => "perfect".into(),
            DetectorSource::Never => "never".into(),
            DetectorSource::External { path, .. } => format!("external:{}", path.display()),
        }
    }
}

/// Where downstream predictions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionSource {
    Reference(OracleConfig),
    /// JSONL predictions on the perturbed corpus and, for the feedback loop,
    /// on the clean corpus.
    External {
        perturbed: PathBuf,
        clean: Option<PathBuf>,
    },
}

impl PredictionSource {
    pub fn describe(&self) -> String {
        match self {
            PredictionSource::Reference(_) => "reference".into(),
            PredictionSource::External { perturbed, .. } => {
                format!("external:{}", perturbed.display())
            }
        }
    }
}

/// A manifest together with the directory its relative paths resolve from.
#[derive(Clone, Copy, Debug)]
pub struct Corpus<'a> {
    pub manifest: &'a Manifest,
    pub base: &'a Path,
}

impl Corpus<'_> {
    fn test_paths(&self) -> Vec<(SweepKey, PathBuf)> {
        self.manifest
            .split_entries(Split::Test)
            .flat_map(|e| {
                e.sweeps
                    .iter()
                    .map(|s| ((e.patient_id.clone(), s.tag), manifest::resolve(self.base, &s.path)))
            })
            .collect()
    }
}

fn predict_paths(paths: &[(SweepKey, PathBuf)], cfg: &OracleConfig, exec: Exec) -> Result<PredictionTable> {
    let preds = par::try_map(exec, paths, |(key, path)| {
        let sweep = bswp::read_sweep(path)?;
        Ok((key.clone(), downstream::oracle_predict(&sweep, cfg)))
    })?;
    Ok(preds.into_iter().collect())
}

/// Run the reference oracles on every test sweep of a corpus.
pub fn predict_manifest(corpus: Corpus<'_>, cfg: &OracleConfig, exec: Exec) -> Result<PredictionTable> {
    predict_paths(&corpus.test_paths(), cfg, exec)
}

/// Run the reference detectors on every test sweep of a corpus.
pub fn detect_manifest(corpus: Corpus<'_>, cfg: &QaConfig, exec: Exec) -> Result<Detections> {
    let paths = corpus.test_paths();
    let reports = par::try_map(exec, &paths, |(key, path)| {
        let sweep = bswp::read_sweep(path)?;
        Ok((key.clone(), qa::run_detectors(&sweep, cfg)))
    })?;
    Ok(reports.into_iter().collect())
}

pub fn load_detections(source: &DetectorSource, perturbed: Corpus<'_>, exec: Exec) -> Result<Detections> {
    let truths = truths_from_manifest(perturbed.manifest);
    let keys: Vec<SweepKey> = truths.iter().map(|t| t.key.clone()).collect();
    match source {
        DetectorSource::Reference(cfg) => detect_manifest(perturbed, cfg, exec),
        DetectorSource::Perfect => Ok(truths
            .iter()
            .map(|t| (t.key.clone(), DetectorReport::from_truth(&t.plan())))
            .collect()),
        DetectorSource::Never => Ok(keys.into_iter().map(|k| (k, DetectorReport::never())).collect()),
        DetectorSource::External { path, thresholds } => qa::load_external_detections(path, *thresholds, &keys),
    }
}

fn load_prediction_file(path: &Path, keys: &[SweepKey]) -> Result<PredictionTable> {
    let per_task = Task::ALL
        .iter()
        .map(|&t| downstream::load_external_predictions(path, t, keys))
        .collect::<Result<Vec<_>>>()?;
    Ok(keys
        .iter()
        .map(|k| (k.clone(), [per_task[0][k], per_task[1][k], per_task[2][k]]))
        .collect())
}

pub fn load_predictions(source: &PredictionSource, corpus: Corpus<'_>, exec: Exec) -> Result<PredictionTable> {
    match source {
        PredictionSource::Reference(cfg) => predict_manifest(corpus, cfg, exec),
        PredictionSource::External { perturbed, .. } => load_prediction_file(perturbed, &corpus.manifest.test_keys()),
    }
}

/// Downstream report for one corpus, plus detector metrics when a source is given.
pub fn evaluate_manifest(
    corpus: Corpus<'_>,
    predictions: &PredictionSource,
    detections: Option<&DetectorSource>,
    tasks: &[Task],
    exec: Exec,
) -> Result<EvalReport> {
    let truths = truths_from_manifest(corpus.manifest);
    if truths.is_empty() {
        return Err(Error::Validation("manifest has no test sweeps".into()));
    }
    let preds = load_predictions(predictions, corpus, exec)?;
    let rows = evaluate_corpus(&truths, &preds, tasks)?;
    let detectors = match detections {
        Some(src) => {
            if truths.iter().any(|t| t.plan.is_none()) {
                return Err(Error::Validation(
                    "detector evaluation needs perturbation ground truth on every test sweep".into(),
                ));
            }
            evaluate_detectors(&truths, &load_detections(src, corpus, exec)?)?
        }
        None => Vec::new(),
    };
    Ok(EvalReport {
        meta: ReportMeta {
            seed: corpus.manifest.seed,
            mixture: corpus.manifest.mixture,
            n_patients: patient_count(&truths),
            n_sweeps: truths.len(),
            detector_source: detections.map(DetectorSource::describe),
            prediction_source: Some(predictions.describe()),
            ..ReportMeta::default()
        },
        tasks: rows,
        detectors,
    })
}

fn check_same_sweeps(clean: &Manifest, perturbed: &Manifest) -> Result<()> {
    let a = truths_from_manifest(clean);
    let b = truths_from_manifest(perturbed);
    if a.len() != b.len() {
        return Err(Error::ManifestMismatch(format!(
            "clean manifest has {} test sweeps, perturbed has {}",
            a.len(),
            b.len()
        )));
    }
    let index: HashMap<&SweepKey, &SweepTruth> = a.iter().map(|t| (&t.key, t)).collect();
    for t in &b {
        match index.get(&t.key) {
            None => {
                return Err(Error::ManifestMismatch(format!(
                    "{} is absent from the clean manifest",
                    sweep_key_label(&t.key)
                )))
            }
            Some(c) if (c.presentation, c.placenta) != (t.presentation, t.placenta) => {
                return Err(Error::ManifestMismatch(format!(
                    "labels of {} differ between manifests",
                    sweep_key_label(&t.key)
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Paths of the post-loop corpus: the clean file for every flagged sweep,
/// the perturbed file otherwise.
pub fn reacquired_paths(
    clean: Corpus<'_>,
    perturbed: Corpus<'_>,
    detections: &Detections,
) -> Result<Vec<(SweepKey, PathBuf)>> {
    let clean_paths: HashMap<SweepKey, PathBuf> = clean.test_paths().into_iter().collect();
    perturbed
        .test_paths()
        .into_iter()
        .map(|(key, path)| {
            let chosen = if require(detections, &key)?.any_flag() {
                require(&clean_paths, &key)?.clone()
            } else {
                path
            };
            Ok((key, chosen))
        })
        .collect()
}

/// File-based feedback loop: detect, substitute flagged sweeps with their
/// clean versions, re-run downstream predictions on the resulting corpus.
pub fn feedback_loop(
    clean: Corpus<'_>,
    perturbed: Corpus<'_>,
    detector_source: &DetectorSource,
    prediction_source: &PredictionSource,
    tasks: &[Task],
    exec: Exec,
) -> Result<EvalReport> {
    check_same_sweeps(clean.manifest, perturbed.manifest)?;
    let truths = truths_from_manifest(perturbed.manifest);
    if truths.is_empty() {
        return Err(Error::Validation("manifest has no test sweeps".into()));
    }
    let keys: Vec<SweepKey> = truths.iter().map(|t| t.key.clone()).collect();
    let detections = load_detections(detector_source, perturbed, exec)?;
    check_coverage(&detections, &keys)?;

    let (pre, post) = match prediction_source {
        PredictionSource::Reference(cfg) => {
            let pre = predict_manifest(perturbed, cfg, exec)?;
            let post = predict_paths(&reacquired_paths(clean, perturbed, &detections)?, cfg, exec)?;
            (pre, post)
        }
        PredictionSource::External {
            perturbed: p_path,
            clean: c_path,
        } => {
            let pre = load_prediction_file(p_path, &keys)?;
            let flagged: Vec<SweepKey> = keys.iter().filter(|k| detections[*k].any_flag()).cloned().collect();
            let clean_preds = match c_path {
                Some(c) => load_prediction_file(c, &flagged)?,
                None if flagged.is_empty() => PredictionTable::new(),
                None => {
                    return Err(Error::InvalidArgument(
                        "external predictions for the clean corpus are required when sweeps are reacquired".into(),
                    ))
                }
            };
            let post = keys
                .iter()
                .map(|k| {
                    let src = if detections[k].any_flag() { &clean_preds } else { &pre };
                    Ok((k.clone(), *require(src, k)?))
                })
                .collect::<Result<PredictionTable>>()?;
            (pre, post)
        }
    };

    let reacquired = keys.iter().filter(|k| detections[*k].any_flag()).count();
    let rows = compare_tables(&truths, &pre, &post, tasks)?;
    let truths_have_plans = truths.iter().all(|t| t.plan.is_some());
    let detectors = if truths_have_plans {
        evaluate_detectors(&truths, &detections)?
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        meta: ReportMeta {
            seed: perturbed.manifest.seed,
            mixture: perturbed.manifest.mixture,
            n_patients: patient_count(&truths),
            n_sweeps: truths.len(),
            detector_source: Some(detector_source.describe()),
            prediction_source: Some(prediction_source.describe()),
            reacquired: Some(reacquired),
            config: None,
        },
        tasks: rows,
        detectors,
    })
}

/// Everything the in-memory simulation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub gen: GenParams,
    pub mixture: MixtureSpec,
    pub ranges: TruncationRange,
    pub perturb_seed: u64,
    pub qa: QaConfig,
    pub oracle: OracleConfig,
}

/// Per-sweep results of the in-memory pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub truth: SweepTruth,
    pub clean_predictions: SweepPredictions,
    pub perturbed_predictions: SweepPredictions,
    /// Reference detectors on the perturbed sweep.
    pub detection: DetectorReport,
    /// Reference detectors on the clean sweep.
    pub clean_detection: DetectorReport,
}

/// Generate, perturb, detect and predict every sweep of one split without
/// touching the filesystem. Pixel data is dropped patient by patient.
pub fn simulate_split(cfg: &SimulationConfig, split: Split, exec: Exec) -> Result<Vec<SweepOutcome>> {
    cfg.gen.validate()?;
    cfg.mixture.validate()?;
    cfg.ranges.validate()?;
    cfg.qa.validate()?;
    let range = cfg.gen.split_range(split);
    let per_patient = par::try_map_range(exec, range, |i| {
        let study = synthgen::generate_patient(i, &cfg.gen);
        study
            .sweeps
            .iter()
            .map(|clean| {
                let plan = perturb::plan_for_sweep(
                    cfg.perturb_seed,
                    &study.patient_id,
                    clean.sweep_tag,
                    &cfg.mixture,
                    &cfg.ranges,
                );
                let perturbed = perturb::apply_plan(clean, &plan, &cfg.ranges)?;
                Ok(SweepOutcome {
                    truth: SweepTruth {
                        key: (study.patient_id.clone(), clean.sweep_tag),
                        presentation: study.presentation,
                        placenta: study.placenta,
                        plan: Some(plan),
                    },
                    clean_predictions: downstream::oracle_predict(clean, &cfg.oracle),
                    perturbed_predictions: downstream::oracle_predict(&perturbed, &cfg.oracle),
                    detection: qa::run_detectors(&perturbed, &cfg.qa),
                    clean_detection: qa::run_detectors(clean, &cfg.qa),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_patient.into_iter().flatten().collect())
}

/// Lookup tables derived from simulation outcomes.
pub struct OutcomeTables {
    pub truths: Vec<SweepTruth>,
    pub clean: PredictionTable,
    pub perturbed: PredictionTable,
    pub reference: Detections,
    pub perfect: Detections,
    pub never: Detections,
}

impl OutcomeTables {
    pub fn new(outcomes: &[SweepOutcome]) -> Self {
        let key = |o: &SweepOutcome| o.truth.key.clone();
        Self {
            truths: outcomes.iter().map(|o| o.truth.clone()).collect(),
            clean: outcomes.iter().map(|o| (key(o), o.clean_predictions)).collect(),
            perturbed: outcomes.iter().map(|o| (key(o), o.perturbed_predictions)).collect(),
            reference: outcomes.iter().map(|o| (key(o), o.detection)).collect(),
            perfect: outcomes
                .iter()
                .map(|o| (key(o), DetectorReport::from_truth(&o.truth.plan())))
                .collect(),
            never: outcomes.iter().map(|o| (key(o), DetectorReport::never())).collect(),
        }
    }
}

/// Patient id and tag of every sweep that a given set of flags would retake.
pub fn flagged_keys(detections: &Detections) -> Vec<SweepKey> {
    let mut keys: Vec<SweepKey> = detections
        .iter()
        .filter(|(_, r)| r.any_flag())
        .map(|(k, _)| k.clone())
        .collect();
    keys.sort();
    keys
}

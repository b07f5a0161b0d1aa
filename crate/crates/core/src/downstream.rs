//! Downstream tasks: sweep-tag, fetal-presentation and placenta-location
//! classification.
//!
//! The oracle decoders read the phantom structures back out of the pixels.
//! They are deliberately sensitive to acquisition errors in the same way the
//! clinical models are: the tag decoder reads stripe columns in frame
//! coordinates (a probe flip maps every tag to its mirror), and the label
//! decoders only look at mid-sweep frames (incomplete coverage starves them).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{sweep_key_label, SweepKey};
use crate::qa::check_coverage;
use crate::sweep::{PlacentaLabel, PresentationLabel, Sweep, SweepTag};
use crate::synthgen::{Layout, BLOB_CONTRAST};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SweepTags,
    Presentation,
    Placenta,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SweepTags, Task::Presentation, Task::Placenta];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SweepTags => "sweep_tags",
            Task::Presentation => "presentation",
            Task::Placenta => "placenta",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Task::SweepTags => "Sweep tags",
            Task::Presentation => "Fetal presentation",
            Task::Placenta => "Placenta location",
        }
    }

    pub fn labels(self) -> Vec<TaskLabel> {
        match self {
            Task::SweepTags => SweepTag::ALL.into_iter().map(TaskLabel::Tag).collect(),
            Task::Presentation => PresentationLabel::ALL
                .into_iter()
                .map(TaskLabel::Presentation)
                .collect(),
            Task::Placenta => PlacentaLabel::ALL.into_iter().map(TaskLabel::Placenta).collect(),
        }
    }

    /// Sweep-tag classification has no patient-level decision.
    pub fn has_patient_level(self) -> bool {
        self != Task::SweepTags
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskLabel {
    Tag(SweepTag),
    Presentation(PresentationLabel),
    Placenta(PlacentaLabel),
}

impl TaskLabel {
    pub fn task(self) -> Task {
        match self {
            TaskLabel::Tag(_) => Task::SweepTags,
            TaskLabel::Presentation(_) => Task::Presentation,
            TaskLabel::Placenta(_) => Task::Placenta,
        }
    }

    /// Position within the task's label set.
    pub fn ordinal(self) -> usize {
        match self {
            TaskLabel::Tag(t) => t.ordinal(),
            TaskLabel::Presentation(p) => p as usize,
            TaskLabel::Placenta(p) => p as usize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLabel::Tag(t) => t.as_str(),
            TaskLabel::Presentation(p) => p.as_str(),
            TaskLabel::Placenta(p) => p.as_str(),
        }
    }

    pub fn parse(task: Task, s: &str) -> Result<Self> {
        task.labels()
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown {task} label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskPrediction {
    pub label: TaskLabel,
    pub confidence: f64,
}

impl TaskPrediction {
    pub fn new(label: TaskLabel, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { label, confidence })
    }

    pub fn task(&self) -> Task {
        self.label.task()
    }
}

/// Predictions for all three tasks on one sweep, indexed by [`Task::index`].
pub type SweepPredictions = [TaskPrediction; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Label returned when blob evidence is too weak to decode.
    pub presentation_prior: PresentationLabel,
    pub placenta_prior: PlacentaLabel,
    /// Minimum blob response, as a fraction of the rendered blob contrast.
    pub evidence_fraction: f64,
    pub marker_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            presentation_prior: PresentationLabel::Cephalic,
            placenta_prior: PlacentaLabel::Anterior,
            evidence_fraction: 0.4,
            marker_size: 16,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.evidence_fraction > 0.0 && self.evidence_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "oracle evidence_fraction must lie in (0, 1), got {}",
                self.evidence_fraction
            )));
        }
        if self.marker_size == 0 {
            return Err(Error::Validation("oracle marker_size must be positive".into()));
        }
        Ok(())
    }
}

fn layout_of(sweep: &Sweep, cfg: &OracleConfig) -> Layout {
    Layout::new(sweep.height(), sweep.width(), cfg.marker_size)
}

fn margin(best: f64, second: f64) -> f64 {
    if best > 0.0 {
        ((best - second) / best).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Decode the sweep tag from the stripe column.
pub fn oracle_sweep_tag(sweep: &Sweep, cfg: &OracleConfig) -> TaskPrediction {
    let layout = layout_of(sweep, cfg);
    let w = sweep.width();
    let rows = layout.stripe_rows.start.min(sweep.height())..layout.stripe_rows.end.min(sweep.height());
    let mut profile = vec![0u64; w];
    for f in sweep.frames() {
        for r in rows.clone() {
            for (acc, &p) in profile.iter_mut().zip(f.row(r)) {
                *acc += p as u64;
            }
        }
    }
    let fallback = TaskPrediction {
        label: TaskLabel::Tag(SweepTag::C1),
        confidence: 0.0,
    };
    let (lo, hi) = (profile.iter().min().copied(), profile.iter().max().copied());
    if rows.is_empty() || lo == hi {
        return fallback;
    }
    let argmax = profile
        .iter()
        .enumerate()
        .max_by_key(|&(c, &v)| (v, std::cmp::Reverse(c)))
        .map(|(c, _)| c)
        .unwrap_or(0);
    let nearest = (0..6)
        .min_by_key(|&i| layout.tag_columns[i].abs_diff(argmax))
        .unwrap_or(0);

    let mut sorted = profile.clone();
    sorted.sort_unstable();
    let baseline = sorted[w / 2] as f64;
    let half = crate::synthgen::STRIPE_HALF_WIDTH;
    let mut responses: Vec<f64> = layout
        .tag_columns
        .iter()
        .map(|&c| {
            let window = &profile[c.saturating_sub(half)..=(c + half).min(w - 1)];
            let mean = window.iter().sum::<u64>() as f64 / window.len() as f64;
            (mean - baseline).max(0.0)
        })
        .collect();
    let best = responses[nearest];
    responses[nearest] = f64::NEG_INFINITY;
    let second = responses.iter().copied().fold(0.0, f64::max);
    TaskPrediction {
        label: TaskLabel::Tag(SweepTag::ALL[nearest]),
        confidence: margin(best, second),
    }
}

/// Mean matched-filter responses at the (small, large) radii for the blob
/// centered on `center_row`, averaged over mid-sweep frames.
pub fn blob_responses(sweep: &Sweep, layout: &Layout, center_row: f32) -> (f64, f64) {
    const RING: f32 = 4.0;
    let t = sweep.len();
    let window = (3 * t / 8)..(5 * t / 8).max(3 * t / 8 + 1).min(t);
    let (h, w) = (sweep.height(), sweep.width());
    let reach = layout.radius_large + RING;
    let r0 = (center_row - reach).floor().max(0.0) as usize;
    let r1 = ((center_row + reach).ceil() as usize).min(h - 1);
    let c0 = (layout.blob_col - reach).floor().max(0.0) as usize;
    let c1 = ((layout.blob_col + reach).ceil() as usize).min(w - 1);

    let mut sums = [(0.0f64, 0usize, 0.0f64, 0usize); 2];
    let radii = [layout.radius_small, layout.radius_large];
    let mut row_buf = Vec::with_capacity(w);
    for f in &sweep.frames()[window.clone()] {
        for r in r0..=r1 {
            // Subtracting the row median removes the full-width progression
            // band, which may cross the blob in mid-sweep frames.
            row_buf.clear();
            row_buf.extend_from_slice(f.row(r));
            row_buf.sort_unstable();
            let med = row_buf[w / 2] as f64;
            let dy = r as f32 - center_row;
            for c in c0..=c1 {
                let dx = c as f32 - layout.blob_col;
                let d2 = dx * dx + dy * dy;
                let v = f.get(r, c) as f64 - med;
                for (k, &rad) in radii.iter().enumerate() {
                    if d2 <= rad * rad {
                        sums[k].0 += v;
                        sums[k].1 += 1;
                    } else if d2 <= (rad + RING) * (rad + RING) {
                        sums[k].2 += v;
                        sums[k].3 += 1;
                    }
                }
            }
        }
    }
    let resp = |(inner, ni, ring, nr): (f64, usize, f64, usize)| {
        let mi = if ni > 0 { inner / ni as f64 } else { 0.0 };
        let mr = if nr > 0 { ring / nr as f64 } else { 0.0 };
        mi - mr
    };
    (resp(sums[0]), resp(sums[1]))
}

/// Returns `Some((is_large, confidence))`, or `None` without enough evidence.
fn decode_blob(sweep: &Sweep, cfg: &OracleConfig, center_row: f32) -> Option<(bool, f64)> {
    let layout = layout_of(sweep, cfg);
    let (small, large) = blob_responses(sweep, &layout, center_row);
    let best = small.max(large);
    if best.is_nan() || best < cfg.evidence_fraction * BLOB_CONTRAST as f64 {
        return None;
    }
    let is_large = large > small;
    Some((is_large, margin(best, small.min(large).max(0.0))))
}

pub fn oracle_presentation(sweep: &Sweep, cfg: &OracleConfig) -> TaskPrediction {
    let row = layout_of(sweep, cfg).presentation_row;
    match decode_blob(sweep, cfg, row) {
        Some((large, confidence)) => TaskPrediction {
            label: TaskLabel::Presentation(if large {
                PresentationLabel::NonCephalic
            } else {
                PresentationLabel::Cephalic
            }),
            confidence,
        },
        None => TaskPrediction {
            label: TaskLabel::Presentation(cfg.presentation_prior),
            confidence: 0.0,
        },
    }
}

pub fn oracle_placenta(sweep: &Sweep, cfg: &OracleConfig) -> TaskPrediction {
    let row = layout_of(sweep, cfg).placenta_row;
    match decode_blob(sweep, cfg, row) {
        Some((large, confidence)) => TaskPrediction {
            label: TaskLabel::Placenta(if large {
                PlacentaLabel::Posterior
            } else {
                PlacentaLabel::Anterior
            }),
            confidence,
        },
        None => TaskPrediction {
            label: TaskLabel::Placenta(cfg.placenta_prior),
            confidence: 0.0,
        },
    }
}

pub fn oracle_predict(sweep: &Sweep, cfg: &OracleConfig) -> SweepPredictions {
    [
        oracle_sweep_tag(sweep, cfg),
        oracle_presentation(sweep, cfg),
        oracle_placenta(sweep, cfg),
    ]
}

/// One line of a predictions JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub tag: SweepTag,
    pub task: Task,
    pub label: String,
    pub confidence: f64,
}

pub type TaskPredictions = HashMap<SweepKey, TaskPrediction>;

/// Parse every record of `task` from a predictions file. Records for other
/// tasks are skipped.
pub fn parse_predictions(text: &str, task: Task, source_name: &str) -> Result<BTreeMap<SweepKey, TaskPrediction>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: String| Error::Parse {
            source_name: source_name.to_owned(),
            line: i + 1,
            column,
            message,
        };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.column(), e.to_string()))?;
        if rec.task != task {
            continue;
        }
        let col_of = |key: &str| line.find(&format!("\"{key}\"")).map_or(1, |c| c + 1);
        let label = TaskLabel::parse(task, &rec.label).map_err(|e| err(col_of("label"), e.to_string()))?;
        let pred = TaskPrediction::new(label, rec.confidence).map_err(|e| err(col_of("confidence"), e.to_string()))?;
        let key = (rec.patient_id, rec.tag);
        if out.insert(key.clone(), pred).is_some() {
            return Err(err(
                1,
                format!("duplicate {task} prediction for {}", sweep_key_label(&key)),
            ));
        }
    }
    Ok(out)
}

pub fn load_external_predictions(path: &Path, task: Task, expected: &[SweepKey]) -> Result<TaskPredictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: TaskPredictions = parse_predictions(&text, task, &path.display().to_string())?
        .into_iter()
        .collect();
    check_coverage(&map, expected)?;
    Ok(map)
}

/// JSONL for all tasks, sweep-major in the order of `keys`.
pub fn predictions_to_jsonl(keys: &[SweepKey], preds: &HashMap<SweepKey, SweepPredictions>) -> Result<String> {
    let mut out = String::new();
    for key in keys {
        let p = preds.get(key).ok_or_else(|| Error::Coverage {
            missing: vec![sweep_key_label(key)],
        })?;
        for pred in p {
            let rec = PredictionRecord {
                patient_id: key.0.clone(),
                tag: key.1,
                task: pred.task(),
                label: pred.label.as_str().to_owned(),
                confidence: pred.confidence,
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record"));
            out.push('\n');
        }
    }
    Ok(out)
}

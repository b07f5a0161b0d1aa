//! Reference quality-assessment detectors and the external-detections
//! adapter.
//!
//! All three detectors are closed-form statistics over pixel data. Pixel
//! sums are accumulated in integers so that mirrored or time-reversed inputs
//! produce exactly negated statistics, and [`logistic`] satisfies
//! `logistic(x) + logistic(-x) == 1.0` in floating point. Together these make
//! the flip and reversal scores exactly complementary under their operators.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{sweep_key_label, SweepKey};
use crate::perturb::Perturbation;
use crate::sweep::{Frame, Sweep, SweepTag};

/// Logistic function with exact antisymmetry about 0.5.
pub fn logistic(x: f64) -> f64 {
    if x.is_nan() {
        return 0.5;
    }
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        // 1 - p is exact for p in [0.5, 1].
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    /// Flag thresholds for (reversal, flip, incomplete) scores.
    pub thresholds: [f64; 3],
    /// Softness of the reversal logistic, in units of normalized slope (a
    /// protocol-direction sweep has normalized slope near 1).
    pub reversal_softness: f64,
    /// Softness of the flip logistic on the (right - left) / (right + left)
    /// corner-mass contrast.
    pub flip_softness: f64,
    pub marker_size: usize,
    /// Covered span below which a sweep counts as incomplete.
    pub span_threshold: f64,
    pub span_softness: f64,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            thresholds: [0.5; 3],
            reversal_softness: 0.1,
            flip_softness: 0.1,
            marker_size: 16,
            span_threshold: 0.74,
            span_softness: 0.05,
        }
    }
}

impl QaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reversal_softness", self.reversal_softness),
            ("flip_softness", self.flip_softness),
            ("span_softness", self.span_softness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("thresholds must be finite".into()));
        }
        if self.marker_size == 0 {
            return Err(Error::InvalidArgument("marker_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.span_threshold) {
            return Err(Error::InvalidArgument(format!(
                "span_threshold must lie in [0, 1], got {}",
                self.span_threshold
            )));
        }
        Ok(())
    }
}

/// A detector output; `indeterminate` marks degenerate input, in which case
/// `value` is 0.5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub indeterminate: bool,
}

impl Score {
    const INDETERMINATE: Score = Score {
        value: 0.5,
        indeterminate: true,
    };

    fn of(value: f64) -> Score {
        Score {
            value,
            indeterminate: false,
        }
    }
}

/// Lower median of an 8-bit frame.
fn median(frame: &Frame) -> u8 {
    let mut hist = [0usize; 256];
    for &p in frame.pixels() {
        hist[p as usize] += 1;
    }
    let target = (frame.pixels().len() - 1) / 2;
    let mut seen = 0;
    for (v, &n) in hist.iter().enumerate() {
        seen += n;
        if seen > target {
            return v as u8;
        }
    }
    255
}

/// Intensity-above-median weighted mean row, or `None` for a flat frame.
pub fn row_centroid(frame: &Frame) -> Option<f64> {
    let med = median(frame);
    let (mut num, mut den) = (0u64, 0u64);
    for r in 0..frame.height() {
        let mass: u64 = frame.row(r).iter().map(|&p| p.saturating_sub(med) as u64).sum();
        num += mass * r as u64;
        den += mass;
    }
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-frame centroids; flat frames sit at the vertical center. `None` when
/// every frame is flat.
fn centroids(sweep: &Sweep) -> Option<Vec<f64>> {
    let raw: Vec<Option<f64>> = sweep.frames().iter().map(row_centroid).collect();
    if raw.iter().all(Option::is_none) {
        return None;
    }
    let mid = (sweep.height() - 1) as f64 / 2.0;
    Some(raw.into_iter().map(|c| c.unwrap_or(mid)).collect())
}

/// Least-squares slope of `ys` against index. Terms are paired from both
/// ends so reversing `ys` negates the result exactly.
fn ls_slope(ys: &[f64]) -> f64 {
    let t = ys.len();
    let mid = (t - 1) as f64 / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t / 2 {
        let x = i as f64 - mid;
        num += x * (ys[i] - ys[t - 1 - i]);
        den += 2.0 * x * x;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Score > 0.5 means the band moves bottom-to-top (reversed acquisition).
pub fn detect_reversal(sweep: &Sweep, cfg: &QaConfig) -> Score {
    if sweep.len() < 2 {
        return Score::INDETERMINATE;
    }
    let Some(c) = centroids(sweep) else {
        return Score::INDETERMINATE;
    };
    let scale = (sweep.len() - 1) as f64 / (sweep.height().max(2) - 1) as f64;
    let slope = ls_slope(&c) * scale;
    Score::of(logistic(-slope / cfg.reversal_softness))
}

/// Score > 0.5 means the orientation marker sits top-right (flipped probe).
pub fn detect_flip(sweep: &Sweep, cfg: &QaConfig) -> Score {
    let (h, w) = (sweep.height(), sweep.width());
    let k = cfg.marker_size.min(h).min(w / 2).max(1);
    let (mut left, mut right) = (0u64, 0u64);
    for f in sweep.frames() {
        for r in 0..k {
            let row = f.row(r);
            left += row[..k].iter().map(|&p| p as u64).sum::<u64>();
            right += row[w - k..].iter().map(|&p| p as u64).sum::<u64>();
        }
    }
    if left + right == 0 {
        return Score::INDETERMINATE;
    }
    let contrast = (right as f64 - left as f64) / (right + left) as f64;
    Score::of(logistic(contrast / cfg.flip_softness))
}

/// Fraction of the frame height traversed between first and last frames.
pub fn covered_span(sweep: &Sweep) -> Option<f64> {
    if sweep.len() < 2 {
        return None;
    }
    let c = centroids(sweep)?;
    let span = (c[c.len() - 1] - c[0]).abs();
    Some(span / (sweep.height().max(2) - 1) as f64)
}

/// Score > 0.5 means the sweep covers too little of the scan path.
pub fn detect_incomplete(sweep: &Sweep, cfg: &QaConfig) -> Score {
    match covered_span(sweep) {
        Some(span) => Score::of(logistic((cfg.span_threshold - span) / cfg.span_softness)),
        None => Score::INDETERMINATE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub reversal_score: f64,
    pub flip_score: f64,
    pub incomplete_score: f64,
    pub reversal_flag: bool,
    pub flip_flag: bool,
    pub incomplete_flag: bool,
    pub thresholds: [f64; 3],
    /// Degenerate input; all flags are raised so the sweep is retaken.
    pub indeterminate: bool,
}

impl DetectorReport {
    pub fn from_scores(scores: [f64; 3], thresholds: [f64; 3], indeterminate: bool) -> Self {
        let flag = |i: usize| indeterminate || scores[i] >= thresholds[i];
        Self {
            reversal_score: scores[0],
            flip_score: scores[1],
            incomplete_score: scores[2],
            reversal_flag: flag(0),
            flip_flag: flag(1),
            incomplete_flag: flag(2),
            thresholds,
            indeterminate,
        }
    }

    /// Flags that mirror a ground-truth plan exactly.
    pub fn from_truth(plan: &crate::perturb::PerturbationPlan) -> Self {
        let s = |b: bool| if b { 1.0 } else { 0.0 };
        Self::from_scores(
            [s(plan.reversed), s(plan.flipped), s(plan.incomplete())],
            [0.5; 3],
            false,
        )
    }

    pub fn never() -> Self {
        Self::from_scores([0.0; 3], [0.5; 3], false)
    }

    pub fn scores(&self) -> [f64; 3] {
        [self.reversal_score, self.flip_score, self.incomplete_score]
    }

    pub fn flag(&self, p: Perturbation) -> bool {
        match p {
            Perturbation::Reversal => self.reversal_flag,
            Perturbation::Flip => self.flip_flag,
            Perturbation::Incomplete => self.incomplete_flag,
        }
    }

    pub fn any_flag(&self) -> bool {
        self.reversal_flag || self.flip_flag || self.incomplete_flag
    }
}

pub fn run_detectors(sweep: &Sweep, cfg: &QaConfig) -> DetectorReport {
    let r = detect_reversal(sweep, cfg);
    let f = detect_flip(sweep, cfg);
    let i = detect_incomplete(sweep, cfg);
    DetectorReport::from_scores(
        [r.value, f.value, i.value],
        cfg.thresholds,
        r.indeterminate || f.indeterminate || i.indeterminate,
    )
}

/// One line of a detections JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub patient_id: String,
    pub tag: SweepTag,
    pub reversal: f64,
    pub flip: f64,
    pub incomplete: f64,
}

pub type Detections = HashMap<SweepKey, DetectorReport>;

pub fn parse_detections(text: &str, source_name: &str) -> Result<BTreeMap<SweepKey, [f64; 3]>> {
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
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| err(e.column(), e.to_string()))?;
        let scores = [rec.reversal, rec.flip, rec.incomplete];
        for (name, s) in ["reversal", "flip", "incomplete"].iter().zip(scores) {
            if !(0.0..=1.0).contains(&s) {
                let col = line.find(&format!("\"{name}\"")).map_or(1, |c| c + 1);
                return Err(err(col, format!("{name} score {s} outside [0, 1]")));
            }
        }
        let key = (rec.patient_id, rec.tag);
        if out.insert(key.clone(), scores).is_some() {
            return Err(err(1, format!("duplicate record for {}", sweep_key_label(&key))));
        }
    }
    Ok(out)
}

pub fn check_coverage<V>(map: &HashMap<SweepKey, V>, expected: &[SweepKey]) -> Result<()> {
    let missing: Vec<String> = expected
        .iter()
        .filter(|k| !map.contains_key(*k))
        .map(sweep_key_label)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Coverage { missing })
    }
}

/// Load externally produced detector scores and flag them with `thresholds`.
/// Every key in `expected` must be present.
pub fn load_external_detections(path: &Path, thresholds: [f64; 3], expected: &[SweepKey]) -> Result<Detections> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_detections(&text, &path.display().to_string())?;
    let map: Detections = parsed
        .into_iter()
        .map(|(k, s)| (k, DetectorReport::from_scores(s, thresholds, false)))
        .collect();
    check_coverage(&map, expected)?;
    Ok(map)
}

/// Serialize reports as JSONL in the order of `keys`.
pub fn detections_to_jsonl(keys: &[SweepKey], reports: &Detections) -> Result<String> {
    let mut out = String::new();
    let mut seen = HashSet::new();
    for key in keys {
        if !seen.insert(key) {
            continue;
        }
        let r = reports.get(key).ok_or_else(|| Error::Coverage {
            missing: vec![sweep_key_label(key)],
        })?;
        let rec = DetectionRecord {
            patient_id: key.0.clone(),
            tag: key.1,
            reversal: r.reversal_score,
            flip: r.flip_score,
            incomplete: r.incomplete_score,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_detections(path: &Path, keys: &[SweepKey], reports: &Detections) -> Result<()> {
    fs::write(path, detections_to_jsonl(keys, reports)?).map_err(|e| Error::io(path, e))
}

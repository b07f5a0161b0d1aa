#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sweepqa::downstream::{SweepPredictions, Task, TaskPrediction};
use sweepqa::eval::{DetectorRow, EvalReport, ReportMeta, TaskRow};
use sweepqa::manifest::{Manifest, ManifestEntry, SweepEntry, SweepKey};
use sweepqa::metrics::Metrics;
use sweepqa::perturb::{sample_plan, MixtureSpec, Perturbation, TruncationRange};
use sweepqa::qa::{Detections, DetectorReport};
use sweepqa::sweep::{Frame, PlacentaLabel, PresentationLabel, Split, Sweep, SweepTag};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random-pixel sweep; `len` frames of random size.
pub fn random_sweep(r: &mut ChaCha8Rng, len: usize) -> Sweep {
    let h = r.random_range(2..=40);
    let w = r.random_range(2..=40);
    let frames = (0..len)
        .map(|_| Frame::new(h, w, (0..h * w).map(|_| r.random()).collect()).unwrap())
        .collect();
    let tag = SweepTag::ALL[r.random_range(0..6)];
    let pid = format!("R{:04}", r.random_range(0..10_000));
    Sweep::new(frames, tag, &pid, r.random_range(0.1f32..2.0)).unwrap()
}

/// Sweep whose frame `i` is filled with the value `i`.
pub fn sentinel_sweep(len: usize) -> Sweep {
    let frames = (0..len).map(|i| Frame::filled(3, 3, i as u8).unwrap()).collect();
    Sweep::new(frames, SweepTag::M, "S", 0.75).unwrap()
}

pub fn random_keys(r: &mut ChaCha8Rng) -> Vec<SweepKey> {
    let n = r.random_range(1..=8);
    (0..n)
        .flat_map(|p| SweepTag::ALL.iter().map(move |&t| (format!("P{p:05}"), t)))
        .collect()
}

pub fn random_manifest(r: &mut ChaCha8Rng) -> Manifest {
    let n = r.random_range(1..=12);
    let mixture = r.random_bool(0.5).then(|| {
        let a: f64 = r.random_range(0.0..1.0);
        let b: f64 = r.random_range(0.0..1.0 - a);
        let c: f64 = r.random_range(0.0..1.0 - a - b);
        MixtureSpec::new(a, b, c, 1.0 - a - b - c).unwrap()
    });
    let ranges = TruncationRange::default();
    let all = MixtureSpec::new(0.25, 0.25, 0.25, 0.25).unwrap();
    let entries = (0..n)
        .map(|i| {
            let split = [Split::Train, Split::Val, Split::Test][r.random_range(0..3)];
            let sweeps = SweepTag::ALL
                .iter()
                .map(|&tag| SweepEntry {
                    tag,
                    path: format!("sweeps/P{i:05}_{tag}.bswp"),
                    perturbation: (split == Split::Test).then(|| sample_plan(r, &all, &ranges)),
                })
                .collect();
            ManifestEntry {
                patient_id: format!("P{i:05}"),
                split,
                presentation: PresentationLabel::ALL[r.random_range(0..2)],
                placenta: PlacentaLabel::ALL[r.random_range(0..2)],
                sweeps,
            }
        })
        .collect();
    Manifest {
        seed: r.random(),
        mixture,
        entries,
    }
}

pub fn random_detections(r: &mut ChaCha8Rng, keys: &[SweepKey]) -> Detections {
    keys.iter()
        .map(|k| {
            let s = [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()];
            (k.clone(), DetectorReport::from_scores(s, [0.5; 3], false))
        })
        .collect()
}

pub fn random_predictions(r: &mut ChaCha8Rng, keys: &[SweepKey]) -> HashMap<SweepKey, SweepPredictions> {
    keys.iter()
        .map(|k| {
            let p: SweepPredictions = std::array::from_fn(|i| {
                let labels = Task::ALL[i].labels();
                TaskPrediction::new(labels[r.random_range(0..labels.len())], r.random()).unwrap()
            });
            (k.clone(), p)
        })
        .collect()
}

fn random_metrics(r: &mut ChaCha8Rng) -> Metrics {
    Metrics {
        accuracy: r.random(),
        macro_f1: r.random(),
    }
}

pub fn random_report(r: &mut ChaCha8Rng) -> EvalReport {
    let looped = r.random_bool(0.5);
    let tasks = Task::ALL
        .iter()
        .map(|&task| {
            let sweep = random_metrics(r);
            let patient = task.has_patient_level().then(|| random_metrics(r));
            let (post_sweep, post_patient) = if looped {
                (Some(random_metrics(r)), patient.map(|_| random_metrics(r)))
            } else {
                (None, None)
            };
            TaskRow {
                task,
                sweep,
                patient,
                post_sweep,
                post_patient,
                delta_sweep: post_sweep.map(|p| p.minus(&sweep)),
                delta_patient: post_patient.zip(patient).map(|(p, q)| p.minus(&q)),
            }
        })
        .collect();
    let detectors = if r.random_bool(0.7) {
        Perturbation::ALL
            .iter()
            .map(|&perturbation| DetectorRow {
                perturbation,
                metrics: random_metrics(r),
            })
            .collect()
    } else {
        Vec::new()
    };
    EvalReport {
        meta: ReportMeta {
            seed: r.random(),
            ..Default::default()
        },
        tasks,
        detectors,
    }
}

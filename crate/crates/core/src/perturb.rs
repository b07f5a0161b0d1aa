//! Acquisition-protocol deviations and their probabilistic assignment.
//!
//! Three operators model operator error: sequence reversal, horizontal probe
//! flip, and incomplete coverage (a contiguous sub-span resampled back to the
//! canonical length so that frame count does not give it away). A
//! [`MixtureSpec`] decides how many of them hit each test sweep.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bswp;
use crate::error::{Error, Result};
use crate::manifest::{self, Manifest, ManifestEntry, SweepEntry};
use crate::par::{self, Exec};
use crate::preprocess::subsample_index;
use crate::rng;
use crate::sweep::{Frame, Split, Sweep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Reversal,
    Flip,
    Incomplete,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [Perturbation::Reversal, Perturbation::Flip, Perturbation::Incomplete];

    pub fn as_str(self) -> &'static str {
        match self {
            Perturbation::Reversal => "reversal",
            Perturbation::Flip => "flip",
            Perturbation::Incomplete => "incomplete",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Perturbation::Reversal => "Sequence reversal",
            Perturbation::Flip => "Probe flipping",
            Perturbation::Incomplete => "Incomplete sweep",
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Allowed start index `m` and length `n` for incomplete sweeps, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationRange {
    pub m_min: usize,
    pub m_max: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub canonical_len: usize,
}

impl Default for TruncationRange {
    fn default() -> Self {
        Self {
            m_min: 0,
            m_max: 8,
            n_min: 8,
            n_max: 24,
            canonical_len: crate::sweep::CANONICAL_LEN,
        }
    }
}

impl TruncationRange {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m_min <= self.m_max
            && 1 <= self.n_min
            && self.n_min <= self.n_max
            && self.n_max < self.canonical_len
            && self.m_max + self.n_max <= self.canonical_len;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "truncation ranges m∈[{}, {}], n∈[{}, {}] invalid for {} frames",
                self.m_min, self.m_max, self.n_min, self.n_max, self.canonical_len
            )))
        }
    }

    pub fn check(&self, t: Truncation) -> Result<()> {
        let Truncation { m, n } = t;
        if (self.m_min..=self.m_max).contains(&m)
            && (self.n_min..=self.n_max).contains(&n)
            && m + n <= self.canonical_len
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "truncation m={m}, n={n} outside m∈[{}, {}], n∈[{}, {}], m+n≤{}",
                self.m_min, self.m_max, self.n_min, self.n_max, self.canonical_len
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Truncation {
    pub m: usize,
    pub n: usize,
}

/// Ground-truth record of the deviations applied to one sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr", into = "PlanRepr")]
pub struct PerturbationPlan {
    pub reversed: bool,
    pub flipped: bool,
    pub truncation: Option<Truncation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRepr {
    reversed: bool,
    flipped: bool,
    incomplete: bool,
    m: Option<usize>,
    n: Option<usize>,
}

impl From<PerturbationPlan> for PlanRepr {
    fn from(p: PerturbationPlan) -> Self {
        PlanRepr {
            reversed: p.reversed,
            flipped: p.flipped,
            incomplete: p.truncation.is_some(),
            m: p.truncation.map(|t| t.m),
            n: p.truncation.map(|t| t.n),
        }
    }
}

impl TryFrom<PlanRepr> for PerturbationPlan {
    type Error = String;

    fn try_from(r: PlanRepr) -> std::result::Result<Self, String> {
        let truncation = match (r.incomplete, r.m, r.n) {
            (true, Some(m), Some(n)) => Some(Truncation { m, n }),
            (false, None, None) => None,
            (true, ..) => return Err("incomplete plan requires both m and n".into()),
            (false, ..) => return Err("m and n must be null unless incomplete".into()),
        };
        Ok(PerturbationPlan {
            reversed: r.reversed,
            flipped: r.flipped,
            truncation,
        })
    }
}

impl PerturbationPlan {
    pub const NONE: PerturbationPlan = PerturbationPlan {
        reversed: false,
        flipped: false,
        truncation: None,
    };

    #[inline]
    pub fn incomplete(&self) -> bool {
        self.truncation.is_some()
    }

    pub fn has(&self, p: Perturbation) -> bool {
        match p {
            Perturbation::Reversal => self.reversed,
            Perturbation::Flip => self.flipped,
            Perturbation::Incomplete => self.incomplete(),
        }
    }

    pub fn count(&self) -> usize {
        Perturbation::ALL.iter().filter(|&&p| self.has(p)).count()
    }

    pub fn is_clean(&self) -> bool {
        self.count() == 0
    }

    pub fn validate(&self, ranges: &TruncationRange) -> Result<()> {
        match self.truncation {
            Some(t) => ranges.check(t),
            None => Ok(()),
        }
    }
}

/// Probabilities of applying exactly 0, 1, 2 or 3 perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            p0: 0.50,
            p1: 0.30,
            p2: 0.15,
            p3: 0.05,
        }
    }
}

impl MixtureSpec {
    pub fn new(p0: f64, p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let m = Self { p0, p1, p2, p3 };
        m.validate()?;
        Ok(m)
    }

    pub fn probs(&self) -> [f64; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.probs();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!(
                "mixture probabilities must lie in [0, 1], got {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Draw how many perturbations to apply.
    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs().into_iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding gap above the cumulative sum; take the last
        // category with non-zero mass.
        self.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Draw a plan: a count from the mixture, a uniform subset of that size, and
/// uniform `m`, `n` when incompleteness is chosen.
pub fn sample_plan<R: Rng + ?Sized>(rng: &mut R, mixture: &MixtureSpec, ranges: &TruncationRange) -> PerturbationPlan {
    let k = mixture.sample_count(rng);
    let mut plan = PerturbationPlan::NONE;
    for i in index::sample(rng, Perturbation::ALL.len(), k) {
        match Perturbation::ALL[i] {
            Perturbation::Reversal => plan.reversed = true,
            Perturbation::Flip => plan.flipped = true,
            Perturbation::Incomplete => {
                let m = rng.random_range(ranges.m_min..=ranges.m_max);
                let n = rng.random_range(ranges.n_min..=ranges.n_max);
                plan.truncation = Some(Truncation { m, n });
            }
        }
    }
    plan
}

pub fn reverse(sweep: &Sweep) -> Sweep {
    let frames = sweep.frames().iter().rev().cloned().collect();
    sweep.with_frames(frames).expect("reversal keeps frame shapes")
}

pub fn flip_frame(frame: &Frame) -> Frame {
    let w = frame.width();
    let mut px = frame.pixels().to_vec();
    for row in px.chunks_exact_mut(w) {
        row.reverse();
    }
    Frame::new(frame.height(), w, px).expect("flip keeps frame shape")
}

pub fn flip_horizontal(sweep: &Sweep) -> Sweep {
    let frames = sweep.frames().iter().map(flip_frame).collect();
    sweep.with_frames(frames).expect("flip keeps frame shapes")
}

/// Source frame for output position `i` of a truncated-and-resampled sweep.
#[inline]
pub fn truncation_source_index(i: usize, t: Truncation, out_len: usize) -> usize {
    t.m + subsample_index(i, t.n, out_len)
}

/// Keep frames `m..m+n` and stretch them back to the canonical length.
pub fn truncate_resample(sweep: &Sweep, m: usize, n: usize, ranges: &TruncationRange) -> Result<Sweep> {
    let t = Truncation { m, n };
    ranges.check(t)?;
    if sweep.len() != ranges.canonical_len {
        return Err(Error::InvalidArgument(format!(
            "truncation expects {} frames, sweep has {}",
            ranges.canonical_len,
            sweep.len()
        )));
    }
    let len = ranges.canonical_len;
    let frames = (0..len)
        .map(|i| sweep.frames()[truncation_source_index(i, t, len)].clone())
        .collect();
    sweep.with_frames(frames)
}

/// Apply a plan in the fixed order truncate → reverse → flip.
pub fn apply_plan(sweep: &Sweep, plan: &PerturbationPlan, ranges: &TruncationRange) -> Result<Sweep> {
    let mut out = match plan.truncation {
        Some(Truncation { m, n }) => truncate_resample(sweep, m, n, ranges)?,
        None => sweep.clone(),
    };
    if plan.reversed {
        out = reverse(&out);
    }
    if plan.flipped {
        out = flip_horizontal(&out);
    }
    Ok(out)
}

/// Plan for one sweep, drawn from its own stream keyed on (seed, patient, tag).
pub fn plan_for_sweep(
    master_seed: u64,
    patient_id: &str,
    tag: crate::sweep::SweepTag,
    mixture: &MixtureSpec,
    ranges: &TruncationRange,
) -> PerturbationPlan {
    let mut r = rng::rng_for(rng::sweep_perturb_seed(master_seed, patient_id, tag));
    sample_plan(&mut r, mixture, ranges)
}

/// Perturb every test sweep of a corpus into `out_dir`, recording plans.
///
/// Train and validation entries are carried over unchanged, pointing at the
/// original files.
pub fn perturb_corpus(
    manifest: &Manifest,
    manifest_base: &Path,
    mixture: &MixtureSpec,
    ranges: &TruncationRange,
    master_seed: u64,
    out_dir: &Path,
    exec: Exec,
) -> Result<Manifest> {
    mixture.validate()?;
    ranges.validate()?;
    manifest.validate(None, ranges)?;
    manifest.validate_files(manifest_base)?;

    let sweeps_dir = out_dir.join("sweeps");
    fs::create_dir_all(&sweeps_dir).map_err(|e| Error::io(&sweeps_dir, e))?;

    let entries = par::try_map(exec, &manifest.entries, |entry| {
        perturb_entry(entry, manifest_base, mixture, ranges, master_seed, out_dir)
    })?;
    Ok(Manifest {
        seed: master_seed,
        mixture: Some(*mixture),
        entries,
    })
}

fn perturb_entry(
    entry: &ManifestEntry,
    base: &Path,
    mixture: &MixtureSpec,
    ranges: &TruncationRange,
    master_seed: u64,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let mut sweeps = Vec::with_capacity(entry.sweeps.len());
    for s in &entry.sweeps {
        let src = manifest::resolve(base, &s.path);
        if entry.split != Split::Test {
            sweeps.push(SweepEntry {
                tag: s.tag,
                path: manifest::relative_path(&src, out_dir)?,
                perturbation: None,
            });
            continue;
        }
        let plan = plan_for_sweep(master_seed, &entry.patient_id, s.tag, mixture, ranges);
        let clean = bswp::read_sweep(&src)?;
        let perturbed = apply_plan(&clean, &plan, ranges)?;
        let rel = format!("sweeps/{}_{}.bswp", entry.patient_id, s.tag);
        bswp::write_sweep(&perturbed, &out_dir.join(&rel))?;
        sweeps.push(SweepEntry {
            tag: s.tag,
            path: rel,
            perturbation: Some(plan),
        });
    }
    Ok(ManifestEntry {
        sweeps,
        ..entry.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::SweepTag;

    /// Sweep whose frame i is filled with value i, so frame identity survives
    /// every operator.
    fn sentinel_sweep(t: usize, w: usize) -> Sweep {
        let frames = (0..t)
            .map(|i| {
                let px = (0..w).map(|c| (i * 7 + c) as u8).collect();
                Frame::new(1, w, px).unwrap()
            })
            .collect();
        Sweep::new(frames, SweepTag::C2, "p", 0.75).unwrap()
    }

    fn ids(s: &Sweep) -> Vec<usize> {
        s.frames().iter().map(|f| f.get(0, 0) as usize / 7).collect()
    }

    #[test]
    fn reverse_definition_and_fixed_point() {
        let s = sentinel_sweep(3, 2);
        assert_eq!(ids(&reverse(&s)), vec![2, 1, 0]);
        assert_eq!(reverse(&reverse(&s)), s);
        let one = sentinel_sweep(1, 2);
        assert_eq!(reverse(&one), one);
    }

    #[test]
    fn flip_moves_column_zero_to_last() {
        let mut px = vec![0u8; 3 * 5];
        for r in 0..3 {
            px[r * 5] = 200;
        }
        let s = Sweep::new(vec![Frame::new(3, 5, px).unwrap()], SweepTag::C1, "p", 1.0).unwrap();
        let f = flip_horizontal(&s);
        for r in 0..3 {
            assert_eq!(f.frames()[0].get(r, 4), 200);
            assert_eq!(f.frames()[0].get(r, 0), 0);
        }
        assert_eq!(flip_horizontal(&f), s);
        let sym = Frame::new(1, 5, vec![1, 2, 3, 2, 1]).unwrap();
        let s = Sweep::new(vec![sym], SweepTag::C1, "p", 1.0).unwrap();
        assert_eq!(flip_horizontal(&s), s);
    }

    #[test]
    fn truncate_m0_n8_repeats_each_frame_four_times() {
        let s = sentinel_sweep(32, 1);
        let out = truncate_resample(&s, 0, 8, &TruncationRange::default()).unwrap();
        let want: Vec<usize> = (0..32).map(|i| i / 4).collect();
        assert_eq!(ids(&out), want);
    }

    #[test]
    fn truncate_extremal_and_rejections() {
        let r = TruncationRange::default();
        let s = sentinel_sweep(32, 1);
        let out = truncate_resample(&s, 8, 24, &r).unwrap();
        let got = ids(&out);
        assert_eq!(got.first(), Some(&8));
        assert_eq!(got.last(), Some(&31));
        assert!(got.iter().all(|i| (8..32).contains(i)));
        assert!(truncate_resample(&s, 0, 32, &r).is_err());
        assert!(truncate_resample(&s, 9, 8, &r).is_err());
        assert!(truncate_resample(&s, 0, 7, &r).is_err());
        assert!(truncate_resample(&sentinel_sweep(31, 1), 0, 8, &r).is_err());
    }

    #[test]
    fn apply_plan_cases() {
        let r = TruncationRange::default();
        let s = sentinel_sweep(32, 3);
        assert_eq!(apply_plan(&s, &PerturbationPlan::NONE, &r).unwrap(), s);

        let rf = PerturbationPlan {
            reversed: true,
            flipped: true,
            truncation: None,
        };
        let once = apply_plan(&s, &rf, &r).unwrap();
        assert_ne!(once, s);
        assert_eq!(apply_plan(&once, &rf, &r).unwrap(), s);

        let tr = PerturbationPlan {
            reversed: true,
            flipped: false,
            truncation: Some(Truncation { m: 0, n: 16 }),
        };
        assert_eq!(ids(&apply_plan(&s, &tr, &r).unwrap())[0], 15);
    }

    #[test]
    fn degenerate_mixture_gives_empty_plans() {
        let mix = MixtureSpec::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let mut r = rng::rng_for(3);
        for _ in 0..1000 {
            assert!(sample_plan(&mut r, &mix, &TruncationRange::default()).is_clean());
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(MixtureSpec::new(0.5, 0.5, 0.1, 0.0).is_err());
        assert!(MixtureSpec::new(-0.1, 0.6, 0.5, 0.0).is_err());
        MixtureSpec::default().validate().unwrap();
    }

    #[test]
    fn plan_json_shape() {
        let p = PerturbationPlan {
            reversed: false,
            flipped: true,
            truncation: None,
        };
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"reversed": false, "flipped": true, "incomplete": false, "m": null, "n": null})
        );
        let bad = r#"{"reversed":false,"flipped":true,"incomplete":true,"m":null,"n":null}"#;
        assert!(serde_json::from_str::<PerturbationPlan>(bad).is_err());
        let bad = r#"{"reversed":false,"flipped":true,"incomplete":false,"m":1,"n":9}"#;
        assert!(serde_json::from_str::<PerturbationPlan>(bad).is_err());
    }

    #[test]
    fn conditioned_subset_is_uniform() {
        // Only-one mixture: every plan has exactly one perturbation.
        let mix = MixtureSpec::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let mut r = rng::rng_for(11);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let p = sample_plan(&mut r, &mix, &TruncationRange::default());
            assert_eq!(p.count(), 1);
            for (i, &kind) in Perturbation::ALL.iter().enumerate() {
                counts[i] += p.has(kind) as usize;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn sampled_truncations_respect_ranges() {
        let r = TruncationRange::default();
        let mix = MixtureSpec::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let mut g = rng::rng_for(5);
        let mut seen_m = [false; 9];
        let mut seen_n = [false; 25];
        for _ in 0..5000 {
            let t = sample_plan(&mut g, &mix, &r).truncation.unwrap();
            r.check(t).unwrap();
            seen_m[t.m] = true;
            seen_n[t.n] = true;
        }
        assert!(seen_m.iter().all(|&b| b));
        assert!(seen_n[8..].iter().all(|&b| b));
    }
}

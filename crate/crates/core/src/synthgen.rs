//! Procedural phantom sweeps.
//!
//! Each frame is a flat background with four overlaid structures, each
//! carrying one piece of ground truth:
//!
//! * a horizontal progression band whose row moves from the top (first
//!   frame) to the bottom (last frame): scan direction and coverage;
//! * a square orientation marker in the top-left corner: probe orientation;
//! * a short vertical stripe near the bottom at one of six mirror-symmetric
//!   columns: sweep tag;
//! * two disks on the vertical midline, visible only in the middle of the
//!   sweep, whose radii encode fetal presentation and placenta location.
//!
//! Structures are composited additively, then Gaussian noise is added and the
//! result rounded and clamped to 8 bits. Band contrast varies per patient to
//! mimic differences in acoustic window quality.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bswp;
use crate::error::{Error, Result};
use crate::manifest::{self, Manifest, ManifestEntry, SweepEntry};
use crate::par::{self, Exec};
use crate::rng::{self, Stream};
use crate::sweep::{
    Frame, PlacentaLabel, PresentationLabel, Split, Study, Sweep, SweepTag, CANONICAL_LEN, CANONICAL_MM_PER_PIXEL,
    CANONICAL_SIZE,
};

/// Background intensity before noise.
pub const BACKGROUND: f32 = 20.0;
/// Gaussian half-width of the progression band, as a fraction of frame height.
pub const BAND_SIGMA_FRAC: f64 = 0.06;
pub const MARKER_CONTRAST: f32 = 60.0;
pub const STRIPE_CONTRAST: f32 = 80.0;
pub const STRIPE_HALF_WIDTH: usize = 2;
/// Rows occupied by the tag stripe, as fractions of frame height.
pub const STRIPE_ROWS: (f32, f32) = (0.82, 0.94);
pub const BLOB_CONTRAST: f32 = 80.0;
/// Blob disk radii (small, large) as fractions of frame height.
pub const BLOB_RADII_FRAC: (f32, f32) = (0.04, 0.072);
/// Blob center rows as fractions of frame height.
pub const PRESENTATION_BLOB_ROW: f32 = 0.35;
pub const PLACENTA_BLOB_ROW: f32 = 0.60;
/// Blobs are drawn in frames whose sweep progress lies in this window.
pub const BLOB_VISIBLE: (f32, f32) = (0.30, 0.70);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    /// Set from the run seed, never read from config files.
    #[serde(skip)]
    pub master_seed: u64,
    pub n_patients: usize,
    /// (train, val, test) patient counts.
    pub split_sizes: (usize, usize, usize),
    pub frame_h: usize,
    pub frame_w: usize,
    pub canonical_len: usize,
    pub noise_sigma: f64,
    pub marker_size: usize,
    pub p_cephalic: f64,
    pub p_anterior: f64,
    /// Per-patient progression band contrast is uniform on this range.
    pub band_contrast: (f32, f32),
    /// Gaussian half-width of the progression band, as a fraction of frame
    /// height.
    pub band_sigma_frac: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_patients: 1250,
            split_sizes: (850, 200, 200),
            frame_h: CANONICAL_SIZE,
            frame_w: CANONICAL_SIZE,
            canonical_len: CANONICAL_LEN,
            noise_sigma: 4.0,
            marker_size: 16,
            p_cephalic: 0.7,
            p_anterior: 0.5,
            band_contrast: (94.0, 215.0),
            band_sigma_frac: BAND_SIGMA_FRAC,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let (tr, va, te) = self.split_sizes;
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if tr + va + te != self.n_patients {
            return bad(format!(
                "split sizes {tr}+{va}+{te} do not sum to n_patients {}",
                self.n_patients
            ));
        }
        if self.canonical_len < 2 {
            return bad(format!("canonical_len must be >= 2, got {}", self.canonical_len));
        }
        if self.frame_h < 64 || self.frame_w < 64 {
            return bad(format!(
                "frames must be at least 64x64, got {}x{}",
                self.frame_h, self.frame_w
            ));
        }
        if self.frame_h > u16::MAX as usize || self.frame_w > u16::MAX as usize {
            return bad("frame dimensions exceed the file format limit".into());
        }
        if self.marker_size == 0 || 2 * self.marker_size >= self.frame_w.min(self.frame_h) {
            return bad(format!("marker_size {} does not fit the frame", self.marker_size));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (name, p) in [("p_cephalic", self.p_cephalic), ("p_anterior", self.p_anterior)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.band_sigma_frac > 0.0 && self.band_sigma_frac <= 0.25) {
            return bad(format!(
                "band_sigma_frac must lie in (0, 0.25], got {}",
                self.band_sigma_frac
            ));
        }
        let (lo, hi) = self.band_contrast;
        if !(0.0 < lo && lo <= hi && BACKGROUND + hi <= 255.0) {
            return bad(format!("band_contrast {lo}..{hi} out of range"));
        }
        Ok(())
    }

    pub fn split_of(&self, patient_index: usize) -> Split {
        let (tr, va, _) = self.split_sizes;
        if patient_index < tr {
            Split::Train
        } else if patient_index < tr + va {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let (tr, va, te) = self.split_sizes;
        match split {
            Split::Train => 0..tr,
            Split::Val => tr..tr + va,
            Split::Test => tr + va..tr + va + te,
        }
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:05}")
}

/// Pixel geometry shared by the generator and the decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub marker_size: usize,
    pub band_sigma: f32,
    pub stripe_rows: std::ops::Range<usize>,
    pub tag_columns: [usize; 6],
    pub blob_col: f32,
    pub presentation_row: f32,
    pub placenta_row: f32,
    pub radius_small: f32,
    pub radius_large: f32,
}

impl Layout {
    pub fn new(height: usize, width: usize, marker_size: usize) -> Self {
        let h = height as f32;
        let frac_row = |f: f32| (f * h).round() as usize;
        let last_col = (width - 1) as f64;
        // Column fractions (2i+1)/12 are mirror pairs about the midline and
        // none is centered, so a horizontal flip changes every tag.
        let tag_columns = std::array::from_fn(|i| {
            let x = (2 * i + 1) as f64 / 12.0 * last_col;
            if (2 * i + 1) * 2 < 12 {
                x.floor() as usize
            } else {
                x.ceil() as usize
            }
        });
        Self {
            height,
            width,
            marker_size,
            band_sigma: (BAND_SIGMA_FRAC as f32 * h).max(1.0),
            stripe_rows: frac_row(STRIPE_ROWS.0)..frac_row(STRIPE_ROWS.1),
            tag_columns,
            blob_col: (width - 1) as f32 / 2.0,
            presentation_row: (PRESENTATION_BLOB_ROW * h).round(),
            placenta_row: (PLACENTA_BLOB_ROW * h).round(),
            radius_small: (BLOB_RADII_FRAC.0 * h).round(),
            radius_large: (BLOB_RADII_FRAC.1 * h).round(),
        }
    }

    pub fn for_params(p: &GenParams) -> Self {
        Self {
            band_sigma: (p.band_sigma_frac * p.frame_h as f64).max(1.0) as f32,
            ..Self::new(p.frame_h, p.frame_w, p.marker_size)
        }
    }

    /// Row of the band peak in frame `k` of `len`.
    pub fn band_row(&self, k: usize, len: usize) -> f32 {
        (k as f32 / (len - 1) as f32 * (self.height - 1) as f32).round()
    }

    pub fn blob_visible(k: usize, len: usize) -> bool {
        let p = k as f32 / (len - 1) as f32;
        (BLOB_VISIBLE.0..=BLOB_VISIBLE.1).contains(&p)
    }

    pub fn presentation_radius(&self, label: PresentationLabel) -> f32 {
        match label {
            PresentationLabel::Cephalic => self.radius_small,
            PresentationLabel::NonCephalic => self.radius_large,
        }
    }

    pub fn placenta_radius(&self, label: PlacentaLabel) -> f32 {
        match label {
            PlacentaLabel::Anterior => self.radius_small,
            PlacentaLabel::Posterior => self.radius_large,
        }
    }
}

/// Patient-level draws shared by all six sweeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatientTraits {
    pub presentation: PresentationLabel,
    pub placenta: PlacentaLabel,
    pub band_contrast: f32,
}

pub fn draw_traits(patient_seed: u64, params: &GenParams) -> PatientTraits {
    let mut r = rng::rng_for(rng::mix(&[Stream::Labels as u64, patient_seed]));
    let presentation = if r.random_bool(params.p_cephalic) {
        PresentationLabel::Cephalic
    } else {
        PresentationLabel::NonCephalic
    };
    let placenta = if r.random_bool(params.p_anterior) {
        PlacentaLabel::Anterior
    } else {
        PlacentaLabel::Posterior
    };
    let (lo, hi) = params.band_contrast;
    let band_contrast = if lo < hi { r.random_range(lo..=hi) } else { lo };
    PatientTraits {
        presentation,
        placenta,
        band_contrast,
    }
}

fn add_disk(buf: &mut [f32], layout: &Layout, center_row: f32, radius: f32, value: f32) {
    let w = layout.width;
    let r0 = (center_row - radius).floor().max(0.0) as usize;
    let r1 = ((center_row + radius).ceil() as usize).min(layout.height - 1);
    let c0 = (layout.blob_col - radius).floor().max(0.0) as usize;
    let c1 = ((layout.blob_col + radius).ceil() as usize).min(w - 1);
    let r2 = radius * radius;
    for r in r0..=r1 {
        let dy = r as f32 - center_row;
        for c in c0..=c1 {
            let dx = c as f32 - layout.blob_col;
            if dx * dx + dy * dy <= r2 {
                buf[r * w + c] += value;
            }
        }
    }
}

/// Noise-free intensity field of frame `k`.
fn render_clean(layout: &Layout, k: usize, len: usize, tag: SweepTag, traits: &PatientTraits) -> Vec<f32> {
    let (h, w) = (layout.height, layout.width);
    let mut buf = vec![BACKGROUND; h * w];

    let center = layout.band_row(k, len);
    let sigma = layout.band_sigma;
    let reach = (3.0 * sigma).ceil() as isize;
    for dr in -reach..=reach {
        let r = center as isize + dr;
        if r < 0 || r >= h as isize {
            continue;
        }
        let d = dr as f32;
        let v = traits.band_contrast * (-(d * d) / (2.0 * sigma * sigma)).exp();
        for px in &mut buf[r as usize * w..(r as usize + 1) * w] {
            *px += v;
        }
    }

    for r in 0..layout.marker_size {
        for px in &mut buf[r * w..r * w + layout.marker_size] {
            *px += MARKER_CONTRAST;
        }
    }

    let col = layout.tag_columns[tag.ordinal()];
    let (c0, c1) = (
        col.saturating_sub(STRIPE_HALF_WIDTH),
        (col + STRIPE_HALF_WIDTH).min(w - 1),
    );
    for r in layout.stripe_rows.clone() {
        for px in &mut buf[r * w + c0..=r * w + c1] {
            *px += STRIPE_CONTRAST;
        }
    }

    if Layout::blob_visible(k, len) {
        let rp = layout.presentation_radius(traits.presentation);
        let rl = layout.placenta_radius(traits.placenta);
        add_disk(&mut buf, layout, layout.presentation_row, rp, BLOB_CONTRAST);
        add_disk(&mut buf, layout, layout.placenta_row, rl, BLOB_CONTRAST);
    }
    buf
}

fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn generate_with_traits(
    patient_seed: u64,
    pid: &str,
    tag: SweepTag,
    traits: &PatientTraits,
    params: &GenParams,
) -> Sweep {
    let layout = Layout::for_params(params);
    let len = params.canonical_len;
    let noise =
        (params.noise_sigma > 0.0).then(|| Normal::new(0.0f32, params.noise_sigma as f32).expect("validated sigma"));
    let mut r = rng::rng_for(rng::mix(&[Stream::Noise as u64, patient_seed, tag.ordinal() as u64]));
    let frames = (0..len)
        .map(|k| {
            let clean = render_clean(&layout, k, len, tag, traits);
            let px = match &noise {
                Some(n) => clean.iter().map(|&v| quantize(v + n.sample(&mut r))).collect(),
                None => clean.iter().map(|&v| quantize(v)).collect(),
            };
            Frame::new(layout.height, layout.width, px).expect("layout dimensions")
        })
        .collect();
    let mut sweep = Sweep::new(frames, tag, pid, CANONICAL_MM_PER_PIXEL).expect("generated sweep is valid");
    sweep.canonical_len = len;
    sweep
}

/// Render one sweep. Labels are taken as given; band contrast comes from the
/// patient seed.
pub fn generate_sweep(
    patient_seed: u64,
    pid: &str,
    tag: SweepTag,
    presentation: PresentationLabel,
    placenta: PlacentaLabel,
    params: &GenParams,
) -> Sweep {
    let traits = PatientTraits {
        presentation,
        placenta,
        ..draw_traits(patient_seed, params)
    };
    generate_with_traits(patient_seed, pid, tag, &traits, params)
}

pub fn generate_study(patient_seed: u64, pid: &str, split: Split, params: &GenParams) -> Study {
    let traits = draw_traits(patient_seed, params);
    let sweeps = SweepTag::ALL
        .iter()
        .map(|&tag| generate_with_traits(patient_seed, pid, tag, &traits, params))
        .collect();
    Study::new(pid, sweeps, traits.presentation, traits.placenta, split).expect("one sweep per tag")
}

/// The study for patient `index` of the corpus described by `params`.
pub fn generate_patient(index: usize, params: &GenParams) -> Study {
    let seed = rng::patient_seed(params.master_seed, index as u64);
    generate_study(seed, &patient_id(index), params.split_of(index), params)
}

/// Write the full corpus (six BSWP files per patient plus `manifest.json`).
pub fn generate_corpus(params: &GenParams, out_dir: &Path, exec: Exec) -> Result<Manifest> {
    params.validate()?;
    let sweeps_dir = out_dir.join("sweeps");
    fs::create_dir_all(&sweeps_dir).map_err(|e| Error::io(&sweeps_dir, e))?;

    let entries = par::try_map_range(exec, 0..params.n_patients, |i| {
        let study = generate_patient(i, params);
        let mut sweeps = Vec::with_capacity(6);
        for s in &study.sweeps {
            let rel = format!("sweeps/{}_{}.bswp", study.patient_id, s.sweep_tag);
            bswp::write_sweep(s, &out_dir.join(&rel))?;
            sweeps.push(SweepEntry {
                tag: s.sweep_tag,
                path: rel,
                perturbation: None,
            });
        }
        Ok(ManifestEntry {
            patient_id: study.patient_id,
            split: study.split,
            presentation: study.presentation,
            placenta: study.placenta,
            sweeps,
        })
    })?;

    let manifest = Manifest {
        seed: params.master_seed,
        mixture: None,
        entries,
    };
    manifest::write_manifest(&manifest, &out_dir.join(manifest::MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> GenParams {
        GenParams {
            noise_sigma: 0.0,
            ..GenParams::default()
        }
    }

    #[test]
    fn tag_columns_are_mirror_pairs_and_off_center() {
        let l = Layout::new(224, 224, 16);
        for i in 0..6 {
            assert_eq!(l.tag_columns[i] + l.tag_columns[5 - i], 223);
            assert_ne!(2 * l.tag_columns[i], 223);
        }
        assert!(l.tag_columns.windows(2).all(|w| w[1] - w[0] > 30));
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GenParams::default();
        let a = generate_patient(3, &p);
        let b = generate_patient(3, &p);
        assert_eq!(a, b);
        let c = generate_patient(4, &p);
        assert_ne!(a.sweeps[0].frames()[0], c.sweeps[0].frames()[0]);
    }

    #[test]
    fn band_runs_top_to_bottom() {
        let s = generate_sweep(
            1,
            "p",
            SweepTag::M,
            PresentationLabel::Cephalic,
            PlacentaLabel::Anterior,
            &quiet(),
        );
        let row_sums = |f: &Frame| -> Vec<u32> {
            (0..f.height())
                .map(|r| f.row(r).iter().map(|&v| v as u32).sum())
                .collect()
        };
        // Neighbouring rows can quantize to the same sum, so the peak row only
        // has to be one of the maxima.
        let is_peak = |f: &Frame, row: usize| {
            let sums = row_sums(f);
            sums[row] == *sums.iter().max().unwrap()
        };
        assert!(is_peak(&s.frames()[0], 0));
        assert!(is_peak(&s.frames()[31], 223));
        let first_peak = |f: &Frame| {
            let sums = row_sums(f);
            let m = *sums.iter().max().unwrap();
            sums.iter().position(|&v| v == m).unwrap()
        };
        let peaks: Vec<usize> = s.frames().iter().map(first_peak).collect();
        assert!(peaks.windows(2).all(|w| w[0] < w[1]), "{peaks:?}");
    }

    #[test]
    fn tags_differ_only_in_stripe() {
        let p = quiet();
        let a = generate_sweep(
            9,
            "p",
            SweepTag::C1,
            PresentationLabel::Cephalic,
            PlacentaLabel::Posterior,
            &p,
        );
        let b = generate_sweep(
            9,
            "p",
            SweepTag::R1,
            PresentationLabel::Cephalic,
            PlacentaLabel::Posterior,
            &p,
        );
        let l = Layout::for_params(&p);
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            for r in 0..224 {
                for c in 0..224 {
                    if fa.get(r, c) != fb.get(r, c) {
                        assert!(l.stripe_rows.contains(&r), "diff outside stripe rows at {r},{c}");
                        let near = |col: usize| col.abs_diff(c) <= STRIPE_HALF_WIDTH;
                        assert!(near(l.tag_columns[0]) || near(l.tag_columns[5]));
                    }
                }
            }
        }
        assert_ne!(a.frames()[0], b.frames()[0]);
    }

    #[test]
    fn params_validation() {
        GenParams::default().validate().unwrap();
        let bad = GenParams {
            split_sizes: (1, 1, 1),
            ..GenParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = GenParams {
            canonical_len: 1,
            ..GenParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn label_priors_roughly_hold() {
        let p = GenParams::default();
        let n = 4000;
        let ceph = (0..n)
            .filter(|&i| draw_traits(rng::patient_seed(7, i), &p).presentation == PresentationLabel::Cephalic)
            .count();
        let f = ceph as f64 / n as f64;
        assert!((f - 0.7).abs() < 0.03, "{f}");
    }
}

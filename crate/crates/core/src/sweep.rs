//! Core value types: frames, sweeps, studies and their labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of frames in a preprocessed sweep.
pub const CANONICAL_LEN: usize = 32;
/// Default preprocessed frame edge length in pixels.
pub const CANONICAL_SIZE: usize = 224;
/// Default physical resolution after normalization.
pub const CANONICAL_MM_PER_PIXEL: f32 = 0.75;

/// A single 8-bit grayscale image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "frame of {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[u8] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

/// The six protocol sweeps, in fixed ordinal order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SweepTag {
    C1,
    C2,
    C3,
    L1,
    M,
    R1,
}

impl SweepTag {
    pub const ALL: [SweepTag; 6] = [
        SweepTag::C1,
        SweepTag::C2,
        SweepTag::C3,
        SweepTag::L1,
        SweepTag::M,
        SweepTag::R1,
    ];

    #[inline]
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        Self::ALL.get(ordinal).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepTag::C1 => "C1",
            SweepTag::C2 => "C2",
            SweepTag::C3 => "C3",
            SweepTag::L1 => "L1",
            SweepTag::M => "M",
            SweepTag::R1 => "R1",
        }
    }
}

impl fmt::Display for SweepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep tag {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PresentationLabel {
    Cephalic,
    NonCephalic,
}

impl PresentationLabel {
    pub const ALL: [PresentationLabel; 2] = [PresentationLabel::Cephalic, PresentationLabel::NonCephalic];

    pub fn as_str(self) -> &'static str {
        match self {
            PresentationLabel::Cephalic => "Cephalic",
            PresentationLabel::NonCephalic => "NonCephalic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlacentaLabel {
    Anterior,
    Posterior,
}

impl PlacentaLabel {
    pub const ALL: [PlacentaLabel; 2] = [PlacentaLabel::Anterior, PlacentaLabel::Posterior];

    pub fn as_str(self) -> &'static str {
        match self {
            PlacentaLabel::Anterior => "Anterior",
            PlacentaLabel::Posterior => "Posterior",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// An ordered stack of equally sized frames plus acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    frames: Vec<Frame>,
    pub sweep_tag: SweepTag,
    pub patient_id: String,
    pub mm_per_pixel: f32,
    pub canonical_len: usize,
}

impl Sweep {
    pub fn new(
        frames: Vec<Frame>,
        sweep_tag: SweepTag,
        patient_id: impl Into<String>,
        mm_per_pixel: f32,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidArgument("sweep has no frames".into()));
        };
        let (h, w) = (first.height(), first.width());
        if let Some(i) = frames.iter().position(|f| f.height() != h || f.width() != w) {
            return Err(Error::InvalidArgument(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                frames[i].height(),
                frames[i].width()
            )));
        }
        if !(mm_per_pixel > 0.0 && mm_per_pixel.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mm_per_pixel must be positive, got {mm_per_pixel}"
            )));
        }
        Ok(Self {
            frames,
            sweep_tag,
            patient_id: patient_id.into(),
            mm_per_pixel,
            canonical_len: CANONICAL_LEN,
        })
    }

    /// Same metadata, new frames. Frames must be non-empty and share dimensions.
    pub fn with_frames(&self, frames: Vec<Frame>) -> Result<Self> {
        let mut out = Sweep::new(frames, self.sweep_tag, self.patient_id.clone(), self.mm_per_pixel)?;
        out.canonical_len = self.canonical_len;
        Ok(out)
    }

    #[inline]
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false for a constructed sweep; provided for API symmetry with `len`.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
}

/// One patient's six tagged sweeps plus patient-level labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub patient_id: String,
    pub sweeps: Vec<Sweep>,
    pub presentation: PresentationLabel,
    pub placenta: PlacentaLabel,
    pub split: Split,
}

impl Study {
    pub fn new(
        patient_id: impl Into<String>,
        mut sweeps: Vec<Sweep>,
        presentation: PresentationLabel,
        placenta: PlacentaLabel,
        split: Split,
    ) -> Result<Self> {
        sweeps.sort_by_key(|s| s.sweep_tag);
        let tags: Vec<SweepTag> = sweeps.iter().map(|s| s.sweep_tag).collect();
        if tags != SweepTag::ALL {
            return Err(Error::InvalidArgument(format!(
                "study needs exactly one sweep per tag, got {tags:?}"
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            sweeps,
            presentation,
            placenta,
            split,
        })
    }

    pub fn sweep(&self, tag: SweepTag) -> &Sweep {
        &self.sweeps[tag.ordinal()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_bad_dimensions() {
        assert!(Frame::new(0, 3, vec![]).is_err());
        assert!(Frame::new(2, 2, vec![0; 3]).is_err());
        assert!(Frame::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn sweep_rejects_mixed_sizes_and_empty() {
        let a = Frame::filled(2, 2, 0).unwrap();
        let b = Frame::filled(3, 2, 0).unwrap();
        assert!(Sweep::new(vec![], SweepTag::C1, "p", 0.75).is_err());
        assert!(Sweep::new(vec![a.clone(), b], SweepTag::C1, "p", 0.75).is_err());
        assert!(Sweep::new(vec![a.clone()], SweepTag::C1, "p", 0.0).is_err());
        assert!(Sweep::new(vec![a], SweepTag::C1, "p", 0.75).is_ok());
    }

    #[test]
    fn tag_ordinals_and_parsing() {
        for (i, t) in SweepTag::ALL.iter().enumerate() {
            assert_eq!(t.ordinal(), i);
            assert_eq!(t.as_str().parse::<SweepTag>().unwrap(), *t);
        }
        assert!("X9".parse::<SweepTag>().is_err());
    }

    #[test]
    fn study_requires_all_six_tags() {
        let f = Frame::filled(1, 1, 0).unwrap();
        let mk = |t| Sweep::new(vec![f.clone()], t, "p", 1.0).unwrap();
        let mut sweeps: Vec<_> = SweepTag::ALL.iter().rev().map(|&t| mk(t)).collect();
        let study = Study::new(
            "p",
            sweeps.clone(),
            PresentationLabel::Cephalic,
            PlacentaLabel::Anterior,
            Split::Test,
        )
        .unwrap();
        assert_eq!(study.sweep(SweepTag::L1).sweep_tag, SweepTag::L1);
        sweeps[0] = mk(SweepTag::C1);
        assert!(Study::new(
            "p",
            sweeps,
            PresentationLabel::Cephalic,
            PlacentaLabel::Anterior,
            Split::Test
        )
        .is_err());
    }
}

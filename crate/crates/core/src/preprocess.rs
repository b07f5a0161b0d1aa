//! Preprocessing geometry: temporal subsampling, spatial resizing and
//! physical-resolution normalization.

use crate::error::{Error, Result};
use crate::sweep::{Frame, Sweep};

/// Source index for output position `i` when mapping `src_len` frames onto
/// `target_len` equally spaced slots: `floor(i * src_len / target_len)`.
#[inline]
pub fn subsample_index(i: usize, src_len: usize, target_len: usize) -> usize {
    i * src_len / target_len
}

/// Select `target_len` equally spaced frames. Upsampling duplicates frames.
pub fn subsample_temporal(sweep: &Sweep, target_len: usize) -> Result<Sweep> {
    if target_len == 0 {
        return Err(Error::InvalidArgument("target_len must be >= 1".into()));
    }
    let t = sweep.len();
    let frames = (0..target_len)
        .map(|i| sweep.frames()[subsample_index(i, t, target_len)].clone())
        .collect();
    sweep.with_frames(frames)
}

/// Bilinear resize with corner-aligned sampling (output corners land exactly
/// on input corners).
pub fn resize_frame(frame: &Frame, target_h: usize, target_w: usize) -> Result<Frame> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {target_h}x{target_w}"
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    if (h, w) == (target_h, target_w) {
        return Ok(frame.clone());
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(h, target_h), scale(w, target_w));

    // Column taps are shared by every row.
    let col_taps: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|c| {
            let x = c as f64 * sx;
            let x0 = (x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect();

    let src = frame.pixels();
    let mut out = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let y = r as f64 * sy;
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        let row0 = &src[y0 * w..(y0 + 1) * w];
        let row1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &col_taps {
            let top = row0[x0] as f64 * (1.0 - fx) + row0[x1] as f64 * fx;
            let bottom = row1[x0] as f64 * (1.0 - fx) + row1[x1] as f64 * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Frame::new(target_h, target_w, out)
}

pub fn resize_spatial(sweep: &Sweep, target_h: usize, target_w: usize) -> Result<Sweep> {
    let frames = sweep
        .frames()
        .iter()
        .map(|f| resize_frame(f, target_h, target_w))
        .collect::<Result<Vec<_>>>()?;
    sweep.with_frames(frames)
}

/// Rescale frames so one pixel spans `target_mm_per_px` millimeters.
pub fn normalize_resolution(sweep: &Sweep, target_mm_per_px: f32) -> Result<Sweep> {
    if !(target_mm_per_px > 0.0 && target_mm_per_px.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target resolution must be positive, got {target_mm_per_px}"
        )));
    }
    let s = sweep.mm_per_pixel as f64 / target_mm_per_px as f64;
    let th = ((sweep.height() as f64 * s).round() as usize).max(1);
    let tw = ((sweep.width() as f64 * s).round() as usize).max(1);
    let mut out = resize_spatial(sweep, th, tw)?;
    out.mm_per_pixel = target_mm_per_px;
    Ok(out)
}

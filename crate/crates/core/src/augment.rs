//! Feature Erasing and Time Erasing for `[T, N, N]` RF tensors.
//!
//! Both erasers only write zeros; every entry they do not select is copied
//! bit-for-bit.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    FeatureOnly,
    TimeOnly,
    Both,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::FeatureOnly => "feature_only",
            AugmentMode::TimeOnly => "time_only",
            AugmentMode::Both => "both",
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "feature_only" => Ok(AugmentMode::FeatureOnly),
            "time_only" => Ok(AugmentMode::TimeOnly),
            "both" => Ok(AugmentMode::Both),
            _ => Err(Error::Config(format!(
                "augment mode `{s}` (expected none, feature_only, time_only, both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPolicy {
    /// Spatial cells erased across all frames (`m`).
    pub erase_cells: usize,
    /// Whole frames erased (`q`).
    pub erase_frames: usize,
    pub mode: AugmentMode,
}

impl AugmentPolicy {
    /// `m = ceil(0.1 N^2)`, `q = ceil(0.1 T)` (capped at `T - 1`), both erasers.
    pub fn default_for(grid: usize, frames: usize) -> Self {
        AugmentPolicy {
            erase_cells: (grid * grid).div_ceil(10),
            erase_frames: frames.div_ceil(10).min(frames.saturating_sub(1)),
            mode: AugmentMode::Both,
        }
    }

    pub fn identity() -> Self {
        AugmentPolicy {
            erase_cells: 0,
            erase_frames: 0,
            mode: AugmentMode::None,
        }
    }

    pub fn validate(&self, grid: usize, frames: usize) -> Result<()> {
        if self.erase_cells > grid * grid {
            return Err(Error::Config(format!(
                "erase_cells {} exceeds {} spatial cells",
                self.erase_cells,
                grid * grid
            )));
        }
        if self.erase_frames >= frames {
            return Err(Error::Config(format!(
                "erase_frames {} must be below the frame count {frames}",
                self.erase_frames
            )));
        }
        Ok(())
    }
}

fn dims(op: &'static str, sample: &Tensor) -> Result<(usize, usize)> {
    match sample.shape() {
        &[t, n, m] if n == m => Ok((t, n)),
        s => Err(Error::dim(op, "sample shape", "[T, N, N]", format!("{s:?}"))),
    }
}

/// Zero `m` distinct spatial cells, drawn uniformly without replacement, in
/// every frame.
pub fn feature_erase<R: Rng + ?Sized>(sample: &Tensor, m: usize, rng: &mut R) -> Result<Tensor> {
    let (t, n) = dims("feature_erase", sample)?;
    let cells = n * n;
    if m > cells {
        return Err(Error::Config(format!("feature_erase: m = {m} exceeds {cells} cells")));
    }
    let mut out = sample.clone();
    if m == 0 {
        return Ok(out);
    }
    let picked = index::sample(rng, cells, m);
    let data = out.data_mut();
    for frame in 0..t {
        for c in picked.iter() {
            data[frame * cells + c] = 0.0;
        }
    }
    Ok(out)
}

/// Zero `q` distinct whole frames, drawn uniformly without replacement.
pub fn time_erase<R: Rng + ?Sized>(sample: &Tensor, q: usize, rng: &mut R) -> Result<Tensor> {
    let (t, n) = dims("time_erase", sample)?;
    if q >= t {
        return Err(Error::Config(format!("time_erase: q = {q} must be below T = {t}")));
    }
    let mut out = sample.clone();
    if q == 0 {
        return Ok(out);
    }
    let cells = n * n;
    let data = out.data_mut();
    for frame in index::sample(rng, t, q).iter() {
        data[frame * cells..(frame + 1) * cells].fill(0.0);
    }
    Ok(out)
}

/// Apply `policy`; with [`AugmentMode::Both`] feature erasing runs first.
pub fn augment<R: Rng + ?Sized>(sample: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor> {
    match policy.mode {
        AugmentMode::None => Ok(sample.clone()),
        AugmentMode::FeatureOnly => feature_erase(sample, policy.erase_cells, rng),
        AugmentMode::TimeOnly => time_erase(sample, policy.erase_frames, rng),
        AugmentMode::Both => {
            let f = feature_erase(sample, policy.erase_cells, rng)?;
            time_erase(&f, policy.erase_frames, rng)
        }
    }
}

//! Seeded synthetic RF gestures.
//!
//! Each class is a 2-D trajectory traced by a Gaussian blob of energy over
//! `T` frames of an `N x N` grid. Domain factors perturb the rendering:
//! location translates the trajectory, orientation rotates it, subject scales
//! its extent, speed profile and amplitude, environment adds a structured
//! noise floor. Values are rounded to `f32` so that a dataset written to disk
//! and loaded back compares equal.

use std::f64::consts::PI;

use rand::Rng;

use super::{Dataset, DomainTag, GestureSample};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Unit offsets used for the location factor; cycled with growing magnitude
/// when there are more locations than entries.
const LOCATION_OFFSETS: [(f64, f64); 5] = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];

pub const MAX_CLASSES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_count: usize,
    pub grid: usize,
    pub frames: usize,
    pub environments: usize,
    pub subjects: usize,
    pub locations: usize,
    pub orientations: usize,
    pub samples_per_cell: usize,
    /// Translation per location step, in cells.
    pub location_shift: f64,
    /// Rotation between neighbouring orientations, in degrees.
    pub orientation_step_deg: f64,
    /// Per-sample uniform rotation noise, in degrees either side.
    pub orientation_jitter_deg: f64,
    /// Relative extent/speed/amplitude change between neighbouring subjects.
    pub subject_scale_step: f64,
    /// Amplitude of the per-environment structured floor.
    pub environment_floor: f64,
    /// Amplitude of i.i.d. uniform noise.
    pub noise_level: f64,
    /// Trajectory radius in cells before subject scaling.
    pub radius: f64,
    pub blob_sigma: f64,
    pub peak_amplitude: f64,
    /// Per-sample positional jitter, in cells per axis.
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_count: 6,
            grid: 16,
            frames: 24,
            environments: 2,
            subjects: 4,
            locations: 5,
            orientations: 4,
            samples_per_cell: 1,
            location_shift: 1.5,
            orientation_step_deg: 15.0,
            orientation_jitter_deg: 0.0,
            subject_scale_step: 0.08,
            environment_floor: 0.15,
            noise_level: 0.05,
            radius: 4.0,
            blob_sigma: 1.2,
            peak_amplitude: 1.0,
            jitter: 0.5,
        }
    }
}

/// Index of one cell of the domain grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    environment: usize,
    subject: usize,
    location: usize,
    orientation: usize,
}

impl SynthSpec {
    pub fn domain_cells(&self) -> usize {
        self.environments * self.subjects * self.locations * self.orientations
    }

    pub fn sample_count(&self) -> usize {
        self.class_count * self.domain_cells() * self.samples_per_cell
    }

    fn extent_factor(&self, subject: usize) -> f64 {
        1.0 + self.subject_scale_step * (subject as f64 - (self.subjects as f64 - 1.0) / 2.0)
    }

    fn max_extent_factor(&self) -> f64 {
        self.extent_factor(0).max(self.extent_factor(self.subjects.saturating_sub(1)))
    }

    fn location_offset(&self, location: usize) -> (f64, f64) {
        let (ux, uy) = LOCATION_OFFSETS[location % LOCATION_OFFSETS.len()];
        let ring = 1.0 + (location / LOCATION_OFFSETS.len()) as f64;
        (ux * ring * self.location_shift, uy * ring * self.location_shift)
    }

    /// Checks counts and that every trajectory stays inside the grid.
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.class_count) {
            return Err(Error::Spec(format!("class_count must be in 2..={MAX_CLASSES}")));
        }
        if self.grid < 2 || self.frames < 1 {
            return Err(Error::Spec("grid must be >= 2 and frames >= 1".into()));
        }
        if self.environments == 0
            || self.subjects == 0
            || self.locations == 0
            || self.orientations == 0
            || self.samples_per_cell == 0
        {
            return Err(Error::Spec("every domain count and samples_per_cell must be >= 1".into()));
        }
        let nonneg = [
            self.location_shift,
            self.orientation_step_deg,
            self.orientation_jitter_deg,
            self.subject_scale_step,
            self.environment_floor,
            self.noise_level,
            self.radius,
            self.jitter,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Spec("shift magnitudes must be finite and >= 0".into()));
        }
        if !(self.blob_sigma > 0.0 && self.peak_amplitude > 0.0) {
            return Err(Error::Spec("blob_sigma and peak_amplitude must be positive".into()));
        }
        let min_extent = self.extent_factor(0).min(self.extent_factor(self.subjects - 1));
        if min_extent <= 0.0 {
            return Err(Error::Spec("subject_scale_step shrinks trajectories to nothing".into()));
        }
        let shift = (0..self.locations)
            .map(|l| {
                let (x, y) = self.location_offset(l);
                x.abs().max(y.abs())
            })
            .fold(0.0, f64::max);
        // Trajectory shapes have unit norm, so rotation cannot enlarge them.
        let reach = shift + self.jitter + self.radius * self.max_extent_factor();
        let centre = (self.grid as f64 - 1.0) / 2.0;
        if centre - reach < 0.0 {
            return Err(Error::Spec(format!(
                "trajectories reach {reach:.2} cells from the centre but the grid allows {centre:.2}"
            )));
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let (ne, ns, nl, no) = (self.environments, self.subjects, self.locations, self.orientations);
        (0..ne).flat_map(move |e| {
            (0..ns).flat_map(move |s| {
                (0..nl).flat_map(move |l| {
                    (0..no).map(move |o| Cell {
                        environment: e,
                        subject: s,
                        location: l,
                        orientation: o,
                    })
                })
            })
        })
    }
}

/// Unit-norm trajectory point of `class` at progress `u` in `[0, 1]`.
fn shape_point(class: usize, u: f64) -> (f64, f64) {
    let d = std::f64::consts::FRAC_1_SQRT_2;
    match class {
        0 => (2.0 * u - 1.0, 0.0),
        1 => (1.0 - 2.0 * u, 0.0),
        2 => (0.0, 2.0 * u - 1.0),
        3 => (0.0, 1.0 - 2.0 * u),
        4 => ((2.0 * PI * u).cos(), (2.0 * PI * u).sin()),
        5 => ((2.0 * PI * u).cos(), -(2.0 * PI * u).sin()),
        6 => ((2.0 * u - 1.0) * d, (2.0 * u - 1.0) * d),
        _ => ((2.0 * u - 1.0) * d, (1.0 - 2.0 * u) * d),
    }
}

fn floor_pattern(spec: &SynthSpec, environment: usize, row: usize, col: usize) -> f64 {
    let n = spec.grid as f64;
    let fx = 1.0 + environment as f64;
    let fy = ((2 * environment) % 3) as f64;
    let phase = 1.3 * environment as f64;
    let arg = 2.0 * PI * (fx * col as f64 + fy * row as f64) / n + phase;
    spec.environment_floor * 0.5 * (1.0 + arg.sin())
}

/// Nearest `f32` value, stepped down if rounding crossed `ceiling`.
fn to_f32_below(v: f64, ceiling: f64) -> f64 {
    let r = v as f32;
    if r as f64 > ceiling {
        r.next_down() as f64
    } else {
        r as f64
    }
}

fn cell_tag(cell: Cell) -> DomainTag {
    DomainTag::new(
        format!("e{}", cell.environment + 1),
        format!("s{}", cell.subject + 1),
        format!("l{}", cell.location + 1),
        format!("o{}", cell.orientation + 1),
    )
}

/// Render one sample. The output depends only on the arguments.
///
/// `domain` is `(environment, subject, location, orientation)`, zero-based.
pub fn render_sample(
    spec: &SynthSpec,
    class: usize,
    domain: (usize, usize, usize, usize),
    repetition: usize,
    seed: u64,
) -> Tensor {
    let (e, s, l, o) = domain;
    let mut rng = stream(
        seed,
        Purpose::Synth,
        &[class as u64, e as u64, s as u64, l as u64, o as u64, repetition as u64],
    );
    let n = spec.grid;
    let t_len = spec.frames;
    let centre = (n as f64 - 1.0) / 2.0;
    let (lx, ly) = spec.location_offset(l);
    let jx = rng.random_range(-1.0..=1.0) * spec.jitter;
    let jy = rng.random_range(-1.0..=1.0) * spec.jitter;
    let amp_jitter: f64 = rng.random_range(0.85..=1.0);
    let turn = rng.random_range(-1.0..=1.0) * spec.orientation_jitter_deg;

    let angle = ((o as f64 - (spec.orientations as f64 - 1.0) / 2.0) * spec.orientation_step_deg + turn) * PI / 180.0;
    let (sin_a, cos_a) = angle.sin_cos();
    let extent = spec.radius * spec.extent_factor(s);
    // Faster subjects finish the motion early.
    let warp = spec.extent_factor(s).max(0.05);
    let amplitude = spec.peak_amplitude * amp_jitter * (1.0 - 0.5 * spec.subject_scale_step * s as f64).max(0.2);
    let two_sigma_sq = 2.0 * spec.blob_sigma * spec.blob_sigma;

    let mut data = Vec::with_capacity(t_len * n * n);
    for t in 0..t_len {
        let progress = if t_len == 1 { 0.0 } else { t as f64 / (t_len as f64 - 1.0) };
        let (px, py) = shape_point(class, progress.powf(warp));
        let x = centre + lx + jx + extent * (cos_a * px - sin_a * py);
        let y = centre + ly + jy + extent * (sin_a * px + cos_a * py);
        for row in 0..n {
            for col in 0..n {
                let d2 = (col as f64 - x).powi(2) + (row as f64 - y).powi(2);
                let mut v = amplitude * (-d2 / two_sigma_sq).exp() + floor_pattern(spec, e, row, col);
                if spec.noise_level > 0.0 {
                    v += spec.noise_level * rng.random::<f64>();
                }
                data.push(to_f32_below(v.clamp(0.0, spec.peak_amplitude), spec.peak_amplitude));
            }
        }
    }
    Tensor::new(vec![t_len, n, n], data).expect("synthetic geometry")
}

/// Generate the full `class x domain-cell x repetition` grid.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.sample_count());
    for cell in spec.cells() {
        for class in 0..spec.class_count {
            for k in 0..spec.samples_per_cell {
                let domain = (cell.environment, cell.subject, cell.location, cell.orientation);
                let tag = cell_tag(cell);
                samples.push(GestureSample {
                    id: format!(
                        "g{class}_{}_{}_{}_{}_r{k}",
                        tag.environment, tag.subject, tag.location, tag.orientation
                    ),
                    frames: render_sample(spec, class, domain, k, seed),
                    label: Some(class),
                    domain: tag,
                });
            }
        }
    }
    Dataset::new(spec.class_count, samples)
}

//! Domain-tagged gesture samples, on-disk format, leave-one-domain-out
//! splits and a seeded synthetic generator.

mod io;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

pub use io::{
    decode_tensor, encode_tensor, load_dataset, read_sample, read_tensor, write_dataset,
    write_sample, write_tensor, MANIFEST_FILE, MANIFEST_HEADER, TENSOR_MAGIC, TENSOR_VERSION,
};
pub use split::{split_leave_one_out, DomainSplit, TargetTruth};
pub use synth::{render_sample, synth_generate, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Manifest encoding of a missing label.
pub const UNLABELED: i64 = -1;

/// The four collection factors a sample is tagged with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainTag {
    pub environment: String,
    pub subject: String,
    pub location: String,
    pub orientation: String,
}

impl DomainTag {
    pub fn new(
        environment: impl Into<String>,
        subject: impl Into<String>,
        location: impl Into<String>,
        orientation: impl Into<String>,
    ) -> Self {
        DomainTag {
            environment: environment.into(),
            subject: subject.into(),
            location: location.into(),
            orientation: orientation.into(),
        }
    }

    pub fn get(&self, factor: Factor) -> &str {
        match factor {
            Factor::Environment => &self.environment,
            Factor::Subject => &self.subject,
            Factor::Location => &self.location,
            Factor::Orientation => &self.orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Environment,
    Subject,
    Location,
    Orientation,
}

impl Factor {
    pub const ALL: [Factor; 4] = [
        Factor::Environment,
        Factor::Subject,
        Factor::Location,
        Factor::Orientation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Environment => "environment",
            Factor::Subject => "subject",
            Factor::Location => "location",
            Factor::Orientation => "orientation",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown domain factor `{s}`")))
    }
}

/// One recorded gesture: `frames` is `[T, N, N]`, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub id: String,
    pub frames: Tensor,
    pub label: Option<usize>,
    pub domain: DomainTag,
}

/// Frame geometry shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub frames: usize,
    pub grid: usize,
}

impl Geometry {
    pub fn of(t: &Tensor) -> Option<Self> {
        match t.shape() {
            &[frames, n, m] if n == m => Some(Geometry { frames, grid: n }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<GestureSample>,
    class_count: usize,
    geometry: Option<Geometry>,
}

impl Dataset {
    /// Validates ids, labels, geometry and frame values.
    pub fn new(class_count: usize, samples: Vec<GestureSample>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Load(format!("class count {class_count} < 2")));
        }
        let mut ids = HashSet::new();
        let mut geometry: Option<Geometry> = None;
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Load(format!("duplicate sample id `{}`", s.id)));
            }
            let g = Geometry::of(&s.frames).ok_or_else(|| {
                Error::Load(format!(
                    "sample `{}`: frames must be [T, N, N], got {:?}",
                    s.id,
                    s.frames.shape()
                ))
            })?;
            if g.grid < 2 {
                return Err(Error::Load(format!("sample `{}`: grid size {} < 2", s.id, g.grid)));
            }
            match geometry {
                None => geometry = Some(g),
                Some(expected) if expected != g => {
                    return Err(Error::Load(format!(
                        "sample `{}`: geometry {}x{}x{} differs from dataset geometry {}x{}x{}",
                        s.id, g.frames, g.grid, g.grid, expected.frames, expected.grid, expected.grid
                    )));
                }
                Some(_) => {}
            }
            if let Some(l) = s.label {
                if l >= class_count {
                    return Err(Error::Load(format!(
                        "sample `{}`: label {l} outside 0..{class_count}",
                        s.id
                    )));
                }
            }
            if s.frames.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Load(format!("sample `{}`: frames must be finite and >= 0", s.id)));
            }
            for f in Factor::ALL {
                if s.domain.get(f).is_empty() {
                    return Err(Error::Load(format!("sample `{}`: empty {f}", s.id)));
                }
            }
        }
        Ok(Dataset {
            samples,
            class_count,
            geometry,
        })
    }

    pub fn samples(&self) -> &[GestureSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `None` for an empty dataset.
    pub fn geometry(&self) -> Option<Geometry> {
        self.geometry
    }

    /// Distinct values of `factor`, sorted.
    pub fn domain_values(&self, factor: Factor) -> Vec<String> {
        let mut v: Vec<String> = self
            .samples
            .iter()
            .map(|s| s.domain.get(factor).to_string())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Number of samples per class; unlabeled samples are not counted.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }
}

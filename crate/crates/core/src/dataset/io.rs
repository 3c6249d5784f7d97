//! Tensor container and `manifest.csv` handling.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! offset 0   magic  b"RFGT"
//! offset 4   version u32 (= 1)
//! offset 8   rank u32
//! offset 12  dims, rank x u32
//! ...        payload, product(dims) x f32, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{Dataset, DomainTag, GestureSample, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"RFGT";
pub const TENSOR_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 7] = [
    "id",
    "file",
    "label",
    "environment",
    "subject",
    "location",
    "orientation",
];

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.base + self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decode one container record from the start of `bytes`. `base_offset` is
/// added to reported error offsets. Returns the tensor and the number of
/// bytes consumed.
pub fn decode_tensor(bytes: &[u8], base_offset: u64) -> Result<(Tensor, usize)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        base: base_offset,
    };
    let magic = c.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format {
            offset: base_offset,
            message: format!("bad magic {magic:02x?}, expected \"RFGT\""),
        });
    }
    let version = c.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::Format {
            offset: base_offset + 4,
            message: format!("unsupported version {version}"),
        });
    }
    let rank = c.u32("rank")? as usize;
    if rank == 0 {
        return Err(Error::Format {
            offset: base_offset + 8,
            message: "rank 0".into(),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for i in 0..rank {
        let at = c.pos;
        let d = c.u32("dims")? as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: base_offset + at as u64,
                message: format!("dimension {i} is zero"),
            });
        }
        numel = numel.checked_mul(d).ok_or_else(|| Error::Format {
            offset: base_offset + at as u64,
            message: "element count overflows".into(),
        })?;
        dims.push(d);
    }
    let payload_len = numel.checked_mul(4).ok_or_else(|| Error::Format {
        offset: base_offset + c.pos as u64,
        message: "payload size overflows".into(),
    })?;
    let payload = c.take(payload_len, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((Tensor::new(dims, data)?, c.pos))
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

/// Read a file holding exactly one container record.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_tensor(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            message: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(t)
}

/// Writes the sample's frames. Id, label and domain belong in the manifest.
pub fn write_sample(sample: &GestureSample, path: &Path) -> Result<()> {
    write_tensor(&sample.frames, path)
}

/// Reads the frames of one sample file.
pub fn read_sample(path: &Path) -> Result<Tensor> {
    read_tensor(path)
}

fn file_name_for(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{clean}.rfgt")
}

/// Write every sample as `<id>.rfgt` plus `manifest.csv` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest)
        .map_err(|e| Error::io(&manifest, std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::io(&manifest, std::io::Error::other(e));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    let mut names = HashSet::new();
    for s in ds.samples() {
        let file = file_name_for(&s.id);
        if !names.insert(file.clone()) {
            return Err(Error::Usage(format!("sample ids collide on file name `{file}`")));
        }
        write_sample(s, &dir.join(&file))?;
        let label = s.label.map_or(UNLABELED, |l| l as i64).to_string();
        w.write_record([
            s.id.as_str(),
            &file,
            &label,
            &s.domain.environment,
            &s.domain.subject,
            &s.domain.location,
            &s.domain.orientation,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))
}

/// Load `dir/manifest.csv` and every tensor it references.
pub fn load_dataset(dir: &Path, class_count: usize) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST_FILE);
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest)
        .map_err(|e| Error::Load(format!("{}: {e}", manifest.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::Load(format!("{}: {e}", manifest.display())))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Load(format!(
            "{}: header must be `{}`",
            manifest.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Load(format!("{}: {e}", manifest.display())))?;
        let row = line + 2;
        if rec.len() != 7 {
            return Err(Error::Load(format!("manifest row {row}: expected 7 fields")));
        }
        let label: i64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Load(format!("manifest row {row}: bad label `{}`", &rec[2])))?;
        let label = match label {
            UNLABELED => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(Error::Load(format!("manifest row {row}: bad label {l}"))),
        };
        let path = dir.join(&rec[1]);
        if !path.is_file() {
            return Err(Error::Load(format!(
                "manifest row {row}: missing tensor file {}",
                path.display()
            )));
        }
        let frames = read_tensor(&path).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        samples.push(GestureSample {
            id: rec[0].to_string(),
            frames,
            label,
            domain: DomainTag::new(&rec[3], &rec[4], &rec[5], &rec[6]),
        });
    }
    Dataset::new(class_count, samples)
}

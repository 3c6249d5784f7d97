//! Dataset container, manifest and synthetic generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rf_uda::dataset::{load_dataset, synth_generate, write_dataset, write_sample, MANIFEST_FILE};
use rf_uda::rng::{fnv1a, stream, Purpose};
use rf_uda::{Dataset, DomainTag, Error, GestureSample, SynthSpec, Tensor};

fn random_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, Purpose::Synth, &[]);
    let samples = (0..n)
        .map(|i| {
            let data = (0..3 * 5 * 5).map(|_| rng.random_range(0.0..10.0)).collect();
            let label = match rng.random_range(0..5) {
                0 => None,
                l => Some(l - 1),
            };
            GestureSample {
                id: format!("s{i:03}"),
                frames: Tensor::new(vec![3, 5, 5], data).unwrap(),
                label,
                domain: DomainTag::new(
                    format!("e{}", rng.random_range(0..3)),
                    format!("u{}", rng.random_range(0..4)),
                    format!("l{}", rng.random_range(0..5)),
                    format!("o{}", rng.random_range(0..4)),
                ),
            }
        })
        .collect();
    Dataset::new(4, samples).unwrap()
}

/// Every file of a directory, by name.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn checksum(files: &BTreeMap<String, Vec<u8>>) -> u64 {
    let mut all = Vec::new();
    for (name, bytes) in files {
        all.extend_from_slice(name.as_bytes());
        all.extend_from_slice(bytes);
    }
    fnv1a(&all)
}

#[test]
fn write_read_write_is_byte_stable() {
    let ds = random_dataset(100, 3);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_dataset(&ds, &a).unwrap();
    let back = load_dataset(&a, 4).unwrap();
    write_dataset(&back, &b).unwrap();
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 101);
    assert_eq!(checksum(&sa), checksum(&sb));
    assert_eq!(sa, sb);

    assert_eq!(back.len(), 100);
    for (orig, read) in ds.samples().iter().zip(back.samples()) {
        assert_eq!(orig.id, read.id);
        assert_eq!(orig.label, read.label);
        assert_eq!(orig.domain, read.domain);
        for (&x, &y) in orig.frames.data().iter().zip(read.frames.data()) {
            assert_eq!(x as f32 as f64, y);
        }
    }
    assert_eq!(load_dataset(&b, 4).unwrap(), back);
}

fn written(n: usize) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(&random_dataset(n, 5), tmp.path()).unwrap();
    tmp
}

#[test]
fn malformed_tensor_header_reports_offset() {
    let tmp = written(3);
    let file = tmp.path().join("s001.rfgt");
    let mut bytes = fs::read(&file).unwrap();
    bytes[0] = b'X';
    fs::write(&file, &bytes).unwrap();
    match load_dataset(tmp.path(), 4) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, 0);
            assert!(message.contains("s001.rfgt"), "{message}");
        }
        other => panic!("expected a format error, got {other:?}"),
    }

    let file = tmp.path().join("s002.rfgt");
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..14]).unwrap();
    fs::write(tmp.path().join("s001.rfgt"), fs::read(tmp.path().join("s000.rfgt")).unwrap()).unwrap();
    match load_dataset(tmp.path(), 4) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn malformed_manifest_reports_row() {
    let tmp = written(3);
    let manifest = tmp.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen("label", "lbl", 1)).unwrap();
    let err = load_dataset(tmp.path(), 4).unwrap_err();
    assert!(matches!(err, Error::Load(ref m) if m.contains("header")), "{err}");

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = lines[2].replacen(",s001.rfgt,", ",gone.rfgt,", 1);
    fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    let err = load_dataset(tmp.path(), 4).unwrap_err();
    assert!(matches!(err, Error::Load(ref m) if m.contains("row 3") && m.contains("missing")), "{err}");
}

#[test]
fn inconsistent_contents_are_rejected() {
    let tmp = written(3);
    let odd = GestureSample {
        id: "s001".into(),
        frames: Tensor::zeros(&[3, 4, 4]),
        label: Some(0),
        domain: DomainTag::new("e", "u", "l", "o"),
    };
    write_sample(&odd, &tmp.path().join("s001.rfgt")).unwrap();
    let err = load_dataset(tmp.path(), 4).unwrap_err();
    assert!(matches!(err, Error::Load(ref m) if m.contains("geometry")), "{err}");

    let tmp = written(3);
    let manifest = tmp.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dup = lines[1].replacen("s000,", "s001,", 1);
    fs::write(&manifest, [lines[0], &dup, lines[2]].join("\n") + "\n").unwrap();
    let err = load_dataset(tmp.path(), 4).unwrap_err();
    assert!(matches!(err, Error::Load(ref m) if m.contains("duplicate")), "{err}");

    assert!(matches!(load_dataset(&tmp.path().join("nowhere"), 4), Err(Error::Load(_))));
}

#[test]
fn thousand_widar_sized_samples_load_quickly() {
    let mut rng = stream(9, Purpose::Synth, &[]);
    let samples = (0..1000)
        .map(|i| GestureSample {
            id: format!("w{i:04}"),
            frames: Tensor::new(vec![38, 20, 20], (0..38 * 400).map(|_| rng.random::<f64>()).collect()).unwrap(),
            label: Some(i % 6),
            domain: DomainTag::new("e1", "u1", "l1", format!("o{}", i % 5)),
        })
        .collect();
    let ds = Dataset::new(6, samples).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(&ds, tmp.path()).unwrap();
    let start = Instant::now();
    let back = load_dataset(tmp.path(), 6).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(back.len(), 1000);
    assert!(elapsed.as_secs_f64() < 5.0, "loading took {elapsed:?}");
}

/// Softmax regression trained by full-batch gradient descent on flattened
/// frames; returns held-out accuracy.
fn linear_probe(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)], classes: usize) -> f64 {
    let d = train[0].0.len();
    let mut w = vec![0.0; classes * (d + 1)];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|c| {
                let row = &w[c * (d + 1)..(c + 1) * (d + 1)];
                row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    for _ in 0..300 {
        let mut grad = vec![0.0; w.len()];
        for (x, y) in train {
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / s - if c == *y { 1.0 } else { 0.0 };
                let row = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                for (gi, xi) in row[..d].iter_mut().zip(x) {
                    *gi += g * xi;
                }
                row[d] += g;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= 0.05 * gi / train.len() as f64;
        }
    }
    let correct = test
        .iter()
        .filter(|(x, y)| Tensor::argmax(&logits(&w, x)) == *y)
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn classes_are_linearly_separable_within_one_domain() {
    let spec = SynthSpec {
        environments: 1,
        subjects: 1,
        locations: 1,
        orientations: 1,
        samples_per_cell: 40,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec, 4).unwrap();
    let rows: Vec<(Vec<f64>, usize)> = ds
        .samples()
        .iter()
        .map(|s| (s.frames.data().to_vec(), s.label.unwrap()))
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = rows.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let strip = |v: Vec<(usize, (Vec<f64>, usize))>| v.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let acc = linear_probe(&strip(train), &strip(test), spec.class_count);
    assert!(acc >= 0.95, "held-out linear accuracy {acc}");
}

#[test]
fn generation_depends_only_on_spec_and_seed() {
    let spec = SynthSpec {
        subjects: 2,
        locations: 2,
        ..SynthSpec::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_dataset(&synth_generate(&spec, 12).unwrap(), &a).unwrap();
    write_dataset(&synth_generate(&spec, 12).unwrap(), &b).unwrap();
    assert_eq!(checksum(&snapshot(&a)), checksum(&snapshot(&b)));
    let c = synth_generate(&spec, 13).unwrap();
    assert_ne!(c, load_dataset(&a, spec.class_count).unwrap());
}

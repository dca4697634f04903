mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use cwcc::baselines::grey_world;
use cwcc::dataset::{
    cross_validation_splits, read_image, read_manifest, synthesize, write_image, write_manifest, ManifestEntry,
    SynthConfig,
};
use cwcc::metrics::{recovery_error, Illuminant};
use cwcc::model::{correct_image_unclipped, CwccConfig, CwccModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn illuminant_draws_centre_on_the_box() {
    let cfg = SynthConfig {
        height: 1,
        width: 1,
        patches: (1, 1),
        seed: 99,
        ..SynthConfig::default()
    };
    let draws = synthesize(&cfg, 10_000).unwrap();
    for (c, (lo, hi)) in [(0, cfg.rg_range), (2, cfg.bg_range)] {
        let ratios: Vec<f64> = draws.iter().map(|s| s.applied[c] / s.applied[1]).collect();
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let centre = 0.5 * (lo + hi);
        assert!((mean - centre).abs() < 3.0 * sd / n.sqrt(), "channel {c}: {mean} vs {centre}");
    }
}

#[test]
fn grey_world_recovers_grey_mean_scenes() {
    let cfg = SynthConfig {
        height: 32,
        width: 32,
        grey_mean: true,
        seed: 5,
        ..SynthConfig::default()
    };
    for s in synthesize(&cfg, 20).unwrap() {
        let err = recovery_error(&s.sample.gt, &grey_world(&s.sample.image).unwrap());
        assert!(err < 0.5, "{err}");
    }
}

#[test]
fn unclipped_correction_inverts_generation() {
    let cfg = SynthConfig {
        height: 16,
        width: 16,
        clip: false,
        seed: 8,
        ..SynthConfig::default()
    };
    for s in synthesize(&cfg, 10).unwrap() {
        let rec = correct_image_unclipped(&s.sample.image, &s.sample.gt).unwrap();
        let g = s.applied[1] as f32;
        for (a, r) in rec.pixels().zip(s.reflectance.pixels()) {
            for c in 0..3 {
                assert!((a[c] / g - r[c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn written_images_give_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let model = CwccModel::new(
        CwccConfig {
            input_size: 32,
            ..CwccConfig::default()
        },
        1,
    )
    .unwrap();
    for (i, s) in common::samples(&common::biased_config(32, 4), 3).iter().enumerate() {
        let path = dir.path().join(format!("{i}.rif"));
        write_image(&s.image, &path).unwrap();
        let a = model.forward(&s.image).unwrap().rgb();
        let b = model.forward(&read_image(&path).unwrap()).unwrap().rgb();
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-6);
        }
    }
}

#[test]
fn large_manifest_fold_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(7022);
    let entries: Vec<ManifestEntry> = (0..7022)
        .map(|i| ManifestEntry {
            path: PathBuf::from(format!("img_{i:05}.png")),
            gt: Illuminant::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)).unwrap(),
            fold: rng.random_range(0..10),
        })
        .collect();
    write_manifest(&entries, &path).unwrap();
    let parsed = read_manifest(&path).unwrap();
    assert_eq!(parsed.len(), 7022);
    let mut hist = BTreeMap::new();
    for e in &parsed {
        *hist.entry(e.fold).or_insert(0usize) += 1;
    }
    // Independent count from the raw text: last comma-separated field per line.
    let text = fs::read_to_string(&path).unwrap();
    let mut lines_hist = BTreeMap::new();
    for line in text.lines().skip(1) {
        let fold: usize = line.rsplit(',').next().unwrap().parse().unwrap();
        *lines_hist.entry(fold).or_insert(0usize) += 1;
    }
    assert_eq!(text.lines().count(), 7023);
    assert_eq!(hist, lines_hist);
    assert_eq!(hist.keys().copied().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());

    let folds: Vec<usize> = parsed.iter().map(|e| e.fold).collect();
    let splits = cross_validation_splits(&folds, 10).unwrap();
    let mut covered = BTreeSet::new();
    for s in &splits {
        assert_eq!(s.test.len(), hist[&s.fold]);
        for &i in &s.test {
            assert!(covered.insert(i), "item {i} tested twice");
        }
        let train: BTreeSet<usize> = s.train.iter().copied().collect();
        assert!(s.test.iter().all(|i| !train.contains(i)));
        assert_eq!(train.len() + s.test.len(), 7022);
    }
    assert_eq!(covered.len(), 7022);
}

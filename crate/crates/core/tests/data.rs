use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cloudless::data::{gen_clean_optical, gen_sample, load_split, read_manifest, write_dataset, Role};
use cloudless::model::SarInput;
use proptest::prelude::*;

/// Lowest adjacent-pixel correlation of clean optical fields over seeds
/// 0..100 at patch 32, measured once (0.932) and frozen.
const AUTOCORR_FLOOR: f64 = 0.93;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn clean_fields_are_smooth() {
    let p = 32;
    let worst = (0..100u64)
        .map(|seed| {
            let t = gen_clean_optical(seed, p);
            let d = t.data();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for row in d.chunks(p) {
                a.extend_from_slice(&row[..p - 1]);
                b.extend_from_slice(&row[1..]);
            }
            pearson(&a, &b)
        })
        .fold(1.0, f64::min);
    assert!(worst > 0.8);
    assert!(worst >= AUTOCORR_FLOOR, "adjacent correlation {worst}");
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_is_a_pure_function_of_its_arguments() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(a.path(), 5, 20, 16).unwrap();
    write_dataset(b.path(), 5, 20, 16).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 20 * 5 + 1);
    assert_eq!(ta, tb);

    let recs = read_manifest(a.path()).unwrap();
    let train = recs.iter().filter(|r| r.role == Role::Train).count();
    assert_eq!((train, recs.len() - train), (16, 4));
    let bins: std::collections::BTreeSet<_> = recs.iter().map(|r| r.coverage_bin).collect();
    assert_eq!(bins.len(), 5);
    assert_eq!(load_split(a.path(), Role::Test).unwrap().len(), 4);
}

#[test]
fn missing_dataset_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let err = load_split(d.path().join("absent"), Role::Train).unwrap_err();
    assert_eq!(err.category(), "io");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_respect_their_invariants(seed in 0u64..1000, index in 0usize..50) {
        let s = gen_sample(seed, index, 16).unwrap();
        let (c, k, m) = (s.cloudy.data(), s.clean.data(), s.mask.data());
        let plane = 16 * 16;
        for ch in 0..4 {
            for i in 0..plane {
                let (cv, kv) = (c[ch * plane + i], k[ch * plane + i]);
                if m[i] == 0.0 {
                    prop_assert_eq!(cv.to_bits(), kv.to_bits());
                } else {
                    prop_assert!((0.9..=1.0).contains(&cv));
                }
            }
        }
        let cov = s.coverage();
        let (lo, hi) = (0.2 * s.coverage_bin as f64, 0.2 * (s.coverage_bin + 1) as f64);
        prop_assert!(cov >= lo && cov <= hi, "coverage {} in bin {}", cov, s.coverage_bin);
        for sel in SarInput::ALL {
            let r = s.sar(sel);
            prop_assert_eq!(r.as_ref().map(|t| t.shape().c()).unwrap_or(0), sel.channels());
            if let Some(t) = r {
                prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

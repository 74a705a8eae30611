#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use spectra::neta::{Tensor, TensorArchive, TensorData};

/// Random archives: up to 6 tensors of rank 0..=4, mixed dtypes, arbitrary
/// bit patterns (NaN payloads included).
pub fn arb_archive() -> impl Strategy<Value = TensorArchive> {
    let tensor = (
        "[a-z]{1,6}(/[a-z0-9_]{1,8}){0,2}",
        prop::collection::vec(1usize..5, 0..=4),
        any::<bool>(),
        any::<u64>(),
    );
    prop::collection::vec(tensor, 0..6).prop_map(|specs| {
        let mut archive = TensorArchive::new();
        for (name, shape, wide, seed) in specs {
            if archive.get(&name).is_some() {
                continue;
            }
            let len: usize = shape.iter().product();
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state
            };
            let data = if wide {
                TensorData::F64((0..len).map(|_| f64::from_bits(next())).collect())
            } else {
                TensorData::F32((0..len).map(|_| f32::from_bits((next() >> 32) as u32)).collect())
            };
            archive.insert(Tensor::new(name, shape, data).unwrap()).unwrap();
        }
        archive
    })
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spectra")
}

pub fn spectra(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("SPECTRA_JOBS")
        .output()
        .expect("spawn spectra")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub struct Fixture {
    pub dir: PathBuf,
}

impl Fixture {
    pub fn file(&self, name: &str) -> String {
        path_str(&self.dir.join(name)).to_string()
    }
}

pub fn synth(out: &Path, d: usize, n: usize, spikes: &str, layers: usize, seed: u64, mode: &str) -> Fixture {
    let (d, n, layers, seed) = (d.to_string(), n.to_string(), layers.to_string(), seed.to_string());
    let spikes_arg = format!("--spikes={spikes}");
    let o = spectra(&[
        "synth", "--d", &d, "--n", &n, &spikes_arg, "--layers", &layers, "--seed", &seed, "--mode", mode,
        "--out", path_str(out),
    ]);
    assert!(o.status.success(), "synth failed: {}", String::from_utf8_lossy(&o.stderr));
    Fixture { dir: out.to_path_buf() }
}

pub fn compare(a: &Fixture, b: &Fixture, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "compare".to_string(),
        "--net-a".into(),
        a.file("net_a.neta"),
        "--net-b".into(),
        b.file("net_b.neta"),
        "--acts-a".into(),
        a.file("acts_a.neta"),
        "--acts-b".into(),
        b.file("acts_b.neta"),
        "--out".into(),
        path_str(out).into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    spectra(&refs)
}

/// Like [`compare`] but with explicit archive paths.
pub fn compare_paths(net_a: &str, net_b: &str, acts_a: &str, acts_b: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "compare", "--net-a", net_a, "--net-b", net_b, "--acts-a", acts_a, "--acts-b", acts_b, "--out", path_str(out),
    ];
    args.extend_from_slice(extra);
    spectra(&args)
}

pub fn report(out: &Path) -> serde_json::Value {
    let bytes = std::fs::read(out.join("report.json")).expect("report.json");
    serde_json::from_slice(&bytes).expect("valid report json")
}

/// `S` per layer from a `report.json`.
pub fn similarities(out: &Path) -> Vec<f64> {
    report(out)
        .as_array()
        .expect("array of layers")
        .iter()
        .map(|l| l["normalized_similarity"].as_f64().expect("S present"))
        .collect()
}

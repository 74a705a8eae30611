//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use spectra::neta::TensorArchive;
use spectra_core::alignment::{procrustes_align, ActivationMatrix};
use spectra_core::covariance::{
    bw_cosine, channel_covariance, effective_rank_of, normalized_similarity_with, shrink_covariance,
    shrink_eigenvalue, Covariance, CovarianceKind, SimilarityBaseline,
};
use spectra_core::factorization::{project_joint_to_channel, reconstruct_joint, FilterBank};
use spectra_core::linalg::{haar_orthogonal, Matrix};
use spectra_core::rng::{gaussian_matrix, stream};
use spectra_core::spatial::ConvWeight;
use spectra_core::synth::{sample_weights, SpikedModel};

type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shrinkage() -> Outcome {
    let mut worst: f64 = 0.0;
    for (lambda, gamma, want) in [(5.0, 1.0, 2.6180340), (3.0, 0.25, 1.5930703), (4.0, 1.0, 0.0)] {
        let got = shrink_eigenvalue(lambda, gamma).map_err(|e| e.to_string())?;
        // Hand values are quoted to 7 decimals; compare against the closed form too.
        let exact = if want == 0.0 { 0.0 } else { hand_formula(lambda, gamma) };
        if (got - exact).abs() > 1e-9 || (got - want).abs() > 5e-8 {
            return Err(format!("shrink({lambda}, {gamma}) = {got}, expected {want}"));
        }
        worst = worst.max((got - exact).abs());
    }
    for gamma in [0.25f64, 1.0, 4.0] {
        let edge = (1.0 + gamma.sqrt()).powi(2);
        let got = shrink_eigenvalue(edge + 1e-9, gamma).map_err(|e| e.to_string())?;
        if !(gamma.sqrt()..=gamma.sqrt() + 1e-3).contains(&got) {
            return Err(format!("jump at γ={gamma}: {got}"));
        }
    }
    Ok(format!("max error {worst:.1e}"))
}

fn hand_formula(lambda: f64, gamma: f64) -> f64 {
    let b = (lambda + 1.0 - gamma) / 2.0;
    (lambda - 1.0 - gamma) / 2.0 + (b * b - lambda).sqrt()
}

fn procrustes() -> Outcome {
    let d = 32;
    let q = haar_orthogonal(&mut stream(100, 0), d);
    let phi = gaussian_matrix(&mut stream(101, 0), 512, d);
    let clean = &phi * q.transpose();
    let noise = gaussian_matrix(&mut stream(102, 0), 512, d) * 0.01;
    let err = |target: Matrix| -> Result<f64, String> {
        let a = ActivationMatrix::new(phi.clone(), 1, "a").map_err(|e| e.to_string())?;
        let b = ActivationMatrix::new(target, 1, "b").map_err(|e| e.to_string())?;
        let map = procrustes_align(&a, &b, false).map_err(|e| e.to_string())?;
        Ok((map.matrix - &q).norm())
    };
    let noiseless = err(clean.clone())?;
    let noisy = err(clean + noise)?;
    check(
        noiseless < 1e-6 && noisy < 0.05,
        format!("noiseless {noiseless:.1e}, noisy {noisy:.2e}"),
    )
}

fn shrunk_channel(model: &SpikedModel, n: usize, seed: u64) -> Result<Covariance, String> {
    let w = sample_weights(model, n, seed).map_err(|e| e.to_string())?;
    let c = channel_covariance(&w, true).map_err(|e| e.to_string())?;
    shrink_covariance(&c).map_err(|e| e.to_string())
}

fn spiked_recovery() -> Outcome {
    let planted = [10.0, 5.0, 2.0];
    let mut sums = [0.0; 3];
    let mut worst_rest: f64 = 0.0;
    for seed in 0..10 {
        let model = SpikedModel::random(64, &planted, 1.0, 1000 + seed).map_err(|e| e.to_string())?;
        let c = shrunk_channel(&model, 1024, seed)?;
        let eig = c.spectrum().map_err(|e| e.to_string())?.eigenvalues;
        for k in 0..3 {
            sums[k] += eig[k] / 10.0;
        }
        worst_rest = worst_rest.max(eig[3..].iter().cloned().fold(0.0, f64::max));
    }
    let within = sums.iter().zip(&planted).all(|(m, p)| (m - p).abs() <= 0.15 * p);
    check(
        within && worst_rest <= 0.5,
        format!("mean top-3 {:.3?}, max remaining {worst_rest:.3}", sums),
    )
}

fn random_psd(seed: u64, d: usize) -> Covariance {
    let a = gaussian_matrix(&mut stream(seed, 0), d + 2, d);
    Covariance::new(a.transpose() * a, CovarianceKind::Channel).unwrap()
}

fn bw_properties() -> Outcome {
    let (mut sym, mut rot, mut own): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for pair in 0..100u64 {
        let c1 = random_psd(2 * pair, 16);
        let c2 = random_psd(2 * pair + 1, 16);
        let o = haar_orthogonal(&mut stream(pair, 7), 16);
        let bw = |a: &Covariance, b: &Covariance| bw_cosine(a, b).map_err(|e| e.to_string());
        let forward = bw(&c1, &c2)?;
        sym = sym.max((forward - bw(&c2, &c1)?).abs());
        let r1 = c1.rotated(&o).map_err(|e| e.to_string())?;
        let r2 = c2.rotated(&o).map_err(|e| e.to_string())?;
        rot = rot.max((forward - bw(&r1, &r2)?).abs());
        own = own.max((bw(&c1, &c1)? - 1.0).abs());
    }
    let a = Covariance::from_diagonal(&[4.0, 1.0], CovarianceKind::Channel).unwrap();
    let b = Covariance::from_diagonal(&[1.0, 4.0], CovarianceKind::Channel).unwrap();
    let hand = bw_cosine(&a, &b).map_err(|e| e.to_string())?;
    check(
        sym <= 1e-8 && rot <= 1e-8 && own <= 1e-10 && (hand - 0.8).abs() <= 1e-10,
        format!("symmetry {sym:.1e}, rotation {rot:.1e}, self {own:.1e}, hand {hand}"),
    )
}

fn effective_rank() -> Outcome {
    let cases: [(&[f64], f64); 3] = [(&[1.0, 0.0, 0.0, 0.0], 1.0), (&[2.0; 4], 2.5), (&[3.0, 1.0], 1.25)];
    let mut worst: f64 = 0.0;
    for (eigs, want) in cases {
        let got = effective_rank_of(eigs).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
    }
    check(worst <= 1e-12, format!("max error {worst:.1e}"))
}

/// Rotations averaged into the zero point for the shared and independent
/// checks. One rotation makes the zero point about as noisy as the
/// statistic; 256 brings its Monte Carlo error to roughly 0.003.
const CALIBRATION_DRAWS: usize = 256;

fn similarity_calibration() -> Outcome {
    let planted = [10.0, 5.0, 2.0];
    let (mut min_shared, mut max_indep, mut max_indep_single): (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
    for seed in 0..10u64 {
        let model = SpikedModel::random(64, &planted, 1.0, 2000 + seed).map_err(|e| e.to_string())?;
        let other = SpikedModel::random(64, &planted, 1.0, 3000 + seed).map_err(|e| e.to_string())?;
        let c1 = shrunk_channel(&model, 1024, 10 * seed)?;
        let shared = shrunk_channel(&model, 1024, 10 * seed + 1)?;
        let indep = shrunk_channel(&other, 1024, 10 * seed + 2)?;
        let single = SimilarityBaseline::new(&c1, seed, 1).map_err(|e| e.to_string())?;
        let averaged = SimilarityBaseline::new(&c1, seed, CALIBRATION_DRAWS).map_err(|e| e.to_string())?;
        let s = |c2: &Covariance, base: &SimilarityBaseline| {
            normalized_similarity_with(&c1, c2, base)
                .map(|s| s.value)
                .map_err(|e| e.to_string())
        };
        let zero = s(&c1.rotated(&single.rotations[0]).map_err(|e| e.to_string())?, &single)?;
        let one = s(&single.resampled, &single)?;
        if zero != 0.0 || one != 1.0 {
            return Err(format!("seed {seed}: rotation case {zero}, resample case {one}"));
        }
        min_shared = min_shared.min(s(&shared, &averaged)?);
        max_indep = max_indep.max(s(&indep, &averaged)?.abs());
        max_indep_single = max_indep_single.max(s(&indep, &single)?.abs());
    }
    check(
        min_shared >= 0.8 && max_indep <= 0.15,
        format!(
            "0 and 1 exact; {CALIBRATION_DRAWS} draws: min shared S {min_shared:.3}, max |S| independent \
             {max_indep:.3} (single draw {max_indep_single:.3})"
        ),
    )
}

fn factorization_round_trip() -> Outcome {
    let k = 5;
    let q = haar_orthogonal(&mut stream(4000, 0), k * k);
    let filters: Vec<Vec<f64>> = q.column_iter().map(|c| c.iter().copied().collect()).collect();
    let bank = FilterBank::from_filters(k, filters, false).map_err(|e| e.to_string())?;
    let data: Vec<f64> = gaussian_matrix(&mut stream(4001, 0), 1, 16 * 8 * 25).iter().copied().collect();
    let w = ConvWeight::new(data, [16, 8, k, k], 1, "w").map_err(|e| e.to_string())?;
    let c = project_joint_to_channel(&w, &bank).map_err(|e| e.to_string())?;
    let back = reconstruct_joint(&c).map_err(|e| e.to_string())?;
    let err = w.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let energy = (c.matrix.norm() - w.frobenius_norm()).abs();
    check(
        err < 1e-10 && energy < 1e-10,
        format!("max abs error {err:.1e}, energy difference {energy:.1e}"),
    )
}

fn end_to_end() -> Outcome {
    let t = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = common::synth(&t.path().join("fx"), 64, 1024, "10,5,2", 4, 7, "shared");
    let run = |name: &str| -> Result<std::path::PathBuf, String> {
        let out = t.path().join(name);
        let o = common::compare(&fx, &fx, &out, &["--seed", "7", "--max-rank", "16"]);
        if !o.status.success() {
            return Err(format!("compare failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        Ok(out)
    };
    let (one, two) = (run("one")?, run("two")?);
    let s = common::similarities(&one);
    if s.len() != 4 || s.iter().any(|&v| v < 0.8) {
        return Err(format!("shared-covariance S {s:?}"));
    }
    for file in ["report.json", "report.csv"] {
        if fs::read(one.join(file)).ok() != fs::read(two.join(file)).ok() {
            return Err(format!("{file} differs between runs"));
        }
    }
    let own = t.path().join("self");
    let (net, acts) = (fx.file("net_a.neta"), fx.file("acts_a.neta"));
    let o = common::compare_paths(&net, &net, &acts, &acts, &own, &["--seed", "7"]);
    if !o.status.success() {
        return Err("self-compare failed".into());
    }
    let selfs = common::similarities(&own);
    let dev = selfs.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    check(
        dev <= 1e-6,
        format!("shared S min {:.3}, self |S-1| {dev:.1e}, reports byte-identical", s.iter().cloned().fold(1.0, f64::min)),
    )
}

fn neta_format() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&common::arb_archive(), |archive| {
            let bytes = archive.to_bytes().unwrap();
            let back = TensorArchive::from_bytes(&bytes).unwrap();
            proptest::prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            Ok(())
        })
        .map(|_| "200 archives byte-exact".to_string())
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("shrinkage unit suite", shrinkage, Some(Duration::from_secs(1))),
        ("procrustes recovery", procrustes, Some(Duration::from_secs(1))),
        ("spiked recovery", spiked_recovery, Some(Duration::from_secs(10))),
        ("bw properties", bw_properties, None),
        ("effective rank", effective_rank, None),
        ("normalized similarity calibration", similarity_calibration, Some(Duration::from_secs(30))),
        ("factorization round trip", factorization_round_trip, None),
        ("end-to-end synth and compare", end_to_end, Some(Duration::from_secs(60))),
        ("neta format", neta_format, None),
    ];
    let mut failures = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if elapsed > l => Err(format!("{d}; took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}

//! Acceptance suite. Prints one `criterion N: PASS|FAIL ...` line per
//! criterion with the measured values and exits non-zero if any fails.
//!
//! `cargo test -p pldnet-cli --test acceptance [-- N...]` runs all
//! criteria, or only the listed numbers.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pldnet::enhance::{Enhancer, Mode};
use pldnet::metrics::{evaluate_manifest, si_sdr};
use pldnet::model::{check_param_gradients, init_weights, param_count, train_toy, Frontend, ModelConfig, TrainConfig};
use pldnet::selftest;
use pldnet::sim::{build_dataset, write_synthetic_corpus, DatasetConfig, SceneOverrides, MANIFEST_NAME};

type Outcome = (bool, String);

fn criterion_1_pld_prefilter_improves_si_sdr() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (sd, nd) = write_synthetic_corpus(&tmp.path().join("corpus"), 20, 4, 2.0, 0).unwrap();
    build_dataset(&DatasetConfig {
        num_scenes: 20,
        speech_dir: sd,
        noise_dir: nd,
        out_dir: tmp.path().join("ds"),
        seed: 0,
        overrides: SceneOverrides {
            num_interferers: Some(4),
            ..Default::default()
        },
    })
    .unwrap();
    let e = Enhancer::new(Mode::Pld, Frontend::default(), None).unwrap();
    let r = evaluate_manifest(&tmp.path().join("ds").join(MANIFEST_NAME), |m| e.run(m).map(|o| o.audio), None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let delta = r.mean_delta().unwrap();
    let frac = r.improved_fraction().unwrap();
    (
        r.rows.len() == 20 && r.failures.is_empty() && delta >= 2.0 && frac >= 0.8 && secs <= 120.0,
        format!(
            "mean SI-SDR {:.2} -> {:.2} dB (delta {delta:+.2}, need >= +2.0), improved {:.0}% (need >= 80%), {secs:.1} s",
            r.mean_si_sdr_in().unwrap(),
            r.mean_si_sdr_out().unwrap(),
            100.0 * frac
        ),
    )
}

fn criterion_2_parameter_count() -> Outcome {
    let n = param_count(&ModelConfig::default()).unwrap();
    (
        (100_000..=250_000).contains(&n),
        format!("{n} parameters (need 0.10M..0.25M)"),
    )
}

fn criterion_3_toy_overfit() -> Outcome {
    let t = Instant::now();
    let data: Vec<_> = (0..8).map(|i| selftest::toy_example(100 + i, 0.5).unwrap()).collect();
    let cfg = ModelConfig::default();
    let tc = TrainConfig {
        steps: 500,
        seed: 0,
        ..Default::default()
    };
    let r = train_toy(&cfg, &tc, &data, None).unwrap();
    let ratio = r.final_loss / r.losses[0];
    let pld = Enhancer::new(Mode::Pld, Frontend::default(), None).unwrap();
    let net = Enhancer::new(Mode::Full, Frontend::default(), Some((cfg, r.params))).unwrap();
    let (mut s_pld, mut s_net) = (0.0, 0.0);
    for ex in &data {
        s_pld += si_sdr(&pld.run(&ex.mix).unwrap().audio, &ex.target).unwrap() / data.len() as f64;
        s_net += si_sdr(&net.run(&ex.mix).unwrap().audio, &ex.target).unwrap() / data.len() as f64;
    }
    let secs = t.elapsed().as_secs_f64();
    (
        ratio <= 0.2 && s_net > s_pld && secs <= 1800.0,
        format!(
            "loss {:.3e} -> {:.3e} (ratio {ratio:.1e}, need <= 0.2); SI-SDR trained {s_net:.2} dB vs PLD {s_pld:.2} dB (need >); {secs:.0} s",
            r.losses[0], r.final_loss
        ),
    )
}

fn criterion_4_gradient_suite() -> Outcome {
    let t = Instant::now();
    let prims = selftest::primitive_grad_errors(0).unwrap();
    let (worst_name, worst) = prims.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let gcafa = selftest::gcafa_grad_error(0).unwrap();
    let cfg = ModelConfig::default();
    let ex = selftest::toy_example(1, 0.25).unwrap();
    let net = check_param_gradients(&cfg, &TrainConfig::default(), &init_weights(&cfg, 1).unwrap(), &ex, 1e-6, 32, 1)
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    (
        worst < 1e-6 && gcafa < 1e-4 && net < 1e-3 && secs <= 300.0,
        format!(
            "primitives worst {worst:.1e} ({worst_name}, need < 1e-6), GCAFA {gcafa:.1e} (need < 1e-4), network {net:.1e} over 32 coordinates (need < 1e-3), {secs:.1} s"
        ),
    )
}

fn criterion_5_bound_and_branch_suite() -> Outcome {
    let v = selftest::pld_bound_violations(10_000, 0).unwrap();
    let branches = selftest::pld_branch_mismatches();
    (
        v == 0 && branches.is_empty(),
        format!("{v} bound violations in 10000 frames, branch mismatches {branches:?}"),
    )
}

fn criterion_6_dsp_fidelity() -> Outcome {
    let stft = selftest::stft_round_trip_error(0).unwrap();
    let adj = selftest::conv_adjoint_error(0).unwrap();
    let scale = selftest::si_sdr_scale_error(0).unwrap();
    let (peak, decay) = selftest::rir_checks().unwrap();
    let decay_ok = decay.iter().all(|(t, m)| m.is_some_and(|m| (m - t).abs() <= 0.3 * t));
    (
        stft <= 1e-6 && adj <= 1e-10 && scale <= 1e-9 && peak && decay_ok,
        format!(
            "STFT {stft:.1e}, adjoint {adj:.1e}, SI-SDR scale {scale:.1e} dB, direct path exact {peak}, rt60 (target, measured) {decay:?}"
        ),
    )
}

fn criterion_7_causality() -> Outcome {
    let a = selftest::pld_causality_violations(16, 7).unwrap();
    let b = selftest::model_causality_violations(16, 7).unwrap();
    (
        a == 0 && b == 0,
        format!("16 probes each: {a} pre-filter and {b} network outputs changed before the perturbed frame"),
    )
}

fn pldnet(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_pldnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Runs simulate, train and enhance in `dir` and returns every produced
/// artefact except the sidecars (which record absolute paths).
fn pipeline_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    pldnet(&["simulate", "--out", "ds", "--scenes", "2", "--seed", "5", "--clip-seconds", "0.5"], dir);
    pldnet(
        &["train", "--data", "ds", "--steps", "3", "--seed", "5", "--clip-seconds", "0.25", "--out", "w.bin"],
        dir,
    );
    for mode in ["pld", "full"] {
        let out = format!("{mode}.wav");
        pldnet(
            &["enhance", "--mode", mode, "--checkpoint", "w.bin", "--in", "ds/mix/scene_0000.wav", "--out", &out],
            dir,
        );
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_none_or(|x| x != "cfg") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_8_byte_identical_reruns() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline_outputs(a.path());
    let fb = pipeline_outputs(b.path());
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    (
        fa.len() == fb.len() && fa.len() >= 8 && differing.is_empty(),
        format!(
            "{} files (corpus, mixtures, targets, manifest, checkpoint, loss curve, enhanced audio) compared across two runs, differing {differing:?}",
            fa.len()
        ),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 8] = [
        (1, criterion_1_pld_prefilter_improves_si_sdr),
        (2, criterion_2_parameter_count),
        (3, criterion_3_toy_overfit),
        (4, criterion_4_gradient_suite),
        (5, criterion_5_bound_and_branch_suite),
        (6, criterion_6_dsp_fidelity),
        (7, criterion_7_causality),
        (8, criterion_8_byte_identical_reruns),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let (pass, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("criterion {n}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

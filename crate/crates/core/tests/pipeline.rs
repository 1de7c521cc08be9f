use std::fs;
use std::path::Path;

use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

use pldnet::dsp::wav::read_wav;
use pldnet::dsp::{AudioBuffer, SAMPLE_RATE};
use pldnet::enhance::{Enhancer, Mode};
use pldnet::metrics::{evaluate_manifest, si_sdr};
use pldnet::model::{init_weights, Frontend, ModelConfig};
use pldnet::selftest;
use pldnet::sim::{
    build_dataset, distance, read_manifest, sample_scene, write_synthetic_corpus, DatasetConfig, SceneOverrides,
    MANIFEST_NAME,
};
use pldnet::tensor::{load_checkpoint, save_checkpoint, DType};

fn small_dataset(dir: &Path, scenes: usize, seed: u64) -> Vec<pldnet::sim::ManifestRow> {
    let (sd, nd) = write_synthetic_corpus(&dir.join("corpus"), scenes + 4, 2, 0.5, seed).unwrap();
    build_dataset(&DatasetConfig {
        num_scenes: scenes,
        speech_dir: sd,
        noise_dir: nd,
        out_dir: dir.join("ds"),
        seed,
        overrides: SceneOverrides::default(),
    })
    .unwrap()
}

#[test]
fn manifest_rows_reproduce_their_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = small_dataset(tmp.path(), 4, 3);
    let back = read_manifest(&tmp.path().join("ds").join(MANIFEST_NAME)).unwrap();
    assert_eq!(back, rows);
    for row in &rows {
        let drawn = sample_scene(row.seed, &SceneOverrides::default()).unwrap();
        let pinned = sample_scene(row.seed, &row.overrides()).unwrap();
        assert_eq!(drawn.mic1_pos, pinned.mic1_pos);
        assert_eq!(drawn.interferer_positions, pinned.interferer_positions);
        assert_eq!(pinned.room.rt60, row.rt60);
        assert!((distance(pinned.source_pos, pinned.mic1_pos) - row.mic_distance).abs() < 1e-12);
        assert!((0.2..=0.5).contains(&row.rt60));
        assert!((0.0..=20.0).contains(&row.snr_db) && (0.0..=20.0).contains(&row.sir_db));
        let mix = read_wav(tmp.path().join("ds").join(&row.mix)).unwrap();
        let target = read_wav(tmp.path().join("ds").join(&row.target)).unwrap();
        assert_eq!(mix.num_channels(), 2);
        assert_eq!(target.num_channels(), 1);
        assert_eq!(mix.num_samples(), target.num_samples());
    }
}

#[test]
fn dataset_build_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rows = small_dataset(a.path(), 3, 11);
    small_dataset(b.path(), 3, 11);
    for row in &rows {
        for rel in [&row.mix, &row.target] {
            let x = fs::read(a.path().join("ds").join(rel)).unwrap();
            let y = fs::read(b.path().join("ds").join(rel)).unwrap();
            assert!(x == y, "{rel} differs");
        }
    }
}

#[test]
fn pld_mode_improves_a_small_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), 4, 0);
    let e = Enhancer::new(Mode::Pld, Frontend::default(), None).unwrap();
    let out = tmp.path().join("eval.csv");
    let report = evaluate_manifest(
        &tmp.path().join("ds").join(MANIFEST_NAME),
        |m| e.run(m).map(|o| o.audio),
        Some(&out),
    )
    .unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows.len(), 4);
    assert!(report.mean_delta().unwrap() > 0.0, "{:?}", report.mean_delta());
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn checkpoint_round_trip_preserves_enhancement() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::default();
    let params = init_weights(&cfg, 5).unwrap();
    let path = tmp.path().join("w.bin");
    save_checkpoint(&path, &cfg.to_manifest(), &params, DType::F64).unwrap();
    let (manifest, loaded) = load_checkpoint(&path).unwrap();
    let cfg2 = ModelConfig::from_manifest(&manifest).unwrap();
    assert_eq!(cfg2, cfg);
    let ex = selftest::toy_example(2, 0.25).unwrap();
    let a = Enhancer::new(Mode::Full, Frontend::default(), Some((cfg, params))).unwrap();
    let b = Enhancer::new(Mode::Full, Frontend::default(), Some((cfg2, loaded))).unwrap();
    assert_eq!(a.run(&ex.mix).unwrap().audio, b.run(&ex.mix).unwrap().audio);
}

#[test]
fn causality_probes_are_exact() {
    assert_eq!(selftest::pld_causality_violations(16, 21).unwrap(), 0);
    assert_eq!(selftest::model_causality_violations(16, 21).unwrap(), 0);
}

#[test]
fn composed_loss_gradient_matches_finite_differences() {
    let err = selftest::network_grad_error(16, 4).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn untrained_network_output_is_finite_and_scale_invariant_metric_holds() {
    let ex = selftest::toy_example(6, 0.25).unwrap();
    let cfg = ModelConfig::default();
    let e = Enhancer::new(Mode::Net, Frontend::default(), Some((cfg.clone(), init_weights(&cfg, 1).unwrap()))).unwrap();
    let out = e.run(&ex.mix).unwrap().audio;
    assert_eq!(out.len(), ex.target.len());
    assert!(out.iter().all(|v| v.is_finite()));
    let scaled: Vec<f64> = out.iter().map(|v| v * 7.5).collect();
    let d = si_sdr(&out, &ex.target).unwrap() - si_sdr(&scaled, &ex.target).unwrap();
    assert!(d.abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pld_output_matches_input_length(len in 300usize..6000, seed in 0u64..1000) {
        let ex: Vec<Vec<f64>> = (0..2)
            .map(|c| (0..len).map(|i| ((i as f64 * 0.013 * (c + 1) as f64) + seed as f64).sin() * 0.2).collect())
            .collect();
        let mix = AudioBuffer::new(ex, SAMPLE_RATE).unwrap();
        let e = Enhancer::new(Mode::Pld, Frontend::default(), None).unwrap();
        let out = e.run(&mix).unwrap();
        prop_assert_eq!(out.audio.len(), len);
        prop_assert!(out.audio.iter().all(|v| v.is_finite()));
        prop_assert!(out.trace.iter().all(|f| (0.0..=1.0).contains(&f.psi_tilde)));
    }
}

use std::fs;

use resyn_cli::config::Config;
use resyn_cli::dataset::{synthetic_clean, write_degraded_set, NOISY_MANIFEST, PAIRS_MANIFEST};
use resyn_cli::evaluate::{eval_items, evaluate, write_report, METRICS_FILE, SUMMARY_FILE};
use resyn_cli::pipeline::bank;
use resyn_core::degradation::DegradationRecipe;
use resyn_core::manifest::{read_audio_manifest, read_pair_manifest};
use resyn_core::metrics::EvalSummary;
use resyn_models::encoder::EncoderState;

#[test]
fn degraded_set_round_trips_and_scores() {
    let cfg = Config::tiny();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let clean = synthetic_clean(3, 4, 1.0);
    let noise = bank(&cfg.data, cfg.seed).unwrap();
    let set = write_degraded_set(&clean, &noise, &cfg.data.rooms, 11, &data).unwrap();

    assert_eq!(read_pair_manifest(data.join(PAIRS_MANIFEST)).unwrap(), set.pairs);
    assert_eq!(read_audio_manifest(data.join(NOISY_MANIFEST)).unwrap(), set.noisy);
    for (id, _) in &clean {
        let json = fs::read_to_string(data.join("recipes").join(format!("{id}.json"))).unwrap();
        DegradationRecipe::from_json(&json).unwrap();
    }
    let again = tempfile::tempdir().unwrap();
    write_degraded_set(&clean, &noise, &cfg.data.rooms, 11, again.path()).unwrap();
    assert_eq!(
        fs::read(data.join("noisy/utt_0002.wav")).unwrap(),
        fs::read(again.path().join("noisy/utt_0002.wav")).unwrap()
    );

    // Perfect restoration: the clean references themselves.
    let restored = dir.path().join("restored");
    fs::create_dir_all(&restored).unwrap();
    for p in &set.pairs {
        fs::copy(&p.clean, restored.join(p.noisy.file_name().unwrap())).unwrap();
    }
    let enc = EncoderState::init(cfg.encoder.model.clone(), 0).unwrap();
    let items = eval_items(&set.pairs, &restored);
    assert_eq!(items[1].id, "utt_0001");
    let report = evaluate(&items, &enc, 0).unwrap();
    assert!(report.is_complete());
    assert!(report.summary.si_snr_gain_db.ci_low > 0.0);
    assert!(report.summary.feat_sc_reduction > 0.99);

    let out = dir.path().join("eval");
    write_report(&report, &out).unwrap();
    assert_eq!(fs::read_to_string(out.join(METRICS_FILE)).unwrap().lines().count(), 1 + 2 * items.len());
    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary, report.summary);

    fs::remove_file(restored.join("utt_0000.wav")).unwrap();
    let partial = evaluate(&items, &enc, 0).unwrap();
    assert!(!partial.is_complete());
    assert_eq!(partial.summary.missing, vec!["utt_0000".to_string()]);
}

use std::fs;

use resyn_cli::config::Config;
use resyn_cli::Error;

#[test]
fn toml_round_trip_for_both_presets() {
    for cfg in [Config::default(), Config::tiny()] {
        let text = cfg.to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}

#[test]
fn desk_defaults() {
    let cfg = Config::default();
    assert_eq!(cfg.cleaner.train.steps, 2000);
    assert_eq!(cfg.vocoder.pretrain.steps, 2000);
    assert_eq!(cfg.vocoder.finetune.steps, 2000);
    assert_eq!(cfg.cleaner.train.batch, 16);
    assert_eq!(cfg.vocoder.pretrain.batch, 16);
    assert_eq!(cfg.vocoder.finetune.batch, 16);
    assert_eq!(cfg.restore.chunk_seconds, 30.0);
    assert_eq!(cfg.restore.overlap_seconds, 1.0);
    assert_eq!(cfg.benchmark.batch_sizes, vec![1, 2, 4, 8]);
    assert_eq!(cfg.benchmark.repeats, 5);
    assert_eq!(cfg.reference.adapter_steps, 800_000);
    assert_eq!(cfg.reference.vocoder_pretrain_steps, 200_000);
    assert_eq!(cfg.reference.vocoder_finetune_steps, 675_000);
    assert_eq!(cfg.reference.batch, 512);
    cfg.validate().unwrap();
}

#[test]
fn partial_file_fills_defaults_and_resolves_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "seed = 5\n[data]\npair_manifest = \"data/pairs.tsv\"\n[restore]\nbatch = 2\n").unwrap();
    let cfg = Config::load(&path).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.restore.batch, 2);
    assert_eq!(cfg.restore.chunk_seconds, 30.0);
    assert_eq!(cfg.data.pair_manifest.unwrap(), dir.path().join("data/pairs.tsv"));
}

#[test]
fn unknown_keys_and_bad_dims_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[restore]\nbatchsize = 2\n").unwrap();
    assert!(matches!(Config::load(&path), Err(Error::TomlParse { .. })));

    let mut cfg = Config::tiny();
    cfg.vocoder.model.cond_dim += 1;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = Config::tiny();
    cfg.restore.batch = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn written_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::tiny();
    let path = cfg.write_resolved(dir.path()).unwrap();
    assert_eq!(Config::load(&path).unwrap(), cfg);
}

#[test]
fn binary_prints_a_loadable_preset() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_resyn"))
        .args(["config", "--preset", "tiny"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg: Config = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, Config::tiny());
}

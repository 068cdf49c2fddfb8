use super::*;
use crate::training::tests::{small_config, small_dataset};
use crate::training::{train, Hyper};

#[test]
fn config_round_trips_and_hashes_stably() {
    let cfg = small_config();
    let back = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_eq!(cfg.hash().len(), 64);
    let mut other = cfg.clone();
    other.training.seed += 1;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn missing_keys_default_and_unknown_keys_fail() {
    let cfg = RunConfig::from_json(r#"{"training": {"epochs": 3}}"#).unwrap();
    assert_eq!(cfg.training.epochs, 3);
    assert_eq!(cfg.scene, SceneConfig::default());
    assert!(RunConfig::from_json(r#"{"trainig": {}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"scene": {"nx": 40, "colour": 1}}"#).is_err());
}

#[test]
fn invalid_configs_fail_validation() {
    let mut cfg = small_config();
    cfg.training.batch = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config();
    cfg.training.lr = f64::NAN;
    assert!(cfg.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Json { .. })));
}

#[test]
fn bscan_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.f32");
    let data: Vec<f32> = (0..12).map(|k| k as f32 * 0.5 - 2.0).collect();
    let meta = BScanMeta::new(4, 3, 1e-11, "abc".into());
    write_bscan(&path, &data, &meta).unwrap();
    assert_eq!(read_bscan(&path).unwrap(), (meta.clone(), data.clone()));
    assert!(write_bscan(&path, &data[..11], &meta).is_err());
    // a truncated payload is reported, not misread
    fs::write(&path, &f32_to_bytes(&data)[..44]).unwrap();
    assert!(matches!(read_bscan(&path), Err(Error::Corrupt { .. })));
    fs::write(&path, &f32_to_bytes(&data)[..43]).unwrap();
    assert!(matches!(read_bscan(&path), Err(Error::Corrupt { .. })));
    let newer = BScanMeta { format_version: 99, ..meta };
    write_json(&sidecar_path(&path), &newer).unwrap();
    assert!(matches!(read_bscan(&path), Err(Error::Version { found: 99, .. })));
}

#[test]
fn pgm_rendering() {
    let zero = render_pgm(&[0.0; 6], 2, 3);
    assert!(zero.starts_with(b"P5\n3 2\n255\n"));
    assert!(zero[zero.len() - 6..].iter().all(|&v| v == 127));
    let img = render_pgm(&[-2.0, 0.0, 2.0, 1.0], 2, 2);
    assert_eq!(&img[img.len() - 4..], &[0, 127, 255, 191]);
}

#[test]
fn checkpoints_restore_bit_for_bit() {
    let cfg = small_config();
    let mut hyper = Hyper::from_config(&cfg);
    hyper.epochs = 1;
    let (ckpt, _) = train(small_dataset(), &cfg, &hyper).unwrap();
    assert!(ckpt.model.params.step_count() > 0);
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(store_fingerprint(&back.model.params), store_fingerprint(&ckpt.model.params));
    assert_eq!(back.model.params.step_count(), ckpt.model.params.step_count());
    assert_eq!(back.model.config, ckpt.model.config);
    assert_eq!(back.stats, ckpt.stats);
    assert_eq!(back.report, ckpt.report);
    assert_eq!(back.pretrain_lr, ckpt.pretrain_lr);

    let weights = dir.path().join(WEIGHTS_FILE);
    let bytes = fs::read(&weights).unwrap();
    fs::write(&weights, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Corrupt { .. })));
    fs::write(&weights, &bytes).unwrap();

    let manifest_path = dir.path().join(MODEL_FILE);
    let mut manifest: CheckpointManifest = read_json(&manifest_path).unwrap();
    manifest.format_version = FORMAT_VERSION + 1;
    write_json(&manifest_path, &manifest).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Version { .. })));

    manifest.format_version = FORMAT_VERSION;
    manifest.tensors.pop();
    write_json(&manifest_path, &manifest).unwrap();
    fs::write(&weights, &bytes[..bytes.len() - 4 * manifest_tail(&bytes, &manifest)]).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Corrupt { .. })));
}

/// Values dropped from the end of the blob once the last entry is removed.
fn manifest_tail(bytes: &[u8], manifest: &CheckpointManifest) -> usize {
    let kept: usize = manifest.tensors.iter().map(|t| t.len).sum();
    bytes.len() / 4 - kept
}

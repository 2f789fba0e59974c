use ebus_core::experiment::*;
use std::path::Path;

fn kv(k: &str, v: &str) -> (String, String) {
    (k.into(), v.into())
}

#[test]
fn overrides_parse_by_field_type() {
    let cfg = apply_overrides(
        &ExperimentConfig::default(),
        &[kv("lr", "0.05"), kv("epochs", "3"), kv("model", "resnet3d"), kv("preset", "paper"), kv("deterministic", "true")],
    )
    .unwrap();
    assert_eq!(cfg.lr, 0.05);
    assert_eq!(cfg.epochs, 3);
    assert_eq!(cfg.model, "resnet3d");
    assert_eq!(cfg.preset, Preset::Paper);
    assert!(cfg.deterministic);
    assert!(matches!(
        apply_overrides(&cfg, &[kv("learning_rate", "1")]),
        Err(ExperimentError::UnknownKey(_))
    ));
    assert!(apply_overrides(&cfg, &[kv("epochs", "many")]).is_err());
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"seed": 3, "epochs": 2}"#).unwrap();
    let cfg = ExperimentConfig::from_file(&p).unwrap();
    assert_eq!((cfg.seed, cfg.epochs, cfg.lr), (3, 2, 0.01));
    std::fs::write(&p, r#"{"sed": 3}"#).unwrap();
    assert!(ExperimentConfig::from_file(&p).is_err());
}

#[test]
fn default_network_matches_sampling() {
    let cfg = ExperimentConfig::default();
    let net = cfg.network();
    let s = cfg.sampling();
    assert_eq!(net.alpha * net.slow_frames, s.clip_fast_len);
    assert_eq!(net.side, s.out_side);
    assert_eq!(s.window_stride(), 8);
    cfg.validate().unwrap();
}

#[test]
fn variants_configure_objective_and_pathways() {
    let r = VariantRegistry::default();
    assert_eq!(r.names().collect::<Vec<_>>(), ["resnet3d", "slowfast", "slowfast_swav"]);
    for (name, single, weight) in [("slowfast_swav", false, 1.0), ("slowfast", false, 0.0), ("resnet3d", true, 0.0)] {
        let cfg = ExperimentConfig::default();
        let (mut net, mut swav) = (cfg.network(), cfg.swav());
        r.get(name).unwrap().configure(&mut net, &mut swav);
        assert_eq!((net.single_pathway, swav.swav_weight), (single, weight), "{name}");
    }
    assert!(matches!(r.get("vit"), Err(ExperimentError::UnknownVariant { .. })));
}

fn small(root: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data_dir: root.join("data"),
        out_dir: root.join("out"),
        cases_per_class: 3,
        frames_per_case: 24,
        image_side: 64,
        crop_side: 64,
        out_side: 32,
        noise_pool_size: 4,
        epochs: 1,
        batch_size: 4,
        deterministic: true,
        ..Default::default()
    }
}

#[test]
fn commands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    assert!(matches!(run_eval(&cfg), Err(ExperimentError::MissingCheckpoint(_))));
    assert_eq!(run_synth(&cfg).unwrap(), 6);
    let data = prepare_data(&cfg).unwrap();
    assert_eq!((data.train_cases.len(), data.val_cases.len()), (4, 2));
    assert_eq!(data.train.len(), 4 * 2);
    assert_eq!(data.noise_pool.as_ref().unwrap().len(), 4);

    let trained = run_train(&cfg).unwrap();
    assert_eq!(trained.stats.len(), 1);
    assert!(cfg.checkpoint_path().is_file());
    let eval = run_eval(&cfg).unwrap();
    assert_eq!(eval.evaluation.scores.len(), 2);
    let metrics = std::fs::read_to_string(cfg.output("metrics_slowfast_swav.csv")).unwrap();
    assert!(metrics.starts_with("model,auc,accuracy,precision,recall,specificity,tp,fp,fn,tn\nslowfast_swav,"));

    let noise = run_noise_eval(&cfg).unwrap();
    assert_eq!(noise.augmented_clips, 2);
    assert_eq!(noise.clean, eval.metrics);
    let csv = std::fs::read_to_string(cfg.output("noise_metrics_slowfast_swav.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",delta_specificity"));

    let codes = run_export_codes(&cfg).unwrap();
    assert_eq!(codes.benign.len(), cfg.k_prototypes);
    assert!(cfg.output("codes_slowfast_swav.csv").is_file());
    assert!(cfg.output("epochs_slowfast_swav.csv").is_file());

    let wrong = ExperimentConfig {
        model: "resnet3d".into(),
        ..cfg.clone()
    };
    assert!(matches!(run_eval(&wrong), Err(ExperimentError::MissingCheckpoint(_))));
}

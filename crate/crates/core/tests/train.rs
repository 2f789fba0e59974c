use ebus_core::augment::TransformContext;
use ebus_core::dataio::{crop_resize, ClipSample, ClipWindow, Label, SamplingConfig};
use ebus_core::model::{Model, SlowFastConfig};
use ebus_core::numeric::{Graph, Rng, Tensor};
use ebus_core::swav::{sinkhorn_call_count, SwavConfig};
use ebus_core::synth::{gen_case_video, SynthSpec};
use ebus_core::train::*;
use proptest::prelude::*;

fn score(id: &str, prob: f64, truth: Label) -> CaseScore {
    aggregate_case(id, truth, vec![prob]).unwrap()
}

fn scores_from(preds: &[u8], labels: &[u8]) -> Vec<CaseScore> {
    let l = |b: u8| if b == 1 { Label::Malignant } else { Label::Benign };
    preds
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &t))| score(&format!("c{i}"), if p == 1 { 0.9 } else { 0.1 }, l(t)))
        .collect()
}

fn brute_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn aggregation_examples() {
    assert_eq!(aggregate_case("a", Label::Benign, vec![0.5]).unwrap().pred_label, Label::Malignant);
    assert_eq!(aggregate_case("a", Label::Benign, vec![0.2, 0.3]).unwrap().pred_label, Label::Benign);
    let c = aggregate_case("a", Label::Benign, vec![0.6, 0.4, 0.56]).unwrap();
    assert!((c.case_prob - 0.52).abs() < 1e-12);
    assert_eq!(c.pred_label, Label::Malignant);
    assert!(aggregate_case("a", Label::Benign, vec![]).is_err());
    assert_eq!(
        aggregate_case("a", Label::Benign, vec![0.5 - 1e-12]).unwrap().pred_label,
        Label::Benign
    );
}

#[test]
fn confusion_examples() {
    let m = MetricsReport::from_counts(40, 6, 4, 12, None);
    let r4 = |v: Option<f64>| (v.unwrap() * 1e4).round() / 1e4;
    assert_eq!(r4(m.accuracy), 0.8387);
    assert_eq!(r4(m.precision), 0.8696);
    assert_eq!(r4(m.recall), 0.9091);
    assert_eq!(r4(m.specificity), 0.6667);

    let all = confusion_metrics(&scores_from(&[1, 0, 1], &[1, 0, 1]));
    assert_eq!(all.values(), [Some(1.0); 5]);

    let half = confusion_metrics(&scores_from(&[1, 1, 0, 0], &[1, 0, 0, 1]));
    assert_eq!((half.tp, half.fp, half.fn_, half.tn), (1, 1, 1, 1));
    for v in &half.values()[1..] {
        assert_eq!(*v, Some(0.5));
    }
}

#[test]
fn undefined_metrics_are_none_and_na() {
    let m = confusion_metrics(&scores_from(&[1, 1], &[1, 1]));
    assert_eq!(m.auc, None);
    assert_eq!(m.specificity, None);
    let csv = metrics_csv(&[("x".into(), m)]);
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(csv.lines().nth(1).unwrap(), "x,NA,1.000000,1.000000,1.000000,NA,2,0,0,0");
}

#[test]
fn noise_csv_has_delta_columns() {
    let clean = MetricsReport::from_counts(4, 1, 1, 4, Some(0.9));
    let noisy = MetricsReport::from_counts(3, 1, 2, 4, Some(0.85));
    let csv = noise_metrics_csv(&[("m".into(), clean, noisy)]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,auc,accuracy,precision,recall,specificity,tp,fp,fn,tn,delta_auc,delta_accuracy,delta_precision,delta_recall,delta_specificity"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 15);
    assert_eq!(row[10], "-0.050000");
    assert_eq!(row[11], "-0.100000");
    assert_eq!(row[15 - 1], "+0.000000");
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]), Some(1.0));
    assert_eq!(auc(&[0.3; 4], &[true, true, false, false]), Some(0.5));
    assert_eq!(auc(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]), Some(0.75));
    assert_eq!(auc(&[0.9, 0.4], &[true, true]), None);
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle(raw in prop::collection::vec((0u8..6, any::<bool>()), 1..40)) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 5.0).collect();
        let pos: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
        match (auc(&scores, &pos), brute_auc(&scores, &pos)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn metrics_invariant_under_reordering(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = Rng::new(seed);
        let mut s: Vec<CaseScore> = (0..n)
            .map(|i| score(&format!("c{i}"), rng.uniform(), if rng.bernoulli(0.5) { Label::Malignant } else { Label::Benign }))
            .collect();
        let before = confusion_metrics(&s);
        rng.shuffle(&mut s);
        prop_assert_eq!(before, confusion_metrics(&s));
    }
}

fn tiny_net() -> SlowFastConfig {
    SlowFastConfig {
        side: 32,
        ..SlowFastConfig::tiny()
    }
}

fn clips(n_per_class: usize) -> Vec<ClipSample> {
    let spec = SynthSpec {
        image_side: 64,
        frames_per_case: 16,
        seed: 1,
        ..Default::default()
    };
    let sampling = SamplingConfig {
        crop_side: 64,
        out_side: 32,
        ..Default::default()
    };
    let mut out = Vec::new();
    for label in Label::ALL {
        for i in 0..n_per_class {
            let frames = gen_case_video(label, i, &spec).iter().map(|f| crop_resize(f, &sampling)).collect();
            let idx: Vec<usize> = (0..16).collect();
            out.push(ClipSample {
                window: ClipWindow {
                    case_id: format!("{}{i}", label.as_str()),
                    label,
                    start: 0,
                    slow_indices: idx.iter().copied().step_by(4).collect(),
                    slow_frames: idx.iter().copied().step_by(4).collect(),
                    fast_frames: idx.clone(),
                    fast_indices: idx,
                },
                frames,
                slow_stride: 4,
            });
        }
    }
    out
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        cutmix_p: 0.0,
        ..Default::default()
    }
}

#[test]
fn total_loss_arithmetic() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::scalar(0.3), false);
    let b = g.input(Tensor::scalar(0.7), false);
    let t = total_loss(&mut g, a, Some(b), 1.0).unwrap();
    assert!((g.value(t).data()[0] - 1.0).abs() < 1e-15);
    let t0 = total_loss(&mut g, a, None, 1.0).unwrap();
    assert_eq!(g.value(t0).data()[0], 0.3);
}

#[test]
fn total_gradient_is_sum_of_parts() {
    let model = Model::<f64>::init(&tiny_net(), &SwavConfig { swav_weight: 0.7, ..Default::default() }, 4).unwrap();
    let data = clips(2);
    let batch: Vec<&ClipSample> = data.iter().collect();
    let trainer = Trainer::new(train_cfg(), 2, TransformContext::default()).unwrap();
    let grads = |which: u8| {
        let mut store = model.store.clone();
        store.zero_grads();
        let mut g = Graph::new();
        let (loss, _) = trainer.batch_loss(&model, &mut g, &batch, 3).unwrap();
        let v = match which {
            0 => loss.total,
            1 => loss.cls,
            _ => loss.swav.unwrap(),
        };
        g.backward_into(v, &mut store).unwrap();
        store
    };
    let (total, cls, swav) = (grads(0), grads(1), grads(2));
    for ((t, c), s) in total.iter().zip(cls.iter()).zip(swav.iter()) {
        for ((gt, gc), gs) in t.1.grad.data().iter().zip(c.1.grad.data()).zip(s.1.grad.data()) {
            assert!((gt - (gc + 0.7 * gs)).abs() <= 1e-9 * (1.0 + gt.abs()), "{}", t.1.name);
        }
    }

    // Finite-difference spot check of the total through the head weights.
    let id = model.store.id("head.weight").unwrap();
    let loss_at = |delta: f64, k: usize| {
        let mut m = model.clone();
        m.store.get_mut(id).value.data_mut()[k] += delta;
        let mut g = Graph::inference();
        let (loss, _) = trainer.batch_loss(&m, &mut g, &batch, 3).unwrap();
        g.value(loss.total).data()[0]
    };
    for k in [0, 17, 200] {
        let h = 1e-5;
        let numeric = (loss_at(h, k) - loss_at(-h, k)) / (2.0 * h);
        let analytic = total.value(id).data().len().min(1) as f64 * total.get(id).grad.data()[k];
        assert!((numeric - analytic).abs() < 1e-6 * (1.0 + analytic.abs()), "{numeric} vs {analytic}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut model = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 1).unwrap();
    let before = model.store.clone();
    let trainer = Trainer::new(TrainConfig { lr: 0.0, ..train_cfg() }, 2, TransformContext::default()).unwrap();
    let stats = trainer.train_epoch(&mut model, &clips(2), 0).unwrap();
    assert!(stats.total_loss.is_finite());
    for ((_, a), (_, b)) in before.iter().zip(model.store.iter()) {
        if a.trainable {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }
}

#[test]
fn epochs_are_deterministic_and_finite() {
    let data = clips(4);
    let trainer = Trainer::new(train_cfg(), 2, TransformContext::default()).unwrap();
    let run = || {
        let mut model = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 2).unwrap();
        let s = trainer.train_epoch(&mut model, &data, 0).unwrap();
        (s, model.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!((a.cls_loss, a.swav_loss, a.total_loss, a.batches), (b.cls_loss, b.swav_loss, b.total_loss, b.batches));
    assert_eq!(sa, sb);
    assert!(a.cls_loss.is_finite() && a.swav_loss.unwrap().is_finite());
    assert_eq!(a.batches, 2);
}

#[test]
fn supervised_only_training_skips_sinkhorn() {
    let mut model = Model::<f32>::init(&tiny_net(), &SwavConfig { swav_weight: 0.0, ..Default::default() }, 2).unwrap();
    let trainer = Trainer::new(train_cfg(), 2, TransformContext::default()).unwrap();
    let before = sinkhorn_call_count();
    let s = trainer.train_epoch(&mut model, &clips(2), 0).unwrap();
    assert_eq!(sinkhorn_call_count(), before);
    assert_eq!(s.swav_loss, None);
    assert_eq!(s.cls_loss, s.total_loss);
}

#[test]
fn invalid_train_config_rejected() {
    for cfg in [
        TrainConfig { batch_size: 1, ..train_cfg() },
        TrainConfig { lr: -1.0, ..train_cfg() },
        TrainConfig { flip_p: 1.5, ..train_cfg() },
    ] {
        assert!(Trainer::new(cfg, 2, TransformContext::default()).is_err());
    }
}

#[test]
fn prediction_and_code_distribution() {
    let model = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 5).unwrap();
    let data = clips(2);
    let probs = predict_clips(&model, &data).unwrap();
    assert_eq!(probs.len(), 4);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    let cases: Vec<(String, Label)> = data
        .iter()
        .map(|c| (c.window.case_id.clone(), c.label()))
        .chain([("lost".to_string(), Label::Benign)])
        .collect();
    let ev = evaluate_cases(&model, &cases, &data).unwrap();
    assert_eq!(ev.scores.len(), 4);
    assert_eq!(ev.skipped, vec!["lost".to_string()]);

    let d = export_code_distribution(&model, &data).unwrap();
    assert_eq!(d, export_code_distribution(&model, &data).unwrap());
    for (_, row) in d.rows() {
        assert_eq!(row.len(), 16);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
    let csv = codes_csv(&d);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "class");
    assert_eq!(header[1], "p0");
    assert_eq!(header[16], "p15");
    assert!(csv.lines().nth(1).unwrap().starts_with("benign,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("malignant,"));
}

#[test]
fn checkpoint_roundtrip() {
    let model = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 6).unwrap();
    let bytes = encode_checkpoint(&model.store);
    assert_eq!(&bytes[..4], b"EBDS");
    let entries = decode_checkpoint(&bytes).unwrap();
    let mut fresh = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 7).unwrap();
    restore(&mut fresh.store, &entries).unwrap();
    assert_eq!(encode_checkpoint(&fresh.store), bytes);
    assert_eq!(fresh.store, model.store);

    let data = clips(1);
    assert_eq!(predict_clips(&model, &data).unwrap(), predict_clips(&fresh, &data).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ebds");
    save_checkpoint(&model.store, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_checkpoint(&path).unwrap(), entries);
}

#[test]
fn checkpoint_errors_carry_offsets() {
    let model = Model::<f32>::init(&tiny_net(), &SwavConfig::default(), 6).unwrap();
    let bytes = encode_checkpoint(&model.store);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(decode_checkpoint(&bad).unwrap_err().0, 0);
    let mut version = bytes.clone();
    version[4] = 9;
    assert_eq!(decode_checkpoint(&version).unwrap_err().0, 4);
    let cut = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(cut.0 > 16 && cut.1.contains("truncated"), "{cut:?}");

    let empty = [b"EBDS".as_slice(), &1u32.to_le_bytes(), &0u64.to_le_bytes()].concat();
    assert_eq!(decode_checkpoint(&empty).unwrap(), vec![]);

    let mut other = Model::<f32>::init(&SlowFastConfig { single_pathway: true, ..tiny_net() }, &SwavConfig::default(), 1).unwrap();
    assert!(restore(&mut other.store, &decode_checkpoint(&bytes).unwrap()).is_err());
}

#[test]
fn epoch_csv_format() {
    let s = EpochStats {
        epoch: 0,
        cls_loss: 0.5,
        swav_loss: None,
        total_loss: 0.5,
        batches: 3,
        clips_per_s: 10.0,
    };
    assert_eq!(
        epoch_csv(&[s]),
        "epoch,cls_loss,swav_loss,total_loss,batches,clips_per_s\n0,0.500000,NA,0.500000,3,10.000\n"
    );
}

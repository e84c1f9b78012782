use std::path::Path;

use rfn_core::config::RunConfig;
use rfn_core::synthdata::write_dataset;
use rfn_model::checkpoint;
use rfn_model::data::load_labelled;
use rfn_model::error::Error;
use rfn_model::eval::evaluate;
use rfn_model::infer::InferConfig;
use rfn_model::train::{format_loss_csv, learning_rate, train};
use tch::{Device, Kind, Tensor};

fn smoke_config(n: usize) -> RunConfig {
    RunConfig::parse(&format!(
        "image.height = 64\nimage.width = 64\nsynth.n = {n}\nsynth.instances_min = 1\nsynth.instances_max = 2\n\
         synth.char_height_min = 8\nsynth.char_height_max = 10\nsynth.length_min = 3\nsynth.length_max = 4\n\
         model.channels = 8\nmodel.stem_channels = 8\nmodel.blocks_per_stage = 1\nmodel.head_convs = 1\n\
         model.fc_dim = 32\ntrain.epochs = 2\ntrain.batch_size = 4\ntrain.optimizer = adam\ntrain.deterministic = true\n"
    ))
    .unwrap()
}

fn dataset(dir: &Path, cfg: &RunConfig) {
    write_dataset(dir, cfg.synth_n, cfg.synth_seed, &cfg.synth_config()).unwrap();
}

#[test]
fn toggle_matrix_trains_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(8);
    dataset(tmp.path(), &cfg);
    for (sff, apr) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut c = cfg.clone();
        c.toggle_sff = sff;
        c.toggle_apr = apr;
        let out = train(&c, tmp.path(), &mut |_| {}).unwrap();
        assert_eq!(out.logs.len(), 2);
        for l in &out.logs {
            assert!(l.total.is_finite());
            assert_eq!(l.l_seg == 0.0, !sff, "{sff} {apr}: {l:?}");
            assert_eq!(l.l_ref == 0.0, !apr, "{sff} {apr}: {l:?}");
        }
        let csv = format_loss_csv(&out.logs);
        assert!(csv.starts_with("epoch,L_seg,L_det,L_ref,total\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}

#[test]
fn lambda_mask_keeps_seg_column_out_of_total() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config(8);
    dataset(tmp.path(), &cfg);
    cfg.loss_lambda1 = 0.0;
    cfg.loss_lambda3 = 0.0;
    let out = train(&cfg, tmp.path(), &mut |_| {}).unwrap();
    for l in &out.logs {
        assert!(l.l_seg > 0.0);
        assert!((l.total - l.l_det).abs() < 1e-6 * l.l_det.max(1.0), "{l:?}");
    }
}

#[test]
fn deterministic_runs_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(8);
    dataset(tmp.path(), &cfg);
    let a = train(&cfg, tmp.path(), &mut |_| {}).unwrap();
    let b = train(&cfg, tmp.path(), &mut |_| {}).unwrap();
    for (x, y) in a.logs.iter().zip(&b.logs) {
        assert!((x.total - y.total).abs() < 1e-6, "{x:?} vs {y:?}");
    }
    let mut other = cfg.clone();
    other.train_seed = 8;
    let c = train(&other, tmp.path(), &mut |_| {}).unwrap();
    assert_ne!(a.logs.last().unwrap().total, c.logs.last().unwrap().total);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mut cfg = smoke_config(6);
    cfg.train_epochs = 1;
    dataset(&data, &cfg);
    let out = train(&cfg, &data, &mut |_| {}).unwrap();
    let path = tmp.path().join("m.ckpt");
    checkpoint::save(&out.model, &cfg, &path).unwrap();

    let (loaded, stored) = checkpoint::load(&path, Some(&cfg), Device::Cpu).unwrap();
    assert_eq!(stored, cfg);
    assert_eq!(loaded.norm.mean, out.model.norm.mean);
    let imgs = Tensor::randint(255, [1, 64, 64, 3], (Kind::Uint8, Device::Cpu));
    let run = |m: &rfn_model::model::Rfn| m.forward_t(&m.preprocess(&imgs), false).unwrap().logits;
    assert!(run(&out.model).equal(&run(&loaded)));

    let set = load_labelled(&data, 64, 64).unwrap();
    let icfg = InferConfig::from_run(&cfg);
    let r1 = evaluate(&out.model, &set, &icfg, 0.5).unwrap();
    let r2 = evaluate(&loaded, &set, &icfg, 0.5).unwrap();
    assert_eq!(r1.record.tp + r1.record.fp, r2.record.tp + r2.record.fp);
    assert!(r1.matched_counts[1].1 <= r1.matched_counts[0].1);

    let mut wider = cfg.clone();
    wider.model_channels = 16;
    match checkpoint::load(&path, Some(&wider), Device::Cpu) {
        Err(Error::ConfigMismatch { key, .. }) => assert_eq!(key, "model.channels"),
        other => panic!("expected mismatch, got {other:?}"),
    }
    let mut toggled = cfg.clone();
    toggled.toggle_apr = false;
    assert!(checkpoint::load(&path, Some(&toggled), Device::Cpu).unwrap_err().is_config());

    std::fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert!(checkpoint::load(&tmp.path().join("junk.ckpt"), None, Device::Cpu).is_err());
}

#[test]
fn missing_dataset_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(train(&smoke_config(4), &tmp.path().join("absent"), &mut |_| {}).is_err());
}

#[test]
fn divergence_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config(8);
    dataset(tmp.path(), &cfg);
    cfg.train_optimizer = rfn_core::config::Optimizer::Sgd;
    cfg.train_lr = 10.0;
    cfg.train_momentum = 0.99;
    cfg.train_epochs = 20;
    match train(&cfg, tmp.path(), &mut |_| {}) {
        Err(Error::NonFiniteLoss { detail, .. }) => assert!(detail.contains("L_det")),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.logs)),
    }
}

#[test]
fn learning_rate_schedule() {
    let mut cfg = RunConfig::default();
    assert_eq!(learning_rate(&cfg, 0, 100), 0.001);
    assert_eq!(learning_rate(&cfg, 15, 100), 0.0005);
    assert_eq!(learning_rate(&cfg, 31, 100), 0.00025);
    cfg.train_warmup_iters = 10;
    assert!((learning_rate(&cfg, 0, 4) - 0.0005).abs() < 1e-15);
}

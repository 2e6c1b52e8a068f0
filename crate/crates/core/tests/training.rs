use decent::data::{Dataset, InteractionKind};
use decent::dynamics::{ParamGroup, ParameterSet};
use decent::loss::LossWeights;
use decent::static_embed::{StaticMode, StaticSpec};
use decent::synthgen::{generate, SynthConfig};
use decent::training::{adam_step, AdamConfig, Checkpoint, OptimizerState, Prepared, TrainConfig, TrainProgress, Trainer};
use decent::{Error, Exec};

fn tiny(seed: u64) -> Dataset {
    let mut cfg = SynthConfig::preset("tiny").unwrap();
    cfg.seed = seed;
    generate(&cfg).unwrap().dataset
}

fn cfg(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        pretrain_epochs: 1,
        d_dyn: 8,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn prepare(ds: &Dataset, c: &TrainConfig) -> Prepared {
    Prepared::new(ds, c.d_dyn, c.static_spec, &Exec::Sequential).unwrap()
}

fn filled(dims: &decent::dynamics::DimsConfig, v: f64) -> ParameterSet {
    let mut p = ParameterSet::zeros(dims);
    for (_, t) in p.tensors_mut() {
        t.fill(v);
    }
    p
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let prep = prepare(&tiny(1), &cfg(1));
    let adam = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut params = ParameterSet::zeros(&prep.dims);
    let mut opt = OptimizerState::new(&prep.dims);
    adam_step(&adam, &mut params, &filled(&prep.dims, 1.0), &mut opt, |_| true).unwrap();
    assert_eq!(opt.step, 1);
    for (_, t) in params.tensors() {
        for &x in t {
            assert!((x + 1e-3).abs() < 1e-10, "{x}");
        }
    }
}

#[test]
fn adam_zero_gradient_without_decay_is_a_no_op() {
    let prep = prepare(&tiny(1), &cfg(1));
    let adam = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let before = ParameterSet::init(&prep.dims, 3);
    let mut params = before.clone();
    let mut opt = OptimizerState::new(&prep.dims);
    adam_step(&adam, &mut params, &ParameterSet::zeros(&prep.dims), &mut opt, |_| true).unwrap();
    assert_eq!(params, before);
}

#[test]
fn adam_is_deterministic_and_respects_freezing() {
    let prep = prepare(&tiny(1), &cfg(1));
    let adam = AdamConfig::default();
    let start = ParameterSet::init(&prep.dims, 3);
    let grads = ParameterSet::init(&prep.dims, 4);
    let frozen = |g: ParamGroup| !matches!(g, ParamGroup::Decoder(InteractionKind::Transfer));
    let run = || {
        let mut p = start.clone();
        let mut opt = OptimizerState::new(&prep.dims);
        adam_step(&adam, &mut p, &grads, &mut opt, frozen).unwrap();
        adam_step(&adam, &mut p, &grads, &mut opt, frozen).unwrap();
        (p, opt)
    };
    let (a, oa) = run();
    let (b, ob) = run();
    assert_eq!((&a, &oa), (&b, &ob));
    let t = InteractionKind::Transfer;
    assert_eq!(a.module(t).decoder, start.module(t).decoder);
    assert_ne!(a.module(t).patient, start.module(t).patient);
}

#[test]
fn adam_reports_divergence() {
    let prep = prepare(&tiny(1), &cfg(1));
    let mut params = ParameterSet::zeros(&prep.dims);
    let mut opt = OptimizerState::new(&prep.dims);
    let err = adam_step(
        &AdamConfig::default(),
        &mut params,
        &filled(&prep.dims, f64::NAN),
        &mut opt,
        |_| true,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn init_is_seeded_and_bounded() {
    let prep = prepare(&tiny(1), &cfg(1));
    let a = ParameterSet::init(&prep.dims, 9);
    assert_eq!(a, ParameterSet::init(&prep.dims, 9));
    assert_ne!(a, ParameterSet::init(&prep.dims, 10));
    for m in &a.modules {
        for w in [&m.patient.w, &m.counterpart.w, &m.decoder.w] {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            assert!(w.as_slice().iter().all(|x| x.abs() <= bound));
        }
        assert!(m.patient.b.iter().chain(&m.counterpart.b).chain(&m.decoder.b).all(|&b| b == 0.0));
    }
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let ds = tiny(2);
    let c = cfg(2);
    let prep = prepare(&ds, &c);
    let exec = Exec::Sequential;
    let fit = Trainer::new(&prep, &c, &exec).unwrap().fit(|_, _| Ok(())).unwrap();
    let ck = fit.train.progress.checkpoint(&prep);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), ck.to_bytes());

    let bytes = ck.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut version = bytes.clone();
    version[7] = b'9';
    let msg = Checkpoint::from_bytes(&version).unwrap_err().to_string();
    assert!(msg.contains("version"), "{msg}");
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn checkpoint_records_static_mode_and_width() {
    let ds = tiny(2);
    let mut widths = Vec::new();
    for mode in [StaticMode::OneHot, StaticMode::Bourgain] {
        let mut c = cfg(0);
        c.static_spec = StaticSpec { mode, copies: None, seed: 0 };
        let prep = prepare(&ds, &c);
        let ck = TrainProgress::start(&prep.dims, ParameterSet::zeros(&prep.dims)).checkpoint(&prep);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.static_spec.mode, mode);
        widths.push(back.dims.d_static);
    }
    assert_ne!(widths[0], widths[1]);
}

#[test]
fn resume_continues_bitwise() {
    let ds = tiny(3);
    let exec = Exec::Sequential;
    let full_cfg = cfg(4);
    let prep = prepare(&ds, &full_cfg);
    let full = Trainer::new(&prep, &full_cfg, &exec).unwrap().fit(|_, _| Ok(())).unwrap();

    let half_cfg = cfg(2);
    let half = Trainer::new(&prep, &half_cfg, &exec).unwrap().fit(|_, _| Ok(())).unwrap();
    let bytes = half.train.progress.checkpoint(&prep).to_bytes();
    let progress = TrainProgress::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap(), &prep).unwrap();
    let rest = Trainer::new(&prep, &full_cfg, &exec).unwrap().train(progress, |_, _| Ok(())).unwrap();

    let joined: Vec<_> = half.train.history.iter().chain(&rest.history).copied().collect();
    assert_eq!(joined, full.train.history);
    assert_eq!(rest.progress, full.train.progress);
    assert_eq!(rest.final_state, full.train.final_state);
}

#[test]
fn checkpoint_from_other_data_is_rejected() {
    let c = cfg(0);
    let a = prepare(&tiny(3), &c);
    let mut other = SynthConfig::preset("tiny").unwrap();
    other.populations.doctors += 1;
    let b = prepare(&generate(&other).unwrap().dataset, &c);
    let ck = TrainProgress::start(&a.dims, ParameterSet::zeros(&a.dims)).checkpoint(&a);
    assert!(TrainProgress::from_checkpoint(ck, &b).is_err());
}

#[test]
fn pretrain_freezes_other_modules_and_reduces_its_loss() {
    let mut ds = tiny(4);
    ds.log = ds.log.filter_kind(InteractionKind::Physician);
    let mut c = cfg(0);
    c.pretrain_epochs = 5;
    let prep = prepare(&ds, &c);
    let exec = Exec::Sequential;
    let trainer = Trainer::new(&prep, &c, &exec).unwrap();
    let kind = InteractionKind::Physician;
    let batches = trainer.pretrain_batches(kind).unwrap();
    let weights = trainer.pretrain_weights(kind);
    let before = trainer.init_params();
    let mut params = before.clone();
    let history = trainer.pretrain(kind, &mut params).unwrap();
    assert_eq!(history.len(), 5);
    for other in [InteractionKind::Medication, InteractionKind::Transfer] {
        assert_eq!(params.module(other), before.module(other));
    }
    assert_ne!(params.module(kind), before.module(kind));
    let loss_before = trainer.evaluate(&batches, weights, &before).unwrap().0.total();
    let loss_after = trainer.evaluate(&batches, weights, &params).unwrap().0.total();
    assert!(loss_after < loss_before, "{loss_after} vs {loss_before}");

    assert!(matches!(
        trainer.pretrain_batches(InteractionKind::Medication),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn pretrain_keeps_only_own_domain_weight() {
    let c = cfg(0);
    let prep = prepare(&tiny(1), &c);
    let exec = Exec::Sequential;
    let t = Trainer::new(&prep, &c, &exec).unwrap();
    let w = t.pretrain_weights(InteractionKind::Medication);
    assert_eq!(w.dom, [0.0, c.weights.dom[1], 0.0]);
    assert_eq!((w.reconst, w.temp), (c.weights.reconst, c.weights.temp));
}

#[test]
fn no_epochs_leaves_parameters_at_init() {
    let mut c = cfg(0);
    c.pretrain_epochs = 0;
    let prep = prepare(&tiny(1), &c);
    let exec = Exec::Sequential;
    let t = Trainer::new(&prep, &c, &exec).unwrap();
    let fit = t.fit(|_, _| Ok(())).unwrap();
    assert!(fit.pretrain.is_empty());
    assert!(fit.train.history.is_empty());
    assert_eq!(fit.train.progress.params, t.init_params());
}

#[test]
fn flat_loss_with_patience_one_stops_after_epoch_two() {
    let mut c = cfg(10);
    c.patience = 1;
    c.pretrain_epochs = 0;
    c.weights = LossWeights {
        reconst: 0.0,
        temp: 0.0,
        dom: [0.0; 3],
    };
    let prep = prepare(&tiny(1), &c);
    let exec = Exec::Sequential;
    let out = Trainer::new(&prep, &c, &exec).unwrap().fit(|_, _| Ok(())).unwrap().train;
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history[0].total(), out.history[1].total());
    assert!(out.stopped_early);
}

#[test]
fn early_stopped_history_is_a_prefix() {
    let ds = tiny(6);
    let exec = Exec::Sequential;
    let mut long = cfg(12);
    long.patience = 1000;
    long.adam.learning_rate = 0.05;
    let mut short = long;
    short.patience = 1;
    let prep = prepare(&ds, &long);
    let a = Trainer::new(&prep, &long, &exec).unwrap().fit(|_, _| Ok(())).unwrap().train;
    let b = Trainer::new(&prep, &short, &exec).unwrap().fit(|_, _| Ok(())).unwrap().train;
    assert_eq!(a.history.len(), 12);
    assert!(b.history.len() <= a.history.len());
    assert_eq!(&a.history[..b.history.len()], &b.history[..]);
}

#[test]
fn tiny_training_reduces_loss_and_reports_each_epoch() {
    let c = cfg(20);
    let prep = prepare(&tiny(7), &c);
    let exec = Exec::Sequential;
    let mut seen = Vec::new();
    let out = Trainer::new(&prep, &c, &exec)
        .unwrap()
        .fit(|p, e| {
            seen.push((p.epoch, e.epoch));
            Ok(())
        })
        .unwrap()
        .train;
    assert!(out.history.len() <= 20);
    assert!(out.history.last().unwrap().total() < out.history[0].total());
    assert!(seen.iter().all(|(a, b)| a == b));
    assert_eq!(seen.len(), out.history.len());
}

use convctc::checkpoint::Checkpoint;
use convctc::config::{InputGeometry, NetworkConfig};
use convctc::data::{
    generate_synthetic, Split, SplitCounts, SyntheticCorpus, SyntheticTask, Utterance,
};
use convctc::layers::Mode;
use convctc::optim::Stage;
use convctc::train::{accumulate_utterance, run_training, MetricsLine, TrainOptions, Trainer};
use convctc::{Error, LabelSequence, Tensor};

fn corpus() -> SyntheticCorpus {
    generate_synthetic(&SyntheticTask {
        symbols: 3,
        bands: 9,
        min_frames: 10,
        max_frames: 16,
        noise_std: 0.1,
        counts: SplitCounts {
            train: 12,
            dev: 4,
            test: 2,
        },
        seed: 11,
    })
    .unwrap()
}

fn tiny_config() -> NetworkConfig {
    NetworkConfig::convolutional(
        InputGeometry {
            channels: 3,
            bands: 9,
        },
        4,
        &[4, 3],
        &[8],
        0.3,
        true,
    )
}

fn options() -> TrainOptions {
    TrainOptions {
        seed: 5,
        batch_size: 5,
        max_epochs: 3,
        record_seconds: false,
        hyper: convctc::optim::Hyperparams {
            lr: 1e-2,
            ..convctc::optim::Hyperparams::adam()
        },
        ..TrainOptions::default()
    }
}

fn setup<S: convctc::Scalar>() -> (SyntheticCorpus, Vec<Utterance<S>>, Vec<Utterance<S>>) {
    let c = corpus();
    let stats = c.fit_stats().unwrap();
    let train = c.utterances(Split::Train, &stats).unwrap();
    let dev = c.utterances(Split::Dev, &stats).unwrap();
    (c, train, dev)
}

fn trainer<S: convctc::Scalar>(c: &SyntheticCorpus, opts: TrainOptions) -> Trainer<S> {
    Trainer::new(
        tiny_config(),
        c.alphabet.clone(),
        c.fit_stats().unwrap(),
        opts,
    )
    .unwrap()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (c, train, dev) = setup::<f32>();
    let mut a = trainer::<f32>(&c, options());
    let mut b = trainer::<f32>(&c, options());
    for _ in 0..3 {
        let ra = a.run_epoch(&train, &dev, None).unwrap();
        let rb = b.run_epoch(&train, &dev, None).unwrap();
        assert_eq!(
            serde_json::to_string(&ra.metrics).unwrap(),
            serde_json::to_string(&rb.metrics).unwrap()
        );
    }
    assert_eq!(a.checkpoint().encode(), b.checkpoint().encode());
}

#[test]
fn checkpoint_roundtrip_is_byte_identical() {
    let (c, train, dev) = setup::<f64>();
    let mut t = trainer::<f64>(&c, options());
    t.run_epoch(&train, &dev, None).unwrap();
    let bytes = t.checkpoint().encode();
    let loaded = Checkpoint::<f64>::decode(&bytes).unwrap();
    assert_eq!(loaded, t.checkpoint());
    assert_eq!(loaded.encode(), bytes);
}

#[test]
fn resume_reproduces_next_epoch() {
    let (c, train, dev) = setup::<f32>();
    let mut straight = trainer::<f32>(&c, options());
    let lines: Vec<MetricsLine> = (0..3)
        .map(|_| straight.run_epoch(&train, &dev, None).unwrap().metrics)
        .collect();

    let mut first = trainer::<f32>(&c, options());
    first.run_epoch(&train, &dev, None).unwrap();
    first.run_epoch(&train, &dev, None).unwrap();
    let bytes = first.checkpoint().encode();
    drop(first);
    let mut resumed = Trainer::resume(Checkpoint::<f32>::decode(&bytes).unwrap()).unwrap();
    let third = resumed.run_epoch(&train, &dev, None).unwrap().metrics;
    assert_eq!(
        serde_json::to_string(&third).unwrap(),
        serde_json::to_string(&lines[2]).unwrap()
    );
    assert_eq!(
        resumed.checkpoint().encode(),
        straight.checkpoint().encode()
    );
}

#[test]
fn checkpoint_rejects_mismatches() {
    let (c, _, _) = setup::<f32>();
    let t = trainer::<f32>(&c, options());
    let mut ckpt = t.checkpoint();
    ckpt.config = NetworkConfig::convolutional(
        InputGeometry {
            channels: 3,
            bands: 9,
        },
        4,
        &[5, 3],
        &[8],
        0.3,
        true,
    );
    let err = Checkpoint::<f32>::decode(&ckpt.encode()).unwrap_err();
    assert!(err.to_string().contains("layer00.weight"), "{err}");

    let good = t.checkpoint().encode();
    assert!(
        Checkpoint::<f64>::decode(&good).is_err(),
        "dtype mismatch accepted"
    );
    assert!(Checkpoint::<f32>::decode(&good[..good.len() - 3]).is_err());
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(Checkpoint::<f32>::decode(&bad).is_err());
    let mut extra = good;
    extra.push(0);
    assert!(Checkpoint::<f32>::decode(&extra).is_err());
}

#[test]
fn batched_gradient_is_sum_of_single_gradients() {
    let (c, train, _) = setup::<f64>();
    let mut cfg = tiny_config();
    cfg.set_dropout(0.0);
    let t =
        Trainer::<f64>::new(cfg, c.alphabet.clone(), c.fit_stats().unwrap(), options()).unwrap();
    let net = t.network();
    let params = t.params();
    let mut together = params.zeros_like();
    let mut separate = params.zeros_like();
    for u in &train[..2] {
        accumulate_utterance(
            net,
            params,
            &u.features,
            &u.labels,
            Mode::Eval,
            &mut together,
        )
        .unwrap();
        let mut single = params.zeros_like();
        accumulate_utterance(net, params, &u.features, &u.labels, Mode::Eval, &mut single).unwrap();
        separate.add_assign(&single).unwrap();
    }
    assert_eq!(together, separate);
}

#[test]
fn infeasible_utterances_are_skipped_and_counted() {
    let (c, mut train, dev) = setup::<f32>();
    let frames = train[0].frames();
    train[0].labels = LabelSequence::new(vec![1; frames], 4).unwrap();
    let mut t = trainer::<f32>(&c, options());
    let record = t.run_epoch(&train, &dev, None).unwrap();
    assert_eq!(record.skipped, 1);
    assert!(record.metrics.train_loss.is_finite());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let (c, mut train, dev) = setup::<f32>();
    train[3].features.data_mut()[0] = f32::NAN;
    let mut t = trainer::<f32>(&c, options());
    match t.run_epoch(&train, &dev, None) {
        Err(Error::NonFiniteLoss {
            epoch, utterances, ..
        }) => {
            assert_eq!(epoch, 1);
            assert!(utterances.contains(&train[3].id));
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn plateau_switches_to_sgd_then_stops() {
    let (c, train, dev) = setup::<f32>();
    let mut opts = options();
    opts.patience = 1;
    opts.max_epochs = 10;
    opts.hyper.lr = 1e-12;
    opts.fine_tune = Some(convctc::optim::Hyperparams {
        lr: 1e-12,
        ..convctc::optim::Hyperparams::sgd()
    });
    let mut t = trainer::<f32>(&c, opts);
    let mut records = Vec::new();
    while !t.is_done() {
        records.push(t.run_epoch(&train, &dev, None).unwrap());
    }
    assert!(records[0].improved);
    assert!(records[1].switched, "{records:?}");
    assert_eq!(records[1].metrics.stage, Stage::Adam);
    assert_eq!(records[2].metrics.stage, Stage::Sgd);
    assert_eq!(records.len(), 3);
    assert_eq!(t.stage(), Stage::Sgd);
}

#[test]
fn run_training_writes_log_and_checkpoints() {
    let (c, train, dev) = setup::<f32>();
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer::<f32>(&c, options());
    let mut seen = 0;
    let layout = run_training(&mut t, &train, &dev, None, dir.path(), |_| seen += 1).unwrap();
    assert_eq!(seen, 3);
    let log = std::fs::read_to_string(&layout.metrics).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i + 1);
        assert_eq!(v["stage"], "adam");
        assert!(v["train_loss"].is_f64() && v["dev_ler"].is_f64());
        assert!(v["seconds"].is_null());
    }
    let last = Checkpoint::<f32>::load(&layout.last).unwrap();
    assert_eq!(last.meta.epoch, 3);
    let best = Checkpoint::<f32>::load(&layout.best).unwrap();
    assert_eq!(Some(best.meta.best_dev_ler.unwrap()), t.best_dev_ler());

    // Resuming with a higher epoch limit appends to the same log.
    let mut resumed = Trainer::resume(last).unwrap();
    resumed.set_max_epochs(4);
    run_training(&mut resumed, &train, &dev, None, dir.path(), |_| {}).unwrap();
    assert_eq!(
        std::fs::read_to_string(&layout.metrics)
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn decoding_an_all_blank_network_yields_nothing() {
    let (c, _, dev) = setup::<f64>();
    let mut t = trainer::<f64>(&c, options());
    let _ = &mut t;
    let mut ckpt = t.checkpoint();
    // Zero every weight and push the output bias towards blank.
    for p in ckpt.params.iter_mut() {
        p.tensor.fill(0.0);
    }
    let last = ckpt.params.len() - 1;
    ckpt.params.tensor_mut(last).data_mut()[0] = 5.0;
    let t = Trainer::resume(ckpt).unwrap();
    let report = t.evaluate(&dev, None).unwrap();
    assert!(report.utterances.iter().all(|u| u.hypothesis.is_empty()));
    assert_eq!(report.error_rate, 1.0);
    let x: Tensor<f64> = dev[0].features.clone();
    let lp = t.network().predict(t.params(), &x).unwrap();
    assert_eq!(lp.shape(), [4, x.dim(2)]);
}

#[test]
fn tiny_model_learns_noiseless_task() {
    let corpus = generate_synthetic(&SyntheticTask {
        symbols: 4,
        bands: 9,
        min_frames: 15,
        max_frames: 30,
        noise_std: 0.0,
        counts: SplitCounts {
            train: 300,
            dev: 50,
            test: 0,
        },
        seed: 3,
    })
    .unwrap();
    let stats = corpus.fit_stats().unwrap();
    let train = corpus.utterances::<f32>(Split::Train, &stats).unwrap();
    let dev = corpus.utterances::<f32>(Split::Dev, &stats).unwrap();
    let config = NetworkConfig::convolutional(
        InputGeometry {
            channels: 3,
            bands: 9,
        },
        5,
        &[8, 8],
        &[32],
        0.3,
        true,
    );
    let opts = TrainOptions {
        max_epochs: 50,
        batch_size: 10,
        patience: 50,
        fine_tune: None,
        record_seconds: false,
        hyper: convctc::optim::Hyperparams {
            lr: 1e-3,
            ..convctc::optim::Hyperparams::adam()
        },
        ..TrainOptions::default()
    };
    let mut t = Trainer::<f32>::new(config, corpus.alphabet.clone(), stats, opts).unwrap();
    let mut lers = Vec::new();
    while !t.is_done() {
        let ler = t
            .run_epoch(&train, &dev, None)
            .unwrap()
            .metrics
            .dev_ler
            .unwrap();
        lers.push(ler);
        if ler <= 0.02 {
            break;
        }
    }
    assert!(*lers.last().unwrap() <= 0.02, "{lers:?}");
}

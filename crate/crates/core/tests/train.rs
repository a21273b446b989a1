use hc2_core::backbone::{main_loss, ModelParams, Sample};
use hc2_core::data::{synth_generate, Dataset, Schema, SynthConfig};
use hc2_core::train::{
    auc, evaluate, final_mean_auc, init_stream, read_model, total_loss, train, train_step,
    uniformity, write_metrics, write_model, AdamState, SavedModel, TrainConfig, TrainState,
    ALL_SCENARIOS, METRICS_HEADER,
};
use hc2_core::{Error, Graph, RngStream};

fn small_data(seed: u64) -> Dataset {
    synth_generate(&SynthConfig {
        counts: vec![400, 400, 80],
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch: 64,
        epochs: 2,
        bank: 128,
        refresh: 5,
        shared_widths: vec![16, 16],
        tower_widths: vec![8],
        ..TrainConfig::default()
    }
}

fn batch_of(data: &Dataset, n: usize) -> Vec<&Sample> {
    data.train
        .iter()
        .step_by(data.train.len() / n)
        .take(n)
        .collect()
}

fn fresh(cfg: &TrainConfig, data: &Dataset) -> (ModelParams, TrainState) {
    let params =
        ModelParams::init(cfg.model_shape(&data.schema), &mut init_stream(cfg.seed)).unwrap();
    (params, TrainState::new(cfg).unwrap())
}

#[test]
fn zero_lambdas_give_the_main_loss() {
    let data = small_data(1);
    let cfg = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..small_config()
    };
    let (params, mut state) = fresh(&cfg, &data);
    let batch = batch_of(&data, 32);
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let step = total_loss(&mut g, &batch, &vars, &mut state, &cfg).unwrap();
    let total = g.value(step.total).item();
    let mut h = Graph::new();
    let vars = params.bind(&mut h);
    let main = main_loss(&mut h, &batch, &vars).unwrap();
    assert_eq!(total, h.value(main).item());
    assert!(step.g.is_none() && step.s.is_none());
}

#[test]
fn total_is_the_weighted_component_sum() {
    let data = small_data(2);
    for (l1, l2) in [(1.0, 0.0), (0.3, 0.7), (0.1, 0.1)] {
        let cfg = TrainConfig {
            lambda1: l1,
            lambda2: l2,
            ..small_config()
        };
        let (params, mut state) = fresh(&cfg, &data);
        let batch = batch_of(&data, 40);
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let step = total_loss(&mut g, &batch, &vars, &mut state, &cfg).unwrap();
        let b = step.breakdown(&g);
        let mut h = Graph::new();
        let hv = params.bind(&mut h);
        let main = main_loss(&mut h, &batch, &hv).unwrap();
        assert!((b.main - h.value(main).item()).abs() < 1e-12);
        let g_mean = step.g.as_ref().map_or(0.0, |(l, _)| {
            l.per_anchor.iter().sum::<f64>() / l.per_anchor.len() as f64
        });
        let s_mean = step.s.as_ref().map_or(0.0, |(l, _)| {
            l.per_anchor.iter().sum::<f64>() / l.per_anchor.len() as f64
        });
        assert!(step.g.is_some());
        assert_eq!(step.s.is_some(), l2 > 0.0);
        assert!((b.g - g_mean).abs() < 1e-12);
        assert!((b.s - s_mean).abs() < 1e-12);
        assert!((b.total - (b.main + l1 * g_mean + l2 * s_mean)).abs() < 1e-12);
    }
}

#[test]
fn non_finite_loss_reports_its_components() {
    let data = small_data(3);
    let cfg = small_config();
    let (mut params, mut state) = fresh(&cfg, &data);
    params.towers[0].head.bias.data_mut()[0] = f64::NAN;
    let batch = batch_of(&data, 30);
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    match total_loss(&mut g, &batch, &vars, &mut state, &cfg) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("main") && msg.contains("g "), "{msg}"),
        other => panic!("{:?}", other.map(|s| s.total)),
    }
}

#[test]
fn bank_fills_after_steps_only_when_the_generalized_term_is_on() {
    let data = small_data(4);
    for (lambda1, want) in [(0.1, 64), (0.0, 0)] {
        let cfg = TrainConfig {
            lambda1,
            ..small_config()
        };
        let (mut params, mut state) = fresh(&cfg, &data);
        let mut adam = AdamState::new(params.tensors());
        let batch = batch_of(&data, 32);
        train_step(&mut params, &mut adam, &batch, &mut state, &cfg).unwrap();
        train_step(&mut params, &mut adam, &batch, &mut state, &cfg).unwrap();
        assert_eq!(state.bank.len(), want);
        assert_eq!(state.step, 2);
    }
}

#[test]
fn untrained_model_scores_near_chance() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let out = train(
        &data,
        &TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.metrics.len(), data.schema.scenarios + 1);
    let pooled = out
        .metrics
        .iter()
        .find(|r| r.scenario == ALL_SCENARIOS)
        .unwrap();
    let a = pooled.auc.unwrap();
    assert!((a - 0.5).abs() <= 0.05, "{a}");
}

#[test]
fn training_is_deterministic_and_ablations_finish() {
    let data = small_data(5);
    let cfg = small_config();
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.len(), 3 * 4);

    for name in ["g-loss", "noise", "weight", "s-loss", "fine"] {
        let mut c = cfg.clone();
        c.components.ablate(name).unwrap();
        let out = train(&data, &c).unwrap();
        assert!(out
            .metrics
            .iter()
            .all(|r| r.loss_main.is_finite() && r.loss_g.is_finite() && r.loss_s.is_finite()));
        assert_eq!(out.metrics[..4], a.metrics[..4], "{name}");
        if name == "g-loss" {
            assert!(out.metrics.iter().all(|r| r.loss_g == 0.0));
        }
    }
}

#[test]
fn zero_lambdas_match_disabled_terms_exactly() {
    let data = small_data(6);
    let zero = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..small_config()
    };
    let mut off = small_config();
    for name in ["g-loss", "s-loss", "noise", "weight", "fine"] {
        off.components.ablate(name).unwrap();
    }
    let a = train(&data, &zero).unwrap();
    let b = train(&data, &off).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
}

#[test]
fn separable_toy_is_learned() {
    let mut rng = RngStream::new(7, "toy");
    let samples: Vec<Sample> = (0..600)
        .map(|_| {
            let x = rng.below(10) as u32;
            Sample::new(0, u8::from(x < 5), vec![x, rng.below(4) as u32])
        })
        .collect();
    let data = Dataset {
        schema: Schema {
            scenarios: 1,
            vocab_sizes: vec![10, 4],
        },
        train: samples.clone(),
        test: samples,
    };
    let cfg = TrainConfig {
        epochs: 50,
        batch: 64,
        shared_widths: vec![16],
        tower_widths: vec![8],
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let eval = evaluate(&out.params, &data.train, cfg.epochs, None, 0).unwrap();
    let a = eval.rows[0].auc.unwrap();
    assert!(a > 0.99, "{a}");
}

#[test]
fn auc_and_uniformity_oracles() {
    assert_eq!(auc(&[0.9, 0.1], &[1, 0]), Some(1.0));
    assert_eq!(auc(&[0.1, 0.9], &[1, 0]), Some(0.0));
    assert_eq!(auc(&[0.3, 0.3], &[1, 0]), Some(0.5));
    assert_eq!(auc(&[0.1, 0.9], &[1, 1]), None);

    assert_eq!(uniformity(&vec![vec![1.0, 2.0]; 4]).0, Some(0.0));
    assert!((uniformity(&[vec![0.0, 3.0], vec![0.0, -1.0]]).0.unwrap() + 8.0).abs() < 1e-12);
    assert_eq!(
        uniformity(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]),
        (Some(0.0), 1)
    );

    let mut rng = RngStream::new(8, "unif");
    let vs: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let v: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            let d: f64 = vs[i]
                .iter()
                .zip(&vs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += (-2.0 * d).exp();
            pairs += 1.0;
        }
    }
    let want = (total / pairs).ln();
    assert!((uniformity(&vs).0.unwrap() - want).abs() < 1e-12);
}

#[test]
fn metrics_csv_format() {
    let data = small_data(9);
    let out = train(
        &data,
        &TrainConfig {
            epochs: 1,
            ..small_config()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_metrics(&mut buf, &out.metrics).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 4);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 7);
        for c in &cols[2..6] {
            assert_eq!(c.split('.').nth(1).map(str::len), Some(6), "{line}");
        }
    }
    assert!(lines[8].starts_with("1,-1,"));
    let finals: Vec<f64> = out.metrics[4..7].iter().map(|r| r.auc.unwrap()).collect();
    let mean = finals.iter().sum::<f64>() / 3.0;
    assert!((final_mean_auc(&out.metrics).unwrap() - mean).abs() < 1e-15);
}

#[test]
fn model_file_round_trip_and_corruption() {
    let data = small_data(10);
    let out = train(&data, &small_config()).unwrap();
    let saved = SavedModel {
        params: out.params.clone(),
        epochs_trained: 2,
    };
    let mut bytes = Vec::new();
    write_model(&mut bytes, &saved).unwrap();
    let back = read_model(bytes.as_slice()).unwrap();
    assert_eq!(back.params, out.params);
    assert_eq!(back.epochs_trained, 2);
    let mut again = Vec::new();
    write_model(&mut again, &back).unwrap();
    assert_eq!(bytes, again);

    assert!(matches!(
        read_model(&bytes[..bytes.len() - 3]),
        Err(Error::Data(_))
    ));
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(read_model(bad.as_slice()), Err(Error::Data(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(read_model(long.as_slice()), Err(Error::Data(_))));
}

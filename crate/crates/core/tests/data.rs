use hc2_core::backbone::Sample;
use hc2_core::data::synth::generate_with;
use hc2_core::data::{
    batch_iter, load_csv, load_dir, parse_csv, synth_generate, write_csv, write_dir, HiddenWeights,
    SynthConfig,
};
use hc2_core::train::auc;
use hc2_core::{Error, RngStream};

#[test]
fn two_row_file_infers_schema() {
    let t = parse_csv("scenario,label,f0,f1\n0,1,3,2\n1,0,0,5\n".as_bytes()).unwrap();
    assert_eq!(t.schema.scenarios, 2);
    assert_eq!(t.schema.vocab_sizes, vec![4, 6]);
    assert_eq!(t.samples[1], Sample::new(1, 0, vec![0, 5]));
}

#[test]
fn empty_body_and_bad_rows() {
    let t = parse_csv("scenario,label,f0\n".as_bytes()).unwrap();
    assert!(t.samples.is_empty());
    assert_eq!(t.schema.scenarios, 0);
    for (body, line) in [
        ("0,2,1\n", "line 2"),
        ("0,1,1\n-1,0,1\n", "line 3"),
        ("0,1,x\n", "line 2"),
        ("0,1\n", "line 2"),
    ] {
        let text = format!("scenario,label,f0\n{body}");
        match parse_csv(text.as_bytes()) {
            Err(Error::Data(msg)) => assert!(msg.contains(line), "{msg}"),
            other => panic!("{body:?}: {other:?}"),
        }
    }
    assert!(matches!(parse_csv("".as_bytes()), Err(Error::Data(_))));
    assert!(matches!(parse_csv("a,b\n".as_bytes()), Err(Error::Data(_))));
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(&SynthConfig {
        counts: vec![500, 400, 100],
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(data.train.len(), 800);
    let path = dir.path().join("rows.csv");
    write_csv(&path, data.schema.fields(), &data.train).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.samples, data.train);

    write_dir(dir.path().join("d"), &data).unwrap();
    let loaded = load_dir(dir.path().join("d")).unwrap();
    assert_eq!(loaded.train, data.train);
    assert_eq!(loaded.test, data.test);
    let again = dir.path().join("again.csv");
    write_csv(&again, back.schema.fields(), &back.samples).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

fn positive_rate(samples: &[Sample]) -> f64 {
    samples.iter().filter(|s| s.label == 1).count() as f64 / samples.len() as f64
}

#[test]
fn pure_noise_is_balanced_and_generation_is_deterministic() {
    let cfg = SynthConfig {
        a_shared: 0.0,
        a_spec: 0.0,
        counts: vec![10_000],
        seed: 9,
        ..SynthConfig::default()
    };
    let d = synth_generate(&cfg).unwrap();
    let all: Vec<Sample> = d.train.iter().chain(&d.test).cloned().collect();
    assert!((positive_rate(&all) - 0.5).abs() < 0.02);
    let e = synth_generate(&cfg).unwrap();
    assert_eq!(d.train, e.train);
    assert_eq!(d.test, e.test);
}

#[test]
fn class_balance_matches_expectation() {
    for (seed, noise) in [(1, 0.0), (2, 0.2)] {
        let cfg = SynthConfig {
            counts: vec![10_000, 10_000],
            noise,
            seed,
            ..SynthConfig::default()
        };
        let w = HiddenWeights::draw(&cfg);
        let d = synth_generate(&cfg).unwrap();
        let mut rng = RngStream::new(seed, "expectation");
        for k in 0..2 {
            let n = 100_000;
            let expected = (0..n)
                .map(|_| {
                    let x: Vec<u32> = cfg
                        .vocab_sizes
                        .iter()
                        .map(|&v| rng.below(v) as u32)
                        .collect();
                    w.click_probability(&cfg, k, &x)
                })
                .sum::<f64>()
                / n as f64;
            let got: Vec<Sample> = d
                .train
                .iter()
                .chain(&d.test)
                .filter(|s| s.scenario == k)
                .cloned()
                .collect();
            assert!(
                (positive_rate(&got) - expected).abs() < 0.03,
                "scenario {k}: {} vs {expected}",
                positive_rate(&got)
            );
        }
    }
}

#[test]
fn labels_depend_only_on_own_scenario_weights() {
    let cfg = SynthConfig {
        counts: vec![300, 300, 300],
        seed: 4,
        ..SynthConfig::default()
    };
    let w = HiddenWeights::draw(&cfg);
    let base = generate_with(&cfg, &w).unwrap();
    let mut moved = w.clone();
    for table in &mut moved.specific[2] {
        table.iter_mut().for_each(|v| *v = -*v + 1.0);
    }
    let other = generate_with(&cfg, &moved).unwrap();
    let of = |d: &hc2_core::data::Dataset, k: usize| -> Vec<Sample> {
        d.train
            .iter()
            .filter(|s| s.scenario == k)
            .cloned()
            .collect()
    };
    assert_eq!(of(&base, 0), of(&other, 0));
    assert_eq!(of(&base, 1), of(&other, 1));
    assert_ne!(of(&base, 2), of(&other, 2));
}

/// One-hot logistic regression fitted by full-batch gradient descent.
fn fit_logistic(samples: &[&Sample], vocab: &[usize]) -> Vec<Vec<f64>> {
    let mut w: Vec<Vec<f64>> = vocab.iter().map(|&v| vec![0.0; v]).collect();
    let mut bias = 0.0;
    for _ in 0..300 {
        let mut grad: Vec<Vec<f64>> = vocab.iter().map(|&v| vec![0.0; v]).collect();
        let mut gb = 0.0;
        for s in samples {
            let logit: f64 = bias
                + s.features
                    .iter()
                    .enumerate()
                    .map(|(f, &x)| w[f][x as usize])
                    .sum::<f64>();
            let err = 1.0 / (1.0 + (-logit).exp()) - f64::from(s.label);
            gb += err;
            for (f, &x) in s.features.iter().enumerate() {
                grad[f][x as usize] += err;
            }
        }
        let n = samples.len() as f64;
        bias -= 2.0 * gb / n;
        for (wf, gf) in w.iter_mut().zip(&grad) {
            for (a, g) in wf.iter_mut().zip(gf) {
                *a -= 2.0 * g / n;
            }
        }
    }
    w
}

#[test]
fn shared_signal_transfers_between_scenarios() {
    let cfg = SynthConfig {
        a_shared: 4.0,
        a_spec: 0.0,
        counts: vec![4000, 2000],
        seed: 5,
        ..SynthConfig::default()
    };
    let d = synth_generate(&cfg).unwrap();
    let w = fit_logistic(&d.train_of(0), &cfg.vocab_sizes);
    let target = d.test_of(1);
    let scores: Vec<f64> = target
        .iter()
        .map(|s| {
            s.features
                .iter()
                .enumerate()
                .map(|(f, &x)| w[f][x as usize])
                .sum()
        })
        .collect();
    let labels: Vec<u8> = target.iter().map(|s| s.label).collect();
    let a = auc(&scores, &labels).unwrap();
    assert!(a > 0.75, "{a}");
}

#[test]
fn batches_cover_each_sample_once() {
    let mut rng = RngStream::new(6, "batch");
    let sizes: Vec<usize> = batch_iter(10, 4, &mut rng)
        .unwrap()
        .iter()
        .map(Vec::len)
        .collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    let a = batch_iter(1001, 64, &mut RngStream::new(7, "batch")).unwrap();
    let b = batch_iter(1001, 64, &mut RngStream::new(7, "batch")).unwrap();
    assert_eq!(a, b);
    let mut seen: Vec<usize> = a.concat();
    seen.sort_unstable();
    assert_eq!(seen, (0..1001).collect::<Vec<_>>());
    assert!(batch_iter(10, 1, &mut rng).is_err());
}

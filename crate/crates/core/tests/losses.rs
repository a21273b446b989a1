use hc2_core::backbone::{ModelParams, ModelShape};
use hc2_core::loss::{
    augment_positive, cross_scenario_negative, generalized_loss, generalized_loss_batch,
    individual_loss, individual_loss_batch, reciprocal_weight, AnchorSet, IndividualTriple, Repr,
    WeightedPair,
};
use hc2_core::math::finite_difference_check;
use hc2_core::{Graph, Matrix, RngStream};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// Naive InfoNCE: positive first, no max shift.
fn naive(anchor: &[f64], cands: &[(Vec<f64>, f64)], tau: f64, log_form: bool) -> f64 {
    let terms: Vec<f64> = cands
        .iter()
        .map(|(v, w)| w * (dot(anchor, v) / tau).exp())
        .collect();
    let ratio = terms[0] / terms.iter().sum::<f64>();
    if log_form {
        -ratio.ln()
    } else {
        -ratio
    }
}

fn general(
    anchor: &[f64],
    pos: (&[f64], f64),
    negs: &[(Vec<f64>, f64)],
    tau: f64,
    log: bool,
) -> f64 {
    let mut g = Graph::new();
    let z = g.param(Matrix::row_vector(anchor.to_vec()));
    let p = WeightedPair::positive(pos.1, Repr::Detached(pos.0.to_vec()));
    let n: Vec<WeightedPair> = negs
        .iter()
        .map(|(v, w)| WeightedPair::negative(*w, Repr::Detached(v.clone())))
        .collect();
    let l = generalized_loss(&mut g, z, &p, &n, tau, log).unwrap();
    g.value(l).item()
}

#[test]
fn reciprocal_weights() {
    assert_eq!(reciprocal_weight(&[1.0, 1.0], &[1.0, 1.0], 1e-2), 0.5);
    assert_eq!(reciprocal_weight(&[3.0], &[-1.0], 1e-2), 100.0);
    let mut rng = RngStream::new(1, "w");
    for _ in 0..1000 {
        let mut a = random_vec(&mut rng, 5);
        let mut b = random_vec(&mut rng, 5);
        for v in [&mut a, &mut b] {
            let n = dot(v, v).sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        }
        let d = dot(&a, &b);
        let w = reciprocal_weight(&a, &b, 1e-2);
        if d > 1e-2 {
            assert!((w * d - 1.0).abs() < 1e-12);
        } else {
            assert_eq!(w, 100.0);
        }
    }
}

#[test]
fn generalized_closed_forms() {
    let zero = vec![0.0, 0.0];
    let neg = vec![(zero.clone(), 1.0)];
    assert!((general(&zero, (&zero, 1.0), &neg, 1.0, true) - std::f64::consts::LN_2).abs() < 1e-6);
    assert!((general(&zero, (&zero, 2.0), &neg, 1.0, true) - 0.405465).abs() < 1e-6);
    assert!((general(&zero, (&zero, 1.0), &neg, 1.0, false) + 0.5).abs() < 1e-12);
}

#[test]
fn generalized_matches_naive_arithmetic() {
    let mut rng = RngStream::new(2, "naive");
    for trial in 0..200 {
        let anchor = random_vec(&mut rng, 6);
        let mut cands: Vec<(Vec<f64>, f64)> = (0..6)
            .map(|_| (random_vec(&mut rng, 6), rng.uniform_range(0.01, 5.0)))
            .collect();
        let log = trial % 2 == 0;
        let tau = rng.uniform_range(0.2, 2.0);
        let want = naive(&anchor, &cands, tau, log);
        let pos = cands.remove(0);
        let got = general(&anchor, (&pos.0, pos.1), &cands, tau, log);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn batch_value_is_the_anchor_mean() {
    let mut rng = RngStream::new(3, "batch");
    let mut g = Graph::new();
    let anchors = g.param(Matrix::from_rows(&[
        random_vec(&mut rng, 4),
        random_vec(&mut rng, 4),
    ]));
    let sets: Vec<AnchorSet> = (0..2)
        .map(|row| AnchorSet {
            anchor: Repr::Row(anchors, row),
            positive: WeightedPair::positive(1.5, Repr::Detached(random_vec(&mut rng, 4))),
            negatives: (0..3)
                .map(|_| WeightedPair::negative(0.7, Repr::Detached(random_vec(&mut rng, 4))))
                .collect(),
        })
        .collect();
    let batch = generalized_loss_batch(&mut g, &sets, 0.5, true).unwrap();
    let value = g.value(batch.loss).item();
    assert_eq!(batch.per_anchor.len(), 2);
    assert!((value - (batch.per_anchor[0] + batch.per_anchor[1]) / 2.0).abs() < 1e-15);
    for (row, set) in sets.iter().enumerate() {
        let mut h = Graph::new();
        let z = h.param(Matrix::row_vector(g.value(anchors).row(row).to_vec()));
        let l = generalized_loss(&mut h, z, &set.positive, &set.negatives, 0.5, true).unwrap();
        assert!((h.value(l).item() - batch.per_anchor[row]).abs() < 1e-12);
    }
}

#[test]
fn generalized_monotonicity_and_weight_suppression() {
    let z = vec![1.0, 0.0];
    let at = |x: f64| vec![x, 0.5];
    let negs = |x: f64, w: f64| vec![(at(x), w), (at(-0.3), 1.0)];
    let base = general(&z, (&at(0.2), 1.0), &negs(0.1, 1.0), 1.0, true);
    assert!(general(&z, (&at(0.2), 1.0), &negs(0.4, 1.0), 1.0, true) > base);
    assert!(general(&z, (&at(0.6), 1.0), &negs(0.1, 1.0), 1.0, true) < base);
    assert!(general(&z, (&at(0.2), 1.0), &negs(0.1, 0.5), 1.0, true) < base);
    let mut last = base;
    for w in [0.5, 0.1, 1e-3, 1e-6] {
        let l = general(&z, (&at(0.2), w), &negs(0.1, 1.0), 1.0, true);
        assert!(l > last);
        last = l;
    }
    for form in [true, false] {
        let far = general(&[100.0], (&[100.0], 1.0), &[(vec![-100.0], 1.0)], 0.1, form);
        let near = general(&[100.0], (&[-100.0], 1.0), &[(vec![100.0], 1.0)], 0.1, form);
        assert!(far.is_finite() && near.is_finite());
    }
}

#[test]
fn generalized_anchor_gradient() {
    let mut rng = RngStream::new(4, "grad");
    for trial in 0..50 {
        let pos = random_vec(&mut rng, 5);
        let negs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 5)).collect();
        let weights: Vec<f64> = (0..5).map(|_| rng.uniform_range(0.1, 3.0)).collect();
        let err = finite_difference_check(
            |g, v| {
                let p = WeightedPair::positive(weights[0], Repr::Detached(pos.clone()));
                let n: Vec<WeightedPair> = negs
                    .iter()
                    .zip(&weights[1..])
                    .map(|(x, &w)| WeightedPair::negative(w, Repr::Detached(x.clone())))
                    .collect();
                generalized_loss(g, v[0], &p, &n, 0.3, trial % 2 == 0)
            },
            &[Matrix::row_vector(random_vec(&mut rng, 5))],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

fn triple_loss(h: &[f64], aug: &[f64], other: &[Vec<f64>], cross: &[Vec<f64>], tau: f64) -> f64 {
    let mut g = Graph::new();
    let hv = g.param(Matrix::row_vector(h.to_vec()));
    let t = IndividualTriple {
        h: Repr::node(hv),
        h_aug: Repr::Detached(aug.to_vec()),
        neg_other: other.iter().cloned().map(Repr::Detached).collect(),
        neg_cross: cross.iter().cloned().map(Repr::Detached).collect(),
    };
    let l = individual_loss(&mut g, &t, tau, true).unwrap();
    g.value(l).item()
}

#[test]
fn individual_closed_forms_and_naive_oracle() {
    let zero = vec![0.0, 0.0];
    let l = triple_loss(
        &zero,
        &zero,
        std::slice::from_ref(&zero),
        std::slice::from_ref(&zero),
        1.0,
    );
    assert!((l - 1.098612).abs() < 1e-6);
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let l = triple_loss(
        &e1,
        &e1,
        std::slice::from_ref(&e2),
        std::slice::from_ref(&e2),
        1.0,
    );
    let e = std::f64::consts::E;
    assert!((l + (e / (e + 2.0)).ln()).abs() < 1e-12);
    assert!((l - 0.551445).abs() < 1e-6);

    let mut rng = RngStream::new(5, "ind");
    for _ in 0..200 {
        let h = random_vec(&mut rng, 4);
        let aug = random_vec(&mut rng, 4);
        let other: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
        let cross: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
        let cands: Vec<(Vec<f64>, f64)> = std::iter::once(&aug)
            .chain(&other)
            .chain(&cross)
            .map(|v| (v.clone(), 1.0))
            .collect();
        let want = naive(&h, &cands, 0.7, true);
        assert!((triple_loss(&h, &aug, &other, &cross, 0.7) - want).abs() < 1e-9);
    }
}

#[test]
fn individual_monotonicity_and_empty_negatives() {
    let h = vec![1.0, 0.0];
    let v = |x: f64| vec![x, 1.0];
    let base = triple_loss(&h, &v(0.5), &[v(0.1)], &[v(0.2)], 1.0);
    assert!(triple_loss(&h, &v(0.9), &[v(0.1)], &[v(0.2)], 1.0) < base);
    assert!(triple_loss(&h, &v(0.5), &[v(0.3)], &[v(0.2)], 1.0) > base);
    assert!(triple_loss(&h, &v(0.5), &[v(0.1)], &[v(0.6)], 1.0) > base);

    let mut g = Graph::new();
    let hv = g.param(Matrix::row_vector(h.clone()));
    let t = IndividualTriple {
        h: Repr::node(hv),
        h_aug: Repr::Detached(h.clone()),
        neg_other: vec![],
        neg_cross: vec![],
    };
    assert!(individual_loss(&mut g, &t, 1.0, true).is_err());
}

#[test]
fn individual_gradients_reach_every_node() {
    let mut rng = RngStream::new(6, "igrad");
    for trial in 0..50 {
        let inputs: Vec<Matrix> = (0..5)
            .map(|_| Matrix::row_vector(random_vec(&mut rng, 4)))
            .collect();
        let err = finite_difference_check(
            |g, v| {
                let t = IndividualTriple {
                    h: Repr::node(v[0]),
                    h_aug: Repr::node(v[1]),
                    neg_other: vec![Repr::node(v[2]), Repr::node(v[3])],
                    neg_cross: vec![Repr::node(v[4])],
                };
                individual_loss(g, &t, 0.5, trial % 2 == 1)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn descent_separates_scenarios() {
    let mut rng = RngStream::new(7, "descent");
    let mut vals: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 4)).collect();
    let measure = |v: &[Vec<f64>]| {
        let pos = dot(&v[0], &v[1]);
        let neg = v[2..]
            .iter()
            .map(|n| dot(&v[0], n))
            .fold(f64::MIN, f64::max);
        (pos, neg)
    };
    let (pos0, neg0) = measure(&vals);
    for _ in 0..100 {
        let mut g = Graph::new();
        let vars: Vec<_> = vals
            .iter()
            .map(|v| g.param(Matrix::row_vector(v.clone())))
            .collect();
        let t = IndividualTriple {
            h: Repr::node(vars[0]),
            h_aug: Repr::node(vars[1]),
            neg_other: vec![Repr::node(vars[2]), Repr::node(vars[3])],
            neg_cross: vec![Repr::node(vars[4])],
        };
        let l = individual_loss(&mut g, &t, 1.0, true).unwrap();
        g.backward(l).unwrap();
        for (v, var) in vals.iter_mut().zip(&vars) {
            let grad = g.grad(*var).unwrap().data().to_vec();
            for (x, d) in v.iter_mut().zip(grad) {
                *x -= 0.1 * d;
            }
        }
    }
    let (pos1, neg1) = measure(&vals);
    assert!(pos1 > pos0, "{pos1} vs {pos0}");
    assert!(neg1 < neg0, "{neg1} vs {neg0}");
}

fn tower_params(seed: u64) -> ModelParams {
    let shape = ModelShape {
        scenarios: 3,
        vocab_sizes: vec![4],
        embed_dim: 4,
        shared_widths: vec![4],
        tower_widths: vec![4],
    };
    let mut rng = RngStream::new(seed, "towers");
    let mut p = ModelParams::init(shape, &mut rng).unwrap();
    for t in &mut p.towers {
        for b in t.layers[0].bias.data_mut() {
            *b = rng.uniform_range(0.0, 0.2);
        }
    }
    p
}

#[test]
fn augmentation_views() {
    let p = tower_params(8);
    let z = Matrix::row_vector(vec![0.4, 0.9, 0.3, 0.7]);
    let run = |rate: f64, rng: &mut RngStream| {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let zv = g.constant(z.clone());
        let h = augment_positive(&mut g, 1, zv, &vars, rate, rng).unwrap();
        g.value(h).clone()
    };
    let mut rng = RngStream::new(9, "aug");
    let h = run(0.0, &mut rng);
    assert_eq!(run(0.0, &mut rng), h);
    assert!(h.data().iter().any(|&v| v > 0.0));
    for _ in 0..100 {
        assert_ne!(run(0.5, &mut rng), h);
    }
}

#[test]
fn cross_encoding() {
    let mut p = tower_params(10);
    let z = vec![0.2, 0.0, 1.1, 0.5];
    let encode = |p: &ModelParams, k: usize, kp: usize| {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let zv = g.constant(Matrix::row_vector(z.clone()));
        cross_scenario_negative(&mut g, k, kp, zv, &vars).map(|h| g.value(h).clone())
    };
    assert!(encode(&p, 1, 1).is_err());

    let l = &p.towers[2].layers[0];
    let want: Vec<f64> = (0..4)
        .map(|j| {
            let s: f64 = (0..4).map(|i| z[i] * l.weight.get(i, j)).sum();
            (s + l.bias.get(0, j)).max(0.0)
        })
        .collect();
    let got = encode(&p, 0, 2).unwrap();
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }

    p.towers[2].layers[0].weight = Matrix::zeros(4, 4);
    let got = encode(&p, 0, 2).unwrap();
    assert_eq!(got, p.towers[2].layers[0].bias.map(|b| b.max(0.0)));

    p.towers[2].layers[0].weight = Matrix::identity(4);
    p.towers[2].layers[0].bias = Matrix::zeros(1, 4);
    assert_eq!(encode(&p, 0, 2).unwrap().data(), &z[..]);
}

#[test]
fn foreign_tower_reaches_the_loss_only_through_negatives() {
    let p = tower_params(11);
    let loss_with = |p: &ModelParams, cross: bool| {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let z = g.constant(Matrix::row_vector(vec![0.3, 0.6, 0.1, 0.8]));
        let zn = g.constant(Matrix::row_vector(vec![0.9, 0.2, 0.4, 0.1]));
        let mut unused = RngStream::new(0, "unused");
        let h = augment_positive(&mut g, 0, z, &vars, 0.0, &mut unused).unwrap();
        let mut rng = RngStream::new(1, "aug");
        let aug = augment_positive(&mut g, 0, z, &vars, 0.2, &mut rng).unwrap();
        let neg = if cross {
            cross_scenario_negative(&mut g, 0, 2, zn, &vars).unwrap()
        } else {
            augment_positive(&mut g, 0, zn, &vars, 0.0, &mut unused).unwrap()
        };
        let t = IndividualTriple {
            h: Repr::node(h),
            h_aug: Repr::node(aug),
            neg_other: vec![],
            neg_cross: vec![Repr::node(neg)],
        };
        let l = individual_loss_batch(&mut g, &[t], 1.0, true).unwrap();
        g.value(l.loss).item()
    };
    let mut q = p.clone();
    q.towers[2].layers[0].bias = q.towers[2].layers[0].bias.map(|b| b + 0.5);
    assert_eq!(loss_with(&p, false), loss_with(&q, false));
    assert_ne!(loss_with(&p, true), loss_with(&q, true));
}

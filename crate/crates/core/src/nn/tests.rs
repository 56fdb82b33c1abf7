use super::*;
use crate::corpus::FeatureSetKind;
use proptest::prelude::*;
use rand::Rng as _;

fn schema() -> FeatureSchema {
    FeatureSchema::new([("title", FeatureSetKind::Sequential), ("aspects", FeatureSetKind::Bag)])
}

fn tiny(encoder: Encoder, tied: bool) -> DcfConfig {
    DcfConfig {
        encoder,
        d_emb: 3,
        d_item: 4,
        d_head: 5,
        d_rnn: 3,
        tied,
        activation: Activation::Tanh,
    }
}

fn item(title: &[u32], aspects: &[u32]) -> ItemFeatures {
    ItemFeatures::new(vec![title.to_vec(), aspects.to_vec()])
}

fn zero_all(m: &mut DcfModel) {
    for t in m.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_parameters_score_zero() {
    for enc in [Encoder::Mean, Encoder::Rnn] {
        let mut m = DcfModel::init(tiny(enc, false), schema(), &[6, 4], 1).unwrap();
        zero_all(&mut m);
        let s = item(&[1, 2], &[3]);
        let r = item(&[4], &[]);
        assert_eq!(m.predict_pair(&s, &r).unwrap(), 0.0);
        assert!(m.seed_embedder.embed(&s).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_token_pools_to_its_row() {
    let m = DcfModel::init(tiny(Encoder::Mean, false), schema(), &[6, 4], 2).unwrap();
    let t = &m.seed_embedder.tables[1];
    assert_eq!(t.mean(&[2]), t.row(2).to_owned());
}

#[test]
fn bag_order_and_duplication_do_not_matter() {
    let m = DcfModel::init(tiny(Encoder::Rnn, false), schema(), &[6, 5], 3).unwrap();
    let e = &m.seed_embedder;
    let a = e.embed(&item(&[1, 2], &[1, 3, 4])).unwrap();
    let b = e.embed(&item(&[1, 2], &[4, 1, 3])).unwrap();
    let c = e.embed(&item(&[1, 2], &[4, 4, 1, 1, 3, 3])).unwrap();
    assert!((&a - &b).iter().all(|v| v.abs() < 1e-15));
    assert!((&a - &c).iter().all(|v| v.abs() < 1e-15));
    let d = e.embed(&item(&[2, 1], &[1, 3, 4])).unwrap();
    assert!((&a - &d).iter().any(|v| v.abs() > 1e-9));
}

#[test]
fn asymmetric_by_default() {
    let m = DcfModel::init(tiny(Encoder::Mean, false), schema(), &[6, 4], 4).unwrap();
    let s = item(&[1, 2], &[3]);
    let r = item(&[5], &[1]);
    let a = m.predict_pair(&s, &r).unwrap();
    let b = m.predict_pair(&r, &s).unwrap();
    assert!((a - b).abs() > 1e-9);
}

#[test]
fn tied_model_is_swap_invariant() {
    let m = DcfModel::init(tiny(Encoder::Rnn, true), schema(), &[6, 4], 5).unwrap();
    assert!(m.candidate_embedder.is_none());
    let s = item(&[1, 2], &[3]);
    let r = item(&[5], &[1]);
    let a = m.predict_pair(&s, &r).unwrap();
    let b = m.predict_pair(&r, &s).unwrap();
    assert!((a - b).abs() < 1e-14);
}

#[test]
fn out_of_range_token_rejected() {
    let m = DcfModel::init(tiny(Encoder::Mean, false), schema(), &[6, 4], 6).unwrap();
    let err = m.predict_pair(&item(&[6], &[]), &item(&[1], &[])).unwrap_err();
    assert!(matches!(err, NnError::TokenOutOfRange { set: 0, token: 6, .. }));
}

#[test]
fn zero_dimension_rejected() {
    let mut c = tiny(Encoder::Mean, false);
    c.d_item = 0;
    assert!(DcfModel::init(c, schema(), &[6, 4], 0).is_err());
}

#[test]
fn same_seed_same_parameters() {
    let a = DcfModel::init(DcfConfig::small(Encoder::Rnn), schema(), &[20, 7], 9).unwrap();
    let b = DcfModel::init(DcfConfig::small(Encoder::Rnn), schema(), &[20, 7], 9).unwrap();
    assert_eq!(a, b);
    let c = DcfModel::init(DcfConfig::small(Encoder::Rnn), schema(), &[20, 7], 10).unwrap();
    assert_ne!(a, c);
}

#[test]
fn full_size_dimensions() {
    let c = DcfConfig::full_size(Encoder::Rnn);
    assert_eq!((c.d_emb, c.d_item, c.d_head, c.d_rnn), (200, 400, 1200, 200));
}

#[test]
fn initial_ranges() {
    let m = DcfModel::init(tiny(Encoder::Rnn, false), schema(), &[6, 4], 7).unwrap();
    let lim = 0.5 / 3.0;
    assert!(m.seed_embedder.tables[0].vectors.iter().all(|v| v.abs() <= lim));
    let w = &m.head_hidden.weights;
    let a = (6.0f64 / 13.0).sqrt();
    assert!(w.iter().all(|v| v.abs() <= a));
    assert!(m.head_hidden.bias.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_upstream_zero_gradient() {
    let m = DcfModel::init(tiny(Encoder::Rnn, false), schema(), &[6, 4], 8).unwrap();
    let s = item(&[1, 2], &[3]);
    let r = item(&[5], &[1]);
    let cache = m.forward_pair(&s, &r).unwrap();
    let g = m.backward_pair(&s, &r, &cache, 0.0).flatten(&m);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn untouched_rows_get_no_gradient() {
    let m = DcfModel::init(tiny(Encoder::Mean, false), schema(), &[6, 4], 8).unwrap();
    let s = item(&[1, 2], &[3]);
    let r = item(&[5], &[1]);
    let cache = m.forward_pair(&s, &r).unwrap();
    let g = m.backward_pair(&s, &r, &cache, 1.0);
    let dense = g.seed_embedder.tables[0].to_dense(6, 3);
    for row in [0, 3, 4, 5] {
        assert!(dense.row(row).iter().all(|&v| v == 0.0));
    }
    assert!(dense.row(1).iter().any(|&v| v != 0.0));
}

#[test]
fn gradient_check_fixed_models() {
    for enc in [Encoder::Mean, Encoder::Rnn] {
        for tied in [false, true] {
            let m = DcfModel::init(tiny(enc, tied), schema(), &[6, 4], 11).unwrap();
            let check = dcf_gradient_check(&m, &item(&[1, 2, 1], &[3, 2]), &item(&[5], &[]), 1e-5).unwrap();
            assert!(check.max_relative_error < 1e-4, "{enc:?} tied={tied}: {check:?}");
        }
    }
}

#[test]
fn empty_title_with_rnn() {
    let m = DcfModel::init(tiny(Encoder::Rnn, false), schema(), &[6, 4], 12).unwrap();
    let check = dcf_gradient_check(&m, &item(&[], &[3]), &item(&[2, 4], &[]), 1e-5).unwrap();
    assert!(check.max_relative_error < 1e-4);
}

#[test]
fn step_moves_linear_theta() {
    let mut m = init_model(
        &ModelSpec {
            arch: Architecture::Linear,
            cross_buckets: 8,
            ..ModelSpec::default()
        },
        &schema(),
        &[6, 4],
        0,
    )
    .unwrap();
    let s = item(&[1], &[]);
    let r = item(&[2], &[]);
    assert_eq!(m.step(&s, &r, |_| 0.5).unwrap(), 0.0);
    let ContentModel::Linear { model, features } = &m else {
        unreachable!()
    };
    let active = features.active(&s, &r).unwrap();
    assert_eq!(model.score(&active), 0.5 * active.len() as f64);
}

fn round_trip(bundle: &ModelBundle) -> ModelBundle {
    let mut buf = Vec::new();
    write_model(&mut buf, bundle).unwrap();
    read_model(buf.as_slice()).unwrap()
}

fn bundle(arch: Architecture, tied: bool) -> ModelBundle {
    use crate::corpus::Vocabulary;
    let vocabularies = vec![
        Vocabulary::from_tokens(vec!["<unk>".into(), "red".into(), "shoe".into()]),
        Vocabulary::from_tokens(vec!["<unk>".into(), "cat".into()]),
    ];
    let spec = ModelSpec {
        arch,
        d_emb: 3,
        d_item: 4,
        d_head: 5,
        d_rnn: 2,
        tied,
        cross_buckets: 16,
        ..ModelSpec::default()
    };
    let model = init_model(&spec, &schema(), &[3, 2], 13).unwrap();
    ModelBundle {
        schema: schema(),
        vocabularies,
        model,
    }
}

#[test]
fn model_file_round_trip() {
    for (arch, tied) in [
        (Architecture::Linear, false),
        (Architecture::DcfMean, false),
        (Architecture::DcfMean, true),
        (Architecture::DcfRnn, false),
    ] {
        let mut b = bundle(arch, tied);
        if let ContentModel::Linear { model, .. } = &mut b.model {
            model.theta[3] = -1.25;
        }
        assert_eq!(round_trip(&b), b);
    }
}

#[test]
fn model_file_rejects_bad_version_and_shape() {
    let b = bundle(Architecture::DcfMean, false);
    let mut buf = Vec::new();
    write_model(&mut buf, &b).unwrap();

    let mut wrong_version = buf.clone();
    wrong_version[8] = 99;
    assert!(matches!(
        read_model(wrong_version.as_slice()),
        Err(NnError::Version { found: 99, .. })
    ));

    let text = String::from_utf8_lossy(&buf).into_owned();
    let needle = "\"shape\":[3,3]";
    assert!(text.contains(needle));
    let patched = buf.windows(needle.len()).position(|w| w == needle.as_bytes()).unwrap();
    let mut wrong_shape = buf.clone();
    wrong_shape[patched + 9] = b'4';
    assert!(matches!(read_model(wrong_shape.as_slice()), Err(NnError::Shape { .. })));

    assert!(read_model(&buf[..buf.len() - 3]).is_err());
}

fn random_case(seed: u64) -> (DcfModel, ItemFeatures, ItemFeatures) {
    let mut rng = crate::seed::rng_from(seed);
    let enc = if rng.random_bool(0.5) {
        Encoder::Rnn
    } else {
        Encoder::Mean
    };
    let config = DcfConfig {
        encoder: enc,
        d_emb: rng.random_range(1..=8),
        d_item: rng.random_range(1..=8),
        d_head: rng.random_range(1..=8),
        d_rnn: rng.random_range(1..=8),
        tied: rng.random_bool(0.3),
        activation: Activation::Tanh,
    };
    let vocab = [rng.random_range(2..=20), rng.random_range(2..=20)];
    let m = DcfModel::init(config, schema(), &vocab, seed).unwrap();
    let draw = |rng: &mut crate::seed::Rng| {
        let sets = vocab
            .iter()
            .map(|&v| {
                let n = rng.random_range(0..=5);
                (0..n).map(|_| rng.random_range(0..v as u32)).collect()
            })
            .collect();
        ItemFeatures::new(sets)
    };
    let s = draw(&mut rng);
    let r = draw(&mut rng);
    (m, s, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_check_random_models(seed in any::<u64>()) {
        let (m, s, r) = random_case(seed);
        let check = dcf_gradient_check(&m, &s, &r, 1e-5).unwrap();
        prop_assert!(check.max_relative_error < 1e-4, "{:?}", check);
    }

    #[test]
    fn tanh_activations_bounded(seed in any::<u64>()) {
        let (m, s, _) = random_case(seed);
        let e = m.seed_embedder.embed(&s).unwrap();
        prop_assert!(e.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn forward_backward_deterministic(seed in any::<u64>()) {
        let (m, s, r) = random_case(seed);
        let c1 = m.forward_pair(&s, &r).unwrap();
        let c2 = m.forward_pair(&s, &r).unwrap();
        prop_assert_eq!(c1.score.to_bits(), c2.score.to_bits());
        prop_assert_eq!(
            m.backward_pair(&s, &r, &c1, 1.0),
            m.backward_pair(&s, &r, &c2, 1.0)
        );
    }
}

use proptest::prelude::*;

use ids_core::eval::{confidence_interval, fold_partition};
use ids_core::featsel::{entropy_of_counts, information_gain};
use ids_core::protocol::{
    decode, encode, AlertBody, Body, FeatureReportBody, FrameDecoder, ProtocolError, ReportRecord, PROTOCOL_VERSION,
};
use ids_core::*;

fn one_feature(values: &[f64], labels: &[usize], k: usize) -> Dataset {
    let space = LabelSpace::new((0..k).map(|c| format!("c{c}")).collect(), 0).unwrap();
    Dataset::from_rows(values.iter().map(|&v| vec![v]).collect(), labels.to_vec(), vec!["f".into()], space).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        Just(0.0),
        Just(1e300),
        Just(-1e300),
        (-300i32..300).prop_map(|e| 1.5 * 10f64.powi(e)),
    ]
}

fn report_message() -> impl Strategy<Value = Message> {
    (
        "[a-z0-9-]{0,12}",
        any::<u64>(),
        prop::collection::vec((prop::collection::vec(finite(), 0..6), "[A-Za-z]{1,8}", finite(), any::<u64>()), 0..5),
    )
        .prop_map(|(id, seq, recs)| {
            let records = recs
                .into_iter()
                .map(|(features, predicted, score, timestamp)| ReportRecord {
                    features,
                    predicted,
                    score,
                    timestamp,
                })
                .collect();
            Message::new(
                id.clone(),
                seq,
                Body::FeatureReport(FeatureReportBody {
                    principle_id: id,
                    records,
                }),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_is_affine_equivariant(
        xs in prop::collection::vec(-10.0..10.0f64, 2..40),
        a in 0.1..10.0f64,
        b in -100.0..100.0f64,
    ) {
        let (lo, hi) = confidence_interval(&xs, 0.95).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let (lo2, hi2) = confidence_interval(&ys, 0.95).unwrap();
        let tol = 1e-9 * (1.0 + (a * lo + b).abs() + (a * hi + b).abs());
        prop_assert!((lo2 - (a * lo + b)).abs() < tol);
        prop_assert!((hi2 - (a * hi + b)).abs() < tol);
        prop_assert!(lo <= hi);
    }

    #[test]
    fn information_gain_is_bounded_and_rank_invariant(
        pairs in prop::collection::vec((0u8..6, 0usize..3), 3..80),
    ) {
        let values: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let mut labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        labels[0] = 0;
        let ds = one_feature(&values, &labels, 3);
        let ig = information_gain(&ds, 0, Binning::Values, LogBase::E).unwrap();
        let mut counts = [0usize; 3];
        for &l in &labels {
            counts[l] += 1;
        }
        let h = entropy_of_counts(&counts, LogBase::E);
        prop_assert!(ig >= -1e-12 && ig <= h + 1e-12);
        // A strictly increasing map leaves the value partition unchanged.
        let moved: Vec<f64> = values.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
        let ig2 = information_gain(&one_feature(&moved, &labels, 3), 0, Binning::Values, LogBase::E).unwrap();
        prop_assert!((ig - ig2).abs() < 1e-12);
    }

    #[test]
    fn entropy_ignores_count_order(mut counts in prop::collection::vec(0usize..500, 1..8)) {
        let h = entropy_of_counts(&counts, LogBase::Two);
        counts.reverse();
        prop_assert!((h - entropy_of_counts(&counts, LogBase::Two)).abs() < 1e-12);
        prop_assert!(h <= (counts.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn folds_partition_and_stratify(
        targets in prop::collection::vec(0usize..4, 10..300),
        folds in 2usize..11,
        seed in any::<u64>(),
    ) {
        let parts = fold_partition(&targets, 4, folds, seed).unwrap();
        let mut seen = vec![0u8; targets.len()];
        for p in &parts {
            for &i in p {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        for c in 0..4 {
            let per: Vec<usize> = parts.iter().map(|p| p.iter().filter(|&&i| targets[i] == c).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn reports_roundtrip_through_any_chunking(
        msgs in prop::collection::vec(report_message(), 1..8),
        cuts in prop::collection::vec(1usize..64, 1..200),
    ) {
        let mut stream = Vec::new();
        for m in &msgs {
            let f = encode(m).unwrap();
            prop_assert_eq!(&decode(&f).unwrap(), m);
            stream.extend(f);
        }
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        let mut pos = 0;
        for c in cuts.iter().cycle() {
            if pos >= stream.len() {
                break;
            }
            let end = (pos + c).min(stream.len());
            dec.push(&stream[pos..end]);
            pos = end;
            while let Some(m) = dec.next_message().unwrap() {
                got.push(m);
            }
        }
        prop_assert_eq!(got, msgs);
    }

    #[test]
    fn truncated_frames_are_incomplete(m in report_message(), cut in 0usize..1000) {
        let f = encode(&m).unwrap();
        let cut = cut % f.len();
        let incomplete = matches!(decode(&f[..cut]), Err(ProtocolError::Incomplete { .. }));
        prop_assert!(incomplete);
    }
}

#[test]
fn non_finite_and_subnormal_values_are_not_encoded() {
    for bad in [f64::NAN, f64::INFINITY, f64::MIN_POSITIVE / 4.0] {
        let m = Message::new(
            "c1",
            1,
            Body::Alert(AlertBody {
                timestamp: 1,
                principle_id: "p".into(),
                predicted: "x".into(),
                score: bad,
            }),
        );
        assert!(encode(&m).is_err(), "{bad} encoded");
    }
}

#[test]
fn heartbeat_frame_matches_layout() {
    let f = encode(&Message::new("c1", 1, Body::Heartbeat)).unwrap();
    let body = br#"{"version":1,"kind":"Heartbeat","client_id":"c1","sequence":1,"payload":{}}"#;
    assert_eq!(&f[..4], &(body.len() as u32).to_be_bytes());
    assert_eq!(&f[4..], body);
    assert_eq!(PROTOCOL_VERSION, 1);
}

#[test]
fn model_probabilities_are_distributions() {
    let mut runner = proptest::test_runner::TestRunner::default();
    let strat = (prop::collection::vec(-50.0..50.0f64, 3 * 3), prop::collection::vec(-5.0..5.0f64, 2));
    runner
        .run(&strat, |(w, x)| {
            let labels = LabelSpace::new(vec!["a".into(), "b".into(), "c".into(), "d".into()], 0).unwrap();
            let m = MultiModel::new(w, StandardizationRecipe::identity(2), labels).unwrap();
            let p = m.predict(&x).unwrap();
            let s: f64 = p.probabilities.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.probabilities.iter().all(|q| (0.0..=1.0).contains(q)));
            let best = p
                .probabilities
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            prop_assert_eq!(p.probabilities[p.class], p.probabilities[best]);
            Ok(())
        })
        .unwrap();
}

#[test]
fn documented_principle_push() {
    let labels = LabelSpace::new(vec!["Good".into(), "Attack".into()], 0).unwrap().with_positive(1).unwrap();
    let recipe = StandardizationRecipe {
        means: vec![10.0, 20.0],
        stddevs: vec![2.0, 5.0],
    };
    let model = BinaryModel::new(vec![-1.5, 0.25, 2.0], recipe, labels).unwrap();
    let detector = Detector::new(vec!["pid_gain".into(), "setpoint".into()], None, Model::Binary(model)).unwrap();
    let msg = Message::new(
        "server",
        1,
        Body::PrinciplePush(Box::new(PrinciplePacket {
            principle_id: "field-00001".into(),
            generated_at: 1_700_000_000_000,
            detector,
        })),
    );
    let frame = encode(&msg).unwrap();
    let body = r#"{"version":1,"kind":"PrinciplePush","client_id":"server","sequence":1,"payload":{"principle_id":"field-00001","generated_at":1700000000000,"detector":{"feature_list":["pid_gain","setpoint"],"model":{"type":"binary","weights":[-1.5000000000000000e0,2.5000000000000000e-1,2.0000000000000000e0],"recipe":{"means":[1.0000000000000000e1,2.0000000000000000e1],"stddevs":[2.0000000000000000e0,5.0000000000000000e0]},"labels":{"names":["Good","Attack"],"normal":0,"positive":1}}}}}"#;
    assert_eq!(&frame[..4], &[0x00, 0x00, 0x01, 0xd9]);
    assert_eq!(std::str::from_utf8(&frame[4..]).unwrap(), body);
    let Body::PrinciplePush(p) = decode(&frame).unwrap().body else { panic!("kind") };
    let pred = p.detector.predict(&[12.0, 25.0]).unwrap();
    assert_eq!(pred.class, 1);
    assert!((pred.score - 0.75).abs() < 1e-15);
}

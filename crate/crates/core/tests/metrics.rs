use proptest::prelude::*;

use molmeta::metrics::{
    export_embeddings, roc_auc, write_embeddings, EmbeddingRow, MetricsError, ScoredSet,
};

/// Quadratic pair count: correct pairs plus half the ties, over P·N.
fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    roc_auc(&ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()).unwrap()
}

/// Scores and labels with both classes; `levels` > 0 quantizes scores to force ties.
fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max, 0usize..6).prop_flat_map(|(n, levels)| {
        let score = if levels == 0 {
            (0.0..1.0f64).boxed()
        } else {
            (0..levels)
                .prop_map(move |k| k as f64 / levels as f64)
                .boxed()
        };
        (
            proptest::collection::vec(score, n),
            proptest::collection::vec(any::<bool>(), n - 2),
        )
            .prop_map(|(s, mut y)| {
                y.push(true);
                y.push(false);
                (s, y)
            })
    })
}

#[test]
fn examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), 1.0);
    assert_eq!(
        auc(&[0.5; 6], &[true, false, true, false, false, true]),
        0.5
    );
    assert_eq!(auc(&[0.1, 0.9], &[true, false]), 0.0);
    let one_class = ScoredSet::new(vec![0.1, 0.2], vec![true, true]).unwrap();
    assert!(matches!(
        roc_auc(&one_class),
        Err(MetricsError::DegenerateLabels)
    ));
    assert!(matches!(
        ScoredSet::new(vec![0.1], vec![true, false]),
        Err(MetricsError::LengthMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sort_based_auc_matches_pair_counting((s, y) in scored(200)) {
        prop_assert!((auc(&s, &y) - brute_force_auc(&s, &y)).abs() <= 1e-12);
    }

    #[test]
    fn flipping_labels_complements((s, y) in scored(200)) {
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        prop_assert!((auc(&s, &y) + auc(&s, &flipped) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn monotone_transforms_preserve_auc((s, y) in scored(100)) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(auc(&s, &y), auc(&t, &y));
    }
}

fn parse_embeddings(text: &str) -> Vec<EmbeddingRow> {
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            EmbeddingRow {
                id: f[0].to_string(),
                label: match f[1] {
                    "1" => Some(true),
                    "0" => Some(false),
                    _ => None,
                },
                embedding: f[2..].iter().map(|x| x.parse().unwrap()).collect(),
            }
        })
        .collect()
}

#[test]
fn export_layout_and_round_trip() {
    let rows: Vec<EmbeddingRow> = (0..3)
        .map(|i| EmbeddingRow {
            id: format!("m{i}"),
            label: [Some(true), Some(false), None][i],
            embedding: (0..32)
                .map(|k| ((i * 32 + k) as f64).sin() / 3.0 + 1e-300 * k as f64)
                .collect(),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    export_embeddings(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.split(',').count() == 34));
    assert_eq!(parse_embeddings(&text), rows);

    let mut again = Vec::new();
    write_embeddings(&mut again, &rows).unwrap();
    assert_eq!(again, text.as_bytes());
}

#[test]
fn export_errors_name_the_problem() {
    let rows = vec![
        EmbeddingRow {
            id: "a".into(),
            label: None,
            embedding: vec![0.0; 3],
        },
        EmbeddingRow {
            id: "b".into(),
            label: None,
            embedding: vec![0.0; 2],
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        export_embeddings(&rows, &dir.path().join("x.csv")),
        Err(MetricsError::RaggedEmbeddings {
            row: 1,
            got: 2,
            expected: 3
        })
    ));
    let missing = dir.path().join("no/such/dir.csv");
    let err = export_embeddings(&rows[..1], &missing).unwrap_err();
    assert!(err.to_string().contains("no/such/dir.csv"));
}

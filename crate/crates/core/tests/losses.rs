use proptest::prelude::*;

use molmeta::autodiff::{Tape, Tensor};
use molmeta::losses::{
    atom_loss, bond_loss, combine, joint_loss, property_loss, LossTerm, LossWeights,
};

fn ln_softmax(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row[k] - m - z.ln()
}

#[test]
fn weighted_identities() {
    assert_eq!(combine(1.0, 2.0, 3.0, &LossWeights::eq9()), 1.5);
    let only_label = LossWeights {
        w_label: 1.0,
        w_edge: 0.0,
        w_node: 0.0,
    };
    assert_eq!(combine(1.0, 2.0, 3.0, &only_label), 3.0);
    let d: f64 = combine(1.0, 2.0, 3.0, &LossWeights::default());
    assert!((d - 3.3).abs() < 1e-15);
}

#[test]
fn joint_loss_on_tape_matches_plain_arithmetic() {
    let tape = Tape::<f64>::new();
    let c = |x: f64| LossTerm {
        value: tape.constant(Tensor::scalar(x)),
        count: 1,
    };
    let (v, b) = joint_loss(
        Some(c(3.0)),
        Some(c(2.0)),
        Some(c(1.0)),
        &LossWeights::eq9(),
    )
    .unwrap();
    assert_eq!(v.item(), 1.5);
    assert_eq!(b.joint, 1.5);
    assert_eq!((b.l_label, b.l_edge, b.l_node), (3.0, 2.0, 1.0));
}

#[test]
fn uniform_predictions() {
    let tape = Tape::<f64>::new();
    let two = tape.constant(Tensor::zeros(7, 2));
    let v = property_loss(two, &[0, 1, 1, 0, 1, 0, 0]).unwrap().item();
    assert!((v - 2f64.ln()).abs() <= 1e-12);
    let many = tape.constant(Tensor::zeros(5, 118));
    let v = atom_loss(many, &[1, 6, 8, 79, 118]).unwrap().item();
    assert!((v - 118f64.ln()).abs() <= 1e-10);
}

#[test]
fn batch_losses_are_means_of_singletons() {
    let tape = Tape::<f64>::new();
    let rows = [[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]];
    let labels = [1usize, 0, 1];
    let batch = tape.constant(Tensor::new(3, 2, rows.concat()).unwrap());
    let got = property_loss(batch, &labels).unwrap().item();
    let oracle = rows
        .iter()
        .zip(labels)
        .map(|(r, y)| -ln_softmax(r, y))
        .sum::<f64>()
        / 3.0;
    assert!((got - oracle).abs() < 1e-14);

    let scores = [1.5, -0.2, 3.0, 0.0, -2.5, 0.7, 0.1, -1.0, 2.2, -0.4];
    let bonds = [
        true, true, true, true, true, false, false, false, false, false,
    ];
    let s = tape.constant(Tensor::column(scores.to_vec()));
    let got = bond_loss(s, &bonds).unwrap().item();
    let oracle = scores
        .iter()
        .zip(bonds)
        .map(|(&x, b)| {
            let p = 1.0 / (1.0 + (-x).exp());
            -(if b { p.ln() } else { (1.0 - p).ln() })
        })
        .sum::<f64>()
        / 10.0;
    assert!((got - oracle).abs() < 1e-14);

    let logits: Vec<f64> = (0..3 * 118)
        .map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0)
        .collect();
    let targets = [6u8, 7, 8];
    let l = tape.constant(Tensor::new(3, 118, logits.clone()).unwrap());
    let got = atom_loss(l, &targets).unwrap().item();
    let oracle = (0..3)
        .map(|r| -ln_softmax(&logits[r * 118..(r + 1) * 118], targets[r] as usize - 1))
        .sum::<f64>()
        / 3.0;
    assert!((got - oracle).abs() < 1e-13);
}

#[test]
fn saturated_predictions_vanish() {
    let tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::row(vec![30.0, -30.0]));
    assert!(property_loss(p, &[0]).unwrap().item() < 1e-12);
    let s = tape.constant(Tensor::column(vec![30.0]));
    assert!(bond_loss(s, &[true]).unwrap().item() < 1e-12);
    let mut hot = vec![-40.0; 118];
    hot[5] = 40.0;
    let a = tape.constant(Tensor::row(hot));
    assert!(atom_loss(a, &[6]).unwrap().item() < 1e-12);
}

proptest! {
    #[test]
    fn terms_are_finite_and_nonnegative(
        logits in proptest::collection::vec(-500.0..500.0f64, 2..40),
        bits in proptest::collection::vec(any::<bool>(), 20),
    ) {
        let tape = Tape::<f64>::new();
        let k = logits.len() / 2;
        let labels: Vec<usize> = bits.iter().take(k).map(|&b| b as usize).chain(std::iter::repeat(0)).take(k).collect();
        let v = property_loss(tape.constant(Tensor::new(k, 2, logits[..2 * k].to_vec()).unwrap()), &labels).unwrap().item();
        prop_assert!(v.is_finite() && v >= 0.0);
        let flags: Vec<bool> = bits.iter().cycle().take(logits.len()).cloned().collect();
        let b = bond_loss(tape.constant(Tensor::column(logits.clone())), &flags).unwrap().item();
        prop_assert!(b.is_finite() && b >= 0.0);
    }

    #[test]
    fn joint_is_linear_in_each_term(
        l in proptest::collection::vec(0.0..10.0f64, 3),
        dl in -5.0..5.0f64,
        which in 0usize..3,
    ) {
        let w = LossWeights { w_label: 0.7, w_edge: 0.2, w_node: 0.4 };
        let base = combine(l[0], l[1], l[2], &w);
        let mut m = l.clone();
        m[which] += dl;
        let moved = combine(m[0], m[1], m[2], &w);
        let weight = [w.w_node, w.w_edge, w.w_label][which];
        prop_assert!((moved - base - weight * dl).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_equals_removing_the_term(seed in proptest::collection::vec(-3.0..3.0f64, 6)) {
        let weights = LossWeights { w_label: 1.0, w_edge: 0.0, w_node: 0.3 };
        let grads = |with_edge: bool| {
            let tape = Tape::<f64>::new();
            let x = tape.param(Tensor::row(seed[..4].to_vec()));
            let e = tape.param(Tensor::column(seed[4..].to_vec()));
            let label = LossTerm { value: x.slice_cols(0, 2).unwrap().cross_entropy(&[1]).unwrap(), count: 1 };
            let edge = LossTerm { value: e.binary_cross_entropy(&[1.0, 0.0]).unwrap(), count: 2 };
            let node = LossTerm { value: x.slice_cols(2, 2).unwrap().cross_entropy(&[0]).unwrap(), count: 1 };
            let (v, _) = joint_loss(Some(label), with_edge.then_some(edge), Some(node), &weights).unwrap();
            let g = tape.backward(v).unwrap();
            (v.item(), g.wrt(x).data().to_vec())
        };
        let (a, ga) = grads(true);
        let (b, gb) = grads(false);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(ga.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), gb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

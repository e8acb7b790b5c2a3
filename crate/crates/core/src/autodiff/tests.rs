use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type F = f64;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn params(entries: Vec<(&str, Tensor<F>)>) -> ParameterSet<F> {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[test]
fn forward_examples() {
    let tape = Tape::<F>::new();
    let e = tape.constant(Tensor::row(vec![1.0, 0.0, 0.0]));
    assert_eq!(e.inner(e).unwrap().item(), 1.0);

    let v = tape.constant(Tensor::row(vec![3.0, 4.0]));
    let n = v.l2_normalize().unwrap().value();
    assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);

    let s = tape
        .constant(Tensor::row(vec![0.0, 3f64.ln()]))
        .softmax()
        .unwrap()
        .value();
    assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);

    let logits = tape.constant(Tensor::row(vec![0.7, 0.7]));
    for label in [0, 1] {
        let ce = logits.cross_entropy(&[label]).unwrap().item();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn forward_errors() {
    let tape = Tape::<F>::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(
        a.matmul(b),
        Err(AutodiffError::ShapeMismatch { .. })
    ));
    let empty = tape.constant(Tensor::zeros(1, 0));
    assert!(matches!(
        empty.cross_entropy(&[0]),
        Err(AutodiffError::DomainError(_))
    ));
    assert!(matches!(
        a.backward(),
        Err(AutodiffError::NonScalarRoot([2, 3]))
    ));
    assert!(matches!(a.mean(2), Err(AutodiffError::DomainError(_))));
}

#[test]
fn product_and_leaky_relu_gradients() {
    let tape = Tape::<F>::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = tape.param(Tensor::scalar(3.0));
    let f = x.mul(y).unwrap();
    let g = f.backward().unwrap();
    assert_eq!(g.wrt(x).item(), 3.0);
    assert_eq!(g.wrt(y).item(), 2.0);

    let x = tape.param(Tensor::scalar(-1.0));
    let f = x.leaky_relu(0.01).unwrap();
    assert_eq!(f.backward().unwrap().wrt(x).item(), 0.01);
}

#[test]
fn unreachable_parameters_get_zero_gradients() {
    let tape = Tape::<F>::new();
    let x = tape.param(Tensor::scalar(2.0));
    let unused = tape.param(Tensor::ones(2, 2));
    let f = x.scale(4.0).unwrap();
    let g = f.backward().unwrap();
    assert_eq!(g.wrt(unused), Tensor::zeros(2, 2));
    assert_eq!(g.wrt(x).item(), 4.0);
}

#[test]
fn constant_function_checks_to_zero() {
    let p = params(vec![("x", Tensor::row(vec![1.0, -2.0]))]);
    let r = grad_check(|t, _| Ok(t.scalar(5.0)), &p, 1e-5).unwrap();
    assert_eq!(r.max_rel_error, 0.0);
}

#[test]
fn quadratic_checks_tightly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = params(vec![("theta", rand_tensor(&mut rng, 3, 4))]);
    let r = grad_check(
        |_, b| {
            let x = b.get("theta")?;
            x.inner(x)
        },
        &p,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-9, "{r:?}");
}

#[test]
fn non_finite_function_is_reported() {
    let p = params(vec![("x", Tensor::scalar(1.0))]);
    let r = grad_check(|t, b| b.get("x")?.mul(t.scalar(f64::INFINITY)), &p, 1e-5);
    assert_eq!(r.unwrap_err(), AutodiffError::NonFiniteFunction);
}

type OpFn = for<'t> fn(&BoundParams<'t, F>) -> Result<Var<'t, F>, AutodiffError>;

/// Every primitive, each reduced to a scalar through a fixed random projection.
fn op_cases() -> Vec<(&'static str, OpFn, Vec<(&'static str, [usize; 2])>)> {
    fn proj<'t>(v: Var<'t, F>) -> Result<Var<'t, F>, AutodiffError> {
        let [r, c] = v.shape();
        let w = Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.55);
        v.mul(v.tape().constant(w))?.sum()
    }
    vec![
        (
            "matmul",
            |b| proj(b.get("a")?.matmul(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [3, 4])],
        ),
        (
            "matmul_nt",
            |b| proj(b.get("a")?.matmul_nt(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [4, 3])],
        ),
        (
            "matmul_tn",
            |b| proj(b.get("a")?.matmul_tn(b.get("b")?)?),
            vec![("a", [3, 2]), ("b", [3, 4])],
        ),
        (
            "add",
            |b| proj(b.get("a")?.add(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [2, 3])],
        ),
        (
            "sub",
            |b| proj(b.get("a")?.sub(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [2, 3])],
        ),
        (
            "mul",
            |b| proj(b.get("a")?.mul(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [2, 3])],
        ),
        (
            "scale",
            |b| proj(b.get("a")?.scale(-1.7)?),
            vec![("a", [2, 3])],
        ),
        (
            "concat",
            |b| proj(b.get("a")?.concat(b.get("b")?)?),
            vec![("a", [2, 3]), ("b", [2, 2])],
        ),
        (
            "slice",
            |b| proj(b.get("a")?.slice_cols(1, 2)?),
            vec![("a", [2, 4])],
        ),
        (
            "gather",
            |b| proj(b.get("a")?.gather_rows(Rc::new(vec![2, 0, 2, 1]))?),
            vec![("a", [3, 2])],
        ),
        (
            "scatter",
            |b| proj(b.get("a")?.scatter_add_rows(Rc::new(vec![1, 1, 0, 2]), 3)?),
            vec![("a", [4, 2])],
        ),
        ("mean0", |b| proj(b.get("a")?.mean(0)?), vec![("a", [3, 4])]),
        ("mean1", |b| proj(b.get("a")?.mean(1)?), vec![("a", [3, 4])]),
        (
            "leaky_relu",
            |b| proj(b.get("a")?.leaky_relu(0.01)?),
            vec![("a", [3, 4])],
        ),
        (
            "sigmoid",
            |b| proj(b.get("a")?.sigmoid()?),
            vec![("a", [2, 3])],
        ),
        (
            "softmax",
            |b| proj(b.get("a")?.softmax()?),
            vec![("a", [2, 5])],
        ),
        (
            "logsumexp",
            |b| proj(b.get("a")?.logsumexp()?),
            vec![("a", [2, 5])],
        ),
        (
            "inner",
            |b| b.get("a")?.inner(b.get("b")?),
            vec![("a", [1, 4]), ("b", [1, 4])],
        ),
        (
            "l2_normalize",
            |b| proj(b.get("a")?.l2_normalize()?),
            vec![("a", [3, 4])],
        ),
        (
            "cross_entropy",
            |b| b.get("a")?.cross_entropy(&[2, 0, 4]),
            vec![("a", [3, 5])],
        ),
        (
            "binary_cross_entropy",
            |b| b.get("a")?.binary_cross_entropy(&[1.0, 0.0, 1.0]),
            vec![("a", [3, 1])],
        ),
        (
            "linear",
            |b| proj(b.get("x")?.linear(b.get("w")?, Some(b.get("b")?))?),
            vec![("x", [3, 4]), ("w", [2, 4]), ("b", [1, 2])],
        ),
    ]
}

fn random_point(rng: &mut ChaCha8Rng, shapes: &[(&str, [usize; 2])]) -> ParameterSet<F> {
    shapes
        .iter()
        .map(|(n, [r, c])| (n.to_string(), rand_tensor(rng, *r, *c)))
        .collect()
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, f, shapes) in op_cases() {
        for _ in 0..3 {
            let p = random_point(&mut rng, &shapes);
            let r = grad_check(|_, b| f(b), &p, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-6, "{name}: {r:?}");
        }
    }
}

#[test]
fn recorded_and_eager_gradients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, f, shapes) in op_cases() {
        let p = random_point(&mut rng, &shapes);
        let tape = Tape::new();
        let b = p.bind(&tape);
        let out = f(&b).unwrap();
        let vars: Vec<_> = b.vars().collect();
        let recorded = tape.grad_graph(out, &vars).unwrap();
        let eager = tape.backward(out).unwrap();
        for (v, r) in vars.iter().zip(recorded) {
            let d = eager.wrt(*v).max_abs_diff(&r.value());
            assert!(d < 1e-13, "{name}: {d}");
        }
    }
}

/// Second derivatives of every op: the recorded reverse pass must itself
/// differentiate correctly. Checked by finite differences of
/// `θ ↦ Σ c ⊙ ∇f(θ)` where the inner gradient is computed eagerly.
#[test]
fn every_op_has_correct_second_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (name, f, shapes) in op_cases() {
        let p = random_point(&mut rng, &shapes);
        let dirs = random_point(&mut rng, &shapes);
        let dirs_for_tape = dirs.clone();
        // analytic: d/dθ Σ_k dir_k · ∇_k f(θ) through the recorded pass
        let tape = Tape::new();
        let b = p.bind(&tape);
        let out = f(&b).unwrap();
        let vars: Vec<_> = b.vars().collect();
        let grads = tape.grad_graph(out, &vars).unwrap();
        let mut total = tape.scalar(0.0);
        for (g, (_, d)) in grads.iter().zip(dirs_for_tape.iter()) {
            total = total
                .add(g.mul(tape.constant(d.clone())).unwrap().sum().unwrap())
                .unwrap();
        }
        let analytic = b.gradients(&tape.backward(total).unwrap());
        // numeric: central differences of the eager directional derivative
        let directional = |q: &ParameterSet<F>| -> F {
            let tape = Tape::new();
            let b = q.bind(&tape);
            let out = f(&b).unwrap();
            let g = b.gradients(&tape.backward(out).unwrap());
            g.iter()
                .zip(dirs.iter())
                .map(|((_, g), (_, d))| {
                    g.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<F>()
                })
                .sum()
        };
        let h = 1e-5;
        let mut work = p.clone();
        for (pname, t) in p.iter() {
            for i in 0..t.len() {
                let orig = t.data()[i];
                work.get_mut(pname).unwrap().data_mut()[i] = orig + h;
                let plus = directional(&work);
                work.get_mut(pname).unwrap().data_mut()[i] = orig - h;
                let minus = directional(&work);
                work.get_mut(pname).unwrap().data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.get(pname).unwrap().data()[i];
                assert!(
                    (a - numeric).abs() < 1e-6 * (1.0 + numeric.abs()),
                    "{name}/{pname}[{i}]: {a} vs {numeric}"
                );
            }
        }
    }
}

#[test]
fn softmax_and_normalization_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::<F>::new();
    for _ in 0..50 {
        let x = tape.constant(Tensor::from_fn(3, 7, |_, _| rng.gen_range(-30.0..30.0)));
        let s = x.softmax().unwrap().value();
        for r in 0..3 {
            let sum: F = s.row_slice(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row_slice(r).iter().all(|&p| p > 0.0));
        }
        let n = x.l2_normalize().unwrap().value();
        for r in 0..3 {
            let norm: F = n.row_slice(r).iter().map(|v| v * v).sum::<F>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_vector_normalizes_to_zero_with_zero_gradient() {
    let tape = Tape::<F>::new();
    let x = tape.param(Tensor::zeros(1, 3));
    let y = x.l2_normalize().unwrap();
    assert_eq!(*y.value(), Tensor::zeros(1, 3));
    let w = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
    let g = y.inner(w).unwrap().backward().unwrap();
    assert_eq!(g.wrt(x), Tensor::zeros(1, 3));
}

#[test]
fn cross_entropy_gradient_is_probabilities_minus_one_hot() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let tape = Tape::<F>::new();
        let logits = tape.param(rand_tensor(&mut rng, 1, 6).map(|v| v * 5.0));
        let label = rng.gen_range(0..6);
        let g = logits
            .cross_entropy(&[label])
            .unwrap()
            .backward()
            .unwrap()
            .wrt(logits);
        let p = logits.softmax().unwrap().value();
        for c in 0..6 {
            let expect = p.data()[c] - if c == label { 1.0 } else { 0.0 };
            assert!((g.data()[c] - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = params(vec![
        ("x", rand_tensor(&mut rng, 2, 3)),
        ("w", rand_tensor(&mut rng, 3, 3)),
    ]);
    let f = tape_fn(|_, b| b.get("x")?.matmul_nt(b.get("w")?)?.softmax()?.sum());
    let g = tape_fn(|_, b| b.get("x")?.l2_normalize()?.inner(b.get("x")?));
    let (a, c) = (0.3, -2.5);
    let combined = tape_fn(|t, b| f(t, b)?.scale(a)?.add(g(t, b)?.scale(c)?));
    let grad_of = |h: &dyn for<'t> Fn(
        &'t Tape<F>,
        &BoundParams<'t, F>,
    ) -> Result<Var<'t, F>, AutodiffError>| {
        let tape = Tape::new();
        let b = p.bind(&tape);
        let out = h(&tape, &b).unwrap();
        b.gradients(&tape.backward(out).unwrap())
    };
    let mut expect = p.zeros_like();
    expect.axpy(a, &grad_of(&f));
    expect.axpy(c, &grad_of(&g));
    assert!(grad_of(&combined).max_abs_diff(&expect) < 1e-12);
}

fn half_square<'t>(_: &'t Tape<F>, b: &BoundParams<'t, F>) -> Result<Var<'t, F>, AutodiffError> {
    let x = b.get("theta")?;
    x.mul(x)?.sum()?.scale(0.5)
}

#[test]
fn one_dimensional_meta_gradient() {
    let theta = params(vec![("theta", Tensor::scalar(1.0))]);
    let so = second_order_trace(
        half_square,
        half_square,
        &theta,
        0.1,
        MetaGradMode::SecondOrder,
    )
    .unwrap();
    let fo = second_order_trace(
        half_square,
        half_square,
        &theta,
        0.1,
        MetaGradMode::FirstOrder,
    )
    .unwrap();
    assert!((so.get("theta").unwrap().item() - 0.81).abs() < 1e-15);
    assert!((fo.get("theta").unwrap().item() - 0.9).abs() < 1e-15);
}

#[test]
fn zero_step_is_identity_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta = params(vec![("theta", rand_tensor(&mut rng, 1, 4))]);
    let outer = tape_fn(|_, b| {
        b.get("theta")?
            .softmax()?
            .pick_cols(Rc::new(vec![2]))?
            .sum()
    });
    let so =
        second_order_trace(half_square, outer, &theta, 0.0, MetaGradMode::SecondOrder).unwrap();
    let fo = second_order_trace(half_square, outer, &theta, 0.0, MetaGradMode::FirstOrder).unwrap();
    let tape = Tape::new();
    let b = theta.bind(&tape);
    let direct = b.gradients(&tape.backward(outer(&tape, &b).unwrap()).unwrap());
    assert!(so.bitwise_eq(&fo));
    assert!(so.bitwise_eq(&direct));
}

#[test]
fn random_quadratic_meta_gradient_matches_composed_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 4;
    for _ in 0..5 {
        let a = rand_tensor(&mut rng, n, n);
        let bm = rand_tensor(&mut rng, n, n);
        let b = rand_tensor(&mut rng, 1, n);
        let c = rand_tensor(&mut rng, 1, n);
        let alpha = 0.2;
        let theta0 = rand_tensor(&mut rng, 1, n);

        let (a2, b2, bm2, c2) = (a.clone(), b.clone(), bm.clone(), c.clone());
        let inner = tape_fn(move |t, p| {
            let x = p.get("theta")?;
            x.matmul(t.constant(a2.clone()))?
                .inner(x)?
                .scale(0.5)?
                .add(x.inner(t.constant(b2.clone()))?)
        });
        let outer = tape_fn(move |t, p| {
            let x = p.get("theta")?;
            x.matmul(t.constant(bm2.clone()))?
                .inner(x)?
                .scale(0.5)?
                .add(x.inner(t.constant(c2.clone()))?)
        });
        let theta = params(vec![("theta", theta0.clone())]);
        let so =
            second_order_trace(inner, outer, &theta, alpha, MetaGradMode::SecondOrder).unwrap();

        // Oracle in plain arithmetic: J(θ) = ½θ'ᵀBθ' + cᵀθ', θ' = θ - α(½(A+Aᵀ)θ + b).
        let composed = |th: &[F]| -> F {
            let grad: Vec<F> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| 0.5 * (a.get(i, j) + a.get(j, i)) * th[j])
                        .sum::<F>()
                        + b.data()[i]
                })
                .collect();
            let tp: Vec<F> = (0..n).map(|i| th[i] - alpha * grad[i]).collect();
            let quad: F = (0..n)
                .map(|i| (0..n).map(|j| tp[i] * bm.get(i, j) * tp[j]).sum::<F>())
                .sum();
            0.5 * quad + (0..n).map(|i| c.data()[i] * tp[i]).sum::<F>()
        };
        let h = 1e-5;
        for i in 0..n {
            let mut p = theta0.data().to_vec();
            p[i] += h;
            let plus = composed(&p);
            p[i] -= 2.0 * h;
            let minus = composed(&p);
            let numeric = (plus - minus) / (2.0 * h);
            let got = so.get("theta").unwrap().data()[i];
            assert!(relative_error(got, numeric) < 1e-4, "{got} vs {numeric}");
        }
    }
}

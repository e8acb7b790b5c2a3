//! The gradient-check suite behind the `gradcheck` command: every primitive
//! op, the end-to-end joint loss on a small random molecule, and meta-gradients
//! of quadratic surrogates.

use std::fmt;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    grad_check, grad_check_at, relative_error, second_order_trace, tape_fn, AutodiffError,
    BoundParams, MetaGradMode, ParameterSet, Tape, Tensor, Var,
};
use crate::data::synthetic::random_molecule;
use crate::data::{Example, Molecule, MultiTaskDataset, SyntheticConfig};
use crate::encoder::{init_params, Aggregator, EncoderConfig};
use crate::losses::LossWeights;
use crate::meta::{set_forward, MetaError, Objective, PreparedSet, SelfSupervisedConfig};
use crate::smiles::write_smiles;

/// Relative-error bound of every check except the quadratic surrogates.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central differences are exact on quadratics, so only rounding remains.
pub const SURROGATE_TOLERANCE: f64 = 1e-9;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradcheckScale {
    /// Desk-scale encoder, every parameter component checked.
    #[default]
    Desk,
    /// 300-wide encoder, a random sample of components checked.
    Paper,
}

impl GradcheckScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(GradcheckScale::Desk),
            "paper" => Some(GradcheckScale::Paper),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub components: usize,
    /// Worst component and its analytic and numeric values, when known.
    pub worst: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<34} max_rel_error {:.3e} (tol {:.0e}, {} components)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.components
        )?;
        match &self.worst {
            Some(w) if !self.passed() => write!(f, " worst {w}"),
            _ => Ok(()),
        }
    }
}

/// Runs the whole suite; all randomness comes from `seed`.
pub fn run_gradcheck(scale: GradcheckScale, seed: u64) -> Result<Vec<CheckOutcome>, MetaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = op_checks(&mut rng)?;
    let encoder = match scale {
        GradcheckScale::Desk => EncoderConfig::default(),
        GradcheckScale::Paper => EncoderConfig::paper(),
    };
    let sample = match scale {
        GradcheckScale::Desk => None,
        GradcheckScale::Paper => Some(300),
    };
    for aggregator in [Aggregator::PaperConcat, Aggregator::GinSum] {
        let cfg = EncoderConfig {
            aggregator,
            ..encoder
        };
        out.push(joint_loss_check(&cfg, sample, &mut rng)?);
    }
    out.extend(surrogate_checks(&mut rng)?);
    Ok(out)
}

type OpFn = for<'t> fn(&BoundParams<'t, f64>) -> Result<Var<'t, f64>, AutodiffError>;

fn project(v: Var<'_, f64>) -> Result<Var<'_, f64>, AutodiffError> {
    let [r, c] = v.shape();
    let w = Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.55);
    v.mul(v.tape().constant(w))?.sum()
}

fn rc<T>(v: T) -> Rc<T> {
    Rc::new(v)
}

/// Each primitive reduced to a scalar through a fixed projection, with the
/// shapes of its inputs.
fn op_cases() -> Vec<(&'static str, OpFn, Vec<(&'static str, [usize; 2])>)> {
    let a = |r, c| vec![("a", [r, c])];
    let ab = |r1, c1, r2, c2| vec![("a", [r1, c1]), ("b", [r2, c2])];
    vec![
        (
            "matmul",
            |p| project(p.get("a")?.matmul(p.get("b")?)?),
            ab(2, 3, 3, 4),
        ),
        (
            "matmul_nt",
            |p| project(p.get("a")?.matmul_nt(p.get("b")?)?),
            ab(2, 3, 4, 3),
        ),
        (
            "matmul_tn",
            |p| project(p.get("a")?.matmul_tn(p.get("b")?)?),
            ab(3, 2, 3, 4),
        ),
        (
            "add",
            |p| project(p.get("a")?.add(p.get("b")?)?),
            ab(2, 3, 2, 3),
        ),
        (
            "sub",
            |p| project(p.get("a")?.sub(p.get("b")?)?),
            ab(2, 3, 2, 3),
        ),
        (
            "mul",
            |p| project(p.get("a")?.mul(p.get("b")?)?),
            ab(2, 3, 2, 3),
        ),
        ("scale", |p| project(p.get("a")?.scale(-1.7)?), a(2, 3)),
        (
            "add_scalar",
            |p| project(p.get("a")?.add_scalar(0.4)?),
            a(2, 3),
        ),
        (
            "mul_const",
            |p| {
                project(
                    p.get("a")?
                        .mul_const(rc(Tensor::from_fn(2, 3, |i, j| i as f64 - j as f64 * 0.5)))?,
                )
            },
            a(2, 3),
        ),
        (
            "scale_rows",
            |p| project(p.get("a")?.scale_rows(rc(vec![0.5, -2.0, 1.5]))?),
            a(3, 2),
        ),
        (
            "concat",
            |p| project(p.get("a")?.concat(p.get("b")?)?),
            ab(2, 3, 2, 2),
        ),
        (
            "slice_cols",
            |p| project(p.get("a")?.slice_cols(1, 2)?),
            a(2, 4),
        ),
        (
            "embed_cols",
            |p| project(p.get("a")?.embed_cols(1, 5)?),
            a(2, 3),
        ),
        (
            "gather_rows",
            |p| project(p.get("a")?.gather_rows(rc(vec![2, 0, 2, 1]))?),
            a(3, 2),
        ),
        (
            "scatter_add_rows",
            |p| project(p.get("a")?.scatter_add_rows(rc(vec![1, 1, 0, 2]), 3)?),
            a(4, 2),
        ),
        (
            "sum",
            |p| p.get("a")?.sum()?.mul(p.get("a")?.sum()?),
            a(2, 3),
        ),
        (
            "broadcast",
            |p| project(p.get("a")?.broadcast(2, 3)?),
            a(1, 1),
        ),
        ("row_sum", |p| project(p.get("a")?.row_sum()?), a(3, 4)),
        (
            "broadcast_cols",
            |p| project(p.get("a")?.broadcast_cols(3)?),
            a(2, 1),
        ),
        ("col_sum", |p| project(p.get("a")?.col_sum()?), a(3, 4)),
        (
            "broadcast_rows",
            |p| project(p.get("a")?.broadcast_rows(3)?),
            a(1, 4),
        ),
        (
            "leaky_relu",
            |p| project(p.get("a")?.leaky_relu(0.01)?),
            a(3, 4),
        ),
        ("sigmoid", |p| project(p.get("a")?.sigmoid()?), a(2, 3)),
        ("softmax", |p| project(p.get("a")?.softmax()?), a(2, 5)),
        ("logsumexp", |p| project(p.get("a")?.logsumexp()?), a(2, 5)),
        (
            "row_inv_norm",
            |p| project(p.get("a")?.row_inv_norm()?),
            a(3, 4),
        ),
        (
            "pick_cols",
            |p| project(p.get("a")?.pick_cols(rc(vec![2, 0, 1]))?),
            a(3, 4),
        ),
        (
            "place_cols",
            |p| project(p.get("a")?.place_cols(rc(vec![2, 0, 1]), 4)?),
            a(3, 1),
        ),
        (
            "binary_cross_entropy",
            |p| p.get("a")?.binary_cross_entropy(&[1.0, 0.0, 1.0]),
            a(3, 1),
        ),
        (
            "cross_entropy",
            |p| p.get("a")?.cross_entropy(&[2, 0, 4]),
            a(3, 5),
        ),
        (
            "l2_normalize",
            |p| project(p.get("a")?.l2_normalize()?),
            a(3, 4),
        ),
    ]
}

fn random_point(rng: &mut ChaCha8Rng, shapes: &[(&str, [usize; 2])]) -> ParameterSet<f64> {
    shapes
        .iter()
        .map(|&(n, [r, c])| {
            (
                n.to_string(),
                Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)),
            )
        })
        .collect()
}

/// Every primitive at three random points.
pub fn op_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>, AutodiffError> {
    op_cases()
        .into_iter()
        .map(|(name, f, shapes)| {
            let mut worst = 0.0f64;
            let mut components = 0;
            for _ in 0..3 {
                let p = random_point(rng, &shapes);
                let r = grad_check(|_, b| f(b), &p, FD_STEP)?;
                worst = worst.max(r.max_rel_error);
                components += r.components;
            }
            Ok(CheckOutcome {
                name: format!("op {name}"),
                max_rel_error: worst,
                tolerance: GRADCHECK_TOLERANCE,
                components,
                worst: None,
            })
        })
        .collect()
}

/// All three loss terms on one random molecule of at most 10 atoms. With
/// `sample`, only that many random parameter components are checked.
pub fn joint_loss_check(
    encoder: &EncoderConfig,
    sample: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<CheckOutcome, MetaError> {
    let gen = SyntheticConfig {
        min_atoms: 6,
        max_atoms: 10,
        ..SyntheticConfig::default()
    };
    let graph = random_molecule(&gen, rng);
    let smiles = write_smiles(&graph).unwrap_or_default();
    let data = MultiTaskDataset::new(
        vec![Molecule {
            id: "probe".into(),
            graph,
            smiles,
        }],
        vec![vec![Some(true)]],
        vec!["probe".into()],
    )?;
    let objective = Objective {
        encoder: *encoder,
        weights: LossWeights::default(),
        use_bond_loss: true,
        use_atom_loss: true,
        sampling: SelfSupervisedConfig {
            context_fraction: 0.5,
            ..SelfSupervisedConfig::default()
        },
    };
    let set = PreparedSet::new(
        &data,
        &[Example {
            molecule: 0,
            label: true,
        }],
        &objective,
        rng,
    )?;
    let theta: ParameterSet<f64> = init_params(encoder, rng)?;
    let f = tape_fn(|_, p| {
        set_forward(p, &set, &objective)
            .map(|fwd| fwd.joint)
            .map_err(|e| match e {
                MetaError::Autodiff(a) => a,
                _ => AutodiffError::DomainError("joint loss forward failed"),
            })
    });
    let mut coords: Vec<(String, usize)> = theta
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
        .collect();
    if let Some(n) = sample {
        coords.shuffle(rng);
        coords.truncate(n);
    }
    let report = grad_check_at(f, &theta, FD_STEP, &coords)?;
    Ok(CheckOutcome {
        name: format!(
            "joint loss {}x{} {}",
            encoder.num_layers,
            encoder.hidden_dim,
            encoder.aggregator.name()
        ),
        max_rel_error: report.max_rel_error,
        tolerance: GRADCHECK_TOLERANCE,
        components: report.components,
        worst: report.worst.map(|(n, i)| {
            format!(
                "{n}[{i}] analytic {:.6e} numeric {:.6e}",
                report.analytic, report.numeric
            )
        }),
    })
}

fn quadratic<'t>(
    tape: &'t Tape<f64>,
    p: &BoundParams<'t, f64>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> Result<Var<'t, f64>, AutodiffError> {
    let x = p.get("theta")?;
    x.matmul(tape.constant(a.clone()))?
        .inner(x)?
        .scale(0.5)?
        .add(x.inner(tape.constant(b.clone()))?)
}

/// `½θᵀAθ + bᵀθ` evaluated in plain arithmetic.
fn quadratic_value(a: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let quad: f64 = (0..n)
        .map(|i| (0..n).map(|j| x[i] * a.get(i, j) * x[j]).sum::<f64>())
        .sum();
    0.5 * quad + (0..n).map(|i| b.data()[i] * x[i]).sum::<f64>()
}

/// Second-order meta-gradients of 1-D and 4-D quadratic inner/outer pairs
/// against central differences of `L_outer(θ − α∇L_inner(θ))`, plus the
/// `α = 0` identity in both modes.
pub fn surrogate_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>, AutodiffError> {
    let mut out = Vec::new();
    for n in [1usize, 4] {
        let mut worst = 0.0f64;
        let mut components = 0;
        for _ in 0..5 {
            let mut t = |r, c| Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            let (ai, bi, ao, bo, x0) = (t(n, n), t(1, n), t(n, n), t(1, n), t(1, n));
            let alpha = 0.2;
            let inner = tape_fn(|tape, p| quadratic(tape, p, &ai, &bi));
            let outer = tape_fn(|tape, p| quadratic(tape, p, &ao, &bo));
            let theta: ParameterSet<f64> =
                [("theta".to_string(), x0.clone())].into_iter().collect();
            let so = second_order_trace(inner, outer, &theta, alpha, MetaGradMode::SecondOrder)?;

            let composed = |x: &[f64]| {
                let step: Vec<f64> = (0..n)
                    .map(|i| {
                        let g: f64 = (0..n)
                            .map(|j| 0.5 * (ai.get(i, j) + ai.get(j, i)) * x[j])
                            .sum();
                        x[i] - alpha * (g + bi.data()[i])
                    })
                    .collect();
                quadratic_value(&ao, &bo, &step)
            };
            // Exact for quadratics at any step; a wide step keeps rounding small.
            let h = 1e-2;
            for i in 0..n {
                let mut x = x0.data().to_vec();
                x[i] += h;
                let plus = composed(&x);
                x[i] -= 2.0 * h;
                let minus = composed(&x);
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max(relative_error(
                    so.get("theta").expect("theta").data()[i],
                    numeric,
                ));
                components += 1;
            }
        }
        out.push(CheckOutcome {
            name: format!("second-order quadratic {n}-d"),
            max_rel_error: worst,
            tolerance: SURROGATE_TOLERANCE,
            components,
            worst: None,
        });
    }

    let a = Tensor::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.3 });
    let b = Tensor::from_fn(1, 3, |_, j| j as f64 - 1.0);
    let x0 = Tensor::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
    let theta: ParameterSet<f64> = [("theta".to_string(), x0)].into_iter().collect();
    let f = tape_fn(|tape, p| quadratic(tape, p, &a, &b));
    let so = second_order_trace(f, f, &theta, 0.0, MetaGradMode::SecondOrder)?;
    let fo = second_order_trace(f, f, &theta, 0.0, MetaGradMode::FirstOrder)?;
    out.push(CheckOutcome {
        name: "zero-step identity".into(),
        max_rel_error: if so.bitwise_eq(&fo) {
            0.0
        } else {
            f64::INFINITY
        },
        tolerance: SURROGATE_TOLERANCE,
        components: 3,
        worst: None,
    });
    Ok(out)
}

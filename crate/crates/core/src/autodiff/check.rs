//! Finite-difference gradient checking and gradients through one inner update.

use crate::autodiff::{AutodiffError, BoundParams, ParameterSet, Tape, Var};
use crate::scalar::Scalar;

/// How the outer gradient treats the inner adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MetaGradMode {
    /// Gradient stopped through the inner update: `∇L_outer` evaluated at `θ'`.
    #[default]
    FirstOrder,
    /// Full derivative of `L_outer(θ - α∇L_inner(θ))`, Hessian-vector term included.
    SecondOrder,
}

impl MetaGradMode {
    pub fn name(self) -> &'static str {
        match self {
            MetaGradMode::FirstOrder => "first-order",
            MetaGradMode::SecondOrder => "second-order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "first-order" | "first_order" | "first" => Some(MetaGradMode::FirstOrder),
            "second-order" | "second_order" | "second" => Some(MetaGradMode::SecondOrder),
            _ => None,
        }
    }
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub analytic: T,
    pub numeric: T,
    pub components: usize,
}

/// Denominator floor for relative errors. Central differences of an O(1)
/// function carry about 1e-11 of rounding noise at step 1e-5, which would
/// dominate the relative error of near-zero components without a floor.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Components whose relative error exceeds this are measured again with
/// steps one and two orders smaller, keeping the closest estimate. A step
/// that straddles a kink (leaky ReLU, the loss cap) gives a wrong difference
/// quotient; a wrong derivative stays wrong at every step.
const REFINE_ABOVE: f64 = 1e-6;

pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(T::lit(REL_ERROR_FLOOR));
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `f` at `point` against central differences with step `step`.
pub fn grad_check<T, F>(
    f: F,
    point: &ParameterSet<T>,
    step: T,
) -> Result<GradCheckReport<T>, AutodiffError>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
{
    let coords: Vec<(String, usize)> = point
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
        .collect();
    grad_check_at(f, point, step, &coords)
}

/// [`grad_check`] restricted to the listed `(tensor name, flat index)` components.
pub fn grad_check_at<T, F>(
    f: F,
    point: &ParameterSet<T>,
    step: T,
    coords: &[(String, usize)],
) -> Result<GradCheckReport<T>, AutodiffError>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
{
    let analytic = {
        let tape = Tape::new();
        let bound = point.bind(&tape);
        let out = f(&tape, &bound)?;
        if !out.item().is_finite() {
            return Err(AutodiffError::NonFiniteFunction);
        }
        bound.gradients(&tape.backward(out)?)
    };
    let eval = |p: &ParameterSet<T>| -> Result<T, AutodiffError> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let v = f(&tape, &bound)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFiniteFunction)
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        worst: None,
        analytic: T::zero(),
        numeric: T::zero(),
        components: 0,
    };
    let mut work = point.clone();
    for (name, i) in coords {
        let i = *i;
        let orig = *component(&mut work, name, i)?;
        let a = analytic.get(name).expect("same layout").data()[i];
        let mut h = step;
        let mut numeric = T::zero();
        let mut err = T::infinity();
        for _ in 0..3 {
            *component(&mut work, name, i)? = orig + h;
            let plus = eval(&work)?;
            *component(&mut work, name, i)? = orig - h;
            let minus = eval(&work)?;
            *component(&mut work, name, i)? = orig;
            let estimate = (plus - minus) / (h + h);
            let e = relative_error(a, estimate);
            if e < err {
                err = e;
                numeric = estimate;
            }
            if err <= T::lit(REFINE_ABOVE) {
                break;
            }
            h = h / T::lit(10.0);
        }
        report.components += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), i));
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn component<'a, T: Scalar>(
    p: &'a mut ParameterSet<T>,
    name: &str,
    i: usize,
) -> Result<&'a mut T, AutodiffError> {
    p.get_mut(name)
        .and_then(|t| t.data_mut().get_mut(i))
        .ok_or_else(|| AutodiffError::MissingParameter(format!("{name}[{i}]")))
}

/// Gradient of `outer(θ')` w.r.t. `θ`, where `θ' = θ - α ∇inner(θ)`.
///
/// `alpha == 0` is treated as the identity update in both modes.
pub fn second_order_trace<T, Fi, Fo>(
    inner: Fi,
    outer: Fo,
    theta: &ParameterSet<T>,
    alpha: T,
    mode: MetaGradMode,
) -> Result<ParameterSet<T>, AutodiffError>
where
    T: Scalar,
    Fi: for<'t> Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
    Fo: for<'t> Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
{
    match mode {
        MetaGradMode::FirstOrder => {
            let adapted = if alpha == T::zero() {
                theta.clone()
            } else {
                let tape = Tape::new();
                let bound = theta.bind(&tape);
                let loss = inner(&tape, &bound)?;
                let g = bound.gradients(&tape.backward(loss)?);
                theta.descended(&g, alpha)
            };
            let tape = Tape::new();
            let bound = adapted.bind(&tape);
            let loss = outer(&tape, &bound)?;
            Ok(bound.gradients(&tape.backward(loss)?))
        }
        MetaGradMode::SecondOrder => {
            let tape = Tape::new();
            let bound = theta.bind(&tape);
            let adapted = differentiable_step(&tape, &bound, &inner, alpha)?;
            let loss = outer(&tape, &adapted)?;
            Ok(bound.gradients(&tape.backward(loss)?))
        }
    }
}

/// One recorded gradient step `θ - α ∇loss(θ)`; the result stays differentiable w.r.t. `θ`.
pub fn differentiable_step<'t, T, F>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    loss: &F,
    alpha: T,
) -> Result<BoundParams<'t, T>, AutodiffError>
where
    T: Scalar,
    F: Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
{
    if alpha == T::zero() {
        return Ok(params.clone());
    }
    let l = loss(tape, params)?;
    let vars: Vec<Var<'t, T>> = params.vars().collect();
    let grads = tape.grad_graph(l, &vars)?;
    let stepped = vars
        .iter()
        .zip(grads)
        .map(|(&p, g)| p.sub(g.scale(alpha)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(params.with_vars(stepped))
}

/// Pins a closure to the higher-ranked signature taken by [`grad_check`] and
/// [`second_order_trace`]; closure signatures are not otherwise inferred as
/// lifetime-generic.
pub fn tape_fn<T, F>(f: F) -> F
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &BoundParams<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
{
    f
}

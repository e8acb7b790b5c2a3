//! Message-passing graph encoder, mean readout and the prediction heads.
//!
//! A forward pass works on a [`GraphBatch`], the disjoint union of several
//! molecules, so one tape covers a whole support or query set. Every bond
//! contributes two directed edges `u → v` and `v → u`; edge states are the
//! input-layer bond embeddings and stay fixed across layers.

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, BoundParams, ParameterSet, Tensor, Var};
use crate::molgraph::{
    atom_row, MolGraphError, ATOM_NUMBER_TABLE, BOND_DIRECTION_TABLE, BOND_TYPE_TABLE,
    CHIRALITY_TABLE, FEATURE_VOCAB,
};
use crate::scalar::Scalar;
use crate::smiles::MolecularGraph;

/// How neighbor messages `h_u + h_e` are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Aggregator {
    /// Mean over neighbors, then `W · [h_v ‖ agg]`.
    #[default]
    PaperConcat,
    /// Sum over neighbors, then `W · [h_v ‖ agg]`.
    GinSum,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::PaperConcat => "paper-concat",
            Aggregator::GinSum => "gin-sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper-concat" | "paper_concat" => Some(Aggregator::PaperConcat),
            "gin-sum" | "gin_sum" => Some(Aggregator::GinSum),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    pub aggregator: Aggregator,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 5,
            hidden_dim: 32,
            leaky_slope: 0.01,
            aggregator: Aggregator::PaperConcat,
        }
    }
}

impl EncoderConfig {
    /// The full-size setting: 300-wide states, 5 layers.
    pub fn paper() -> Self {
        EncoderConfig {
            hidden_dim: 300,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.num_layers == 0 {
            return Err(EncoderError::InvalidConfig(
                "num_layers must be at least 1".into(),
            ));
        }
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "hidden_dim must be positive and even, got {}",
                self.hidden_dim
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(EncoderError::InvalidConfig(format!(
                "leaky_slope must be finite and non-negative, got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    MolGraph(#[from] MolGraphError),
    #[error("graph embedding of an empty graph")]
    EmptyGraph,
    #[error("atom-type prediction with an empty context")]
    EmptyContext,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

pub fn layer_weight_name(layer: usize) -> String {
    format!("gnn.layer{layer}.weight")
}

pub const PROPERTY_HEAD: &str = "head.property";
pub const ATOM_HEAD: &str = "head.atom";
pub const ATTENTION_WEIGHT: &str = "head.attention.w";

/// Uniform in `±√(6 / (rows + cols))`.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-bound..=bound)))
}

/// Canonical parameter names and shapes for a config, in initialization order.
pub fn parameter_shapes(cfg: &EncoderConfig) -> Vec<(String, [usize; 2])> {
    let d = cfg.hidden_dim;
    let h = d / 2;
    let v = FEATURE_VOCAB;
    let mut out = vec![
        (ATOM_NUMBER_TABLE.to_string(), [v.atom_type_count, h]),
        (CHIRALITY_TABLE.to_string(), [v.chirality_count, d - h]),
        (BOND_TYPE_TABLE.to_string(), [v.bond_type_count, h]),
        (
            BOND_DIRECTION_TABLE.to_string(),
            [v.bond_direction_count, d - h],
        ),
    ];
    for l in 0..cfg.num_layers {
        out.push((layer_weight_name(l), [d, 2 * d]));
    }
    for (head, classes) in [(PROPERTY_HEAD, 2), (ATOM_HEAD, v.atom_type_count)] {
        out.push((format!("{head}.w1"), [d, d]));
        out.push((format!("{head}.b1"), [1, d]));
        out.push((format!("{head}.w2"), [classes, d]));
        out.push((format!("{head}.b2"), [1, classes]));
    }
    out.push((ATTENTION_WEIGHT.to_string(), [1, d]));
    out
}

/// Glorot-uniform weights and tables, zero biases.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<ParameterSet<T>, EncoderError> {
    cfg.validate()?;
    let mut params = ParameterSet::new();
    for (name, [r, c]) in parameter_shapes(cfg) {
        let value = if name.ends_with(".b1") || name.ends_with(".b2") {
            Tensor::zeros(r, c)
        } else {
            glorot(r, c, rng)
        };
        params.insert(name, value)?;
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors `cfg` expects.
pub fn check_layout<T: Scalar>(
    params: &ParameterSet<T>,
    cfg: &EncoderConfig,
) -> Result<(), EncoderError> {
    let expected = parameter_shapes(cfg);
    for (name, shape) in &expected {
        let t = params
            .get(name)
            .ok_or_else(|| AutodiffError::MissingParameter(name.clone()))?;
        if t.shape() != *shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "parameter layout",
                left: t.shape(),
                right: *shape,
            }
            .into());
        }
    }
    if params.len() != expected.len() {
        let extra = params
            .names()
            .find(|n| !expected.iter().any(|(e, _)| e == n))
            .unwrap_or_default();
        return Err(EncoderError::InvalidConfig(format!(
            "unexpected parameter {extra:?}"
        )));
    }
    Ok(())
}

/// Two-layer perceptron `w2 · leaky(w1 · x + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct MlpHead<'t, T: Scalar> {
    pub w1: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub w2: Var<'t, T>,
    pub b2: Var<'t, T>,
}

impl<'t, T: Scalar> MlpHead<'t, T> {
    fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self, AutodiffError> {
        Ok(MlpHead {
            w1: params.get(&format!("{prefix}.w1"))?,
            b1: params.get(&format!("{prefix}.b1"))?,
            w2: params.get(&format!("{prefix}.w2"))?,
            b2: params.get(&format!("{prefix}.b2"))?,
        })
    }

    pub fn forward(&self, x: Var<'t, T>, slope: T) -> Result<Var<'t, T>, AutodiffError> {
        x.linear(self.w1, Some(self.b1))?
            .leaky_relu(slope)?
            .linear(self.w2, Some(self.b2))
    }
}

/// Typed view of a bound parameter set.
#[derive(Debug, Clone)]
pub struct EncoderParams<'t, T: Scalar> {
    pub atom_number: Var<'t, T>,
    pub chirality: Var<'t, T>,
    pub bond_type: Var<'t, T>,
    pub bond_direction: Var<'t, T>,
    pub layers: Vec<Var<'t, T>>,
    pub property_head: MlpHead<'t, T>,
    pub atom_head: MlpHead<'t, T>,
    pub attention: Var<'t, T>,
}

impl<'t, T: Scalar> EncoderParams<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, cfg: &EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        Ok(EncoderParams {
            atom_number: params.get(ATOM_NUMBER_TABLE)?,
            chirality: params.get(CHIRALITY_TABLE)?,
            bond_type: params.get(BOND_TYPE_TABLE)?,
            bond_direction: params.get(BOND_DIRECTION_TABLE)?,
            layers: (0..cfg.num_layers)
                .map(|l| params.get(&layer_weight_name(l)))
                .collect::<Result<_, _>>()?,
            property_head: MlpHead::bind(params, PROPERTY_HEAD)?,
            atom_head: MlpHead::bind(params, ATOM_HEAD)?,
            attention: params.get(ATTENTION_WEIGHT)?,
        })
    }
}

/// Index arrays describing a disjoint union of molecular graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    graph_count: usize,
    /// First global node index of each graph, plus the total at the end.
    offsets: Vec<usize>,
    atom_rows: Rc<Vec<usize>>,
    chirality_rows: Rc<Vec<usize>>,
    edge_type_rows: Rc<Vec<usize>>,
    edge_direction_rows: Rc<Vec<usize>>,
    edge_src: Rc<Vec<usize>>,
    edge_dst: Rc<Vec<usize>>,
    degree: Vec<usize>,
    node_graph: Rc<Vec<usize>>,
}

impl GraphBatch {
    pub fn new<'g>(
        graphs: impl IntoIterator<Item = &'g MolecularGraph>,
    ) -> Result<Self, EncoderError> {
        let mut b = GraphBatch {
            graph_count: 0,
            offsets: vec![0],
            atom_rows: Rc::default(),
            chirality_rows: Rc::default(),
            edge_type_rows: Rc::default(),
            edge_direction_rows: Rc::default(),
            edge_src: Rc::default(),
            edge_dst: Rc::default(),
            degree: Vec::new(),
            node_graph: Rc::default(),
        };
        let (mut atoms, mut chir, mut ety, mut edir, mut src, mut dst, mut owner) =
            (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
        for g in graphs {
            let base = *b.offsets.last().expect("offsets start non-empty");
            for (i, a) in g.atoms().iter().enumerate() {
                atoms.push(atom_row(a)?);
                chir.push(a.chirality.index());
                owner.push(b.graph_count);
                b.degree.push(g.degree(i));
            }
            for bond in g.bonds() {
                for (s, d) in [(bond.u, bond.v), (bond.v, bond.u)] {
                    src.push(base + s);
                    dst.push(base + d);
                    ety.push(bond.bond_type.index());
                    edir.push(bond.direction.index());
                }
            }
            b.offsets.push(base + g.atom_count());
            b.graph_count += 1;
        }
        b.atom_rows = Rc::new(atoms);
        b.chirality_rows = Rc::new(chir);
        b.edge_type_rows = Rc::new(ety);
        b.edge_direction_rows = Rc::new(edir);
        b.edge_src = Rc::new(src);
        b.edge_dst = Rc::new(dst);
        b.node_graph = Rc::new(owner);
        Ok(b)
    }

    pub fn graph_count(&self) -> usize {
        self.graph_count
    }

    pub fn node_count(&self) -> usize {
        self.atom_rows.len()
    }

    /// Global index of atom `atom` of graph `graph`.
    pub fn node_index(&self, graph: usize, atom: usize) -> usize {
        self.offsets[graph] + atom
    }

    pub fn graph_nodes(&self, graph: usize) -> std::ops::Range<usize> {
        self.offsets[graph]..self.offsets[graph + 1]
    }
}

/// `h_v⁽⁰⁾` for every node of the batch.
pub fn initial_node_states<'t, T: Scalar>(
    p: &EncoderParams<'t, T>,
    batch: &GraphBatch,
) -> Result<Var<'t, T>, AutodiffError> {
    p.atom_number
        .gather_rows(batch.atom_rows.clone())?
        .concat(p.chirality.gather_rows(batch.chirality_rows.clone())?)
}

/// `h_e⁽⁰⁾` for every directed edge of the batch.
pub fn initial_edge_states<'t, T: Scalar>(
    p: &EncoderParams<'t, T>,
    batch: &GraphBatch,
) -> Result<Var<'t, T>, AutodiffError> {
    p.bond_type
        .gather_rows(batch.edge_type_rows.clone())?
        .concat(
            p.bond_direction
                .gather_rows(batch.edge_direction_rows.clone())?,
        )
}

/// Neighborhood aggregate of `h_u + h_e` for every node; isolated nodes get zeros.
pub fn aggregate_neighborhood<'t, T: Scalar>(
    nodes: Var<'t, T>,
    edges: Var<'t, T>,
    batch: &GraphBatch,
    aggregator: Aggregator,
) -> Result<Var<'t, T>, AutodiffError> {
    let messages = nodes.gather_rows(batch.edge_src.clone())?.add(edges)?;
    let summed = messages.scatter_add_rows(batch.edge_dst.clone(), batch.node_count())?;
    match aggregator {
        Aggregator::GinSum => Ok(summed),
        Aggregator::PaperConcat => {
            let inv = batch
                .degree
                .iter()
                .map(|&d| {
                    if d == 0 {
                        T::zero()
                    } else {
                        T::one() / T::lit(d as f64)
                    }
                })
                .collect();
            summed.scale_rows(Rc::new(inv))
        }
    }
}

/// `leaky(W · [h_prev ‖ agg])`, row-wise.
pub fn layer_update<'t, T: Scalar>(
    h_prev: Var<'t, T>,
    agg: Var<'t, T>,
    w: Var<'t, T>,
    slope: T,
) -> Result<Var<'t, T>, AutodiffError> {
    h_prev.concat(agg)?.linear(w, None)?.leaky_relu(slope)
}

/// Final-layer node vectors, each L2-normalized (zero rows stay zero).
pub fn encode_nodes<'t, T: Scalar>(
    p: &EncoderParams<'t, T>,
    batch: &GraphBatch,
    cfg: &EncoderConfig,
) -> Result<Var<'t, T>, EncoderError> {
    let slope = T::lit(cfg.leaky_slope);
    let edges = initial_edge_states(p, batch)?;
    let mut h = initial_node_states(p, batch)?;
    for &w in &p.layers {
        let agg = aggregate_neighborhood(h, edges, batch, cfg.aggregator)?;
        h = layer_update(h, agg, w, slope)?;
    }
    Ok(h.l2_normalize()?)
}

/// Mean of the node rows of each graph, `graphs × d`.
pub fn graph_embedding<'t, T: Scalar>(
    nodes: Var<'t, T>,
    batch: &GraphBatch,
) -> Result<Var<'t, T>, EncoderError> {
    if (0..batch.graph_count).any(|g| batch.graph_nodes(g).is_empty()) {
        return Err(EncoderError::EmptyGraph);
    }
    let inv = (0..batch.graph_count)
        .map(|g| T::one() / T::lit(batch.graph_nodes(g).len() as f64))
        .collect();
    Ok(nodes
        .scatter_add_rows(batch.node_graph.clone(), batch.graph_count)?
        .scale_rows(Rc::new(inv))?)
}

/// Mean of all rows, `1 × d`.
pub fn mean_rows<'t, T: Scalar>(rows: Var<'t, T>) -> Result<Var<'t, T>, EncoderError> {
    if rows.shape()[0] == 0 {
        return Err(EncoderError::EmptyGraph);
    }
    Ok(rows.mean(0)?)
}

/// Two-class logits per graph embedding row.
pub fn predict_property<'t, T: Scalar>(
    graph_embeddings: Var<'t, T>,
    head: &MlpHead<'t, T>,
    slope: T,
) -> Result<Var<'t, T>, AutodiffError> {
    head.forward(graph_embeddings, slope)
}

/// Inner products `h_u · h_v` for each pair of node rows, `pairs × 1`.
pub fn predict_bond<'t, T: Scalar>(
    nodes: Var<'t, T>,
    pairs: &[(usize, usize)],
) -> Result<Var<'t, T>, AutodiffError> {
    let u = nodes.gather_rows(Rc::new(pairs.iter().map(|p| p.0).collect()))?;
    let v = nodes.gather_rows(Rc::new(pairs.iter().map(|p| p.1).collect()))?;
    u.mul(v)?.row_sum()
}

/// 118-class logits from the mean of each context's node rows.
pub fn predict_atom_type<'t, T: Scalar>(
    nodes: Var<'t, T>,
    contexts: &[Vec<usize>],
    head: &MlpHead<'t, T>,
    slope: T,
) -> Result<Var<'t, T>, EncoderError> {
    if contexts.is_empty() || contexts.iter().any(Vec::is_empty) {
        return Err(EncoderError::EmptyContext);
    }
    let members: Vec<usize> = contexts.iter().flatten().copied().collect();
    let owner: Vec<usize> = contexts
        .iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat(i).take(c.len()))
        .collect();
    let inv = contexts
        .iter()
        .map(|c| T::one() / T::lit(c.len() as f64))
        .collect();
    let pooled = nodes
        .gather_rows(Rc::new(members))?
        .scatter_add_rows(Rc::new(owner), contexts.len())?
        .scale_rows(Rc::new(inv))?;
    Ok(head.forward(pooled, slope)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::smiles::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &EncoderConfig, seed: u64) -> ParameterSet<f64> {
        init_params(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn layout_matches_shapes() {
        let cfg = EncoderConfig::default();
        let p = setup(&cfg, 0);
        check_layout(&p, &cfg).unwrap();
        assert_eq!(p.get("gnn.layer4.weight").unwrap().shape(), [32, 64]);
        assert!(p
            .get("head.property.b1")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let other = EncoderConfig {
            num_layers: 2,
            ..cfg
        };
        assert!(check_layout(&p, &other).is_err());
    }

    #[test]
    fn config_validation() {
        let odd = EncoderConfig {
            hidden_dim: 7,
            ..EncoderConfig::default()
        };
        assert!(odd.validate().is_err());
        let none = EncoderConfig {
            num_layers: 0,
            ..EncoderConfig::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn isolated_atom_aggregates_to_zero() {
        let cfg = EncoderConfig::default();
        let p = setup(&cfg, 1);
        let g = parse("C").unwrap();
        let batch = GraphBatch::new([&g]).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let ep = EncoderParams::bind(&bound, &cfg).unwrap();
        let h = initial_node_states(&ep, &batch).unwrap();
        let e = initial_edge_states(&ep, &batch).unwrap();
        assert_eq!(e.shape(), [0, 32]);
        for agg in [Aggregator::PaperConcat, Aggregator::GinSum] {
            let a = aggregate_neighborhood(h, e, &batch, agg).unwrap();
            assert!(a.value().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn nodes_are_unit_or_zero() {
        let cfg = EncoderConfig::default();
        let p = setup(&cfg, 2);
        let graphs: Vec<_> = ["CCO", "c1ccccc1N", "C", "F/C=C/F"]
            .iter()
            .map(|s| parse(s).unwrap())
            .collect();
        let batch = GraphBatch::new(&graphs).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let ep = EncoderParams::bind(&bound, &cfg).unwrap();
        let h = encode_nodes(&ep, &batch, &cfg).unwrap().value();
        assert_eq!(h.rows(), 3 + 7 + 1 + 4);
        for r in 0..h.rows() {
            let n: f64 = h.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "row {r} norm {n}");
        }
        let g = graph_embedding(tape.constant((*h).clone()), &batch).unwrap();
        assert_eq!(g.shape(), [4, 32]);
    }

    #[test]
    fn heads_have_fixed_widths() {
        let cfg = EncoderConfig {
            hidden_dim: 8,
            num_layers: 1,
            ..EncoderConfig::default()
        };
        let p = setup(&cfg, 3);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let ep = EncoderParams::bind(&bound, &cfg).unwrap();
        let x = tape.constant(Tensor::ones(3, 8));
        assert_eq!(
            predict_property(x, &ep.property_head, 0.01)
                .unwrap()
                .shape(),
            [3, 2]
        );
        let ctx = vec![vec![0, 1], vec![2]];
        assert_eq!(
            predict_atom_type(x, &ctx, &ep.atom_head, 0.01)
                .unwrap()
                .shape(),
            [2, 118]
        );
        assert!(matches!(
            predict_atom_type(x, &[vec![]], &ep.atom_head, 0.01),
            Err(EncoderError::EmptyContext)
        ));
        assert_eq!(predict_bond(x, &[(0, 1), (1, 2)]).unwrap().shape(), [2, 1]);
    }
}

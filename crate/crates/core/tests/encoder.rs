use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molmeta::autodiff::{ParameterSet, Tape};
use molmeta::data::synthetic::random_molecule;
use molmeta::data::SyntheticConfig;
use molmeta::encoder::{init_params, Aggregator, EncoderConfig, GraphBatch};
use molmeta::meta::set_embeddings;
use molmeta::scalar::Scalar;
use molmeta::smiles::{parse_directional, MolecularGraph};

const CORPUS: &str = include_str!("data/smiles_corpus.tsv");

fn small_corpus_graphs(max_atoms: usize) -> Vec<(String, MolecularGraph)> {
    CORPUS
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .map(|s| {
            let g = parse_directional(&s).unwrap();
            (s, g)
        })
        .filter(|(_, g)| g.atom_count() <= max_atoms)
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..n {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn embed<T: Scalar>(
    params: &ParameterSet<T>,
    cfg: &EncoderConfig,
    graphs: &[&MolecularGraph],
) -> Vec<Vec<f64>> {
    let batch = GraphBatch::new(graphs.iter().copied()).unwrap();
    let tape = Tape::new();
    let e = set_embeddings(&params.bind(&tape), &batch, cfg)
        .unwrap()
        .value();
    (0..e.rows())
        .map(|r| (0..e.cols()).map(|c| e.get(r, c).to_f64_lossy()).collect())
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn configs() -> Vec<EncoderConfig> {
    [Aggregator::PaperConcat, Aggregator::GinSum]
        .into_iter()
        .map(|aggregator| EncoderConfig {
            hidden_dim: 16,
            aggregator,
            ..EncoderConfig::default()
        })
        .collect()
}

#[test]
fn permutation_helper_enumerates_all() {
    let p = permutations(4);
    assert_eq!(p.len(), 24);
    let mut sorted = p.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 24);
}

#[test]
fn graph_embedding_is_invariant_under_every_atom_permutation() {
    let graphs = small_corpus_graphs(6);
    assert!(graphs.len() >= 15);
    for cfg in configs() {
        let params = init_params::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (smiles, g) in &graphs {
            let perms = permutations(g.atom_count());
            let permuted: Vec<MolecularGraph> = perms.iter().map(|p| g.permuted(p)).collect();
            let refs: Vec<&MolecularGraph> = permuted.iter().collect();
            let reference = embed(&params, &cfg, &[g]).remove(0);
            for (p, e) in perms.iter().zip(embed(&params, &cfg, &refs)) {
                let d = max_diff(&reference, &e);
                assert!(
                    d <= 1e-12,
                    "{smiles} {:?} perm {p:?}: {d:e}",
                    cfg.aggregator
                );
            }
        }
    }
}

#[test]
fn batching_does_not_change_embeddings() {
    let graphs = small_corpus_graphs(40);
    let refs: Vec<&MolecularGraph> = graphs.iter().map(|(_, g)| g).collect();
    for cfg in configs() {
        let params = init_params::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let together = embed(&params, &cfg, &refs);
        for (g, e) in refs.iter().zip(&together) {
            let alone = embed(&params, &cfg, &[g]).remove(0);
            assert!(max_diff(&alone, e) <= 1e-12);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let graphs = small_corpus_graphs(40);
    let refs: Vec<&MolecularGraph> = graphs.iter().map(|(_, g)| g).collect();
    let cfg = EncoderConfig::default();
    let params = init_params::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let wide = embed(&params, &cfg, &refs);
    let narrow = embed(&params.cast::<f32>(), &cfg, &refs);
    for (a, b) in wide.iter().zip(&narrow) {
        assert!(max_diff(a, b) < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_molecules_are_permutation_invariant(seed in any::<u64>(), gin in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_molecule(&SyntheticConfig::default(), &mut rng);
        let mut perm: Vec<usize> = (0..g.atom_count()).collect();
        perm.shuffle(&mut rng);
        let cfg = EncoderConfig {
            hidden_dim: 8,
            aggregator: if gin { Aggregator::GinSum } else { Aggregator::PaperConcat },
            ..EncoderConfig::default()
        };
        let params = init_params::<f64, _>(&cfg, &mut rng).unwrap();
        let p = g.permuted(&perm);
        let e = embed(&params, &cfg, &[&g, &p]);
        prop_assert!(max_diff(&e[0], &e[1]) <= 1e-12);
    }
}

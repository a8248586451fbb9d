use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::{
    structural_features, ChainState, DensePredictor, LatentBlock, Model, SparsePredictor,
    StructuralKind,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{parse_model_spec, ModelGraph};
use crate::presets;

enum Node {
    Mixture {
        sampler: WeightedIndex<f64>,
        means: Vec<f64>,
        sds: Vec<f64>,
    },
    Sparse(SparsePredictor, f64),
    Dense(DensePredictor, f64),
    Parametric(StructuralKind, Vec<f64>, f64),
}

/// Draws fresh latent vectors from the generative model at one chain state.
pub struct LatentSimulator {
    parents: Vec<Vec<usize>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl LatentSimulator {
    pub fn new(model: &Model, state: &ChainState) -> Result<Self> {
        let layout = &model.layout;
        let nodes = state
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                Ok(match b {
                    LatentBlock::Exogenous(m) => Node::Mixture {
                        sampler: WeightedIndex::new(&m.weights).map_err(|e| {
                            Error::InvalidParameter(format!("mixture weights: {e}"))
                        })?,
                        means: m.means.clone(),
                        sds: m.vars.iter().map(|v| v.sqrt()).collect(),
                    },
                    LatentBlock::Gp(g) => match state.kind {
                        StructuralKind::GpDense => Node::Dense(
                            DensePredictor::new(g, &state.parent_inputs(layout, i))?,
                            g.noise_var,
                        ),
                        _ => Node::Sparse(SparsePredictor::new(g)?, g.noise_var),
                    },
                    LatentBlock::Parametric(p) => {
                        Node::Parametric(state.kind, p.coef.clone(), p.noise_var)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentSimulator {
            parents: layout.latent_parents.clone(),
            order: layout.order.clone(),
            nodes,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.nodes.len()];
        for &i in &self.order {
            let p: Vec<f64> = self.parents[i].iter().map(|&k| x[k]).collect();
            let z: f64 = StandardNormal.sample(rng);
            x[i] = match &self.nodes[i] {
                Node::Mixture { sampler, means, sds } => {
                    let c = sampler.sample(rng);
                    means[c] + sds[c] * z
                }
                Node::Sparse(pred, v) => {
                    let (m, s) = pred.predict(&p)?;
                    m + (s + v).sqrt() * z
                }
                Node::Dense(pred, v) => {
                    let (m, s) = pred.predict(&p)?;
                    m + (s + v).sqrt() * z
                }
                Node::Parametric(kind, coef, v) => {
                    let phi = structural_features(*kind, &p);
                    phi.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>() + v.sqrt() * z
                }
            };
        }
        Ok(x)
    }
}

/// Observed and latent draws, row-major.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub observed: Dataset,
    /// `latents[d][i]`
    pub latents: Vec<Vec<f64>>,
}

/// `n` independent draws of (latents, indicators) from the generative model.
pub fn simulate_forward<R: Rng + ?Sized>(
    model: &Model,
    state: &ChainState,
    n: usize,
    rng: &mut R,
) -> Result<Simulated> {
    let sim = LatentSimulator::new(model, state)?;
    let mut latents = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sim.draw(rng)?;
        let y = model
            .layout
            .indicator_parents
            .iter()
            .zip(&state.measurement.indicators)
            .map(|(ps, p)| {
                let mean = p.intercept
                    + ps.iter().zip(&p.loadings).map(|(&k, l)| l * x[k]).sum::<f64>();
                let z: f64 = StandardNormal.sample(rng);
                mean + p.noise_var.sqrt() * z
            })
            .collect();
        rows.push(y);
        latents.push(x);
    }
    Ok(Simulated {
        observed: Dataset::new(model.graph.indicator_names(), rows)?,
        latents,
    })
}

/// A generated dataset with its ground-truth latents and model graph.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub graph: ModelGraph,
    pub observed: Dataset,
    /// `latents[d][i]`
    pub latents: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn latent_dataset(&self) -> Dataset {
        Dataset::new(self.graph.latent_names(), self.latents.clone())
            .expect("latent rows match latent names")
    }
}

/// X1 ~ N(0,1), X2 = 4 X1² + N(0,1), Y1..Y3 = X1 + ε, Y4..Y6 = X2 + ε with
/// standard normal errors.
pub fn make_synthetic_quadratic(n: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2 = 4.0 * x1 * x1 + rng.sample::<f64, _>(StandardNormal);
        let y: Vec<f64> = (0..6)
            .map(|j| if j < 3 { x1 } else { x2 } + rng.sample::<f64, _>(StandardNormal))
            .collect();
        latents.push(vec![x1, x2]);
        rows.push(y);
    }
    let graph = parse_model_spec(presets::QUADRATIC_MODEL).expect("bundled model parses");
    SyntheticData {
        observed: Dataset::new(graph.indicator_names(), rows).expect("six columns"),
        graph,
        latents,
    }
}

const CONSUMER_LOADINGS: [[f64; 3]; 4] = [
    [0.9, 1.1, 0.8],
    [1.2, 0.7, 0.9],
    [0.8, 1.0, 1.1],
    [1.1, 0.9, 0.7],
];
const CONSUMER_INTERCEPTS: [[f64; 3]; 4] = [
    [0.3, -0.2, 0.1],
    [-0.4, 0.2, 0.5],
    [0.1, -0.3, 0.2],
    [0.4, 0.0, -0.1],
];

/// Linear-Gaussian data on the four-factor attitude graph (X1→X2, X1→X3,
/// X2→X3, X2→X4), four indicators per factor. With `unanchored` the returned
/// graph makes every indicator load on every factor with nothing fixed; the
/// data are the same.
pub fn consumer_synthetic(n: usize, seed: u64, unanchored: bool) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let mut latents = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = normal();
        let x2 = 0.8 * x1 + 0.6 * normal();
        let x3 = 0.4 * x1 + 0.5 * x2 + 0.6 * normal();
        let x4 = 0.7 * x2 + 0.7 * normal();
        let x = [x1, x2, x3, x4];
        let mut y = Vec::with_capacity(16);
        for (l, xl) in x.iter().enumerate() {
            y.push(xl + 0.6 * normal());
            for k in 0..3 {
                y.push(CONSUMER_INTERCEPTS[l][k] + CONSUMER_LOADINGS[l][k] * xl + 0.6 * normal());
            }
        }
        latents.push(x.to_vec());
        rows.push(y);
    }
    let spec = if unanchored {
        presets::CONSUMER_UNANCHORED_MODEL
    } else {
        presets::CONSUMER_MODEL
    };
    let graph = parse_model_spec(spec).expect("bundled model parses");
    SyntheticData {
        observed: Dataset::new(graph.indicator_names(), rows).expect("sixteen columns"),
        graph,
        latents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_model_spec;
    use crate::kernel::KernelHyper;
    use crate::model::{
        ExogenousMixture, GpLatent, IndicatorParams, MeasurementParams, PriorConfig,
    };

    fn one_latent(loading: f64, intercept: f64) -> (Model, ChainState) {
        let g = parse_model_spec("latent X\nindicator Y parents: X anchor\nindicator Z parents: X")
            .unwrap();
        let model = Model::new(g, StructuralKind::GpSparse, PriorConfig::default(), 1).unwrap();
        let ind = |l: f64, a: bool| IndicatorParams {
            intercept: if a { 0.0 } else { intercept },
            loadings: vec![l],
            noise_var: 1.0,
            anchored: a,
        };
        let state = ChainState {
            kind: StructuralKind::GpSparse,
            latents: vec![vec![]],
            measurement: MeasurementParams {
                indicators: vec![ind(1.0, true), ind(loading, false)],
            },
            blocks: vec![LatentBlock::Exogenous(ExogenousMixture {
                weights: vec![1.0],
                means: vec![0.0],
                vars: vec![1.0],
                assignment: vec![],
            })],
            iteration: 0,
        };
        (model, state)
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn variance_of_anchored_indicator() {
        let (model, state) = one_latent(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = simulate_forward(&model, &state, 100_000, &mut rng).unwrap();
        let (_, v) = moments(&s.observed.column(0));
        assert!((v - 2.0).abs() < 0.1, "{v}");
        // zero loading: second column is pure N(0, 1) noise
        let (m, v) = moments(&s.observed.column(1));
        assert!(m.abs() < 4.0 / (1e5f64).sqrt());
        assert!((v - 1.0).abs() < 4.0 * (2.0 / 1e5f64).sqrt());
        assert_eq!(simulate_forward(&model, &state, 0, &mut rng).unwrap().observed.n_rows(), 0);
    }

    #[test]
    fn gp_child_uses_sparse_predictive() {
        let g = parse_model_spec(presets::QUADRATIC_MODEL).unwrap();
        let model = Model::new(g, StructuralKind::GpSparse, PriorConfig::default(), 1).unwrap();
        let (_, base) = one_latent(1.0, 0.0);
        let mut mp = base.measurement.indicators[0].clone();
        mp.noise_var = 0.01;
        let state = ChainState {
            kind: StructuralKind::GpSparse,
            latents: vec![vec![], vec![]],
            measurement: MeasurementParams {
                indicators: vec![mp; 6],
            },
            blocks: vec![
                base.blocks[0].clone(),
                LatentBlock::Gp(GpLatent {
                    hyper: KernelHyper::new(1.0, 100.0).unwrap(),
                    noise_var: 0.01,
                    f: vec![],
                    pseudo_inputs: vec![vec![0.0]],
                    pseudo_f: vec![3.0],
                }),
            ],
            iteration: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = simulate_forward(&model, &state, 20_000, &mut rng).unwrap();
        let x2: Vec<f64> = s.latents.iter().map(|x| x[1]).collect();
        let (m, _) = moments(&x2);
        // a nearly constant function close to 3 k(x,0)/k(0,0) over x ~ N(0,1)
        let expect = 3.0 / 1.0001 * (100.0f64 / 101.0).sqrt();
        assert!((m - expect).abs() < 0.02, "{m} vs {expect}");
    }

    #[test]
    fn quadratic_generator() {
        let d = make_synthetic_quadratic(150, 3);
        assert_eq!(d.observed.n_rows(), 150);
        assert_eq!(d.observed.n_cols(), 6);
        let big = make_synthetic_quadratic(100_000, 4);
        let (m4, v4) = moments(&big.observed.column(3));
        // Var(Y4) = 16 Var(X1²) + 2 = 34
        assert!((m4 - 4.0).abs() < 4.0 * (v4 / 1e5).sqrt());
        assert!((v4 - 34.0).abs() < 0.05 * 34.0);
        let (_, v1) = moments(&big.observed.column(0));
        assert!((v1 - 2.0).abs() < 0.1);
    }

    #[test]
    fn consumer_generator() {
        let d = consumer_synthetic(333, 1, false);
        assert_eq!(d.observed.n_cols(), 16);
        assert_eq!(d.observed.n_rows(), 333);
        let u = consumer_synthetic(333, 1, true);
        assert_eq!(u.observed.rows, d.observed.rows);
        assert!(u.graph.unanchored);
        assert!(u.graph.indicators.iter().all(|i| i.latent_parents.len() == 4));
    }
}

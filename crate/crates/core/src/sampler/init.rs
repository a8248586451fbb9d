use rand::seq::index::sample;
use rand::Rng;

use super::gibbs::std_normal;
use crate::error::Result;
use crate::kernel::{kernel_cross_matrix, CholeskyFactor, KernelHyper};
use crate::model::{
    ChainState, ExogenousMixture, GpLatent, IndicatorParams, LatentBlock, MeasurementParams, Model,
    Observed, ParametricLatent, StructuralKind,
};

/// Starting state. Latents with an anchor start at its values, others at
/// standard normal draws; `perturb` adds unit noise to every latent so that
/// several chains start apart. Other parameters start at prior means, and
/// pseudo-inputs at distinct data parent vectors.
pub fn initial_state<R: Rng + ?Sized>(
    model: &Model,
    data: &Observed,
    rng: &mut R,
    perturb: bool,
) -> Result<ChainState> {
    let layout = &model.layout;
    let n = data.n;
    let l = model.n_latents();
    let mut latents: Vec<Vec<f64>> = (0..l)
        .map(|i| match layout.anchor[i] {
            Some(j) => data.columns[j].clone(),
            None => (0..n).map(|_| std_normal(rng)).collect(),
        })
        .collect();
    if perturb {
        for x in latents.iter_mut().flatten() {
            *x += std_normal(rng);
        }
    }
    let indicators = layout
        .indicator_parents
        .iter()
        .enumerate()
        .map(|(j, ps)| {
            let anchored = layout.anchored[j];
            IndicatorParams {
                intercept: 0.0,
                loadings: vec![if anchored { 1.0 } else { 0.0 }; ps.len()],
                noise_var: 1.0,
                anchored,
            }
        })
        .collect();
    let pr = &model.priors;
    let k = pr.mixture_components;
    let mut state = ChainState {
        kind: model.structural,
        latents,
        measurement: MeasurementParams { indicators },
        blocks: Vec::with_capacity(l),
        iteration: 0,
    };
    for i in 0..l {
        let p = layout.latent_parents[i].len();
        let block = if p == 0 {
            LatentBlock::Exogenous(ExogenousMixture {
                weights: vec![1.0 / k as f64; k],
                means: vec![0.0; k],
                vars: vec![1.0; k],
                assignment: (0..n).map(|d| d % k).collect(),
            })
        } else if model.structural.is_gp() {
            let inputs = state.parent_inputs(layout, i);
            let start = pr.hyperprior.mean();
            let hyper = KernelHyper::new(start, start)?;
            let mut g = GpLatent {
                hyper,
                noise_var: 1.0,
                f: state.latents[i].clone(),
                pseudo_inputs: Vec::new(),
                pseudo_f: Vec::new(),
            };
            if model.structural == StructuralKind::GpSparse {
                g.pseudo_inputs = initial_pseudo_inputs(&inputs, model.pseudo_count, model, rng);
                let km = kernel_cross_matrix(&g.pseudo_inputs, &g.pseudo_inputs, &hyper, true)?;
                let chol = CholeskyFactor::decompose_with_retry(&km, hyper.jitter)?;
                let z: Vec<f64> = (0..g.pseudo_inputs.len()).map(|_| std_normal(rng)).collect();
                g.pseudo_f = (chol.lower() * nalgebra::DVector::from_vec(z)).as_slice().to_vec();
                let alpha = chol.solve(&g.pseudo_f);
                g.f = inputs
                    .iter()
                    .map(|x| {
                        g.pseudo_inputs
                            .iter()
                            .zip(&alpha)
                            .map(|(xb, a)| hyper.cross(x, xb) * a)
                            .sum()
                    })
                    .collect();
            }
            LatentBlock::Gp(g)
        } else {
            LatentBlock::Parametric(ParametricLatent {
                coef: vec![0.0; model.structural.feature_dim(p)],
                noise_var: 1.0,
            })
        };
        state.blocks.push(block);
    }
    Ok(state)
}

/// `m` distinct data parent vectors (extra points drawn uniformly in the box
/// when `m` exceeds the data), clamped just inside the prior's support.
fn initial_pseudo_inputs<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    m: usize,
    model: &Model,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let bound = 0.99 * model.priors.space_fill.bound;
    let take = m.min(inputs.len());
    let mut out: Vec<Vec<f64>> = sample(rng, inputs.len(), take)
        .into_iter()
        .map(|d| inputs[d].iter().map(|v| v.clamp(-bound, bound)).collect())
        .collect();
    let p = inputs.first().map_or(0, |x| x.len());
    while out.len() < m {
        out.push((0..p).map(|_| rng.random_range(-bound..bound)).collect());
    }
    out
}

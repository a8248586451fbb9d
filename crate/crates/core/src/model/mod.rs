//! The probabilistic model: parameters, priors, log-densities, the sparse GP
//! predictive, forward simulation and synthetic data generators.

mod density;
pub(crate) use density::log_sum_exp;
mod simulate;

pub use density::{
    dense_structural_logdensity, kernel_hyperprior_logdensity, ln_inv_gamma, ln_normal,
    log_joint, measurement_logdensity, parametric_structural_logdensity,
    sparse_prior_covariance, structural_logdensity_sparse, gp_predict_function, DensePredictor,
    SparsePredictor,
};
pub use simulate::{
    consumer_synthetic, make_synthetic_quadratic, simulate_forward, LatentSimulator, Simulated,
    SyntheticData,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Layout, ModelGraph};
use crate::kernel::{KernelHyper, SpaceFillPrior};

/// How latent-to-latent functions are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructuralKind {
    GpSparse,
    GpDense,
    Linear,
    Quadratic,
}

impl StructuralKind {
    pub fn is_gp(self) -> bool {
        matches!(self, StructuralKind::GpSparse | StructuralKind::GpDense)
    }

    pub fn name(self) -> &'static str {
        match self {
            StructuralKind::GpSparse => "gp-sparse",
            StructuralKind::GpDense => "gp-dense",
            StructuralKind::Linear => "linear",
            StructuralKind::Quadratic => "quadratic",
        }
    }

    /// Number of regression features for `k` parents (parametric kinds only).
    pub fn feature_dim(self, k: usize) -> usize {
        match self {
            StructuralKind::Linear => 1 + k,
            StructuralKind::Quadratic => 1 + 2 * k + k * (k.saturating_sub(1)) / 2,
            _ => 0,
        }
    }
}

impl std::str::FromStr for StructuralKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp-sparse" | "gp" | "sparse" => Ok(StructuralKind::GpSparse),
            "gp-dense" | "dense" => Ok(StructuralKind::GpDense),
            "linear" => Ok(StructuralKind::Linear),
            "quadratic" => Ok(StructuralKind::Quadratic),
            other => Err(Error::InvalidParameter(format!("unknown structural kind `{other}`"))),
        }
    }
}

/// Regression features of a parent vector: `[1, p..]` for linear,
/// `[1, p.., p².., p_i p_j (i<j)]` for quadratic.
pub fn structural_features(kind: StructuralKind, parents: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(kind.feature_dim(parents.len()));
    out.push(1.0);
    out.extend_from_slice(parents);
    if kind == StructuralKind::Quadratic {
        out.extend(parents.iter().map(|p| p * p));
        for i in 0..parents.len() {
            for j in i + 1..parents.len() {
                out.push(parents[i] * parents[j]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaParam {
    /// gamma(shape k, scale θ): mean kθ.
    Scale,
    /// gamma(shape k, rate β): mean k/β.
    Rate,
}

/// Equal-or-weighted mixture of gamma densities for kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMixture {
    /// (weight, shape, scale-or-rate)
    pub components: Vec<(f64, f64, f64)>,
    pub param: GammaParam,
}

impl GammaMixture {
    pub fn scale_of(&self, second: f64) -> f64 {
        match self.param {
            GammaParam::Scale => second,
            GammaParam::Rate => 1.0 / second,
        }
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|&(w, k, s)| w * k * self.scale_of(s))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Prior variance of every intercept, loading and parametric coefficient.
    pub coef_var: f64,
    pub var_shape: f64,
    pub var_scale: f64,
    pub dirichlet: f64,
    pub mixture_components: usize,
    pub mixture_mean_var: f64,
    pub mixture_var_shape: f64,
    pub mixture_var_scale: f64,
    pub hyperprior: GammaMixture,
    pub space_fill: SpaceFillPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            coef_var: 5.0,
            var_shape: 2.0,
            var_scale: 1.0,
            dirichlet: 10.0,
            mixture_components: 5,
            mixture_mean_var: 5.0,
            mixture_var_shape: 2.0,
            mixture_var_scale: 1.0,
            hyperprior: GammaMixture {
                components: vec![(0.5, 1.0, 20.0), (0.5, 10.0, 10.0)],
                param: GammaParam::Scale,
            },
            space_fill: SpaceFillPrior::new(3.0),
        }
    }
}

impl PriorConfig {
    /// Defaults with the pseudo-input box set from the observed data spread.
    pub fn for_data(data: &Observed) -> Self {
        PriorConfig {
            space_fill: SpaceFillPrior::from_std_devs(&data.std_devs()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("coef_var", self.coef_var),
            ("var_shape", self.var_shape),
            ("var_scale", self.var_scale),
            ("dirichlet", self.dirichlet),
            ("mixture_mean_var", self.mixture_mean_var),
            ("mixture_var_shape", self.mixture_var_shape),
            ("mixture_var_scale", self.mixture_var_scale),
            ("space_fill.bound", self.space_fill.bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("prior {name} = {v}")));
            }
        }
        if self.mixture_components == 0 {
            return Err(Error::InvalidParameter("mixture_components = 0".into()));
        }
        if self.hyperprior.components.is_empty()
            || self
                .hyperprior
                .components
                .iter()
                .any(|&(w, k, s)| !(w > 0.0 && k > 0.0 && s > 0.0))
        {
            return Err(Error::InvalidParameter("kernel hyperprior".into()));
        }
        Ok(())
    }
}

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct Model {
    pub graph: ModelGraph,
    pub layout: Layout,
    pub structural: StructuralKind,
    pub priors: PriorConfig,
    /// Pseudo-input count per GP latent (sparse mode).
    pub pseudo_count: usize,
}

impl Model {
    pub fn new(
        graph: ModelGraph,
        structural: StructuralKind,
        priors: PriorConfig,
        pseudo_count: usize,
    ) -> Result<Self> {
        priors.validate()?;
        if structural == StructuralKind::GpSparse && pseudo_count == 0 {
            return Err(Error::InvalidParameter(
                "sparse mode needs at least one pseudo-input".into(),
            ));
        }
        let layout = graph.layout()?;
        Ok(Model {
            graph,
            layout,
            structural,
            priors,
            pseudo_count,
        })
    }

    pub fn n_latents(&self) -> usize {
        self.graph.latents.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.graph.indicators.len()
    }

    pub fn is_exogenous(&self, i: usize) -> bool {
        self.layout.latent_parents[i].is_empty()
    }
}

/// Observed indicator columns in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub n: usize,
    /// `columns[j][d]` is indicator `j` at datapoint `d`.
    pub columns: Vec<Vec<f64>>,
}

impl Observed {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Ok(Observed { n, columns })
    }

    /// Selects the graph's indicators from a dataset by column name.
    pub fn from_dataset(dataset: &Dataset, graph: &ModelGraph) -> Result<Self> {
        let columns = graph
            .indicators
            .iter()
            .map(|ind| {
                dataset
                    .column_index(&ind.name)
                    .map(|k| dataset.column(k))
                    .ok_or_else(|| Error::MissingColumn(ind.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Observed {
            n: dataset.n_rows(),
            columns,
        })
    }

    pub fn row(&self, d: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[d]).collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                if c.len() < 2 {
                    return 0.0;
                }
                let m = c.iter().sum::<f64>() / n;
                (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Observed {
        Observed {
            n: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorParams {
    pub intercept: f64,
    /// One loading per latent parent, in the indicator's parent order.
    pub loadings: Vec<f64>,
    pub noise_var: f64,
    /// Intercept 0 and unit loading, never resampled.
    pub anchored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementParams {
    pub indicators: Vec<IndicatorParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    /// Component index per datapoint.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpLatent {
    pub hyper: KernelHyper,
    pub noise_var: f64,
    /// Function values at the datapoints.
    pub f: Vec<f64>,
    /// Empty in dense mode.
    pub pseudo_inputs: Vec<Vec<f64>>,
    pub pseudo_f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricLatent {
    pub coef: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatentBlock {
    Exogenous(ExogenousMixture),
    Gp(GpLatent),
    Parametric(ParametricLatent),
}

impl LatentBlock {
    pub fn as_gp(&self) -> Option<&GpLatent> {
        match self {
            LatentBlock::Gp(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_gp_mut(&mut self) -> Option<&mut GpLatent> {
        match self {
            LatentBlock::Gp(g) => Some(g),
            _ => None,
        }
    }
}

/// One chain's complete current state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub kind: StructuralKind,
    /// `latents[i][d]`
    pub latents: Vec<Vec<f64>>,
    pub measurement: MeasurementParams,
    pub blocks: Vec<LatentBlock>,
    pub iteration: u64,
}

impl ChainState {
    pub fn n(&self) -> usize {
        self.latents.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Parent vectors of latent `i` at every datapoint.
    pub fn parent_inputs(&self, layout: &Layout, i: usize) -> Vec<Vec<f64>> {
        let ps = &layout.latent_parents[i];
        (0..self.n())
            .map(|d| ps.iter().map(|&p| self.latents[p][d]).collect())
            .collect()
    }

    pub fn latent_row(&self, d: usize) -> Vec<f64> {
        self.latents.iter().map(|x| x[d]).collect()
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        let l = model.n_latents();
        if self.latents.len() != l || self.blocks.len() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                found: self.latents.len(),
            });
        }
        if self.measurement.indicators.len() != model.n_indicators() {
            return Err(Error::DimensionMismatch {
                expected: model.n_indicators(),
                found: self.measurement.indicators.len(),
            });
        }
        for (j, p) in self.measurement.indicators.iter().enumerate() {
            if p.loadings.len() != model.layout.indicator_parents[j].len() {
                return Err(Error::DimensionMismatch {
                    expected: model.layout.indicator_parents[j].len(),
                    found: p.loadings.len(),
                });
            }
            if p.anchored && (p.intercept != 0.0 || p.loadings != [1.0]) {
                return Err(Error::InvalidParameter(format!(
                    "anchored indicator {j} must have intercept 0 and loading 1"
                )));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                LatentBlock::Exogenous(m) => {
                    let s: f64 = m.weights.iter().sum();
                    if (s - 1.0).abs() > 1e-9 || m.vars.iter().any(|v| !(*v > 0.0)) {
                        return Err(Error::InvalidParameter(format!("mixture of latent {i}")));
                    }
                }
                LatentBlock::Gp(g) => {
                    let p = model.layout.latent_parents[i].len();
                    if g.pseudo_inputs.iter().any(|x| x.len() != p) {
                        return Err(Error::DimensionMismatch {
                            expected: p,
                            found: g.pseudo_inputs[0].len(),
                        });
                    }
                    if self.kind == StructuralKind::GpSparse && g.pseudo_inputs.is_empty() {
                        return Err(Error::InvalidParameter(format!(
                            "latent {i} has no pseudo-inputs in sparse mode"
                        )));
                    }
                }
                LatentBlock::Parametric(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_maps() {
        assert_eq!(structural_features(StructuralKind::Linear, &[3.0]), vec![1.0, 3.0]);
        assert_eq!(
            structural_features(StructuralKind::Quadratic, &[2.0, 3.0]),
            vec![1.0, 2.0, 3.0, 4.0, 9.0, 6.0]
        );
        assert_eq!(
            structural_features(StructuralKind::Quadratic, &[1.5]),
            vec![1.0, 1.5, 2.25]
        );
        for k in 0..5usize {
            let p: Vec<f64> = (0..k).map(|i| i as f64).collect();
            assert_eq!(
                structural_features(StructuralKind::Quadratic, &p).len(),
                1 + k + k + k * k.saturating_sub(1) / 2
            );
        }
    }

    #[test]
    fn hyperprior_means() {
        let p = PriorConfig::default();
        assert_eq!(p.hyperprior.mean(), 0.5 * 20.0 + 0.5 * 100.0);
        let rate = GammaMixture {
            param: GammaParam::Rate,
            ..p.hyperprior.clone()
        };
        assert!((rate.mean() - (0.5 / 20.0 + 0.5)).abs() < 1e-12);
    }
}

//! Held-out scoring: the Monte Carlo posterior predictive density, k-fold
//! cross-validation over structural families, and fantasy samples.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{apply_transform, preprocess, Dataset, Recipe};
use crate::diagnostics::chain_rng;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::model::{ln_normal, log_sum_exp, LatentSimulator, Model, Observed, PriorConfig, StructuralKind};
use crate::sampler::{fit_chain, initial_state, SweepConfig, Trace};

/// Monte Carlo sizes of the predictive estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    /// Posterior draws `S`, evenly thinned from the trace.
    pub draws: usize,
    /// Forward latent simulations `T` per draw.
    pub sims: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { draws: 100, sims: 50 }
    }
}

/// `s` indices spread evenly over `0..len` (all of them when `s >= len`).
pub fn thin_evenly(len: usize, s: usize) -> Vec<usize> {
    if s >= len {
        return (0..len).collect();
    }
    (0..s).map(|k| k * len / s).collect()
}

struct DrawTerms {
    intercepts: Vec<f64>,
    loadings: Vec<Vec<f64>>,
    noise_vars: Vec<f64>,
    /// Simulated latent vectors, one per forward simulation.
    sims: Vec<Vec<f64>>,
}

/// Latent simulations for a set of posterior draws, shared by every test row
/// scored against them. Simulation `t` uses the same random stream under
/// every draw, so the estimate does not depend on the order of the draws.
pub struct PosteriorPredictive {
    parents: Vec<Vec<usize>>,
    draws: Vec<DrawTerms>,
}

impl PosteriorPredictive {
    pub fn new<R: Rng + ?Sized>(
        trace: &Trace,
        model: &Model,
        config: PredictConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if trace.draws.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if config.draws == 0 || config.sims == 0 {
            return Err(Error::InvalidParameter("predictive needs S, T >= 1".into()));
        }
        let seeds: Vec<u64> = (0..config.sims).map(|_| rng.random()).collect();
        let draws = thin_evenly(trace.draws.len(), config.draws)
            .into_iter()
            .map(|s| {
                let state = &trace.draws[s];
                let sim = LatentSimulator::new(model, state)?;
                let sims = seeds
                    .iter()
                    .map(|&seed| sim.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
                    .collect::<Result<Vec<_>>>()?;
                let ind = &state.measurement.indicators;
                Ok(DrawTerms {
                    intercepts: ind.iter().map(|p| p.intercept).collect(),
                    loadings: ind.iter().map(|p| p.loadings.clone()).collect(),
                    noise_vars: ind.iter().map(|p| p.noise_var).collect(),
                    sims,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorPredictive {
            parents: model.layout.indicator_parents.clone(),
            draws,
        })
    }

    /// Log of the average, over draws and simulations, of the joint density
    /// of all indicators of one row.
    pub fn logdensity(&self, y_star: &[f64]) -> Result<f64> {
        if y_star.len() != self.parents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.parents.len(),
                found: y_star.len(),
            });
        }
        let mut terms = Vec::with_capacity(self.draws.len() * self.draws[0].sims.len());
        for d in &self.draws {
            for x in &d.sims {
                let mut lp = 0.0;
                for (j, ps) in self.parents.iter().enumerate() {
                    let mean = d.intercepts[j]
                        + ps.iter().zip(&d.loadings[j]).map(|(&k, l)| l * x[k]).sum::<f64>();
                    lp += ln_normal(y_star[j], mean, d.noise_vars[j]);
                }
                terms.push(lp);
            }
        }
        Ok(log_sum_exp(&terms) - (terms.len() as f64).ln())
    }

    /// Mean of [`Self::logdensity`] over the rows of `test`.
    pub fn mean_logdensity(&self, test: &Observed) -> Result<f64> {
        if test.n == 0 {
            return Err(Error::InvalidParameter("no test rows".into()));
        }
        let mut total = 0.0;
        for d in 0..test.n {
            let v = self.logdensity(&test.row(d))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteDensity(d));
            }
            total += v;
        }
        Ok(total / test.n as f64)
    }
}

/// Predictive log-density of one held-out row.
pub fn predictive_logdensity<R: Rng + ?Sized>(
    trace: &Trace,
    model: &Model,
    y_star: &[f64],
    config: PredictConfig,
    rng: &mut R,
) -> Result<f64> {
    let v = PosteriorPredictive::new(trace, model, config, rng)?.logdensity(y_star)?;
    if !v.is_finite() {
        return Err(Error::NonFiniteDensity(0));
    }
    Ok(v)
}

/// A structural family entered in a cross-validation study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvMethod {
    pub kind: StructuralKind,
    /// Pseudo-inputs per GP latent; ignored by the other kinds.
    pub pseudo_count: usize,
}

impl CvMethod {
    pub fn new(kind: StructuralKind) -> Self {
        CvMethod { kind, pseudo_count: 50 }
    }

    pub fn label(&self) -> String {
        match self.kind {
            StructuralKind::GpSparse => format!("gp-sparse-m{}", self.pseudo_count),
            k => k.name().to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub sweep: SweepConfig,
    pub predict: PredictConfig,
    /// Column transforms fitted on each training part and reused on its test part.
    pub recipe: Recipe,
    /// Training parts larger than this are subsampled (same rows for every method).
    pub max_train_rows: Option<usize>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            sweep: SweepConfig::default(),
            predict: PredictConfig::default(),
            recipe: Recipe::parse("center all").expect("valid recipe"),
            max_train_rows: None,
        }
    }
}

/// Seeded partition of `0..n` into `k` disjoint folds whose sizes differ by at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    folds
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub methods: Vec<String>,
    /// `scores[method][fold]`: mean test log predictive density.
    pub scores: Vec<Vec<f64>>,
}

impl CvReport {
    pub fn mean(&self, method: usize) -> f64 {
        let s = &self.scores[method];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == label)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "fold", "mean_test_logdensity"])?;
        for (m, row) in self.methods.iter().zip(&self.scores) {
            for (f, v) in row.iter().enumerate() {
                w.write_record([m.clone(), f.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits every method on each training part and scores it on the held-out part.
pub fn cross_validate(
    dataset: &Dataset,
    graph: &ModelGraph,
    methods: &[CvMethod],
    config: &CvConfig,
    master_seed: u64,
) -> Result<CvReport> {
    if config.folds < 2 || config.folds > dataset.n_rows() {
        return Err(Error::InvalidParameter(format!(
            "{} folds over {} rows",
            config.folds,
            dataset.n_rows()
        )));
    }
    config.sweep.validate()?;
    let folds = fold_partition(dataset.n_rows(), config.folds, master_seed);
    let recipe = config.recipe.columnwise();
    let mut parts = Vec::with_capacity(folds.len());
    for (f, test_rows) in folds.iter().enumerate() {
        let mut train_rows: Vec<usize> =
            (0..dataset.n_rows()).filter(|r| test_rows.binary_search(r).is_err()).collect();
        if let Some(cap) = config.max_train_rows {
            if train_rows.len() > cap {
                let mut rng = chain_rng(master_seed, 1000 + f);
                let mut keep = rand::seq::index::sample(&mut rng, train_rows.len(), cap).into_vec();
                keep.sort_unstable();
                train_rows = keep.into_iter().map(|k| train_rows[k]).collect();
            }
        }
        let train = preprocess(&dataset.select_rows(&train_rows), &recipe)?;
        let test = apply_transform(&train, &dataset.select_rows(test_rows))?;
        parts.push((
            Observed::from_dataset(&train, graph)?,
            Observed::from_dataset(&test, graph)?,
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..folds.len()).map(move |f| (m, f)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let (train, test) = &parts[f];
            let method = methods[m];
            let model = Model::new(
                graph.clone(),
                method.kind,
                PriorConfig::for_data(train),
                method.pseudo_count,
            )?;
            let mut rng = chain_rng(master_seed, f);
            let init = initial_state(&model, train, &mut rng, false)?;
            let trace = fit_chain(&model, train, &config.sweep, init, rng)?;
            let mut prng = chain_rng(master_seed ^ 0x5eed, f);
            let pred = PosteriorPredictive::new(&trace, &model, config.predict, &mut prng)?;
            let score = pred.mean_logdensity(test)?;
            log::info!("{} fold {f}: {score:.4}", method.label());
            Ok(score)
        })
        .collect();
    let mut scores = vec![vec![0.0; folds.len()]; methods.len()];
    for ((m, f), r) in jobs.into_iter().zip(results) {
        scores[m][f] = r?;
    }
    Ok(CvReport {
        methods: methods.iter().map(CvMethod::label).collect(),
        scores,
    })
}

/// `count` latent vectors, each forward-simulated under a uniformly chosen
/// posterior draw.
pub fn emit_fantasy_samples<R: Rng + ?Sized>(
    trace: &Trace,
    model: &Model,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if trace.draws.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut sims: HashMap<usize, LatentSimulator> = HashMap::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = rng.random_range(0..trace.draws.len());
        if !sims.contains_key(&s) {
            sims.insert(s, LatentSimulator::new(model, &trace.draws[s])?);
        }
        out.push(sims[&s].draw(rng)?);
    }
    Ok(out)
}

/// Rows under a header of latent names.
pub fn write_latent_rows<W: Write>(mut w: W, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", names.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_thinning() {
        assert_eq!(thin_evenly(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(thin_evenly(3, 5), vec![0, 1, 2]);
        assert_eq!(thin_evenly(7, 1), vec![0]);
    }

    #[test]
    fn folds_cover_disjointly() {
        let folds = fold_partition(100, 5, 3);
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let uneven = fold_partition(13, 5, 1);
        assert_eq!(uneven.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 2, 2]);
        assert_eq!(fold_partition(100, 5, 3), folds);
    }
}

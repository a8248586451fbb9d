//! Multi-chain convergence checks and posterior summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, Observed};
use crate::sampler::trace::{params_header, params_values};
use crate::sampler::{fit_chain, initial_state, SweepConfig, Trace};

/// Potential scale reduction over `chains` of equal length:
/// `sqrt(((n-1)/n W + B/n) / W)` with `B` the between-chain and `W` the mean
/// within-chain variance.
pub fn epsr(chains: &[Vec<f64>]) -> Result<f64> {
    let j = chains.len();
    let n = chains.first().map_or(0, Vec::len);
    if j < 2 || n < 2 {
        return Err(Error::TooFewChains { chains: j, length: n });
    }
    if let Some(c) = chains.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: c.len() });
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / j as f64;
    let b = nf / (j - 1) as f64 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / j as f64;
    if w <= 0.0 {
        return Err(Error::ZeroWithinVariance);
    }
    let v_hat = (nf - 1.0) / nf * w + b / nf;
    Ok((v_hat / w).sqrt())
}

/// EPSR of every latent value, `values[latent][datapoint]`. Scalars whose
/// chains never moved are NaN and count as failing.
#[derive(Clone, Debug)]
pub struct EpsrReport {
    pub latent_names: Vec<String>,
    pub chains: usize,
    pub length: usize,
    pub values: Vec<Vec<f64>>,
}

impl EpsrReport {
    pub fn from_traces(traces: &[&Trace]) -> Result<EpsrReport> {
        let first = traces
            .first()
            .ok_or(Error::TooFewChains { chains: 0, length: 0 })?;
        let length = first.draws.len();
        let l = first.graph.latent_names().len();
        let n = first.draws.first().map_or(0, |s| s.latents.first().map_or(0, Vec::len));
        let mut values = vec![vec![f64::NAN; n]; l];
        for (i, row) in values.iter_mut().enumerate() {
            for (d, out) in row.iter_mut().enumerate() {
                let chains: Vec<Vec<f64>> = traces
                    .iter()
                    .map(|t| t.draws.iter().map(|s| s.latents[i][d]).collect())
                    .collect();
                *out = match epsr(&chains) {
                    Ok(v) => v,
                    Err(Error::ZeroWithinVariance) => f64::NAN,
                    Err(e) => return Err(e),
                };
            }
        }
        Ok(EpsrReport {
            latent_names: first.latent_names(),
            chains: traces.len(),
            length,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Share of scalars with EPSR strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let total = self.count();
        if total == 0 {
            return 0.0;
        }
        let below = self.values.iter().flatten().filter(|v| **v < threshold).count();
        below as f64 / total as f64
    }

    /// Largest finite value.
    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["latent", "datapoint_index", "epsr"])?;
        for (name, row) in self.latent_names.iter().zip(&self.values) {
            for (d, v) in row.iter().enumerate() {
                w.write_record([name.clone(), d.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of [`run_multichain`]. Failed chains keep their error in place;
/// the report covers the chains that finished, if at least two did.
pub struct MultichainRun {
    pub traces: Vec<Result<Trace>>,
    pub report: Option<EpsrReport>,
}

impl MultichainRun {
    pub fn completed(&self) -> Vec<&Trace> {
        self.traces.iter().filter_map(|t| t.as_ref().ok()).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &Error)> {
        self.traces
            .iter()
            .enumerate()
            .filter_map(|(j, t)| t.as_ref().err().map(|e| (j, e)))
            .collect()
    }
}

/// Random stream for chain `j` under `master_seed`.
pub fn chain_rng(master_seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(j as u64);
    rng
}

/// Runs `chains` chains in parallel from perturbed starts, then computes the
/// latent-value EPSR report.
pub fn run_multichain(
    model: &Model,
    data: &Observed,
    config: &SweepConfig,
    chains: usize,
    master_seed: u64,
) -> Result<MultichainRun> {
    if chains < 2 {
        return Err(Error::TooFewChains { chains, length: 0 });
    }
    config.validate()?;
    let traces: Vec<Result<Trace>> = (0..chains)
        .into_par_iter()
        .map(|j| {
            let mut rng = chain_rng(master_seed, j);
            let init = initial_state(model, data, &mut rng, true)?;
            let mut trace = fit_chain(model, data, config, init, rng)?;
            trace.seed = Some(master_seed);
            Ok(trace)
        })
        .collect();
    let done: Vec<&Trace> = traces.iter().filter_map(|t| t.as_ref().ok()).collect();
    let report = if done.len() >= 2 {
        Some(EpsrReport::from_traces(&done)?)
    } else {
        None
    };
    Ok(MultichainRun { traces, report })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// 2.5, 25, 50, 75 and 97.5 percent.
    pub quantiles: [f64; 5],
}

pub const SUMMARY_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

impl ScalarSummary {
    pub fn of(name: &str, values: &[f64]) -> Result<ScalarSummary> {
        if values.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(ScalarSummary {
            name: name.to_string(),
            mean,
            sd,
            quantiles: SUMMARY_LEVELS.map(|p| quantile_sorted(&sorted, p)),
        })
    }
}

/// Linearly interpolated quantile of sorted data (positions `p (n-1)`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub struct TraceSummary {
    pub scalars: Vec<ScalarSummary>,
    pub latent_names: Vec<String>,
    /// Posterior-mean latent values, `embedding[latent][datapoint]`.
    pub embedding: Vec<Vec<f64>>,
}

pub fn summarize_trace(trace: &Trace) -> Result<TraceSummary> {
    let first = trace.draws.first().ok_or(Error::EmptyTrace)?;
    let names = params_header(&trace.graph, Some(first))?;
    let rows: Vec<Vec<f64>> = trace.draws.iter().map(params_values).collect();
    let scalars = names
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            ScalarSummary::of(name, &col)
        })
        .collect::<Result<Vec<_>>>()?;
    let t = trace.draws.len() as f64;
    let embedding = (0..first.latents.len())
        .map(|i| {
            (0..first.latents[i].len())
                .map(|d| trace.draws.iter().map(|s| s.latents[i][d]).sum::<f64>() / t)
                .collect()
        })
        .collect();
    Ok(TraceSummary {
        scalars,
        latent_names: trace.latent_names(),
        embedding,
    })
}

impl TraceSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scalar", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"])?;
        for s in &self.scalars {
            let mut rec = vec![s.name.clone(), s.mean.to_string(), s.sd.to_string()];
            rec.extend(s.quantiles.iter().map(|q| q.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per datapoint, one column per latent.
    pub fn write_embedding_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.latent_names.join(","))?;
        let n = self.embedding.first().map_or(0, Vec::len);
        for d in 0..n {
            let row: Vec<String> = self.embedding.iter().map(|e| e[d].to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn hand_example() {
        let v = epsr(&[vec![0.0, 0.0, 2.0, 2.0], vec![1.0, 1.0, 3.0, 3.0]]).unwrap();
        assert!((v - 1.125f64.sqrt()).abs() < 1e-12);
        assert!((v - 1.0607).abs() < 1e-4);
    }

    #[test]
    fn duplicate_chains() {
        let c = vec![0.3, -1.0, 2.5, 0.7, 1.1];
        let v = epsr(&[c.clone(), c]).unwrap();
        assert!((v - (4.0f64 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(epsr(&[vec![1.0, 2.0]]), Err(Error::TooFewChains { .. })));
        assert!(matches!(
            epsr(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(Error::ZeroWithinVariance)
        ));
    }

    #[test]
    fn separated_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = [-10.0, 10.0]
            .iter()
            .map(|m| (0..100).map(|_| m + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        assert!(epsr(&chains).unwrap() > 5.0);
    }

    #[test]
    fn iid_chains_near_one() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chains: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..10_000).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let v = epsr(&chains).unwrap();
            assert!((0.99..=1.02).contains(&v), "{v}");
        }
    }

    #[test]
    fn summary_stats() {
        let s = ScalarSummary::of("a", &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.quantiles[2], 2.0);
        assert_eq!(s.mean, 2.0);
        let c = ScalarSummary::of("c", &[4.5; 7]).unwrap();
        assert_eq!((c.mean, c.sd), (4.5, 0.0));
        assert!(ScalarSummary::of("e", &[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = ScalarSummary::of("z", &xs).unwrap();
        assert!(s.mean.abs() < 4.0 / 100.0);
        assert!((s.quantiles[4] - 1.96).abs() < 0.1);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [0.0, 10.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 2.5);
        assert_eq!(quantile_sorted(&[7.0], 0.975), 7.0);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            a in prop::collection::vec(-5.0f64..5.0, 8),
            b in prop::collection::vec(-5.0f64..5.0, 8),
            slope in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0],
            shift in -100.0f64..100.0,
        ) {
            let base = epsr(&[a.clone(), b.clone()]);
            prop_assume!(base.is_ok());
            let t = |c: &Vec<f64>| c.iter().map(|v| slope * v + shift).collect::<Vec<_>>();
            let moved = epsr(&[t(&a), t(&b)]).unwrap();
            prop_assert!((base.unwrap() - moved).abs() < 1e-8 * moved);
        }

        #[test]
        fn chain_order_does_not_matter(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let x = epsr(&[a.clone(), b.clone(), c.clone()]);
            prop_assume!(x.is_ok());
            let y = epsr(&[c, a, b]).unwrap();
            prop_assert!((x.unwrap() - y).abs() < 1e-12);
        }
    }
}

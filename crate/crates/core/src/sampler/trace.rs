//! Retained draws and their on-disk form: a `manifest.txt` of key=value
//! lines, the model text, `params.csv` with one row per draw, and one CSV per
//! latent for values, pseudo-inputs, function values and mixture indicators.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{parse_model_spec, ModelGraph};
use crate::kernel::KernelHyper;
use crate::model::{
    ChainState, ExogenousMixture, GpLatent, IndicatorParams, LatentBlock, MeasurementParams,
    ParametricLatent, StructuralKind,
};

use super::SweepConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Proposal counts per latent and move type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub latent: Vec<Counter>,
    pub pseudo: Vec<Counter>,
    pub hyper: Vec<Counter>,
}

impl AcceptanceStats {
    pub fn new(latents: usize) -> Self {
        AcceptanceStats {
            latent: vec![Counter::default(); latents],
            pseudo: vec![Counter::default(); latents],
            hyper: vec![Counter::default(); latents],
        }
    }

    pub fn absorb(&mut self, other: &AcceptanceStats) {
        for (a, b) in [
            (&mut self.latent, &other.latent),
            (&mut self.pseudo, &other.pseudo),
            (&mut self.hyper, &other.hyper),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                x.proposed += y.proposed;
                x.accepted += y.accepted;
            }
        }
    }
}

/// Output of one chain.
#[derive(Debug, Clone)]
pub struct Trace {
    pub kind: StructuralKind,
    pub graph: ModelGraph,
    pub graph_hash: String,
    pub config: SweepConfig,
    pub seed: Option<u64>,
    /// Post-burn-in counts.
    pub acceptance: AcceptanceStats,
    pub latent_steps: Vec<f64>,
    pub pseudo_steps: Vec<f64>,
    pub draws: Vec<ChainState>,
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::TraceFormat(format!("{}: bad number `{c}`", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Column names of the scalar parameters, matching [`params_row`].
pub(crate) fn params_header(graph: &ModelGraph, state: Option<&ChainState>) -> Result<Vec<String>> {
    let layout = graph.layout()?;
    let latent_names = graph.latent_names();
    let mut h = vec!["iteration".to_string()];
    for (j, name) in graph.indicator_names().iter().enumerate() {
        h.push(format!("{name}.intercept"));
        for &k in &layout.indicator_parents[j] {
            h.push(format!("{name}.loading.{}", latent_names[k]));
        }
        h.push(format!("{name}.noise_var"));
    }
    let Some(first) = state else {
        return Ok(h);
    };
    for (i, b) in first.blocks.iter().enumerate() {
        let name = &latent_names[i];
        match b {
            LatentBlock::Exogenous(m) => {
                for key in ["weight", "mean", "var"] {
                    for c in 0..m.weights.len() {
                        h.push(format!("{name}.{key}{c}"));
                    }
                }
            }
            LatentBlock::Gp(_) => {
                for key in ["amplitude", "lengthscale", "noise_var"] {
                    h.push(format!("{name}.{key}"));
                }
            }
            LatentBlock::Parametric(p) => {
                for c in 0..p.coef.len() {
                    h.push(format!("{name}.coef{c}"));
                }
                h.push(format!("{name}.noise_var"));
            }
        }
    }
    Ok(h)
}

/// Scalar parameters of one state, iteration first.
pub(crate) fn params_values(s: &ChainState) -> Vec<f64> {
    let mut r = vec![s.iteration as f64];
    for p in &s.measurement.indicators {
        r.push(p.intercept);
        r.extend(&p.loadings);
        r.push(p.noise_var);
    }
    for b in &s.blocks {
        match b {
            LatentBlock::Exogenous(m) => r.extend(m.weights.iter().chain(&m.means).chain(&m.vars)),
            LatentBlock::Gp(g) => r.extend([g.hyper.amplitude, g.hyper.lengthscale, g.noise_var]),
            LatentBlock::Parametric(p) => {
                r.extend(&p.coef);
                r.push(p.noise_var);
            }
        }
    }
    r
}

fn params_row(s: &ChainState) -> Vec<String> {
    let mut r = vec![s.iteration.to_string()];
    r.extend(params_values(s).iter().skip(1).map(|v| v.to_string()));
    r
}

impl Trace {
    pub fn latent_names(&self) -> Vec<String> {
        self.graph.latent_names()
    }

    pub fn indicator_names(&self) -> Vec<String> {
        self.graph.indicator_names()
    }

    /// Writes the trace into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let model_text = self.graph.to_spec_string();
        let latent_names = self.latent_names();
        fs::create_dir_all(dir)?;
        let c = &self.config;
        let mut manifest = String::new();
        let mut kv = |k: &str, v: String| manifest.push_str(&format!("{k}={v}\n"));
        kv("format", "1".into());
        kv("kind", self.kind.name().into());
        kv("graph_hash", self.graph_hash.clone());
        kv("latents", join(&latent_names));
        kv("indicators", join(self.indicator_names()));
        kv("draws", self.draws.len().to_string());
        kv("seed", self.seed.map_or("none".into(), |s| s.to_string()));
        kv("iterations", c.iterations.to_string());
        kv("burn_in", c.burn_in.to_string());
        kv("dense_iterations", c.dense_iterations.to_string());
        kv("dense_burn_in", c.dense_burn_in.to_string());
        kv("thinning", c.thinning.to_string());
        kv("rw_step_latent", c.rw_step_latent.to_string());
        kv("rw_step_pseudo", c.rw_step_pseudo.to_string());
        kv("hyper_alpha", c.hyper_alpha.to_string());
        kv("adapt_during_burnin", c.adapt_during_burnin.to_string());
        kv("target_acceptance", c.target_acceptance.to_string());
        kv("literal_hyper_mh", c.literal_hyper_mh.to_string());
        kv("collapse_functions", c.collapse_functions.to_string());
        kv("latent_steps", join(&self.latent_steps));
        kv("pseudo_steps", join(&self.pseudo_steps));
        fs::write(dir.join("manifest.txt"), manifest)?;
        fs::write(dir.join("model.txt"), &model_text)?;

        let header = params_header(&self.graph, self.draws.first())?;
        write_rows(&dir.join("params.csv"), &header, self.draws.iter().map(params_row))?;

        let mut acc = csv::Writer::from_path(dir.join("acceptance.csv"))?;
        acc.write_record(["latent", "move", "proposed", "accepted", "rate"])?;
        for (i, name) in latent_names.iter().enumerate() {
            for (mv, cnt) in [
                ("latent", self.acceptance.latent[i]),
                ("pseudo", self.acceptance.pseudo[i]),
                ("hyper", self.acceptance.hyper[i]),
            ] {
                if cnt.proposed > 0 {
                    acc.write_record([
                        name.clone(),
                        mv.to_string(),
                        cnt.proposed.to_string(),
                        cnt.accepted.to_string(),
                        cnt.rate().to_string(),
                    ])?;
                }
            }
        }
        acc.flush()?;

        let Some(first) = self.draws.first() else {
            return Ok(());
        };
        let n = first.n();
        let cols = |prefix: &str, k: usize| -> Vec<String> {
            (0..k).map(|d| format!("{prefix}{d}")).collect()
        };
        for (i, name) in latent_names.iter().enumerate() {
            write_rows(
                &dir.join(format!("latents_{name}.csv")),
                &cols("x", n),
                self.draws.iter().map(|s| s.latents[i].iter().map(|v| v.to_string()).collect()),
            )?;
            match &first.blocks[i] {
                LatentBlock::Gp(g) => {
                    write_rows(
                        &dir.join(format!("functions_{name}.csv")),
                        &cols("f", n),
                        self.draws
                            .iter()
                            .map(|s| s.blocks[i].as_gp().unwrap().f.iter().map(|v| v.to_string()).collect()),
                    )?;
                    if !g.pseudo_inputs.is_empty() {
                        let p = g.pseudo_inputs[0].len();
                        let mut h = Vec::new();
                        for d in 0..g.pseudo_inputs.len() {
                            for k in 0..p {
                                h.push(format!("u{d}_{k}"));
                            }
                        }
                        h.extend(cols("fbar", g.pseudo_f.len()));
                        write_rows(
                            &dir.join(format!("pseudo_{name}.csv")),
                            &h,
                            self.draws.iter().map(|s| {
                                let g = s.blocks[i].as_gp().unwrap();
                                g.pseudo_inputs
                                    .iter()
                                    .flatten()
                                    .chain(&g.pseudo_f)
                                    .map(|v| v.to_string())
                                    .collect()
                            }),
                        )?;
                    }
                }
                LatentBlock::Exogenous(_) => {
                    write_rows(
                        &dir.join(format!("assign_{name}.csv")),
                        &cols("z", n),
                        self.draws.iter().map(|s| match &s.blocks[i] {
                            LatentBlock::Exogenous(m) => {
                                m.assignment.iter().map(|v| v.to_string()).collect()
                            }
                            _ => Vec::new(),
                        }),
                    )?;
                }
                LatentBlock::Parametric(_) => {}
            }
        }
        Ok(())
    }

    /// Reads a trace written by [`Trace::save`].
    pub fn load(dir: &Path) -> Result<Trace> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let kv: HashMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .collect();
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::TraceFormat(format!("manifest lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::TraceFormat(format!("manifest `{k}` = `{v}`")))
        }
        let list = |k: &str| -> Result<Vec<String>> {
            let v = get(k)?;
            Ok(if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(String::from).collect()
            })
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            list(k)?.iter().map(|v| num(k, v)).collect()
        };
        let config = SweepConfig {
            iterations: num("iterations", get("iterations")?)?,
            burn_in: num("burn_in", get("burn_in")?)?,
            dense_iterations: num("dense_iterations", get("dense_iterations")?)?,
            dense_burn_in: num("dense_burn_in", get("dense_burn_in")?)?,
            thinning: num("thinning", get("thinning")?)?,
            rw_step_latent: num("rw_step_latent", get("rw_step_latent")?)?,
            rw_step_pseudo: num("rw_step_pseudo", get("rw_step_pseudo")?)?,
            hyper_alpha: num("hyper_alpha", get("hyper_alpha")?)?,
            adapt_during_burnin: num("adapt_during_burnin", get("adapt_during_burnin")?)?,
            target_acceptance: num("target_acceptance", get("target_acceptance")?)?,
            literal_hyper_mh: num("literal_hyper_mh", get("literal_hyper_mh")?)?,
            collapse_functions: num("collapse_functions", get("collapse_functions")?)?,
        };
        let kind: StructuralKind = get("kind")?.parse()?;
        let seed = match get("seed")? {
            "none" => None,
            s => Some(num("seed", s)?),
        };
        let latent_names = list("latents")?;
        let indicator_names = list("indicators")?;
        let n_draws: usize = num("draws", get("draws")?)?;
        let model_text = fs::read_to_string(dir.join("model.txt"))?;
        let graph = parse_model_spec(&model_text)?;
        if graph.latent_names() != latent_names || graph.indicator_names() != indicator_names {
            return Err(Error::TraceFormat("manifest names differ from the model".into()));
        }
        let layout = graph.layout()?;

        let mut acceptance = AcceptanceStats::new(latent_names.len());
        let mut acc = csv::Reader::from_path(dir.join("acceptance.csv"))?;
        for rec in acc.records() {
            let rec = rec?;
            let i = graph
                .latent_index(&rec[0])
                .ok_or_else(|| Error::TraceFormat(format!("unknown latent `{}`", &rec[0])))?;
            let cnt = Counter {
                proposed: num("proposed", &rec[2])?,
                accepted: num("accepted", &rec[3])?,
            };
            match &rec[1] {
                "latent" => acceptance.latent[i] = cnt,
                "pseudo" => acceptance.pseudo[i] = cnt,
                "hyper" => acceptance.hyper[i] = cnt,
                m => return Err(Error::TraceFormat(format!("unknown move `{m}`"))),
            }
        }

        let (header, params) = read_rows(&dir.join("params.csv"))?;
        if params.len() != n_draws {
            return Err(Error::TraceFormat(format!(
                "params.csv has {} rows, manifest says {n_draws}",
                params.len()
            )));
        }
        let count_prefix = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();

        let load_latent = |stem: &str| -> Result<Vec<Vec<f64>>> {
            let (_, rows) = read_rows(&dir.join(format!("{stem}.csv")))?;
            if rows.len() != n_draws {
                return Err(Error::TraceFormat(format!("{stem}.csv has {} rows", rows.len())));
            }
            Ok(rows)
        };
        let mut latent_vals = Vec::new();
        let mut funcs = HashMap::new();
        let mut pseudos = HashMap::new();
        let mut assigns = HashMap::new();
        for (i, name) in latent_names.iter().enumerate() {
            latent_vals.push(load_latent(&format!("latents_{name}"))?);
            if layout.latent_parents[i].is_empty() {
                assigns.insert(i, load_latent(&format!("assign_{name}"))?);
            } else if kind.is_gp() {
                funcs.insert(i, load_latent(&format!("functions_{name}"))?);
                if kind == StructuralKind::GpSparse {
                    pseudos.insert(i, load_latent(&format!("pseudo_{name}"))?);
                }
            }
        }

        let mut draws = Vec::with_capacity(n_draws);
        for (t, row) in params.iter().enumerate() {
            let mut it = row.iter().copied();
            let mut next = || {
                it.next()
                    .ok_or_else(|| Error::TraceFormat("params.csv row too short".into()))
            };
            let iteration = next()? as u64;
            let mut indicators = Vec::new();
            for (j, ps) in layout.indicator_parents.iter().enumerate() {
                let intercept = next()?;
                let loadings = (0..ps.len()).map(|_| next()).collect::<Result<Vec<_>>>()?;
                indicators.push(IndicatorParams {
                    intercept,
                    loadings,
                    noise_var: next()?,
                    anchored: layout.anchored[j],
                });
            }
            let mut blocks = Vec::new();
            for (i, name) in latent_names.iter().enumerate() {
                let p = layout.latent_parents[i].len();
                let block = if p == 0 {
                    let k = count_prefix(&format!("{name}.weight"));
                    let mut take = |k| (0..k).map(|_| next()).collect::<Result<Vec<_>>>();
                    let weights = take(k)?;
                    let means = take(k)?;
                    let vars = take(k)?;
                    LatentBlock::Exogenous(ExogenousMixture {
                        weights,
                        means,
                        vars,
                        assignment: assigns[&i][t].iter().map(|&z| z as usize).collect(),
                    })
                } else if kind.is_gp() {
                    let a = next()?;
                    let b = next()?;
                    let noise_var = next()?;
                    let (pseudo_inputs, pseudo_f) = match pseudos.get(&i) {
                        Some(rows) => {
                            let r = &rows[t];
                            let m = r.len() / (p + 1);
                            (
                                r[..m * p].chunks(p).map(|c| c.to_vec()).collect(),
                                r[m * p..].to_vec(),
                            )
                        }
                        None => (Vec::new(), Vec::new()),
                    };
                    LatentBlock::Gp(GpLatent {
                        hyper: KernelHyper::new(a, b)?,
                        noise_var,
                        f: funcs[&i][t].clone(),
                        pseudo_inputs,
                        pseudo_f,
                    })
                } else {
                    let coef = (0..kind.feature_dim(p)).map(|_| next()).collect::<Result<Vec<_>>>()?;
                    LatentBlock::Parametric(ParametricLatent {
                        coef,
                        noise_var: next()?,
                    })
                };
                blocks.push(block);
            }
            draws.push(ChainState {
                kind,
                latents: latent_vals.iter().map(|v| v[t].clone()).collect(),
                measurement: MeasurementParams { indicators },
                blocks,
                iteration,
            });
        }
        let graph_hash = get("graph_hash")?.to_string();
        if graph_hash != graph.hash() {
            return Err(Error::TraceFormat("graph hash does not match model.txt".into()));
        }
        Ok(Trace {
            kind,
            graph,
            graph_hash,
            config,
            seed,
            acceptance,
            latent_steps: floats("latent_steps")?,
            pseudo_steps: floats("pseudo_steps")?,
            draws,
        })
    }
}

//! Command-line front end: argument parsing and the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gpsem::data::{apply_transform, load_csv, preprocess, Dataset, Directive, Recipe};
use gpsem::diagnostics::{chain_rng, run_multichain, summarize_trace};
use gpsem::graph::{parse_model_spec, validate_graph, ModelGraph};
use gpsem::model::{consumer_synthetic, make_synthetic_quadratic, Model, Observed, PriorConfig, StructuralKind};
use gpsem::predict::{
    cross_validate, emit_fantasy_samples, write_latent_rows, CvConfig, CvMethod, PosteriorPredictive,
    PredictConfig,
};
use gpsem::presets;
use gpsem::sampler::{fit_chain, initial_state, SweepConfig, Trace};

#[derive(Parser, Debug)]
#[command(name = "gpsem", version, about = "Latent-variable SEMs with Gaussian-process structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug)]
struct Global {
    /// Model description file, or a bundled preset name
    #[arg(long, global = true)]
    model: Option<String>,
    /// Input CSV with a header row
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Total sweeps including burn-in
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    thin: usize,
    /// Pseudo-inputs per GP latent
    #[arg(long, global = true, default_value_t = 50)]
    pseudo: usize,
    #[arg(long, global = true, default_value_t = 5)]
    chains: usize,
    #[arg(long, global = true, value_enum, default_value_t = Sampler::Sparse)]
    sampler: Sampler,
    #[arg(long, global = true, value_enum, default_value_t = Structural::Gp)]
    structural: Structural,
    /// Preprocessing recipe file, or a bundled preset name (default: center all)
    #[arg(long, global = true)]
    recipe: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sampler {
    Sparse,
    Dense,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Structural {
    Gp,
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Quadratic,
    Consumer,
    ConsumerUnanchored,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model description
    Validate,
    /// Generate a synthetic dataset with its true latents
    Simulate {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run one chain and write its trace
    Fit,
    /// Run several chains and write the EPSR report
    Diagnose,
    /// Score held-out rows against a fitted trace
    Predict {
        /// Directory written by `fit`
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 50)]
        sims: usize,
    },
    /// Cross-validate structural families
    Cv {
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Comma-separated: gp-sparse, gp-dense, linear, quadratic
        #[arg(long, default_value = "gp-sparse,linear,quadratic")]
        methods: String,
        /// Subsample each training part down to this many rows
        #[arg(long)]
        max_train: Option<usize>,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 50)]
        sims: usize,
    },
    /// Posterior-mean embedding and fantasy samples as CSV
    Plotdata {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
    },
}

/// A missing flag or similar; exit code 2.
struct Usage(String);

enum Failure {
    Usage(Usage),
    Runtime(String),
}

impl From<gpsem::Error> for Failure {
    fn from(e: gpsem::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> std::result::Result<&'a T, Failure> {
    v.as_ref()
        .ok_or_else(|| Failure::Usage(Usage(format!("missing required flag --{flag}"))))
}

fn text_or_preset(arg: &str, preset: impl Fn(&str) -> Option<&'static str>) -> std::result::Result<String, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(fs::read_to_string(path)?);
    }
    preset(arg)
        .map(str::to_string)
        .ok_or_else(|| Failure::Runtime(format!("no such file or preset `{arg}`")))
}

fn recipe_preset(name: &str) -> Option<&'static str> {
    match name {
        "abalone" => Some(presets::ABALONE_RECIPE),
        "housing" => Some(presets::HOUSING_RECIPE),
        _ => None,
    }
}

impl Global {
    fn graph(&self) -> std::result::Result<ModelGraph, Failure> {
        let text = text_or_preset(need(&self.model, "model")?, presets::model)?;
        let graph = parse_model_spec(&text)?;
        let report = validate_graph(&graph);
        for w in &report.warnings {
            log::warn!("{w}");
        }
        if !report.is_valid() {
            let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(Failure::Runtime(format!("invalid model: {}", msgs.join("; "))));
        }
        Ok(graph)
    }

    fn recipe(&self) -> std::result::Result<Recipe, Failure> {
        let text = match &self.recipe {
            Some(r) => text_or_preset(r, recipe_preset)?,
            None => "center all".to_string(),
        };
        Ok(Recipe::parse(&text)?)
    }

    fn kind(&self) -> StructuralKind {
        match (self.structural, self.sampler) {
            (Structural::Gp, Sampler::Sparse) => StructuralKind::GpSparse,
            (Structural::Gp, Sampler::Dense) => StructuralKind::GpDense,
            (Structural::Linear, _) => StructuralKind::Linear,
            (Structural::Quadratic, _) => StructuralKind::Quadratic,
        }
    }

    fn sweep(&self) -> SweepConfig {
        let mut c = SweepConfig {
            thinning: self.thin,
            ..Default::default()
        };
        if let Some(i) = self.iters {
            c.iterations = i;
            c.dense_iterations = i;
        }
        if let Some(b) = self.burnin {
            c.burn_in = b;
            c.dense_burn_in = b;
        } else if self.iters.is_some() {
            c.burn_in = c.iterations / 10;
            c.dense_burn_in = c.iterations / 10;
        }
        c
    }

    fn out(&self) -> std::result::Result<PathBuf, Failure> {
        let out = need(&self.out, "out")?.clone();
        fs::create_dir_all(&out)?;
        Ok(out)
    }

    /// Loads and preprocesses `--data` for `graph`.
    fn dataset(&self, graph: &ModelGraph) -> std::result::Result<Dataset, Failure> {
        let raw = self.raw_dataset(graph)?;
        Ok(preprocess(&raw, &self.recipe()?)?)
    }

    fn raw_dataset(&self, graph: &ModelGraph) -> std::result::Result<Dataset, Failure> {
        let path = need(&self.data, "data")?;
        let recipe = self.recipe()?;
        let mut schema = graph.indicator_names();
        // filter columns must be read even when they are not indicators
        for d in &recipe.directives {
            if let Directive::Filter { column, .. } = d {
                if !schema.contains(column) {
                    schema.push(column.clone());
                }
            }
        }
        let ds = load_csv(path, Some(&schema))?;
        if ds.dropped_incomplete > 0 {
            log::warn!("dropped {} incomplete rows", ds.dropped_incomplete);
        }
        Ok(ds)
    }
}

fn model_for(graph: ModelGraph, kind: StructuralKind, obs: &Observed, pseudo: usize) -> std::result::Result<Model, Failure> {
    Ok(Model::new(graph, kind, PriorConfig::for_data(obs), pseudo.max(1))?)
}

/// Model matching a saved trace, for simulation from its draws.
fn model_of_trace(trace: &Trace) -> std::result::Result<Model, Failure> {
    let pseudo = trace
        .draws
        .first()
        .and_then(|s| s.blocks.iter().find_map(|b| b.as_gp().map(|g| g.pseudo_inputs.len())))
        .unwrap_or(1);
    Ok(Model::new(trace.graph.clone(), trace.kind, PriorConfig::default(), pseudo.max(1))?)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Validate => {
            let text = text_or_preset(need(&g.model, "model")?, presets::model)?;
            let graph = parse_model_spec(&text)?;
            let report = validate_graph(&graph);
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for v in &report.violations {
                println!("violation: {v}");
            }
            if !report.is_valid() {
                return Err(Failure::Runtime("model is invalid".into()));
            }
            println!(
                "ok: {} latents, {} indicators, hash {}",
                graph.latents.len(),
                graph.indicators.len(),
                graph.hash()
            );
        }
        Command::Simulate { preset, n } => {
            let out = g.out()?;
            let syn = match preset {
                Preset::Quadratic => make_synthetic_quadratic(n.unwrap_or(150), g.seed),
                Preset::Consumer => consumer_synthetic(n.unwrap_or(333), g.seed, false),
                Preset::ConsumerUnanchored => consumer_synthetic(n.unwrap_or(333), g.seed, true),
            };
            syn.observed.save(&out.join("data.csv"))?;
            syn.latent_dataset().save(&out.join("latents.csv"))?;
            write_text(&out.join("model.txt"), &syn.graph.to_spec_string())?;
            println!("wrote {} rows to {}", syn.observed.n_rows(), out.display());
        }
        Command::Fit => {
            let graph = g.graph()?;
            let ds = g.dataset(&graph)?;
            let out = g.out()?;
            let obs = Observed::from_dataset(&ds, &graph)?;
            let model = model_for(graph, g.kind(), &obs, g.pseudo)?;
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            let init = initial_state(&model, &obs, &mut rng, false)?;
            let mut trace = fit_chain(&model, &obs, &g.sweep(), init, rng)?;
            trace.seed = Some(g.seed);
            trace.save(&out)?;
            ds.save_transform(&out.join("transform.csv"))?;
            let summary = summarize_trace(&trace)?;
            summary.write_csv(&out.join("summary.csv"))?;
            summary.write_embedding_csv(&out.join("embedding.csv"))?;
            println!("{} draws written to {}", trace.draws.len(), out.display());
        }
        Command::Diagnose => {
            let graph = g.graph()?;
            let ds = g.dataset(&graph)?;
            let out = g.out()?;
            let obs = Observed::from_dataset(&ds, &graph)?;
            let model = model_for(graph, g.kind(), &obs, g.pseudo)?;
            let run = run_multichain(&model, &obs, &g.sweep(), g.chains, g.seed)?;
            for (j, t) in run.traces.iter().enumerate() {
                match t {
                    Ok(t) => t.save(&out.join(format!("chain{j}")))?,
                    Err(e) => eprintln!("chain {j} failed: {e}"),
                }
            }
            let failed = run.failures().len();
            let Some(report) = run.report else {
                return Err(Failure::Runtime("fewer than two chains finished".into()));
            };
            report.write_csv(&out.join("epsr.csv"))?;
            println!(
                "{} chains, {} scalars, {:.1}% below 1.1, max {:.4}",
                report.chains,
                report.count(),
                100.0 * report.fraction_below(1.1),
                report.max()
            );
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} chain(s) failed")));
            }
        }
        Command::Predict { trace, draws, sims } => {
            let t = Trace::load(trace)?;
            let model = model_of_trace(&t)?;
            let raw = g.raw_dataset(&t.graph)?;
            let fitted = Dataset::load_transform(&trace.join("transform.csv"))?;
            let filtered = preprocess(&raw, &filter_only(&g.recipe()?))?;
            let test = Observed::from_dataset(&apply_transform(&fitted, &filtered)?, &t.graph)?;
            let out = g.out()?;
            let cfg = PredictConfig { draws: *draws, sims: *sims };
            let pred = PosteriorPredictive::new(&t, &model, cfg, &mut ChaCha8Rng::seed_from_u64(g.seed))?;
            let mut w = std::io::BufWriter::new(fs::File::create(out.join("predictive.csv"))?);
            writeln!(w, "row,logdensity")?;
            let mut total = 0.0;
            for d in 0..test.n {
                let v = pred.logdensity(&test.row(d))?;
                if !v.is_finite() {
                    return Err(gpsem::Error::NonFiniteDensity(d).into());
                }
                total += v;
                writeln!(w, "{d},{v}")?;
            }
            w.flush()?;
            println!("mean test log-density {:.4} over {} rows", total / test.n.max(1) as f64, test.n);
        }
        Command::Cv { folds, methods, max_train, draws, sims } => {
            let graph = g.graph()?;
            let raw = g.raw_dataset(&graph)?;
            let recipe = g.recipe()?;
            let filtered = preprocess(&raw, &filter_only(&recipe))?;
            let out = g.out()?;
            let methods = methods
                .split(',')
                .map(|m| {
                    let kind: StructuralKind = m.trim().parse()?;
                    Ok(CvMethod { kind, pseudo_count: g.pseudo })
                })
                .collect::<gpsem::Result<Vec<_>>>()?;
            let config = CvConfig {
                folds: *folds,
                sweep: g.sweep(),
                predict: PredictConfig { draws: *draws, sims: *sims },
                recipe,
                max_train_rows: *max_train,
            };
            let report = cross_validate(&filtered, &graph, &methods, &config, g.seed)?;
            report.write_csv(&out.join("cv.csv"))?;
            for (m, name) in report.methods.iter().enumerate() {
                println!("{name}: mean {:.4}", report.mean(m));
            }
        }
        Command::Plotdata { trace, count } => {
            let t = Trace::load(trace)?;
            let model = model_of_trace(&t)?;
            let out = g.out()?;
            summarize_trace(&t)?.write_embedding_csv(&out.join("embedding.csv"))?;
            let mut rng = chain_rng(g.seed, 0);
            let rows = emit_fantasy_samples(&t, &model, *count, &mut rng)?;
            let file = fs::File::create(out.join("fantasy.csv"))?;
            write_latent_rows(std::io::BufWriter::new(file), &t.latent_names(), &rows)?;
            println!("wrote embedding and {count} fantasy samples to {}", out.display());
        }
    }
    Ok(())
}

/// Row filters only.
fn filter_only(recipe: &Recipe) -> Recipe {
    Recipe {
        directives: recipe
            .directives
            .iter()
            .filter(|d| matches!(d, Directive::Filter { .. }))
            .cloned()
            .collect(),
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on bad usage.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(Usage(msg))) => {
            eprintln!("error: {msg}\n");
            let mut cmd = <Cli as clap::CommandFactory>::command();
            eprintln!("{}", cmd.render_usage());
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

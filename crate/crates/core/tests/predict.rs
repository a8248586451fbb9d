use gpsem::graph::parse_model_spec;
use gpsem::model::{
    ln_normal, make_synthetic_quadratic, LatentBlock, Model, Observed, ParametricLatent,
    PriorConfig, StructuralKind,
};
use gpsem::predict::{
    cross_validate, emit_fantasy_samples, predictive_logdensity, write_latent_rows, CvConfig,
    CvMethod, PosteriorPredictive, PredictConfig,
};
use gpsem::presets;
use gpsem::sampler::{initial_state, run_chain, SweepConfig, Trace};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short_config(iterations: usize, burn_in: usize) -> SweepConfig {
    SweepConfig {
        iterations,
        burn_in,
        ..Default::default()
    }
}

fn fitted(kind: StructuralKind, n: usize, iters: usize, seed: u64) -> (Model, Observed, Trace) {
    let syn = make_synthetic_quadratic(n, seed);
    let obs = Observed::from_dataset(&syn.observed, &syn.graph).unwrap();
    let model = Model::new(syn.graph, kind, PriorConfig::for_data(&obs), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = initial_state(&model, &obs, &mut rng, false).unwrap();
    let trace = run_chain(&model, &obs, &short_config(iters, iters / 2), init, rng).unwrap();
    (model, obs, trace)
}

/// Linear model X1 ~ N(0.5, 1.5), X2 = 1 + 0.8 X1 + N(0, 0.5) with fixed
/// measurement parameters, as a one-draw trace.
fn linear_gaussian() -> (Model, Trace) {
    let (model, _, mut trace) = fitted(StructuralKind::Linear, 10, 4, 1);
    let mut s = trace.draws[0].clone();
    if let LatentBlock::Exogenous(m) = &mut s.blocks[0] {
        m.means.iter_mut().for_each(|v| *v = 0.5);
        m.vars.iter_mut().for_each(|v| *v = 1.5);
    }
    s.blocks[1] = LatentBlock::Parametric(ParametricLatent { coef: vec![1.0, 0.8], noise_var: 0.5 });
    for (j, p) in s.measurement.indicators.iter_mut().enumerate() {
        p.intercept = 0.1 * j as f64 - 0.2;
        p.loadings = vec![1.0 - 0.1 * j as f64];
        p.noise_var = 0.3 + 0.1 * j as f64;
    }
    trace.draws = vec![s];
    (model, trace)
}

fn analytic_logdensity(trace: &Trace, y: &[f64]) -> f64 {
    let mu_x = [0.5, 1.4];
    let sx = [[1.5, 1.2], [1.2, 0.64 * 1.5 + 0.5]];
    let ind = &trace.draws[0].measurement.indicators;
    let parent = |j: usize| if j < 3 { 0 } else { 1 };
    let k = ind.len();
    let mean: Vec<f64> = (0..k).map(|j| ind[j].intercept + ind[j].loadings[0] * mu_x[parent(j)]).collect();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        let c = ind[a].loadings[0] * ind[b].loadings[0] * sx[parent(a)][parent(b)];
        if a == b { c + ind[a].noise_var } else { c }
    });
    let chol = cov.clone().cholesky().unwrap();
    let r = DVector::from_iterator(k, y.iter().zip(&mean).map(|(a, b)| a - b));
    let quad = r.dot(&chol.solve(&r));
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (quad + log_det + k as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn zero_loadings_factorize() {
    let (model, obs, mut trace) = fitted(StructuralKind::GpSparse, 20, 10, 2);
    for s in &mut trace.draws {
        for p in &mut s.measurement.indicators {
            p.loadings.iter_mut().for_each(|l| *l = 0.0);
        }
    }
    let y = obs.row(3);
    for sims in [1, 7] {
        let cfg = PredictConfig { draws: 1, sims };
        let got = predictive_logdensity(&trace, &model, &y, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ind = &trace.draws[0].measurement.indicators;
        let want: f64 = y.iter().zip(ind).map(|(v, p)| ln_normal(*v, p.intercept, p.noise_var)).sum();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn linear_gaussian_matches_analytic_marginal() {
    let (model, trace) = linear_gaussian();
    let cfg = PredictConfig { draws: 1, sims: 100_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred = PosteriorPredictive::new(&trace, &model, cfg, &mut rng).unwrap();
    for y in [
        vec![0.3, 0.2, 0.5, 1.6, 1.0, 1.1],
        vec![-1.0, -0.5, -0.2, 0.0, 0.3, 0.1],
    ] {
        let got = pred.logdensity(&y).unwrap();
        let want = analytic_logdensity(&trace, &y);
        assert!((got - want).abs() < 0.05, "{got} vs {want}");
    }
}

#[test]
fn single_sample_estimate_is_finite() {
    let (model, obs, trace) = fitted(StructuralKind::GpSparse, 20, 10, 3);
    let cfg = PredictConfig { draws: 1, sims: 1 };
    let v = predictive_logdensity(&trace, &model, &obs.row(0), cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(v.is_finite());
}

#[test]
fn empty_trace_is_an_error() {
    let (model, obs, mut trace) = fitted(StructuralKind::Linear, 10, 4, 3);
    trace.draws.clear();
    let cfg = PredictConfig::default();
    assert!(predictive_logdensity(&trace, &model, &obs.row(0), cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    assert!(emit_fantasy_samples(&trace, &model, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn draw_order_does_not_change_the_estimate() {
    let (model, obs, trace) = fitted(StructuralKind::GpSparse, 20, 16, 4);
    let mut rev = trace.clone();
    rev.draws.reverse();
    let cfg = PredictConfig { draws: trace.draws.len(), sims: 5 };
    let y = obs.row(2);
    let a = predictive_logdensity(&trace, &model, &y, cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = predictive_logdensity(&rev, &model, &y, cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn zeroed_quadratic_terms_score_like_linear() {
    let (lin_model, obs, trace) = fitted(StructuralKind::Linear, 30, 20, 5);
    let quad_model = Model::new(
        lin_model.graph.clone(),
        StructuralKind::Quadratic,
        lin_model.priors.clone(),
        8,
    )
    .unwrap();
    let mut quad = trace.clone();
    quad.kind = StructuralKind::Quadratic;
    for s in &mut quad.draws {
        s.kind = StructuralKind::Quadratic;
        if let LatentBlock::Parametric(p) = &mut s.blocks[1] {
            p.coef.push(0.0);
        }
    }
    let cfg = PredictConfig { draws: 10, sims: 20 };
    let a = PosteriorPredictive::new(&trace, &lin_model, cfg, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .mean_logdensity(&obs)
        .unwrap();
    let b = PosteriorPredictive::new(&quad, &quad_model, cfg, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .mean_logdensity(&obs)
        .unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn estimator_spread_shrinks_with_more_simulations() {
    let (model, obs, mut trace) = fitted(StructuralKind::GpSparse, 30, 10, 6);
    trace.draws.truncate(1);
    let y = obs.row(1);
    let spread = |sims: usize| {
        let vals: Vec<f64> = (0..10)
            .map(|seed| {
                let cfg = PredictConfig { draws: 1, sims };
                predictive_logdensity(&trace, &model, &y, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
            })
            .collect();
        let m = vals.iter().sum::<f64>() / 10.0;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0).sqrt()
    };
    let ratio = spread(200) / spread(20_000);
    assert!((5.0..=20.0).contains(&ratio), "{ratio}");
}

#[test]
fn fantasy_samples_follow_the_linear_correlation() {
    let (model, trace) = linear_gaussian();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = emit_fantasy_samples(&trace, &model, 100_000, &mut rng).unwrap();
    assert_eq!(rows.len(), 100_000);
    let n = rows.len() as f64;
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n;
    let (m0, m1) = (mean(0), mean(1));
    let cov = |a: usize, ma: f64, b: usize, mb: f64| {
        rows.iter().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>() / n
    };
    let corr = cov(0, m0, 1, m1) / (cov(0, m0, 0, m0) * cov(1, m1, 1, m1)).sqrt();
    let truth = 1.2 / (1.5f64 * 1.46).sqrt();
    assert!((corr - truth).abs() < 0.1, "{corr} vs {truth}");

    let none = emit_fantasy_samples(&trace, &model, 0, &mut rng).unwrap();
    let mut buf = Vec::new();
    write_latent_rows(&mut buf, &trace.latent_names(), &none).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "X1,X2\n");
}

#[test]
fn two_fold_smoke() {
    let syn = make_synthetic_quadratic(40, 7);
    let graph = parse_model_spec(presets::QUADRATIC_MODEL).unwrap();
    let config = CvConfig {
        folds: 2,
        sweep: short_config(30, 10),
        predict: PredictConfig { draws: 5, sims: 5 },
        ..Default::default()
    };
    let methods = [CvMethod { kind: StructuralKind::GpSparse, pseudo_count: 6 }];
    let report = cross_validate(&syn.observed, &graph, &methods, &config, 1).unwrap();
    assert_eq!(report.methods, vec!["gp-sparse-m6".to_string()]);
    assert_eq!(report.scores[0].len(), 2);
    assert!(report.scores[0].iter().all(|v| v.is_finite()));
    let again = cross_validate(&syn.observed, &graph, &methods, &config, 1).unwrap();
    assert_eq!(again, report);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cv.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("method,fold,mean_test_logdensity\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn quadratic_baseline_recovers_the_square_term() {
    let (_, _, trace) = fitted(StructuralKind::Quadratic, 500, 3000, 8);
    let coefs: Vec<f64> = trace
        .draws
        .iter()
        .map(|s| match &s.blocks[1] {
            LatentBlock::Parametric(p) => p.coef[2],
            _ => unreachable!(),
        })
        .collect();
    let mean = coefs.iter().sum::<f64>() / coefs.len() as f64;
    assert!((3.5..=4.5).contains(&mean), "{mean}");
}

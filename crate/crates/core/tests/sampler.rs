use gpsem::graph::parse_model_spec;
use gpsem::kernel::KernelHyper;
use gpsem::model::{
    ln_normal, log_joint, make_synthetic_quadratic, LatentBlock, Model, Observed, PriorConfig,
    StructuralKind,
};
use gpsem::presets;
use gpsem::sampler::{initial_state, run_chain, Chain, SweepConfig, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic_setup(n: usize, kind: StructuralKind, m: usize) -> (Model, Observed) {
    let syn = make_synthetic_quadratic(n, 4);
    let obs = Observed::from_dataset(&syn.observed, &syn.graph).unwrap();
    let model = Model::new(syn.graph, kind, PriorConfig::for_data(&obs), m).unwrap();
    (model, obs)
}

fn short_config() -> SweepConfig {
    SweepConfig {
        iterations: 40,
        burn_in: 20,
        dense_iterations: 40,
        dense_burn_in: 20,
        ..Default::default()
    }
}

/// A chain advanced a few sweeps so its state is not the symmetric start.
fn warmed_chain<'a>(model: &'a Model, obs: &'a Observed, seed: u64) -> Chain<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = initial_state(model, obs, &mut rng, false).unwrap();
    let mut chain = Chain::new(model, obs, short_config(), init, rng).unwrap();
    for _ in 0..5 {
        chain.sweep().unwrap();
    }
    // moderate kernel so the oracle's dense factorizations are well conditioned
    for i in 0..model.n_latents() {
        if let Some(g) = chain.state.blocks[i].as_gp_mut() {
            g.hyper = KernelHyper::new(2.0, 0.8).unwrap();
        }
        chain.rebuild(i).unwrap();
    }
    chain
}

#[test]
fn latent_ratio_matches_log_joint_difference() {
    for kind in [
        StructuralKind::GpSparse,
        StructuralKind::GpDense,
        StructuralKind::Linear,
        StructuralKind::Quadratic,
    ] {
        for collapse in [true, false] {
            let (model, obs) = quadratic_setup(25, kind, 6);
            let mut chain = warmed_chain(&model, &obs, 9);
            chain.config.collapse_functions = collapse;
            let base = log_joint(&chain.state, &obs, &model).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..10 {
                let i = rng.random_range(0..2);
                let n = rng.random_range(0..25);
                let x_new = chain.state.latents[i][n] + 0.4 * rng.random::<f64>() - 0.2;
                let mut z = || rng.random::<f64>() - 0.5;
                let mv = chain.propose_latent(i, n, x_new, &mut z).unwrap().unwrap();
                let mut moved = chain.state.clone();
                moved.latents[i][n] = x_new;
                for &(c, f) in &mv.redraws {
                    moved.blocks[c].as_gp_mut().unwrap().f[n] = f;
                }
                assert_eq!(mv.redraws.is_empty(), !(collapse && kind.is_gp()));
                let oracle = log_joint(&moved, &obs, &model).unwrap() - base + mv.proposal_correction;
                assert!(
                    (mv.log_ratio - oracle).abs() < 1e-6 * (1.0 + oracle.abs()),
                    "{kind:?} collapse={collapse}: {} vs {oracle}",
                    mv.log_ratio
                );
            }
        }
    }
}

#[test]
fn pseudo_ratio_matches_log_joint_difference() {
    let (model, obs) = quadratic_setup(30, StructuralKind::GpSparse, 6);
    let chain = warmed_chain(&model, &obs, 2);
    let base = log_joint(&chain.state, &obs, &model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..20 {
        let d = rng.random_range(0..6);
        let g = chain.state.blocks[1].as_gp().unwrap();
        let point = vec![g.pseudo_inputs[d][0] + 0.3 * (rng.random::<f64>() - 0.5)];
        let Some(p) = chain.prepare_pseudo(1, d, point.clone()) else { continue };
        let f_new = p.cond_mean + 0.1 * (rng.random::<f64>() - 0.5);
        let Some(r) = chain.pseudo_log_ratio(1, &p, f_new) else { continue };
        let mut moved = chain.state.clone();
        if let LatentBlock::Gp(g) = &mut moved.blocks[1] {
            g.pseudo_inputs[d] = point;
            g.pseudo_f[d] = f_new;
        }
        let oracle = log_joint(&moved, &obs, &model).unwrap() - base
            - ln_normal(f_new, p.cond_mean, p.cond_var)
            + ln_normal(g.pseudo_f[d], p.old_cond_mean, p.old_cond_var);
        assert!((r - oracle).abs() < 1e-5 * (1.0 + oracle.abs()), "{r} vs {oracle}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn hyper_ratio_matches_log_joint_difference() {
    for kind in [StructuralKind::GpSparse, StructuralKind::GpDense] {
        let (model, obs) = quadratic_setup(20, kind, 5);
        let chain = warmed_chain(&model, &obs, 5);
        let base = log_joint(&chain.state, &obs, &model).unwrap();
        let old = chain.state.blocks[1].as_gp().unwrap().hyper;
        for (fa, fb) in [(0.95, 1.04), (1.08, 0.93)] {
            let hyper = KernelHyper::new(old.amplitude * fa, old.lengthscale * fb).unwrap();
            let p = chain.hyper_proposal(1, hyper).unwrap().unwrap();
            let mut moved = chain.state.clone();
            moved.blocks[1].as_gp_mut().unwrap().hyper = hyper;
            let hastings = (1.0 / fa as f64).ln() + (1.0 / fb as f64).ln();
            let oracle = log_joint(&moved, &obs, &model).unwrap() - base + hastings;
            assert!(
                (p.log_ratio - oracle).abs() < 1e-6 * (1.0 + oracle.abs()),
                "{kind:?}: {} vs {oracle}",
                p.log_ratio
            );
        }
    }
}

#[test]
fn caches_stay_consistent_through_sweeps() {
    for kind in [StructuralKind::GpSparse, StructuralKind::GpDense] {
        let (model, obs) = quadratic_setup(25, kind, 5);
        let mut chain = warmed_chain(&model, &obs, 8);
        for _ in 0..3 {
            chain.sweep().unwrap();
            let inputs = chain.state.parent_inputs(&model.layout, 1);
            let g = chain.state.blocks[1].as_gp().unwrap();
            if kind == StructuralKind::GpSparse {
                let c = chain.sparse_cache(1).unwrap();
                let (fresh, _) =
                    gpsem::sampler::SparseCache::build(g, &inputs, &model.priors.space_fill).unwrap();
                assert!((c.f_loglik(&g.f) - fresh.f_loglik(&g.f)).abs() < 1e-6);
                assert!((c.pseudo_f_logprior(&g.pseudo_f) - fresh.pseudo_f_logprior(&g.pseudo_f)).abs() < 1e-6);
            } else {
                let c = chain.dense_cache(1).unwrap();
                let fresh = gpsem::sampler::DenseCache::build(g, &inputs).unwrap();
                assert!((c.chol.lower() - fresh.chol.lower()).amax() < 1e-6);
                assert!((c.f_logprior(&g.f) - fresh.f_logprior(&g.f)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zero_steps_and_unit_alpha_freeze_moves() {
    let (model, obs) = quadratic_setup(15, StructuralKind::GpSparse, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let init = initial_state(&model, &obs, &mut rng, false).unwrap();
    let config = SweepConfig {
        rw_step_latent: 0.0,
        rw_step_pseudo: 0.0,
        hyper_alpha: 1.0,
        ..short_config()
    };
    let trace = run_chain(&model, &obs, &config, init.clone(), rng).unwrap();
    let last = trace.draws.last().unwrap();
    assert_eq!(last.latents, init.latents);
    let (g0, g1) = (init.blocks[1].as_gp().unwrap(), last.blocks[1].as_gp().unwrap());
    assert_eq!(g0.hyper, g1.hyper);
    assert_eq!(g0.pseudo_inputs, g1.pseudo_inputs);
}

#[test]
fn same_seed_same_trace_and_thinning() {
    let (model, obs) = quadratic_setup(15, StructuralKind::GpSparse, 4);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = initial_state(&model, &obs, &mut rng, true).unwrap();
        let config = SweepConfig { thinning: 3, ..short_config() };
        run_chain(&model, &obs, &config, init, rng).unwrap()
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.draws.len(), 20 / 3);
    assert_eq!(a.draws[0].iteration, 23);
    assert_ne!(a.draws, run(2).draws);
}

#[test]
fn trace_round_trips_through_disk() {
    let text = presets::QUADRATIC_MODEL;
    for kind in [StructuralKind::GpSparse, StructuralKind::Quadratic] {
        let syn = make_synthetic_quadratic(12, 1);
        let graph = parse_model_spec(text).unwrap();
        let obs = Observed::from_dataset(&syn.observed, &graph).unwrap();
        let model = Model::new(graph, kind, PriorConfig::for_data(&obs), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = initial_state(&model, &obs, &mut rng, false).unwrap();
        let mut trace = run_chain(&model, &obs, &short_config(), init, rng).unwrap();
        trace.seed = Some(4);
        let dir = tempfile::tempdir().unwrap();
        trace.save(dir.path()).unwrap();
        let back = Trace::load(dir.path()).unwrap();
        assert_eq!(back.graph, trace.graph);
        assert_eq!(back.draws, trace.draws);
        assert_eq!(back.acceptance, trace.acceptance);
        assert_eq!(back.config, trace.config);
        assert_eq!(back.latent_steps, trace.latent_steps);
        assert_eq!(back.seed, Some(4));
    }
}

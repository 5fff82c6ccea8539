//! Acceptance suite. Each test prints one `[PASS]` or `[FAIL]` line and then
//! asserts. Run with `--nocapture` to see the lines.

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use datadyn::data::{generate_corpus, make_validation, DomainSpec, ValidationMode};
use datadyn::io::{metrics_digest, parse_config_str, read_metrics, save_metrics};
use datadyn::mixers::{doremi_update, odm_update, DoremiParams, OdmParams, OdmState};
use datadyn::model::train_step;
use datadyn::selectors::{first_order_val_change, score_tsds, val_loss, EmbeddedSet, TsdsParams};
use datadyn::trainers::{run_mix, run_select, run_static, run_weight};
use datadyn::weighters::{compute_weights, WeightStrategy};
use datadyn::{
    Arch, ComponentParams, ComponentRegistry, Corpus, MixtureWeights, ModelConfig, ModelState,
    OptimizerState, RunConfig, Sample, Schedule, TrainType,
};
use datadyn_cli::exit_code;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] criterion {n:>2} {name}: {detail} ({:.2}s)",
        elapsed.as_secs_f64()
    );
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn corpus_of(specs: &[DomainSpec], proportions: &[f64], n: usize, seed: u64) -> Corpus {
    generate_corpus(
        specs,
        &MixtureWeights::new(proportions.to_vec()).unwrap(),
        n,
        seed,
    )
    .unwrap()
}

fn presets(k: usize, vocab: usize, seed: u64) -> Vec<DomainSpec> {
    let names = ["web", "code", "math", "books", "wiki"];
    (0..k)
        .map(|i| DomainSpec::preset(names[i], i, k, vocab, seed))
        .collect()
}

fn base_config(seed: u64, max_steps: usize) -> RunConfig {
    RunConfig {
        seed,
        max_steps,
        eval_interval: 100,
        ..RunConfig::default()
    }
}

#[test]
fn c01_doremi_update_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=7);
        let alpha = random_simplex(&mut rng, k);
        let lambda: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..5.0)).collect();
        let p = DoremiParams {
            eta: rng.gen_range(0.01..2.0),
            epsilon: rng.gen_range(0.0..0.5),
        };
        let got = doremi_update(&MixtureWeights::new(alpha.clone()).unwrap(), &lambda, &p).unwrap();
        let mut u = Vec::with_capacity(k);
        let mut total = 0.0;
        for i in 0..k {
            let x = alpha[i] * (p.eta * lambda[i]).exp();
            u.push(x);
            total += x;
        }
        for i in 0..k {
            let want = (1.0 - p.epsilon) * (u[i] / total) + p.epsilon / k as f64;
            worst = worst.max((got.as_slice()[i] - want).abs());
        }
    }
    let worked = doremi_update(
        &MixtureWeights::uniform(2),
        &[1.0, 0.0],
        &DoremiParams {
            eta: 0.1,
            epsilon: 0.01,
        },
    )
    .unwrap();
    let w = worked.as_slice();
    let worked_ok = (w[0] - 0.52473).abs() <= 1e-5 && (w[1] - 0.47527).abs() <= 1e-5;
    let elapsed = t.elapsed();
    let pass = worst <= 1e-12 && worked_ok && elapsed < Duration::from_secs(1);
    report(
        1,
        "DoReMi update oracle",
        pass,
        elapsed,
        &format!(
            "max |diff| {worst:.2e} over 1000 instances, worked case ({:.5}, {:.5})",
            w[0], w[1]
        ),
    );
    assert!(pass);
}

#[test]
fn c02_odm_update_oracle_and_floor() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_oracle = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut floor_ok = true;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=7);
        let p = OdmParams {
            ema_decay: rng.gen_range(0.0..0.99),
            reward_scale: rng.gen_range(0.5..20.0),
            eps_min: rng.gen_range(0.001..0.9 / k as f64),
            clip_threshold: -10.0,
        };
        let init = random_simplex(&mut rng, k);
        let mut state = OdmState::new(&MixtureWeights::new(init.clone()).unwrap()).unwrap();
        let mut w = init.clone();
        let mut ema: Vec<Option<f64>> = vec![None; k];
        let mut policy = init;
        for _ in 0..rng.gen_range(1..30) {
            let obs: Vec<Option<f64>> = (0..k)
                .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0.0..8.0)))
                .collect();
            state = odm_update(&state, &obs, &p).unwrap();
            for i in 0..k {
                if let Some(l) = obs[i] {
                    let e = match ema[i] {
                        Some(prev) => p.ema_decay * prev + (1.0 - p.ema_decay) * l,
                        None => l,
                    };
                    ema[i] = Some(e);
                    let r = e.max(p.clip_threshold) / p.reward_scale;
                    w[i] *= (p.eps_min * (r / policy[i]) / k as f64).exp();
                }
            }
            let total: f64 = w.iter().sum();
            policy = w
                .iter()
                .map(|x| (1.0 - k as f64 * p.eps_min) * x / total + p.eps_min)
                .collect();
            let got = state.policy.as_slice();
            for i in 0..k {
                worst_oracle = worst_oracle.max((got[i] - policy[i]).abs());
                floor_ok &= got[i] >= p.eps_min;
            }
            worst_sum = worst_sum.max((got.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let p = OdmParams {
        ema_decay: 0.9,
        reward_scale: 1.0,
        eps_min: 0.1,
        clip_threshold: -10.0,
    };
    let s = OdmState::new(&MixtureWeights::uniform(2)).unwrap();
    let s = odm_update(&s, &[Some(1.0), Some(0.5)], &p).unwrap();
    let w = s.policy.as_slice();
    let worked_ok = (w[0] - 0.51).abs() <= 1e-5 && (w[1] - 0.49).abs() <= 1e-5;
    let elapsed = t.elapsed();
    let pass = worst_oracle <= 1e-12
        && worst_sum <= 1e-9
        && floor_ok
        && worked_ok
        && elapsed < Duration::from_secs(1);
    report(
        2,
        "ODM update oracle and floor",
        pass,
        elapsed,
        &format!(
            "oracle diff {worst_oracle:.2e}, simplex drift {worst_sum:.2e}, floor held {floor_ok}, worked case ({:.5}, {:.5})",
            w[0], w[1]
        ),
    );
    assert!(pass);
}

#[test]
fn c03_gradient_matches_finite_differences() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let h = 1e-5;
    let mut bad = 0usize;
    let mut checked = 0usize;
    let mut worst_ratio = 0.0f64;
    for pair in 0..50 {
        let arch = Arch::new(
            rng.gen_range(4..20),
            rng.gen_range(2..6),
            rng.gen_range(2..8),
        );
        let model = ModelState::init(arch, rng.gen_range(0.2..1.5), 1000 + pair);
        let len = rng.gen_range(2..12);
        let tokens = (0..len)
            .map(|_| rng.gen_range(0..arch.vocab_size as u32))
            .collect();
        let sample = Sample::new(pair, 0, tokens);
        let g = model.per_sample_gradient(&sample).unwrap();
        let mut params = model.params.clone();
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let up = ModelState::from_params(arch, params.clone())
                .unwrap()
                .per_sample_loss(&sample)
                .unwrap();
            params[i] = orig - h;
            let down = ModelState::from_params(arch, params.clone())
                .unwrap()
                .per_sample_loss(&sample)
                .unwrap();
            params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = g.as_slice()[i];
            let tol = f64::max(1e-6, 1e-4 * a.abs());
            let err = (a - fd).abs();
            worst_ratio = worst_ratio.max(err / tol);
            if err > tol {
                bad += 1;
            }
            checked += 1;
        }
    }
    let elapsed = t.elapsed();
    let pass = bad == 0 && elapsed < Duration::from_secs(30);
    report(
        3,
        "gradient vs central differences",
        pass,
        elapsed,
        &format!("{bad} of {checked} coordinates outside tolerance, worst error/tolerance {worst_ratio:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c04_influence_first_order_prediction() {
    let t = Instant::now();
    let specs = presets(3, 64, 4);
    let corpus = corpus_of(&specs, &[0.4, 0.3, 0.3], 600, 4);
    let val = make_validation(&specs, &corpus, &ValidationMode::InDistribution, 60, 4).unwrap();
    let warm = run_static(&base_config(4, 100), &corpus, &val).unwrap();
    let model = warm.model;
    let before = val_loss(&model, val.samples()).unwrap();
    let lr = 1e-4;
    let mut good = 0;
    let mut errors = Vec::new();
    for s in corpus.samples().iter().step_by(6).take(100) {
        let predicted = first_order_val_change(&model, s, val.samples(), lr).unwrap();
        let mut stepped = model.clone();
        let mut opt = OptimizerState::sgd(lr);
        train_step(&mut stepped, &mut opt, &[s], &[1.0]).unwrap();
        let actual = val_loss(&stepped, val.samples()).unwrap() - before;
        let rel = (predicted - actual).abs() / actual.abs();
        errors.push(rel);
        if rel <= 0.05 {
            good += 1;
        }
    }
    errors.sort_by(f64::total_cmp);
    let elapsed = t.elapsed();
    let pass = good >= 95 && elapsed < Duration::from_secs(60);
    report(
        4,
        "influence first-order check",
        pass,
        elapsed,
        &format!(
            "{good}/100 within 5% (median rel err {:.2e}, max {:.2e})",
            errors[50], errors[99]
        ),
    );
    assert!(pass);
}

fn brute_force_tsds(pool: &[Vec<f64>], val: &[Vec<f64>], p: &TsdsParams) -> Vec<f64> {
    let kernel = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (2.0 * p.sigma * p.sigma)).exp()
    };
    (0..pool.len())
        .map(|i| {
            let mass: f64 = val.iter().map(|q| kernel(&pool[i], q)).sum();
            if mass == 0.0 {
                return 0.0;
            }
            let density = (0..pool.len())
                .filter(|&j| j != i)
                .map(|j| kernel(&pool[i], &pool[j]))
                .sum::<f64>()
                / (pool.len() - 1) as f64;
            p.tradeoff_alpha * mass / (1.0 + p.c * density) + (1.0 - p.tradeoff_alpha) * mass
        })
        .collect()
}

#[test]
fn c05_tsds_matches_brute_force() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    let sizes = [2usize, 3, 17, 120, 333, 500];
    for &n in &sizes {
        let dim = rng.gen_range(2..9);
        let mut point = |spread: f64| -> Vec<f64> {
            (0..dim).map(|_| rng.gen_range(-spread..spread)).collect()
        };
        let pool: Vec<Vec<f64>> = (0..n).map(|_| point(1.0)).collect();
        let val: Vec<Vec<f64>> = (0..40).map(|_| point(1.2)).collect();
        let p = TsdsParams {
            max_k: n,
            kde_k: n - 1,
            sigma: 0.75,
            tradeoff_alpha: 0.6,
            c: 5.0,
        };
        let embed = |v: &[Vec<f64>], offset: u64| {
            EmbeddedSet::new(
                (0..v.len() as u64).map(|i| i * 3 + offset).collect(),
                v.iter()
                    .map(|x| datadyn::model::EmbeddingVector::new(x.clone()))
                    .collect(),
            )
            .unwrap()
        };
        let got = score_tsds(&embed(&pool, 0), &embed(&val, 1_000_000), &p).unwrap();
        let want = brute_force_tsds(&pool, &val, &p);
        for (g, w) in got.scores.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let elapsed = t.elapsed();
    let pass = worst <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        5,
        "TSDS KDE oracle",
        pass,
        elapsed,
        &format!("max |diff| {worst:.2e} over pools of {sizes:?}"),
    );
    assert!(pass);
}

fn small_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        embed_dim: 4,
        hidden_dim: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn c06_schedule_contract() {
    let t = Instant::now();
    let reg = ComponentRegistry::with_builtins();
    let specs = presets(2, 32, 6);
    let corpus = corpus_of(&specs, &[0.5, 0.5], 200, 6);
    let val = make_validation(&specs, &corpus, &ValidationMode::InDistribution, 20, 6).unwrap();
    let mut cfg = base_config(6, 1600);
    cfg.model = small_model();
    cfg.optim.batch_size = 4;
    cfg.eval_interval = 400;

    let want_long: Vec<usize> = (0..30).map(|i| 100 + 50 * i).collect();
    let mut results = Vec::new();
    for (tt, name) in [
        (TrainType::DynamicSelect, "random"),
        (TrainType::DynamicMix, "odm"),
    ] {
        let mut c = cfg.clone();
        c.train_type = tt;
        c.component_name = name.into();
        c.schedule = Schedule::new(100, 50, 30).unwrap();
        let long = if tt == TrainType::DynamicSelect {
            run_select(&c, &corpus, &val, &reg)
        } else {
            run_mix(&c, &corpus, &val, &reg)
        }
        .unwrap();
        c.schedule = Schedule::new(100, 100, 1).unwrap();
        let once = if tt == TrainType::DynamicSelect {
            run_select(&c, &corpus, &val, &reg)
        } else {
            run_mix(&c, &corpus, &val, &reg)
        }
        .unwrap();
        results.push((name, long.invocations, once.invocations));
    }
    let pass = results
        .iter()
        .all(|(_, long, once)| long == &want_long && once == &[100]);
    let detail = results
        .iter()
        .map(|(n, long, once)| {
            format!(
                "{n}: {} calls at {}..{}, then {:?}",
                long.len(),
                long.first().unwrap_or(&0),
                long.last().unwrap_or(&0),
                once
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(6, "schedule contract", pass, t.elapsed(), &detail);
    assert!(pass);
}

#[test]
fn c07_baseline_collapse() {
    let t = Instant::now();
    let reg = ComponentRegistry::with_builtins();
    let specs = presets(3, 64, 7);
    let corpus = corpus_of(&specs, &[0.5, 0.3, 0.2], 900, 7);
    let val = make_validation(&specs, &corpus, &ValidationMode::InDistribution, 90, 7).unwrap();
    let cfg = base_config(7, 2000);
    let baseline = metrics_digest(&run_static(&cfg, &corpus, &val).unwrap().metrics);

    let mut select_all = cfg.clone();
    select_all.train_type = TrainType::DynamicSelect;
    select_all.component_name = "loss".into();
    select_all.schedule = Schedule::new(100, 50, 30).unwrap();
    select_all.component_params = ComponentParams::new().with_f64("ratio", 1.0);
    let a = metrics_digest(
        &run_select(&select_all, &corpus, &val, &reg)
            .unwrap()
            .metrics,
    );

    let mut uniform = cfg.clone();
    uniform.train_type = TrainType::DynamicWeight;
    uniform.component_name = "loss".into();
    uniform.schedule = Schedule::new(0, 1, 2000).unwrap();
    uniform.component_params = ComponentParams::new().with_str("strategy", "uniform");
    let b = metrics_digest(&run_weight(&uniform, &corpus, &val, &reg).unwrap().metrics);

    let mut fixed = cfg.clone();
    fixed.train_type = TrainType::DynamicMix;
    fixed.component_name = "static".into();
    fixed.schedule = Schedule::new(100, 100, 19).unwrap();
    let c = metrics_digest(&run_mix(&fixed, &corpus, &val, &reg).unwrap().metrics);

    let elapsed = t.elapsed();
    let pass =
        a == baseline && b == baseline && c == baseline && elapsed < Duration::from_secs(120);
    report(
        7,
        "baseline collapse",
        pass,
        elapsed,
        &format!("static {baseline:016x}, select-all {a:016x}, uniform-weight {b:016x}, static-mixer {c:016x}"),
    );
    assert!(pass);
}

/// Signal-domain share of the subset chosen at the second invocation.
fn planted_share(selector: &str, seed: u64) -> f64 {
    let specs = vec![
        DomainSpec::preset("signal", 0, 1, 64, seed),
        DomainSpec::noise("noise", 64),
    ];
    let corpus = corpus_of(&specs, &[0.5, 0.5], 2000, seed);
    let val =
        make_validation(&specs, &corpus, &ValidationMode::SingleDomain(0), 100, seed).unwrap();
    let mut cfg = base_config(seed, 150);
    cfg.train_type = TrainType::DynamicSelect;
    cfg.component_name = selector.into();
    cfg.schedule = Schedule::new(100, 50, 30).unwrap();
    cfg.component_params = ComponentParams::new().with_f64("ratio", 0.5);
    let out = run_select(&cfg, &corpus, &val, &ComponentRegistry::with_builtins()).unwrap();
    let chosen = &out.selections[1].ids;
    let signal = chosen
        .iter()
        .filter(|id| corpus.get(**id).unwrap().domain == 0)
        .count();
    signal as f64 / chosen.len() as f64
}

#[test]
fn c08_planted_selection_recovery() {
    let t = Instant::now();
    let mut passed = 0;
    let mut shares = Vec::new();
    for seed in 0..10 {
        let less = planted_share("less", seed);
        let random = planted_share("random", seed);
        if less >= 0.8 && (random - 0.5).abs() <= 0.05 {
            passed += 1;
        }
        shares.push(format!("{less:.2}/{random:.2}"));
    }
    let elapsed = t.elapsed();
    let pass = passed >= 9 && elapsed < Duration::from_secs(300);
    report(
        8,
        "planted selection recovery",
        pass,
        elapsed,
        &format!(
            "{passed}/10 seeds pass; less/random signal share per seed {}",
            shares.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn c09_dynamic_mixtures_beat_static_on_skewed_target() {
    let t = Instant::now();
    let reg = ComponentRegistry::with_builtins();
    let mut odm_wins = 0;
    let mut doremi_wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10 {
        let specs = presets(3, 64, 900 + seed);
        let corpus = corpus_of(&specs, &[0.7, 0.2, 0.1], 1500, 900 + seed);
        let val = make_validation(
            &specs,
            &corpus,
            &ValidationMode::Skewed(vec![0.1, 0.3, 0.6]),
            300,
            seed,
        )
        .unwrap();
        let cfg = base_config(seed, 1000);
        let last = |o: datadyn::RunOutput| o.final_metrics().unwrap().overall_val_loss;
        let fixed = last(run_static(&cfg, &corpus, &val).unwrap());

        let mut odm = cfg.clone();
        odm.train_type = TrainType::DynamicMix;
        odm.component_name = "odm".into();
        odm.schedule = Schedule::new(0, 10, 100).unwrap();
        odm.component_params = ComponentParams::new()
            .with_f64("reward_scale", 1.0)
            .with_f64("eps_min", 0.05);
        let o = last(run_mix(&odm, &corpus, &val, &reg).unwrap());

        let mut doremi = cfg.clone();
        doremi.train_type = TrainType::DynamicMix;
        doremi.component_name = "doremi".into();
        doremi.schedule = Schedule::new(0, 10, 100).unwrap();
        let d = last(run_mix(&doremi, &corpus, &val, &reg).unwrap());

        odm_wins += usize::from(o <= fixed);
        doremi_wins += usize::from(d <= fixed);
        rows.push(format!("{fixed:.3}/{o:.3}/{d:.3}"));
    }
    let elapsed = t.elapsed();
    let pass = odm_wins >= 8 && doremi_wins >= 8 && elapsed < Duration::from_secs(900);
    report(
        9,
        "dynamic mixtures vs static on skewed target",
        pass,
        elapsed,
        &format!(
            "ODM wins {odm_wins}/10, DoReMi wins {doremi_wins}/10; static/odm/doremi loss per seed {}",
            rows.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn c10_odm_upweights_irreducible_domain() {
    let t = Instant::now();
    let reg = ComponentRegistry::with_builtins();
    let mut ok = 0;
    let mut masses = Vec::new();
    for seed in 0..10 {
        let mut specs = presets(2, 64, 1000 + seed);
        specs.push(DomainSpec::noise("noise", 64));
        let corpus = corpus_of(&specs, &[1.0 / 3.0; 3], 900, 1000 + seed);
        let val =
            make_validation(&specs, &corpus, &ValidationMode::InDistribution, 90, seed).unwrap();
        let mut cfg = base_config(seed, 500);
        cfg.train_type = TrainType::DynamicMix;
        cfg.component_name = "odm".into();
        cfg.schedule = Schedule::new(100, 20, 20).unwrap();
        cfg.init_mixture_proportions = Some(MixtureWeights::uniform(3));
        let out = run_mix(&cfg, &corpus, &val, &reg).unwrap();
        let mass = out.trajectory[19].weights[2];
        if out.trajectory.len() == 20 && mass > 1.0 / 3.0 {
            ok += 1;
        }
        masses.push(format!("{mass:.4}"));
    }
    let elapsed = t.elapsed();
    let pass = ok == 10 && elapsed < Duration::from_secs(120);
    report(
        10,
        "ODM upweights irreducible domain",
        pass,
        elapsed,
        &format!(
            "{ok}/10 seeds above 1/3; noise mass after 20 updates {}",
            masses.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn c11_weighter_contract() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for strategy in ["uniform", "linear", "softmax"] {
        for _ in 0..10_000 {
            let len = rng.gen_range(1..64);
            let losses: Vec<f64> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        0.0
                    } else {
                        rng.gen_range(0.0..10.0)
                    }
                })
                .collect();
            let strat = match strategy {
                "uniform" => WeightStrategy::Uniform,
                "linear" => WeightStrategy::Linear,
                _ => WeightStrategy::Softmax {
                    temperature: rng.gen_range(0.05..5.0),
                },
            };
            let w = compute_weights(&losses, strat).unwrap();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            worst = worst.max((mean - 1.0).abs());
            if strategy == "softmax" {
                for i in 0..len {
                    for j in 0..len {
                        if losses[i] < losses[j] && w[i] > w[j]
                            || losses[i] == losses[j] && w[i] != w[j]
                        {
                            monotone = false;
                        }
                    }
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = worst <= 1e-12 && monotone && elapsed < Duration::from_secs(1);
    report(
        11,
        "weighter contract",
        pass,
        elapsed,
        &format!("max |mean - 1| {worst:.2e} over 30000 vectors, softmax monotone {monotone}"),
    );
    assert!(pass);
}

const SELECT_CONFIG: &str = "\
model:
  vocab_size: 32
  embed_dim: 4
  hidden_dim: 8
train:
  max_steps: 20
  eval_interval: 10
  batch_size: 4
data:
  generate:
    domains: [web, code]
    proportions: [0.5, 0.5]
    n: 60
    seed: 1
dataflex:
  train_type: dynamic_select
  component_name: less
  warmup_step: 100
  update_step: 50
  update_times: 30
";

const MIX_CONFIG: &str = "\
model:
  vocab_size: 32
  embed_dim: 4
  hidden_dim: 8
train:
  max_steps: 20
  eval_interval: 10
  batch_size: 4
data:
  generate:
    domains: [web, code]
    proportions: [0.5, 0.5]
    n: 60
    seed: 1
dataflex:
  train_type: dynamic_mix
  component_name: doremi
  init_mixture_proportions: [0.3, 0.7]
";

fn cli(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dataflex-cli"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn c12_config_and_cli_conformance() {
    let t = Instant::now();
    let mut failures = Vec::new();

    let sel = parse_config_str(SELECT_CONFIG).unwrap();
    if !(sel.train_type == TrainType::DynamicSelect
        && sel.component_name == "less"
        && sel.schedule == Schedule::new(100, 50, 30).unwrap()
        && sel.init_mixture_proportions.is_none()
        && sel.component_params.is_empty())
    {
        failures.push("select config fields".to_string());
    }
    let mix = parse_config_str(MIX_CONFIG).unwrap();
    if !(mix.train_type == TrainType::DynamicMix
        && mix.component_name == "doremi"
        && mix.init_mixture_proportions == Some(MixtureWeights::new(vec![0.3, 0.7]).unwrap())
        && mix.model.vocab_size == 32
        && mix.max_steps == 20)
    {
        failures.push("mix config fields".to_string());
    }
    if sel.model != mix.model || sel.optim != mix.optim || sel.data != mix.data {
        failures.push("configs differ outside dataflex".to_string());
    }

    let dir = tempfile::tempdir().unwrap();
    let malformed: [(&str, &str, datadyn::Error); 5] = [
        (
            "  warmup_steps: 3\n",
            "unknown key",
            datadyn::Error::UnknownKey {
                key: String::new(),
                line: 0,
            },
        ),
        (
            "  train_type: dynamic_dance\n",
            "unknown train_type",
            datadyn::Error::UnknownTrainType(String::new()),
        ),
        (
            "  init_mixture_proportions: [0.5, 0.6]\n",
            "off-simplex proportions",
            datadyn::Error::BadSimplex(String::new()),
        ),
        (
            "  update_step: 0\n  update_times: 2\n",
            "bad schedule",
            datadyn::Error::BadSchedule {
                update_step: 0,
                update_times: 2,
            },
        ),
        (
            "  component_name: nonesuch\n",
            "unknown component",
            datadyn::Error::UnknownComponent {
                kind: String::new(),
                name: String::new(),
            },
        ),
    ];
    let (code, help) = {
        let out = Command::new(env!("CARGO_BIN_EXE_dataflex-cli"))
            .arg("--help")
            .output()
            .unwrap();
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stdout).into_owned(),
        )
    };
    if code != 0 {
        failures.push(format!("--help exited {code}"));
    }
    for (i, (lines, what, variant)) in malformed.iter().enumerate() {
        let base = MIX_CONFIG.replace(
            "  component_name: doremi\n  init_mixture_proportions: [0.3, 0.7]\n",
            "",
        );
        let text = match *what {
            "unknown train_type" => base.replace("  train_type: dynamic_mix\n", lines),
            _ => format!("{base}{lines}"),
        };
        let path = dir.path().join(format!("bad{i}.yaml"));
        std::fs::write(&path, text).unwrap();
        let want = exit_code(variant);
        let (got, stderr) = cli(
            &["train", path.to_str().unwrap(), "--out-dir", "out"],
            dir.path(),
        );
        let documented = help
            .lines()
            .any(|l| l.trim_start().starts_with(&format!("{want} ")));
        if got != want as i32 || !documented || stderr.lines().count() != 1 {
            failures.push(format!(
                "{what}: exit {got}, want {want} (documented {documented}), stderr {stderr:?}"
            ));
        }
    }

    let good = dir.path().join("good.yaml");
    std::fs::write(
        &good,
        MIX_CONFIG.replace("component_name: doremi", "component_name: odm"),
    )
    .unwrap();
    let (code, stderr) = cli(
        &[
            "train",
            good.to_str().unwrap(),
            "--out-dir",
            "run",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    if code != 0 {
        failures.push(format!("good config exited {code}: {stderr}"));
    } else {
        let written = read_metrics(&dir.path().join("run/metrics.jsonl")).unwrap();
        let copy = dir.path().join("copy.jsonl");
        save_metrics(&copy, &written).unwrap();
        let again = read_metrics(&copy).unwrap();
        let mut cfg = parse_config_str(&std::fs::read_to_string(&good).unwrap()).unwrap();
        cfg.seed = 5;
        let (corpus, val) = datadyn_cli::load_data(&cfg).unwrap();
        let direct =
            datadyn::run(&cfg, &corpus, &val, &ComponentRegistry::with_builtins()).unwrap();
        if written != again
            || std::fs::read(&copy).unwrap()
                != std::fs::read(dir.path().join("run/metrics.jsonl")).unwrap()
            || metrics_digest(&written) != metrics_digest(&direct.metrics)
            || written.len() != 2
        {
            failures.push("metrics round trip".to_string());
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(1);
    let detail = if failures.is_empty() {
        "2 configs parse, 5 malformed configs exit with their documented codes, metrics round-trip"
            .to_string()
    } else {
        failures.join("; ")
    };
    report(12, "config and CLI conformance", pass, elapsed, &detail);
    assert!(pass);
}

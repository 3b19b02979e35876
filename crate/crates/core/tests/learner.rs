use hanger_core::expert::{scripted_demo, Dataset};
use hanger_core::learner::{
    draw_noise, Activation, Adam, DiffusionPolicy, Gradients, Mlp, NoiseSchedule, PolicyConfig, TrainConfig,
    Trainer, TrainingSet, CHUNK_DIM,
};
use hanger_core::sim::{observe, reset};
use hanger_core::{EpisodeType, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn small_cfg() -> SimConfig {
    SimConfig {
        scene_grid: 8,
        wrist_grid: 8,
        ..SimConfig::default()
    }
}

fn one_episode_set(cfg: &SimConfig, seed: u64) -> TrainingSet {
    let ep = scripted_demo(cfg, seed, EpisodeType::I, 0.0).unwrap();
    let ds = Dataset::from_episodes("one", None, vec![ep]).unwrap();
    TrainingSet::from_dataset(&ds, cfg, true).unwrap()
}

fn policy(cfg: &SimConfig, hidden: Vec<usize>, steps: usize, seed: u64) -> DiffusionPolicy<f64> {
    let pc = PolicyConfig {
        hidden,
        diffusion_steps: steps,
        seed,
        ..PolicyConfig::new(true)
    };
    DiffusionPolicy::new(pc, cfg).unwrap()
}

/// Straightforward triple loop over the stored weights.
fn handwritten_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (k, l) in net.layers.iter().enumerate() {
        let mut z = vec![0.0; l.outputs];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = l.b[j];
            for (i, ai) in a.iter().enumerate() {
                acc += ai * l.w[i * l.outputs + j];
            }
            *zj = acc;
        }
        if k + 1 < net.layers.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a
}

#[test]
fn forward_matches_handwritten_products() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for sizes in [[7usize, 13, 9, 4], [40, 33, 21, 64]] {
        let net = Mlp::random(&sizes, Activation::Relu, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = net.predict(&x).unwrap();
        let want = handwritten_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn linear_least_squares_gradient_is_closed_form() {
    // L = 0.5 |W^T x + b - y|^2 summed over samples; dL/dW = x r^T, dL/db = r
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let net = Mlp::random(&[5, 3], Activation::Identity, 1.0, &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut gw = vec![0.0; 15];
    let mut gb = vec![0.0; 3];
    for (x, y) in xs.iter().zip(&ys) {
        let (out, cache) = net.forward(x).unwrap();
        let r: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
        net.backward(&cache, &r, &mut grads).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                gw[i * 3 + j] += x[i] * r[j];
            }
        }
        for j in 0..3 {
            gb[j] += r[j];
        }
    }
    for (a, b) in grads.w[0].iter().zip(&gw).chain(grads.b[0].iter().zip(&gb)) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let net = Mlp::random(&[4, 8, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
    let (_, cache) = net.forward(&[0.1, -0.3, 0.7, 0.2]).unwrap();
    let mut g = Gradients::zeros_like(&net);
    net.backward(&cache, &[0.0, 0.0], &mut g).unwrap();
    assert!(g.w.iter().chain(&g.b).flatten().all(|v| *v == 0.0));
}

#[test]
fn adam_zero_gradient_and_constant_gradient() {
    let mut net = Mlp::<f64>::zeros(&[1, 1], Activation::Identity).unwrap();
    net.layers[0].w[0] = 0.25;
    let mut adam = Adam::with_defaults(&net);
    let g0 = Gradients::zeros_like(&net);
    adam.step(&mut net, &g0, 0.01).unwrap();
    assert_eq!(net.layers[0].w[0], 0.25);

    let mut g = Gradients::zeros_like(&net);
    g.w[0][0] = 0.3;
    let mut prev = net.layers[0].w[0];
    for _ in 0..1000 {
        adam.step(&mut net, &g, 0.001).unwrap();
        let now = net.layers[0].w[0];
        assert!(now < prev);
        prev = now;
    }
}

#[test]
fn q_sample_variance_matches_moments() {
    let sched = NoiseSchedule::<f64>::cosine(50).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let draws = 100_000;
    for t in [1, 10, 25, 50] {
        let ab = sched.alpha_bar(t);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            // x0 uniform on [-1, 1]: variance 1/3
            let x0 = [rng.random_range(-1.0..1.0)];
            let eps = [rng.sample::<f64, _>(StandardNormal)];
            let xt = sched.q_sample(&x0, t, &eps).unwrap()[0];
            sum += xt;
            sq += xt * xt;
        }
        let mean = sum / draws as f64;
        let var = sq / draws as f64 - mean * mean;
        let want = ab / 3.0 + (1.0 - ab);
        assert!((var - want).abs() <= 0.02 * want, "t={t}: {var} vs {want}");
    }
}

#[test]
fn untrained_loss_is_near_one() {
    let cfg = SimConfig::default();
    let set = one_episode_set(&cfg, 7);
    let p = DiffusionPolicy::<f64>::new(PolicyConfig::new(true), &cfg).unwrap();
    assert_eq!(p.obs_len, 2568);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut total = 0.0;
    for _ in 0..100 {
        let idx: Vec<usize> = (0..32).map(|_| rng.random_range(0..set.len())).collect();
        let batch = set.batch(&idx, &cfg).unwrap();
        let noise = draw_noise(32, p.schedule.steps, &mut rng);
        total += p.loss(&batch, &noise, None).unwrap();
    }
    let mean = total / 100.0;
    assert!((mean - 1.0).abs() <= 0.2, "initial loss {mean}");
}

fn overfit_losses(seed: u64) -> Vec<f64> {
    let cfg = small_cfg();
    let set = one_episode_set(&cfg, 5);
    let train = TrainConfig {
        steps: 2000,
        warmup: 100,
        lr: 1e-3,
        lr_final: 1e-4,
        seed,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(policy(&cfg, vec![256, 256], 50, seed), train).unwrap();
    let mut losses = Vec::new();
    tr.run(&set, &cfg, |_, l| {
        losses.push(l);
        Ok(())
    })
    .unwrap();
    losses
}

#[test]
fn overfits_a_single_episode() {
    let losses = overfit_losses(0);
    let head = losses[..50].iter().sum::<f64>() / 50.0;
    let tail = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < 0.05 * head, "initial {head}, final {tail}");
}

#[test]
fn training_is_deterministic() {
    let cfg = small_cfg();
    let set = one_episode_set(&cfg, 6);
    let run = || {
        let train = TrainConfig {
            steps: 30,
            warmup: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(policy(&cfg, vec![32, 32], 10, 3), train).unwrap();
        let mut losses = Vec::new();
        tr.run(&set, &cfg, |_, l| {
            losses.push(l.to_bits());
            Ok(())
        })
        .unwrap();
        (losses, tr.policy.net)
    };
    assert_eq!(run(), run());
}

#[test]
fn constant_targets_are_reproduced_by_sampling() {
    let cfg = small_cfg();
    let mut set = one_episode_set(&cfg, 8);
    let c: [f64; CHUNK_DIM] = std::array::from_fn(|k| 0.6 * ((k as f64) * 0.37).sin());
    for s in &mut set.samples {
        s.target = c;
    }
    let train = TrainConfig {
        steps: 1500,
        warmup: 50,
        lr: 1e-3,
        lr_final: 1e-4,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(policy(&cfg, vec![256, 256], 50, 1), train).unwrap();
    tr.run(&set, &cfg, |_, _| Ok(())).unwrap();
    let mut state = reset(&cfg, 12, EpisodeType::I);
    let obs = observe(&mut state, &cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut dev = 0.0;
    let chunks = 10;
    for _ in 0..chunks {
        let chunk = tr.policy.sample_chunk(&obs, &cfg, &mut rng).unwrap();
        assert_eq!(chunk.rows.len() * 4, CHUNK_DIM);
        dev += chunk.rows.iter().flatten().zip(&c).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    let mad = dev / (chunks * CHUNK_DIM) as f64;
    assert!(mad < 0.05, "mean abs deviation {mad}");
}

fn small_check_policy(seed: u64) -> (DiffusionPolicy<f64>, hanger_core::learner::TrainBatch, Vec<hanger_core::learner::NoiseDraw>) {
    let cfg = small_cfg();
    let set = one_episode_set(&cfg, 9);
    let p = policy(&cfg, vec![8, 8], 10, seed);
    assert!(p.net.param_count() <= 10_000);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..set.len())).collect();
    let batch = set.batch(&idx, &cfg).unwrap();
    let noise = draw_noise(4, p.schedule.steps, &mut rng);
    (p, batch, noise)
}

#[test]
fn policy_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (p, batch, noise) = small_check_policy(seed);
        let r = p.finite_diff_check(&batch, &noise, 200, seed, None).unwrap();
        assert!(r.coords >= 200);
        assert!(r.max_error <= 1e-5, "{r:?}");
        let bump = |g: &mut Gradients<f64>| g.scale(1.05);
        let r = p.finite_diff_check(&batch, &noise, 200, seed, Some(&bump)).unwrap();
        assert!(r.max_error > 1e-2, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batched_forward_matches_rows(seed in 0u64..1000, batch in 1usize..7) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let net = Mlp::<f64>::random(&[9, 17, 5], Activation::Relu, 1.0, &mut rng).unwrap();
        let xs: Vec<f64> = (0..9 * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (out, _) = net.forward_batch(&xs, batch).unwrap();
        for b in 0..batch {
            let single = net.predict(&xs[b * 9..(b + 1) * 9]).unwrap();
            for (x, y) in single.iter().zip(&out[b * 5..(b + 1) * 5]) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q_sample_is_affine(t in 1usize..=50, x in -1.0f64..1.0, e in -3.0f64..3.0) {
        let s = NoiseSchedule::<f64>::cosine(50).unwrap();
        let ab = s.alpha_bar(t);
        let xt = s.q_sample(&[x], t, &[e]).unwrap()[0];
        prop_assert!((xt - (ab.sqrt() * x + (1.0 - ab).sqrt() * e)).abs() < 1e-12);
    }
}

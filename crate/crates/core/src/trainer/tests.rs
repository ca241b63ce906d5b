use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::*;
use crate::experiments::MoGSpec;
use crate::losses::acgan_ce;

fn small(conditioning: Conditioning) -> RunConfig {
    RunConfig {
        batch_size: 16,
        total_iters: 4,
        n_dis: 2,
        log_interval: 2,
        eval_samples: 64,
        g_hidden_width: 8,
        g_hidden_layers: 2,
        d_hidden_width: 8,
        d_hidden_layers: 2,
        embed_dim: 4,
        ema_start: 2,
        conditioning,
        ..RunConfig::default()
    }
}

/// Always returns the same linearly separable batch.
struct Fixed {
    x: RealArray,
    y: Vec<usize>,
}

impl Fixed {
    fn new(scale: f64) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..16 {
            let k = i % 2;
            x.push(scale * (if k == 0 { -2.0 } else { 2.0 } + 0.1 * i as f64));
            y.push(k);
        }
        Self {
            x: RealArray::column(x).unwrap(),
            y,
        }
    }
}

impl Dataset for Fixed {
    fn dim(&self) -> usize {
        1
    }

    fn classes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, _rng: &mut ChaCha8Rng) -> Result<(RealArray, Vec<usize>)> {
        if n == self.y.len() {
            return Ok((self.x.clone(), self.y.clone()));
        }
        let idx: Vec<usize> = (0..n).map(|i| i % self.y.len()).collect();
        let x = idx.iter().map(|&i| self.x.data()[i]).collect();
        Ok((
            RealArray::column(x)?,
            idx.iter().map(|&i| self.y[i]).collect(),
        ))
    }
}

fn same_bits(a: &RealArray, b: &RealArray) -> bool {
    a.data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn zero_lambda_matches_pure_adversarial_step() {
    let spec = MoGSpec::overlapped();
    for cond in [Conditioning::D2dce, Conditioning::Acgan, Conditioning::TwoC] {
        let mut with = TrainState::new(
            RunConfig {
                lambda: 0.0,
                ..small(cond)
            },
            &spec,
        )
        .unwrap();
        let mut pure = TrainState::new(small(Conditioning::None), &spec).unwrap();
        let proxies_before = with
            .discriminator
            .params
            .get(with.discriminator.params.index_of("proxies").unwrap())
            .clone();
        train_step_discriminator(&mut with, &spec).unwrap();
        train_step_discriminator(&mut pure, &spec).unwrap();
        let (a, b) = (&with.discriminator.params, &pure.discriminator.params);
        let mut shared = 0;
        for i in 0..b.len() {
            let name = b.name(i);
            if name.starts_with("features") || name.starts_with("adv") {
                assert!(
                    same_bits(a.get(a.index_of(name).unwrap()), b.get(i)),
                    "{name}"
                );
                shared += 1;
            }
        }
        assert_eq!(shared, 6);
        let proxies_after = a.get(a.index_of("proxies").unwrap());
        assert!(same_bits(&proxies_before, proxies_after));
    }
}

#[test]
fn n_dis_discriminator_steps_per_generator_step() {
    let spec = MoGSpec::overlapped();
    let config = RunConfig {
        n_dis: 5,
        total_iters: 3,
        log_interval: 1,
        ..small(Conditioning::D2dce)
    };
    let (state, log) = run_training(config, &spec).unwrap();
    assert_eq!(state.iter, 3);
    assert_eq!(state.d_steps, 15);
    let steps: Vec<(usize, usize)> = log.iter().map(|r| (r.iter, r.d_steps)).collect();
    assert_eq!(steps, vec![(1, 5), (2, 10), (3, 15)]);
}

#[test]
fn second_identical_batch_has_lower_loss() {
    let data = Fixed::new(1.0);
    let config = RunConfig {
        lr_d: 1e-3,
        ..small(Conditioning::Acgan)
    };
    let mut state = TrainState::new(config, &data).unwrap();
    let frozen = state.clone();
    let first = train_step_discriminator(&mut state, &data).unwrap();
    let mut replay = frozen.clone();
    replay.discriminator = state.discriminator.clone();
    let second = train_step_discriminator(&mut replay, &data).unwrap();
    let lambda = frozen.config.lambda;
    let total = |s: &DStepStats| s.adv_loss + lambda * s.cond_loss;
    assert!(total(&second) < total(&first));
    assert!(second.cond_loss < first.cond_loss);
}

#[test]
fn discriminator_conditioning_uses_real_batch() {
    let spec = MoGSpec::overlapped();
    let mut state = TrainState::new(small(Conditioning::Acgan), &spec).unwrap();
    let mut rng = state.data_rng.clone();
    let (x, y) = spec.sample(16, &mut rng).unwrap();
    let (g, out) = state.discriminator.evaluate(&x, &y).unwrap();
    let (expected, _) = acgan_ce(g.value(out.class_logits.unwrap()), &y).unwrap();
    let stats = train_step_discriminator(&mut state, &spec).unwrap();
    assert_eq!(stats.cond_loss, expected);
}

#[test]
fn zero_iterations_give_empty_log() {
    let spec = MoGSpec::overlapped();
    let config = RunConfig {
        total_iters: 0,
        ..small(Conditioning::D2dce)
    };
    let (state, log) = run_training(config, &spec).unwrap();
    assert!(log.is_empty());
    assert_eq!((state.iter, state.d_steps), (0, 0));
}

#[test]
fn runs_are_bitwise_reproducible() {
    let spec = MoGSpec::overlapped();
    for cond in Conditioning::ALL {
        for tac in [false, true] {
            let config = RunConfig {
                tac_enabled: tac,
                mask_drop_p: 0.3,
                ..small(cond)
            };
            let (s1, a) = run_training(config.clone(), &spec).unwrap();
            let (s2, b) = run_training(config, &spec).unwrap();
            assert_eq!(a.len(), 2);
            for (ra, rb) in a.iter().zip(&b) {
                let bits = |r: &MetricsRow| r.values().map(f64::to_bits);
                assert_eq!(bits(ra), bits(rb));
                assert!(ra.values().iter().all(|v| v.is_finite()));
            }
            assert!(s1.generator.params.bitwise_eq(&s2.generator.params));
            assert!(s1.discriminator.params.bitwise_eq(&s2.discriminator.params));
        }
    }
}

#[test]
fn logging_does_not_perturb_training() {
    let spec = MoGSpec::overlapped();
    let config = RunConfig {
        total_iters: 6,
        log_interval: 1,
        ..small(Conditioning::D2dce)
    };
    let (dense, log) = run_training(config.clone(), &spec).unwrap();
    let (sparse, _) = run_training(
        RunConfig {
            log_interval: 5,
            ..config
        },
        &spec,
    )
    .unwrap();
    assert_eq!(log.len(), 6);
    assert!(dense.generator.params.bitwise_eq(&sparse.generator.params));
    assert!(dense
        .discriminator
        .params
        .bitwise_eq(&sparse.discriminator.params));
}

#[test]
fn ema_follows_schedule() {
    let spec = MoGSpec::overlapped();
    let config = RunConfig {
        ema_decay: 0.0,
        ..small(Conditioning::D2dce)
    };
    let (state, _) = run_training(config, &spec).unwrap();
    assert!(state
        .ema
        .as_ref()
        .unwrap()
        .bitwise_eq(&state.generator.params));

    let config = RunConfig {
        ema_decay: 1.0,
        ema_start: 1,
        ..small(Conditioning::D2dce)
    };
    let init = TrainState::new(config.clone(), &spec).unwrap();
    let (state, _) = run_training(config, &spec).unwrap();
    assert!(state
        .ema
        .as_ref()
        .unwrap()
        .bitwise_eq(&init.generator.params));
    assert!(!state.generator.params.bitwise_eq(&init.generator.params));
}

#[test]
fn embedding_gradient_stays_bounded_during_training() {
    let spec = MoGSpec::overlapped();
    let config = RunConfig {
        total_iters: 20,
        log_interval: 5,
        ..small(Conditioning::D2dce)
    };
    let bound = 3.0 / config.tau;
    let (_, log) = run_training(config, &spec).unwrap();
    assert_eq!(log.len(), 4);
    for row in &log {
        assert!(row.max_embedding_grad_norm > 0.0 && row.max_embedding_grad_norm <= bound);
        assert!((row.min_embedding_norm - 1.0).abs() <= 1e-9);
        assert!((row.max_embedding_norm - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn overflow_is_reported_as_divergence() {
    let spec = MoGSpec::overlapped();
    let mut state = TrainState::new(small(Conditioning::Acgan), &spec).unwrap();
    let params = &mut state.discriminator.params;
    let w = params.index_of("adv.weight").unwrap();
    let shape = params.get(w).shape().to_vec();
    params.set(w, RealArray::filled(&shape, f64::MAX));
    match train_step_discriminator(&mut state, &spec) {
        Err(Error::Diverged { iter, detail }) => {
            assert_eq!(iter, 0);
            assert!(detail.contains("non-finite"), "{detail}");
            assert!(detail.contains("mean|F(x)|"), "{detail}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(state.d_steps, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let spec = MoGSpec::overlapped();
    let base = small(Conditioning::D2dce);
    let bad = [
        RunConfig {
            n_dis: 0,
            ..base.clone()
        },
        RunConfig {
            lr_d: 0.0,
            ..base.clone()
        },
        RunConfig {
            beta2: 1.0,
            ..base.clone()
        },
        RunConfig {
            m_n: 0.99,
            ..base.clone()
        },
        RunConfig {
            mask_drop_p: 1.5,
            ..base.clone()
        },
        RunConfig {
            batch_size: 1,
            ..base.clone()
        },
    ];
    for config in bad {
        assert!(matches!(
            TrainState::new(config, &spec),
            Err(Error::InvalidParameter { .. })
        ));
    }
    assert_eq!("two_c".parse::<Conditioning>().unwrap(), Conditioning::TwoC);
    assert!("softmax".parse::<Conditioning>().is_err());
}

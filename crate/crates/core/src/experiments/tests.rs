use alloc::vec;

use super::*;

fn tiny() -> RunConfig {
    RunConfig {
        batch_size: 16,
        total_iters: 4,
        n_dis: 1,
        log_interval: 2,
        eval_samples: 32,
        g_hidden_width: 8,
        g_hidden_layers: 1,
        d_hidden_width: 8,
        d_hidden_layers: 1,
        embed_dim: 4,
        ..RunConfig::default()
    }
}

#[test]
fn zero_iterations_report_initial_distances() {
    let config = RunConfig {
        total_iters: 0,
        ..tiny()
    };
    let report = run_mog_experiment(Method::Acgan, &MoGSpec::overlapped(), &config, &[3]).unwrap();
    let cell = &report.cells[0];
    assert!(cell.curves.is_empty());
    assert!(cell.marginal_w1.unwrap() > 0.0);
    assert_eq!(cell.per_class_w1.len(), 3);
    assert!(cell.per_class_w1.iter().all(|&w| w >= 0.0));
    assert_eq!(report.seeds, vec![3]);
}

#[test]
fn unmasked_ablation_cell_matches_plain_run() {
    let spec = MoGSpec::overlapped();
    let plain = run_mog_experiment(Method::Reacgan, &spec, &tiny(), &[1, 2]).unwrap();
    let ablation = run_masking_ablation(&[0.0, 1.0], &spec, &tiny(), &[1, 2]).unwrap();
    assert_eq!(ablation.cells.len(), 4);
    for (a, b) in ablation.cells[..2].iter().zip(&plain.cells) {
        assert_eq!(a.curves, b.curves);
        assert_eq!(
            a.marginal_w1.unwrap().to_bits(),
            b.marginal_w1.unwrap().to_bits()
        );
        assert_eq!(a.per_class_w1, b.per_class_w1);
    }
    for cell in &ablation.cells[2..] {
        assert_eq!(cell.label, "p=1");
        assert!(cell.note.as_deref().unwrap().contains("positive term only"));
        assert!(cell.marginal_w1.is_some());
        assert!(cell.curves.iter().all(|r| r.d_cond_loss >= 0.0));
    }
    assert!(run_masking_ablation(&[1.5], &spec, &tiny(), &[1]).is_err());
}

#[test]
fn divergence_is_recorded_not_raised() {
    let spec = MoGSpec::from_1d(&[0.9 * f64::MAX, -0.9 * f64::MAX], &[1.0, 1.0]).unwrap();
    let report = run_mog_experiment(Method::Acgan, &spec, &tiny(), &[0]).unwrap();
    let cell = &report.cells[0];
    assert!(cell.diverged.as_deref().unwrap().contains("diverged"));
    assert!(cell.marginal_w1.is_none());
}

#[test]
fn instability_needs_many_classes() {
    let config = tiny();
    assert!(plan_instability(false, &MoGSpec::overlapped(), &config, &[0]).is_err());
    let ring = MoGSpec::ring(10, 3.0, 0.5).unwrap();
    let report = run_instability_experiment(true, &ring, &config, &[0]).unwrap();
    for row in &report.cells[0].curves {
        assert!((row.min_embedding_norm - 1.0).abs() <= 1e-9);
        assert!((row.max_embedding_norm - 1.0).abs() <= 1e-9);
    }
    let plan = plan_instability(false, &ring, &config, &[0, 1]).unwrap();
    assert!(plan
        .cells
        .iter()
        .all(|c| c.config.conditioning == Conditioning::Acgan));
}

#[test]
fn methods_and_medians() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("tac".parse::<Method>().is_err());
    let mut config = tiny();
    Method::ReacganTac.apply(&mut config);
    assert!(config.tac_enabled && config.conditioning == Conditioning::D2dce);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

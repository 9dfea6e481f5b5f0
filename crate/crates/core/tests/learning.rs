use fedcontract::config::ExperimentConfig;
use fedcontract::learning::{
    generate_client_dataset, local_train, run_scheme_comparison, server_test, CoverageSettings, ModelVector,
    SyntheticTask, TrainSettings,
};

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn calibration_preserves_target_order() {
    let task = SyntheticTask::new(2, 2, 100, 3).unwrap();
    let cov = CoverageSettings::default();
    let low = generate_client_dataset(&task, 0.3, 100, 4, &cov);
    let high = generate_client_dataset(&task, 0.8, 100, 4, &cov).unwrap();
    // A corner sub-cube cannot go much below the single-corner-point quality.
    let low_theta = match low {
        Ok(ds) => ds.measured_theta,
        Err(fedcontract::Error::Calibration { best, .. }) => best,
        Err(e) => panic!("{e}"),
    };
    assert!(low_theta < high.measured_theta);
}

#[test]
fn server_accuracy_tracks_coverage_at_equal_effort() {
    let (mut thetas, mut accs) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let task = SyntheticTask::new(2, 2, 1000, seed).unwrap();
        let init = ModelVector::for_task(&task).unwrap();
        for k in 0..10u64 {
            let target = 0.5 + 0.05 * k as f64;
            let ds =
                generate_client_dataset(&task, target, 100, seed * 100 + k, &CoverageSettings::default())
                    .unwrap();
            let model = local_train(
                &init,
                &ds.data,
                1.0,
                50,
                k,
                &TrainSettings {
                    learning_rate: 0.2,
                    batch_size: 16,
                },
            )
            .unwrap();
            thetas.push(ds.measured_theta);
            accs.push(server_test(&model, &task));
        }
    }
    let rho = spearman(&thetas, &accs);
    assert!(rho >= 0.5, "rank correlation {rho}");
}

#[test]
fn default_comparison_is_reproducible_for_one_seed() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json");
    let settings = ExperimentConfig::load(path)
        .unwrap()
        .comparison_settings(Some(4))
        .unwrap();
    let a = run_scheme_comparison(&settings).unwrap();
    let b = run_scheme_comparison(&settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2 * 3);
    for row in &a.rows {
        assert!((0.0..=1.0).contains(&row.accuracy));
        assert!(row.successes <= row.participants);
    }
}

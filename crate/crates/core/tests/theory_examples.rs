use tokenunify::theory_lab::{
    altopt_convergence_experiment, lad_scaling_experiment, AltOptConfig, LadLassoConfig,
};

fn lad_mean_error(sigma: f64, c0: f64, s: usize, seed: u64) -> f64 {
    let cfg = LadLassoConfig {
        n_grid: vec![800],
        p: 64,
        sigma,
        c0,
        s,
        trials: 20,
        seed,
        ..LadLassoConfig::default()
    };
    lad_scaling_experiment(&cfg).unwrap().measured["mean_error"][0]
}

/// At a fixed penalty the error is linear in the noise level. Scaling the
/// penalty with sigma as well adds a shrinkage bias of order lambda * sigma,
/// so the error then grows roughly quadratically.
#[test]
fn lad_error_versus_noise_level() {
    let one = lad_mean_error(1.0, 1.5, 4, 5);
    let same_lambda = lad_mean_error(2.0, 0.75, 4, 5) / one;
    assert!((same_lambda - 2.0).abs() <= 0.3, "error ratio {same_lambda}");
    let scaled_lambda = lad_mean_error(2.0, 1.5, 4, 5) / one;
    assert!(scaled_lambda > 3.0, "error ratio {scaled_lambda}");
}

#[test]
fn lad_zero_signal_beats_sparse_signal() {
    let (zero, two) = (lad_mean_error(1.0, 1.5, 0, 6), lad_mean_error(1.0, 1.5, 2, 6));
    assert!(zero < two, "{zero} vs {two}");
}

#[test]
fn altopt_rate_asymptote_grows_with_mode_noise() {
    let ratio_at = |sigma_mode2: f64| {
        let cfg = AltOptConfig {
            sigma_mode2,
            trials: 20,
            ..AltOptConfig::default()
        };
        *altopt_convergence_experiment(&cfg).unwrap().measured["rate_ratio"].last().unwrap()
    };
    let (low, high) = (ratio_at(1.0), ratio_at(4.0));
    assert!(high > low, "{low} vs {high}");
}

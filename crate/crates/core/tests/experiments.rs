use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgls_core::experiments::{
    build_geometry, build_model, build_registration_pair, make_observed_survey, smooth_random_field, source_delay,
    Scenario, ScenarioSpec,
};
use rgls_core::signal::ricker;
use rgls_core::wave::{stability_dt, AcquisitionGeometry, PmlConfig, ShotGeometry, SolverParams, VelocityModel};
use rgls_core::CaseId;

fn table_velocity(case: CaseId, x: f64, z: f64) -> f64 {
    let g = (-((x - 1250.0).powi(2) + (z - 1250.0).powi(2)) / 1e6).exp();
    match case {
        CaseId::H1 | CaseId::H2 => 5200.0 + 900.0 * g,
        CaseId::L1 | CaseId::L2 => 5500.0 - 900.0 * g,
        _ => 5000.0 + 900.0 * g,
    }
}

#[test]
fn lens_models_match_the_closed_form_at_full_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in [CaseId::H1, CaseId::L2] {
        let m = build_model(&ScenarioSpec::new(case, 1.0, 7)).unwrap();
        assert_eq!((m.nx, m.nz, m.dx), (501, 501, 5.0));
        for _ in 0..10 {
            let (ix, iz) = (rng.random_range(0..501), rng.random_range(0..501));
            let want = table_velocity(case, 5.0 * ix as f64, 5.0 * iz as f64);
            assert!((m.get(ix, iz) - want).abs() < 1e-9, "{case} at ({ix}, {iz})");
        }
    }
}

#[test]
fn random_model_is_lens_plus_field() {
    let spec = ScenarioSpec::new(CaseId::R3, 0.25, 11);
    let m = build_model(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let field = smooth_random_field(m.nx, m.nz, spec.noise_kernel_cells, &mut rng);
    let scaled = |v: f64| v * 0.25;
    for (ix, iz) in [(0, 0), (63, 63), (100, 20)] {
        let g = (-((m.x(ix) - scaled(1250.0)).powi(2) + (m.z(iz) - scaled(1250.0)).powi(2)) / (1e6 * 0.0625)).exp();
        let want = 5000.0 + 900.0 * g + spec.noise_std * field[m.index(ix, iz)];
        assert!((m.get(ix, iz) - want).abs() < 1e-9);
    }
    assert_eq!(build_model(&spec).unwrap(), m);
    assert_ne!(build_model(&ScenarioSpec::new(CaseId::R3, 0.25, 12)).unwrap(), m);
}

#[test]
fn noise_field_statistics() {
    let (n, kernel) = (260, 10.0);
    let margin = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = smooth_random_field(n, n, kernel, &mut rng);
    let interior: Vec<(usize, usize)> = (margin..n - margin)
        .flat_map(|ix| (margin..n - margin).map(move |iz| (ix, iz)))
        .collect();
    let count = interior.len() as f64;
    let at = |ix: usize, iz: usize| f[ix * n + iz];
    let mean = interior.iter().map(|&(i, j)| at(i, j)).sum::<f64>() / count;
    let var = interior.iter().map(|&(i, j)| (at(i, j) - mean).powi(2)).sum::<f64>() / count;
    // Unit-variance field with covariance exp(−r²/4σ²): the sample mean has
    // variance Σ C / N = 4πσ²/N.
    let mean_std = (4.0 * std::f64::consts::PI * kernel * kernel / count).sqrt();
    assert!(mean.abs() < 3.0 * mean_std, "mean {mean}, bound {}", 3.0 * mean_std);
    assert!((var - 1.0).abs() < 0.25, "variance {var}");

    // Correlation length: the lag where the autocorrelation falls to
    // exp(−1/4), which is σ for the covariance above.
    let corr = |lag: usize| {
        let s: f64 = interior.iter().map(|&(i, j)| (at(i, j) - mean) * (at(i + lag, j) - mean)).sum();
        s / count / var
    };
    let target = (-0.25f64).exp();
    let mut prev = 1.0;
    let mut length = f64::NAN;
    for lag in 1..40 {
        let c = corr(lag);
        if c <= target {
            length = (lag - 1) as f64 + (prev - target) / (prev - c);
            break;
        }
        prev = c;
    }
    assert!((length - kernel).abs() <= 0.2 * kernel, "correlation length {length}");
}

#[test]
fn full_scale_geometry_counts_and_positions() {
    let h1 = build_geometry(CaseId::H1, 1.0).unwrap();
    assert_eq!(h1.n_shots(), 49);
    for shot in &h1.shots {
        assert_eq!(shot.source.0, 10.0);
        assert_eq!(shot.receivers.len(), 499);
        assert!(shot.receivers.iter().all(|r| r.0 == 2490.0));
    }
    assert_eq!(h1.shots[0].source.1, 25.0);
    assert_eq!(h1.shots[48].source.1, 2475.0);
    assert_eq!(h1.shots[0].receivers[0].1, 5.0);
    assert_eq!(h1.shots[0].receivers[498].1, 2495.0);

    let h2 = build_geometry(CaseId::H2, 1.0).unwrap();
    assert_eq!(h2.n_shots(), 196);
    for shot in &h2.shots {
        assert_eq!(shot.receivers.len(), 750);
        // No receiver on the source's own side.
        let (sx, sz) = shot.source;
        assert!(shot.receivers.iter().all(|r| !(r.0 == sx && sx.min(2500.0 - sx) == 10.0)
            && !(r.1 == sz && sz.min(2500.0 - sz) == 10.0)));
    }
}

#[test]
fn desk_geometry_is_the_full_layout_scaled() {
    let full = build_geometry(CaseId::H1, 1.0).unwrap();
    let desk = build_geometry(CaseId::H1, 0.25).unwrap();
    assert_eq!(desk.n_shots(), 13);
    assert_eq!(desk.shots[0].receivers.len(), 125);
    assert_eq!(desk.shots[0].source, (2.5, 6.25));
    assert_eq!(desk.shots[12].source.1, 0.25 * full.shots[48].source.1);
    assert_eq!(desk.shots[0].receivers[124], (622.5, 623.75));

    let h2 = build_geometry(CaseId::H2, 0.25).unwrap();
    assert_eq!(h2.n_shots(), 52);
    assert_eq!(h2.shots[0].receivers.len(), 189);
    // Consecutive receivers on the path around the three sides stay close.
    for shot in &h2.shots {
        for w in shot.receivers.windows(2) {
            let d = ((w[0].0 - w[1].0).powi(2) + (w[0].1 - w[1].1).powi(2)).sqrt();
            assert!(d < 20.0, "gap {d}");
        }
    }
}

#[test]
fn registration_pair_examples() {
    let reg1 = build_registration_pair(CaseId::Reg1, 7, 0.0).unwrap();
    let truth = reg1.truth.as_ref().unwrap();
    let record = truth.duration();
    assert!((truth.samples[0] - 0.15 * (-8.0f64).exp()).abs() < 1e-15);
    let mid = truth.samples.len() / 2;
    assert!((truth.times().nth(mid).unwrap() - 0.5 * record).abs() < 1e-12);
    let largest = truth
        .times()
        .zip(&truth.samples)
        .map(|(t, p)| p - t)
        .fold(0.0f64, f64::max);
    assert!((largest - 0.15).abs() < 1e-12);
    assert_ne!(reg1.d, reg1.u);

    let quiet = build_registration_pair(CaseId::Reg2, 7, 0.0).unwrap();
    assert_eq!(quiet, reg1);
    let noisy = build_registration_pair(CaseId::Reg2, 7, 0.075).unwrap();
    let diff: Vec<f64> = noisy.d.samples.iter().zip(&reg1.d.samples).map(|(a, b)| a - b).collect();
    let std = (diff.iter().map(|x| x * x).sum::<f64>() / diff.len() as f64).sqrt();
    assert!((std - 0.075).abs() < 0.01, "noise std {std}");

    let reg3 = build_registration_pair(CaseId::Reg3, 7, 0.0).unwrap();
    assert!(reg3.truth.is_none());
    assert!(build_registration_pair(CaseId::H2, 7, 0.0).is_err());
}

#[test]
fn observed_survey_is_deterministic() {
    let sc = Scenario::build(&ScenarioSpec::new(CaseId::L2, 0.1, 7)).unwrap();
    let a = sc.observed().unwrap();
    let b = sc.observed().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), sc.geometry.n_shots());
}

#[test]
fn homogeneous_survey_arrivals_match_distance_over_velocity() {
    let v = 3000.0;
    let model = VelocityModel::homogeneous(201, 201, 5.0, v).unwrap();
    let dt = stability_dt(&model);
    let delay = source_delay(25.0);
    let params = SolverParams {
        nt: (0.4 / dt) as usize,
        dt,
        pml: Some(PmlConfig::for_velocity(v, 5.0)),
    };
    let wavelet = ricker(25.0, dt, 0.4, delay).unwrap();
    let src = (150.0, 500.0);
    let receivers = vec![(550.0, 500.0), (850.0, 300.0), (600.0, 900.0), (150.0, 950.0)];
    let geometry = AcquisitionGeometry {
        shots: vec![ShotGeometry {
            source: src,
            receivers: receivers.clone(),
        }],
    };
    let survey = make_observed_survey(&model, &geometry, &wavelet, &params).unwrap();
    for (trace, r) in survey[0].traces.iter().zip(&receivers) {
        let dist = ((r.0 - src.0).powi(2) + (r.1 - src.1).powi(2)).sqrt();
        let pick = trace.envelope_peak_time() - delay;
        assert!((pick - dist / v).abs() <= 2.0 * dt, "receiver {r:?}: pick {pick}, want {}", dist / v);
    }
}

#[test]
fn arrivals_through_the_high_velocity_lens_are_early() {
    let sc = Scenario::build(&ScenarioSpec::new(CaseId::H2, 0.25, 7)).unwrap();
    let (lo, hi) = (2.5, 622.5);
    let mid = 312.5;
    let geometry = AcquisitionGeometry {
        shots: vec![ShotGeometry {
            source: (lo, mid),
            receivers: vec![(hi, mid)],
        }],
    };
    let background = VelocityModel::homogeneous(sc.true_model.nx, sc.true_model.nz, sc.true_model.dx, 5200.0).unwrap();
    let pick = |m: &VelocityModel| {
        make_observed_survey(m, &geometry, &sc.wavelet, &sc.params).unwrap()[0].traces[0].envelope_peak_time()
    };
    let through_lens = pick(&sc.true_model);
    let without = pick(&background);
    assert!(through_lens < without - 5.0 * sc.params.dt, "lens {through_lens}, background {without}");
}

use super::*;
use crate::specfn::{softplus, LN_SQRT_2PI};

/// A family of the given kind with moderately spread, randomized parameters.
fn random_spec(kind: FamilyKind, d: usize, seed: u64) -> FamilySpec {
    let mut rng = RngState::new(seed, 0);
    let cfg = InitConfig { mixture_components: 2, mean_samples: 10, ..InitConfig::default() };
    let mut spec = init_family(kind, d, &cfg, &mut rng).unwrap();
    let names = spec.param_names();
    let p: Vec<f64> = names
        .iter()
        .map(|n| {
            let r = rng.uniform_open();
            if n.contains("raw_a") || n.contains("raw_b") || n.contains("raw_alpha") {
                0.5 + 2.5 * r
            } else if n.contains("log_sigma") {
                -0.5 + r
            } else if n.contains("raw_scale") {
                0.3 + r
            } else if n.contains("logit") {
                r - 0.5
            } else {
                2.0 * r - 1.0
            }
        })
        .collect();
    spec.set_params(&p).unwrap();
    spec
}

/// Midpoint rule of exp(log q) over the family's bounding box.
fn integrate_2d(spec: &FamilySpec, n: usize) -> f64 {
    let (lo, hi) = spec.bounding_box().unwrap();
    let (hx, hy) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy];
            total += spec.log_density(&x).unwrap().exp();
        }
    }
    total * hx * hy
}

#[test]
fn kind_names_round_trip() {
    for k in FamilyKind::ALL {
        assert_eq!(k.as_str().parse::<FamilyKind>().unwrap(), k);
    }
    assert!("copula".parse::<FamilyKind>().is_err());
}

#[test]
fn forward_and_inverse_agree() {
    for kind in FamilyKind::ALL {
        for d in [1, 2, 5] {
            let spec = random_spec(kind, d, 100 + d as u64);
            let mut rng = RngState::new(1, 0);
            for _ in 0..1000 {
                let s = spec.sample(&mut rng).unwrap();
                let l = spec.log_density(&s.x).unwrap();
                assert!((s.log_q - l).abs() <= 1e-9, "{kind} d={d}: {} vs {l}", s.log_q);
            }
        }
    }
}

#[test]
fn every_kind_normalizes_in_two_dimensions() {
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 2, 7);
        let total = integrate_2d(&spec, 600);
        assert!((total - 1.0).abs() < 1e-2, "{kind}: {total}");
    }
}

#[test]
fn flipped_log_det_sign_breaks_normalization() {
    let spec = random_spec(FamilyKind::CopulaNorot, 2, 7);
    let total = crate::fault::with_flipped_log_det_sign(|| integrate_2d(&spec, 300));
    assert!((total - 1.0).abs() > 1e-2, "{total}");
}

#[test]
fn fullcov_moments() {
    let l = vec![vec![0.8, 0.0], vec![-0.5, 0.4]];
    let spec = FamilySpec::GaussFullcov(FullCovGaussian::from_factor(vec![1.0, -2.0], &l).unwrap());
    let mut rng = RngState::new(2, 0);
    let n = 100_000;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| spec.sample(&mut rng).unwrap().x).collect();
    let mean: Vec<f64> = (0..2).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / n as f64).collect();
    let cov = |i: usize, j: usize| xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / n as f64;
    assert!((mean[0] - 1.0).abs() < 0.01 && (mean[1] + 2.0).abs() < 0.01);
    assert!((cov(0, 0) - 0.64).abs() < 0.01);
    assert!((cov(0, 1) + 0.4).abs() < 0.01);
    assert!((cov(1, 1) - 0.41).abs() < 0.01);
}

#[test]
fn gaussian_mode_and_support_sentinel() {
    let spec = FamilySpec::GaussMeanfield(MeanFieldGaussian::new(vec![0.5, -1.0, 2.0], vec![0.1, -0.3, 0.0]).unwrap());
    let l = spec.log_density(&[0.5, -1.0, 2.0]).unwrap();
    assert!((l - (-3.0 * LN_SQRT_2PI - (0.1 - 0.3))).abs() < 1e-14);

    let cop = random_spec(FamilyKind::CopulaRot, 2, 3);
    assert_eq!(cop.log_density(&[1e3, -1e3]).unwrap(), f64::NEG_INFINITY);
    assert!(cop.log_density(&[f64::NAN, 0.0]).is_err());
}

#[test]
fn mixture_of_identical_components() {
    let single = random_spec(FamilyKind::CopulaRot, 2, 4);
    let mix = FamilySpec::Mixture(Mixture::new(vec![0.3, 0.3], vec![single.clone(), single.clone()]).unwrap());
    let mut rng = RngState::new(5, 0);
    for _ in 0..200 {
        let x = single.sample(&mut rng).unwrap().x;
        let a = single.log_density(&x).unwrap();
        let b = mix.log_density(&x).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn default_initialization() {
    let mut rng = RngState::new(9, 0);
    let spec = init_family(FamilyKind::CopulaRot, 3, &InitConfig::default(), &mut rng).unwrap();
    let FamilySpec::Copula(flow) = &spec else { panic!() };
    let theta = flow.theta().unwrap();
    assert!((theta.a - 15.000_000_305_902_32).abs() < 1e-9);
    assert!((theta.b - softplus(2.0)).abs() < 1e-15);
    assert!(flow.marginals.log_sigma.iter().all(|&l| l == -3.0));
    assert!(flow.rotation.as_ref().unwrap().nu.iter().all(|v| v.abs() <= 0.2));

    let mf = init_family(FamilyKind::GaussMeanfield, 4, &InitConfig::default(), &mut rng).unwrap();
    assert_eq!(mf.params(), [vec![0.0; 4], vec![-3.0; 4]].concat());

    let again = init_family(FamilyKind::CopulaRot, 3, &InitConfig::default(), &mut RngState::new(9, 0)).unwrap();
    assert_eq!(again, spec);
}

#[test]
fn initial_mean_hits_target() {
    let cfg = InitConfig { target_mean: Some(vec![1.0, -2.0]), mean_samples: 4000, ..InitConfig::default() };
    for kind in [FamilyKind::CopulaRot, FamilyKind::IndepNorot, FamilyKind::GaussFullcov] {
        let spec = init_family(kind, 2, &cfg, &mut RngState::new(3, 0)).unwrap();
        let mut rng = RngState::new(4, 0);
        let n = 20_000;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let x = spec.sample(&mut rng).unwrap().x;
            m[0] += x[0] / n as f64;
            m[1] += x[1] / n as f64;
        }
        assert!((m[0] - 1.0).abs() < 5e-3 && (m[1] + 2.0).abs() < 5e-3, "{kind}: {m:?}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 3, 11);
        let json = Checkpoint::new(&spec).to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back.family, spec);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.family.params()), bits(spec.params()));
    }
    assert!(Checkpoint::from_json("{}").is_err());
}

#[test]
fn parameter_vector_round_trip() {
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 4, 12);
        assert_eq!(spec.params().len(), spec.n_params());
        assert_eq!(spec.param_names().len(), spec.n_params());
        let p: Vec<f64> = (0..spec.n_params()).map(|i| 0.01 * i as f64).collect();
        assert_eq!(spec.with_params(&p).unwrap().params(), p);
        assert!(spec.with_params(&p[1..]).is_err());
    }
}

#[test]
fn density_gradient_matches_finite_differences() {
    let h = 1e-6;
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 3, 21);
        let mut rng = RngState::new(22, 0);
        for _ in 0..5 {
            let x = spec.sample(&mut rng).unwrap().x;
            let g = spec.density_grad(&x, None).unwrap();
            for i in 0..3 {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (spec.log_density(&p).unwrap() - spec.log_density(&m).unwrap()) / (2.0 * h);
                assert!((fd - g.dx[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{kind} dx[{i}]: {fd} vs {}", g.dx[i]);
            }
            let theta = spec.params();
            for k in 0..theta.len() {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[k] += h;
                m[k] -= h;
                let fd = (spec.with_params(&p).unwrap().log_density(&x).unwrap()
                    - spec.with_params(&m).unwrap().log_density(&x).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g.dparams[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "{kind} {}: {fd} vs {}",
                    spec.param_names()[k],
                    g.dparams[k]
                );
            }
        }
    }
}

#[test]
fn known_states_match_inversion() {
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 3, 31);
        let mut rng = RngState::new(32, 0);
        for _ in 0..50 {
            let s = spec.sample(&mut rng).unwrap();
            let a = spec.density_grad(&s.x, Some(&s)).unwrap();
            let b = spec.density_grad(&s.x, None).unwrap();
            assert!((a.log_q - b.log_q).abs() < 1e-9);
            for (u, v) in a.dparams.iter().zip(&b.dparams).chain(a.dx.iter().zip(&b.dx)) {
                assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{kind}");
            }
        }
    }
}

#[test]
fn pullback_matches_finite_differences_with_fixed_noise() {
    // Kinds whose noise does not depend on the parameters.
    let h = 1e-6;
    for kind in [FamilyKind::IndepRot, FamilyKind::IndepNorot, FamilyKind::GaussMeanfield, FamilyKind::GaussFullcov] {
        let spec = random_spec(kind, 3, 41);
        let mut rng = RngState::new(42, 0);
        let noise = spec.sample_noise(&mut rng).unwrap();
        let s = spec.push_forward(&noise).unwrap();
        let gx = [0.3, -1.1, 0.7];
        let g = spec.pullback(&s, &gx).unwrap();
        let theta = spec.params();
        let f = |p: &[f64]| -> f64 {
            let x = spec.with_params(p).unwrap().push_forward(&noise).unwrap().x;
            x.iter().zip(&gx).map(|(a, b)| a * b).sum()
        };
        for k in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "{kind} {k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn extra_rotation_round_trip_preserves_density() {
    let spec = random_spec(FamilyKind::CopulaRot, 5, 51);
    let extra = build_butterfly(5, &RotationParams { nu: vec![0.7, -1.2, 2.0, 0.1] }).unwrap();
    let mut rng = RngState::new(52, 0);
    for _ in 0..100 {
        let x = spec.sample(&mut rng).unwrap().x;
        let y = extra.apply_transpose(&extra.apply(&x).unwrap()).unwrap();
        let (a, b) = (spec.log_density(&x).unwrap(), spec.log_density(&y).unwrap());
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn support_box_contains_samples() {
    for kind in FamilyKind::ALL {
        let spec = random_spec(kind, 3, 61);
        let (lo, hi) = spec.bounding_box().unwrap();
        let mut rng = RngState::new(62, 0);
        for _ in 0..2000 {
            let x = spec.sample(&mut rng).unwrap().x;
            assert!((0..3).all(|i| x[i] >= lo[i] && x[i] <= hi[i]), "{kind}");
        }
    }
}

#[test]
fn identity_rotation_keeps_the_distribution() {
    let spec = random_spec(FamilyKind::CopulaNorot, 3, 71);
    let rotated = spec.with_identity_rotation().unwrap();
    assert_eq!(rotated.kind(), FamilyKind::CopulaRot);
    let mut rng = RngState::new(72, 0);
    for _ in 0..200 {
        let x = spec.sample(&mut rng).unwrap().x;
        assert!((spec.log_density(&x).unwrap() - rotated.log_density(&x).unwrap()).abs() < 1e-12);
    }
    assert!(rotated.with_identity_rotation().is_err());
    assert!(random_spec(FamilyKind::GaussFullcov, 3, 1).with_identity_rotation().is_err());
}

#[test]
fn gaussian_path_entropy_gradient_matches_general_form() {
    for kind in [FamilyKind::GaussMeanfield, FamilyKind::GaussFullcov] {
        let spec = random_spec(kind, 3, 21);
        let h = spec.path_entropy_grad().unwrap();
        let mut rng = RngState::new(4, 0);
        for _ in 0..20 {
            let s = spec.sample(&mut rng).unwrap();
            let dg = spec.density_grad(&s.x, Some(&s)).unwrap();
            let neg_dx: Vec<f64> = dg.dx.iter().map(|v| -v).collect();
            let general = spec.pullback(&s, &neg_dx).unwrap();
            for ((g, dp), hi) in general.iter().zip(&dg.dparams).zip(&h) {
                assert!((g - dp - hi).abs() < 1e-10, "{kind}: {} vs {hi}", g - dp);
            }
        }
    }
    assert!(random_spec(FamilyKind::CopulaRot, 2, 1).path_entropy_grad().is_none());
}

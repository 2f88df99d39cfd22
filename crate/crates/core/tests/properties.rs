use cocoa_core::baselines::richardson_lucy;
use cocoa_core::forward::{apply_noise, compose_correction, random_mixed_aberration, Convolver, ModeSet, NoiseModel};
use cocoa_core::metrics::{emd_sliced, pcc, piecewise_cutoff};
use cocoa_core::neural::{encode, Architecture, EncodingSpec, FrequencySpacing, NeuralField, OutputMap};
use cocoa_core::optics::{psf_3d, wavefront_rms, OpticalConfig, WavefrontAberration, ZernikeBasis, ZernikeIndex};
use cocoa_core::volume::{ImageStack, VoxelPitch};
use ndarray::Array3;
use proptest::prelude::*;

fn optics() -> OpticalConfig {
    OpticalConfig { nx: 32, ny: 32, nz: 9, ..Default::default() }
}

fn array(dims: (usize, usize, usize), values: &[f64]) -> Array3<f64> {
    Array3::from_shape_fn(dims, |(z, y, x)| values[(z * 31 + y * 7 + x) % values.len()])
}

fn aberration(coeffs: &[f64]) -> WavefrontAberration {
    let basis = ZernikeBasis::cocoa_default();
    WavefrontAberration::from_pairs(basis.modes.iter().zip(coeffs).map(|(m, &c)| (m.j, c)))
}

fn mapped(w: &WavefrontAberration, flip: impl Fn(i32) -> bool) -> WavefrontAberration {
    WavefrontAberration::from_pairs(
        w.coefficients.iter().map(|(&j, &v)| (j, if flip(ZernikeIndex::from_ansi(j).m) { -v } else { v })),
    )
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn odd_m_negation_rotates_planes_by_half_turn(coeffs in prop::collection::vec(-0.1f64..0.1, 17)) {
        let w = aberration(&coeffs);
        let h = psf_3d(&optics(), &w).unwrap().values;
        let r = psf_3d(&optics(), &mapped(&w, |m| m % 2 != 0)).unwrap().values;
        let (nz, ny, nx) = h.dim();
        let turned = Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| h[[z, (ny - y) % ny, (nx - x) % nx]]);
        let peak = h.iter().fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(max_abs_diff(&r, &turned) < 1e-12 * peak);
    }

    #[test]
    fn mirror_parity_flips_planes_left_right(coeffs in prop::collection::vec(-0.1f64..0.1, 17)) {
        let w = aberration(&coeffs);
        let h = psf_3d(&optics(), &w).unwrap().values;
        // x → −x takes θ to π − θ: cos(mθ) modes change sign for odd m, sin(mθ) modes for even m
        let r = psf_3d(&optics(), &mapped(&w, |m| (m > 0 && m % 2 != 0) || (m < 0 && m % 2 == 0))).unwrap().values;
        let (nz, ny, nx) = h.dim();
        let mirrored = Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| h[[z, y, (nx - x) % nx]]);
        let peak = h.iter().fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(max_abs_diff(&r, &mirrored) < 1e-12 * peak);
    }

    #[test]
    fn psf_is_a_deterministic_distribution(coeffs in prop::collection::vec(-0.2f64..0.2, 17)) {
        let w = aberration(&coeffs);
        let a = psf_3d(&optics(), &w).unwrap().values;
        let b = psf_3d(&optics(), &w).unwrap().values;
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correction_arithmetic(coeffs in prop::collection::vec(-0.2f64..0.2, 17), k in -3.0f64..3.0) {
        let w = aberration(&coeffs);
        prop_assert!(wavefront_rms(&compose_correction(&w, &w.negated())) < 1e-15);
        prop_assert!((wavefront_rms(&w.scaled(k)) - k.abs() * wavefront_rms(&w)).abs() < 1e-12);
    }

    #[test]
    fn mixed_aberrations_hit_the_target(rms in 0.0f64..0.4, seed in any::<u64>(), high in any::<bool>()) {
        let set = if high { ModeSet::High } else { ModeSet::Low };
        let w = random_mixed_aberration(rms, set, seed);
        prop_assert!((wavefront_rms(&w) - rms).abs() < 1e-12);
        prop_assert!(w.coefficients.keys().all(|j| set.modes().contains(j)));
    }

    #[test]
    fn convolution_is_linear_with_exact_adjoints(
        s1 in prop::collection::vec(0.0f64..1.0, 7..40),
        s2 in prop::collection::vec(0.0f64..1.0, 7..40),
        k in prop::collection::vec(0.0f64..1.0, 5..20),
        g in prop::collection::vec(-1.0f64..1.0, 5..30),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let (sd, kd) = ((4, 6, 5), (3, 3, 5));
        let (s1, s2, k, g) = (array(sd, &s1), array(sd, &s2), array(kd, &k), array(sd, &g));
        let c = Convolver::same([4, 6, 5], [3, 3, 5]);
        let mixed = c.forward(&(&s1 * a + &s2 * b), &k);
        let parts = c.forward(&s1, &k) * a + c.forward(&s2, &k) * b;
        let scale = parts.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&mixed, &parts) < 1e-10 * scale);

        let lhs: f64 = c.forward(&s1, &k).iter().zip(&g).map(|(x, y)| x * y).sum();
        let ks = c.spectrum_of_kernel(&k);
        let ss = c.spectrum_of_structure(&s1);
        let via_s: f64 = s1.iter().zip(&c.adjoint_structure(&g, &ks)).map(|(x, y)| x * y).sum();
        let via_k: f64 = k.iter().zip(&c.adjoint_kernel(&g, &ss)).map(|(x, y)| x * y).sum();
        let norm = lhs.abs().max(1e-9);
        prop_assert!((lhs - via_s).abs() < 1e-8 * norm.max(1.0));
        prop_assert!((lhs - via_k).abs() < 1e-8 * norm.max(1.0));
    }

    #[test]
    fn radial_features_ignore_rotation(r in 0.0f64..0.7, phi in 0.0f64..6.3, turn in 0.0f64..6.3, z in -1.0f64..1.0) {
        let spec = EncodingSpec {
            radial_frequencies: 6,
            axial_frequencies: 3,
            radial_base: 1.0,
            radial_max: 8.0,
            axial_base: 1.0,
            axial_max: 4.0,
            spacing: FrequencySpacing::Geometric,
            include_raw_coords: false,
            directions: 0,
        };
        let a = encode([r * phi.cos(), r * phi.sin(), z], &spec).unwrap();
        let b = encode([r * (phi + turn).cos(), r * (phi + turn).sin(), z], &spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn field_output_is_non_negative(seed in any::<u64>(), relu in any::<bool>(), scale in 0.1f64..20.0) {
        let spec = EncodingSpec::for_grid(8, 16, 16);
        let output = if relu { OutputMap::Relu } else { OutputMap::Softplus };
        let arch = Architecture { widths: vec![16, 16, 1], skips: vec![], output };
        let f = NeuralField::init(spec.clone(), arch.clone(), seed).unwrap();
        let params = f.params.iter().map(|p| p * scale).collect();
        let f = NeuralField::with_params(spec, arch, params, seed).unwrap();
        let coords = cocoa_core::neural::grid_coordinates(8, 16, 16);
        prop_assert!(f.evaluate_coords(&coords).unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pcc_is_symmetric_and_affine_invariant(
        a in prop::collection::vec(-5.0f64..5.0, 10..60),
        b in prop::collection::vec(-5.0f64..5.0, 10..60),
        k in 0.01f64..100.0,
        c in -50.0f64..50.0,
    ) {
        let (a, b) = (array((3, 4, 5), &a), array((3, 4, 5), &b));
        prop_assume!(a.std(0.0) > 1e-3 && b.std(0.0) > 1e-3);
        let r = pcc(&a, &b).unwrap();
        prop_assert!((r - pcc(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((r - pcc(&(&a * k + c), &b).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn emd_triangle_on_point_masses(p in prop::collection::vec((0usize..6, 0usize..10, 0usize..10), 3)) {
        let pitch = VoxelPitch::new(0.1, 0.3);
        let masses: Vec<Array3<f64>> = p.iter().map(|&(z, y, x)| {
            let mut a = Array3::zeros((6, 10, 10));
            a[[z, y, x]] = 1.0;
            a
        }).collect();
        let d = |i: usize, j: usize| emd_sliced(&masses[i], &masses[j], pitch, 200, 4).unwrap();
        prop_assert!(d(0, 0) < 1e-9);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
        prop_assert!(d(0, 2) <= 1.05 * (d(0, 1) + d(1, 2)) + 1e-12);
    }

    #[test]
    fn noise_is_seeded_and_non_negative_without_readout(
        values in prop::collection::vec(0.0f64..50.0, 5..40),
        seed in any::<u64>(),
        gain in 0.5f64..4.0,
    ) {
        let stack = ImageStack::new(array((3, 5, 4), &values), VoxelPitch::new(0.1, 0.3)).unwrap();
        let model = NoiseModel { gain, readout_noise: 0.0, seed };
        let a = apply_noise(&stack, &model).unwrap();
        prop_assert_eq!(&a.values, &apply_noise(&stack, &model).unwrap().values);
        prop_assert!(a.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn richardson_lucy_keeps_iterates_non_negative(
        g in prop::collection::vec(0.0f64..10.0, 10..50),
        h in prop::collection::vec(0.0f64..1.0, 5..20),
        iterations in 1usize..15,
    ) {
        let g = array((4, 8, 8), &g);
        let h = array((3, 3, 3), &h);
        prop_assume!(h.sum() > 1e-6);
        let h = &h / h.sum();
        let s = richardson_lucy(&g, &h, &Array3::from_elem(g.dim(), 1.0), iterations, 1e-12).unwrap();
        prop_assert!(s.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn cutoff_breakpoint_stays_inside_the_grid(
        ys in prop::collection::vec(-1.0f64..1.0, 5..15),
    ) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| 0.5 * i as f64).collect();
        let f = piecewise_cutoff(&xs, &ys).unwrap();
        prop_assert!(f.breakpoint >= xs[1] && f.breakpoint <= xs[xs.len() - 2]);
        prop_assert!(f.sse >= 0.0);
    }
}

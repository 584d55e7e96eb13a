use proptest::prelude::*;
use quadsde_core::io::{system_from_text, system_to_text};
use quadsde_core::linalg::{self, Mat};
use quadsde_core::spectral::{linearize, restrict_to};
use quadsde_core::system::{cancellation_check, combined_cancellation_check, dissipation, pair_interaction_lower_bound};
use quadsde_core::tensor::{energy_residual_certificate, matrix_from_csv, matrix_to_csv};
use quadsde_core::zoo::*;
use quadsde_core::{BilinearTensor, DampingOperator, NoiseOperator, SdeSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zoo() -> Vec<SdeSystem> {
    vec![
        ModelSpec::new(Variant::Triad).build().unwrap(),
        ModelSpec::new(Variant::TriadRotated).build().unwrap(),
        ModelSpec::new(Variant::Lorenz96).build().unwrap(),
        ModelSpec::new(Variant::Sabra).build().unwrap(),
        ModelSpec::new(Variant::GalerkinNs2d).build().unwrap(),
    ]
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn residual(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn arb_tensor() -> impl Strategy<Value = BilinearTensor> {
    (1usize..6).prop_flat_map(|n| prop::collection::vec((0..n, 0..n, 0..n, -10.0f64..10.0), 0..20).prop_map(move |e| BilinearTensor::new(n, e).unwrap()))
}

proptest! {
    #[test]
    fn bilinear_in_first_slot(t in arb_tensor(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t.dim();
        let (x, xp, y) = (gaussian(&mut rng, n), gaussian(&mut rng, n), gaussian(&mut rng, n));
        let comb: Vec<f64> = x.iter().zip(&xp).map(|(u, v)| a * u + b * v).collect();
        let lhs = t.eval(&comb, &y).unwrap();
        let (bx, bxp) = (t.eval(&x, &y).unwrap(), t.eval(&xp, &y).unwrap());
        let rhs: Vec<f64> = bx.iter().zip(&bxp).map(|(u, v)| a * u + b * v).collect();
        let scale = 1.0 + t.max_abs_entry() * linalg::norm(&y) * (a.abs() * linalg::norm(&x) + b.abs() * linalg::norm(&xp));
        prop_assert!(residual(&lhs, &rhs) <= 1e-12 * scale);
    }

    #[test]
    fn quadratic_homogeneity(t in arb_tensor(), seed in any::<u64>(), lam in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, t.dim());
        let lx: Vec<f64> = x.iter().map(|v| lam * v).collect();
        let lhs = t.eval(&lx, &lx).unwrap();
        let rhs: Vec<f64> = t.eval(&x, &x).unwrap().iter().map(|v| lam * lam * v).collect();
        prop_assert!(residual(&lhs, &rhs) <= 1e-12 * (1.0 + lam * lam * t.max_abs_entry() * linalg::norm(&x).powi(2)));
    }

    #[test]
    fn text_round_trip_is_bit_exact(t in arb_tensor()) {
        let back = BilinearTensor::from_text(&t.to_text()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(vals in prop::collection::vec(-1e6f64..1e6, 9)) {
        let m = Mat::from_row_slice(3, 3, &vals);
        prop_assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
    }

    #[test]
    fn linearization_is_homogeneous(seed in any::<u64>(), lam in -4.0f64..4.0, which in 0usize..5) {
        let s = &zoo()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, s.dim());
        let lx: Vec<f64> = x.iter().map(|v| lam * v).collect();
        let diff = (linearize(s, &lx).unwrap() - linearize(s, &x).unwrap() * lam).abs().max();
        prop_assert!(diff <= 1e-12 * (1.0 + lam.abs() * s.tensor.max_abs_entry() * linalg::norm(&x)));
    }
}

#[test]
fn zoo_conservation_is_symbolic_and_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for s in zoo() {
        let cert = energy_residual_certificate(&s.tensor);
        assert!(cert.passed && cert.max_residual == 0.0, "{}: {:?}", s.name, cert);
        for _ in 0..2000 {
            let x = gaussian(&mut rng, s.dim());
            let b = s.bilinear(&x, &x).unwrap();
            assert!(linalg::dot(&x, &b).abs() <= 1e-12 * linalg::norm(&x).powi(3) * s.tensor.max_abs_entry(), "{}", s.name);
        }
    }
}

#[test]
fn lorenz96_conserves_for_every_size() {
    for n in 4..=12 {
        assert!(energy_residual_certificate(&lorenz96_tensor(n).unwrap()).passed, "n = {n}");
    }
    assert!(lorenz96_tensor(3).is_err());
}

#[test]
fn nonconservative_tensor_fails_certificate() {
    let t = BilinearTensor::new(2, [(0, 0, 0, 1.0)]).unwrap();
    let c = energy_residual_certificate(&t);
    assert!(!c.passed && c.max_residual == 1.0);
}

#[test]
fn projector_algebra() {
    for s in zoo() {
        let d = &s.decomposition;
        let (pk, pp) = (d.pi_ker(), d.pi_perp());
        let n = s.dim();
        let eye = Mat::identity(n, n);
        assert!((&pk + &pp - &eye).abs().max() < 1e-12, "{}", s.name);
        assert!((&pk * &pp).abs().max() < 1e-12);
        assert!((&pk * &pk - &pk).abs().max() < 1e-12);
        assert!((&pp * &pp - &pp).abs().max() < 1e-12);
        // the kernel basis really spans ker A
        assert!((s.damping.matrix() * d.q_ker()).abs().max() < 1e-12);
    }
}

#[test]
fn dissipation_vanishes_exactly_on_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in zoo() {
        let qk = s.decomposition.q_ker().clone();
        for _ in 0..50 {
            let x = gaussian(&mut rng, s.dim());
            let d = dissipation(&s, &x).unwrap();
            assert!(d >= 0.0);
            if d <= 1e-12 {
                assert!(s.decomposition.perp_norm(&x) <= 1e-5 * linalg::norm(&x));
            }
            let c = gaussian(&mut rng, qk.ncols());
            let z = &qk * linalg::Vector::from_vec(c);
            assert!(dissipation(&s, z.as_slice()).unwrap() <= 1e-12 * z.norm_squared());
        }
    }
}

#[test]
fn kernels_consist_of_equilibria() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let systems = [
        ModelSpec::new(Variant::Triad).build().unwrap(),
        ModelSpec::new(Variant::Lorenz96).with("a", "0,1,1,1,1,1").build().unwrap(),
        ModelSpec::new(Variant::Sabra).build().unwrap(),
    ];
    for s in &systems {
        let qk = s.decomposition.q_ker();
        // for the combined kernels only each block consists of equilibria
        let blocks = match s.decomposition.split() {
            Some(_) => {
                let (a, b) = s.decomposition.blocks().unwrap();
                vec![a, b]
            }
            None => vec![qk.clone()],
        };
        for q in blocks {
            for _ in 0..100 {
                let z = &q * linalg::Vector::from_vec(gaussian(&mut rng, q.ncols()));
                let b = s.bilinear(z.as_slice(), z.as_slice()).unwrap();
                assert!(linalg::norm(&b) <= 1e-12 * z.norm_squared(), "{}", s.name);
            }
        }
    }
}

#[test]
fn triad_examples() {
    let t = triad_tensor();
    assert_eq!(t.eval(&[0.0, 0.0, 2.5], &[0.0, 0.0, 2.5]).unwrap(), vec![0.0; 3]);
    let s = ModelSpec::new(Variant::Triad).build().unwrap();
    let l = linearize(&s, &[0.0, 0.0, 2.0]).unwrap();
    let expect = Mat::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!((l - expect).abs().max() < 1e-15);
    assert_eq!(linearize(&s, &[0.0; 3]).unwrap(), Mat::zeros(3, 3));
}

#[test]
fn rotated_triad_matches_printed_form_and_is_conjugate() {
    let t = triad_rotated_tensor();
    let tp = triad_tensor();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..100 {
        let (x, y) = (gaussian(&mut rng, 3), gaussian(&mut rng, 3));
        let printed = [x[0] * y[2], -x[1] * y[2], (x[1] - x[0]) * (y[1] + y[0])];
        assert!(residual(&t.eval(&x, &y).unwrap(), &printed) < 1e-12 * (1.0 + linalg::norm(&x) * linalg::norm(&y)));
        // y = R u with y₁ = (u₁+u₂)/√2, y₂ = (u₁−u₂)/√2, y₃ = u₃ maps one quadratic flow onto the other
        let u = gaussian(&mut rng, 3);
        let ru = [h * (u[0] + u[1]), h * (u[0] - u[1]), u[2]];
        let bu = tp.eval(&u, &u).unwrap();
        let rbu = [h * (bu[0] + bu[1]), h * (bu[0] - bu[1]), bu[2]];
        assert!(residual(&t.eval(&ru, &ru).unwrap(), &rbu) < 1e-12 * (1.0 + linalg::dot(&u, &u)));
    }
}

#[test]
fn lorenz96_first_component() {
    let t = lorenz96_tensor(6).unwrap();
    let mut x = vec![0.0; 6];
    x[1] = 1.0;
    x[5] = 1.0;
    assert!((t.eval(&x, &x).unwrap()[0] - 1.0).abs() < 1e-15);
    let z = [3.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(linalg::norm(&t.eval(&z, &z).unwrap()) < 1e-15);
}

#[test]
fn sabra_pair_interaction_is_two_abs_delta_minus_one() {
    for &delta in &[0.3, 0.5, 0.75] {
        let s = ModelSpec::new(Variant::Sabra).with("delta", delta).build().unwrap();
        assert!(combined_cancellation_check(&s).unwrap().passed);
        // a₁ b̃₃ feeds â₂, so the full kernel/perp identity does not hold here
        assert!(!cancellation_check(&s).passed);
        let pb = pair_interaction_lower_bound(&s, 128, 1).unwrap();
        assert!((pb.c_min - 2.0 * (delta - 1.0f64).abs()).abs() < 1e-9, "δ={delta}: {}", pb.c_min);
        // the formula holds pointwise, not only at the minimum
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = 4;
        for _ in 0..20 {
            let g = gaussian(&mut rng, 4);
            let mut v1 = vec![0.0; 2 * j];
            let mut v2 = vec![0.0; 2 * j];
            (v1[0], v1[j], v2[1], v2[j + 1]) = (g[0], g[1], g[2], g[3]);
            let mut sym = s.bilinear(&v1, &v2).unwrap();
            sym.iter_mut().zip(s.bilinear(&v2, &v1).unwrap()).for_each(|(a, b)| *a += b);
            let perp = s.decomposition.perp_norm(&sym);
            let expect = 2.0 * (delta - 1.0f64).abs() * linalg::norm(&v1) * linalg::norm(&v2);
            assert!((perp - expect).abs() < 1e-12 * (1.0 + expect));
        }
    }
}

fn sabra_block(delta: f64, x: &[f64], coords: &[usize]) -> Mat {
    let s = ModelSpec::new(Variant::Sabra).with("delta", delta).build().unwrap();
    let n = s.dim();
    let q = Mat::from_columns(&coords.iter().map(|&i| linalg::unit(n, i)).collect::<Vec<_>>());
    restrict_to(&linearize(&s, x).unwrap(), &q)
}

#[test]
fn sabra_shell_one_block_matches_printed_matrix() {
    let j = 4;
    for &(delta, theta) in &[(0.5, 0.3), (0.3, 1.1), (0.6, -2.0)] {
        let (a, b) = (f64::cos(theta), f64::sin(theta));
        let mut x = vec![0.0; 2 * j];
        (x[0], x[j]) = (a, b);
        let m = sabra_block(delta, &x, &[1, j + 1, 2, j + 2]);
        let d2 = 2.0 * delta;
        let e2 = 2.0 * (delta - 1.0);
        #[rustfmt::skip]
        let printed = Mat::from_row_slice(4, 4, &[
            0.0, 0.0, -d2 * b, d2 * a,
            0.0, 0.0, -d2 * a, -d2 * b,
            e2 * b, e2 * a, 0.0, 0.0,
            -e2 * a, e2 * b, 0.0, 0.0,
        ]);
        assert!((m - printed).abs().max() < 1e-12, "δ={delta}");
    }
}

#[test]
fn sabra_shell_two_block_matches_printed_matrix() {
    let j = 4;
    for &(delta, theta) in &[(0.5, 0.7), (0.75, -0.4)] {
        let (a, b) = (f64::cos(theta), f64::sin(theta));
        let mut x = vec![0.0; 2 * j];
        (x[1], x[j + 1]) = (a, b);
        let m = sabra_block(delta, &x, &[0, j, 2, j + 2, 3, j + 3]);
        let e2 = 2.0 * (delta - 1.0);
        let (d4, e4) = (4.0 * delta, 4.0 * (delta - 1.0));
        #[rustfmt::skip]
        let printed = Mat::from_row_slice(6, 6, &[
            0.0, 0.0, 2.0 * b, -2.0 * a, 0.0, 0.0,
            0.0, 0.0, 2.0 * a, 2.0 * b, 0.0, 0.0,
            e2 * b, e2 * a, 0.0, 0.0, -d4 * b, d4 * a,
            -e2 * a, e2 * b, 0.0, 0.0, -d4 * a, -d4 * b,
            0.0, 0.0, e4 * b, e4 * a, 0.0, 0.0,
            0.0, 0.0, -e4 * a, e4 * b, 0.0, 0.0,
        ]);
        assert!((m - printed).abs().max() < 1e-12, "δ={delta}");
    }
}

#[test]
fn ns_shear_interaction_formula() {
    // v₁ = α cos ℓx₁ + β sin ℓx₁, v₂ = sin kx₂:
    // Π_⊥ sym(v₁, v₂) = (k/ℓ − ℓ/k)(−α sin ℓx₁ + β cos ℓx₁) cos kx₂
    let (n, l, k) = (3usize, 2i64, 3i64);
    let s = ModelSpec::new(Variant::GalerkinNs2d).build().unwrap();
    let dim = s.dim();
    let c1 = ns_coordinate(n, (l, 0)).unwrap();
    let c2 = ns_coordinate(n, (0, k)).unwrap();
    let (alpha, beta) = (0.6, -1.3);
    let mut v1 = vec![0.0; dim];
    (v1[c1], v1[c1 + 1]) = (alpha, beta);
    let mut v2 = vec![0.0; dim];
    v2[c2 + 1] = 1.0;
    let mut sym = s.bilinear(&v1, &v2).unwrap();
    sym.iter_mut().zip(s.bilinear(&v2, &v1).unwrap()).for_each(|(a, b)| *a += b);
    let f = k as f64 / l as f64 - l as f64 / k as f64;
    // (−α sin ℓx₁ + β cos ℓx₁) cos kx₂ = ½[β cos(p) − α sin(p)] over p = (ℓ, ±k)
    let mut expect = vec![0.0; dim];
    for p in [(l, k), (l, -k)] {
        let c = ns_coordinate(n, p).unwrap();
        expect[c] = 0.5 * f * beta;
        expect[c + 1] = -0.5 * f * alpha;
    }
    let pp = s.decomposition.pi_perp();
    let proj = &pp * linalg::Vector::from_vec(sym);
    assert!(residual(proj.as_slice(), &expect) < 1e-12, "{:?}", proj.as_slice());
}

#[test]
fn ns_pair_bound_scales_like_shear_factor() {
    let mut ratios = Vec::new();
    for &(l, k) in &[(2usize, 3usize), (2, 4), (3, 4)] {
        let s = ModelSpec::new(Variant::GalerkinNs2d).with("N", 4).with("l", l).with("k", k).build().unwrap();
        assert!(combined_cancellation_check(&s).unwrap().passed);
        let pb = pair_interaction_lower_bound(&s, 128, 0).unwrap();
        let f = (k as f64 / l as f64 - l as f64 / k as f64).abs();
        ratios.push(pb.c_min / f);
    }
    for r in &ratios {
        assert!((r / ratios[0] - 1.0).abs() < 1e-6, "{ratios:?}");
    }
}

#[test]
fn shear_modes_are_equilibria() {
    let s = ModelSpec::new(Variant::GalerkinNs2d).build().unwrap();
    let mut x = vec![0.0; s.dim()];
    x[ns_coordinate(3, (2, 0)).unwrap()] = 1.0;
    assert!(linalg::norm(&s.bilinear(&x, &x).unwrap()) < 1e-14);
}

#[test]
fn ns_modes_are_half_plane_in_lexicographic_order() {
    let m = ns_modes(3);
    assert_eq!(m.len(), 24);
    assert_eq!(m[0], (0, 1));
    assert!(m.windows(2).all(|w| w[0] < w[1]));
    assert!(m.iter().all(|&(a, b)| (a > 0 || b > 0) && a.abs().max(b.abs()) <= 3));
}

#[test]
fn model_spec_rejects_bad_parameters() {
    assert!(ModelSpec::new(Variant::Triad).with("kernel", "cube").build().is_err());
    assert!(ModelSpec::new(Variant::Triad).with("bogus", 1).build().is_err());
    assert!(ModelSpec::new(Variant::Lorenz96).with("a", "1,2").build().is_err());
    assert!(ModelSpec::new(Variant::GalerkinNs2d).with("l", 3).with("k", 3).build().is_err());
    assert!("not_a_model".parse::<Variant>().is_err());
}

#[test]
fn systems_round_trip_through_text() {
    for s in zoo() {
        let back = system_from_text(&system_to_text(&s)).unwrap();
        assert_eq!(back.tensor, s.tensor);
        assert_eq!(back.damping, s.damping);
        assert_eq!(back.noise, s.noise);
        assert_eq!(back.decomposition.split(), s.decomposition.split());
        assert!((back.decomposition.pi_ker() - s.decomposition.pi_ker()).abs().max() < 1e-12);
    }
}

#[test]
fn operators_validate_shape_and_sign() {
    assert!(DampingOperator::new(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    assert!(DampingOperator::new(Mat::zeros(2, 3)).is_err());
    let s = ModelSpec::new(Variant::Triad).build().unwrap();
    assert!(s.clone().with_noise(NoiseOperator::identity(4)).is_err());
    let d = s.with_damping(DampingOperator::diagonal(&[1.0, 1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(d.decomposition.kernel_dim(), 0);
}

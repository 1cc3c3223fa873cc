use super::*;
use crate::model::{
    ConstantObservable, ConstantPotential, CoupledWells, HarmonicPair, MatrixObservable,
    MixedTrigObservable, Observable, PotentialModel,
};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wells() -> PotentialModel {
    PotentialModel::new(CoupledWells, 1.0).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, beta: f64) -> RingPolymerState {
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
    RingPolymerState::new(q, p, SurfaceIndexSequence::new(bits).unwrap(), beta, 1).unwrap()
}

fn obs_values(obs: &Observable, q: &[f64]) -> Vec<ObservableValues> {
    let mut out = Vec::new();
    observable_at_beads(obs, q, 1, &mut out).unwrap();
    out
}

#[test]
fn log_trig_helpers_are_accurate() {
    for x in [1e-8, 1e-3, 0.0625, 0.5, 3.0, 40.0, 400.0] {
        let (c, s) = (f64::cosh(x), f64::sinh(x));
        if c.is_finite() {
            assert_relative_eq!(log_cosh(x), c.ln(), max_relative = 1e-13);
            assert_relative_eq!(log_sinh(x), s.ln(), max_relative = 1e-12);
        }
        if x < 10.0 {
            assert!(log_sinh(x) < log_cosh(x));
        } else {
            assert!(log_sinh(x) <= log_cosh(x));
        }
    }
    assert_relative_eq!(log_sinh(1e-8), (1e-8f64).ln(), max_relative = 1e-14);
}

#[test]
fn coincident_bead_bond_elements() {
    let model = wells();
    let n = 4;
    let beta = 1.0;
    let q = vec![0.3; n];
    let state = RingPolymerState::new(
        q.clone(),
        vec![0.0; n],
        SurfaceIndexSequence::zeros(n),
        beta,
        1,
    )
    .unwrap();
    let f = BondFactors::compute(&model, &q, state.beta_n).unwrap();
    let v = model.evaluate(&[0.3]).unwrap();
    let bn = beta / n as f64;
    let x = bn * v.v01;
    assert_relative_eq!(
        bond_element(&state, &f, 0, 0, 0),
        v.v00 - x.cosh().ln() / bn,
        max_relative = 1e-13
    );
    assert_relative_eq!(
        bond_element(&state, &f, 0, 0, 1),
        0.5 * (v.v00 + v.v11) - x.sinh().ln() / bn,
        max_relative = 1e-13
    );
}

#[test]
fn bond_branch_difference_is_potential_only() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let state = random_state(&mut rng, 5, 1.0);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let k = rng.gen_range(0..5);
        let b = rng.gen_range(0..2u8);
        for a in 0..2u8 {
            let direct = bond_element(&state, &f, k, a, b) - bond_element(&state, &f, k, 1 - a, b);
            let v = model.evaluate(&state.q[k..k + 1]).unwrap();
            let x = state.beta_n * v.v01;
            // diag minus kink = V_aa − mean + ln tanh/β_N, sign flips when a is the kink side
            let expected = if a == b {
                v.diagonal(a) - v.mean() + x.tanh().ln() / state.beta_n
            } else {
                v.mean() - v.diagonal(b) - x.tanh().ln() / state.beta_n
            };
            assert_relative_eq!(direct, expected, epsilon = 1e-9);
            assert_relative_eq!(
                f.flip_exponent(k, a, b),
                state.beta_n * expected,
                epsilon = 1e-10
            );
        }
    }
}

#[test]
fn hamiltonian_examples() {
    let model = wells();
    let q = vec![0.7, 0.7];
    let state = RingPolymerState::new(
        q.clone(),
        vec![0.0; 2],
        SurfaceIndexSequence::zeros(2),
        1.0,
        1,
    )
    .unwrap();
    let f = BondFactors::compute(&model, &q, state.beta_n).unwrap();
    let v = model.evaluate(&[0.7]).unwrap();
    let expected = 2.0 * (v.v00 - (0.5 * v.v01).cosh().ln() / 0.5);
    assert_relative_eq!(
        extended_hamiltonian(&state, &f).unwrap(),
        expected,
        max_relative = 1e-13
    );
}

#[test]
fn hamiltonian_symmetries() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let state = random_state(&mut rng, 7, 1.0);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let h = extended_hamiltonian(&state, &f).unwrap();

        let mut flipped = state.clone();
        flipped.p.iter_mut().for_each(|x| *x = -*x);
        assert_eq!(extended_hamiltonian(&flipped, &f).unwrap(), h);

        let rotated = state.rotate_left(3);
        let fr = BondFactors::compute(&model, &rotated.q, rotated.beta_n).unwrap();
        assert_relative_eq!(
            extended_hamiltonian(&rotated, &fr).unwrap(),
            h,
            max_relative = 1e-13
        );
    }
}

#[test]
fn weight_ratio_examples() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let state = random_state(&mut rng, 8, 1.0);
    let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
    assert_eq!(weight_ratio(&SurfaceIndexSequence::zeros(8), &f), 1.0);
    let shift: f64 = f.potential.iter().map(|v| v.v11 - v.v00).sum();
    assert_relative_eq!(
        weight_ratio(&SurfaceIndexSequence::ones(8), &f),
        (-state.beta_n * shift).exp(),
        max_relative = 1e-14
    );
}

#[test]
fn weight_ratio_obeys_kink_bound() {
    // C1 bounds V00 − V11 and C2 bounds V01 on the grid the beads are drawn
    // from; M = cosh(C2 β_N) bounds sinh(x)/x there.
    let model = wells();
    let grid: Vec<f64> = (0..=3000).map(|i| -1.5 + 3.0 * i as f64 / 3000.0).collect();
    let mut c1 = f64::NEG_INFINITY;
    let mut c2 = 0.0f64;
    for &x in &grid {
        let v = model.evaluate(&[x]).unwrap();
        c1 = c1.max(v.v00 - v.v11);
        c2 = c2.max(v.v01);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 8;
    let bn = 1.0 / n as f64;
    for _ in 0..200 {
        let q: Vec<f64> = (0..n).map(|_| grid[rng.gen_range(0..grid.len())]).collect();
        let f = BondFactors::compute(&model, &q, bn).unwrap();
        for k in 0..=n / 2 {
            for ell in enumerate_kink_sequences(n, k).unwrap() {
                let m = (c2 * bn).cosh();
                let bound = c1.max(0.0).exp() * (m * c2 * bn).powi(2 * k as i32);
                assert!(weight_ratio(&ell, &f) <= bound * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn factorized_ratio_matches_direct_hamiltonian_difference() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 1..=6 {
        for _ in 0..200 {
            let state = random_state(&mut rng, n, 1.0);
            let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
            let h = extended_hamiltonian(&state, &f).unwrap();
            let mut reference = state.clone();
            reference.ell = SurfaceIndexSequence::zeros(n);
            let h0 = extended_hamiltonian(&reference, &f).unwrap();
            let direct = (-state.beta_n * (h - h0)).exp();
            let factored = weight_ratio(&state.ell, &f);
            assert!(
                ((factored - direct) / direct).abs() <= 1e-12,
                "N = {n}: {factored} vs {direct}"
            );
        }
    }
}

#[test]
fn w_estimator_examples() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = random_state(&mut rng, 6, 1.0);
    let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();

    let identity = obs_values(&Observable::identity(), &state.q);
    for ell in [
        state.ell.clone(),
        SurfaceIndexSequence::zeros(6),
        SurfaceIndexSequence::ones(6),
    ] {
        assert_relative_eq!(w_estimator(&ell, &f, &identity), 1.0, epsilon = 1e-15);
    }

    fn a00(q: &[f64]) -> f64 {
        q[0] * q[0]
    }
    fn zero(_: &[f64]) -> f64 {
        0.0
    }
    let diag = Observable::new(crate::model::FnObservable {
        a00,
        a11: a00,
        a01: zero,
    });
    let values = obs_values(&diag, &state.q);
    let mean_sq = state.q.iter().map(|x| x * x).sum::<f64>() / 6.0;
    assert_relative_eq!(
        w_estimator(&SurfaceIndexSequence::zeros(6), &f, &values),
        mean_sq,
        max_relative = 1e-14
    );
}

#[test]
fn w_estimator_on_reference_sequence() {
    // Kink-free bond: the flip exponent is β_N(V00 − mean) + ln tanh, so
    // the off-diagonal term carries tanh, not coth.
    let model = wells();
    let obs = Observable::new(MixedTrigObservable);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let state = random_state(&mut rng, 16, 1.0);
    let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
    let values = obs_values(&obs, &state.q);
    let bn = state.beta_n;
    let expected: f64 = state
        .q
        .iter()
        .map(|&x| {
            let v = model.evaluate(&[x]).unwrap();
            let a = MixedTrigObservable.values(&[x]);
            a.a00 - (bn * v.v01).tanh() * (bn * (v.v00 - 0.5 * (v.v00 + v.v11))).exp() * a.a01
        })
        .sum::<f64>()
        / 16.0;
    let got = w_estimator(&SurfaceIndexSequence::zeros(16), &f, &values);
    assert_relative_eq!(got, expected, max_relative = 1e-13);

    // The same quantity straight from two Hamiltonian evaluations per bead.
    let mut direct = 0.0;
    let zeros = SurfaceIndexSequence::zeros(16);
    let s0 = RingPolymerState::new(state.q.clone(), state.p.clone(), zeros, 1.0, 1).unwrap();
    for k in 0..16 {
        let gap = bond_element(&s0, &f, k, 0, 0) - bond_element(&s0, &f, k, 1, 0);
        direct += values[k].a00 - (bn * gap).exp() * values[k].a01;
    }
    assert_relative_eq!(got, direct / 16.0, max_relative = 1e-9);

    // A kink is where the amplification lives: coth(β_N V01) ≈ N/(β V01).
    let mut one_kink_pair = vec![0u8; 16];
    one_kink_pair[3] = 1;
    let ell = SurfaceIndexSequence::new(one_kink_pair).unwrap();
    let v = f.potential[2];
    let coth = 1.0 / f.tanh[2];
    assert_relative_eq!(
        f.flip_exponent(2, 0, 1).exp(),
        coth * (bn * (v.mean() - v.v11)).exp(),
        max_relative = 1e-12
    );
    assert!(w_estimator(&ell, &f, &values).is_finite());
}

#[test]
fn b0_examples() {
    let model = PotentialModel::new(
        HarmonicPair {
            dim: 1,
            stiffness: 1.0,
            offset0: 0.2,
            offset1: 0.2,
            coupling: 0.4,
        },
        1.0,
    )
    .unwrap();
    let q: Vec<f64> = vec![0.1, -0.4, 0.9, 1.3];
    let f = BondFactors::compute(&model, &q, 0.25).unwrap();
    assert_eq!(sub_integrand_b(&f, 0).unwrap(), 2.0);

    let wells = wells();
    let f = BondFactors::compute(&wells, &q, 0.25).unwrap();
    let shift: f64 = f.potential.iter().map(|v| v.v11 - v.v00).sum();
    let b0 = sub_integrand_b(&f, 0).unwrap();
    assert_relative_eq!(b0, 1.0 + (-0.25 * shift).exp(), max_relative = 1e-15);
    let c1 = f
        .potential
        .iter()
        .map(|v| v.v00 - v.v11)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(b0 > 1.0 && b0 <= 1.0 + (c1 * 1.0).exp());
}

#[test]
fn identity_level_zero_a_is_two_for_symmetric_wells() {
    let model = PotentialModel::new(
        ConstantPotential {
            dim: 1,
            v00: 0.5,
            v11: 0.5,
            v01: 0.1,
        },
        1.0,
    )
    .unwrap();
    let q = vec![0.0, 1.0, 2.0];
    let f = BondFactors::compute(&model, &q, 1.0 / 3.0).unwrap();
    let values = obs_values(&Observable::identity(), &q);
    assert_relative_eq!(
        sub_integrand_a(&f, &values, 0).unwrap(),
        2.0,
        epsilon = 1e-15
    );
}

#[test]
fn level_out_of_range() {
    let f = BondFactors::compute(&wells(), &[0.0; 5], 0.2).unwrap();
    let values = vec![MixedTrigObservable.values(&[0.0]); 5];
    assert!(sub_integrand_b(&f, 3).is_err());
    assert!(level_sum(&f, &values, 3, LevelEvaluator::Transfer).is_err());
    let mut tables = LevelTables::from_factors(&f, None);
    assert!(tables.level(1, LevelEvaluator::Enumerate, true).is_err());
}

#[test]
fn level_sums_match_brute_force_over_all_sequences() {
    let model = wells();
    let obs = Observable::new(MixedTrigObservable);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in [2usize, 3, 5, 8] {
        let state = random_state(&mut rng, n, 1.0);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let values = obs_values(&obs, &state.q);
        let mut a = vec![0.0; n / 2 + 1];
        let mut b = vec![0.0; n / 2 + 1];
        for mask in 0u32..(1 << n) {
            let bits: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            let ell = SurfaceIndexSequence::new(bits).unwrap();
            let r = weight_ratio(&ell, &f);
            a[ell.kinks() / 2] += w_estimator(&ell, &f, &values) * r;
            b[ell.kinks() / 2] += r;
        }
        for eval in [LevelEvaluator::Enumerate, LevelEvaluator::Transfer] {
            let sums = level_sums(&f, &values, n / 2, eval).unwrap();
            for k in 0..=n / 2 {
                assert_relative_eq!(sums[k].a, a[k], max_relative = 1e-12, epsilon = 1e-300);
                assert_relative_eq!(sums[k].b, b[k], max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }
}

#[test]
fn global_flip_covariance() {
    let model = wells();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let state = random_state(&mut rng, 9, 1.0);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let ell = &state.ell;
        let comp = ell.complement();
        assert_eq!(
            comp.kink_positions().collect::<Vec<_>>(),
            ell.kink_positions().collect::<Vec<_>>()
        );
        let ratio = weight_ratio(&comp, &f) / weight_ratio(ell, &f);
        let gap: f64 = (0..9)
            .map(|k| {
                f.bond_potential(k, comp.get(k), comp.next(k))
                    - f.bond_potential(k, ell.get(k), ell.next(k))
            })
            .sum();
        assert_relative_eq!(ratio, (-state.beta_n * gap).exp(), max_relative = 1e-12);
    }
}

#[test]
fn level_decay_along_typical_configurations() {
    // Beads near the lower well bottom, as the reference dynamics visits.
    let model = wells();
    let obs = Observable::new(MixedTrigObservable);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 16;
    let mut mean_a = [0.0; 4];
    let mut mean_b = [0.0; 4];
    let draws = 200;
    for _ in 0..draws {
        let centre: f64 = rng.gen_range(-0.5..0.8);
        let q: Vec<f64> = (0..n).map(|_| centre + rng.gen_range(-0.3..0.3)).collect();
        let f = BondFactors::compute(&model, &q, 1.0 / n as f64).unwrap();
        let values = obs_values(&obs, &q);
        let sums = level_sums(&f, &values, 3, LevelEvaluator::Transfer).unwrap();
        for k in 0..4 {
            mean_a[k] += sums[k].a.abs() / draws as f64;
            mean_b[k] += sums[k].b / draws as f64;
        }
    }
    // B_1/B_0 is only about 1/3 at N = 16; the drop steepens with k.
    for k in 0..3 {
        assert!(mean_a[k + 1] < mean_a[k], "{mean_a:?}");
        assert!(mean_b[k + 1] < 0.5 * mean_b[k], "{mean_b:?}");
    }
    assert!(
        mean_b[3] < 0.1 * mean_b[2] && mean_b[2] < 0.1 * mean_b[1],
        "{mean_b:?}"
    );
}

#[test]
fn tables_reuse_across_updates() {
    let model = wells();
    let obs = Observable::new(MixedTrigObservable);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut tables = LevelTables::new();
    for _ in 0..5 {
        let state = random_state(&mut rng, 10, 1.0);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let values = obs_values(&obs, &state.q);
        tables.update(&f, Some(&values));
        let a = tables.level(2, LevelEvaluator::Enumerate, true).unwrap();
        let b = level_sum(&f, &values, 2, LevelEvaluator::Enumerate).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(
            tables.ratio(&state.ell),
            weight_ratio(&state.ell, &f),
            max_relative = 1e-14
        );
    }
}

fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<u8>)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluators_agree((q, _p, _bits) in arb_case(), beta in 0.3f64..4.0) {
        let model = wells();
        let n = q.len();
        let f = BondFactors::compute(&model, &q, beta / n as f64).unwrap();
        let values = obs_values(&Observable::new(MixedTrigObservable), &q);
        let e = level_sums(&f, &values, n / 2, LevelEvaluator::Enumerate).unwrap();
        let t = level_sums(&f, &values, n / 2, LevelEvaluator::Transfer).unwrap();
        for k in 0..=n / 2 {
            prop_assert!((e[k].a - t[k].a).abs() <= 1e-12 * (1e-300 + e[k].a.abs().max(e[k].b)));
            prop_assert!((e[k].b - t[k].b).abs() <= 1e-12 * e[k].b);
            let single = level_sum(&f, &values, k, LevelEvaluator::Transfer).unwrap();
            prop_assert!((single.b - t[k].b).abs() <= 1e-12 * t[k].b);
        }
    }

    #[test]
    fn momentum_independence((q, p, bits) in arb_case(), other in prop::collection::vec(-4.0f64..4.0, 10)) {
        let model = wells();
        let n = q.len();
        let ell = SurfaceIndexSequence::new(bits).unwrap();
        let s1 = RingPolymerState::new(q.clone(), p, ell.clone(), 1.0, 1).unwrap();
        let s2 = RingPolymerState::new(q.clone(), other[..n].to_vec(), ell.clone(), 1.0, 1).unwrap();
        let f1 = BondFactors::compute(&model, &s1.q, s1.beta_n).unwrap();
        let f2 = BondFactors::compute(&model, &s2.q, s2.beta_n).unwrap();
        prop_assert_eq!(weight_ratio(&ell, &f1), weight_ratio(&ell, &f2));
        for k in 0..=n / 2 {
            prop_assert_eq!(sub_integrand_b(&f1, k).unwrap(), sub_integrand_b(&f2, k).unwrap());
        }
    }

    #[test]
    fn cyclic_rotation_invariance((q, p, bits) in arb_case(), shift in 0usize..10) {
        let model = wells();
        let obs = Observable::new(MixedTrigObservable);
        let n = q.len();
        let state = RingPolymerState::new(q, p, SurfaceIndexSequence::new(bits).unwrap(), 1.0, 1).unwrap();
        let rotated = state.rotate_left(shift);
        let f = BondFactors::compute(&model, &state.q, state.beta_n).unwrap();
        let fr = BondFactors::compute(&model, &rotated.q, rotated.beta_n).unwrap();
        let h = extended_hamiltonian(&state, &f).unwrap();
        let hr = extended_hamiltonian(&rotated, &fr).unwrap();
        prop_assert!((h - hr).abs() <= 1e-12 * (1.0 + h.abs()));
        let w = w_estimator_at(&state, &model, &obs).unwrap();
        let wr = w_estimator_at(&rotated, &model, &obs).unwrap();
        prop_assert!((w - wr).abs() <= 1e-12 * (1.0 + w.abs()));
        let v = obs_values(&obs, &state.q);
        let vr = obs_values(&obs, &rotated.q);
        let s = level_sums(&f, &v, n / 2, LevelEvaluator::Enumerate).unwrap();
        let sr = level_sums(&fr, &vr, n / 2, LevelEvaluator::Enumerate).unwrap();
        for k in 0..=n / 2 {
            prop_assert!((s[k].b - sr[k].b).abs() <= 1e-12 * s[k].b);
            prop_assert!((s[k].a - sr[k].a).abs() <= 1e-12 * (s[k].a.abs() + s[k].b));
        }
    }
}

#[test]
fn constant_observable_level_sums_scale_with_b() {
    let model = wells();
    let q = vec![0.2, 0.4, -0.1, 0.0];
    let f = BondFactors::compute(&model, &q, 0.25).unwrap();
    let c = Observable::new(ConstantObservable {
        a00: 3.0,
        a11: 3.0,
        a01: 0.0,
    });
    let values = obs_values(&c, &q);
    for s in level_sums(&f, &values, 2, LevelEvaluator::Transfer).unwrap() {
        assert_relative_eq!(s.a, 3.0 * s.b, max_relative = 1e-14);
    }
}

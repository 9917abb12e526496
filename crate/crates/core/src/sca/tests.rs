use super::*;
use crate::channel::{sample_channels, GeometryParams, UpaShape};
use crate::rng::SeedStream;
use rand::Rng;
use std::f64::consts::PI;

fn layer1() -> LayerSpec {
    LayerSpec::lenet5().remove(0)
}

fn channels(seed: u64, n_t: usize, k: usize) -> CMatrix {
    let array = UpaShape::for_antennas(n_t).unwrap();
    sample_channels(&SeedStream::new(seed), k, array, &GeometryParams::inf_sh()).unwrap().h
}

fn problem(seed: u64, n_t: usize, k: usize, eps: f64, lambda: f64, sp: &SystemParams) -> LayerProblem {
    LayerProblem::new(channels(seed, n_t, k), &vec![eps; k], &layer1(), sp, lambda).unwrap()
}

fn feasible(prob: &LayerProblem, d: &PhyDesign) -> bool {
    let tol = 1e-7;
    d.gains.iter().zip(&d.beta).enumerate().all(|(k, (a, b))| {
        (a * b).norm() >= prob.u[k] * (1.0 - tol) && a.norm() <= prob.a_max * (1.0 + tol) && b.norm() <= prob.beta_max * (1.0 + tol)
    }) && norm_sqr(&d.f) <= prob.power_ratio * (1.0 + tol)
}

#[test]
fn beta_unit_gain() {
    let b = optimal_beta(C64::new(1.0, 0.0), 1.0, 2.0).unwrap();
    assert!((b - C64::new(1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn beta_conjugates_phase() {
    let a = C64::from_polar(0.5, PI / 3.0);
    let b = optimal_beta(a, 1.0, 3.0).unwrap();
    assert!((b - C64::from_polar(2.0, -PI / 3.0)).norm() < 1e-12);
    // Smallest feasible |β| on a grid over [0, 3].
    let n = 10_000;
    let best = (0..n)
        .map(|i| 3.0 * i as f64 / (n - 1) as f64)
        .filter(|m| a.norm() * m >= 1.0 - 1e-12)
        .fold(f64::INFINITY, f64::min);
    assert!((best - b.norm()).abs() <= 3.0 / (n - 1) as f64);
}

#[test]
fn beta_weak_gain_is_infeasible() {
    assert!(matches!(optimal_beta(C64::new(0.1, 0.0), 1.0, 2.0), Err(Error::InfeasibleClient { .. })));
}

#[test]
fn mrt_norm_before_downscale() {
    let sp = SystemParams::reference();
    // Tiny channels so the saturation rescale never triggers.
    let h = channels(3, 16, 4) * C64::new(1e-9, 0.0);
    let sub = subspace_reduce(&h).unwrap();
    let b0 = mrt_init(&sub.h_tilde, &sp);
    assert!((norm(&b0) - 251.188_643).abs() < 1e-3);
}

#[test]
fn mrt_single_client_aligned() {
    let sp = SystemParams::reference();
    let h = channels(5, 8, 1) * C64::new(1e-9, 0.0);
    let sub = subspace_reduce(&h).unwrap();
    let b0 = mrt_init(&sub.h_tilde, &sp);
    let hv: Vec<C64> = sub.h_tilde.column(0).iter().copied().collect();
    let cos = dotc(&hv, &b0).norm() / (norm(&hv) * norm(&b0));
    assert!((cos - 1.0).abs() < 1e-12);
}

#[test]
fn mrt_respects_saturation() {
    let sp = SystemParams::reference();
    for seed in 0..20 {
        let h = channels(seed, 64, 6) * C64::new(1e3, 0.0);
        let sub = subspace_reduce(&h).unwrap();
        let b0 = mrt_init(&sub.h_tilde, &sp);
        let peak = gains_of(&sub.h_tilde, &b0).iter().map(|a| a.norm()).fold(0.0, f64::max);
        assert!(peak <= sp.a_max() * (1.0 + 1e-12));
    }
}

#[test]
fn mrt_cancelling_channels_fall_back() {
    let sp = SystemParams::reference();
    let mut h = CMatrix::zeros(4, 2);
    h[(0, 0)] = C64::new(1e-6, 0.0);
    h[(0, 1)] = C64::new(-1e-6, 0.0);
    let sub = subspace_reduce(&h).unwrap();
    let b0 = mrt_init(&sub.h_tilde, &sp);
    assert!(b0.iter().all(|v| v.is_finite()) && norm(&b0) > 0.0);
}

#[test]
fn surrogate_touches_at_expansion_point() {
    let h = channels(7, 16, 5);
    let b: Vec<C64> = (0..16).map(|i| C64::new((i as f64).sin(), (i as f64).cos()) * 50.0).collect();
    let s = build_surrogate(&b, &h);
    for (ub, a) in s.eval(&h, &b).iter().zip(gains_of(&h, &b)) {
        assert!((ub - a.norm_sqr()).abs() <= 1e-12 * a.norm_sqr());
    }
}

#[test]
fn surrogate_is_global_lower_bound() {
    let mut rng = SeedStream::new(11).substream("test", 0);
    let h = channels(11, 4, 3);
    let draw = |rng: &mut crate::rng::StreamRng| -> Vec<C64> {
        (0..4).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 100.0).collect()
    };
    for _ in 0..100_000 / 3 {
        let bi = draw(&mut rng);
        let b = draw(&mut rng);
        let s = build_surrogate(&bi, &h);
        for (ub, a) in s.eval(&h, &b).iter().zip(gains_of(&h, &b)) {
            assert!(*ub <= a.norm_sqr() * (1.0 + 1e-12) + 1e-18);
        }
    }
}

#[test]
fn surrogate_at_origin_is_zero() {
    let h = channels(2, 8, 3);
    let s = build_surrogate(&vec![C64::new(0.0, 0.0); 8], &h);
    let b: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
    assert!(s.eval(&h, &b).iter().all(|v| *v == 0.0));
}

#[test]
fn subproblem_single_client_hits_saturation() {
    let sp = SystemParams::reference();
    let prob = problem(21, 16, 1, 0.1, 0.0, &sp);
    let sub = subspace_reduce(&prob.h).unwrap();
    let mut b = initial_point(&sub, &prob).unwrap();
    for _ in 0..3 {
        let s = build_surrogate(&b, &sub.h_tilde);
        b = solve_subproblem(&s, &sub.h_tilde, &prob, &BarrierOptions::default()).unwrap().b;
    }
    let a = gains_of(&sub.h_tilde, &b)[0];
    let target = prob.chi[0] / (prob.a_max * prob.a_max);
    let got = prob.objective(&[a], norm_sqr(&b));
    assert!(got >= target * (1.0 - 1e-12) && got <= target * (1.0 + 1e-6), "{got} vs {target}");
}

#[test]
fn subproblem_power_only_is_least_norm() {
    let sp = SystemParams::reference();
    let mut prob = problem(13, 16, 3, 0.1, 1.0, &sp);
    prob.chi = vec![0.0; 3];
    let sub = subspace_reduce(&prob.h).unwrap();
    let b_i = initial_point(&sub, &prob).unwrap();
    let s = build_surrogate(&b_i, &sub.h_tilde);
    let out = solve_subproblem(&s, &sub.h_tilde, &prob, &BarrierOptions::default()).unwrap();
    // At the optimum every tangent floor is active: least-norm solution of
    // Re{a_k* h̃_k^H b} = (t_k + |a_k|²)/2.
    let r = sub.rank;
    let mut a = nalgebra::DMatrix::zeros(3, 2 * r);
    let mut rhs = nalgebra::DVector::zeros(3);
    for k in 0..3 {
        let ak = s.gains[k];
        for i in 0..r {
            let c = ak.conj() * sub.h_tilde[(i, k)].conj();
            a[(k, i)] = c.re;
            a[(k, r + i)] = -c.im;
        }
        rhs[k] = (prob.gain_floor_sq(k) + ak.norm_sqr()) / 2.0;
    }
    let ls = a.clone().pseudo_inverse(1e-14).unwrap() * rhs;
    let ls = from_real(ls.as_slice());
    let err = ls.iter().zip(&out.b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    assert!(err <= 1e-4 * norm(&ls), "err {err} vs {}", norm(&ls));
}

#[test]
fn stationary_point_returned_unchanged() {
    let sp = SystemParams::reference();
    let prob = problem(17, 32, 4, 0.1, 0.0, &sp);
    let d = solve_layer(&prob, &ScaOptions::default()).unwrap();
    let s = build_surrogate(&d.b, &subspace_reduce(&prob.h).unwrap().h_tilde);
    let h_tilde = subspace_reduce(&prob.h).unwrap().h_tilde;
    let opts = BarrierOptions { active_tol: 1e-2, ..BarrierOptions::default() };
    let out = solve_subproblem(&s, &h_tilde, &prob, &opts).unwrap();
    assert_eq!(out.status, SubproblemStatus::Stationary);
    assert_eq!(out.b, d.b);
}

#[test]
fn precheck_rejects_unreachable_gain() {
    let sp = SystemParams::reference();
    // ε this small demands more than a_max β_max.
    let prob = problem(1, 16, 3, 1e-7, 0.5, &sp);
    match solve_layer(&prob, &ScaOptions::default()) {
        Err(Error::LayerInfeasible { clients, .. }) => assert_eq!(clients, vec![0, 1, 2]),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn design_meets_constraints_and_descends() {
    let sp = SystemParams::reference().with_lambda(1e-12);
    for seed in 0..10 {
        let prob = problem(100 + seed, 64, 4, 0.1, 1e-12, &sp);
        let d = solve_layer(&prob, &ScaOptions::default()).unwrap();
        assert!(feasible(&prob, &d));
        let mut prev = d.initial_objective;
        for f in &d.objective_trace {
            assert!(*f <= prev + 1e-9 * prev.abs());
            prev = *f;
        }
        for (k, (a, b)) in d.gains.iter().zip(&d.beta).enumerate() {
            assert!(((a * b).norm() - prob.u[k]).abs() <= 1e-9 * prob.u[k]);
        }
        let sub = subspace_reduce(&prob.h).unwrap();
        let lifted = sub.lift(&d.b);
        assert!(lifted.iter().zip(&d.f).all(|(x, y)| x == y));
    }
}

#[test]
fn lambda_zero_certificate() {
    let mut sp = SystemParams::reference();
    sp.p_wmax_w *= 100.0;
    for seed in 0..10 {
        let prob = problem(200 + seed, 64, 6, 0.1, 0.0, &sp);
        let d = solve_layer(&prob, &ScaOptions::default()).unwrap();
        let e0 = lambda0_bound(&prob);
        assert!(d.objective() >= e0 * (1.0 - 1e-12) && d.objective() <= 1.1 * e0, "{} vs {e0}", d.objective());
    }
}

#[test]
fn reduced_and_full_traces_overlap() {
    let sp = SystemParams::reference();
    for seed in 0..3 {
        let prob = problem(300 + seed, 64, 5, 0.1, 1e-12, &sp);
        let a = solve_layer(&prob, &ScaOptions::default()).unwrap();
        let b = solve_layer_full(&prob, &ScaOptions::default()).unwrap();
        assert!(trace_gap(&a.objective_trace, &b.objective_trace) < 1e-6);
    }
}

#[test]
fn chi_scaling_keeps_direction() {
    let sp = SystemParams::reference();
    for seed in 0..3 {
        let prob = problem(400 + seed, 32, 4, 0.1, 0.0, &sp);
        let mut scaled = prob.clone();
        for c in &mut scaled.chi {
            *c *= 37.0;
        }
        let a = solve_layer(&prob, &ScaOptions::default()).unwrap();
        let b = solve_layer(&scaled, &ScaOptions::default()).unwrap();
        let cos = dotc(&a.f, &b.f).norm() / (norm(&a.f) * norm(&b.f));
        assert!(cos.min(1.0).acos() < 1e-6);
    }
}


mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use netcbf::analysis::{active_time_curve, lipschitz_pairs, rank_one_norm, sample_domain};
use netcbf::estimation::DirtyDerivative;
use netcbf::filter::{eval_direction, eval_margins, static_filter};
use netcbf::grid::{
    build_ieee14, dc_power_injection, generic_filter, grid_filter_formula, GridParams,
};
use netcbf::norms::log_norm;
use netcbf::qp::{qp_oracle, QpMethod};
use netcbf::{DomainBox, Matrix, Norm, SubsystemLayout, Vector};

use common::{random_instance, random_square};

fn norm_strategy() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::Two), Just(Norm::Inf)]
}

proptest! {
    #[test]
    fn split_then_stack_is_identity(
        dims in prop::collection::vec((1usize..4, 1usize..3), 1..6),
        seed in any::<u64>(),
    ) {
        let layout = SubsystemLayout::new(
            dims.iter().map(|d| d.0).collect(),
            dims.iter().map(|d| d.1).collect(),
        ).unwrap();
        let x = sample_domain(&DomainBox::symmetric(layout.state_dim(), 1.0).unwrap(), 1, seed).remove(0);
        let blocks = layout.split_state(&x).unwrap();
        prop_assert_eq!(blocks.len(), layout.count());
        for (i, b) in blocks.iter().enumerate() {
            prop_assert_eq!(b.len(), layout.state_dims()[i]);
        }
        prop_assert_eq!(layout.stack_state(&blocks).unwrap(), x);
    }

    #[test]
    fn closed_form_matches_qp_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let s = static_filter(&inst.spec, &inst.model, &inst.x, &inst.w).unwrap().s;
        let theta = qp_oracle(&inst.spec, &inst.model, &inst.x, &inst.w, QpMethod::ProjectedGradient).unwrap();
        prop_assert!((&s - &theta).norm() <= 1e-8, "closed form {s} vs oracle {theta}");
    }

    #[test]
    fn filtered_field_meets_barrier_condition(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let eval = static_filter(&inst.spec, &inst.model, &inst.x, &inst.w).unwrap();
        let margins = eval_margins(&inst.spec, &inst.model, &inst.x, &inst.w).unwrap();
        let rhs = inst.model.eval_filtered_rhs(&inst.x, &eval.s, &inst.w).unwrap();
        let layout = inst.model.layout();
        for i in 0..layout.count() {
            let Some(barrier) = inst.spec.barrier(i) else {
                prop_assert!(layout.input_block(&eval.s, i).iter().all(|v| *v == 0.0));
                continue;
            };
            let xi = layout.state_block(&inst.x, i);
            let r = layout.state_range(i);
            let lhs = barrier.grad(&xi).dot(&rhs.rows(r.start, r.len())) + barrier.alpha().eval(barrier.h(&xi));
            prop_assert!(lhs >= -1e-9, "subsystem {i}: {lhs}");
            if margins[i] >= 0.0 {
                prop_assert!(layout.input_block(&eval.s, i).iter().all(|v| *v == 0.0));
            } else {
                // Active constraints hold with equality.
                prop_assert!(lhs.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn direction_is_right_inverse(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let layout = inst.model.layout();
        for i in 0..layout.count() {
            let Some(barrier) = inst.spec.barrier(i) else { continue };
            let xi = layout.state_block(&inst.x, i);
            let b_i = inst.model.input_block(i);
            let d = eval_direction(barrier, b_i, &xi).unwrap();
            let gain = b_i.transpose() * barrier.grad(&xi);
            prop_assert!((d.dot(&gain) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_norm_subadditive_and_below_induced(seed in any::<u64>(), n in 1usize..6, norm in norm_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_square(&mut rng, n);
        let b = random_square(&mut rng, n);
        let (ma, mb) = (log_norm(&a, norm).unwrap(), log_norm(&b, norm).unwrap());
        prop_assert!(log_norm(&(&a + &b), norm).unwrap() <= ma + mb + 1e-10);
        prop_assert!(ma <= norm.induced(&a) + 1e-10);
        prop_assert!(-norm.induced(&a) <= ma + 1e-10);
        prop_assert!((log_norm(&(&a * 2.5), norm).unwrap() - 2.5 * ma).abs() < 1e-9);
    }

    #[test]
    fn rank_one_norm_matches_dense(seed in any::<u64>(), n in 1usize..5, m in 1usize..5, norm in norm_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_square(&mut rng, n.max(m)).column(0).rows(0, n).into_owned();
        let g = random_square(&mut rng, m.max(n)).column(0).rows(0, m).into_owned();
        let dense: Matrix = &d * g.transpose();
        prop_assert!((rank_one_norm(&d, &g, norm) - norm.induced(&dense)).abs() < 1e-10);
    }

    #[test]
    fn active_time_splits_additively(
        head in prop::collection::vec(any::<bool>(), 1..50),
        tail in prop::collection::vec(any::<bool>(), 1..50),
        dt in 1e-4f64..1e-1,
    ) {
        let whole: Vec<bool> = head.iter().chain(&tail).copied().collect();
        let curve = active_time_curve(&whole, dt);
        prop_assert_eq!(curve[0], 0.0);
        prop_assert!(curve.windows(2).all(|w| w[1] >= w[0]));
        // Left rectangles: the last sample never contributes.
        let expected = whole[..whole.len() - 1].iter().filter(|a| **a).count() as f64 * dt;
        prop_assert!((curve.last().unwrap() - expected).abs() < 1e-12);
        let h = head.len();
        let split = active_time_curve(&head, dt)[h - 1] + if head[h - 1] { dt } else { 0.0 }
            + active_time_curve(&tail, dt)[tail.len() - 1];
        prop_assert!((curve.last().unwrap() - split).abs() < 1e-12);
    }

    #[test]
    fn injection_invariant_to_uniform_angle_shift(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let params = GridParams::ieee14();
        let theta = sample_domain(&DomainBox::symmetric(14, 1.0).unwrap(), 1, seed).remove(0);
        let shifted: Vec<f64> = theta.iter().map(|t| t + shift).collect();
        let p = dc_power_injection(&params, theta.as_slice()).unwrap();
        let q = dc_power_injection(&params, &shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(p.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn grid_formula_matches_generic_filter(seed in any::<u64>(), all_buses in any::<bool>()) {
        let mut params = GridParams::ieee14();
        params.filter_all_buses = all_buses;
        let case = build_ieee14(params).unwrap();
        let mut states = sample_domain(case.model.domain(), 2, seed);
        // Shrink toward the nominal point so both active and inactive buses occur.
        let x = states.remove(0) * 0.2;
        let w = case.disturbance.eval(2.0);
        let a = grid_filter_formula(&case, &x, &w).unwrap();
        let b = generic_filter(&case, &x, &w).unwrap();
        prop_assert!((&a - &b).amax() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn lipschitz_pairs_extend_as_prefix(seed in any::<u64>(), short in 1usize..40, extra in 1usize..40) {
        let domain = DomainBox::symmetric(3, 2.0).unwrap();
        let a = lipschitz_pairs(&domain, short, seed);
        let b = lipschitz_pairs(&domain, short + extra, seed);
        prop_assert_eq!(&a[..], &b[..short]);
        for (x, y) in &b {
            prop_assert!(domain.contains(x.as_slice()) && domain.contains(y.as_slice()));
        }
    }

    #[test]
    fn dirty_derivative_tracks_ramp(slope in -5.0f64..5.0, tau_d in 0.005f64..0.05) {
        let dt = tau_d / 20.0;
        let mut est = DirtyDerivative::new(&Vector::zeros(1), tau_d).unwrap();
        let steps = (40.0 * tau_d / dt) as usize;
        let mut last = 0.0;
        for k in 0..steps {
            last = est.step(&Vector::from_element(1, slope * k as f64 * dt), dt).unwrap()[0];
        }
        prop_assert!((last - slope).abs() < 1e-6 * (1.0 + slope.abs()));
    }
}

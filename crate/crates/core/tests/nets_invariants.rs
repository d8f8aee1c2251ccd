use proptest::prelude::*;

use gcbf_core::nets::init;
use gcbf_core::world::build_graph;
use gcbf_core::{DynamicsModel, ModelKind};

fn states_strategy(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec((0.0..2.0f64, 0.0..2.0f64, -0.8..0.8f64, -0.8..0.8f64), n)
        .prop_map(|v| v.into_iter().map(|(a, b, c, d)| vec![a, b, c, d]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cbf_is_equivariant_under_agent_relabeling(
        states in states_strategy(6),
        seed in 0u64..1000,
        shift in 1usize..6,
    ) {
        let m = DynamicsModel::new(ModelKind::SimpleCar);
        let (h, pi) = init(ModelKind::SimpleCar, seed, 0.125).unwrap();
        let n = states.len();
        let order: Vec<usize> = (0..n).map(|k| (k + shift) % n).collect();
        let permuted: Vec<Vec<f64>> = order.iter().map(|&k| states[k].clone()).collect();
        let u_nom: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64 * 0.1, -0.2]).collect();
        let u_perm: Vec<Vec<f64>> = order.iter().map(|&k| u_nom[k].clone()).collect();

        let g = build_graph(&m, &states, &[], 1.0);
        let gp = build_graph(&m, &permuted, &[], 1.0);
        let (base, hp) = (h.eval(&g), h.eval(&gp));
        let (ub, up) = (pi.eval(&g, &u_nom), pi.eval(&gp, &u_perm));
        for (pos, &k) in order.iter().enumerate() {
            prop_assert!((hp[pos] - base[k]).abs() < 1e-10);
            for d in 0..2 {
                prop_assert!((up[pos][d] - ub[k][d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn outputs_ignore_agents_beyond_the_sensing_radius(
        states in states_strategy(5),
        far in prop::collection::vec((0.0..1.0f64, -0.8..0.8f64), 5),
        seed in 0u64..1000,
    ) {
        let m = DynamicsModel::new(ModelKind::SimpleCar);
        let (h, pi) = init(ModelKind::SimpleCar, seed, 0.125).unwrap();
        let mut moved = states.clone();
        for (x, (dx, v)) in moved.iter_mut().zip(&far).skip(1) {
            if (x[0] - states[0][0]).hypot(x[1] - states[0][1]) > 1.0 {
                x[0] = states[0][0] + 1.5 + dx;
                x[3] = *v;
            }
        }
        let g = build_graph(&m, &states, &[], 1.0);
        let gm = build_graph(&m, &moved, &[], 1.0);
        let u0 = [0.3, 0.1];
        prop_assert_eq!(h.eval_agent(&g, 0).0, h.eval_agent(&gm, 0).0);
        prop_assert_eq!(pi.eval_agent(&g, 0, &u0), pi.eval_agent(&gm, 0, &u0));
    }
}

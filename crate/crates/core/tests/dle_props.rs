mod common;

use common::{connected_graph, split_system, SplitSystem};
use distreach::dle::{dle_init, dle_iterate, dle_solve, dle_step, DleProblem};
use distreach::graph::{Graph, GraphSchedule};
use distreach::linalg::Vector;
use proptest::prelude::*;

fn system_and_graph() -> impl Strategy<Value = (SplitSystem, Graph)> {
    split_system(5, 6).prop_flat_map(|s| {
        let n = s.agents;
        (Just(s), connected_graph(n))
    })
}

fn problem(s: &SplitSystem) -> DleProblem {
    DleProblem::split(&s.a, &s.b, &s.owner, s.agents).unwrap()
}

fn max_error(est: &[Vector], x: &Vector) -> f64 {
    est.iter().map(|e| (e - x).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterates_stay_on_local_solution_sets((s, g) in system_and_graph()) {
        let p = problem(&s);
        let mut st = dle_init(&p).unwrap();
        for _ in 0..30 {
            st = dle_step(&st, &g);
            for i in 0..p.agent_count() {
                prop_assert!(p.local_residual(i, &st.estimates[i]) <= 1e-9);
            }
        }
    }

    #[test]
    fn worst_error_never_grows((s, g) in system_and_graph()) {
        let p = problem(&s);
        let mut st = dle_init(&p).unwrap();
        let mut prev = max_error(&st.estimates, &s.x);
        for _ in 0..50 {
            st = dle_step(&st, &g);
            let e = max_error(&st.estimates, &s.x);
            prop_assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn converges_to_the_unique_solution((s, g) in system_and_graph()) {
        let sol = dle_solve(&problem(&s), &GraphSchedule::Static(g), 1e-11, 200_000).unwrap();
        prop_assert!(max_error(&sol.estimates, &s.x) <= 1e-6);
        prop_assert!(sol.report.jointly_connected);
        let h = &sol.report.disagreement_history;
        prop_assert_eq!(h.len(), sol.report.iterations + 1);
    }

    #[test]
    fn relabeling_agents_permutes_estimates(
        (s, g, perm) in system_and_graph().prop_flat_map(|(s, g)| {
            let n = s.agents;
            (Just(s), Just(g), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        })
    ) {
        let p = problem(&s);
        let owner2: Vec<usize> = s.owner.iter().map(|&o| perm[o]).collect();
        let p2 = DleProblem::split(&s.a, &s.b, &owner2, s.agents).unwrap();
        let edges2: Vec<(usize, usize)> = g.edges().map(|(a, b)| (perm[a], perm[b])).collect();
        let g2 = Graph::new(s.agents, &edges2).unwrap();
        let mut st = dle_init(&p).unwrap();
        let mut st2 = dle_init(&p2).unwrap();
        for _ in 0..20 {
            st = dle_step(&st, &g);
            st2 = dle_step(&st2, &g2);
        }
        for i in 0..s.agents {
            prop_assert!((&st.estimates[i] - &st2.estimates[perm[i]]).amax() <= 1e-10);
        }
    }

    #[test]
    fn identical_inputs_give_identical_iterates((s, g) in system_and_graph()) {
        let sched = GraphSchedule::Static(g);
        let a = dle_iterate(dle_init(&problem(&s)).unwrap(), &sched, 0, 1e-9, 10_000).unwrap();
        let b = dle_iterate(dle_init(&problem(&s)).unwrap(), &sched, 0, 1e-9, 10_000).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Geometric decay: the log of the error is close to a line.
#[test]
fn error_decays_geometrically() {
    let runner_cfg = ProptestConfig::with_cases(16);
    let mut runner = proptest::test_runner::TestRunner::new(runner_cfg);
    runner
        .run(&system_and_graph(), |(s, g)| {
            let p = problem(&s);
            let mut st = dle_init(&p).unwrap();
            let mut logs = vec![max_error(&st.estimates, &s.x).ln()];
            while logs.last().unwrap().exp() > 1e-9 && logs.len() < 100_000 {
                st = dle_step(&st, &g);
                logs.push(max_error(&st.estimates, &s.x).ln());
            }
            if logs.len() >= 10 {
                let n = logs.len() as f64;
                let mx = (n - 1.0) / 2.0;
                let my = logs.iter().sum::<f64>() / n;
                let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
                for (k, y) in logs.iter().enumerate() {
                    let dx = k as f64 - mx;
                    sxy += dx * (y - my);
                    sxx += dx * dx;
                    syy += (y - my) * (y - my);
                }
                prop_assert!(sxy < 0.0);
                prop_assert!(sxy * sxy / (sxx * syy) >= 0.9, "R^2 {}", sxy * sxy / (sxx * syy));
            }
            Ok(())
        })
        .unwrap();
}

mod common;

use common::prepared;
use pwa_hier_core::pipeline::{self, RunOptions};
use pwa_hier_core::polytope::MEMBERSHIP_SLACK;
use pwa_hier_core::simulator::{self, ReferenceSchedule, SimError};

#[test]
fn rk4_is_exact_for_cubic_forcing() {
    // ẋ = 4t³ integrates to t⁴; Simpson weights are exact for cubics.
    let x = simulator::step_rk4(|t, _, o| o[0] = 4.0 * t * t * t, &[0.0], 0.0, 0.5).unwrap();
    assert!((x[0] - 0.0625).abs() < 1e-15);
    let x = simulator::step_rk4(|t, _, o| o[0] = 4.0 * t * t * t, &[1.0], 1.0, 0.25).unwrap();
    assert!((x[0] - (1.0 + 1.25f64.powi(4) - 1.0)).abs() < 1e-14);
}

#[test]
fn rk4_matches_exponential_to_fifth_order() {
    let h = 0.1;
    let x = simulator::step_rk4(|_, x, o| o[0] = -x[0], &[1.0], 0.0, h).unwrap();
    let series = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
    assert!((x[0] - series).abs() < 1e-15);
    assert!((x[0] - (-h).exp()).abs() < h.powi(5) / 100.0);
}

#[test]
fn rk4_reports_blow_up() {
    let r = simulator::step_rk4(|_, _, o| o[0] = f64::INFINITY, &[0.0], 0.0, 0.1);
    assert!(matches!(r, Err(SimError::NonFiniteState(_))));
}

#[test]
fn reference_schedule_is_right_continuous() {
    let r = ReferenceSchedule::new(vec![(0.0, vec![1.0]), (2.0, vec![-3.0])]).unwrap();
    assert_eq!(r.value(1.999), &[1.0]);
    assert_eq!(r.value(2.0), &[-3.0]);
    assert_eq!(r.value(50.0), &[-3.0]);
    assert_eq!(r.sup_norm(), 3.0);
    assert_eq!(r.switches_in(1.0, 3.0).collect::<Vec<_>>(), vec![2.0]);
    assert_eq!(r.switches_in(2.0, 3.0).count(), 0);
    assert!(matches!(ReferenceSchedule::new(vec![]), Err(SimError::EmptySchedule)));
    assert!(matches!(
        ReferenceSchedule::new(vec![(0.0, vec![1.0]), (0.0, vec![2.0])]),
        Err(SimError::NonMonotoneTimes(..))
    ));
}

#[test]
fn sample_count_includes_both_ends() {
    assert_eq!(simulator::sample_count(12.0, 1e-3), 12001);
    assert_eq!(simulator::sample_count(1.0, 0.3), 4);
}

#[test]
fn runs_are_deterministic() {
    let prep = prepared("case2.model");
    let sc = pipeline::build_scenario(&prep, &RunOptions::default()).unwrap();
    let a = simulator::run_scenario(&sc).unwrap();
    let b = simulator::run_scenario(&sc).unwrap();
    assert_eq!(a, b);
    assert_eq!(simulator::trajectory_csv(&a), simulator::trajectory_csv(&b));
}

#[test]
fn recorded_modes_contain_the_state() {
    for name in ["case1.model", "case2.model"] {
        let prep = prepared(name);
        let sc = pipeline::build_scenario(&prep, &RunOptions::default()).unwrap();
        let traj = simulator::run_scenario(&sc).unwrap();
        let cells = prep.model.system.partition().cells();
        let mut modes_seen = std::collections::BTreeSet::new();
        for s in &traj.samples {
            assert!(cells[s.mode_i].contains(&s.x1, 10.0 * MEMBERSHIP_SLACK), "{name} t={}", s.t);
            assert!(prep.joint.index_of(s.mode_i, s.mode_j).is_some());
            modes_seen.insert(s.mode_i);
        }
        assert!(modes_seen.len() >= 3, "{name} visits only {modes_seen:?}");
    }
}

/// Crossings are located by bisection rather than snapped to the grid, so
/// halving the sample step barely moves the terminal state.
#[test]
fn crossings_do_not_depend_on_sample_grid() {
    let prep = prepared("case2.model");
    let rows = pipeline::sweep_prepared(
        &prep,
        pipeline::SweepParam::Step,
        &[1e-3, 5e-4],
        pwa_hier_core::Execution::Sequential,
    )
    .unwrap();
    assert!(rows[1].terminal_diff < 1e-8, "terminal diff {}", rows[1].terminal_diff);
}

#[test]
fn switch_samples_change_mode_at_next_sample() {
    let prep = prepared("case2.model");
    let sc = pipeline::build_scenario(&prep, &RunOptions::default()).unwrap();
    let traj = simulator::run_scenario(&sc).unwrap();
    let flagged = traj.samples.iter().filter(|s| s.switch_ahead).count();
    assert!(flagged >= 4);
    for w in traj.samples.windows(2) {
        if (w[0].mode_i, w[0].mode_j) != (w[1].mode_i, w[1].mode_j) {
            assert!(w[0].switch_ahead, "unflagged switch at t={}", w[0].t);
        }
    }
}

#[test]
fn invalid_horizon_is_rejected() {
    let prep = prepared("case1.model");
    let opts = RunOptions {
        t_end: Some(0.0),
        ..RunOptions::default()
    };
    let sc = pipeline::build_scenario(&prep, &opts).unwrap();
    assert!(matches!(simulator::run_scenario(&sc), Err(SimError::EmptyTrajectory { .. })));
    let opts = RunOptions {
        step: Some(-1e-3),
        ..RunOptions::default()
    };
    let sc = pipeline::build_scenario(&prep, &opts).unwrap();
    assert!(matches!(simulator::run_scenario(&sc), Err(SimError::InvalidScenario(_))));
}

#[test]
fn seeded_initial_error_is_reproducible_and_bounded() {
    let prep = prepared("case1.model");
    let opts = RunOptions {
        seed: Some(9),
        ..RunOptions::default()
    };
    let a = pipeline::build_scenario(&prep, &opts).unwrap();
    let b = pipeline::build_scenario(&prep, &opts).unwrap();
    assert_eq!(a.x1_0, b.x1_0);
    let other = pipeline::build_scenario(&prep, &RunOptions { seed: Some(10), ..opts }).unwrap();
    assert_ne!(a.x1_0, other.x1_0);
}

#[test]
fn csv_exports_have_expected_shape() {
    let prep = prepared("case2.model");
    let opts = RunOptions {
        t_end: Some(0.5),
        step: Some(0.01),
        ..RunOptions::default()
    };
    let traj = simulator::run_scenario(&pipeline::build_scenario(&prep, &opts).unwrap()).unwrap();
    let csv = simulator::trajectory_csv(&traj);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x1_1,x1_2,x1_3,x1_4,x2_1,x2_2,u1_1,u1_2,mode_i,mode_j,err,V,b,delta"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 51);
    assert!(rows.iter().all(|r| r.split(',').count() == 15));
    let bounds = simulator::bounds_csv(&traj);
    assert_eq!(bounds.lines().count(), 52);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    simulator::export_trajectory(&traj, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
}

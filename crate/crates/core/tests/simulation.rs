mod common;

use common::synthetic;
use dempc::sim::{compute_metrics, run_mpc, SimMode, SimOptions};

const BOUND_TOL: f64 = 1e-7;
/// Ramp limit in pu/h, tight enough to bind overnight.
const TIGHT_RAMP: f64 = 0.002;

fn centralized(intervals: usize, warm_start: bool) -> SimOptions {
    SimOptions { mode: SimMode::Centralized, warm_start, max_intervals: Some(intervals), ..SimOptions::default() }
}

#[test]
fn applied_dispatch_respects_limits_and_ramps() {
    let (mut case, day) = synthetic();
    for g in &mut case.fleet.gc {
        g.r_min = -TIGHT_RAMP;
        g.r_max = TIGHT_RAMP;
    }
    let result = run_mpc(&case, &day, &centralized(48, true)).unwrap();
    let dt = case.horizon.dt;
    let mut binding = 0;
    for pair in result.intervals.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        assert!(!cur.held, "interval {} held", cur.interval);
        for (g, unit) in case.fleet.gc.iter().enumerate() {
            let p = cur.applied.p_gc[g];
            assert!(p >= unit.p_min - BOUND_TOL && p <= unit.p_max + BOUND_TOL, "unit {g} at {p}");
            let step = p - prev.applied.p_gc[g];
            assert!(step >= dt * unit.r_min - BOUND_TOL && step <= dt * unit.r_max + BOUND_TOL, "unit {g} ramps {step}");
            if (step.abs() - dt * unit.r_max).abs() < 1e-6 {
                binding += 1;
            }
        }
    }
    let max_step = result.intervals.windows(2).map(|w| (&w[1].applied.p_gc - &w[0].applied.p_gc).amax()).fold(0.0, f64::max);
    assert!(binding > 0, "the tightened ramp limit never binds, max step {max_step:e} vs {:e}", dt * TIGHT_RAMP);
}

#[test]
fn warm_starts_take_no_more_iterations_than_cold() {
    let (case, day) = synthetic();
    let warm = compute_metrics(&run_mpc(&case, &day, &centralized(36, true)).unwrap());
    let cold = compute_metrics(&run_mpc(&case, &day, &centralized(36, false)).unwrap());
    let (w, c) = (warm.mean_central_iterations.unwrap(), cold.mean_central_iterations.unwrap());
    assert!(w <= c, "warm {w} vs cold {c}");
    assert_eq!(warm.held_intervals + cold.held_intervals, 0);
}

#[test]
fn forecast_noise_changes_the_plan_but_not_the_balance() {
    let (case, day) = synthetic();
    let options = |seed| SimOptions { forecast_noise: 0.05, seed, ..centralized(12, true) };
    let a = run_mpc(&case, &day, &options(1)).unwrap();
    let b = run_mpc(&case, &day, &options(2)).unwrap();
    let again = run_mpc(&case, &day, &options(1)).unwrap();
    assert_eq!(a, again);
    assert_ne!(a.intervals[3].applied, b.intervals[3].applied);
    for r in [&a, &b] {
        assert!(compute_metrics(r).energy_balance_error.abs() <= 1e-9);
    }
}

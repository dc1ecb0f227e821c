mod common;

use common::{horizon_problem, synthetic};
use dempc::aladin::{consensus_residual, partition_problem, stitch, update_penalties, AladinConfig, AladinState};
use dempc::grid::{build_admittance, Branch, Bus, Complex64, Network};
use dempc::nlp::NlpInstance;
use dempc::powerflow::{injections, VoltageState};
use nalgebra::DVector;
use proptest::prelude::*;

/// Radial feeder: bus `i > 0` hangs off `parents[i - 1] % i`.
fn feeder(parents: &[usize], impedances: &[(f64, f64, f64)]) -> Network {
    let n = parents.len() + 1;
    let mut buses: Vec<Bus> = (0..n).map(|i| Bus::new(i, 0.9, 1.1, 0.0, 0.0)).collect();
    buses[0].is_reference = true;
    let branches = parents
        .iter()
        .zip(impedances)
        .enumerate()
        .map(|(k, (&p, &(r, x, b)))| {
            let mut br = Branch::new(p % (k + 1), k + 1, r, x);
            br.shunt_susceptance = b;
            br
        })
        .collect();
    Network { base_mva: 10.0, buses, branches }
}

fn feeder_strategy(shunts: bool) -> impl Strategy<Value = (Network, VoltageState)> {
    (1usize..9)
        .prop_flat_map(move |m| {
            let b_max = if shunts { 0.05 } else { 0.0 };
            (
                prop::collection::vec(0usize..64, m),
                prop::collection::vec((1e-3..0.2f64, 1e-3..0.4f64, 0.0..=b_max), m),
                prop::collection::vec((0.85..1.15f64, -0.6..0.6f64), m + 1),
            )
        })
        .prop_map(|(parents, z, v)| {
            let net = feeder(&parents, &z);
            let state = VoltageState {
                magnitude: DVector::from_iterator(v.len(), v.iter().map(|p| p.0)),
                angle: DVector::from_iterator(v.len(), v.iter().map(|p| p.1)),
            };
            (net, state)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn injections_match_complex_power((net, v) in feeder_strategy(true)) {
        let y = build_admittance(&net).unwrap();
        let s = injections(&v, &y).unwrap();
        let phasors = v.phasors();
        let current = &y * &phasors;
        for i in 0..net.n_bus() {
            let si: Complex64 = phasors[i] * current[i].conj();
            let scale = 1.0 + si.norm();
            prop_assert!((s.p_inj[i] - si.re).abs() <= 1e-12 * scale * 10.0, "p at {}", i);
            prop_assert!((s.q_inj[i] - si.im).abs() <= 1e-12 * scale * 10.0, "q at {}", i);
        }
    }

    #[test]
    fn resistive_lines_absorb_power((net, v) in feeder_strategy(true)) {
        let y = build_admittance(&net).unwrap();
        let s = injections(&v, &y).unwrap();
        let phasors = v.phasors();
        let series_loss: f64 = net
            .branches
            .iter()
            .map(|br| {
                let i = (phasors[br.from_bus] - phasors[br.to_bus]) * br.series_admittance();
                i.norm_sqr() * br.resistance
            })
            .sum();
        let total = s.p_inj.sum();
        prop_assert!(total >= -1e-12);
        prop_assert!((total - series_loss).abs() <= 1e-10 * (1.0 + series_loss));
    }

    #[test]
    fn flat_profile_without_shunts_injects_nothing((net, _) in feeder_strategy(false), angle in -3.0..3.0f64) {
        let y = build_admittance(&net).unwrap();
        let mut v = VoltageState::flat(net.n_bus());
        v.angle.fill(angle);
        let s = injections(&v, &y).unwrap();
        prop_assert!(s.p_inj.amax() <= 1e-12 && s.q_inj.amax() <= 1e-12);
    }

    #[test]
    fn penalties_follow_a_capped_geometric_schedule(
        rho0 in 1e-2..1e4f64,
        mu0 in 1e-2..1e4f64,
        r_rho in 1.0..3.0f64,
        r_mu in 1.0..3.0f64,
        cap_rho in 1e-2..1e6f64,
        cap_mu in 1e-2..1e6f64,
        rounds in 1usize..60,
    ) {
        let config = AladinConfig { rho0, mu0, r_rho, r_mu, rho_max: cap_rho, mu_max: cap_mu, ..AladinConfig::default() };
        let mut state = AladinState { z: Vec::new(), lambda: DVector::zeros(0), rho: rho0, mu: mu0, iteration: 0, log: Vec::new() };
        let mut expected = (rho0, mu0);
        for _ in 0..rounds {
            let before = (state.rho, state.mu);
            update_penalties(&mut state, &config);
            expected = ((expected.0 * r_rho).min(cap_rho), (expected.1 * r_mu).min(cap_mu));
            prop_assert_eq!((state.rho, state.mu), expected);
            prop_assert!(state.rho <= cap_rho.max(before.0) && state.mu <= cap_mu.max(before.1));
            prop_assert!(state.rho >= before.0.min(cap_rho) && state.mu >= before.1.min(cap_mu));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn consistent_copies_satisfy_consensus(seed in prop::collection::vec(0.0..1.0f64, 1..64), steps in 1usize..4) {
        let (case, day) = synthetic();
        let empc = horizon_problem(&case, &day.forecasts(40, steps), steps);
        let lo = empc.lower_bounds();
        let hi = empc.upper_bounds();
        let z = DVector::from_fn(empc.n_vars(), |i, _| {
            let u = seed[i % seed.len()];
            let (a, b) = (lo[i].max(-2.0), hi[i].min(2.0));
            a + u * (b - a)
        });
        let subs = partition_problem(&empc, &case.partition).unwrap();
        let locals: Vec<_> = subs.iter().map(|s| s.restrict(&z)).collect();
        prop_assert!(consensus_residual(&subs, &locals).amax() <= 1e-12);
        prop_assert_eq!(stitch(&empc, &subs, &locals), z);

        let mut moved = locals.clone();
        let (_, j, _) = subs[0].consensus[0];
        moved[0][j] += 0.25;
        prop_assert!(consensus_residual(&subs, &moved).amax() > 0.0);
    }
}

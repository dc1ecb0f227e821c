//! Synthetic 13-bus feeder with one day of five-minute profiles.
//!
//! The layout is radial: a trunk 0-1-2-3-4 in area 1, a tie 4-5, and a
//! lateral network 5-6-7-8 / 6-9-10-11-12 in area 2. The substation unit sits
//! at bus 0 and a small dispatchable unit at bus 9. Seven loads, each with a
//! curtailable share of 20%, and two 300 kW solar plants at buses 4 and 6.
//! All series are deterministic.

use std::f64::consts::PI;

use crate::aladin::{AladinConfig, Partition};
use crate::empc::ReactiveVg;

use super::case::{BranchRecord, BusDevice, BusRecord, CaseFile, DcRecord, EmpcSection, GcRecord, NetworkSection};
use super::profile::{format_timestamp, ProfileRecord, SeriesKind};

pub const SYNTHETIC_PEAK_KW: f64 = 6000.0;
pub const SYNTHETIC_PV_PEAK_KW: f64 = 300.0;
pub const SYNTHETIC_INTERVALS: usize = 288;
const STEP_MINUTES: u32 = 5;

/// Multiplies every branch impedance; tuned so that the day-long losses land
/// at about 5% of served energy.
pub const IMPEDANCE_SCALE: f64 = 1.3;

const DESCRIPTION: &str = "Synthetic 13-bus radial feeder, two control areas split at branch 4-5.
Peak demand 6000 kW over seven loads; 300 kW solar plants at buses 4 and 6.
The dispatchable unit at bus 9 is an addition so that area 2 owns generation.
Load, solar and price profiles are synthetic shapes, not measured data.";

/// (from, to, r, x) before scaling, per-unit on 10 MVA.
const BRANCHES: [(usize, usize, f64, f64); 12] = [
    (0, 1, 0.040, 0.020),
    (1, 2, 0.030, 0.016),
    (2, 3, 0.030, 0.015),
    (3, 4, 0.030, 0.015),
    (4, 5, 0.025, 0.013),
    (5, 6, 0.025, 0.013),
    (6, 7, 0.035, 0.017),
    (7, 8, 0.040, 0.020),
    (6, 9, 0.030, 0.015),
    (9, 10, 0.035, 0.017),
    (10, 11, 0.040, 0.020),
    (11, 12, 0.045, 0.022),
];

#[derive(Clone, Copy)]
enum Shape {
    Residential,
    Commercial,
}

/// (bus, shape, relative size, power factor).
const LOADS: [(usize, Shape, f64, f64); 7] = [
    (2, Shape::Commercial, 1.2, 0.93),
    (3, Shape::Residential, 0.9, 0.95),
    (7, Shape::Residential, 1.0, 0.96),
    (8, Shape::Commercial, 0.8, 0.92),
    (10, Shape::Residential, 1.1, 0.95),
    (11, Shape::Residential, 0.7, 0.97),
    (12, Shape::Commercial, 0.9, 0.94),
];

/// Quadratic disutility of curtailment in $/h per kW²: shedding 200 kW adds
/// 0.04 $/kWh to the marginal cost.
pub const CURTAILMENT_QUADRATIC: f64 = 1e-4;

const PV_BUSES: [usize; 2] = [4, 6];

fn bump(h: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((h - center) / width).powi(2)).exp()
}

fn load_shape(shape: Shape, h: f64) -> f64 {
    match shape {
        Shape::Residential => 0.45 + 0.05 * (2.0 * PI * (h - 15.0) / 24.0).cos() + 0.30 * bump(h, 8.0, 1.3) + 0.55 * bump(h, 20.0, 1.8),
        Shape::Commercial => 0.35 + 0.60 * bump(h, 13.5, 3.2) + 0.10 * bump(h, 9.0, 1.0),
    }
}

fn pv_shape(h: f64) -> f64 {
    if (6.0..=19.0).contains(&h) {
        bump(h, 12.5, 2.4)
    } else {
        0.0
    }
}

/// Locational price in $/kWh: night trough with morning and evening peaks.
fn price(h: f64) -> f64 {
    0.066 + 0.004 * bump(h, 13.0, 3.0) + 0.014 * bump(h, 8.5, 1.2) + 0.024 * bump(h, 19.75, 1.5)
}

fn hour(i: usize) -> f64 {
    (i as u32 * STEP_MINUTES) as f64 / 60.0
}

/// Build the synthetic case and its day profile (kW, kVAr, $/kWh).
pub fn generate_lebanon_synthetic() -> (CaseFile, Vec<ProfileRecord>) {
    let buses = (0..13)
        .map(|id| BusRecord {
            id,
            v_min: if id == 0 { 1.0 } else { 0.90 },
            v_max: if id == 0 { 1.05 } else { 1.10 },
            x_min_kwh: None,
            x_max_kwh: None,
            reference: id == 0,
        })
        .collect();
    let branches = BRANCHES
        .iter()
        .map(|&(from, to, r, x)| BranchRecord {
            from,
            to,
            resistance: r * IMPEDANCE_SCALE,
            reactance: x * IMPEDANCE_SCALE,
            shunt_susceptance: 0.0,
        })
        .collect();
    let gc = vec![
        GcRecord {
            bus: 0,
            c2: 2e-6,
            c1: 0.06,
            c0: 0.0,
            p_min_kw: 0.0,
            p_max_kw: 10_000.0,
            q_min_kvar: -6000.0,
            q_max_kvar: 6000.0,
            ramp_down_kw_per_h: -30_000.0,
            ramp_up_kw_per_h: 30_000.0,
        },
        GcRecord {
            bus: 9,
            c2: 1e-5,
            c1: 0.075,
            c0: 0.0,
            p_min_kw: 0.0,
            p_max_kw: 1500.0,
            q_min_kvar: -1000.0,
            q_max_kvar: 1000.0,
            ramp_down_kw_per_h: -6000.0,
            ramp_up_kw_per_h: 6000.0,
        },
    ];
    let case = CaseFile {
        description: DESCRIPTION.to_string(),
        network: NetworkSection { base_mva: 10.0 },
        buses,
        branches,
        gc,
        gs: PV_BUSES.iter().map(|&bus| BusDevice { bus }).collect(),
        ds: LOADS.iter().map(|l| BusDevice { bus: l.0 }).collect(),
        dc: LOADS.iter().map(|l| DcRecord { bus: l.0, capacity_fraction: 0.2 }).collect(),
        partition: Partition::new(vec![(0..5).collect(), (5..13).collect()]),
        empc: EmpcSection {
            steps: 5,
            dt_hours: STEP_MINUTES as f64 / 60.0,
            x_bound_kwh: None,
            x0_kwh: None,
            reactive_vg: ReactiveVg::PowerFactor,
        },
        aladin: AladinConfig::default(),
    };
    (case, synthetic_profile())
}

fn synthetic_profile() -> Vec<ProfileRecord> {
    let raw: Vec<Vec<f64>> =
        (0..SYNTHETIC_INTERVALS).map(|i| LOADS.iter().map(|l| l.2 * load_shape(l.1, hour(i))).collect()).collect();
    let peak = raw.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    let scale = SYNTHETIC_PEAK_KW / peak;
    let pv_peak = (0..SYNTHETIC_INTERVALS).map(|i| pv_shape(hour(i))).fold(0.0, f64::max);

    let mut out = Vec::new();
    let mut push = |i: usize, device: usize, series: SeriesKind, value: f64| {
        out.push(ProfileRecord { timestamp: format_timestamp(i as u32 * STEP_MINUTES), device, series, value })
    };
    for (d, l) in LOADS.iter().enumerate() {
        let tan = (1.0 / (l.3 * l.3) - 1.0).sqrt();
        for (i, row) in raw.iter().enumerate() {
            let p = row[d] * scale;
            push(i, d, SeriesKind::PDs, p);
            push(i, d, SeriesKind::QDs, p * tan);
        }
        for (i, row) in raw.iter().enumerate() {
            let p = row[d] * scale;
            push(i, d, SeriesKind::PDc, p);
            push(i, d, SeriesKind::QDc, p * tan);
            push(i, d, SeriesKind::Price, price(hour(i)));
            push(i, d, SeriesKind::DcA, CURTAILMENT_QUADRATIC);
        }
    }
    for d in 0..PV_BUSES.len() {
        for i in 0..SYNTHETIC_INTERVALS {
            push(i, d, SeriesKind::PGs, SYNTHETIC_PV_PEAK_KW * pv_shape(hour(i)) / pv_peak);
        }
    }
    out
}

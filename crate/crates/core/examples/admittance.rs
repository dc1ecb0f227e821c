//! Build the bus admittance matrix of a small feeder and validate it.
//!
//! ```bash
//! cargo run --example admittance
//! ```

use dempc::grid::{build_admittance, validate_network, Branch, Bus, DeviceFleet, DsUnit, GcUnit, Network};

fn main() -> dempc::Result<()> {
    let mut buses: Vec<Bus> = (0..4).map(|i| Bus::new(i, 0.95, 1.05, 0.0, 0.0)).collect();
    buses[0].is_reference = true;
    let mut lateral = Branch::new(1, 3, 0.03, 0.08);
    lateral.shunt_susceptance = 0.002;
    let network = Network {
        base_mva: 10.0,
        buses,
        branches: vec![Branch::new(0, 1, 0.01, 0.05), Branch::new(1, 2, 0.02, 0.06), lateral],
    };
    let fleet = DeviceFleet {
        gc: vec![GcUnit {
            bus: 0,
            c2: 10.0,
            c1: 50.0,
            c0: 0.0,
            p_min: 0.0,
            p_max: 2.0,
            q_min: -1.0,
            q_max: 1.0,
            r_min: -1.0,
            r_max: 1.0,
        }],
        ds: (1..4).map(|bus| DsUnit { bus }).collect(),
        ..DeviceFleet::default()
    };

    let diagnostics = validate_network(&network, &fleet);
    if diagnostics.is_empty() {
        println!("network and fleet are consistent");
    }
    for d in &diagnostics {
        println!("diagnostic: {d}");
    }

    let y = build_admittance(&network)?;
    println!("Y (pu), {} x {}:", y.nrows(), y.ncols());
    for i in 0..y.nrows() {
        let row: Vec<String> = (0..y.ncols()).map(|j| format!("{:>8.3}{:+8.3}j", y[(i, j)].re, y[(i, j)].im)).collect();
        println!("  {}", row.join("  "));
    }
    let row_sums: Vec<f64> = (0..y.nrows()).map(|i| y.row(i).iter().sum::<dempc::grid::Complex64>().norm()).collect();
    println!("|row sums| (line charging only): {row_sums:.4?}");
    Ok(())
}

//! Run the receding-horizon loop over part of the synthetic day in both
//! modes and write the result tables.
//!
//! ```bash
//! cargo run --release --example receding_horizon_day -- 48 out/day
//! ```
//!
//! Arguments: number of intervals (default 48, use 288 for the full day) and
//! an output directory (default: a temporary directory).

use std::path::PathBuf;

use dempc::io::{day_profile, generate_lebanon_synthetic, write_run, Manifest};
use dempc::sim::{run_mpc, SimOptions};

fn main() -> dempc::Result<()> {
    let mut args = std::env::args().skip(1);
    let intervals: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(48);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dempc-day"));

    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let day = day_profile(&records, &case.fleet, file.base_kw())?;
    let options = SimOptions { max_intervals: Some(intervals), ..SimOptions::default() };
    let result = run_mpc(&case, &day, &options)?;

    let kw = result.base_kw;
    for r in result.intervals.iter().step_by(12) {
        println!(
            "interval {:>3}: demand {:>7.1} kW, generation {:>7.1} kW, VG {:>6.2} kW, losses {:>6.1} kW",
            r.interval,
            r.demand * kw,
            r.generation * kw,
            r.virtual_generation * kw,
            r.losses * kw
        );
    }

    let manifest = Manifest::new("receding_horizon_day", &PathBuf::from("synthetic"), &PathBuf::from("synthetic"), &file, &options);
    let (m, written) = write_run(&out, &result, &manifest)?;
    println!("max cost deviation {:.5} %, max consensus residual {:.2e}", m.max_deviation_pct, m.max_boundary_mismatch);
    println!("losses {:.2} % of served energy, energy balance error {:.1e} pu h", 100.0 * m.loss_fraction, m.energy_balance_error);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

//! Generate the synthetic 13-bus case and its day of profiles, print a
//! summary and write both files.
//!
//! ```bash
//! cargo run --example synthetic_case -- out/case
//! ```

use std::path::PathBuf;

use dempc::io::{day_profile, generate_lebanon_synthetic, load_case, save_case, write_profile};

fn main() -> dempc::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dempc-case"));
    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let kw = file.base_kw();

    println!("{}", file.description.trim_end());
    println!(
        "{} buses, {} branches, {} generators, {} curtailable loads, areas {:?}",
        case.network.n_bus(),
        case.network.branches.len(),
        case.fleet.gc.len(),
        case.fleet.dc.len(),
        case.partition.areas
    );
    let day = day_profile(&records, &case.fleet, kw)?;
    let demand: Vec<f64> = (0..day.n_intervals()).map(|t| day.p_ds.row(t).sum() * kw).collect();
    let peak = demand.iter().cloned().fold(f64::MIN, f64::max);
    let low = demand.iter().cloned().fold(f64::MAX, f64::min);
    println!("{} intervals, demand between {low:.0} and {peak:.0} kW", day.n_intervals());

    std::fs::create_dir_all(&dir)?;
    let case_path = dir.join("case.toml");
    save_case(&case_path, &file)?;
    write_profile(&dir.join("profiles.csv"), &records)?;
    assert_eq!(load_case(&case_path)?, case);
    println!("wrote {}", dir.display());
    Ok(())
}

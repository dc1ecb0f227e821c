//! Solve one EMPC horizon with ALADIN across the two control areas of the
//! synthetic feeder and compare against the centralized optimum.
//!
//! ```bash
//! cargo run --release --example aladin_two_area -- 100
//! ```

use dempc::aladin::{aladin_solve, partition_problem};
use dempc::empc::assemble_empc_with;
use dempc::io::{day_profile, generate_lebanon_synthetic};
use dempc::nlp::solve_nlp;
use dempc::sim::deviation_pct;

fn main() -> dempc::Result<()> {
    let t: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let day = day_profile(&records, &case.fleet, file.base_kw())?;
    let forecasts = day.forecasts(t, case.horizon.steps);
    let problem = assemble_empc_with(&case.network, &case.fleet, &forecasts, case.horizon, &case.x0, None, case.empc)?;

    for sub in partition_problem(&problem, &case.partition)? {
        println!(
            "area {}: buses {:?}, {} local variables, {} consensus entries",
            sub.area,
            case.partition.areas[sub.area],
            sub.n_vars(),
            sub.consensus.len()
        );
    }

    let central = solve_nlp(&problem, &problem.flat_start(), 1e-8, 200);
    let sol = aladin_solve(&problem, &case.partition, &case.aladin)?;
    println!("{:>4} {:>10} {:>10} {:>12} {:>12} {:>14}", "iter", "rho", "mu", "consensus", "change", "objective");
    for e in &sol.log {
        println!(
            "{:>4} {:>10.1} {:>10.1} {:>12.3e} {:>12.3e} {:>14.6}",
            e.iteration, e.rho, e.mu, e.consensus_residual, e.primal_change, e.objective
        );
    }
    println!("converged: {}", sol.converged);
    println!(
        "centralized {:.6} $/h, distributed {:.6} $/h, deviation {:.5} %",
        central.objective,
        sol.objective,
        deviation_pct(central.objective, sol.objective)
    );
    Ok(())
}

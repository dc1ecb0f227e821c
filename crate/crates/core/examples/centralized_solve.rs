//! Solve one EMPC horizon of the synthetic case with the interior-point
//! solver and print the predicted dispatch.
//!
//! ```bash
//! cargo run --release --example centralized_solve -- 144
//! ```
//!
//! The optional argument is the interval index (5-minute steps from midnight).

use std::time::Instant;

use dempc::empc::assemble_empc_with;
use dempc::io::{day_profile, generate_lebanon_synthetic};
use dempc::nlp::{kkt_residual, solve_nlp};

fn main() -> dempc::Result<()> {
    let t: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(144);
    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let day = day_profile(&records, &case.fleet, file.base_kw())?;
    let forecasts = day.forecasts(t, case.horizon.steps);
    let problem = assemble_empc_with(&case.network, &case.fleet, &forecasts, case.horizon, &case.x0, None, case.empc)?;
    println!("interval {t}: {} variables, {} equalities, T = {}", problem.n_vars(), problem.n_eqs(), problem.steps());

    let clock = Instant::now();
    let sol = solve_nlp(&problem, &problem.flat_start(), 1e-8, 200);
    println!(
        "{} ({:.2} s), objective {:.4} $/h, KKT residual {:.2e}",
        sol.message,
        clock.elapsed().as_secs_f64(),
        sol.objective,
        kkt_residual(&problem, &sol)
    );

    let kw = file.base_kw();
    let tr = problem.trajectory(&sol.primal);
    let losses = problem.losses(&sol.primal);
    println!("{:>4} {:>12} {:>12} {:>10} {:>10} {:>9}", "k", "P_GC kW", "P_VG kW", "min |V|", "losses kW", "x kWh");
    for (k, loss) in losses.iter().enumerate().take(problem.steps()) {
        let vmin = tr.vm.row(k).min();
        println!(
            "{k:>4} {:>12.1} {:>12.2} {:>10.4} {:>10.1} {:>9.2}",
            tr.p_gc.row(k).sum() * kw,
            tr.p_vg.row(k).sum() * kw,
            vmin,
            loss * kw,
            tr.x.row(k).sum() * kw
        );
    }
    Ok(())
}

//! Evaluate bus power injections and network losses on the synthetic feeder
//! at a flat profile and at a drooping voltage profile.
//!
//! ```bash
//! cargo run --example power_injections
//! ```

use dempc::grid::build_admittance;
use dempc::io::generate_lebanon_synthetic;
use dempc::powerflow::{injection_jacobian, injections, VoltageState};

fn main() -> dempc::Result<()> {
    let (file, _) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let y = build_admittance(&case.network)?;
    let n = case.network.n_bus();
    let kw = case.network.base_kw();

    let flat = VoltageState::flat(n);
    let s = injections(&flat, &y)?;
    println!("flat profile: total P {:.3e} kW, total Q {:.3} kvar", s.p_inj.sum() * kw, s.q_inj.sum() * kw);

    let mut droop = VoltageState::flat(n);
    for i in 1..n {
        droop.magnitude[i] = 1.0 - 0.004 * i as f64;
        droop.angle[i] = -0.003 * i as f64;
    }
    let s = injections(&droop, &y)?;
    println!("{:>4} {:>8} {:>9} {:>11} {:>11}", "bus", "|V|", "angle", "P_inj kW", "Q_inj kvar");
    for i in 0..n {
        println!(
            "{i:>4} {:>8.4} {:>9.5} {:>11.2} {:>11.2}",
            droop.magnitude[i],
            droop.angle[i],
            s.p_inj[i] * kw,
            s.q_inj[i] * kw
        );
    }
    println!("losses: {:.2} kW", s.p_inj.sum() * kw);

    let jac = injection_jacobian(&droop, &y)?;
    println!("injection Jacobian: {} x {}, {} nonzeros", jac.nrows(), jac.ncols(), jac.iter().filter(|v| **v != 0.0).count());
    Ok(())
}

//! Compare the analytic derivatives of the horizon problem and of each area
//! subproblem against central finite differences.
//!
//! ```bash
//! cargo run --release --example derivative_check
//! ```

use dempc::aladin::partition_problem;
use dempc::empc::assemble_empc_with;
use dempc::io::{day_profile, generate_lebanon_synthetic};
use dempc::nlp::{check_derivatives, NlpInstance};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturbed(center: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    center.map(|c| c + rng.random_range(-0.05..0.05))
}

fn main() -> dempc::Result<()> {
    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve()?;
    let day = day_profile(&records, &case.fleet, file.base_kw())?;
    let forecasts = day.forecasts(150, case.horizon.steps);
    let problem = assemble_empc_with(&case.network, &case.fleet, &forecasts, case.horizon, &case.x0, None, case.empc)?;
    let subs = partition_problem(&problem, &case.partition)?;

    let mut instances: Vec<(String, &dyn NlpInstance, DVector<f64>)> =
        vec![("horizon problem".into(), &problem, problem.flat_start())];
    for s in &subs {
        instances.push((format!("area {}", s.area), &s.region, s.restrict(&problem.flat_start())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, inst, center) in instances {
        let report = check_derivatives(inst, &perturbed(&center, &mut rng), 1e-6);
        println!(
            "{name}: {} entries, gradient {:.1e}, Jacobian {:.1e}, Hessian {:.1e}, {} flagged",
            report.entries_checked,
            report.max_gradient_error,
            report.max_jacobian_error,
            report.max_hessian_error,
            report.flags.len()
        );
    }
    Ok(())
}

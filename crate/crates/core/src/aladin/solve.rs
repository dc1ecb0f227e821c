use std::path::Path;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coordinator::{consensus_qp, update_iterates, update_penalties};
use super::local::{local_model, local_step, LocalResult, LocalSettings};
use super::{consensus_residual, partition_problem, stitch, AreaSubproblem, Partition};
use crate::empc::EmpcProblem;
use crate::error::{Error, Result};
use crate::nlp::KktPoint;

/// Weighting of the proximal term in the local subproblems.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Weight 1 on variables that enter a consensus row, 0 elsewhere.
    #[default]
    CoupledOnly,
    /// Weight 1 on every variable.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AladinConfig {
    pub rho0: f64,
    pub mu0: f64,
    pub r_rho: f64,
    pub r_mu: f64,
    pub rho_max: f64,
    pub mu_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub sigma: SigmaMode,
    /// Step sizes `[α₁, α₂, α₃]`.
    pub alphas: [f64; 3],
    /// Worker threads for the area solves; `None` uses the global pool.
    pub threads: Option<usize>,
    pub local: LocalSettings,
}

impl Default for AladinConfig {
    fn default() -> Self {
        Self {
            rho0: 1e2,
            mu0: 1e3,
            r_rho: 1.5,
            r_mu: 2.0,
            rho_max: 1e5,
            mu_max: 1e5,
            tol: 1e-4,
            max_iter: 100,
            sigma: SigmaMode::default(),
            alphas: [1.0; 3],
            threads: None,
            local: LocalSettings::default(),
        }
    }
}

impl AladinConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho0", self.rho0),
            ("mu0", self.mu0),
            ("rho_max", self.rho_max),
            ("mu_max", self.mu_max),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("aladin.{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.r_rho >= 1.0) || !(self.r_mu >= 1.0) {
            return Err(Error::Input(format!(
                "penalty growth factors must be at least 1, got r_rho = {}, r_mu = {}",
                self.r_rho, self.r_mu
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Input("aladin.max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AladinLogEntry {
    pub iteration: usize,
    pub rho: f64,
    pub mu: f64,
    pub consensus_residual: f64,
    pub primal_change: f64,
    pub objective: f64,
}

/// Iterate carried between ALADIN iterations.
#[derive(Debug, Clone)]
pub struct AladinState {
    /// Consensus iterate, one block per area.
    pub z: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub rho: f64,
    pub mu: f64,
    pub iteration: usize,
    pub log: Vec<AladinLogEntry>,
}

/// Initial consensus point, given on the centralized variable vector.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub lambda: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct AladinSolution {
    /// Owned entries of the local solutions on the centralized layout.
    pub primal: DVector<f64>,
    pub locals: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub consensus_residual: f64,
    pub primal_change: f64,
    pub log: Vec<AladinLogEntry>,
}

/// Proximal weights for one area.
pub fn sigma_weights(sub: &AreaSubproblem, mode: SigmaMode) -> DVector<f64> {
    match mode {
        SigmaMode::Identity => DVector::from_element(sub.n_vars(), 1.0),
        SigmaMode::CoupledOnly => {
            DVector::from_iterator(sub.n_vars(), sub.coupled_mask().into_iter().map(|c| if c { 1.0 } else { 0.0 }))
        }
    }
}

/// Run ALADIN from the flat start with zero multipliers.
pub fn aladin_solve(empc: &EmpcProblem, partition: &Partition, config: &AladinConfig) -> Result<AladinSolution> {
    let warm = WarmStart { z: empc.flat_start(), lambda: None };
    aladin_solve_from(empc, partition, config, &warm)
}

/// Run ALADIN from a given consensus point and optional multipliers.
pub fn aladin_solve_from(
    empc: &EmpcProblem,
    partition: &Partition,
    config: &AladinConfig,
    warm: &WarmStart,
) -> Result<AladinSolution> {
    config.validate()?;
    if warm.z.len() != empc.n_vars() {
        return Err(Error::Dimension(format!("warm start has {} entries, expected {}", warm.z.len(), empc.n_vars())));
    }
    let subs = partition_problem(empc, partition)?;
    let n_c = subs.first().map_or(0, |s| s.n_consensus);
    let lambda = match &warm.lambda {
        Some(l) if l.len() == n_c => l.clone(),
        Some(l) => return Err(Error::Dimension(format!("warm multipliers have {} entries, expected {n_c}", l.len()))),
        None => DVector::zeros(n_c),
    };
    let mut state = AladinState {
        z: subs.iter().map(|s| s.restrict(&warm.z)).collect(),
        lambda,
        rho: config.rho0,
        mu: config.mu0,
        iteration: 0,
        log: Vec::new(),
    };
    let sigmas: Vec<DVector<f64>> = subs.iter().map(|s| sigma_weights(s, config.sigma)).collect();
    let pool = match config.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Input(format!("cannot build thread pool: {e}")))?,
        ),
        None => None,
    };

    let mut warm_duals: Vec<Option<KktPoint>> = vec![None; subs.len()];
    let mut best: Option<(f64, Vec<DVector<f64>>, AladinLogEntry)> = None;
    let mut converged = false;

    while state.iteration < config.max_iter {
        state.iteration += 1;
        let it = state.iteration;
        let run = || -> Vec<Result<LocalResult>> {
            subs.par_iter()
                .enumerate()
                .map(|(a, sub)| {
                    local_step(
                        sub,
                        &state.z[a],
                        &state.lambda,
                        state.rho,
                        &sigmas[a],
                        warm_duals[a].as_ref(),
                        &config.local,
                        it,
                    )
                })
                .collect()
        };
        let results = match &pool {
            Some(p) => p.install(run),
            None => run(),
        };
        let locals = results.into_iter().collect::<Result<Vec<_>>>()?;

        let ys: Vec<DVector<f64>> = locals.iter().map(|l| l.y.clone()).collect();
        let consensus = consensus_residual(&subs, &ys).amax();
        let change = locals
            .iter()
            .zip(&state.z)
            .zip(&sigmas)
            .map(|((l, z), s)| (&l.y - z).component_mul(s).amax())
            .fold(0.0, f64::max);
        let objective: f64 = locals.iter().map(|l| l.objective).sum();
        let entry = AladinLogEntry {
            iteration: it,
            rho: state.rho,
            mu: state.mu,
            consensus_residual: consensus,
            primal_change: change,
            objective,
        };
        debug!(
            "aladin iteration {it}: consensus {consensus:.3e}, change {change:.3e}, objective {objective:.6}"
        );
        state.log.push(entry.clone());
        let merit = consensus.max(change);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, ys.clone(), entry));
        }
        if merit <= config.tol {
            converged = true;
            break;
        }

        let qp = consensus_qp(&subs, &locals, &state.lambda, state.mu)?;
        update_iterates(&mut state, &locals, &qp, config.alphas);
        update_penalties(&mut state, config);
        for (slot, loc) in warm_duals.iter_mut().zip(locals) {
            *slot = Some(loc.kkt);
        }
    }

    let (_, ys, entry) = best.expect("at least one iteration runs");
    Ok(AladinSolution {
        primal: stitch(empc, &subs, &ys),
        locals: ys,
        lambda: state.lambda,
        objective: entry.objective,
        converged,
        iterations: state.iteration,
        consensus_residual: entry.consensus_residual,
        primal_change: entry.primal_change,
        log: state.log,
    })
}

/// Consensus multipliers consistent with a centralized solution.
///
/// Each area's stationarity conditions at the restricted point are stacked
/// over the variables not held by an active bound and solved in the least
/// squares sense for the local equality multipliers and the shared `λ`.
/// Bound activity is judged with the centralized bound multipliers, copied
/// to owned and duplicated entries.
pub fn consensus_multipliers(
    empc: &EmpcProblem,
    partition: &Partition,
    central: &KktPoint,
    settings: &LocalSettings,
) -> Result<DVector<f64>> {
    let subs = partition_problem(empc, partition)?;
    let n_c = subs.first().map_or(0, |s| s.n_consensus);
    let models: Vec<LocalResult> = subs
        .iter()
        .map(|s| {
            let mut point = KktPoint::primal_only(&s.region, s.restrict(&central.primal));
            for j in 0..s.n_vars() {
                if let Some(c) = s.owned_index[j].or(s.duplicate_index[j]) {
                    point.lower_multipliers[j] = central.lower_multipliers[c];
                    point.upper_multipliers[j] = central.upper_multipliers[c];
                }
            }
            local_model(s, point, settings)
        })
        .collect();
    let n_rows: usize = models.iter().map(|m| m.active.iter().filter(|a| !**a).count()).sum();
    let n_kappa: usize = models.iter().map(|m| m.jacobian.nrows()).sum();
    let mut mat = DMatrix::zeros(n_rows, n_kappa + n_c);
    let mut rhs = DVector::zeros(n_rows);
    let (mut row0, mut col0) = (0, 0);
    for (sub, m) in subs.iter().zip(&models) {
        let mut pos = vec![usize::MAX; m.active.len()];
        let mut r = row0;
        for j in 0..m.active.len() {
            if !m.active[j] {
                pos[j] = r;
                rhs[r] = -m.gradient[j];
                for i in 0..m.jacobian.nrows() {
                    mat[(r, col0 + i)] = m.jacobian[(i, j)];
                }
                r += 1;
            }
        }
        for &(c, j, a) in &sub.consensus {
            if pos[j] != usize::MAX {
                mat[(pos[j], n_kappa + c)] += a;
            }
        }
        row0 = r;
        col0 += m.jacobian.nrows();
    }
    let sol = mat.svd(true, true).solve(&rhs, 1e-12).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(sol.rows(n_kappa, n_c).into_owned())
}

/// Write the iteration log as CSV.
pub fn write_iteration_log(path: &Path, log: &[AladinLogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aladin::consensus_qp;
    use crate::empc::fixtures::{small_case, small_forecasts};
    use crate::empc::{assemble_empc, HorizonConfig};
    use crate::nlp::{solve_nlp, NlpInstance};

    fn empc(steps: usize) -> EmpcProblem {
        let (net, fleet) = small_case(0.01);
        let f = small_forecasts(steps, &fleet);
        assemble_empc(&net, &fleet, &f, HorizonConfig { steps, dt: 1.0 / 12.0 }, &DVector::zeros(5), None).unwrap()
    }

    fn two_areas() -> Partition {
        Partition::new(vec![vec![0, 1, 2], vec![3, 4]])
    }

    #[test]
    fn single_area_converges_in_one_iteration() {
        let p = empc(2);
        let central = solve_nlp(&p, &p.flat_start(), 1e-9, 200);
        let sol = aladin_solve(&p, &Partition::single(5), &AladinConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!((&sol.primal - &central.primal).amax() <= 1e-6);
    }

    #[test]
    fn two_areas_reach_the_centralized_objective() {
        let p = empc(3);
        let central = solve_nlp(&p, &p.flat_start(), 1e-9, 200);
        let cfg = AladinConfig { tol: 1e-5, ..AladinConfig::default() };
        let sol = aladin_solve(&p, &two_areas(), &cfg).unwrap();
        assert!(sol.converged, "{:?}", sol.log.last());
        assert!(sol.consensus_residual <= 1e-5);
        let rel = (sol.objective - central.objective).abs() / central.objective.abs();
        assert!(rel <= 5e-4, "relative objective gap {rel}");
        assert!(p.eq_residual(&sol.primal).amax() <= 1e-3);
        let stitched_obj = p.objective(&sol.primal);
        assert!((stitched_obj - sol.objective).abs() <= 1e-9 * stitched_obj.abs().max(1.0));
    }

    #[test]
    fn iteration_log_is_independent_of_thread_count() {
        let p = empc(2);
        let run = |threads| {
            let cfg = AladinConfig { threads: Some(threads), ..AladinConfig::default() };
            aladin_solve(&p, &two_areas(), &cfg).unwrap()
        };
        let (a, b) = (run(1), run(2));
        assert_eq!(a.log, b.log);
        assert_eq!(a.primal, b.primal);
    }

    #[test]
    fn centralized_optimum_is_a_fixed_point() {
        let p = empc(2);
        let central = solve_nlp(&p, &p.flat_start(), 1e-10, 300);
        assert!(central.is_converged());
        let settings = LocalSettings { tol: 1e-10, ..LocalSettings::default() };
        let lambda = consensus_multipliers(&p, &two_areas(), &central, &settings).unwrap();
        let subs = partition_problem(&p, &two_areas()).unwrap();
        let locals: Vec<LocalResult> = subs
            .iter()
            .map(|s| {
                let z = s.restrict(&central.primal);
                let sigma = sigma_weights(s, SigmaMode::CoupledOnly);
                local_step(s, &z, &lambda, 1e2, &sigma, None, &settings, 1).unwrap()
            })
            .collect();
        for (s, l) in subs.iter().zip(&locals) {
            assert!((&l.y - s.restrict(&central.primal)).amax() <= 1e-6);
        }
        let qp = consensus_qp(&subs, &locals, &lambda, 1e3).unwrap();
        let step = qp.delta_y.iter().map(|d| d.amax()).fold(0.0, f64::max);
        assert!(step <= 1e-6, "first step {step:e}");
    }

    #[test]
    fn proximal_distance_shrinks_with_rho() {
        let p = empc(2);
        let subs = partition_problem(&p, &two_areas()).unwrap();
        let sub = &subs[1];
        let z = sub.restrict(&p.flat_start());
        let lambda = DVector::zeros(sub.n_consensus);
        let sigma = sigma_weights(sub, SigmaMode::Identity);
        let dist: Vec<f64> = [1e2, 1e4, 1e6]
            .iter()
            .map(|&rho| {
                let l = local_step(sub, &z, &lambda, rho, &sigma, None, &LocalSettings::default(), 1).unwrap();
                (&l.y - &z).norm()
            })
            .collect();
        assert!(dist[0] > dist[1] && dist[1] > dist[2], "{dist:?}");
    }

    #[test]
    fn floored_hessians_are_positive_definite() {
        let p = empc(2);
        let subs = partition_problem(&p, &two_areas()).unwrap();
        for s in &subs {
            let z = s.restrict(&p.flat_start());
            let sigma = sigma_weights(s, SigmaMode::CoupledOnly);
            let l = local_step(s, &z, &DVector::zeros(s.n_consensus), 1e2, &sigma, None, &LocalSettings::default(), 1)
                .unwrap();
            assert_eq!(l.hessian, l.hessian.transpose());
            let min = l.hessian.clone().symmetric_eigenvalues().min();
            let roundoff = 64.0 * f64::EPSILON * l.hessian.norm();
            assert!(min >= LocalSettings::default().hessian_floor - roundoff, "min eigenvalue {min:e}");
        }
    }

    #[test]
    fn iteration_log_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = vec![AladinLogEntry {
            iteration: 1,
            rho: 100.0,
            mu: 1000.0,
            consensus_residual: 0.5,
            primal_change: 0.25,
            objective: 12.0,
        }];
        write_iteration_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,rho,mu,consensus_residual,primal_change,objective"));
        let back: Vec<AladinLogEntry> =
            csv::Reader::from_path(&path).unwrap().deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn bad_configuration_is_rejected() {
        let p = empc(1);
        let cfg = AladinConfig { rho0: 0.0, ..AladinConfig::default() };
        assert!(matches!(aladin_solve(&p, &two_areas(), &cfg), Err(Error::Input(_))));
    }
}

//! Two-level distributed solver: area agents solve augmented-Lagrangian
//! subproblems in parallel, and a coordinator combines their local models in
//! one equality-constrained quadratic program.
//!
//! Every tie branch couples exactly two areas. Both areas carry a copy of the
//! voltage magnitude and angle at each end of the tie and of the four
//! directional tie flows, so each tie contributes eight consensus rows per
//! step. The lower-numbered area enters a row with coefficient `+1`, the
//! other with `−1`.

mod coordinator;
mod local;
mod solve;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::empc::{EmpcProblem, Region};
use crate::error::{Error, Result};
use crate::grid::Network;

pub use coordinator::{consensus_qp, coupled_qp, update_iterates, update_penalties, QpResult};
pub use local::{local_model, local_step, LocalResult, LocalSettings, ProximalProblem};
pub use solve::{
    aladin_solve, aladin_solve_from, consensus_multipliers, sigma_weights, write_iteration_log, AladinConfig, AladinLogEntry,
    AladinSolution, AladinState, SigmaMode, WarmStart,
};

/// Number of consensus quantities per tie and step.
pub const TIE_QUANTITIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub areas: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(areas: Vec<Vec<usize>>) -> Self {
        Self { areas }
    }

    pub fn single(n_bus: usize) -> Self {
        Self { areas: vec![(0..n_bus).collect()] }
    }

    /// Area index of every bus.
    pub fn area_of(&self, n_bus: usize) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; n_bus];
        for (a, buses) in self.areas.iter().enumerate() {
            if buses.is_empty() {
                return Err(Error::Partition(format!("area {a} is empty")));
            }
            for &b in buses {
                if b >= n_bus {
                    return Err(Error::Partition(format!("area {a} lists bus {b}, network has {n_bus}")));
                }
                if owner[b] != usize::MAX {
                    return Err(Error::Partition(format!("bus {b} belongs to areas {} and {a}", owner[b])));
                }
                owner[b] = a;
            }
        }
        if let Some(b) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Partition(format!("bus {b} is not assigned to an area")));
        }
        Ok(owner)
    }

    /// Branches whose ends lie in different areas, in branch order.
    pub fn tie_branches(&self, network: &Network) -> Result<Vec<usize>> {
        let owner = self.area_of(network.n_bus())?;
        Ok(network
            .branches
            .iter()
            .enumerate()
            .filter(|(_, br)| owner[br.from_bus] != owner[br.to_bus])
            .map(|(k, _)| k)
            .collect())
    }

    /// Check that areas are disjoint, cover the network and are internally
    /// connected.
    pub fn validate(&self, network: &Network) -> Result<()> {
        let owner = self.area_of(network.n_bus())?;
        for (a, buses) in self.areas.iter().enumerate() {
            let allowed: Vec<bool> = owner.iter().map(|&o| o == a).collect();
            let seen = network.reachable(buses[0], &allowed);
            if let Some(&b) = buses.iter().find(|&&b| !seen[b]) {
                return Err(Error::Partition(format!("area {a} is not connected: bus {b} is unreachable inside it")));
            }
        }
        Ok(())
    }
}

/// One area's subproblem together with its consensus coupling.
#[derive(Debug, Clone)]
pub struct AreaSubproblem {
    pub area: usize,
    pub region: Region,
    /// Central-problem index of each local variable that the area owns.
    pub owned_index: Vec<Option<usize>>,
    /// Central voltage index for duplicated voltages (magnitude or angle).
    pub duplicate_index: Vec<Option<usize>>,
    /// Nonzeros of `A_i` as `(row, local variable, coefficient)`.
    pub consensus: Vec<(usize, usize, f64)>,
    pub n_consensus: usize,
}

impl AreaSubproblem {
    pub fn n_vars(&self) -> usize {
        self.region.n_vars()
    }

    /// `A_i y`.
    pub fn consensus_product(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_consensus);
        for &(r, j, a) in &self.consensus {
            out[r] += a * y[j];
        }
        out
    }

    /// `A_iᵀ λ`.
    pub fn consensus_transpose(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_vars());
        for &(r, j, a) in &self.consensus {
            out[j] += a * lambda[r];
        }
        out
    }

    /// Variables that appear in at least one consensus row.
    pub fn coupled_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_vars()];
        for &(_, j, _) in &self.consensus {
            m[j] = true;
        }
        m
    }

    /// Local copy of a central point: owned entries copied, duplicated
    /// voltages read from their owners, tie flows recomputed.
    pub fn restrict(&self, central: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_vars());
        for j in 0..y.len() {
            if let Some(c) = self.owned_index[j].or(self.duplicate_index[j]) {
                y[j] = central[c];
            }
        }
        self.region.refresh_ties(&mut y);
        y
    }
}

/// Split the centralized problem into one subproblem per area.
pub fn partition_problem(empc: &EmpcProblem, partition: &Partition) -> Result<Vec<AreaSubproblem>> {
    let net = &empc.network;
    partition.validate(net)?;
    let ties = partition.tie_branches(net)?;
    let owner = partition.area_of(net.n_bus())?;
    let central = empc.region();
    let inputs = empc.inputs();
    let steps = empc.steps();
    let n_consensus = steps * ties.len() * TIE_QUANTITIES;

    let mut subs = Vec::with_capacity(partition.areas.len());
    for (a, buses) in partition.areas.iter().enumerate() {
        let region = Region::build(&inputs, buses)?;
        let n = region.n_vars();
        let lay = region.layout;
        let mut owned_index = vec![None; n];
        let mut duplicate_index = vec![None; n];
        for k in 0..steps {
            for (i, &g) in region.gc.iter().enumerate() {
                owned_index[region.p_gc_index(k, i)] = Some(central.p_gc_index(k, g));
                owned_index[region.q_gc_index(k, i)] = Some(central.q_gc_index(k, g));
            }
            for (i, &d) in region.dc.iter().enumerate() {
                owned_index[region.p_vg_index(k, i)] = Some(central.p_vg_index(k, d));
                owned_index[region.q_vg_index(k, i)] = Some(central.q_vg_index(k, d));
            }
            for (i, bus) in region.voltage_buses().enumerate() {
                let cv = central.voltage_position(bus).expect("central region owns every bus");
                let slot = if i < lay.n_own { &mut owned_index } else { &mut duplicate_index };
                slot[region.vm_index(k, i)] = Some(central.vm_index(k, cv));
                slot[region.va_index(k, i)] = Some(central.va_index(k, cv));
            }
            for (i, &bus) in region.owned.iter().enumerate() {
                owned_index[region.x_index(k, i)] = Some(central.x_index(k, bus));
            }
        }

        let mut consensus = Vec::new();
        for (t_global, &br) in ties.iter().enumerate() {
            let branch = &net.branches[br];
            let (af, at) = (owner[branch.from_bus], owner[branch.to_bus]);
            if a != af && a != at {
                continue;
            }
            let coeff = if a == af.min(at) { 1.0 } else { -1.0 };
            let t_local = region.ties.iter().position(|t| t.branch == br).ok_or_else(|| {
                Error::Partition(format!("tie branch {br} missing from area {a}"))
            })?;
            let pf = region.voltage_position(branch.from_bus).expect("tie end present");
            let pt = region.voltage_position(branch.to_bus).expect("tie end present");
            for k in 0..steps {
                let row0 = (k * ties.len() + t_global) * TIE_QUANTITIES;
                let vars = [
                    region.vm_index(k, pf),
                    region.va_index(k, pf),
                    region.vm_index(k, pt),
                    region.va_index(k, pt),
                    region.tie_index(k, t_local, 0),
                    region.tie_index(k, t_local, 1),
                    region.tie_index(k, t_local, 2),
                    region.tie_index(k, t_local, 3),
                ];
                for (q, &j) in vars.iter().enumerate() {
                    consensus.push((row0 + q, j, coeff));
                }
            }
        }
        subs.push(AreaSubproblem { area: a, region, owned_index, duplicate_index, consensus, n_consensus });
    }
    Ok(subs)
}

/// Central vector assembled from the owned entries of each area's vector.
pub fn stitch(empc: &EmpcProblem, subs: &[AreaSubproblem], locals: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(empc.n_vars());
    for (sub, y) in subs.iter().zip(locals) {
        for (j, c) in sub.owned_index.iter().enumerate() {
            if let Some(c) = c {
                out[*c] = y[j];
            }
        }
    }
    out
}

/// `Σ_i A_i y_i`.
pub fn consensus_residual(subs: &[AreaSubproblem], locals: &[DVector<f64>]) -> DVector<f64> {
    let n = subs.first().map_or(0, |s| s.n_consensus);
    let mut r = DVector::zeros(n);
    for (sub, y) in subs.iter().zip(locals) {
        r += sub.consensus_product(y);
    }
    r
}

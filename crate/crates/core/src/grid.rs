//! Per-unit network and device fleet.
//!
//! Buses are identified by their position in [`Network::buses`]. Branches use
//! the π-model without transformers: a series impedance with the total line
//! charging split evenly between both ends.

use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Lower bound on the bus energy state (pu·h).
    pub x_min: f64,
    /// Upper bound on the bus energy state (pu·h).
    pub x_max: f64,
    #[serde(default)]
    pub is_reference: bool,
}

impl Bus {
    pub fn new(id: usize, v_min: f64, v_max: f64, x_min: f64, x_max: f64) -> Self {
        Self { id, v_min, v_max, x_min, x_max, is_reference: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub resistance: f64,
    pub reactance: f64,
    /// Total line-charging susceptance (pu).
    #[serde(default)]
    pub shunt_susceptance: f64,
}

impl Branch {
    pub fn new(from_bus: usize, to_bus: usize, resistance: f64, reactance: f64) -> Self {
        Self { from_bus, to_bus, resistance, reactance, shunt_susceptance: 0.0 }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.resistance, self.reactance)
    }

    /// 2×2 admittance of this branch alone, ordered `[from, to]`.
    pub fn admittance_block(&self) -> DMatrix<Complex64> {
        let ys = self.series_admittance();
        let ysh = Complex64::new(0.0, 0.5 * self.shunt_susceptance);
        DMatrix::from_row_slice(2, 2, &[ys + ysh, -ys, -ys, ys + ysh])
    }

    pub fn connects(&self, a: usize, b: usize) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl Network {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_reference)
    }

    pub fn base_kw(&self) -> f64 {
        self.base_mva * 1000.0
    }

    /// Buses reachable from `start` using only branches whose both ends are
    /// in `allowed`.
    pub fn reachable(&self, start: usize, allowed: &[bool]) -> Vec<bool> {
        let n = self.n_bus();
        let mut seen = vec![false; n];
        if start >= n || !allowed[start] {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(b) = queue.pop_front() {
            for br in &self.branches {
                let other = if br.from_bus == b {
                    br.to_bus
                } else if br.to_bus == b {
                    br.from_bus
                } else {
                    continue;
                };
                if other < n && allowed[other] && !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        seen
    }

    pub fn first_unreachable(&self) -> Option<usize> {
        let n = self.n_bus();
        if n == 0 {
            return None;
        }
        let seen = self.reachable(0, &vec![true; n]);
        seen.iter().position(|s| !s)
    }
}

/// Dense bus admittance matrix.
pub fn build_admittance(network: &Network) -> Result<DMatrix<Complex64>> {
    let n = network.n_bus();
    for (index, br) in network.branches.iter().enumerate() {
        if br.resistance == 0.0 && br.reactance == 0.0 {
            return Err(Error::ZeroImpedance { index, from: br.from_bus, to: br.to_bus });
        }
        if br.from_bus >= n || br.to_bus >= n {
            return Err(Error::Input(format!("branch {index} references a missing bus")));
        }
    }
    if let Some(bus) = network.first_unreachable() {
        return Err(Error::Disconnected(bus));
    }
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &network.branches {
        let (f, t) = (br.from_bus, br.to_bus);
        let block = br.admittance_block();
        y[(f, f)] += block[(0, 0)];
        y[(f, t)] += block[(0, 1)];
        y[(t, f)] += block[(1, 0)];
        y[(t, t)] += block[(1, 1)];
    }
    Ok(y)
}

/// Controllable generator. Costs are on the per-unit power base and ramp
/// limits are in pu per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcUnit {
    pub bus: usize,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsUnit {
    pub bus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsUnit {
    pub bus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcUnit {
    pub bus: usize,
    pub capacity_fraction: f64,
}

impl DcUnit {
    pub fn new(bus: usize) -> Self {
        Self { bus, capacity_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceFleet {
    pub gc: Vec<GcUnit>,
    pub gs: Vec<GsUnit>,
    pub ds: Vec<DsUnit>,
    pub dc: Vec<DcUnit>,
}

impl DeviceFleet {
    fn buses(&self) -> impl Iterator<Item = (&'static str, usize, usize)> + '_ {
        let gc = self.gc.iter().enumerate().map(|(i, d)| ("gc", i, d.bus));
        let gs = self.gs.iter().enumerate().map(|(i, d)| ("gs", i, d.bus));
        let ds = self.ds.iter().enumerate().map(|(i, d)| ("ds", i, d.bus));
        let dc = self.dc.iter().enumerate().map(|(i, d)| ("dc", i, d.bus));
        gc.chain(gs).chain(ds).chain(dc)
    }
}

/// Device-to-bus incidence matrices, each `n_bus × n_device`.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub gc: DMatrix<f64>,
    pub gs: DMatrix<f64>,
    pub dc: DMatrix<f64>,
    pub ds: DMatrix<f64>,
}

pub fn build_incidence(fleet: &DeviceFleet, network: &Network) -> Result<Incidence> {
    let n = network.n_bus();
    for (kind, index, bus) in fleet.buses() {
        if bus >= n {
            return Err(Error::InvalidBus { kind, index, bus });
        }
    }
    let matrix = |buses: Vec<usize>| {
        let mut a = DMatrix::zeros(n, buses.len());
        for (d, b) in buses.into_iter().enumerate() {
            a[(b, d)] = 1.0;
        }
        a
    };
    Ok(Incidence {
        gc: matrix(fleet.gc.iter().map(|d| d.bus).collect()),
        gs: matrix(fleet.gs.iter().map(|d| d.bus).collect()),
        dc: matrix(fleet.dc.iter().map(|d| d.bus).collect()),
        ds: matrix(fleet.ds.iter().map(|d| d.bus).collect()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub element: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

fn diag(element: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { element: element.into(), message: message.into() }
}

/// Check every structural invariant of a network and its fleet. An empty
/// list means the case is usable.
pub fn validate_network(network: &Network, fleet: &DeviceFleet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = network.n_bus();
    if network.base_mva <= 0.0 {
        out.push(diag("network", format!("base power must be positive, got {}", network.base_mva)));
    }
    for (i, b) in network.buses.iter().enumerate() {
        let name = format!("bus {i}");
        if b.id != i {
            out.push(diag(&name, format!("id {} does not match its position", b.id)));
        }
        if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
            out.push(diag(&name, format!("voltage bounds [{}, {}] violate 0 < v_min <= v_max", b.v_min, b.v_max)));
        }
        if !(b.x_min <= 0.0 && 0.0 <= b.x_max) {
            out.push(diag(&name, format!("state bounds [{}, {}] must bracket zero", b.x_min, b.x_max)));
        }
    }
    let refs = network.buses.iter().filter(|b| b.is_reference).count();
    if n > 0 && refs != 1 {
        out.push(diag("network", format!("expected exactly one reference bus, found {refs}")));
    }
    for (i, br) in network.branches.iter().enumerate() {
        let name = format!("branch {i}");
        if br.from_bus >= n || br.to_bus >= n {
            out.push(diag(&name, format!("references missing bus ({}-{})", br.from_bus, br.to_bus)));
        }
        if br.from_bus == br.to_bus {
            out.push(diag(&name, "connects a bus to itself"));
        }
        if br.resistance.hypot(br.reactance) <= 0.0 {
            out.push(diag(&name, "series impedance is zero"));
        }
    }
    if network.branches.iter().all(|br| br.from_bus < n && br.to_bus < n) {
        if let Some(bus) = network.first_unreachable() {
            out.push(diag(format!("bus {bus}"), "not connected to bus 0"));
        }
    }
    for (i, g) in fleet.gc.iter().enumerate() {
        let name = format!("gc {i}");
        if g.p_min > g.p_max {
            out.push(diag(&name, "p_min exceeds p_max"));
        }
        if g.q_min > g.q_max {
            out.push(diag(&name, "q_min exceeds q_max"));
        }
        if !(g.r_min <= 0.0 && 0.0 <= g.r_max) {
            out.push(diag(&name, "ramp limits must bracket zero"));
        }
        if g.c2 < 0.0 {
            out.push(diag(&name, "quadratic cost must be non-negative"));
        }
    }
    for (i, d) in fleet.dc.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.capacity_fraction) {
            out.push(diag(format!("dc {i}"), "capacity fraction must lie in [0, 1]"));
        }
    }
    for (kind, index, bus) in fleet.buses() {
        if bus >= n {
            out.push(diag(format!("{kind} {index}"), format!("references missing bus {bus}")));
        }
    }
    out
}

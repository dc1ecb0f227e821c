//! Case files: network, fleet, partition and solver settings as TOML.
//!
//! Impedances are per-unit on the network base. Powers are in kW / kVAr,
//! ramps in kW per hour, energies in kWh and generator costs in $ per hour
//! with power in kW; everything is converted to per-unit when the case is
//! resolved.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aladin::{AladinConfig, Partition};
use crate::empc::{EmpcOptions, HorizonConfig, ReactiveVg};
use crate::error::{Error, Result};
use crate::grid::{validate_network, Branch, Bus, DcUnit, DeviceFleet, DsUnit, GcUnit, GsUnit, Network};

/// Energy-state bound applied to buses without their own, in pu·h.
pub const DEFAULT_X_BOUND_PU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    /// Written as the comment header of a saved file.
    #[serde(default, skip_serializing)]
    pub description: String,
    pub network: NetworkSection,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub gc: Vec<GcRecord>,
    #[serde(default)]
    pub gs: Vec<BusDevice>,
    #[serde(default)]
    pub ds: Vec<BusDevice>,
    #[serde(default)]
    pub dc: Vec<DcRecord>,
    pub partition: Partition,
    #[serde(default)]
    pub empc: EmpcSection,
    #[serde(default)]
    pub aladin: AladinConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub base_mva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max_kwh: Option<f64>,
    #[serde(default)]
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    #[serde(default)]
    pub shunt_susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcRecord {
    pub bus: usize,
    /// $/h per kW².
    pub c2: f64,
    /// $/h per kW.
    pub c1: f64,
    /// $/h.
    pub c0: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    pub ramp_down_kw_per_h: f64,
    pub ramp_up_kw_per_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusDevice {
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcRecord {
    pub bus: usize,
    #[serde(default = "default_capacity_fraction")]
    pub capacity_fraction: f64,
}

fn default_capacity_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmpcSection {
    pub steps: usize,
    pub dt_hours: f64,
    /// Symmetric energy bound for buses without explicit bounds; defaults
    /// to 0.01 pu·h on the network base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bound_kwh: Option<f64>,
    /// Initial energy state per bus; each bus starts at its lower bound when
    /// omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0_kwh: Option<Vec<f64>>,
    pub reactive_vg: ReactiveVg,
}

impl Default for EmpcSection {
    fn default() -> Self {
        let h = HorizonConfig::default();
        Self { steps: h.steps, dt_hours: h.dt, x_bound_kwh: None, x0_kwh: None, reactive_vg: ReactiveVg::default() }
    }
}

/// A resolved, validated case in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub network: Network,
    pub fleet: DeviceFleet,
    pub partition: Partition,
    pub horizon: HorizonConfig,
    pub x0: DVector<f64>,
    pub empc: EmpcOptions,
    pub aladin: AladinConfig,
}

impl CaseFile {
    pub fn base_kw(&self) -> f64 {
        self.network.base_mva * 1000.0
    }

    /// Default energy bound in kWh.
    pub fn x_bound_kwh(&self) -> f64 {
        self.empc.x_bound_kwh.unwrap_or(DEFAULT_X_BOUND_PU * self.base_kw())
    }

    /// Convert to per-unit objects and validate them.
    pub fn resolve(&self) -> Result<Case> {
        let base = self.base_kw();
        if !(base > 0.0) {
            return Err(Error::Validation(vec![format!("network: base_mva must be positive, got {}", self.network.base_mva)]));
        }
        let xb = self.x_bound_kwh() / base;
        let mut buses = Vec::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i {
                return Err(Error::Validation(vec![format!("bus {i}: id {} does not match its position", b.id)]));
            }
            let mut bus = Bus::new(
                b.id,
                b.v_min,
                b.v_max,
                b.x_min_kwh.map_or(-xb, |v| v / base),
                b.x_max_kwh.map_or(xb, |v| v / base),
            );
            bus.is_reference = b.reference;
            buses.push(bus);
        }
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                from_bus: b.from,
                to_bus: b.to,
                resistance: b.resistance,
                reactance: b.reactance,
                shunt_susceptance: b.shunt_susceptance,
            })
            .collect();
        let network = Network { base_mva: self.network.base_mva, buses, branches };
        let fleet = DeviceFleet {
            gc: self
                .gc
                .iter()
                .map(|g| GcUnit {
                    bus: g.bus,
                    c2: g.c2 * base * base,
                    c1: g.c1 * base,
                    c0: g.c0,
                    p_min: g.p_min_kw / base,
                    p_max: g.p_max_kw / base,
                    q_min: g.q_min_kvar / base,
                    q_max: g.q_max_kvar / base,
                    r_min: g.ramp_down_kw_per_h / base,
                    r_max: g.ramp_up_kw_per_h / base,
                })
                .collect(),
            gs: self.gs.iter().map(|d| GsUnit { bus: d.bus }).collect(),
            ds: self.ds.iter().map(|d| DsUnit { bus: d.bus }).collect(),
            dc: self.dc.iter().map(|d| DcUnit { bus: d.bus, capacity_fraction: d.capacity_fraction }).collect(),
        };
        let diagnostics = validate_network(&network, &fleet);
        if !diagnostics.is_empty() {
            return Err(Error::Validation(diagnostics.iter().map(ToString::to_string).collect()));
        }
        self.partition.validate(&network).map_err(|e| Error::Validation(vec![e.to_string()]))?;

        let n = network.n_bus();
        let x0 = match &self.empc.x0_kwh {
            Some(v) if v.len() == n => DVector::from_iterator(n, v.iter().map(|x| x / base)),
            Some(v) => {
                return Err(Error::Validation(vec![format!("empc.x0_kwh has {} entries, network has {n} buses", v.len())]))
            }
            None => DVector::from_iterator(n, network.buses.iter().map(|b| b.x_min)),
        };
        let horizon = HorizonConfig { steps: self.empc.steps, dt: self.empc.dt_hours };
        if horizon.steps == 0 || !(horizon.dt > 0.0) {
            return Err(Error::Validation(vec![format!(
                "empc: steps must be at least 1 and dt positive, got {} and {}",
                horizon.steps, horizon.dt
            )]));
        }
        self.aladin.validate().map_err(|e| Error::Validation(vec![e.to_string()]))?;
        Ok(Case {
            network,
            fleet,
            partition: self.partition.clone(),
            horizon,
            x0,
            empc: EmpcOptions { reactive_vg: self.empc.reactive_vg },
            aladin: self.aladin.clone(),
        })
    }

    /// The same case with every implicit default written out: per-bus energy
    /// bounds and the initial state.
    pub fn with_explicit_defaults(&self) -> Self {
        let xb = self.x_bound_kwh();
        let mut out = self.clone();
        for b in &mut out.buses {
            b.x_min_kwh.get_or_insert(-xb);
            b.x_max_kwh.get_or_insert(xb);
        }
        out.empc.x_bound_kwh = Some(xb);
        if out.empc.x0_kwh.is_none() {
            out.empc.x0_kwh = Some(out.buses.iter().map(|b| b.x_min_kwh.unwrap_or(-xb)).collect());
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Input(format!("cannot serialize case: {e}")))
    }

    /// Parse TOML text; leading `# ` comment lines become the description.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut case: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Parse { path: path.display().to_string(), line, message: e.message().to_string() }
        })?;
        case.description = text
            .lines()
            .map_while(|l| l.strip_prefix('#'))
            .map(|l| l.strip_prefix(' ').unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(case)
    }
}

/// Read a case file without resolving it.
pub fn read_case_file(path: &Path) -> Result<CaseFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    CaseFile::from_toml(&text, path)
}

/// Read, convert and validate a case file.
pub fn load_case(path: &Path) -> Result<Case> {
    read_case_file(path)?.resolve()
}

pub fn save_case(path: &Path, case: &CaseFile) -> Result<()> {
    let mut text = String::new();
    if !case.description.is_empty() {
        for line in case.description.lines() {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
        text.push('\n');
    }
    text.push_str(&case.to_toml()?);
    fs::write(path, text)?;
    Ok(())
}

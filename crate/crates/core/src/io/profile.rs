//! Day profiles as long-format CSV: `timestamp,device,series,value`.
//!
//! `timestamp` is `HH:MM`, `device` is the index within its device list and
//! values are in kW, kVAr or $/kWh. Quadratic and constant utility terms
//! (`dc_a` in $/h per kW², `dc_c` in $/h) are optional; without them the
//! price-only mode applies.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DeviceFleet;
use crate::sim::DayProfile;

/// Quadratic utility coefficient (pu) used when a profile only gives prices.
pub const PRICE_ONLY_REGULARIZER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    PDs,
    QDs,
    PGs,
    PDc,
    QDc,
    Price,
    DcA,
    DcC,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub timestamp: String,
    pub device: usize,
    pub series: SeriesKind,
    pub value: f64,
}

pub fn format_timestamp(minutes: u32) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

fn parse_timestamp(s: &str) -> Option<u32> {
    let (h, m) = s.split_once(':')?;
    let (h, m): (u32, u32) = (h.trim().parse().ok()?, m.trim().parse().ok()?);
    (m < 60).then_some(h * 60 + m)
}

pub fn write_profile(path: &Path, records: &[ProfileRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile(path: &Path) -> Result<Vec<ProfileRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let rec: ProfileRecord = row.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Convert profile records to a per-unit [`DayProfile`] for `fleet`.
pub fn day_profile(records: &[ProfileRecord], fleet: &DeviceFleet, base_kw: f64) -> Result<DayProfile> {
    let mut series: BTreeMap<(SeriesKind, usize), Vec<(u32, f64)>> = BTreeMap::new();
    for r in records {
        let t = parse_timestamp(&r.timestamp)
            .ok_or_else(|| Error::Input(format!("bad timestamp {:?} (expected HH:MM)", r.timestamp)))?;
        if !r.value.is_finite() {
            return Err(Error::Input(format!("non-finite value for {:?} device {} at {}", r.series, r.device, r.timestamp)));
        }
        series.entry((r.series, r.device)).or_default().push((t, r.value));
    }
    let mut times: Option<Vec<u32>> = None;
    for ((kind, dev), rows) in series.iter_mut() {
        rows.sort_by_key(|r| r.0);
        let t: Vec<u32> = rows.iter().map(|r| r.0).collect();
        match &times {
            None => times = Some(t),
            Some(ref_t) if *ref_t != t => {
                return Err(Error::Input(format!("{kind:?} device {dev}: timestamps differ from the other series")))
            }
            Some(_) => {}
        }
    }
    let times = times.ok_or_else(|| Error::Input("profile has no rows".into()))?;
    if times.len() < 2 {
        return Err(Error::Input("profile needs at least two intervals".into()));
    }
    let step = times[1] - times[0];
    if step == 0 || times.windows(2).any(|w| w[1] - w[0] != step) {
        return Err(Error::Input("profile timestamps are not uniformly spaced".into()));
    }
    let n_t = times.len();

    let take = |kind: SeriesKind, count: usize, scale: f64, default: Option<f64>| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n_t, count);
        for d in 0..count {
            match (series.get(&(kind, d)), default) {
                (Some(rows), _) => {
                    for (k, (_, v)) in rows.iter().enumerate() {
                        m[(k, d)] = v * scale;
                    }
                }
                (None, Some(v)) => m.column_mut(d).fill(v),
                (None, None) => return Err(Error::Input(format!("profile lacks {kind:?} for device {d}"))),
            }
        }
        Ok(m)
    };
    for (kind, dev) in series.keys() {
        let count = match kind {
            SeriesKind::PDs | SeriesKind::QDs => fleet.ds.len(),
            SeriesKind::PGs => fleet.gs.len(),
            _ => fleet.dc.len(),
        };
        if *dev >= count {
            return Err(Error::Input(format!("profile references {kind:?} device {dev}, case has {count}")));
        }
    }
    let (n_ds, n_gs, n_dc) = (fleet.ds.len(), fleet.gs.len(), fleet.dc.len());
    let inv = 1.0 / base_kw;
    Ok(DayProfile {
        dt: step as f64 / 60.0,
        start_minutes: times[0],
        p_ds: take(SeriesKind::PDs, n_ds, inv, None)?,
        q_ds: take(SeriesKind::QDs, n_ds, inv, None)?,
        p_gs: take(SeriesKind::PGs, n_gs, inv, None)?,
        p_dc: take(SeriesKind::PDc, n_dc, inv, None)?,
        q_dc: take(SeriesKind::QDc, n_dc, inv, None)?,
        dc_a: take(SeriesKind::DcA, n_dc, base_kw * base_kw, Some(PRICE_ONLY_REGULARIZER))?,
        dc_b: take(SeriesKind::Price, n_dc, base_kw, None)?,
        dc_c: take(SeriesKind::DcC, n_dc, 1.0, Some(0.0))?,
    })
}

/// Inverse of [`day_profile`], in long format.
pub fn profile_records(day: &DayProfile, base_kw: f64) -> Vec<ProfileRecord> {
    let mut out = Vec::new();
    let step = (day.dt * 60.0).round() as u32;
    let mut push = |kind: SeriesKind, m: &DMatrix<f64>, scale: f64| {
        for d in 0..m.ncols() {
            for k in 0..m.nrows() {
                out.push(ProfileRecord {
                    timestamp: format_timestamp(day.start_minutes + step * k as u32),
                    device: d,
                    series: kind,
                    value: m[(k, d)] * scale,
                });
            }
        }
    };
    push(SeriesKind::PDs, &day.p_ds, base_kw);
    push(SeriesKind::QDs, &day.q_ds, base_kw);
    push(SeriesKind::PGs, &day.p_gs, base_kw);
    push(SeriesKind::PDc, &day.p_dc, base_kw);
    push(SeriesKind::QDc, &day.q_dc, base_kw);
    push(SeriesKind::Price, &day.dc_b, 1.0 / base_kw);
    push(SeriesKind::DcA, &day.dc_a, 1.0 / (base_kw * base_kw));
    push(SeriesKind::DcC, &day.dc_c, 1.0);
    out
}

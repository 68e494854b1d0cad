//! Per-second GHG (CO2eq) and NOx emission rates from vehicle kinematics.
//!
//! The rate model is a lookup: vehicle specific power (VSP) plus speed
//! select one operating-mode bin, and each bin carries fixed g/s rates.
//! The default bin table ships in `data/opmodes_default_v1.csv`; its rates
//! are calibrated surrogates (steady 40 km/h cruising emits about 1 g/s of
//! GHG and the grams-per-meter curve bottoms out between 40 and 60 km/h),
//! not measured values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Light-duty VSP in kW/tonne.
///
/// `vsp(v, a, grade) = v*(1.1*a + 9.81*grade + 0.132) + 0.000302*v^3`
pub fn vsp(v_ms: f64, accel_ms2: f64, grade: f64) -> f64 {
    v_ms * (1.1 * accel_ms2 + 9.81 * grade + 0.132) + 0.000302 * v_ms.powi(3)
}

/// One operating-mode bin: a half-open cell of the (VSP, speed) plane with
/// fixed emission rates.
#[derive(Debug, Clone, PartialEq)]
pub struct OpModeBin {
    pub id: u32,
    pub vsp_lo: f64,
    pub vsp_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub ghg_gps: f64,
    pub nox_gps: f64,
}

impl OpModeBin {
    pub fn contains(&self, vsp: f64, v: f64) -> bool {
        vsp >= self.vsp_lo && vsp < self.vsp_hi && v >= self.v_lo && v < self.v_hi
    }
}

/// Ordered operating-mode bin table partitioning the (VSP, speed) plane.
#[derive(Debug, Clone, PartialEq)]
pub struct OpModeTable {
    bins: Vec<OpModeBin>,
}

impl OpModeTable {
    pub fn new(bins: Vec<OpModeBin>) -> Result<OpModeTable> {
        if bins.is_empty() {
            return Err(Error::Validation("operating-mode table is empty".into()));
        }
        for b in &bins {
            if !(b.ghg_gps >= 0.0 && b.nox_gps >= 0.0) {
                return Err(Error::Validation(format!(
                    "bin {}: emission rates must be non-negative",
                    b.id
                )));
            }
            if !(b.vsp_lo < b.vsp_hi && b.v_lo < b.v_hi) {
                return Err(Error::Validation(format!(
                    "bin {}: empty interval",
                    b.id
                )));
            }
        }
        let table = OpModeTable { bins };
        table.check_partition()?;
        Ok(table)
    }

    /// Grid scan verifying that every (vsp, v) point maps to exactly one
    /// bin, and that v < 0.5 m/s is covered by a dedicated idle bin.
    fn check_partition(&self) -> Result<()> {
        let mut vsp_x = -30.0;
        while vsp_x <= 40.0 {
            let mut v = 0.0;
            while v <= 40.0 {
                let hits = self.bins.iter().filter(|b| b.contains(vsp_x, v)).count();
                if hits != 1 {
                    return Err(Error::Validation(format!(
                        "(vsp={vsp_x:.1}, v={v:.1}) maps to {hits} bins, expected 1"
                    )));
                }
                v += 0.1;
            }
            vsp_x += 0.1;
        }
        let idle = self
            .bins
            .iter()
            .filter(|b| b.v_lo == 0.0 && b.v_hi >= 0.5)
            .count();
        if idle == 0 {
            return Err(Error::Validation(
                "no idle bin covering v < 0.5 m/s".into(),
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> &[OpModeBin] {
        &self.bins
    }

    /// Bin containing the given kinematic state (grade 0).
    pub fn bin_for(&self, v_ms: f64, accel_ms2: f64) -> &OpModeBin {
        let p = vsp(v_ms, accel_ms2, 0.0);
        self.bins
            .iter()
            .find(|b| b.contains(p, v_ms))
            .expect("bin table partitions the (VSP, speed) plane")
    }

    /// Per-second (GHG g/s, NOx g/s) for the given kinematic state.
    pub fn emission_rates(&self, v_ms: f64, accel_ms2: f64) -> (f64, f64) {
        let b = self.bin_for(v_ms, accel_ms2);
        (b.ghg_gps, b.nox_gps)
    }

    /// Steady-cruise GHG rate at a given speed (zero acceleration).
    pub fn cruise_ghg_gps(&self, v_ms: f64) -> f64 {
        self.emission_rates(v_ms, 0.0).0
    }

    /// The calibrated default table (23 bins, version 1).
    pub fn default_table() -> OpModeTable {
        parse_opmode_csv(include_str!("../data/opmodes_default_v1.csv"), "<builtin>")
            .expect("builtin table is valid")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_id,vsp_lo,vsp_hi,v_lo,v_hi,ghg_gps,nox_gps\n");
        for b in &self.bins {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                b.id,
                fmt_bound(b.vsp_lo),
                fmt_bound(b.vsp_hi),
                fmt_bound(b.v_lo),
                fmt_bound(b.v_hi),
                b.ghg_gps,
                b.nox_gps
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn parse_bound(raw: &str) -> Option<f64> {
    match raw {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

fn parse_opmode_csv(text: &str, origin: &str) -> Result<OpModeTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file"))?;
    let expected = "bin_id,vsp_lo,vsp_hi,v_lo,v_hi,ghg_gps,nox_gps";
    if header.trim() != expected {
        return Err(Error::parse(
            origin,
            1,
            format!("bad header, expected '{expected}'"),
        ));
    }
    let mut bins = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 7 fields, got {}", f.len()),
            ));
        }
        let bad = |name: &str, raw: &str| Error::parse(origin, line_no, format!("bad {name} '{raw}'"));
        bins.push(OpModeBin {
            id: f[0].parse().map_err(|_| bad("bin_id", f[0]))?,
            vsp_lo: parse_bound(f[1]).ok_or_else(|| bad("vsp_lo", f[1]))?,
            vsp_hi: parse_bound(f[2]).ok_or_else(|| bad("vsp_hi", f[2]))?,
            v_lo: parse_bound(f[3]).ok_or_else(|| bad("v_lo", f[3]))?,
            v_hi: parse_bound(f[4]).ok_or_else(|| bad("v_hi", f[4]))?,
            ghg_gps: f[5].parse().map_err(|_| bad("ghg_gps", f[5]))?,
            nox_gps: f[6].parse().map_err(|_| bad("nox_gps", f[6]))?,
        });
    }
    OpModeTable::new(bins)
}

/// Loads an operating-mode table CSV.
pub fn load_opmode_table(path: impl AsRef<Path>) -> Result<OpModeTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_opmode_csv(&text, &path.display().to_string())
}

//! Feeder file format and bundled test feeders.
//!
//! A feeder file is one JSON document:
//!
//! ```json
//! {
//!   "name": "four_bus",
//!   "base": { "kv": 4.16, "kva": 5000.0 },
//!   "source_pu": 1.0,
//!   "buses": [ { "id": 0, "phases": "abc" }, { "id": 1, "phases": "ac" } ],
//!   "lines": [ { "from": 0, "to": 1, "phases": "ac",
//!                "z_series": [[0.01, 0.02], [0.0, 0.005], [0.0, 0.005], [0.01, 0.02]],
//!                "y_shunt":  [[0.0, 1e-5], [0.0, 0.0], [0.0, 0.0], [0.0, 1e-5]] } ],
//!   "loads": [ { "bus": 1, "phases": "ac", "p": [0.05, 0.04], "q": [0.02, 0.01] } ],
//!   "ders":  [ { "bus": 1, "phases": "a", "p": [0.02], "power_factor": 1.0 } ]
//! }
//! ```
//!
//! Matrices are row-major lists of `[re, im]` pairs in per-unit, sized by
//! the line's phase count. `y_shunt` is the total line charging and is
//! optional. Loads are per-phase consumption in per-unit (positive = drawn
//! from the network); DERs are per-phase active generation with an optional
//! power factor (default 1). `base` is informational.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Bus, Line, Phase, PhaseSet, PhasedNetwork};
use crate::pf::{balanced_v0, OperatingPoint};

pub const FOUR_BUS_JSON: &str = include_str!("../fixtures/four_bus.json");
pub const IEEE13_LIKE_JSON: &str = include_str!("../fixtures/ieee13_like.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub kv: f64,
    pub kva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub z_series: Vec<Complex64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_shunt: Option<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub bus: usize,
    pub phases: PhaseSet,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerRecord {
    pub bus: usize,
    pub phases: PhaseSet,
    pub p: Vec<f64>,
    #[serde(default = "unity")]
    pub power_factor: f64,
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederFile {
    #[serde(default)]
    pub name: String,
    pub base: Base,
    #[serde(default = "unity")]
    pub source_pu: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub ders: Vec<DerRecord>,
}

/// Parsed feeder: network plus per-phase base injections.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub name: String,
    pub base: Base,
    pub source_pu: f64,
    pub network: PhasedNetwork,
    /// Consumption per stacked phase (positive = load).
    pub base_load: Vec<Complex64>,
    /// Generation per stacked phase.
    pub base_der: Vec<Complex64>,
}

fn square(values: &[Complex64], n: usize, what: &str, line: usize) -> Result<DMatrix<Complex64>> {
    if values.len() != n * n {
        return Err(Error::InvalidNetwork(format!(
            "line {line}: {what} has {} entries, expected {}",
            values.len(),
            n * n
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, values))
}

impl FeederFile {
    pub fn to_network(&self) -> Result<PhasedNetwork> {
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                phases: b.phases,
            })
            .collect();
        let mut lines = Vec::with_capacity(self.lines.len());
        for (k, l) in self.lines.iter().enumerate() {
            let n = l.phases.len();
            let z = square(&l.z_series, n, "z_series", k)?;
            let mut line = Line::new(l.from, l.to, l.phases, z);
            if let Some(y) = &l.y_shunt {
                line = line.with_shunt(square(y, n, "y_shunt", k)?);
            }
            lines.push(line);
        }
        Ok(PhasedNetwork::new(buses, lines))
    }

    pub fn into_feeder(self) -> Result<Feeder> {
        let network = self.to_network()?;
        let idx = network.phase_index();
        let m = idx.len();
        let mut base_load = vec![Complex64::new(0.0, 0.0); m];
        let mut base_der = vec![Complex64::new(0.0, 0.0); m];

        let locate = |bus: usize, phases: PhaseSet, n_values: usize, what: &str| -> Result<Vec<usize>> {
            if bus == 0 {
                return Err(Error::InvalidNetwork(format!("{what} attached to the slack bus")));
            }
            if n_values != phases.len() {
                return Err(Error::InvalidNetwork(format!(
                    "{what} at bus {bus}: {n_values} values for phases {phases}"
                )));
            }
            phases
                .iter()
                .map(|p| {
                    idx.get(bus, p)
                        .ok_or_else(|| Error::InvalidNetwork(format!("{what} at bus {bus} uses missing phase {p}")))
                })
                .collect()
        };

        for l in &self.loads {
            if l.q.len() != l.p.len() {
                return Err(Error::InvalidNetwork(format!("load at bus {}: p and q lengths differ", l.bus)));
            }
            for (k, (p, q)) in locate(l.bus, l.phases, l.p.len(), "load")?.into_iter().zip(l.p.iter().zip(&l.q)) {
                base_load[k] += Complex64::new(*p, *q);
            }
        }
        for d in &self.ders {
            if !(d.power_factor > 0.0 && d.power_factor <= 1.0) {
                return Err(Error::InvalidNetwork(format!("der at bus {}: power factor outside (0, 1]", d.bus)));
            }
            let tan_phi = (1.0 - d.power_factor * d.power_factor).sqrt() / d.power_factor;
            for (k, p) in locate(d.bus, d.phases, d.p.len(), "der")?.into_iter().zip(&d.p) {
                base_der[k] += Complex64::new(*p, p * tan_phi);
            }
        }
        Ok(Feeder {
            name: self.name,
            base: self.base,
            source_pu: self.source_pu,
            network,
            base_load,
            base_der,
        })
    }
}

impl Feeder {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<FeederFile>(text)?.into_feeder()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn four_bus() -> Self {
        Self::from_json(FOUR_BUS_JSON).expect("bundled fixture parses")
    }

    pub fn ieee13_like() -> Self {
        Self::from_json(IEEE13_LIKE_JSON).expect("bundled fixture parses")
    }

    pub fn n_phases(&self) -> usize {
        self.network.n_phases()
    }

    pub fn v0(&self) -> [Complex64; 3] {
        balanced_v0(self.source_pu)
    }

    /// Nominal operating point: generation minus consumption.
    pub fn base_operating_point(&self) -> OperatingPoint {
        self.operating_point(|_| 1.0, |_| 1.0)
    }

    /// Operating point with per-phase load and DER multipliers.
    pub fn operating_point(&self, load_mult: impl Fn(usize) -> f64, der_mult: impl Fn(usize) -> f64) -> OperatingPoint {
        let s = (0..self.n_phases())
            .map(|k| self.base_der[k] * der_mult(k) - self.base_load[k] * load_mult(k))
            .collect();
        OperatingPoint { v0: self.v0(), s }
    }

    pub fn has_load(&self, k: usize) -> bool {
        self.base_load[k] != Complex64::new(0.0, 0.0)
    }

    pub fn has_der(&self, k: usize) -> bool {
        self.base_der[k] != Complex64::new(0.0, 0.0)
    }
}

/// Shape of a generated radial feeder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub three_phase: usize,
    pub two_phase: usize,
    pub single_phase: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Roughly the size of the 123-bus test feeder (272 non-slack phases).
    pub fn ieee123_scale(seed: u64) -> Self {
        SyntheticSpec {
            three_phase: 74,
            two_phase: 2,
            single_phase: 46,
            seed,
        }
    }
}

// overhead 4-wire, ohm/mile
const Z_OVERHEAD: [[(f64, f64); 3]; 3] = [
    [(0.3465, 1.0179), (0.1560, 0.5017), (0.1580, 0.4236)],
    [(0.1560, 0.5017), (0.3375, 1.0478), (0.1535, 0.3849)],
    [(0.1580, 0.4236), (0.1535, 0.3849), (0.3414, 1.0348)],
];

/// Random radial feeder: a three-phase backbone with two- and single-phase
/// laterals, mutually coupled line impedances, and light per-phase loads
/// with occasional PV.
pub fn synthetic_feeder(spec: &SyntheticSpec) -> FeederFile {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = Base { kv: 4.16, kva: 5000.0 };
    let z_base = base.kv * base.kv / (base.kva / 1000.0);
    let s_base = base.kva / 3.0;

    let mut buses = vec![BusRecord {
        id: 0,
        phases: PhaseSet::ABC,
    }];
    let mut lines = Vec::new();

    let mut push_line = |rng: &mut ChaCha8Rng, buses: &mut Vec<BusRecord>, parent: usize, phases: PhaseSet, conductor: f64| {
        let id = buses.len();
        buses.push(BusRecord { id, phases });
        let miles = rng.random_range(0.03..0.12);
        let sel: Vec<usize> = phases.iter().map(Phase::index).collect();
        let mut z = Vec::with_capacity(sel.len() * sel.len());
        for &i in &sel {
            for &j in &sel {
                let (r, x) = Z_OVERHEAD[i][j];
                let scale = if i == j { conductor } else { 1.0 };
                z.push(Complex64::new(r * scale, x) * (miles / z_base));
            }
        }
        lines.push(LineRecord {
            from: parent,
            to: id,
            phases,
            z_series: z,
            y_shunt: None,
        });
    };

    // backbone: attach to one of the few most recent three-phase buses to
    // get a long main with short branches
    let mut three: Vec<usize> = vec![0];
    for _ in 0..spec.three_phase {
        let lo = three.len().saturating_sub(4);
        let parent = three[rng.random_range(lo..three.len())];
        push_line(&mut rng, &mut buses, parent, PhaseSet::ABC, 1.0);
        three.push(buses.len() - 1);
    }
    let mut multi: Vec<usize> = three[1..].to_vec();
    for _ in 0..spec.two_phase {
        let parent = three[rng.random_range(three.len() / 2..three.len())];
        let drop = Phase::ALL[rng.random_range(0..3)];
        let phases = PhaseSet::from_phases(&Phase::ALL.into_iter().filter(|p| *p != drop).collect::<Vec<_>>()).unwrap();
        push_line(&mut rng, &mut buses, parent, phases, 2.0);
        multi.push(buses.len() - 1);
    }
    for _ in 0..spec.single_phase {
        let parent = multi[rng.random_range(0..multi.len())];
        let avail: Vec<Phase> = buses[parent].phases.iter().collect();
        let phase = avail[rng.random_range(0..avail.len())];
        push_line(&mut rng, &mut buses, parent, PhaseSet::single(phase), 2.5);
    }

    let mut loads = Vec::new();
    let mut ders = Vec::new();
    for bus in &buses[1..] {
        let n = bus.phases.len();
        if rng.random_bool(0.8) {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..20.0) / s_base).collect();
            let q = p.iter().map(|p| p * 0.45).collect();
            loads.push(LoadRecord {
                bus: bus.id,
                phases: bus.phases,
                p,
                q,
            });
        }
        if rng.random_bool(0.15) {
            ders.push(DerRecord {
                bus: bus.id,
                phases: bus.phases,
                p: (0..n).map(|_| rng.random_range(5.0..15.0) / s_base).collect(),
                power_factor: 1.0,
            });
        }
    }

    FeederFile {
        name: format!("synthetic_{}", buses.len()),
        base,
        source_pu: 1.0,
        buses,
        lines,
        loads,
        ders,
    }
}

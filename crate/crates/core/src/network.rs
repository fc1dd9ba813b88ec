//! Multi-phase radial network model.
//!
//! Buses carry a subset of phases `{a, b, c}`; lines carry a subset of the
//! phases shared by their endpoints and hold full (mutually coupled)
//! series-impedance and shunt-admittance matrices in per-unit. Bus 0 is the
//! slack and always carries all three phases.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Nonempty subset of `{a, b, c}`, always iterated in `a, b, c` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn from_phases(phases: &[Phase]) -> Option<Self> {
        let mask = phases.iter().fold(0u8, |m, p| m | (1 << p.index()));
        (mask != 0).then_some(PhaseSet(mask))
    }

    pub fn single(phase: Phase) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `phase` within this set, if present.
    pub fn rank(self, phase: Phase) -> Option<usize> {
        self.contains(phase)
            .then(|| self.iter().take_while(|p| *p != phase).count())
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl FromStr for PhaseSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mask = 0u8;
        for ch in s.chars() {
            let bit = match ch.to_ascii_lowercase() {
                'a' => 0,
                'b' => 1,
                'c' => 2,
                _ => return Err(Error::InvalidNetwork(format!("unknown phase letter {ch:?} in {s:?}"))),
            };
            if mask & (1 << bit) != 0 {
                return Err(Error::InvalidNetwork(format!("repeated phase in {s:?}")));
            }
            mask |= 1 << bit;
        }
        if mask == 0 {
            return Err(Error::InvalidNetwork("empty phase set".into()));
        }
        Ok(PhaseSet(mask))
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub z_series: DMatrix<Complex64>,
    pub y_shunt: DMatrix<Complex64>,
}

impl Line {
    pub fn new(from: usize, to: usize, phases: PhaseSet, z_series: DMatrix<Complex64>) -> Self {
        let n = z_series.nrows();
        Line {
            from,
            to,
            phases,
            z_series,
            y_shunt: DMatrix::zeros(n, n),
        }
    }

    pub fn with_shunt(mut self, y_shunt: DMatrix<Complex64>) -> Self {
        self.y_shunt = y_shunt;
        self
    }
}

/// Map between `(bus, phase)` pairs on non-slack buses and positions in the
/// stacked voltage vector, ordered by `(bus id, phase)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseIndex {
    entries: Vec<(usize, Phase)>,
    // start offset per bus id; slack and unknown ids map to None
    bus_start: Vec<Option<usize>>,
    bus_phases: Vec<Option<PhaseSet>>,
}

impl PhaseIndex {
    fn from_buses(buses: &[Bus]) -> Self {
        let max_id = buses.iter().map(|b| b.id).max().unwrap_or(0);
        let mut bus_start = vec![None; max_id + 1];
        let mut bus_phases = vec![None; max_id + 1];
        let mut entries = Vec::new();
        for bus in buses {
            bus_phases[bus.id] = Some(bus.phases);
            if bus.id == 0 || bus_start[bus.id].is_some() {
                continue;
            }
            bus_start[bus.id] = Some(entries.len());
            entries.extend(bus.phases.iter().map(|p| (bus.id, p)));
        }
        PhaseIndex {
            entries,
            bus_start,
            bus_phases,
        }
    }

    /// Total number of non-slack phases.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bus: usize, phase: Phase) -> Option<usize> {
        let start = (*self.bus_start.get(bus)?)?;
        let rank = self.bus_phases[bus]?.rank(phase)?;
        Some(start + rank)
    }

    pub fn entry(&self, k: usize) -> (usize, Phase) {
        self.entries[k]
    }

    pub fn entries(&self) -> &[(usize, Phase)] {
        &self.entries
    }

    /// Stacked indices of every phase of `bus`, in phase order.
    pub fn bus_indices(&self, bus: usize) -> Vec<usize> {
        match (self.bus_start.get(bus).copied().flatten(), self.bus_phases.get(bus).copied().flatten()) {
            (Some(start), Some(ps)) => (start..start + ps.len()).collect(),
            _ => Vec::new(),
        }
    }

    /// Short stable hash of the index layout, used to tie trained models
    /// and datasets to the network they were built for.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (bus, phase) in &self.entries {
            h.update(format!("{bus}{phase};").as_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingSlack,
    SlackNotThreePhase,
    DuplicateBus(usize),
    NonContiguousIds,
    UnknownBus { line: usize, bus: usize },
    SelfLoop { line: usize },
    NonRadial { buses: usize, lines: usize },
    Disconnected { bus: usize },
    PhaseMismatch { line: usize, bus: usize },
    DimensionMismatch { line: usize },
    AsymmetricMatrix { line: usize },
    SingularImpedance { line: usize },
    UnsuppliedPhase { bus: usize, phase: Phase },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingSlack => write!(f, "missing slack bus 0"),
            Violation::SlackNotThreePhase => write!(f, "slack bus 0 must carry phases abc"),
            Violation::DuplicateBus(id) => write!(f, "duplicate bus id {id}"),
            Violation::NonContiguousIds => write!(f, "bus ids are not contiguous from 0"),
            Violation::UnknownBus { line, bus } => write!(f, "line {line} references unknown bus {bus}"),
            Violation::SelfLoop { line } => write!(f, "line {line} is a self loop"),
            Violation::NonRadial { buses, lines } => {
                write!(f, "non-radial: {lines} lines for {buses} buses")
            }
            Violation::Disconnected { bus } => write!(f, "disconnected: bus {bus} unreachable from slack"),
            Violation::PhaseMismatch { line, bus } => {
                write!(f, "phase mismatch: line {line} carries a phase missing at bus {bus}")
            }
            Violation::DimensionMismatch { line } => {
                write!(f, "line {line} matrix dimensions do not match its phase count")
            }
            Violation::AsymmetricMatrix { line } => write!(f, "line {line} has an asymmetric matrix"),
            Violation::SingularImpedance { line } => write!(f, "singular impedance block on line {line}"),
            Violation::UnsuppliedPhase { bus, phase } => {
                write!(f, "phase {phase} at bus {bus} has no path to the slack")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidNetwork(msg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasedNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    phase_index: PhaseIndex,
}

impl PhasedNetwork {
    /// Buses are sorted by id; structural checks are left to [`validate_network`].
    pub fn new(mut buses: Vec<Bus>, lines: Vec<Line>) -> Self {
        buses.sort_by_key(|b| b.id);
        let phase_index = PhaseIndex::from_buses(&buses);
        PhasedNetwork {
            buses,
            lines,
            phase_index,
        }
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn phase_index(&self) -> &PhaseIndex {
        &self.phase_index
    }

    pub fn n_phases(&self) -> usize {
        self.phase_index.len()
    }

    pub fn bus(&self, id: usize) -> Option<&Bus> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok().map(|i| &self.buses[i])
    }

    pub fn validate(&self) -> ValidationReport {
        validate_network(self)
    }
}

fn is_symmetric(m: &DMatrix<Complex64>) -> bool {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).norm() <= 1e-12 * scale))
}

pub fn validate_network(net: &PhasedNetwork) -> ValidationReport {
    let mut out = Vec::new();
    let buses = &net.buses;

    match net.bus(0) {
        None => out.push(Violation::MissingSlack),
        Some(b) if b.phases != PhaseSet::ABC => out.push(Violation::SlackNotThreePhase),
        _ => {}
    }
    for w in buses.windows(2) {
        if w[0].id == w[1].id {
            out.push(Violation::DuplicateBus(w[0].id));
        }
    }
    if buses.iter().enumerate().any(|(i, b)| b.id != i) && !out.iter().any(|v| matches!(v, Violation::DuplicateBus(_))) {
        out.push(Violation::NonContiguousIds);
    }

    let n = buses.len();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buses.iter().map(|b| b.id + 1).max().unwrap_or(0)];
    for (k, line) in net.lines.iter().enumerate() {
        let ends = [line.from, line.to];
        let mut known = true;
        for &bus in &ends {
            match net.bus(bus) {
                None => {
                    out.push(Violation::UnknownBus { line: k, bus });
                    known = false;
                }
                Some(b) if !line.phases.is_subset_of(b.phases) => {
                    out.push(Violation::PhaseMismatch { line: k, bus });
                }
                _ => {}
            }
        }
        if line.from == line.to {
            out.push(Violation::SelfLoop { line: k });
            known = false;
        }
        let dim = line.phases.len();
        let dims_ok = line.z_series.shape() == (dim, dim) && line.y_shunt.shape() == (dim, dim);
        if !dims_ok {
            out.push(Violation::DimensionMismatch { line: k });
        } else {
            if !is_symmetric(&line.z_series) || !is_symmetric(&line.y_shunt) {
                out.push(Violation::AsymmetricMatrix { line: k });
            }
            if linalg::invert(&line.z_series).is_none() {
                out.push(Violation::SingularImpedance { line: k });
            }
        }
        if known {
            adjacency[line.from].push((line.to, k));
            adjacency[line.to].push((line.from, k));
        }
    }

    if n > 0 && net.lines.len() != n - 1 {
        out.push(Violation::NonRadial {
            buses: n,
            lines: net.lines.len(),
        });
    }

    if net.bus(0).is_some() {
        let reach = reachable(&adjacency, |_| true);
        for b in buses {
            if !reach[b.id] {
                out.push(Violation::Disconnected { bus: b.id });
            }
        }
        let connected = buses.iter().all(|b| reach[b.id]);
        if connected {
            for phase in Phase::ALL {
                let reach_p = reachable(&adjacency, |k| net.lines[k].phases.contains(phase));
                for b in buses.iter().filter(|b| b.id != 0 && b.phases.contains(phase)) {
                    if !reach_p[b.id] {
                        out.push(Violation::UnsuppliedPhase { bus: b.id, phase });
                    }
                }
            }
        }
    }

    ValidationReport { violations: out }
}

fn reachable(adjacency: &[Vec<(usize, usize)>], use_line: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    if seen.is_empty() {
        return seen;
    }
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &(v, k) in &adjacency[u] {
            if !seen[v] && use_line(k) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

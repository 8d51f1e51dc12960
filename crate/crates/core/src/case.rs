//! Network case data model and JSON case-file parsing.
//!
//! A case holds only what the frequency-divider model needs: bus count,
//! branch series reactances and generator transient reactances. Shunts,
//! line charging, loads and voltages are not represented.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1-based bus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub usize);

impl BusId {
    /// Zero-based position of this bus in matrix rows.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        BusId(index + 1)
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bus {}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    /// Per-unit series reactance.
    #[serde(rename = "x")]
    pub reactance_pu: f64,
}

impl Branch {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance_pu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: BusId,
    /// d-axis transient reactance, per-unit.
    #[serde(rename = "xd")]
    pub xd_pu: f64,
    /// q-axis transient reactance, per-unit.
    #[serde(rename = "xq")]
    pub xq_pu: f64,
}

impl Generator {
    /// Internal reactance as the mean of the d- and q-axis values.
    pub fn internal_reactance(&self) -> f64 {
        0.5 * (self.xd_pu + self.xq_pu)
    }

    pub fn internal_susceptance(&self) -> f64 {
        1.0 / self.internal_reactance()
    }
}

/// One test system. Field layout mirrors the JSON case schema, so the type
/// serializes to and from case files directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub n_buses: usize,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl NetworkCase {
    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Generators ordered by id (the column order of the bus–generator matrix).
    pub fn generators_by_id(&self) -> Vec<&Generator> {
        let mut gens: Vec<&Generator> = self.generators.iter().collect();
        gens.sort_by_key(|g| g.id);
        gens
    }

    pub fn generator_at(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    pub fn generator(&self, id: usize) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }
}

/// A single reason a case is invalid. Each variant names the offending entity.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("case has no buses")]
    NoBuses,
    #[error("case has no generators")]
    NoGenerators,
    #[error("{entity} references bus {bus}, outside 1..={n_buses}")]
    BusOutOfRange {
        entity: String,
        bus: usize,
        n_buses: usize,
    },
    #[error("branch {index} ({from}-{to}) connects a bus to itself")]
    SelfLoop { index: usize, from: usize, to: usize },
    #[error("{entity} has non-positive or non-finite reactance {value}")]
    BadReactance { entity: String, value: f64 },
    #[error("bus {bus} hosts more than one generator")]
    DuplicateGeneratorBus { bus: usize },
    #[error("generator ids must be 1..={n} without gaps; found {ids:?}")]
    GeneratorIds { n: usize, ids: Vec<usize> },
    #[error("network is disconnected; buses unreachable from bus 1: {unreachable:?}")]
    Disconnected { unreachable: Vec<usize> },
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("malformed case document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid case: {}", join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let case: NetworkCase = serde_json::from_str(text)?;
    let violations = validate_case(&case);
    if violations.is_empty() {
        Ok(case)
    } else {
        Err(CaseError::Validation(violations))
    }
}

pub fn serialize_case(case: &NetworkCase) -> String {
    // NetworkCase holds only plain data; serialization cannot fail.
    serde_json::to_string_pretty(case).expect("case serialization")
}

/// Returns every invariant violation in `case`; empty iff the case is valid.
pub fn validate_case(case: &NetworkCase) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = case.n_buses;
    if n == 0 {
        out.push(Violation::NoBuses);
    }
    if case.generators.is_empty() {
        out.push(Violation::NoGenerators);
    }

    let in_range = |b: BusId| (1..=n).contains(&b.0);
    for (k, br) in case.branches.iter().enumerate() {
        let entity = format!("branch {k} ({}-{})", br.from.0, br.to.0);
        for bus in [br.from, br.to] {
            if !in_range(bus) {
                out.push(Violation::BusOutOfRange {
                    entity: entity.clone(),
                    bus: bus.0,
                    n_buses: n,
                });
            }
        }
        if br.from == br.to {
            out.push(Violation::SelfLoop {
                index: k,
                from: br.from.0,
                to: br.to.0,
            });
        }
        if !(br.reactance_pu.is_finite() && br.reactance_pu > 0.0) {
            out.push(Violation::BadReactance {
                entity,
                value: br.reactance_pu,
            });
        }
    }

    let mut seen_buses = BTreeSet::new();
    let mut dup_buses = BTreeSet::new();
    for g in &case.generators {
        let entity = format!("generator {}", g.id);
        if !in_range(g.bus) {
            out.push(Violation::BusOutOfRange {
                entity: entity.clone(),
                bus: g.bus.0,
                n_buses: n,
            });
        }
        for value in [g.xd_pu, g.xq_pu] {
            if !(value.is_finite() && value > 0.0) {
                out.push(Violation::BadReactance {
                    entity: entity.clone(),
                    value,
                });
            }
        }
        if !seen_buses.insert(g.bus.0) {
            dup_buses.insert(g.bus.0);
        }
    }
    out.extend(
        dup_buses
            .into_iter()
            .map(|bus| Violation::DuplicateGeneratorBus { bus }),
    );

    let mut ids: Vec<usize> = case.generators.iter().map(|g| g.id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(k, &id)| id != k + 1) {
        out.push(Violation::GeneratorIds {
            n: ids.len(),
            ids,
        });
    }

    if n > 0 {
        let unreachable = unreachable_buses(case);
        if !unreachable.is_empty() {
            out.push(Violation::Disconnected { unreachable });
        }
    }
    out
}

/// Breadth-first search from bus 1 over branches with in-range endpoints.
fn unreachable_buses(case: &NetworkCase) -> Vec<usize> {
    let n = case.n_buses;
    let mut adjacency = vec![Vec::new(); n];
    for br in &case.branches {
        let (a, b) = (br.from.0, br.to.0);
        if (1..=n).contains(&a) && (1..=n).contains(&b) {
            adjacency[a - 1].push(b - 1);
            adjacency[b - 1].push(a - 1);
        }
    }
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !visited[v] {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    visited
        .iter()
        .enumerate()
        .filter(|(_, &seen)| !seen)
        .map(|(i, _)| i + 1)
        .collect()
}

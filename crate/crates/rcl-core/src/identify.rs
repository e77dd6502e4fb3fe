//! Rule-based conflict identification over a full adjacency matrix.
//!
//! Three patterns are scanned for:
//!
//! * **Direct**: two agents control the same parameter.
//! * **Indirect**: two agents control distinct parameters that both carry
//!   an edge to a common KPI.
//! * **Implicit**: an agent's parameter reaches a KPI another agent
//!   subscribes to through a mediated path that crosses at least one
//!   same-entity coupling (parameter-parameter or KPI-KPI). Paths are capped
//!   at two edges by default (one mediator), where crossing exactly one
//!   same-entity edge is structural. An implicit candidate is dropped when
//!   the same agent pair already conflicts over the same endpoints: a direct
//!   conflict on the path's origin parameter, or an indirect conflict whose
//!   witness uses the origin parameter with the same KPI.

use crate::datagen::ConflictModelSpec;
use crate::error::{Error, Result};
use crate::graph::{validate_full_adjacency, FullAdjacency};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictKind {
    Direct,
    Indirect,
    Implicit,
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConflictKind::Direct => write!(f, "direct"),
            ConflictKind::Indirect => write!(f, "indirect"),
            ConflictKind::Implicit => write!(f, "implicit"),
        }
    }
}

/// A parameter or KPI node in a conflict witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityRef {
    Param(usize),
    Kpi(usize),
}

impl EntityRef {
    pub fn label(&self) -> String {
        match self {
            EntityRef::Param(i) => format!("p{i}"),
            EntityRef::Kpi(i) => format!("k{i}"),
        }
    }
}

/// One identified conflict: the kind, the unordered agent pair (stored with
/// the smaller index first), and the witness path of entities.
///
/// Witness shapes: direct `[p]`; indirect `[p, k, p']` with the first
/// parameter controlled by the first agent; implicit `[p, ..., k]` running
/// from the controlled parameter to the subscribed KPI.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub agents: (usize, usize),
    pub witness: Vec<EntityRef>,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<String> = self.witness.iter().map(|e| e.label()).collect();
        write!(
            f,
            "{}(a{}, a{}, [{}])",
            self.kind,
            self.agents.0,
            self.agents.1,
            path.join(", ")
        )
    }
}

/// Deduplicated, canonically ordered set of conflicts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictSet {
    conflicts: Vec<Conflict>,
}

impl ConflictSet {
    fn from_map(map: BTreeMap<DedupKey, Conflict>) -> Self {
        let mut conflicts: Vec<Conflict> = map.into_values().collect();
        conflicts.sort();
        Self { conflicts }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Conflict> {
        self.conflicts.iter()
    }

    pub fn len(&self) -> usize {
        self.conflicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn of_kind(&self, kind: ConflictKind) -> impl Iterator<Item = &Conflict> {
        self.conflicts.iter().filter(move |c| c.kind == kind)
    }

    pub fn count_kind(&self, kind: ConflictKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn contains(&self, c: &Conflict) -> bool {
        self.conflicts.binary_search(c).is_ok()
    }

    /// Distinct agent pairs involved in any conflict.
    pub fn agent_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.conflicts.iter().map(|c| c.agents).collect()
    }

    /// `kind,agent_i,agent_j,witness` rows with semicolon-joined node labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,agent_i,agent_j,witness\n");
        for c in &self.conflicts {
            let path: Vec<String> = c.witness.iter().map(|e| e.label()).collect();
            out.push_str(&format!(
                "{},a{},a{},{}\n",
                c.kind,
                c.agents.0,
                c.agents.1,
                path.join(";")
            ));
        }
        out
    }
}

/// Identification options; `max_path_len` bounds the edge count of implicit
/// witness paths (>= 2; 2 keeps the single-mediator rule).
#[derive(Debug, Clone, Copy)]
pub struct IdentifyOptions {
    pub max_path_len: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { max_path_len: 2 }
    }
}

/// Dedup key: kind, unordered agents, witness as an unordered multiset.
type DedupKey = (ConflictKind, (usize, usize), Vec<EntityRef>);

fn dedup_key(c: &Conflict) -> DedupKey {
    let mut multiset = c.witness.clone();
    multiset.sort();
    (c.kind, c.agents, multiset)
}

fn insert_canonical(map: &mut BTreeMap<DedupKey, Conflict>, c: Conflict) {
    let key = dedup_key(&c);
    match map.get_mut(&key) {
        None => {
            map.insert(key, c);
        }
        Some(existing) => {
            // Keep the lexicographically smallest witness as representative.
            if c.witness < existing.witness {
                *existing = c;
            }
        }
    }
}

/// Scans the conflict graph for all direct, indirect, and implicit conflicts.
pub fn identify_conflicts(a: &FullAdjacency) -> Result<ConflictSet> {
    identify_conflicts_opts(a, IdentifyOptions::default())
}

pub fn identify_conflicts_opts(a: &FullAdjacency, opts: IdentifyOptions) -> Result<ConflictSet> {
    let diags = validate_full_adjacency(a);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::InvalidArgument(format!(
            "adjacency violates invariants: {}",
            msgs.join("; ")
        )));
    }
    if opts.max_path_len < 2 {
        return Err(Error::InvalidArgument("max_path_len must be >= 2".into()));
    }

    let d = a.dims();
    let (na, np, nk) = (d.n_agents, d.n_params, d.n_kpis);
    let known = a.known_block();
    let learned = a.learned_block();

    let controls = |agent: usize, p: usize| known.get(agent, p);
    let subscribes = |agent: usize, k: usize| known.get(agent, np + k);
    let entity_edge = |x: usize, y: usize| learned.get(x, y);

    let owners: Vec<Vec<usize>> = (0..np)
        .map(|p| (0..na).filter(|&ag| controls(ag, p)).collect())
        .collect();
    let watchers: Vec<Vec<usize>> = (0..nk)
        .map(|k| (0..na).filter(|&ag| subscribes(ag, k)).collect())
        .collect();

    let mut map: BTreeMap<DedupKey, Conflict> = BTreeMap::new();

    // Direct: shared control of one parameter.
    let mut direct_keys: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    for (p, own) in owners.iter().enumerate() {
        for i in 0..own.len() {
            for j in (i + 1)..own.len() {
                let pair = (own[i], own[j]);
                direct_keys.insert((pair.0, pair.1, p));
                insert_canonical(
                    &mut map,
                    Conflict {
                        kind: ConflictKind::Direct,
                        agents: pair,
                        witness: vec![EntityRef::Param(p)],
                    },
                );
            }
        }
    }

    // Indirect: distinct parameters meeting at a common KPI. Also collect
    // the (pair, parameter, KPI) endpoints for the implicit exclusion rule.
    let mut indirect_endpoints: BTreeSet<(usize, usize, usize, usize)> = BTreeSet::new();
    for k in 0..nk {
        for p1 in 0..np {
            if !entity_edge(p1, np + k) {
                continue;
            }
            for p2 in (p1 + 1)..np {
                if !entity_edge(p2, np + k) {
                    continue;
                }
                for &a1 in &owners[p1] {
                    for &a2 in &owners[p2] {
                        if a1 == a2 {
                            continue;
                        }
                        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
                        // Orient the witness so the first parameter belongs
                        // to the first agent.
                        let witness = if a1 < a2 {
                            vec![
                                EntityRef::Param(p1),
                                EntityRef::Kpi(k),
                                EntityRef::Param(p2),
                            ]
                        } else {
                            vec![
                                EntityRef::Param(p2),
                                EntityRef::Kpi(k),
                                EntityRef::Param(p1),
                            ]
                        };
                        indirect_endpoints.insert((lo, hi, p1, k));
                        indirect_endpoints.insert((lo, hi, p2, k));
                        insert_canonical(
                            &mut map,
                            Conflict {
                                kind: ConflictKind::Indirect,
                                agents: (lo, hi),
                                witness,
                            },
                        );
                    }
                }
            }
        }
    }

    // Implicit: depth-first enumeration of simple entity paths from each
    // controlled parameter, emitting a candidate whenever the path stands at
    // a KPI having crossed at least one same-entity edge.
    let ne = np + nk;
    let is_same_entity = |x: usize, y: usize| (x < np && y < np) || (x >= np && y >= np);
    for p1 in 0..np {
        if owners[p1].is_empty() {
            continue;
        }
        let mut visited = vec![false; ne];
        visited[p1] = true;
        let mut path: Vec<usize> = vec![p1];
        dfs_implicit(
            p1,
            1,
            0,
            opts.max_path_len,
            &mut visited,
            &mut path,
            &entity_edge,
            &is_same_entity,
            ne,
            np,
            &mut |full_path: &[usize], same_entity_edges: usize| {
                if same_entity_edges == 0 {
                    return;
                }
                let k2 = full_path[full_path.len() - 1] - np;
                for &a1 in &owners[p1] {
                    for &a2 in &watchers[k2] {
                        if a1 == a2 {
                            continue;
                        }
                        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
                        if direct_keys.contains(&(lo, hi, p1)) {
                            continue;
                        }
                        if indirect_endpoints.contains(&(lo, hi, p1, k2)) {
                            continue;
                        }
                        let witness: Vec<EntityRef> = full_path
                            .iter()
                            .map(|&x| {
                                if x < np {
                                    EntityRef::Param(x)
                                } else {
                                    EntityRef::Kpi(x - np)
                                }
                            })
                            .collect();
                        insert_canonical(
                            &mut map,
                            Conflict {
                                kind: ConflictKind::Implicit,
                                agents: (lo, hi),
                                witness,
                            },
                        );
                    }
                }
            },
        );
    }

    Ok(ConflictSet::from_map(map))
}

/// Walks simple paths of up to `max_len` edges; `emit` fires on every prefix
/// that currently ends at a KPI with >= 2 edges walked.
#[allow(clippy::too_many_arguments)]
fn dfs_implicit(
    node: usize,
    depth_nodes: usize,
    same_entity_edges: usize,
    max_len: usize,
    visited: &mut Vec<bool>,
    path: &mut Vec<usize>,
    entity_edge: &impl Fn(usize, usize) -> bool,
    is_same_entity: &impl Fn(usize, usize) -> bool,
    ne: usize,
    np: usize,
    emit: &mut impl FnMut(&[usize], usize),
) {
    let edges_walked = depth_nodes - 1;
    if edges_walked >= max_len {
        return;
    }
    for next in 0..ne {
        if visited[next] || !entity_edge(node, next) {
            continue;
        }
        let same = same_entity_edges + usize::from(is_same_entity(node, next));
        visited[next] = true;
        path.push(next);
        if next >= np && edges_walked + 1 >= 2 {
            emit(path, same);
        }
        dfs_implicit(
            next,
            depth_nodes + 1,
            same,
            max_len,
            visited,
            path,
            entity_edge,
            is_same_entity,
            ne,
            np,
            emit,
        );
        path.pop();
        visited[next] = false;
    }
}

/// Conflicts implied by the ground-truth model itself: build the true
/// adjacency from control/subscribe/influence/couplings and identify on it.
pub fn ground_truth_conflicts(spec: &ConflictModelSpec) -> Result<ConflictSet> {
    spec.validate()?;
    identify_conflicts(&spec.truth_adjacency()?)
}

//! Entity index spaces and the matrix containers shared by every pipeline
//! stage: score matrices over parameters and KPIs, their block decomposition,
//! and the block augmentation that merges learned edges with the known
//! agent relations into one full adjacency matrix.
//!
//! Node ordering is fixed for the lifetime of an experiment: agents first,
//! then parameters, then KPIs. All indexing goes through [`EntityDims`] so
//! offsets never leak into callers.

use crate::error::{Error, Result};
use crate::mat::{BinMat, Mat};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Entity counts: `n_agents` agents, `n_params` tunable parameters,
/// `n_kpis` observed KPIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDims {
    pub n_agents: usize,
    pub n_params: usize,
    pub n_kpis: usize,
}

impl EntityDims {
    pub fn new(n_agents: usize, n_params: usize, n_kpis: usize) -> Result<Self> {
        if n_agents == 0 || n_params == 0 || n_kpis == 0 {
            return Err(Error::InvalidArgument(format!(
                "all entity counts must be >= 1, got ({n_agents}, {n_params}, {n_kpis})"
            )));
        }
        Ok(Self {
            n_agents,
            n_params,
            n_kpis,
        })
    }

    /// Number of learnable entities (parameters + KPIs).
    pub fn n_entities(&self) -> usize {
        self.n_params + self.n_kpis
    }

    /// Total node count (agents + parameters + KPIs).
    pub fn n_nodes(&self) -> usize {
        self.n_agents + self.n_params + self.n_kpis
    }

    /// Label for a node in the full (agents, params, KPIs) ordering.
    pub fn node_label(&self, i: usize) -> String {
        if i < self.n_agents {
            format!("a{i}")
        } else if i < self.n_agents + self.n_params {
            format!("p{}", i - self.n_agents)
        } else {
            format!("k{}", i - self.n_agents - self.n_params)
        }
    }

    /// Label for an entity in the (params, KPIs) ordering used by score
    /// and learned-adjacency matrices.
    pub fn entity_label(&self, i: usize) -> String {
        if i < self.n_params {
            format!("p{i}")
        } else {
            format!("k{}", i - self.n_params)
        }
    }
}

/// Known agent relations: row `a`, column `j` is set when agent `a`
/// controls parameter `j` (for `j < n_params`) or subscribes to KPI
/// `j - n_params`. These come from the control plane and are never learned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownRelations {
    matrix: BinMat,
}

impl KnownRelations {
    /// Every agent must control at least one parameter and subscribe to at
    /// least one KPI.
    pub fn new(matrix: BinMat, dims: EntityDims) -> Result<Self> {
        if matrix.rows() != dims.n_agents || matrix.cols() != dims.n_entities() {
            return Err(Error::Shape(format!(
                "known relations must be {}x{}, got {}x{}",
                dims.n_agents,
                dims.n_entities(),
                matrix.rows(),
                matrix.cols()
            )));
        }
        for a in 0..matrix.rows() {
            let controls = (0..dims.n_params).any(|p| matrix.get(a, p));
            let observes = (dims.n_params..dims.n_entities()).any(|k| matrix.get(a, k));
            if !controls || !observes {
                return Err(Error::InvalidArgument(format!(
                    "agent a{a} must control >= 1 parameter and observe >= 1 KPI"
                )));
            }
        }
        Ok(Self { matrix })
    }

    pub fn from_control_subscribe(
        control: &BinMat,
        subscribe: &BinMat,
        dims: EntityDims,
    ) -> Result<Self> {
        if control.rows() != dims.n_agents
            || control.cols() != dims.n_params
            || subscribe.rows() != dims.n_agents
            || subscribe.cols() != dims.n_kpis
        {
            return Err(Error::Shape(
                "control/subscribe shapes disagree with dims".into(),
            ));
        }
        let mut m = BinMat::zeros(dims.n_agents, dims.n_entities());
        for a in 0..dims.n_agents {
            for p in 0..dims.n_params {
                m.set(a, p, control.get(a, p));
            }
            for k in 0..dims.n_kpis {
                m.set(a, dims.n_params + k, subscribe.get(a, k));
            }
        }
        Self::new(m, dims)
    }

    pub fn matrix(&self) -> &BinMat {
        &self.matrix
    }

    pub fn n_agents(&self) -> usize {
        self.matrix.rows()
    }

    /// Agent `a` controls parameter `p`.
    pub fn controls(&self, a: usize, p: usize) -> bool {
        self.matrix.get(a, p)
    }

    /// Agent `a` subscribes to KPI `k` (KPI index, not entity index).
    pub fn subscribes(&self, a: usize, k: usize, dims: EntityDims) -> bool {
        self.matrix.get(a, dims.n_params + k)
    }
}

/// Real-valued interaction scores over the `(params, KPIs)` entity space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    values: Mat,
    dims: EntityDims,
}

impl ScoreMatrix {
    pub fn new(values: Mat, dims: EntityDims) -> Result<Self> {
        let n = dims.n_entities();
        if values.rows() != n || values.cols() != n {
            return Err(Error::Shape(format!(
                "score matrix must be {n}x{n}, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::InvalidArgument(
                "score matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { values, dims })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn dims(&self) -> EntityDims {
        self.dims
    }
}

/// The four blocks of a score matrix: parameter-parameter, parameter-KPI,
/// KPI-parameter, and KPI-KPI interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBlocks {
    pub s_pp: Mat,
    pub s_pk: Mat,
    pub s_kp: Mat,
    pub s_kk: Mat,
}

/// Splits a score matrix into its four interaction blocks.
pub fn blocks(s: &ScoreMatrix) -> ScoreBlocks {
    let d = s.dims();
    let (np, nk) = (d.n_params, d.n_kpis);
    let mut s_pp = Mat::zeros(np, np);
    let mut s_pk = Mat::zeros(np, nk);
    let mut s_kp = Mat::zeros(nk, np);
    let mut s_kk = Mat::zeros(nk, nk);
    for i in 0..np {
        for j in 0..np {
            s_pp.set(i, j, s.values().get(i, j));
        }
        for j in 0..nk {
            s_pk.set(i, j, s.values().get(i, np + j));
        }
    }
    for i in 0..nk {
        for j in 0..np {
            s_kp.set(i, j, s.values().get(np + i, j));
        }
        for j in 0..nk {
            s_kk.set(i, j, s.values().get(np + i, np + j));
        }
    }
    ScoreBlocks {
        s_pp,
        s_pk,
        s_kp,
        s_kk,
    }
}

/// Reassembles the four blocks into a single matrix; exact inverse of [`blocks`].
pub fn reassemble(b: &ScoreBlocks, dims: EntityDims) -> Result<ScoreMatrix> {
    let (np, nk) = (dims.n_params, dims.n_kpis);
    if b.s_pp.rows() != np
        || b.s_pp.cols() != np
        || b.s_pk.rows() != np
        || b.s_pk.cols() != nk
        || b.s_kp.rows() != nk
        || b.s_kp.cols() != np
        || b.s_kk.rows() != nk
        || b.s_kk.cols() != nk
    {
        return Err(Error::Shape("block shapes disagree with dims".into()));
    }
    let n = dims.n_entities();
    let mut m = Mat::zeros(n, n);
    for i in 0..np {
        for j in 0..np {
            m.set(i, j, b.s_pp.get(i, j));
        }
        for j in 0..nk {
            m.set(i, np + j, b.s_pk.get(i, j));
        }
    }
    for i in 0..nk {
        for j in 0..np {
            m.set(np + i, j, b.s_kp.get(i, j));
        }
        for j in 0..nk {
            m.set(np + i, np + j, b.s_kk.get(i, j));
        }
    }
    ScoreMatrix::new(m, dims)
}

/// Binary adjacency over the `(params, KPIs)` entity space, as produced by
/// score binarization. Diagonal is always zero; symmetry is established by
/// the binarizer's symmetrize step, not by this type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnedAdjacency {
    matrix: BinMat,
}

impl LearnedAdjacency {
    pub fn new(matrix: BinMat) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!(
                "learned adjacency must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.diagonal_is_zero() {
            return Err(Error::InvalidArgument(
                "learned adjacency must have a zero diagonal".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            matrix: BinMat::zeros(n, n),
        }
    }

    pub fn matrix(&self) -> &BinMat {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.matrix.get(i, j)
    }

    /// Undirected edge count over unordered pairs.
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        let mut c = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.matrix.get(i, j) || self.matrix.get(j, i) {
                    c += 1;
                }
            }
        }
        c
    }
}

/// Full conflict-graph adjacency over all nodes (agents, params, KPIs).
/// Layout: agent-agent block is the identity, agent-entity blocks carry the
/// known relations, and the entity-entity block carries learned edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullAdjacency {
    matrix: BinMat,
    dims: EntityDims,
}

impl FullAdjacency {
    pub fn new(matrix: BinMat, dims: EntityDims) -> Result<Self> {
        let n = dims.n_nodes();
        if matrix.rows() != n || matrix.cols() != n {
            return Err(Error::Shape(format!(
                "full adjacency must be {n}x{n}, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(Self { matrix, dims })
    }

    pub fn matrix(&self) -> &BinMat {
        &self.matrix
    }

    pub fn dims(&self) -> EntityDims {
        self.dims
    }

    /// Extracts the known-relations block (agent rows).
    pub fn known_block(&self) -> BinMat {
        let d = self.dims;
        let mut m = BinMat::zeros(d.n_agents, d.n_entities());
        for a in 0..d.n_agents {
            for e in 0..d.n_entities() {
                m.set(a, e, self.matrix.get(a, d.n_agents + e));
            }
        }
        m
    }

    /// Extracts the learned entity-entity block.
    pub fn learned_block(&self) -> BinMat {
        let d = self.dims;
        let ne = d.n_entities();
        let mut m = BinMat::zeros(ne, ne);
        for i in 0..ne {
            for j in 0..ne {
                m.set(i, j, self.matrix.get(d.n_agents + i, d.n_agents + j));
            }
        }
        m
    }
}

/// Assembles the full adjacency from the learned entity block and the known
/// agent relations:
///
/// ```text
/// | I      A_known |
/// | A_kᵀ   learned |
/// ```
pub fn boxplus_augment(
    learned: &LearnedAdjacency,
    known: &KnownRelations,
    dims: EntityDims,
) -> Result<FullAdjacency> {
    let ne = dims.n_entities();
    if learned.n() != ne {
        return Err(Error::Shape(format!(
            "learned adjacency is {}x{} but dims require {ne}x{ne}",
            learned.n(),
            learned.n()
        )));
    }
    if known.n_agents() != dims.n_agents || known.matrix().cols() != ne {
        return Err(Error::Shape("known relations disagree with dims".into()));
    }
    let na = dims.n_agents;
    let n = dims.n_nodes();
    let mut m = BinMat::zeros(n, n);
    for a in 0..na {
        m.set(a, a, true);
    }
    for a in 0..na {
        for e in 0..ne {
            let v = known.matrix().get(a, e);
            m.set(a, na + e, v);
            m.set(na + e, a, v);
        }
    }
    for i in 0..ne {
        for j in 0..ne {
            m.set(na + i, na + j, learned.matrix().get(i, j));
        }
    }
    FullAdjacency::new(m, dims)
}

/// A violated structural invariant of a [`FullAdjacency`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// `A[i][j] != A[j][i]`; reports the first offending pair.
    Asymmetry { i: usize, j: usize },
    /// Agent-agent block differs from the identity at `(i, j)`.
    AgentBlockNotIdentity { i: usize, j: usize },
    /// Learned block has a self-loop at entity `i`.
    LearnedDiagonalSet { i: usize },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::Asymmetry { i, j } => write!(f, "asymmetric at ({i}, {j})"),
            Diagnostic::AgentBlockNotIdentity { i, j } => {
                write!(f, "agent block is not the identity at ({i}, {j})")
            }
            Diagnostic::LearnedDiagonalSet { i } => {
                write!(f, "learned block has a self-loop at entity {i}")
            }
        }
    }
}

/// Checks the structural invariants of a full adjacency. Returns one
/// diagnostic per violated invariant kind, carrying the first offending
/// location; an empty list means all invariants hold.
pub fn validate_full_adjacency(a: &FullAdjacency) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let m = a.matrix();
    let d = a.dims();
    let n = d.n_nodes();

    'sym: for i in 0..n {
        for j in (i + 1)..n {
            if m.get(i, j) != m.get(j, i) {
                out.push(Diagnostic::Asymmetry { i, j });
                break 'sym;
            }
        }
    }

    'agent: for i in 0..d.n_agents {
        for j in 0..d.n_agents {
            let expect = i == j;
            if m.get(i, j) != expect {
                out.push(Diagnostic::AgentBlockNotIdentity { i, j });
                break 'agent;
            }
        }
    }

    for e in 0..d.n_entities() {
        if m.get(d.n_agents + e, d.n_agents + e) {
            out.push(Diagnostic::LearnedDiagonalSet { i: e });
            break;
        }
    }

    out
}

/// Formats a float with 17 significant digits so the decimal text parses
/// back to the identical bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with a header row of node labels; one data row per node.
pub fn score_matrix_csv(s: &ScoreMatrix) -> String {
    let d = s.dims();
    let labels: Vec<String> = (0..d.n_entities()).map(|i| d.entity_label(i)).collect();
    mat_csv(s.values(), &labels)
}

pub fn learned_adjacency_csv(a: &LearnedAdjacency, dims: EntityDims) -> String {
    let labels: Vec<String> = (0..dims.n_entities())
        .map(|i| dims.entity_label(i))
        .collect();
    bin_csv(a.matrix(), &labels)
}

pub fn full_adjacency_csv(a: &FullAdjacency) -> String {
    let d = a.dims();
    let labels: Vec<String> = (0..d.n_nodes()).map(|i| d.node_label(i)).collect();
    bin_csv(a.matrix(), &labels)
}

fn mat_csv(m: &Mat, labels: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&labels.join(","));
    out.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn bin_csv(m: &BinMat, labels: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&labels.join(","));
    out.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols())
            .map(|j| {
                if m.get(i, j) {
                    "1".into()
                } else {
                    "0".to_string()
                }
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

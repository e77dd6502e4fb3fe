//! Synthetic telemetry generator backed by a fully known conflict model.
//!
//! The generative model is linear-Gaussian: parameter rows are i.i.d.
//! Gaussians, coupled parameters bleed into each other through
//! `(I + beta*C_p)`, KPIs respond linearly through the influence weights,
//! coupled KPIs mix through `(I + beta*C_k)`, and observation noise is added
//! last. Linear structure keeps the ground-truth graph unambiguous while
//! leaving every labelled interaction statistically visible.

use crate::error::{Error, Result};
use crate::graph::{format_f64, EntityDims, FullAdjacency, KnownRelations, LearnedAdjacency};
use crate::mat::{BinMat, Mat};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Mixing strength applied across coupled parameters and coupled KPIs.
pub const COUPLING_STRENGTH: f64 = 0.5;

const DATASET_SCHEMA_VERSION: u32 = 1;

/// Ground-truth conflict model: who controls what, what influences what,
/// and which same-entity couplings exist, plus the generative moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictModelSpec {
    pub dims: EntityDims,
    /// `n_agents x n_params`; agent a controls parameter p.
    pub control: BinMat,
    /// `n_agents x n_kpis`; agent a subscribes to KPI k.
    pub subscribe: BinMat,
    /// `n_params x n_kpis` real weights; zero means no influence.
    pub influence: Mat,
    /// Symmetric, zero-diagonal couplings among parameters.
    pub param_coupling: BinMat,
    /// Symmetric, zero-diagonal couplings among KPIs.
    pub kpi_coupling: BinMat,
    pub noise_std: f64,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
    pub seed: u64,
}

impl ConflictModelSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if self.control.rows() != d.n_agents || self.control.cols() != d.n_params {
            return Err(Error::Shape("control must be n_agents x n_params".into()));
        }
        if self.subscribe.rows() != d.n_agents || self.subscribe.cols() != d.n_kpis {
            return Err(Error::Shape("subscribe must be n_agents x n_kpis".into()));
        }
        if self.influence.rows() != d.n_params || self.influence.cols() != d.n_kpis {
            return Err(Error::Shape("influence must be n_params x n_kpis".into()));
        }
        if self.param_coupling.rows() != d.n_params || !self.param_coupling.is_square() {
            return Err(Error::Shape(
                "param_coupling must be n_params x n_params".into(),
            ));
        }
        if self.kpi_coupling.rows() != d.n_kpis || !self.kpi_coupling.is_square() {
            return Err(Error::Shape("kpi_coupling must be n_kpis x n_kpis".into()));
        }
        if !self.param_coupling.is_symmetric() || !self.param_coupling.diagonal_is_zero() {
            return Err(Error::InvalidArgument(
                "param_coupling must be symmetric with a zero diagonal".into(),
            ));
        }
        if !self.kpi_coupling.is_symmetric() || !self.kpi_coupling.diagonal_is_zero() {
            return Err(Error::InvalidArgument(
                "kpi_coupling must be symmetric with a zero diagonal".into(),
            ));
        }
        if !self.influence.is_finite() {
            return Err(Error::InvalidArgument(
                "influence contains non-finite entries".into(),
            ));
        }
        for p in 0..d.n_params {
            if !(0..d.n_agents).any(|a| self.control.get(a, p)) {
                return Err(Error::InvalidArgument(format!(
                    "parameter p{p} has no controlling agent"
                )));
            }
        }
        for k in 0..d.n_kpis {
            if !(0..d.n_params).any(|p| self.influence.get(p, k) != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "KPI k{k} has no influencing parameter"
                )));
            }
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_std must be positive and finite".into(),
            ));
        }
        if self.param_mean.len() != d.n_params || self.param_std.len() != d.n_params {
            return Err(Error::Shape(
                "param_mean/param_std must have n_params entries".into(),
            ));
        }
        if self.param_mean.iter().any(|v| !v.is_finite())
            || self.param_std.iter().any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidArgument(
                "parameter moments must be finite, std > 0".into(),
            ));
        }
        // Agent rows are checked by KnownRelations below.
        KnownRelations::from_control_subscribe(&self.control, &self.subscribe, d)?;
        Ok(())
    }

    /// Same model with a different root seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    /// Label matrix: `labels[p][k] = 1` iff the influence weight is nonzero.
    pub fn labels(&self) -> BinMat {
        let d = self.dims;
        let mut y = BinMat::zeros(d.n_params, d.n_kpis);
        for p in 0..d.n_params {
            for k in 0..d.n_kpis {
                y.set(p, k, self.influence.get(p, k) != 0.0);
            }
        }
        y
    }

    pub fn known_relations(&self) -> Result<KnownRelations> {
        KnownRelations::from_control_subscribe(&self.control, &self.subscribe, self.dims)
    }

    /// Ground-truth entity adjacency: cross edges where the label matrix is
    /// set, same-entity edges where couplings are set. Symmetric, zero diagonal.
    pub fn truth_learned(&self) -> LearnedAdjacency {
        let d = self.dims;
        let (np, ne) = (d.n_params, d.n_entities());
        let labels = self.labels();
        let mut m = BinMat::zeros(ne, ne);
        for i in 0..np {
            for j in 0..np {
                if i != j {
                    m.set(i, j, self.param_coupling.get(i, j));
                }
            }
            for k in 0..d.n_kpis {
                let v = labels.get(i, k);
                m.set(i, np + k, v);
                m.set(np + k, i, v);
            }
        }
        for i in 0..d.n_kpis {
            for j in 0..d.n_kpis {
                if i != j {
                    m.set(np + i, np + j, self.kpi_coupling.get(i, j));
                }
            }
        }
        LearnedAdjacency::new(m).expect("construction keeps the diagonal zero")
    }

    /// Ground-truth full adjacency (known relations plus truth edges).
    pub fn truth_adjacency(&self) -> Result<FullAdjacency> {
        crate::graph::boxplus_augment(&self.truth_learned(), &self.known_relations()?, self.dims)
    }
}

/// A generated dataset together with everything needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n_params x L` observed parameter series (coupling already applied).
    pub x_p: Mat,
    /// `n_kpis x L` observed KPI series (mixing and noise applied).
    pub x_k: Mat,
    /// `n_params x n_kpis` ground-truth interaction labels.
    pub labels: BinMat,
    pub truth_learned: LearnedAdjacency,
    pub known: KnownRelations,
    pub spec: ConflictModelSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x_p.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> EntityDims {
        self.spec.dims
    }
}

/// The default 4-agent, 7-parameter, 4-KPI model.
///
/// Wiring highlights: a0 and a1 share control of p0 (a direct conflict);
/// p1 (a1) and p2 (a2) both drive k0 (an indirect conflict); p3, p4, and p6
/// are coupled parameters driving k1, with a3 controlling p4 and only a0
/// watching k1 (an implicit chain); k2 and k3 are coupled KPIs fed by the
/// coupled pair p0/p5.
///
/// Parameters sharing an influence support are exactly the coupled ones,
/// and coupled KPIs share their influencer set. Interaction structure then
/// lines up with similarity structure - entities form tight groups per KPI
/// neighborhood, with every in-group pair a true edge - which keeps the
/// ground-truth graph fully recoverable from pairwise alignments.
pub fn default_topology() -> ConflictModelSpec {
    let dims = EntityDims::new(4, 7, 4).expect("static counts");
    let control = BinMat::from_rows(&[
        &[1, 0, 0, 0, 0, 0, 0], // a0: p0
        &[1, 1, 0, 0, 0, 0, 0], // a1: p0, p1
        &[0, 0, 1, 1, 0, 1, 0], // a2: p2, p3, p5
        &[0, 0, 0, 0, 1, 0, 1], // a3: p4, p6
    ]);
    let subscribe = BinMat::from_rows(&[
        &[0, 1, 0, 0], // a0: k1
        &[1, 0, 0, 0], // a1: k0
        &[0, 0, 0, 1], // a2: k3
        &[0, 0, 1, 0], // a3: k2
    ]);
    let influence = Mat::from_rows(&[
        //  k0    k1    k2    k3
        &[0.0, 0.0, 1.0, 0.8], // p0
        &[1.0, 0.0, 0.0, 0.0], // p1
        &[0.8, 0.0, 0.0, 0.0], // p2
        &[0.0, 0.9, 0.0, 0.0], // p3
        &[0.0, 0.7, 0.0, 0.0], // p4
        &[0.0, 0.0, 0.8, 1.0], // p5
        &[0.0, 0.6, 0.0, 0.0], // p6
    ]);
    let mut param_coupling = BinMat::zeros(7, 7);
    let mut couple = |i: usize, j: usize| {
        param_coupling.set(i, j, true);
        param_coupling.set(j, i, true);
    };
    couple(1, 2); // k0 drivers
    couple(3, 4); // k1 drivers (the implicit chain runs p4 ~ p3 -> k1)
    couple(3, 6);
    couple(4, 6);
    couple(0, 5); // k2/k3 drivers
    let mut kpi_coupling = BinMat::zeros(4, 4);
    kpi_coupling.set(2, 3, true);
    kpi_coupling.set(3, 2, true);
    ConflictModelSpec {
        dims,
        control,
        subscribe,
        influence,
        param_coupling,
        kpi_coupling,
        noise_std: 0.1,
        param_mean: vec![0.0; 7],
        param_std: vec![1.0; 7],
        seed: 42,
    }
}

/// Draws `length` samples from the model. Deterministic in `spec.seed`:
/// parameter draws come first (row-major), then observation noise (row-major).
pub fn generate(spec: &ConflictModelSpec, length: usize) -> Result<Dataset> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::InvalidArgument("dataset length must be >= 1".into()));
    }
    let d = spec.dims;
    let (np, nk) = (d.n_params, d.n_kpis);
    let mut rng = Rng::new(spec.seed);

    let mut raw = Mat::zeros(np, length);
    for p in 0..np {
        for l in 0..length {
            raw.set(p, l, rng.normal_with(spec.param_mean[p], spec.param_std[p]));
        }
    }

    // Effective parameters: x_p = (I + beta*C_p) raw.
    let mut x_p = raw.clone();
    for i in 0..np {
        for j in 0..np {
            if spec.param_coupling.get(i, j) {
                for l in 0..length {
                    let v = x_p.get(i, l) + COUPLING_STRENGTH * raw.get(j, l);
                    x_p.set(i, l, v);
                }
            }
        }
    }

    // KPI response: base = W^T x_p, then (I + beta*C_k) mixing, then noise.
    let mut base = Mat::zeros(nk, length);
    for k in 0..nk {
        for p in 0..np {
            let w = spec.influence.get(p, k);
            if w == 0.0 {
                continue;
            }
            for l in 0..length {
                let v = base.get(k, l) + w * x_p.get(p, l);
                base.set(k, l, v);
            }
        }
    }
    let mut x_k = base.clone();
    for i in 0..nk {
        for j in 0..nk {
            if spec.kpi_coupling.get(i, j) {
                for l in 0..length {
                    let v = x_k.get(i, l) + COUPLING_STRENGTH * base.get(j, l);
                    x_k.set(i, l, v);
                }
            }
        }
    }
    for k in 0..nk {
        for l in 0..length {
            let v = x_k.get(k, l) + rng.normal_with(0.0, spec.noise_std);
            x_k.set(k, l, v);
        }
    }

    Ok(Dataset {
        x_p,
        x_k,
        labels: spec.labels(),
        truth_learned: spec.truth_learned(),
        known: spec.known_relations()?,
        spec: spec.clone(),
    })
}

// --- on-disk layout -------------------------------------------------------
//
// <dir>/spec.json           schema version, data checksum, full model spec
// <dir>/x_p.csv             n_params rows x L columns, no header
// <dir>/x_k.csv             n_kpis rows x L columns, no header
// <dir>/labels.csv          n_params rows x n_kpis columns of 0/1
// <dir>/truth_learned.csv   entity adjacency, 0/1
// <dir>/known.csv           n_agents rows x entity columns of 0/1

#[derive(Serialize, Deserialize)]
struct SpecFile {
    schema_version: u32,
    data_checksum: String,
    spec: ConflictModelSpec,
}

const DATA_FILES: [&str; 5] = [
    "x_p.csv",
    "x_k.csv",
    "labels.csv",
    "truth_learned.csv",
    "known.csv",
];

fn fnv1a64(bytes: &[u8], state: u64) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn checksum_of(parts: &[&str]) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in parts {
        h = fnv1a64(p.as_bytes(), h);
    }
    format!("{h:016x}")
}

fn float_csv(m: &Mat) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn bin_csv(m: &BinMat) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 2);
    for i in 0..m.rows() {
        let row: Vec<&str> = (0..m.cols())
            .map(|j| if m.get(i, j) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_float_csv(text: &str, rows: usize, cols: usize, name: &str) -> Result<Mat> {
    let mut m = Mat::zeros(rows, cols);
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != rows {
        return Err(Error::Schema(format!(
            "{name}: expected {rows} rows, found {}",
            lines.len()
        )));
    }
    for (i, line) in lines.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(Error::Schema(format!(
                "{name}: row {i} has {} columns, expected {cols}",
                cells.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Schema(format!("{name}: unparsable cell at ({i}, {j})")))?;
            m.set(i, j, v);
        }
    }
    Ok(m)
}

fn parse_bin_csv(text: &str, rows: usize, cols: usize, name: &str) -> Result<BinMat> {
    let mut m = BinMat::zeros(rows, cols);
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != rows {
        return Err(Error::Schema(format!(
            "{name}: expected {rows} rows, found {}",
            lines.len()
        )));
    }
    for (i, line) in lines.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(Error::Schema(format!(
                "{name}: row {i} has {} columns, expected {cols}",
                cells.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            match *cell {
                "0" => m.set(i, j, false),
                "1" => m.set(i, j, true),
                other => {
                    return Err(Error::Schema(format!(
                        "{name}: cell ({i}, {j}) must be 0 or 1, found {other:?}"
                    )))
                }
            }
        }
    }
    Ok(m)
}

/// Writes the dataset directory. Overwrites existing files byte-for-byte
/// reproducibly.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let parts = [
        float_csv(&ds.x_p),
        float_csv(&ds.x_k),
        bin_csv(&ds.labels),
        bin_csv(ds.truth_learned.matrix()),
        bin_csv(ds.known.matrix()),
    ];
    let checksum = checksum_of(&[&parts[0], &parts[1], &parts[2], &parts[3], &parts[4]]);
    for (name, body) in DATA_FILES.iter().zip(&parts) {
        std::fs::write(dir.join(name), body)?;
    }
    let spec_file = SpecFile {
        schema_version: DATASET_SCHEMA_VERSION,
        data_checksum: checksum,
        spec: ds.spec.clone(),
    };
    let json = serde_json::to_string_pretty(&spec_file)?;
    std::fs::write(dir.join("spec.json"), json + "\n")?;
    Ok(())
}

/// Reads a dataset directory back, verifying schema version, shapes,
/// checksum, and label consistency.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let spec_text = std::fs::read_to_string(dir.join("spec.json"))?;
    let spec_file: SpecFile = serde_json::from_str(&spec_text)?;
    if spec_file.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset schema version {} (expected {DATASET_SCHEMA_VERSION})",
            spec_file.schema_version
        )));
    }
    let spec = spec_file.spec;
    spec.validate()?;
    let d = spec.dims;

    let mut bodies = Vec::with_capacity(DATA_FILES.len());
    for name in DATA_FILES {
        bodies.push(std::fs::read_to_string(dir.join(name))?);
    }
    let computed = checksum_of(&[&bodies[0], &bodies[1], &bodies[2], &bodies[3], &bodies[4]]);
    if computed != spec_file.data_checksum {
        return Err(Error::Checksum {
            stored: spec_file.data_checksum,
            computed,
        });
    }

    let length = bodies[0]
        .lines()
        .next()
        .map(|l| l.split(',').count())
        .ok_or_else(|| Error::Schema("x_p.csv is empty".into()))?;
    let x_p = parse_float_csv(&bodies[0], d.n_params, length, "x_p.csv")?;
    let x_k = parse_float_csv(&bodies[1], d.n_kpis, length, "x_k.csv")?;
    let labels = parse_bin_csv(&bodies[2], d.n_params, d.n_kpis, "labels.csv")?;
    let truth = parse_bin_csv(
        &bodies[3],
        d.n_entities(),
        d.n_entities(),
        "truth_learned.csv",
    )?;
    let known = parse_bin_csv(&bodies[4], d.n_agents, d.n_entities(), "known.csv")?;

    if !x_p.is_finite() || !x_k.is_finite() {
        return Err(Error::Schema(
            "sample matrices contain non-finite values".into(),
        ));
    }
    if labels != spec.labels() {
        return Err(Error::Schema(
            "labels.csv disagrees with the influence matrix".into(),
        ));
    }
    let truth = LearnedAdjacency::new(truth)
        .map_err(|e| Error::Schema(format!("truth_learned.csv: {e}")))?;
    if truth != spec.truth_learned() {
        return Err(Error::Schema(
            "truth_learned.csv disagrees with the model spec".into(),
        ));
    }
    let known =
        KnownRelations::new(known, d).map_err(|e| Error::Schema(format!("known.csv: {e}")))?;
    if known != spec.known_relations()? {
        return Err(Error::Schema(
            "known.csv disagrees with control/subscribe".into(),
        ));
    }

    Ok(Dataset {
        x_p,
        x_k,
        labels,
        truth_learned: truth,
        known,
        spec,
    })
}

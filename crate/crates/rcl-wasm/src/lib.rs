//! Browser demo bindings: an interactive session around the conflict
//! detection pipeline. The page generates a synthetic dataset, steps the
//! two-tower training, and reconstructs the conflict graph with a selectable
//! binarizer, all in-browser. Methods return JSON strings for the page to
//! render.
//!
//! The session logic lives in plain methods returning `Result<_, String>`
//! (testable on any target); the `wasm_bindgen` surface wraps them.

use rcl_core::binarize::{binarize_with, BinarizationMethod, BinarizeOptions};
use rcl_core::datagen::{default_topology, generate, Dataset};
use rcl_core::eval::{conflict_f1, graph_f1};
use rcl_core::graph::boxplus_augment;
use rcl_core::identify::{
    ground_truth_conflicts, identify_conflicts, Conflict, ConflictKind, ConflictSet,
};
use rcl_core::twotower::{full_score_matrix, EpochRecord, Hyperparams, Trainer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct EpochOut {
    epoch: usize,
    loss: f64,
    accuracy: f64,
    auc: Option<f64>,
}

impl From<&EpochRecord> for EpochOut {
    fn from(rec: &EpochRecord) -> Self {
        Self {
            epoch: rec.epoch,
            loss: rec.loss,
            accuracy: rec.accuracy,
            auc: rec.auc,
        }
    }
}

#[derive(Serialize)]
struct ScoresOut {
    labels: Vec<String>,
    alpha: f64,
    /// Row-major (n_params + n_kpis)^2 score matrix.
    values: Vec<f64>,
    truth_edges: Vec<Vec<u8>>,
}

#[derive(Serialize)]
struct ConflictOut {
    kind: String,
    agents: [usize; 2],
    witness: Vec<String>,
    in_truth: bool,
}

#[derive(Serialize)]
struct ReconstructOut {
    adjacency: Vec<Vec<u8>>,
    f1_graph: f64,
    f1_indirect: f64,
    f1_implicit: f64,
    conflicts: Vec<ConflictOut>,
    missed: Vec<ConflictOut>,
}

fn conflict_out(c: &Conflict, in_truth: bool) -> ConflictOut {
    ConflictOut {
        kind: c.kind.to_string(),
        agents: [c.agents.0, c.agents.1],
        witness: c.witness.iter().map(|e| e.label()).collect(),
        in_truth,
    }
}

/// One interactive pipeline session over the built-in conflict model.
#[wasm_bindgen]
pub struct Demo {
    dataset: Dataset,
    trainer: Trainer,
    history: Vec<EpochRecord>,
    truth_conflicts: ConflictSet,
}

impl Demo {
    pub fn create(seed: u64, length: usize) -> Result<Demo, String> {
        let spec = default_topology().with_seed(seed);
        let dataset = generate(&spec, length.max(8)).map_err(|e| e.to_string())?;
        let hp = Hyperparams {
            seed: seed ^ 0x5eed,
            ..Default::default()
        };
        let trainer = Trainer::new(&dataset, &hp).map_err(|e| e.to_string())?;
        let truth_conflicts = ground_truth_conflicts(&spec).map_err(|e| e.to_string())?;
        Ok(Demo {
            dataset,
            trainer,
            history: Vec::new(),
            truth_conflicts,
        })
    }

    pub fn train_epochs(&mut self, epochs: u32) -> Result<String, String> {
        let mut out = Vec::with_capacity(epochs as usize);
        for _ in 0..epochs {
            let rec = self.trainer.step().map_err(|e| e.to_string())?;
            out.push(EpochOut::from(&rec));
            self.history.push(rec);
        }
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }

    pub fn scores_json(&self) -> Result<String, String> {
        let dims = self.trainer.dims();
        let emb = self.trainer.embeddings().map_err(|e| e.to_string())?;
        let s = full_score_matrix(&emb, self.trainer.params().log_alpha, dims)
            .map_err(|e| e.to_string())?;
        let n = dims.n_entities();
        let truth = &self.dataset.truth_learned;
        let out = ScoresOut {
            labels: (0..n).map(|i| dims.entity_label(i)).collect(),
            alpha: self.trainer.params().alpha(),
            values: s.values().data().to_vec(),
            truth_edges: (0..n)
                .map(|i| (0..n).map(|j| truth.has_edge(i, j) as u8).collect())
                .collect(),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }

    pub fn reconstruct_json(&self, method: &str, mask_diagonal: bool) -> Result<String, String> {
        let parsed: BinarizationMethod =
            method.parse().map_err(|e: rcl_core::Error| e.to_string())?;
        let dims = self.trainer.dims();
        let emb = self.trainer.embeddings().map_err(|e| e.to_string())?;
        let s = full_score_matrix(&emb, self.trainer.params().log_alpha, dims)
            .map_err(|e| e.to_string())?;
        let learned = binarize_with(&s, parsed, BinarizeOptions { mask_diagonal })
            .map_err(|e| e.to_string())?;
        let (_, _, f1_graph) =
            graph_f1(&learned, &self.dataset.truth_learned).map_err(|e| e.to_string())?;
        let full =
            boxplus_augment(&learned, &self.dataset.known, dims).map_err(|e| e.to_string())?;
        let conflicts = identify_conflicts(&full).map_err(|e| e.to_string())?;
        let (_, _, f1_indirect) = conflict_f1(
            &conflicts,
            &self.truth_conflicts,
            Some(ConflictKind::Indirect),
        );
        let (_, _, f1_implicit) = conflict_f1(
            &conflicts,
            &self.truth_conflicts,
            Some(ConflictKind::Implicit),
        );
        let n = dims.n_entities();
        let out = ReconstructOut {
            adjacency: (0..n)
                .map(|i| (0..n).map(|j| learned.has_edge(i, j) as u8).collect())
                .collect(),
            f1_graph,
            f1_indirect,
            f1_implicit,
            conflicts: conflicts
                .iter()
                .map(|c| conflict_out(c, self.truth_conflicts.contains(c)))
                .collect(),
            missed: self
                .truth_conflicts
                .iter()
                .filter(|c| !conflicts.contains(c))
                .map(|c| conflict_out(c, true))
                .collect(),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }

    pub fn ground_truth_json(&self) -> Result<String, String> {
        let out: Vec<ConflictOut> = self
            .truth_conflicts
            .iter()
            .map(|c| conflict_out(c, true))
            .collect();
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }

    pub fn history_json(&self) -> Result<String, String> {
        let out: Vec<EpochOut> = self.history.iter().map(EpochOut::from).collect();
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Demo {
    /// Builds a fresh session: dataset drawn with `seed`, model initialized
    /// with a seed derived from it.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, length: u32) -> Result<Demo, JsValue> {
        Demo::create(seed as u64, length as usize).map_err(|e| JsValue::from_str(&e))
    }

    /// Runs `epochs` more training epochs; returns the new epoch records.
    pub fn train(&mut self, epochs: u32) -> Result<String, JsValue> {
        self.train_epochs(epochs).map_err(|e| JsValue::from_str(&e))
    }

    pub fn epoch(&self) -> u32 {
        self.trainer.epoch() as u32
    }

    /// Current full score matrix plus ground-truth edge mask.
    pub fn scores(&self) -> Result<String, JsValue> {
        self.scores_json().map_err(|e| JsValue::from_str(&e))
    }

    /// Binarizes the current scores and identifies conflicts. `method`
    /// accepts the CLI strings: `sparsemax`, `threshold:<t>`, `topk:<k>`,
    /// `quantile:<q>`.
    pub fn reconstruct(&self, method: &str, mask_diagonal: bool) -> Result<String, JsValue> {
        self.reconstruct_json(method, mask_diagonal)
            .map_err(|e| JsValue::from_str(&e))
    }

    /// Ground-truth conflicts of the generating model.
    pub fn ground_truth(&self) -> Result<String, JsValue> {
        self.ground_truth_json().map_err(|e| JsValue::from_str(&e))
    }

    /// Training history so far (same schema as `train`).
    pub fn history(&self) -> Result<String, JsValue> {
        self.history_json().map_err(|e| JsValue::from_str(&e))
    }
}

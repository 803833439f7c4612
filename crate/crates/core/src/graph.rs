//! Model descriptions: operators, fused subgraphs and the weighted model graph.
//!
//! A model file lists fused subgraphs (the compiler already partitioned the
//! network). Loading validates every field, merges entries whose operator
//! lists are identical (summing their weights) and re-indexes the survivors in
//! a platform-independent order.
//!
//! File layout (JSON, unknown fields rejected):
//!
//! ```text
//! { "name": "bert-large",
//!   "subgraphs": [
//!     { "ops": [ { "op_kind": "dense", "input_shape": [128, 1024],
//!                  "attrs": { "units": 4096 } } ],
//!       "core_op": "dense",            // optional
//!       "weight": 24,
//!       "knobs": [ { "name": "tile_x", "values": [1, 2, 4, 8] } ] } ] }
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::searchspace::{Knob, SpaceDescriptor};

/// Upper bound on distinct subgraphs per model.
pub const MAX_SUBGRAPHS: usize = 64;

/// Closed set of operator kinds understood by the model format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    DepthwiseConv2d,
    Dense,
    BatchMatmul,
    Softmax,
    Pooling,
    Relu,
    Add,
    Multiply,
    BiasAdd,
    BatchNorm,
    LayerNorm,
    Gelu,
    Tanh,
    Reshape,
    Transpose,
    Concat,
}

impl OpKind {
    pub const ALL: [OpKind; 17] = [
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::Dense,
        OpKind::BatchMatmul,
        OpKind::Softmax,
        OpKind::Pooling,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Multiply,
        OpKind::BiasAdd,
        OpKind::BatchNorm,
        OpKind::LayerNorm,
        OpKind::Gelu,
        OpKind::Tanh,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::DepthwiseConv2d => "depthwise_conv2d",
            OpKind::Dense => "dense",
            OpKind::BatchMatmul => "batch_matmul",
            OpKind::Softmax => "softmax",
            OpKind::Pooling => "pooling",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Multiply => "multiply",
            OpKind::BiasAdd => "bias_add",
            OpKind::BatchNorm => "batch_norm",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorNode {
    pub op_kind: OpKind,
    pub input_shape: Vec<u64>,
    #[serde(default)]
    pub attrs: BTreeMap<String, i64>,
}

impl OperatorNode {
    pub fn new(op_kind: OpKind, input_shape: Vec<u64>) -> Self {
        OperatorNode {
            op_kind,
            input_shape,
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: i64) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.input_shape.is_empty() {
            return Err(format!("{}: input_shape is empty", self.op_kind));
        }
        if let Some(pos) = self.input_shape.iter().position(|&d| d == 0) {
            return Err(format!(
                "{}: input_shape dimension {pos} is zero",
                self.op_kind
            ));
        }
        Ok(())
    }

    fn serialize_into(&self, out: &mut String) {
        out.push_str(self.op_kind.name());
        out.push('[');
        for (i, d) in self.input_shape.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{d}");
        }
        out.push(']');
        if !self.attrs.is_empty() {
            out.push('{');
            for (i, (k, v)) in self.attrs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{k}={v}");
            }
            out.push('}');
        }
    }
}

/// A fused group of operators tuned as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub id: usize,
    pub ops: Vec<OperatorNode>,
    pub core_op: OpKind,
    pub weight: u64,
    pub knob_space: SpaceDescriptor,
}

impl Subgraph {
    /// Builds and validates a subgraph. When `core_op` is `None` the core
    /// operator is inferred as the op with the most attributes (ties go to the
    /// higher-rank input, then to the earlier op).
    pub fn new(
        id: usize,
        ops: Vec<OperatorNode>,
        core_op: Option<OpKind>,
        weight: u64,
        knob_space: SpaceDescriptor,
    ) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::invariant(format!("subgraph {id}: ops list is empty")));
        }
        for op in &ops {
            op.validate()
                .map_err(|m| Error::invariant(format!("subgraph {id}: {m}")))?;
        }
        if weight == 0 {
            return Err(Error::invariant(format!("subgraph {id}: weight must be >= 1")));
        }
        let core_op = match core_op {
            Some(k) => {
                if !ops.iter().any(|op| op.op_kind == k) {
                    return Err(Error::invariant(format!(
                        "subgraph {id}: core_op {k} does not occur in ops"
                    )));
                }
                k
            }
            None => infer_core_op(&ops),
        };
        Ok(Subgraph {
            id,
            ops,
            core_op,
            weight,
            knob_space,
        })
    }

    /// Canonical text form of the operator list, shapes and attributes included.
    pub fn serialized_ops(&self) -> String {
        let mut out = String::new();
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            op.serialize_into(&mut out);
        }
        out
    }

    /// Operator kinds only, shapes excluded.
    pub fn op_sequence(&self) -> String {
        self.ops
            .iter()
            .map(|op| op.op_kind.name())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn space_size(&self) -> Result<u64> {
        self.knob_space.size()
    }
}

fn infer_core_op(ops: &[OperatorNode]) -> OpKind {
    let mut best = &ops[0];
    for op in &ops[1..] {
        let key = (op.attrs.len(), op.input_shape.len());
        if key > (best.attrs.len(), best.input_shape.len()) {
            best = op;
        }
    }
    best.op_kind
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub subgraphs: Vec<Subgraph>,
}

impl ModelGraph {
    /// Deduplicates `entries` and wraps the result.
    pub fn new(name: impl Into<String>, entries: Vec<Subgraph>) -> Result<Self> {
        let subgraphs = construct_subgraphs(&entries)?;
        Ok(ModelGraph {
            name: name.into(),
            subgraphs,
        })
    }

    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }

    pub fn subgraph(&self, id: usize) -> Result<&Subgraph> {
        self.subgraphs.get(id).ok_or(Error::UnknownSubgraph(id))
    }

    pub fn total_weight(&self) -> u64 {
        self.subgraphs.iter().map(|s| s.weight).sum()
    }

    /// Largest knob count over all subgraphs.
    pub fn max_knobs(&self) -> usize {
        self.subgraphs
            .iter()
            .map(|s| s.knob_space.len())
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        let raw = RawModel {
            name: self.name.clone(),
            subgraphs: self
                .subgraphs
                .iter()
                .map(|s| RawSubgraph {
                    ops: s.ops.clone(),
                    core_op: Some(s.core_op),
                    weight: s.weight,
                    knobs: s.knob_space.knobs().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("model serializes")
    }
}

/// Merges entries with identical operator lists, sorts them by op-kind
/// sequence then full serialization, and assigns ids `0..n`.
pub fn construct_subgraphs(entries: &[Subgraph]) -> Result<Vec<Subgraph>> {
    let mut merged: BTreeMap<(String, String), Subgraph> = BTreeMap::new();
    for entry in entries {
        let key = (entry.op_sequence(), entry.serialized_ops());
        match merged.get_mut(&key) {
            Some(existing) => {
                if existing.core_op != entry.core_op || existing.knob_space != entry.knob_space {
                    return Err(Error::invariant(format!(
                        "duplicate subgraph {} disagrees on core_op or knobs",
                        key.1
                    )));
                }
                existing.weight = existing.weight.checked_add(entry.weight).ok_or_else(|| {
                    Error::invariant(format!("weight overflow merging {}", key.1))
                })?;
            }
            None => {
                merged.insert(key, entry.clone());
            }
        }
    }
    if merged.is_empty() {
        return Err(Error::invariant("model has fewer than 1 subgraph"));
    }
    if merged.len() > MAX_SUBGRAPHS {
        return Err(Error::invariant(format!(
            "model has {} subgraphs, more than {MAX_SUBGRAPHS}",
            merged.len()
        )));
    }
    Ok(merged
        .into_values()
        .enumerate()
        .map(|(id, mut s)| {
            s.id = id;
            s
        })
        .collect())
}

/// Σ weight(s) × latency(s) over the model's subgraphs.
pub fn model_latency<T: Scalar>(model: &ModelGraph, per_subgraph: &[T]) -> T {
    debug_assert_eq!(model.len(), per_subgraph.len());
    model
        .subgraphs
        .iter()
        .zip(per_subgraph)
        .map(|(s, &l)| T::lit(s.weight as f64) * l)
        .sum()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    subgraphs: Vec<RawSubgraph>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubgraph {
    ops: Vec<OperatorNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    core_op: Option<OpKind>,
    weight: u64,
    knobs: Vec<Knob>,
}

pub fn parse_model(text: &str) -> Result<ModelGraph> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut entries = Vec::with_capacity(raw.subgraphs.len());
    for (i, rs) in raw.subgraphs.into_iter().enumerate() {
        let space = SpaceDescriptor::new(rs.knobs)
            .map_err(|e| Error::invariant(format!("subgraph entry {i}: {e}")))?;
        let sg = Subgraph::new(i, rs.ops, rs.core_op, rs.weight, space).map_err(|e| match e {
            Error::Invariant(m) => Error::invariant(format!("entry {m}")),
            other => other,
        })?;
        entries.push(sg);
    }
    ModelGraph::new(raw.name, entries)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

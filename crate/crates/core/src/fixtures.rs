//! Built-in model descriptions used by the examples, the CLI and the tests.
//!
//! These stand in for compiler-partitioned networks: a BERT-Large-like
//! encoder with 11 distinct subgraphs in three operator families, a
//! ResNet-50-like network whose repeated blocks collapse to 25 subgraphs, and
//! small spaces for exhaustive checks.

use crate::graph::{ModelGraph, OpKind, OperatorNode, Subgraph};
use crate::searchspace::{Knob, SpaceDescriptor};

fn pow2(n: u32) -> Vec<u64> {
    (0..n).map(|e| 1u64 << e).collect()
}

fn knobs(lists: &[(&str, Vec<u64>)]) -> SpaceDescriptor {
    SpaceDescriptor::new(lists.iter().map(|(n, v)| Knob::new(n, v.clone())).collect())
        .expect("fixture knob space is valid")
}

fn entry(ops: Vec<OperatorNode>, core: OpKind, weight: u64, space: SpaceDescriptor) -> Subgraph {
    Subgraph::new(0, ops, Some(core), weight, space).expect("fixture subgraph is valid")
}

fn op(kind: OpKind, shape: &[u64]) -> OperatorNode {
    OperatorNode::new(kind, shape.to_vec())
}

fn gemm_space() -> SpaceDescriptor {
    knobs(&[
        ("tile_x", pow2(12)),
        ("tile_y", pow2(12)),
        ("tile_k", pow2(12)),
        ("unroll", vec![0, 16, 64, 512, 1024, 2048].into_iter().map(|u| u + 1).collect()),
    ])
}

fn norm_space() -> SpaceDescriptor {
    knobs(&[("tile_row", pow2(16)), ("tile_col", pow2(16)), ("vector", vec![1, 2, 4, 8, 16, 32, 64, 128])])
}

fn bmm_space() -> SpaceDescriptor {
    knobs(&[
        ("tile_b", pow2(6)),
        ("tile_x", pow2(12)),
        ("tile_y", pow2(12)),
        ("tile_k", pow2(6)),
    ])
}

/// BERT-Large-like encoder: 11 distinct subgraphs, core operators dense (6),
/// layer_norm (3) and batch_matmul (2).
pub fn bert_large() -> ModelGraph {
    use OpKind::*;
    let (s, h, f) = (128, 1024, 4096);
    let entries = vec![
        entry(vec![op(Dense, &[s, h]).with_attr("units", 3 * h as i64), op(BiasAdd, &[s, 3 * h])], Dense, 24, gemm_space()),
        entry(vec![op(Dense, &[s, h]).with_attr("units", h as i64), op(BiasAdd, &[s, h]), op(Add, &[s, h])], Dense, 24, gemm_space()),
        entry(vec![op(Dense, &[s, h]).with_attr("units", f as i64), op(BiasAdd, &[s, f]), op(Gelu, &[s, f])], Dense, 24, gemm_space()),
        entry(vec![op(Dense, &[s, f]).with_attr("units", h as i64), op(BiasAdd, &[s, h]), op(Add, &[s, h])], Dense, 24, gemm_space()),
        entry(vec![op(Dense, &[1, h]).with_attr("units", h as i64), op(BiasAdd, &[1, h]), op(Tanh, &[1, h])], Dense, 1, gemm_space()),
        entry(vec![op(Dense, &[1, h]).with_attr("units", 2), op(BiasAdd, &[1, 2])], Dense, 1, gemm_space()),
        entry(vec![op(LayerNorm, &[s, h])], LayerNorm, 1, norm_space()),
        entry(vec![op(Add, &[s, h]), op(LayerNorm, &[s, h])], LayerNorm, 24, norm_space()),
        entry(vec![op(BiasAdd, &[s, h]), op(Add, &[s, h]), op(LayerNorm, &[s, h])], LayerNorm, 24, norm_space()),
        entry(vec![op(BatchMatmul, &[16, s, 64]), op(Multiply, &[16, s, s]), op(Softmax, &[16, s, s])], BatchMatmul, 24, bmm_space()),
        entry(vec![op(BatchMatmul, &[16, s, s]), op(Reshape, &[16, s, 64]), op(Transpose, &[s, 16, 64])], BatchMatmul, 24, bmm_space()),
    ];
    ModelGraph::new("bert-large", entries).expect("fixture model is valid")
}

fn conv_space() -> SpaceDescriptor {
    knobs(&[
        ("tile_oc", pow2(6)),
        ("tile_oh", pow2(6)),
        ("tile_ow", pow2(6)),
        ("tile_ic", pow2(6)),
    ])
}

fn conv(ic: u64, oc: u64, hw: u64, k: i64, stride: i64) -> OperatorNode {
    op(OpKind::Conv2d, &[1, ic, hw, hw])
        .with_attr("kernel", k)
        .with_attr("out_channels", oc as i64)
        .with_attr("stride", stride)
}

/// ResNet-50 v1-like network listed block by block; repeated blocks merge
/// during loading.
pub fn resnet50() -> ModelGraph {
    use OpKind::*;
    let mut entries = vec![
        entry(vec![conv(3, 64, 224, 7, 2), op(BatchNorm, &[1, 64, 112, 112]), op(Relu, &[1, 64, 112, 112])], Conv2d, 1, conv_space()),
        entry(vec![op(Pooling, &[1, 64, 112, 112]).with_attr("kernel", 3).with_attr("stride", 2)], Pooling, 1, knobs(&[("tile_c", pow2(6)), ("tile_hw", pow2(6))])),
    ];
    // (input channels, bottleneck width, output channels, spatial size, blocks)
    let stages = [(64, 64, 256, 56, 3), (256, 128, 512, 28, 4), (512, 256, 1024, 14, 6), (1024, 512, 2048, 7, 3)];
    for (i, &(cin, w, cout, hw, blocks)) in stages.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        let in_hw = hw * stride as u64;
        for b in 0..blocks {
            let (ic, s, ihw) = if b == 0 { (cin, stride, in_hw) } else { (cout, 1, hw) };
            let act = |c: u64| [op(BatchNorm, &[1, c, hw, hw]), op(Relu, &[1, c, hw, hw])];
            let reduce = {
                let mut ops = vec![conv(ic, w, ihw, 1, s)];
                ops.extend(act(w));
                ops
            };
            let spatial = {
                let mut ops = vec![conv(w, w, hw, 3, 1)];
                ops.extend(act(w));
                ops
            };
            let expand = vec![
                conv(w, cout, hw, 1, 1),
                op(BatchNorm, &[1, cout, hw, hw]),
                op(Add, &[1, cout, hw, hw]),
                op(Relu, &[1, cout, hw, hw]),
            ];
            entries.push(entry(reduce, Conv2d, 1, conv_space()));
            entries.push(entry(spatial, Conv2d, 1, conv_space()));
            entries.push(entry(expand, Conv2d, 1, conv_space()));
            if b == 0 {
                entries.push(entry(vec![conv(cin, cout, in_hw, 1, stride), op(BatchNorm, &[1, cout, hw, hw])], Conv2d, 1, conv_space()));
            }
        }
    }
    entries.push(entry(vec![op(Pooling, &[1, 2048, 7, 7]).with_attr("global", 1)], Pooling, 1, knobs(&[("tile_c", pow2(8))])));
    entries.push(entry(vec![op(Dense, &[1, 2048]).with_attr("units", 1000), op(BiasAdd, &[1, 1000])], Dense, 1, gemm_space()));
    entries.push(entry(vec![op(Softmax, &[1, 1000])], Softmax, 1, knobs(&[("tile", pow2(8))])));
    ModelGraph::new("resnet50-v1", entries).expect("fixture model is valid")
}

/// Six subgraphs in two families with spaces of at most 512 candidates.
pub fn tiny() -> ModelGraph {
    use OpKind::*;
    let small = |a: u32, b: u32, c: u32| knobs(&[("x", pow2(a)), ("y", pow2(b)), ("z", pow2(c))]);
    let entries = vec![
        entry(vec![op(Conv2d, &[1, 16, 32, 32]).with_attr("kernel", 3), op(Relu, &[1, 16, 32, 32])], Conv2d, 2, small(8, 8, 8)),
        entry(vec![op(Conv2d, &[1, 32, 16, 16]).with_attr("kernel", 3), op(Relu, &[1, 32, 16, 16])], Conv2d, 1, small(8, 8, 4)),
        entry(vec![op(Conv2d, &[1, 64, 8, 8]).with_attr("kernel", 3), op(Relu, &[1, 64, 8, 8])], Conv2d, 3, small(6, 6, 6)),
        entry(vec![op(Dense, &[1, 256]).with_attr("units", 128)], Dense, 1, small(4, 4, 4)),
        entry(vec![op(Dense, &[1, 128]).with_attr("units", 64), op(Relu, &[1, 64])], Dense, 2, small(8, 4, 4)),
        entry(vec![op(Softmax, &[1, 64])], Softmax, 1, knobs(&[("tile", pow2(6))])),
    ];
    ModelGraph::new("tiny", entries).expect("fixture model is valid")
}

/// A model with one 320-candidate subgraph (4 × 5 × 16) next to larger ones.
pub fn with_small_space() -> ModelGraph {
    use OpKind::*;
    let entries = vec![
        entry(vec![op(Dense, &[64, 512]).with_attr("units", 512)], Dense, 64, knobs(&[("a", vec![1, 2, 4, 8]), ("b", vec![1, 2, 3, 4, 5]), ("c", (1..=16).collect())])),
        entry(vec![op(Dense, &[64, 1024]).with_attr("units", 512)], Dense, 1, gemm_space()),
        entry(vec![op(Conv2d, &[1, 64, 28, 28]).with_attr("kernel", 3)], Conv2d, 1, conv_space()),
    ];
    ModelGraph::new("small-space", entries).expect("fixture model is valid")
}

pub fn by_name(name: &str) -> Option<ModelGraph> {
    match name {
        "bert-large" => Some(bert_large()),
        "resnet50" => Some(resnet50()),
        "tiny" => Some(tiny()),
        "small-space" => Some(with_small_space()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["bert-large", "resnet50", "tiny", "small-space"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_sizes() {
        assert_eq!(bert_large().len(), 11);
        let r = resnet50().len();
        assert!((25..=28).contains(&r), "resnet50 has {r} subgraphs");
        assert!(tiny().subgraphs.iter().all(|s| s.space_size().unwrap() <= 512));
        assert_eq!(with_small_space().subgraphs.iter().filter(|s| s.space_size().unwrap() == 320).count(), 1);
    }

    #[test]
    fn resnet_repeats_become_weights() {
        let m = resnet50();
        assert!(m.subgraphs.iter().any(|s| s.weight == 5));
        assert_eq!(m.total_weight(), 2 + 16 * 3 + 4 + 3);
    }
}

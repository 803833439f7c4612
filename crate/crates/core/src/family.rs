//! Static clustering of subgraphs into families that share a cost model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Subgraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterAlgo {
    #[default]
    CoreOp,
    OpCount,
    OpSequence,
}

impl ClusterAlgo {
    pub fn name(self) -> &'static str {
        match self {
            ClusterAlgo::CoreOp => "core-op",
            ClusterAlgo::OpCount => "op-count",
            ClusterAlgo::OpSequence => "op-sequence",
        }
    }
}

impl fmt::Display for ClusterAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClusterAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "core-op" => Ok(ClusterAlgo::CoreOp),
            "op-count" => Ok(ClusterAlgo::OpCount),
            "op-sequence" => Ok(ClusterAlgo::OpSequence),
            other => Err(Error::Config(format!("unknown cluster algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphFamily {
    pub family_id: usize,
    pub member_ids: Vec<usize>,
    pub signature: String,
}

impl SubgraphFamily {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// A partition of subgraph ids into families with a total reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyRegistry {
    families: Vec<SubgraphFamily>,
    index: Vec<usize>,
}

impl FamilyRegistry {
    /// Groups subgraphs by `key`. Family ids follow sorted signature order.
    pub fn from_signatures<I>(signatures: I) -> Self
    where
        I: IntoIterator<Item = (usize, String)>,
    {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut n = 0;
        for (id, sig) in signatures {
            groups.entry(sig).or_default().push(id);
            n = n.max(id + 1);
        }
        let mut index = vec![usize::MAX; n];
        let families = groups
            .into_iter()
            .enumerate()
            .map(|(family_id, (signature, mut member_ids))| {
                member_ids.sort_unstable();
                for &m in &member_ids {
                    index[m] = family_id;
                }
                SubgraphFamily {
                    family_id,
                    member_ids,
                    signature,
                }
            })
            .collect();
        FamilyRegistry { families, index }
    }

    /// Every subgraph in its own family.
    pub fn singletons(n: usize) -> Self {
        Self::from_signatures((0..n).map(|i| (i, format!("{i:04}"))))
    }

    /// All subgraphs in one family.
    pub fn single(n: usize) -> Self {
        Self::from_signatures((0..n).map(|i| (i, "all".to_string())))
    }

    pub fn families(&self) -> &[SubgraphFamily] {
        &self.families
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn subgraph_count(&self) -> usize {
        self.index.len()
    }

    pub fn family_of(&self, subgraph_id: usize) -> Result<usize> {
        match self.index.get(subgraph_id) {
            Some(&f) if f != usize::MAX => Ok(f),
            _ => Err(Error::UnknownSubgraph(subgraph_id)),
        }
    }

    /// Registry dump: `subgraph_id,family_id,signature` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subgraph_id,family_id,signature\n");
        for (sid, &fid) in self.index.iter().enumerate() {
            if fid != usize::MAX {
                out.push_str(&format!("{sid},{fid},{}\n", self.families[fid].signature));
            }
        }
        out
    }
}

pub fn find_family(subgraph_id: usize, registry: &FamilyRegistry) -> Result<&SubgraphFamily> {
    registry
        .family_of(subgraph_id)
        .map(|f| &registry.families[f])
}

pub fn cluster_by_core_op(subgraphs: &[Subgraph]) -> FamilyRegistry {
    FamilyRegistry::from_signatures(subgraphs.iter().map(|s| (s.id, s.core_op.name().to_string())))
}

pub fn cluster_by_op_count(subgraphs: &[Subgraph]) -> FamilyRegistry {
    // zero-padded so lexical order matches numeric order
    FamilyRegistry::from_signatures(subgraphs.iter().map(|s| (s.id, format!("{:06}", s.ops.len()))))
}

/// Signature is the FNV-1a hash of the comma-joined op-kind sequence; shapes
/// and attributes do not participate.
pub fn cluster_by_op_sequence(subgraphs: &[Subgraph]) -> FamilyRegistry {
    FamilyRegistry::from_signatures(
        subgraphs
            .iter()
            .map(|s| (s.id, format!("{:016x}", fnv1a64(s.op_sequence().as_bytes())))),
    )
}

pub fn cluster(subgraphs: &[Subgraph], algo: ClusterAlgo) -> FamilyRegistry {
    match algo {
        ClusterAlgo::CoreOp => cluster_by_core_op(subgraphs),
        ClusterAlgo::OpCount => cluster_by_op_count(subgraphs),
        ClusterAlgo::OpSequence => cluster_by_op_sequence(subgraphs),
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

//! Knob spaces, candidate generation and feature extraction.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Subgraph;
use crate::scalar::Scalar;

pub const MAX_KNOBS: usize = 16;

/// Spaces up to this size may be walked exhaustively when sampling runs dry.
const ENUMERATION_LIMIT: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knob {
    pub name: String,
    pub values: Vec<u64>,
}

impl Knob {
    pub fn new(name: &str, values: Vec<u64>) -> Self {
        Knob {
            name: name.to_string(),
            values,
        }
    }
}

/// Ordered list of tunable knobs, each with a finite list of positive values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceDescriptor {
    knobs: Vec<Knob>,
    size: u64,
}

impl SpaceDescriptor {
    pub fn new(knobs: Vec<Knob>) -> Result<Self> {
        if knobs.is_empty() || knobs.len() > MAX_KNOBS {
            return Err(Error::invariant(format!(
                "knob count {} outside 1..={MAX_KNOBS}",
                knobs.len()
            )));
        }
        let mut size: u64 = 1;
        for k in &knobs {
            if k.values.is_empty() {
                return Err(Error::invariant(format!("knob {} has no values", k.name)));
            }
            if k.values.contains(&0) {
                return Err(Error::invariant(format!("knob {} has a zero value", k.name)));
            }
            let distinct: HashSet<_> = k.values.iter().collect();
            if distinct.len() != k.values.len() {
                return Err(Error::invariant(format!("knob {} repeats a value", k.name)));
            }
            size = size
                .checked_mul(k.values.len() as u64)
                .ok_or(Error::SpaceOverflow)?;
        }
        Ok(SpaceDescriptor { knobs, size })
    }

    pub fn knobs(&self) -> &[Knob] {
        &self.knobs
    }

    pub fn len(&self) -> usize {
        self.knobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knobs.is_empty()
    }

    /// Π |values_i|.
    pub fn size(&self) -> Result<u64> {
        Ok(self.size)
    }

    /// Decodes a mixed-radix index (first knob varies slowest).
    pub fn candidate(&self, subgraph_id: usize, mut index: u64) -> Candidate {
        let mut assignment = vec![0usize; self.knobs.len()];
        for (slot, knob) in assignment.iter_mut().zip(&self.knobs).rev() {
            let radix = knob.values.len() as u64;
            *slot = (index % radix) as usize;
            index /= radix;
        }
        Candidate {
            subgraph_id,
            assignment,
        }
    }

    pub fn index_of(&self, candidate: &Candidate) -> u64 {
        candidate
            .assignment
            .iter()
            .zip(&self.knobs)
            .fold(0u64, |acc, (&a, k)| acc * k.values.len() as u64 + a as u64)
    }

    pub fn validate(&self, candidate: &Candidate) -> Result<()> {
        if candidate.assignment.len() != self.knobs.len() {
            return Err(Error::Dimension {
                expected: self.knobs.len(),
                got: candidate.assignment.len(),
            });
        }
        for (i, (&a, k)) in candidate.assignment.iter().zip(&self.knobs).enumerate() {
            if a >= k.values.len() {
                return Err(Error::invariant(format!(
                    "knob {i} index {a} outside {} values",
                    k.values.len()
                )));
            }
        }
        Ok(())
    }

    /// Normalized position of each assigned value in its list, in `[0, 1]`.
    pub fn positions<T: Scalar>(&self, candidate: &Candidate) -> Vec<T> {
        candidate
            .assignment
            .iter()
            .zip(&self.knobs)
            .map(|(&a, k)| normalized_position(a, k.values.len()))
            .collect()
    }

    /// All knobs at their first value.
    pub fn default_candidate(&self, subgraph_id: usize) -> Candidate {
        Candidate {
            subgraph_id,
            assignment: vec![0; self.knobs.len()],
        }
    }
}

fn normalized_position<T: Scalar>(index: usize, len: usize) -> T {
    if len <= 1 {
        T::zero()
    } else {
        T::from_count(index) / T::from_count(len - 1)
    }
}

pub fn space_size(subgraph: &Subgraph) -> Result<u64> {
    subgraph.knob_space.size()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub subgraph_id: usize,
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord<T> {
    pub candidate: Candidate,
    pub features: Vec<T>,
    pub latency: T,
    /// Simulated wall-clock seconds at which the measurement finished.
    pub measured_at: f64,
}

/// Feature length for `k` knobs: log values, positions and pairwise log-products.
pub fn feature_dim(k: usize) -> usize {
    2 * k + k * k.saturating_sub(1) / 2
}

/// Feature vector of `candidate`, zero-padded to `d_max`.
pub fn featurize<T: Scalar>(candidate: &Candidate, subgraph: &Subgraph, d_max: usize) -> Result<Vec<T>> {
    let space = &subgraph.knob_space;
    space.validate(candidate)?;
    let k = space.len();
    let d = feature_dim(k);
    if d > d_max {
        return Err(Error::Dimension {
            expected: d_max,
            got: d,
        });
    }
    let logs: Vec<T> = candidate
        .assignment
        .iter()
        .zip(space.knobs())
        .map(|(&a, knob)| T::lit(knob.values[a] as f64).log2())
        .collect();
    let mut out = Vec::with_capacity(d_max);
    out.extend_from_slice(&logs);
    out.extend(space.positions::<T>(candidate));
    for i in 0..k {
        for j in i + 1..k {
            out.push(logs[i] * logs[j]);
        }
    }
    out.resize(d_max, T::zero());
    Ok(out)
}

/// Measured candidates of one subgraph.
#[derive(Debug, Clone, Default)]
pub struct History<T> {
    seen: HashSet<u64>,
    measured: Vec<(u64, T)>,
}

impl<T: Scalar> History<T> {
    pub fn new() -> Self {
        History {
            seen: HashSet::new(),
            measured: Vec::new(),
        }
    }

    pub fn record(&mut self, index: u64, latency: T) {
        if self.seen.insert(index) {
            self.measured.push((index, latency));
        }
    }

    pub fn contains(&self, index: u64) -> bool {
        self.seen.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measured.is_empty()
    }

    /// Indices of the best quarter (at least one) by measured latency.
    pub fn top_quartile(&self) -> Vec<u64> {
        let mut sorted = self.measured.clone();
        sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let keep = sorted.len().div_ceil(4).max(1).min(sorted.len());
        sorted.into_iter().take(keep).map(|(i, _)| i).collect()
    }
}

/// Candidate pool for one tuning round: `pool_random` uniform draws followed by
/// `pool_evolved` single-knob mutations of top-quartile measured candidates.
/// Never returns a candidate already in `history` and never repeats one. When
/// the unmeasured remainder is no larger than the request, returns all of it.
pub fn generate_candidates<T: Scalar, R: Rng>(
    subgraph: &Subgraph,
    history: &History<T>,
    pool_random: usize,
    pool_evolved: usize,
    rng: &mut R,
) -> Vec<Candidate> {
    let space = &subgraph.knob_space;
    let size = space.size;
    let remaining = size - (history.len() as u64).min(size);
    let requested = (pool_random + pool_evolved) as u64;
    if remaining == 0 || requested == 0 {
        return Vec::new();
    }
    if remaining <= requested {
        return (0..size)
            .filter(|i| !history.contains(*i))
            .map(|i| space.candidate(subgraph.id, i))
            .collect();
    }

    let (n_random, n_evolved) = if history.is_empty() {
        (pool_random + pool_evolved, 0)
    } else {
        (pool_random, pool_evolved)
    };
    let mut picked: HashSet<u64> = HashSet::new();
    let mut out: Vec<u64> = Vec::with_capacity(n_random + n_evolved);
    let accept = |idx: u64, picked: &mut HashSet<u64>, out: &mut Vec<u64>| {
        if !history.contains(idx) && picked.insert(idx) {
            out.push(idx);
            true
        } else {
            false
        }
    };

    let mut got = 0;
    let mut attempts = 0;
    while got < n_random && attempts < 8 * n_random + 64 {
        attempts += 1;
        if accept(rng.random_range(0..size), &mut picked, &mut out) {
            got += 1;
        }
    }

    if n_evolved > 0 {
        let parents = history.top_quartile();
        let mut got = 0;
        let mut attempts = 0;
        while got < n_evolved && attempts < 8 * n_evolved + 64 {
            attempts += 1;
            let parent = parents[rng.random_range(0..parents.len())];
            let mut child = space.candidate(subgraph.id, parent);
            let knob = rng.random_range(0..space.len());
            child.assignment[knob] = rng.random_range(0..space.knobs[knob].values.len());
            if accept(space.index_of(&child), &mut picked, &mut out) {
                got += 1;
            }
        }
    }

    // Dense spaces can starve rejection sampling; top up from a random offset.
    let want = n_random + n_evolved;
    if out.len() < want && size <= ENUMERATION_LIMIT {
        let start = rng.random_range(0..size);
        for step in 0..size {
            if out.len() >= want {
                break;
            }
            accept((start + step) % size, &mut picked, &mut out);
        }
    }

    out.into_iter().map(|i| space.candidate(subgraph.id, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{OpKind, OperatorNode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subgraph(knobs: Vec<Knob>) -> Subgraph {
        Subgraph::new(
            0,
            vec![OperatorNode::new(OpKind::Dense, vec![1, 64])],
            None,
            1,
            SpaceDescriptor::new(knobs).unwrap(),
        )
        .unwrap()
    }

    fn pow2_knobs(n: usize, len: u32) -> Vec<Knob> {
        (0..n)
            .map(|i| Knob::new(&format!("k{i}"), (0..len).map(|e| 1u64 << e).collect()))
            .collect()
    }

    #[test]
    fn space_sizes() {
        let s = SpaceDescriptor::new(vec![
            Knob::new("a", vec![1, 2, 3, 4]),
            Knob::new("b", vec![1, 2, 3, 4, 5]),
            Knob::new("c", (1..=16).collect()),
        ])
        .unwrap();
        assert_eq!(s.size().unwrap(), 320);
        assert_eq!(SpaceDescriptor::new(vec![Knob::new("a", vec![7])]).unwrap().size().unwrap(), 1);
        assert_eq!(space_size(&subgraph(pow2_knobs(4, 8))).unwrap(), 4096);
    }

    #[test]
    fn overflowing_space_is_rejected() {
        let knobs = (0..16).map(|i| Knob::new(&format!("k{i}"), (1..=32).collect())).collect();
        assert!(matches!(SpaceDescriptor::new(knobs), Err(Error::SpaceOverflow)));
    }

    #[test]
    fn descriptor_invariants() {
        assert!(SpaceDescriptor::new(vec![]).is_err());
        assert!(SpaceDescriptor::new(vec![Knob::new("a", vec![])]).is_err());
        assert!(SpaceDescriptor::new(vec![Knob::new("a", vec![2, 2])]).is_err());
        assert!(SpaceDescriptor::new(vec![Knob::new("a", vec![0, 1])]).is_err());
        assert!(SpaceDescriptor::new(pow2_knobs(17, 1)).is_err());
    }

    #[test]
    fn index_round_trip() {
        let sg = subgraph(vec![Knob::new("a", vec![1, 2, 3]), Knob::new("b", vec![5, 6])]);
        let space = &sg.knob_space;
        for i in 0..6 {
            let c = space.candidate(0, i);
            assert_eq!(space.index_of(&c), i);
        }
        assert_eq!(space.candidate(0, 3).assignment, vec![1, 1]);
    }

    #[test]
    fn featurize_single_knob() {
        let sg = subgraph(vec![Knob::new("t", vec![8, 16, 32])]);
        let c = sg.knob_space.candidate(0, 0);
        let f: Vec<f64> = featurize(&c, &sg, 5).unwrap();
        assert_eq!(f, vec![3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn featurize_pairwise_term() {
        let sg = subgraph(vec![Knob::new("a", vec![1, 4]), Knob::new("b", vec![2, 8])]);
        let c = Candidate {
            subgraph_id: 0,
            assignment: vec![1, 0],
        };
        let f: Vec<f64> = featurize(&c, &sg, feature_dim(2)).unwrap();
        assert_eq!(f, vec![2.0, 1.0, 1.0, 0.0, 2.0]);
        assert_eq!(featurize::<f64>(&c, &sg, 5).unwrap(), f);
    }

    #[test]
    fn featurize_rejects_mismatch() {
        let sg = subgraph(pow2_knobs(3, 4));
        let short = Candidate {
            subgraph_id: 0,
            assignment: vec![0, 0],
        };
        assert!(matches!(featurize::<f64>(&short, &sg, 20), Err(Error::Dimension { .. })));
        let c = sg.knob_space.candidate(0, 0);
        assert!(featurize::<f64>(&c, &sg, 3).is_err());
    }

    #[test]
    fn featurize_is_injective_on_small_space() {
        let sg = subgraph(vec![
            Knob::new("a", vec![1, 2, 4]),
            Knob::new("b", vec![3, 5]),
            Knob::new("c", vec![1, 16, 64, 128]),
        ]);
        let d = feature_dim(3);
        let mut seen = HashSet::new();
        for i in 0..sg.space_size().unwrap() {
            let f: Vec<f64> = featurize(&sg.knob_space.candidate(0, i), &sg, d).unwrap();
            assert!(seen.insert(f.iter().map(|x| x.to_bits()).collect::<Vec<_>>()));
        }
    }

    #[test]
    fn fresh_pool_is_distinct_and_random() {
        let sg = subgraph(pow2_knobs(5, 16)); // 16^5 ~ 10^6
        let history = History::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = generate_candidates(&sg, &history, 512, 512, &mut rng);
        assert_eq!(pool.len(), 1024);
        let uniq: HashSet<_> = pool.iter().collect();
        assert_eq!(uniq.len(), 1024);
    }

    #[test]
    fn exhausted_space_yields_nothing() {
        let sg = subgraph(vec![
            Knob::new("a", vec![1, 2, 3, 4]),
            Knob::new("b", vec![1, 2, 3, 4, 5]),
            Knob::new("c", (1..=16).collect()),
        ]);
        let mut history = History::<f64>::new();
        for i in 0..320 {
            history.record(i, 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_candidates(&sg, &history, 64, 64, &mut rng).is_empty());
    }

    #[test]
    fn nearly_exhausted_space_returns_remainder() {
        let sg = subgraph(pow2_knobs(2, 4));
        let mut history = History::<f64>::new();
        for i in 0..12 {
            history.record(i, 1.0 + i as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = generate_candidates(&sg, &history, 8, 8, &mut rng);
        let idx: Vec<u64> = pool.iter().map(|c| sg.knob_space.index_of(c)).collect();
        assert_eq!(idx, vec![12, 13, 14, 15]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let sg = subgraph(pow2_knobs(3, 8));
        let mut history = History::<f64>::new();
        for i in 0..40 {
            history.record(i * 7, (i % 5) as f64 + 1.0);
        }
        let a = generate_candidates(&sg, &history, 32, 32, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_candidates(&sg, &history, 32, 32, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn top_quartile_picks_fastest() {
        let mut h = History::<f64>::new();
        for (i, l) in [5.0, 1.0, 3.0, 2.0, 4.0, 6.0, 7.0, 8.0].iter().enumerate() {
            h.record(i as u64, *l);
        }
        assert_eq!(h.top_quartile(), vec![1, 3]);
    }
}

//! Gradient-boosted regression trees over log-latency.
//!
//! Every call to [`train_cost_model`] appends the new records and refits the
//! whole ensemble. Rows are put in a canonical order before fitting, and
//! splits are found by exact greedy search over each feature's sorted unique
//! values (ties go to the lower feature index, then the lower threshold), so a
//! fit depends only on the multiset of training rows.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::searchspace::MeasurementRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        CostModelConfig {
            trees: 50,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 2,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::Config("cost model needs at least one tree".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("tree depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min samples per leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which subgraphs a model serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelOwner {
    Family(usize),
    Monolithic,
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn leaf(value: T) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf(value)],
        }
    }

    pub fn predict(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn dump_into(&self, out: &mut String, i: usize, indent: usize) {
        let pad = "  ".repeat(indent);
        match &self.nodes[i] {
            Node::Leaf(v) => {
                let _ = writeln!(out, "{pad}leaf {v}");
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let _ = writeln!(out, "{pad}f{feature} <= {threshold}");
                self.dump_into(out, *left, indent + 1);
                self.dump_into(out, *right, indent + 1);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostModelState<T> {
    pub owner: ModelOwner,
    pub config: CostModelConfig,
    trees: Vec<RegressionTree<T>>,
    base_prediction: T,
    /// (features, ln latency) rows in arrival order.
    training_set: Vec<(Vec<T>, T)>,
    /// Training MSE after the base prediction and after each boosting round.
    loss_trace: Vec<T>,
}

pub fn initialize_cost_model<T: Scalar>(owner: ModelOwner, config: CostModelConfig) -> CostModelState<T> {
    CostModelState {
        owner,
        config,
        trees: Vec::new(),
        base_prediction: T::zero(),
        training_set: Vec::new(),
        loss_trace: Vec::new(),
    }
}

/// Appends `records` (target = ln latency) and refits from scratch.
pub fn train_cost_model<T: Scalar>(
    records: &[MeasurementRecord<T>],
    model: &mut CostModelState<T>,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invariant("train_cost_model needs at least one record"));
    }
    let rows = records.iter().map(|r| (r.features.clone(), r.latency.ln()));
    model.add_rows(rows)?;
    model.refit();
    Ok(())
}

pub fn predict<T: Scalar>(model: &CostModelState<T>, features: &[T]) -> Result<T> {
    if let Some(dim) = model.dim() {
        if features.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: features.len(),
            });
        }
    }
    if let Some(i) = features.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(model.predict_unchecked(features))
}

impl<T: Scalar> CostModelState<T> {
    pub fn new(owner: ModelOwner, config: CostModelConfig) -> Self {
        initialize_cost_model(owner, config)
    }

    /// Builds a model from explicit parts; used to hand-check the prediction formula.
    pub fn from_parts(config: CostModelConfig, base_prediction: T, trees: Vec<RegressionTree<T>>) -> Self {
        CostModelState {
            owner: ModelOwner::Monolithic,
            config,
            trees,
            base_prediction,
            training_set: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    pub fn trees(&self) -> &[RegressionTree<T>] {
        &self.trees
    }

    pub fn base_prediction(&self) -> T {
        self.base_prediction
    }

    pub fn training_len(&self) -> usize {
        self.training_set.len()
    }

    pub fn loss_trace(&self) -> &[T] {
        &self.loss_trace
    }

    fn dim(&self) -> Option<usize> {
        self.training_set.first().map(|(f, _)| f.len())
    }

    /// Appends raw (features, target) rows without refitting.
    pub fn add_rows<I: IntoIterator<Item = (Vec<T>, T)>>(&mut self, rows: I) -> Result<()> {
        for (features, target) in rows {
            let expected = self.dim().unwrap_or(features.len());
            if features.len() != expected {
                return Err(Error::Dimension {
                    expected,
                    got: features.len(),
                });
            }
            if let Some(i) = features.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if !target.is_finite() {
                return Err(Error::invariant("training target is not finite"));
            }
            self.training_set.push((features, target));
        }
        Ok(())
    }

    pub fn predict_unchecked(&self, features: &[T]) -> T {
        let lr = T::lit(self.config.learning_rate);
        let boost: T = self.trees.iter().map(|t| t.predict(features)).sum();
        self.base_prediction + lr * boost
    }

    pub fn predict_many(&self, rows: &[Vec<T>]) -> Vec<T> {
        rows.iter().map(|r| self.predict_unchecked(r)).collect()
    }

    /// Refits the ensemble on the accumulated training set.
    pub fn refit(&mut self) {
        // kept sorted so the canonical ordering in the fit stays cheap
        self.training_set.sort_by(cmp_rows);
        let (trees, base, trace) = fit_gbdt(&self.training_set, &self.config);
        self.trees = trees;
        self.base_prediction = base;
        self.loss_trace = trace;
    }

    /// Text dump of the ensemble for debugging.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "owner {:?}\nbase {}\nlearning_rate {}\ntrees {}\n",
            self.owner,
            self.base_prediction,
            self.config.learning_rate,
            self.trees.len()
        );
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {i}");
            t.dump_into(&mut out, 0, 1);
        }
        out
    }
}

fn cmp_rows<T: Scalar>(a: &(Vec<T>, T), b: &(Vec<T>, T)) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal)
}

/// Per-feature exact value bins: `bin[f][row]` indexes into `values[f]`.
struct Binned<T> {
    values: Vec<Vec<T>>,
    bin: Vec<Vec<u32>>,
}

impl<T: Scalar> Binned<T> {
    fn new(rows: &[&(Vec<T>, T)], dim: usize) -> Self {
        let mut values = Vec::with_capacity(dim);
        let mut bin = Vec::with_capacity(dim);
        for f in 0..dim {
            let mut col: Vec<T> = rows.iter().map(|r| r.0[f]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            col.dedup();
            let idx = rows
                .iter()
                .map(|r| {
                    col.binary_search_by(|v| v.partial_cmp(&r.0[f]).unwrap())
                        .expect("value present") as u32
                })
                .collect();
            values.push(col);
            bin.push(idx);
        }
        Binned { values, bin }
    }
}

/// Grows one tree level by level. Each level makes a single sequential pass
/// per feature, accumulating residual sums into per-node value histograms.
fn grow_tree<T: Scalar>(
    binned: &Binned<T>,
    residual: &[T],
    max_depth: usize,
    min_leaf: usize,
) -> (RegressionTree<T>, Vec<usize>) {
    const DONE: u32 = u32::MAX;
    let n = residual.len();
    let mut nodes = vec![Node::Leaf(T::zero())];
    let mut node_of_row = vec![0usize; n];
    // node id of each active slot; rows point at slots
    let mut active: Vec<usize> = vec![0];
    let mut slot_of_row: Vec<u32> = vec![0; n];
    let mut hist_sum: Vec<T> = Vec::new();
    let mut hist_cnt: Vec<usize> = Vec::new();

    for depth in 0..=max_depth {
        let k = active.len();
        let mut total = vec![T::zero(); k];
        let mut sq = vec![T::zero(); k];
        let mut count = vec![0usize; k];
        for (r, &s) in slot_of_row.iter().enumerate() {
            if s != DONE {
                let s = s as usize;
                total[s] = total[s] + residual[r];
                sq[s] = sq[s] + residual[r] * residual[r];
                count[s] += 1;
            }
        }

        // best (gain, feature, bin) per slot
        let mut best: Vec<Option<(T, usize, u32)>> = vec![None; k];
        let splittable: Vec<bool> = count
            .iter()
            .map(|&c| depth < max_depth && c >= 2 * min_leaf)
            .collect();
        if splittable.iter().any(|&x| x) {
            for (f, bins) in binned.bin.iter().enumerate() {
                let u = binned.values[f].len();
                if u < 2 {
                    continue;
                }
                hist_sum.clear();
                hist_sum.resize(k * u, T::zero());
                hist_cnt.clear();
                hist_cnt.resize(k * u, 0);
                for r in 0..n {
                    let s = slot_of_row[r];
                    if s != DONE {
                        let h = s as usize * u + bins[r] as usize;
                        hist_sum[h] = hist_sum[h] + residual[r];
                        hist_cnt[h] += 1;
                    }
                }
                for s in 0..k {
                    if !splittable[s] {
                        continue;
                    }
                    let n_node = count[s];
                    let parent = total[s] * total[s] / T::from_count(n_node);
                    let min_gain = T::epsilon().sqrt() * sq[s];
                    let sums = &hist_sum[s * u..(s + 1) * u];
                    let cnts = &hist_cnt[s * u..(s + 1) * u];
                    let mut left_sum = T::zero();
                    let mut left_n = 0usize;
                    for b in 0..u - 1 {
                        if cnts[b] == 0 {
                            // same partition as a lower threshold already scanned
                            continue;
                        }
                        left_sum = left_sum + sums[b];
                        left_n += cnts[b];
                        let right_n = n_node - left_n;
                        if left_n < min_leaf || right_n < min_leaf {
                            continue;
                        }
                        let right_sum = total[s] - left_sum;
                        let gain = left_sum * left_sum / T::from_count(left_n)
                            + right_sum * right_sum / T::from_count(right_n)
                            - parent;
                        if gain > min_gain && best[s].is_none_or(|(g, _, _)| gain > g) {
                            best[s] = Some((gain, f, b as u32));
                        }
                    }
                }
            }
        }

        // (left slot, right slot, feature, bin) of each split slot in the next level
        let mut next_active = Vec::new();
        let mut routes: Vec<Option<(u32, u32, usize, u32)>> = vec![None; k];
        for s in 0..k {
            let id = active[s];
            match best[s] {
                Some((_, feature, bin)) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(T::zero()));
                    let right = nodes.len();
                    nodes.push(Node::Leaf(T::zero()));
                    nodes[id] = Node::Split {
                        feature,
                        threshold: binned.values[feature][bin as usize],
                        left,
                        right,
                    };
                    routes[s] = Some((next_active.len() as u32, next_active.len() as u32 + 1, feature, bin));
                    next_active.push(left);
                    next_active.push(right);
                }
                None => {
                    let mean = if count[s] > 0 {
                        total[s] / T::from_count(count[s])
                    } else {
                        T::zero()
                    };
                    nodes[id] = Node::Leaf(mean);
                }
            }
        }
        if next_active.is_empty() {
            break;
        }
        for r in 0..n {
            let s = slot_of_row[r];
            if s == DONE {
                continue;
            }
            slot_of_row[r] = match routes[s as usize] {
                Some((l, rt, f, bin)) => {
                    let next = if binned.bin[f][r] <= bin { l } else { rt };
                    node_of_row[r] = next_active[next as usize];
                    next
                }
                None => DONE,
            };
        }
        active = next_active;
    }
    (RegressionTree { nodes }, node_of_row)
}

fn fit_gbdt<T: Scalar>(
    training_set: &[(Vec<T>, T)],
    config: &CostModelConfig,
) -> (Vec<RegressionTree<T>>, T, Vec<T>) {
    if training_set.is_empty() {
        return (Vec::new(), T::zero(), Vec::new());
    }
    let mut rows: Vec<&(Vec<T>, T)> = training_set.iter().collect();
    rows.sort_by(|a, b| cmp_rows(a, b));
    let n = rows.len();
    let dim = rows[0].0.len();
    let targets: Vec<T> = rows.iter().map(|r| r.1).collect();
    let base = targets.iter().copied().sum::<T>() / T::from_count(n);
    let binned = Binned::new(&rows, dim);
    let lr = T::lit(config.learning_rate);

    let mut pred = vec![base; n];
    let mse = |pred: &[T]| -> T {
        targets
            .iter()
            .zip(pred)
            .map(|(&y, &p)| (y - p) * (y - p))
            .sum::<T>()
            / T::from_count(n)
    };
    let mut trace = vec![mse(&pred)];
    let mut trees = Vec::with_capacity(config.trees);
    let mut residual = vec![T::zero(); n];
    for _ in 0..config.trees {
        for i in 0..n {
            residual[i] = targets[i] - pred[i];
        }
        let (tree, node_of_row) = grow_tree(&binned, &residual, config.max_depth, config.min_samples_leaf);
        for (p, &node) in pred.iter_mut().zip(&node_of_row) {
            if let Node::Leaf(v) = tree.nodes[node] {
                *p = *p + lr * v;
            }
        }
        trace.push(mse(&pred));
        trees.push(tree);
    }
    (trees, base, trace)
}

/// Fraction of unordered pairs whose predicted order matches the true order.
///
/// Pairs whose true latencies differ by less than 1e-6 (relative) are skipped;
/// tied predictions count one half.
pub fn ranking_accuracy<T: Scalar>(predicted: &[T], truth: &[T]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::Undefined("fewer than two validation records".into()));
    }
    let tol = T::lit(1e-6);
    let mut score = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..truth.len() {
        for j in i + 1..truth.len() {
            let (a, b) = (truth[i], truth[j]);
            if (a - b).abs() < tol * a.abs().max(b.abs()) {
                continue;
            }
            pairs += 1;
            let (pa, pb) = (predicted[i], predicted[j]);
            if pa == pb {
                score += 0.5;
            } else if (pa < pb) == (a < b) {
                score += 1.0;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Undefined("every pair has equal true latency".into()));
    }
    Ok(score / pairs as f64)
}

pub fn pairwise_accuracy<T: Scalar>(
    model: &CostModelState<T>,
    validation: &[MeasurementRecord<T>],
) -> Result<f64> {
    let predicted = validation
        .iter()
        .map(|r| predict(model, &r.features))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<T> = validation.iter().map(|r| r.latency).collect();
    ranking_accuracy(&predicted, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::searchspace::Candidate;

    fn record(features: Vec<f64>, latency: f64) -> MeasurementRecord<f64> {
        MeasurementRecord {
            candidate: Candidate {
                subgraph_id: 0,
                assignment: vec![],
            },
            features,
            latency,
            measured_at: 0.0,
        }
    }

    #[test]
    fn fresh_model_predicts_zero() {
        let m = initialize_cost_model::<f64>(ModelOwner::Family(2), CostModelConfig::default());
        assert_eq!(predict(&m, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(predict(&m, &[9.0, -2.0]).unwrap(), 0.0);
        assert_eq!(m.owner, ModelOwner::Family(2));
    }

    #[test]
    fn single_leaf_arithmetic() {
        let m = CostModelState::<f64>::from_parts(CostModelConfig::default(), 0.0, vec![RegressionTree::leaf(2.5)]);
        assert!((predict(&m, &[0.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_point_fit_orders_correctly() {
        let mut m = CostModelState::new(ModelOwner::Monolithic, CostModelConfig {
            min_samples_leaf: 1,
            ..Default::default()
        });
        train_cost_model(&[record(vec![1.0], 1.0), record(vec![2.0], 2.0)], &mut m).unwrap();
        assert!(predict(&m, &[1.0]).unwrap() < predict(&m, &[2.0]).unwrap());
    }

    #[test]
    fn degenerate_targets_give_constant_model() {
        let mut m = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
        let recs: Vec<_> = (0..10).map(|i| record(vec![i as f64], 0.7)).collect();
        train_cost_model(&recs, &mut m).unwrap();
        assert!(m.trees().iter().all(|t| t.depth() == 0));
        let p0 = predict(&m, &[0.0]).unwrap();
        assert_eq!(p0, predict(&m, &[9.0]).unwrap());
        assert!((p0 - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_training_is_rejected() {
        let mut m = CostModelState::<f64>::new(ModelOwner::Monolithic, CostModelConfig::default());
        assert!(train_cost_model(&[], &mut m).is_err());
    }

    #[test]
    fn predict_checks_input() {
        let mut m = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
        train_cost_model(&[record(vec![1.0, 0.0], 1.0), record(vec![2.0, 1.0], 2.0)], &mut m).unwrap();
        assert!(matches!(predict(&m, &[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(predict(&m, &[f64::NAN, 0.0]), Err(Error::NonFinite(0))));
    }

    #[test]
    fn depth_and_tree_count_bounded() {
        let mut m = CostModelState::new(ModelOwner::Monolithic, CostModelConfig::default());
        let recs: Vec<_> = (0..200)
            .map(|i| {
                let x = i as f64 / 10.0;
                let y = (i % 7) as f64;
                record(vec![x, y], 1.0 + (x - 7.0).powi(2) + y)
            })
            .collect();
        train_cost_model(&recs, &mut m).unwrap();
        assert_eq!(m.trees().len(), 50);
        assert!(m.trees().iter().all(|t| t.depth() <= 3));
        assert!(m.dump().contains("tree 49"));
    }

    #[test]
    fn split_prefers_lower_threshold_on_ties() {
        // x = 0,1,2,3 with targets a,b,b,c style symmetric data: thresholds at 0
        // and 2 give equal gain; the lower must win.
        let cfg = CostModelConfig {
            trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
        };
        let mut m = CostModelState::new(ModelOwner::Monolithic, cfg);
        let rows = vec![(vec![0.0], 0.0), (vec![1.0], 1.0), (vec![2.0], 1.0), (vec![3.0], 0.0)];
        m.add_rows(rows).unwrap();
        m.refit();
        assert!(m.dump().contains("f0 <= 0"), "{}", m.dump());
    }

    #[test]
    fn accuracy_conventions() {
        assert_eq!(ranking_accuracy(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(ranking_accuracy(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ranking_accuracy(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // near-equal truths excluded
        assert_eq!(ranking_accuracy(&[1.0, 2.0, 0.0], &[1.0, 1.0 + 1e-9, 5.0]).unwrap(), 0.0);
        assert!(ranking_accuracy(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(ranking_accuracy(&[1.0], &[3.0]).is_err());
    }

    #[test]
    fn f32_models_train() {
        let mut m = CostModelState::<f32>::new(ModelOwner::Monolithic, CostModelConfig::default());
        let recs: Vec<MeasurementRecord<f32>> = (0..40)
            .map(|i| MeasurementRecord {
                candidate: Candidate {
                    subgraph_id: 0,
                    assignment: vec![],
                },
                features: vec![i as f32],
                latency: 1.0 + (i as f32 - 20.0).abs(),
                measured_at: 0.0,
            })
            .collect();
        train_cost_model(&recs, &mut m).unwrap();
        assert!(pairwise_accuracy(&m, &recs).unwrap() > 0.9);
    }
}

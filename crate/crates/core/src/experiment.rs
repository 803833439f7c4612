//! Experiment harnesses: cross-prediction heatmaps, monolithic-vs-individual
//! accuracy, paired policy comparisons and budget-allocation reports.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{pairwise_accuracy, train_cost_model, CostModelConfig, CostModelState, ModelOwner};
use crate::error::{Error, Result};
use crate::family::{cluster, ClusterAlgo, FamilyRegistry};
use crate::graph::ModelGraph;
use crate::scalar::Scalar;
use crate::scheduler::{
    curve_csv, CurvePoint, ModelAssignment, Mode, PotentialFn, SearchConfig, Tuner, TunerState,
};
use crate::searchspace::{featurize, feature_dim, MeasurementRecord};
use crate::simbackend::{make_landscape, ClockConfig, Landscape, LandscapeParams, NoiseKey, SimBackend, SimClock};

/// Minimum samples per subgraph for accuracy experiments.
pub const MIN_SAMPLES: usize = 32;

/// Performance fractions reported by comparisons.
pub const THRESHOLDS: [f64; 3] = [0.8, 0.9, 1.0];

/// Everything a tuning run needs besides the model and the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSetup {
    pub budget: usize,
    pub foresee_p: f64,
    pub cluster_algo: ClusterAlgo,
    /// Clustering that defines the landscape's true archetypes.
    pub truth_algo: ClusterAlgo,
    pub potential: PotentialFn,
    pub workers: usize,
    pub landscape: LandscapeParams,
    pub clock: ClockConfig,
    pub search: SearchConfig,
}

impl Default for RunSetup {
    fn default() -> Self {
        RunSetup {
            budget: 9900,
            foresee_p: 0.25,
            cluster_algo: ClusterAlgo::CoreOp,
            truth_algo: ClusterAlgo::CoreOp,
            potential: PotentialFn::Greedy,
            workers: 1,
            landscape: LandscapeParams::default(),
            clock: ClockConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

pub fn truth_registry(model: &ModelGraph, algo: ClusterAlgo) -> FamilyRegistry {
    cluster(&model.subgraphs, algo)
}

pub fn build_landscape<T: Scalar>(model: &ModelGraph, setup: &RunSetup, seed: u64) -> Result<Landscape<T>> {
    make_landscape(model, &truth_registry(model, setup.truth_algo), &setup.landscape, seed)
}

pub fn build_backend<T: Scalar>(
    model: &ModelGraph,
    landscape: Landscape<T>,
    setup: &RunSetup,
    seed: u64,
) -> Result<SimBackend<T>> {
    SimBackend::new(model.clone(), landscape, SimClock::new(setup.clock)?, setup.workers, seed)
}

/// One complete tuning run under `mode` on the landscape of `seed`.
pub fn run_tune<T: Scalar>(
    model: &ModelGraph,
    landscape: &Landscape<T>,
    setup: &RunSetup,
    mode: Mode,
    seed: u64,
) -> Result<TunerState<T>> {
    let backend = build_backend(model, landscape.clone(), setup, seed)?;
    let families = cluster(&model.subgraphs, setup.cluster_algo);
    let search = SearchConfig { seed, ..setup.search };
    let (assignment, foresee) = match mode {
        Mode::Foresee => (ModelAssignment::PerFamily, true),
        Mode::Monolithic => (ModelAssignment::Monolithic, false),
    };
    let tuner = Tuner::new(
        backend,
        families,
        assignment,
        foresee,
        setup.potential,
        setup.budget,
        setup.foresee_p,
        search,
    )?;
    Ok(tuner.run()?.0)
}

/// Distinct uniformly drawn candidates per subgraph, measured with noise.
/// Spaces smaller than the request contribute every candidate.
pub fn sample_records<T: Scalar>(
    model: &ModelGraph,
    landscape: &Landscape<T>,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<MeasurementRecord<T>>>> {
    let d = feature_dim(model.max_knobs());
    let noise = NoiseKey::new(seed);
    let mut out = Vec::with_capacity(model.len());
    for sg in &model.subgraphs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865_6174_0000_0000);
        rng.set_stream(sg.id as u64);
        let size = sg.space_size()?;
        let indices: Vec<u64> = if size <= samples as u64 {
            (0..size).collect()
        } else if size <= usize::MAX as u64 / 2 && size <= 1 << 32 {
            sample(&mut rng, size as usize, samples)
                .into_iter()
                .map(|i| i as u64)
                .collect()
        } else {
            let mut seen = std::collections::HashSet::new();
            let mut v = Vec::with_capacity(samples);
            while v.len() < samples {
                let i = rng.random_range(0..size);
                if seen.insert(i) {
                    v.push(i);
                }
            }
            v
        };
        let mut recs = Vec::with_capacity(indices.len());
        for i in indices {
            let c = sg.knob_space.candidate(sg.id, i);
            let features = featurize(&c, sg, d)?;
            let latency = noise.measure(sg, i, landscape);
            recs.push(MeasurementRecord {
                candidate: c,
                features,
                latency,
                measured_at: 0.0,
            });
        }
        out.push(recs);
    }
    Ok(out)
}

/// 80/20 split of one subgraph's sample set.
fn split<T: Clone>(records: &[T]) -> (Vec<T>, Vec<T>) {
    let n_train = records.len() * 4 / 5;
    (records[..n_train].to_vec(), records[n_train..].to_vec())
}

fn fit<T: Scalar>(owner: ModelOwner, config: CostModelConfig, records: &[MeasurementRecord<T>]) -> Result<CostModelState<T>> {
    let mut m = CostModelState::new(owner, config);
    if !records.is_empty() {
        train_cost_model(records, &mut m)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapResult {
    /// `matrix[x][y]`: accuracy of subgraph x's model on subgraph y's validation set.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub train_samples: Vec<usize>,
    pub validation_samples: Vec<usize>,
    /// True archetype of each subgraph.
    pub archetype: Vec<usize>,
}

impl HeatmapResult {
    pub fn n(&self) -> usize {
        self.matrix.len()
    }

    fn mean_where(&self, pred: impl Fn(usize, usize) -> bool) -> Option<f64> {
        let vals: Vec<f64> = (0..self.n())
            .flat_map(|x| (0..self.n()).map(move |y| (x, y)))
            .filter(|&(x, y)| pred(x, y))
            .filter_map(|(x, y)| self.matrix[x][y])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn diagonal_mean(&self) -> Option<f64> {
        self.mean_where(|x, y| x == y)
    }

    /// Off-diagonal cells whose row and column share an archetype.
    pub fn within_archetype_mean(&self) -> Option<f64> {
        self.mean_where(|x, y| x != y && self.archetype[x] == self.archetype[y])
    }

    pub fn cross_archetype_mean(&self) -> Option<f64> {
        self.mean_where(|x, y| self.archetype[x] != self.archetype[y])
    }

    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::from("model\\validation");
        for y in 0..n {
            out.push_str(&format!(",{y}"));
        }
        out.push('\n');
        for (x, row) in self.matrix.iter().enumerate() {
            out.push_str(&x.to_string());
            for cell in row {
                match cell {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push_str(",nan"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one model per subgraph on its own samples and scores it on every
/// subgraph's validation split.
pub fn run_heatmap<T: Scalar>(
    model: &ModelGraph,
    setup: &RunSetup,
    samples_per_subgraph: usize,
    seed: u64,
) -> Result<HeatmapResult> {
    if samples_per_subgraph < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "need at least {MIN_SAMPLES} samples per subgraph, got {samples_per_subgraph}"
        )));
    }
    let landscape: Landscape<T> = build_landscape(model, setup, seed)?;
    let data = sample_records(model, &landscape, samples_per_subgraph, seed)?;
    let splits: Vec<_> = data.iter().map(|r| split(r)).collect();
    let models = splits
        .iter()
        .enumerate()
        .map(|(i, (train, _))| fit(ModelOwner::Family(i), setup.search.cost_model, train))
        .collect::<Result<Vec<_>>>()?;
    let matrix = models
        .iter()
        .map(|m| {
            splits
                .iter()
                .map(|(_, val)| pairwise_accuracy(m, val).ok())
                .collect()
        })
        .collect();
    Ok(HeatmapResult {
        matrix,
        train_samples: splits.iter().map(|s| s.0.len()).collect(),
        validation_samples: splits.iter().map(|s| s.1.len()).collect(),
        archetype: landscape.subgraphs.iter().map(|s| s.archetype_id).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyBar {
    pub subgraph: usize,
    pub train_samples: usize,
    pub monolithic: Option<f64>,
    pub individual: Option<f64>,
}

pub fn bars_csv(bars: &[AccuracyBar]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
    let mut out = String::from("subgraph_id,train_samples,monolithic_accuracy,individual_accuracy\n");
    for b in bars {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.subgraph,
            b.train_samples,
            fmt(b.monolithic),
            fmt(b.individual)
        ));
    }
    out
}

/// Monolithic model on the union of all training splits against one model
/// per subgraph. `train_limits` caps the training share of chosen subgraphs
/// (their validation split is unchanged).
pub fn run_accuracy_bars<T: Scalar>(
    model: &ModelGraph,
    setup: &RunSetup,
    samples_per_subgraph: usize,
    train_limits: &BTreeMap<usize, usize>,
    seed: u64,
) -> Result<Vec<AccuracyBar>> {
    if samples_per_subgraph < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "need at least {MIN_SAMPLES} samples per subgraph, got {samples_per_subgraph}"
        )));
    }
    let landscape: Landscape<T> = build_landscape(model, setup, seed)?;
    let data = sample_records(model, &landscape, samples_per_subgraph, seed)?;
    let splits: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (mut train, val) = split(r);
            if let Some(&limit) = train_limits.get(&i) {
                train.truncate(limit);
            }
            (train, val)
        })
        .collect();
    let union: Vec<_> = splits.iter().flat_map(|s| s.0.iter().cloned()).collect();
    let mono = fit(ModelOwner::Monolithic, setup.search.cost_model, &union)?;
    splits
        .iter()
        .enumerate()
        .map(|(i, (train, val))| {
            let own = fit(ModelOwner::Family(i), setup.search.cost_model, train)?;
            Ok(AccuracyBar {
                subgraph: i,
                train_samples: train.len(),
                monolithic: pairwise_accuracy(&mono, val).ok(),
                individual: pairwise_accuracy(&own, val).ok(),
            })
        })
        .collect()
}

/// Budget and wall time at which each policy first reaches a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRow {
    /// Fraction of the baseline's final performance (throughput).
    pub fraction: f64,
    /// Latency target: baseline final latency / fraction.
    pub target_ms: f64,
    pub baseline_b: Option<usize>,
    pub foresee_b: Option<usize>,
    pub baseline_wall: Option<f64>,
    pub foresee_wall: Option<f64>,
}

impl ThresholdRow {
    /// Foresee budget as a fraction of the baseline's (lower is better).
    pub fn budget_ratio(&self) -> Option<f64> {
        ratio(self.foresee_b.map(|b| b as f64), self.baseline_b.map(|b| b as f64))
    }

    pub fn wall_ratio(&self) -> Option<f64> {
        ratio(self.foresee_wall, self.baseline_wall)
    }
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        (Some(n), Some(_)) if n == 0.0 => Some(1.0),
        (Some(_), Some(_)) => Some(f64::INFINITY),
        _ => None,
    }
}

/// First curve point whose model latency is at or below `target`.
pub fn first_reaching<T: Scalar>(curve: &[CurvePoint<T>], target: f64) -> Option<&CurvePoint<T>> {
    curve.iter().find(|c| c.model_latency.as_f64() <= target)
}

#[derive(Debug, Clone)]
pub struct ComparisonReport<T> {
    pub baseline: TunerState<T>,
    pub foresee: TunerState<T>,
    pub thresholds: Vec<ThresholdRow>,
}

impl<T: Scalar> ComparisonReport<T> {
    pub fn threshold(&self, fraction: f64) -> Option<&ThresholdRow> {
        self.thresholds.iter().find(|t| t.fraction == fraction)
    }

    pub fn thresholds_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "nan".into());
        let mut out = String::from(
            "# performance = 1/latency; X% of the baseline's final performance means latency <= final/X\n\
             fraction,target_latency_ms,baseline_b,foresee_b,budget_ratio,baseline_wall_s,foresee_wall_s,wall_ratio\n",
        );
        for t in &self.thresholds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t.fraction,
                t.target_ms,
                opt(t.baseline_b.map(|b| b as f64)),
                opt(t.foresee_b.map(|b| b as f64)),
                opt(t.budget_ratio()),
                opt(t.baseline_wall),
                opt(t.foresee_wall),
                opt(t.wall_ratio()),
            ));
        }
        out
    }

    pub fn curves_csv(&self) -> (String, String) {
        (curve_csv(&self.baseline.curve), curve_csv(&self.foresee.curve))
    }

    /// Two whitespace-separated blocks (baseline, foresee) plus a plot script.
    pub fn gnuplot(&self) -> (String, String) {
        let mut dat = String::new();
        for (name, st) in [("baseline", &self.baseline), ("foresee", &self.foresee)] {
            dat.push_str(&format!("# {name}: b wall_s latency_ms\n"));
            for c in &st.curve {
                dat.push_str(&format!("{} {} {}\n", c.b, c.wall_seconds, c.model_latency));
            }
            dat.push_str("\n\n");
        }
        let script = "set xlabel 'measurements'\nset ylabel 'model latency (ms)'\n\
                      plot 'curves.dat' index 0 using 1:3 with lines title 'monolithic', \\\n     \
                      'curves.dat' index 1 using 1:3 with lines title 'foresee'\n"
            .to_string();
        (dat, script)
    }
}

pub fn thresholds<T: Scalar>(baseline: &TunerState<T>, foresee: &TunerState<T>) -> Vec<ThresholdRow> {
    let final_ms = baseline.final_latency().as_f64();
    THRESHOLDS
        .iter()
        .map(|&fraction| {
            let target_ms = final_ms / fraction;
            let b = first_reaching(&baseline.curve, target_ms);
            let f = first_reaching(&foresee.curve, target_ms);
            ThresholdRow {
                fraction,
                target_ms,
                baseline_b: b.map(|c| c.b),
                foresee_b: f.map(|c| c.b),
                baseline_wall: b.map(|c| c.wall_seconds),
                foresee_wall: f.map(|c| c.wall_seconds),
            }
        })
        .collect()
}

/// Runs the baseline and foresee policies on the same landscape and noise
/// streams and compares them at the 80/90/100% thresholds.
pub fn run_compare<T: Scalar>(model: &ModelGraph, setup: &RunSetup, seed: u64) -> Result<ComparisonReport<T>> {
    let landscape: Landscape<T> = build_landscape(model, setup, seed)?;
    let (baseline, foresee) = std::thread::scope(|scope| {
        let base = scope.spawn(|| run_tune(model, &landscape, setup, Mode::Monolithic, seed));
        let fore = run_tune(model, &landscape, setup, Mode::Foresee, seed);
        (base.join().expect("baseline run panicked"), fore)
    });
    let (baseline, foresee) = (baseline?, foresee?);
    let thresholds = thresholds(&baseline, &foresee);
    Ok(ComparisonReport {
        baseline,
        foresee,
        thresholds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub subgraph: usize,
    pub allocated: usize,
    pub share: f64,
    /// Per-subgraph measurement count at the last strict improvement (0 if none).
    pub last_improvement: usize,
    pub improvements: usize,
    pub plateau: bool,
    pub exhausted: bool,
}

/// Per-subgraph budget shares. A subgraph is on a plateau when its best did
/// not improve during the final quarter of its allocation; exhausted
/// subgraphs are reported as such instead.
pub fn run_budget_report<T: Scalar>(state: &TunerState<T>) -> Vec<BudgetRow> {
    let n = state.subgraphs.len();
    let mut count = vec![0usize; n];
    let mut best: Vec<Option<T>> = vec![None; n];
    let mut last = vec![0usize; n];
    let mut improvements = vec![0usize; n];
    for &(s, _, lat) in &state.measurements {
        count[s] += 1;
        if best[s].is_none_or(|b| lat < b) {
            best[s] = Some(lat);
            last[s] = count[s];
            improvements[s] += 1;
        }
    }
    let total: usize = count.iter().sum();
    (0..n)
        .map(|s| {
            let exhausted = state.subgraphs[s].exhausted;
            let plateau = !exhausted && count[s] > 0 && (last[s] as f64) <= 0.75 * count[s] as f64;
            BudgetRow {
                subgraph: s,
                allocated: count[s],
                share: if total > 0 { count[s] as f64 / total as f64 } else { 0.0 },
                last_improvement: last[s],
                improvements: improvements[s],
                plateau,
                exhausted,
            }
        })
        .collect()
}

pub fn budget_csv(rows: &[BudgetRow]) -> String {
    let mut out = String::from("subgraph_id,allocated,share,last_improvement,improvements,plateau,exhausted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{},{}\n",
            r.subgraph, r.allocated, r.share, r.last_improvement, r.improvements, r.plateau, r.exhausted
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SubgraphState;
    use crate::searchspace::History;

    fn scripted(allocs: &[(usize, Vec<f64>)], exhausted: &[bool]) -> TunerState<f64> {
        let mut measurements = Vec::new();
        let mut subgraphs = Vec::new();
        for (s, (_, lats)) in allocs.iter().enumerate() {
            for (i, &l) in lats.iter().enumerate() {
                measurements.push((s, i as u64, l));
            }
            subgraphs.push(SubgraphState {
                weight: 1,
                default_latency: 10.0,
                space_size: 100_000,
                best_measured: lats.iter().cloned().reduce(f64::min),
                history: History::new(),
                allocated: lats.len(),
                trajectory: vec![(0, 10.0)],
                exhausted: exhausted[s],
            });
        }
        TunerState {
            b: measurements.len(),
            budget: measurements.len(),
            g: 64,
            p: 0.25,
            subgraphs,
            curve: Vec::new(),
            measurements,
        }
    }

    #[test]
    fn dominant_subgraph_share_and_plateau() {
        // subgraph 0: 4288 measurements, improves only in the first 1000
        let s0: Vec<f64> = (0..4288).map(|i| if i < 1000 { 5.0 - i as f64 * 1e-3 } else { 5.0 }).collect();
        // subgraph 1: 5612 measurements, steady improvement
        let s1: Vec<f64> = (0..5612).map(|i| 9.0 - i as f64 * 1e-3).collect();
        let st = scripted(&[(0, s0), (1, s1)], &[false, false]);
        let rows = run_budget_report(&st);
        assert_eq!(rows[0].allocated, 4288);
        assert!((rows[0].share - 4288.0 / 9900.0).abs() < 1e-12);
        assert!(rows[0].plateau);
        assert_eq!(rows[0].last_improvement, 1000);
        assert!(!rows[1].plateau);
        assert_eq!(rows.iter().map(|r| r.allocated).sum::<usize>(), st.b);
    }

    #[test]
    fn exhausted_is_not_plateau() {
        let st = scripted(&[(0, vec![1.0, 2.0, 3.0, 4.0, 5.0])], &[true]);
        let rows = run_budget_report(&st);
        assert!(rows[0].exhausted);
        assert!(!rows[0].plateau);
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(ratio(Some(40.0), Some(80.0)), Some(0.5));
        assert_eq!(ratio(Some(0.0), Some(0.0)), Some(1.0));
        assert_eq!(ratio(Some(5.0), Some(0.0)), Some(f64::INFINITY));
        assert_eq!(ratio(None, Some(3.0)), None);
    }

    #[test]
    fn heatmap_needs_enough_samples() {
        let m = crate::fixtures::tiny();
        assert!(run_heatmap::<f64>(&m, &RunSetup::default(), 16, 0).is_err());
    }
}

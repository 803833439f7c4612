//! Tuning loops: foresee tuning with per-family cost models, and the
//! monolithic-cost-model baseline.
//!
//! Both share one engine. Each iteration picks the bottleneck subgraph over
//! everything still tunable, measures `g` candidates ranked by that
//! subgraph's cost model and retrains the model. In foresee mode, when the
//! bottleneck's family has other members, the freshly retrained family model
//! is then used to tune the family's own bottleneck (excluding the subgraph
//! just tuned) with `max(1, ⌊g·p⌋)` candidates.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{predict, train_cost_model, CostModelConfig, CostModelState, ModelOwner};
use crate::error::{Error, Result};
use crate::family::{cluster, ClusterAlgo, FamilyRegistry};
use crate::graph::ModelGraph;
use crate::scalar::Scalar;
use crate::searchspace::{featurize, generate_candidates, History, MeasurementRecord};
use crate::simbackend::{charge_training, SimBackend};

/// Cap on candidates measured per main tuning step.
pub const MAX_STEP_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Foresee,
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialFn {
    #[default]
    Greedy,
    Gradient,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(Error::Config(format!("unknown {} {other:?}", stringify!($ty)))),
                }
            }
        }
    };
}

str_enum!(Mode { Foresee => "foresee", Monolithic => "monolithic" });
str_enum!(PotentialFn { Greedy => "greedy", Gradient => "gradient" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Policy {
    pub mode: Mode,
    pub potential: PotentialFn,
    pub cluster_algo: ClusterAlgo,
}

/// Knobs of the search loop that are not part of the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub pool_random: usize,
    pub pool_evolved: usize,
    /// Fraction of each measured batch drawn at random from the pool.
    pub epsilon: f64,
    /// Number of past steps the backward gradient spans.
    pub gradient_window: usize,
    pub cost_model: CostModelConfig,
    pub accelerated_training: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            pool_random: 512,
            pool_evolved: 512,
            epsilon: 0.1,
            gradient_window: 3,
            cost_model: CostModelConfig::default(),
            accelerated_training: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Main,
    Foresee,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Main => "main",
            Phase::Foresee => "foresee",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint<T> {
    pub b: usize,
    pub wall_seconds: f64,
    pub model_latency: T,
    pub phase: Phase,
    pub tuned_subgraph: Option<usize>,
}

/// Per-subgraph tuning progress.
#[derive(Debug, Clone)]
pub struct SubgraphState<T> {
    pub weight: u64,
    pub default_latency: T,
    pub space_size: u64,
    pub best_measured: Option<T>,
    pub history: History<T>,
    /// Measurements spent on this subgraph.
    pub allocated: usize,
    /// `(allocated, best)` after each tuning step, starting at `(0, default)`.
    pub trajectory: Vec<(usize, T)>,
    pub exhausted: bool,
}

impl<T: Scalar> SubgraphState<T> {
    /// Best known latency; the default candidate stands in until a
    /// measurement beats it.
    pub fn best_latency(&self) -> T {
        match self.best_measured {
            Some(b) => b.min(self.default_latency),
            None => self.default_latency,
        }
    }

    pub fn is_measured(&self) -> bool {
        self.best_measured.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct TunerState<T> {
    /// Used budget (measurements).
    pub b: usize,
    pub budget: usize,
    pub g: usize,
    pub p: f64,
    pub subgraphs: Vec<SubgraphState<T>>,
    pub curve: Vec<CurvePoint<T>>,
    /// `(subgraph_id, candidate index, latency)` in measurement order.
    pub measurements: Vec<(usize, u64, T)>,
}

impl<T: Scalar> TunerState<T> {
    pub fn model_latency(&self) -> T {
        self.subgraphs
            .iter()
            .map(|s| T::lit(s.weight as f64) * s.best_latency())
            .sum()
    }

    pub fn best_latencies(&self) -> Vec<T> {
        self.subgraphs.iter().map(|s| s.best_latency()).collect()
    }

    pub fn final_latency(&self) -> T {
        self.curve.last().map(|c| c.model_latency).unwrap_or_else(|| self.model_latency())
    }

    /// `b,sim_wall_seconds,model_latency_ms,phase,tuned_subgraph_id`.
    pub fn curve_csv(&self) -> String {
        curve_csv(&self.curve)
    }
}

pub fn curve_csv<T: Scalar>(curve: &[CurvePoint<T>]) -> String {
    let mut out = String::from("b,sim_wall_seconds,model_latency_ms,phase,tuned_subgraph_id\n");
    for c in curve {
        let sid = c.tuned_subgraph.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.b,
            c.wall_seconds,
            c.model_latency,
            c.phase.name(),
            sid
        ));
    }
    out
}

/// Weighted model latency of a tuner state.
pub fn model_latency<T: Scalar>(state: &TunerState<T>, model: &ModelGraph) -> T {
    crate::graph::model_latency(model, &state.best_latencies())
}

/// Priority of `subgraph` for the next time slot. Unmeasured subgraphs get +∞.
pub fn calculate_potential<T: Scalar>(
    state: &TunerState<T>,
    subgraph: usize,
    potential: PotentialFn,
    window: usize,
) -> T {
    let s = &state.subgraphs[subgraph];
    if !s.is_measured() {
        return T::infinity();
    }
    let w = T::lit(s.weight as f64);
    match potential {
        PotentialFn::Greedy => w * s.best_latency(),
        PotentialFn::Gradient => {
            let traj = &s.trajectory;
            let (alloc_now, best_now) = *traj.last().expect("trajectory starts at default");
            let back = window.max(1).min(traj.len() - 1);
            let (alloc_then, best_then) = traj[traj.len() - 1 - back];
            let backward = if alloc_now > alloc_then {
                (best_then - best_now) / T::from_count(alloc_now - alloc_then)
            } else {
                T::zero()
            };
            let forward = best_now / T::from_count(alloc_now.max(1));
            w * backward.max(forward)
        }
    }
}

/// Subgraph of maximum potential in `scope`; ties go to the smaller id.
pub fn select_bottleneck<T: Scalar>(
    scope: &[usize],
    state: &TunerState<T>,
    potential: PotentialFn,
    window: usize,
) -> Result<usize> {
    let mut best: Option<(T, usize)> = None;
    for &s in scope {
        let p = calculate_potential(state, s, potential, window);
        best = match best {
            None => Some((p, s)),
            Some((bp, bs)) if p > bp || (p == bp && s < bs) => Some((p, s)),
            keep => keep,
        };
    }
    best.map(|(_, s)| s).ok_or(Error::EmptyScope)
}

/// How subgraphs map onto cost models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelAssignment {
    PerFamily,
    Monolithic,
}

/// The tuning engine shared by both policies.
#[derive(Debug)]
pub struct Tuner<T> {
    pub state: TunerState<T>,
    pub backend: SimBackend<T>,
    pub families: FamilyRegistry,
    pub models: Vec<CostModelState<T>>,
    model_of: Vec<usize>,
    foresee: bool,
    potential: PotentialFn,
    config: SearchConfig,
    search_rngs: Vec<ChaCha8Rng>,
}

impl<T: Scalar> Tuner<T> {
    pub fn new(
        backend: SimBackend<T>,
        families: FamilyRegistry,
        assignment: ModelAssignment,
        foresee: bool,
        potential: PotentialFn,
        budget: usize,
        p: f64,
        config: SearchConfig,
    ) -> Result<Self> {
        let model = &backend.model;
        let n = model.len();
        if families.subgraph_count() != n {
            return Err(Error::Config(format!(
                "family registry covers {} subgraphs, model has {n}",
                families.subgraph_count()
            )));
        }
        if budget < n {
            return Err(Error::Config(format!(
                "budget {budget} is smaller than the subgraph count {n}"
            )));
        }
        if foresee && !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("foresee proportion {p} outside (0, 1)")));
        }
        if !(0.0..1.0).contains(&config.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1)", config.epsilon)));
        }
        config.cost_model.validate()?;

        let (models, model_of) = match assignment {
            ModelAssignment::PerFamily => {
                let models = families
                    .families()
                    .iter()
                    .map(|f| CostModelState::new(ModelOwner::Family(f.family_id), config.cost_model))
                    .collect();
                let model_of = (0..n).map(|s| families.family_of(s)).collect::<Result<_>>()?;
                (models, model_of)
            }
            ModelAssignment::Monolithic => (
                vec![CostModelState::new(ModelOwner::Monolithic, config.cost_model)],
                vec![0; n],
            ),
        };

        let subgraphs = model
            .subgraphs
            .iter()
            .map(|s| {
                let default_latency = backend.landscape.default_latency(s);
                Ok(SubgraphState {
                    weight: s.weight,
                    default_latency,
                    space_size: s.space_size()?,
                    best_measured: None,
                    history: History::new(),
                    allocated: 0,
                    trajectory: vec![(0, default_latency)],
                    exhausted: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let search_rngs = (0..n)
            .map(|id| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7365_6172_6368_0000);
                r.set_stream(id as u64);
                r
            })
            .collect();

        let g = MAX_STEP_CANDIDATES.min(budget / n);
        let mut state = TunerState {
            b: 0,
            budget,
            g,
            p,
            subgraphs,
            curve: Vec::new(),
            measurements: Vec::new(),
        };
        state.curve.push(CurvePoint {
            b: 0,
            wall_seconds: backend.clock.now(),
            model_latency: state.model_latency(),
            phase: Phase::Init,
            tuned_subgraph: None,
        });
        Ok(Tuner {
            state,
            backend,
            families,
            models,
            model_of,
            foresee,
            potential,
            config,
            search_rngs,
        })
    }

    /// Candidates measured in a foresee phase.
    pub fn foresee_count(&self) -> usize {
        ((self.state.g as f64 * self.state.p).floor() as usize).max(1)
    }

    /// Generates, ranks and measures up to `g_eff` candidates for `s_cur`.
    /// Returns no records (and marks the subgraph exhausted) once its space
    /// has been fully measured.
    pub fn tune_step(&mut self, s_cur: usize, g_eff: usize) -> Result<Vec<MeasurementRecord<T>>> {
        let sg = self.backend.model.subgraph(s_cur)?.clone();
        let model = &self.models[self.model_of[s_cur]];
        let rng = &mut self.search_rngs[s_cur];
        let st = &mut self.state.subgraphs[s_cur];
        let pool = generate_candidates(
            &sg,
            &st.history,
            self.config.pool_random,
            self.config.pool_evolved,
            rng,
        );
        if pool.is_empty() || g_eff == 0 {
            st.exhausted = true;
            return Ok(Vec::new());
        }

        let chosen = if pool.len() <= g_eff {
            pool
        } else {
            let d = self.backend.feature_dim;
            let mut scored = Vec::with_capacity(pool.len());
            for (i, c) in pool.iter().enumerate() {
                let f = featurize::<T>(c, &sg, d)?;
                scored.push((predict(model, &f)?, i));
            }
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let n_eps = (g_eff as f64 * self.config.epsilon).floor() as usize;
            let n_top = g_eff - n_eps;
            let mut picks: Vec<usize> = scored[..n_top].iter().map(|&(_, i)| i).collect();
            let rest = &scored[n_top..];
            for j in sample(rng, rest.len(), n_eps.min(rest.len())) {
                picks.push(rest[j].1);
            }
            picks.into_iter().map(|i| pool[i].clone()).collect::<Vec<_>>()
        };

        let records = self.backend.run_batch(&chosen)?;
        for r in &records {
            let idx = sg.knob_space.index_of(&r.candidate);
            st.history.record(idx, r.latency);
            st.best_measured = Some(match st.best_measured {
                Some(b) => b.min(r.latency),
                None => r.latency,
            });
            self.state.measurements.push((s_cur, idx, r.latency));
        }
        st.allocated += records.len();
        st.trajectory.push((st.allocated, st.best_latency()));
        st.exhausted = st.history.len() as u64 >= st.space_size;
        Ok(records)
    }

    fn retrain(&mut self, s_cur: usize, records: &[MeasurementRecord<T>]) -> Result<()> {
        let model = &mut self.models[self.model_of[s_cur]];
        train_cost_model(records, model)?;
        charge_training(
            &mut self.backend.clock,
            model.training_len(),
            self.config.accelerated_training,
        );
        Ok(())
    }

    fn push_curve(&mut self, phase: Phase, s: usize) {
        self.state.curve.push(CurvePoint {
            b: self.state.b,
            wall_seconds: self.backend.clock.now(),
            model_latency: self.state.model_latency(),
            phase,
            tuned_subgraph: Some(s),
        });
    }

    /// One tune-retrain-account phase. Returns the number of measurements.
    fn phase(&mut self, scope: &[usize], count: usize, phase: Phase) -> Result<usize> {
        let s = select_bottleneck(scope, &self.state, self.potential, self.config.gradient_window)?;
        let records = self.tune_step(s, count)?;
        if records.is_empty() {
            return Ok(0);
        }
        self.retrain(s, &records)?;
        self.state.b += records.len();
        self.push_curve(phase, s);
        Ok(records.len())
    }

    fn tunable(&self, ids: impl IntoIterator<Item = usize>) -> Vec<usize> {
        ids.into_iter()
            .filter(|&s| !self.state.subgraphs[s].exhausted)
            .collect()
    }

    /// Runs until the budget is used or every space is exhausted.
    pub fn run(mut self) -> Result<(TunerState<T>, Vec<CostModelState<T>>, SimBackend<T>)> {
        let n = self.state.subgraphs.len();
        let g = self.state.g;
        let g_foresee = self.foresee_count();
        while self.state.b < self.state.budget {
            let scope = self.tunable(0..n);
            if scope.is_empty() {
                break;
            }
            let before = self.state.curve.len();
            self.phase(&scope, g, Phase::Main)?;
            if self.state.curve.len() == before {
                continue;
            }
            let s_cur = self.state.curve.last().and_then(|c| c.tuned_subgraph).expect("main phase recorded");
            if !self.foresee {
                continue;
            }
            let family = self.families.family_of(s_cur)?;
            let members = &self.families.families()[family].member_ids;
            if members.len() > 1 {
                let scope = self.tunable(members.iter().copied().filter(|&s| s != s_cur));
                if !scope.is_empty() {
                    self.phase(&scope, g_foresee, Phase::Foresee)?;
                }
            }
        }
        Ok((self.state, self.models, self.backend))
    }
}

/// Foresee tuning with one cost model per family of `policy.cluster_algo`.
pub fn foresee_tune<T: Scalar>(
    backend: SimBackend<T>,
    budget: usize,
    p: f64,
    policy: &Policy,
    config: SearchConfig,
) -> Result<(TunerState<T>, Vec<CostModelState<T>>)> {
    let families = cluster(&backend.model.subgraphs, policy.cluster_algo);
    let tuner = Tuner::new(
        backend,
        families,
        ModelAssignment::PerFamily,
        true,
        policy.potential,
        budget,
        p,
        config,
    )?;
    let (state, models, _) = tuner.run()?;
    Ok((state, models))
}

/// Baseline: the same loop without foresee phases and with a single model.
pub fn baseline_tune<T: Scalar>(
    backend: SimBackend<T>,
    budget: usize,
    policy: &Policy,
    config: SearchConfig,
) -> Result<(TunerState<T>, Vec<CostModelState<T>>)> {
    let families = cluster(&backend.model.subgraphs, policy.cluster_algo);
    let tuner = Tuner::new(
        backend,
        families,
        ModelAssignment::Monolithic,
        false,
        policy.potential,
        budget,
        0.0,
        config,
    )?;
    let (state, models, _) = tuner.run()?;
    Ok((state, models))
}

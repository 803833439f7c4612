//! Simulated hardware: synthetic latency landscapes, a simulated clock and a
//! parallel measurement executor.
//!
//! Subgraphs that share an archetype share the landscape's shape and differ
//! only in base latency and a small per-knob shift of the optimum:
//!
//! ```text
//! L_s(x) = base_s · (1 + Σ_k c_a (z_k − o_{a,k} − δ_{s,k})² + Σ_{i<j} w_{a,ij} z_i z_j)
//! ```
//!
//! where `z` are the normalized knob positions of candidate `x`. Measurement
//! noise is multiplicative lognormal and is drawn from a per-subgraph stream,
//! so the number of workers only changes the clock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::FamilyRegistry;
use crate::graph::{ModelGraph, Subgraph};
use crate::scalar::Scalar;
use crate::searchspace::{featurize, Candidate, MeasurementRecord, MAX_KNOBS};

pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeParams {
    pub base_min_ms: f64,
    pub base_max_ms: f64,
    pub noise_sigma: f64,
    pub shift_max: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub interaction_max: f64,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        LandscapeParams {
            base_min_ms: 0.1,
            base_max_ms: 10.0,
            noise_sigma: 0.02,
            shift_max: 0.05,
            curvature_min: 1.0,
            curvature_max: 4.0,
            interaction_max: 0.5,
        }
    }
}

impl LandscapeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_min_ms > 0.0
            && self.base_max_ms >= self.base_min_ms
            && self.noise_sigma >= 0.0
            && (0.0..=0.15).contains(&self.shift_max)
            && self.curvature_min > 0.0
            && self.curvature_max >= self.curvature_min
            && self.interaction_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid landscape parameters {self:?}")))
        }
    }
}

/// Shared shape of one true family.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype<T> {
    pub optimum: Vec<T>,
    pub curvature: T,
    /// Upper-triangular interaction weights, `interaction[i][j]` for `i < j`.
    pub interaction: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphLandscape<T> {
    pub base_latency: T,
    pub archetype_id: usize,
    pub shift: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape<T> {
    pub archetypes: Vec<Archetype<T>>,
    pub subgraphs: Vec<SubgraphLandscape<T>>,
    pub noise_sigma: T,
}

fn uniform<T: Scalar, R: Rng>(rng: &mut R, lo: f64, hi: f64) -> T {
    if hi <= lo {
        T::lit(lo)
    } else {
        T::lit(rng.random_range(lo..hi))
    }
}

/// Draws one archetype per family of `truth` and per-subgraph bases and shifts.
pub fn make_landscape<T: Scalar>(
    model: &ModelGraph,
    truth: &FamilyRegistry,
    params: &LandscapeParams,
    seed: u64,
) -> Result<Landscape<T>> {
    params.validate()?;
    let mut arch_rng = ChaCha8Rng::seed_from_u64(seed);
    arch_rng.set_stream(1);
    let archetypes = (0..truth.len())
        .map(|_| {
            let optimum = (0..MAX_KNOBS).map(|_| uniform(&mut arch_rng, 0.0, 1.0)).collect();
            let curvature = uniform(&mut arch_rng, params.curvature_min, params.curvature_max);
            let interaction = (0..MAX_KNOBS)
                .map(|i| {
                    (0..MAX_KNOBS)
                        .map(|j| {
                            if j > i {
                                uniform(&mut arch_rng, 0.0, params.interaction_max)
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                })
                .collect();
            Archetype {
                optimum,
                curvature,
                interaction,
            }
        })
        .collect();

    let mut sg_rng = ChaCha8Rng::seed_from_u64(seed);
    sg_rng.set_stream(2);
    let (ln_lo, ln_hi) = (params.base_min_ms.ln(), params.base_max_ms.ln());
    let mut subgraphs = Vec::with_capacity(model.len());
    for s in &model.subgraphs {
        let archetype_id = truth.family_of(s.id)?;
        let base_latency = T::lit(if ln_hi > ln_lo {
            sg_rng.random_range(ln_lo..ln_hi).exp()
        } else {
            params.base_min_ms
        });
        let shift = (0..s.knob_space.len())
            .map(|_| uniform(&mut sg_rng, -params.shift_max, params.shift_max))
            .collect();
        subgraphs.push(SubgraphLandscape {
            base_latency,
            archetype_id,
            shift,
        });
    }
    Ok(Landscape {
        archetypes,
        subgraphs,
        noise_sigma: T::lit(params.noise_sigma),
    })
}

impl<T: Scalar> Landscape<T> {
    /// Noise-free latency of `candidate` on `subgraph`.
    pub fn true_latency(&self, subgraph: &Subgraph, candidate: &Candidate) -> T {
        let z: Vec<T> = subgraph.knob_space.positions(candidate);
        let sl = &self.subgraphs[subgraph.id];
        let arch = &self.archetypes[sl.archetype_id];
        let mut q = T::zero();
        for (k, &zk) in z.iter().enumerate() {
            let d = zk - arch.optimum[k] - sl.shift[k];
            q = q + arch.curvature * d * d;
        }
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                q = q + arch.interaction[i][j] * z[i] * z[j];
            }
        }
        sl.base_latency * (T::one() + q)
    }

    /// Latency of the all-first-values candidate.
    pub fn default_latency(&self, subgraph: &Subgraph) -> T {
        self.true_latency(subgraph, &subgraph.knob_space.default_candidate(subgraph.id))
    }

    /// `subgraph_id,archetype_id,base_latency_ms,default_latency_ms,shift` rows.
    pub fn to_csv(&self, model: &ModelGraph) -> String {
        let mut out = String::from("subgraph_id,archetype_id,base_latency_ms,default_latency_ms,shift\n");
        for (s, sl) in model.subgraphs.iter().zip(&self.subgraphs) {
            let shift = sl
                .shift
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{}\n",
                s.id,
                sl.archetype_id,
                sl.base_latency,
                self.default_latency(s),
                shift
            ));
        }
        out
    }
}

/// One noisy measurement: `L_s(x) · exp(ε)`, `ε ~ N(0, σ²)`.
pub fn measure<T: Scalar, R: Rng>(
    subgraph: &Subgraph,
    candidate: &Candidate,
    landscape: &Landscape<T>,
    rng: &mut R,
) -> T {
    let eps = noise_draw(landscape.noise_sigma, rng);
    landscape.true_latency(subgraph, candidate) * eps
}

fn noise_draw<T: Scalar, R: Rng>(sigma: T, rng: &mut R) -> T {
    if sigma == T::zero() {
        return T::one();
    }
    let e: f64 = rng.sample(StandardNormal);
    (sigma * T::lit(e)).exp()
}

/// Exhaustive noise-free minimum; ties go to the lower candidate index.
pub fn brute_force_optimum<T: Scalar>(
    subgraph: &Subgraph,
    landscape: &Landscape<T>,
) -> Result<(Candidate, T)> {
    let size = subgraph.space_size()?;
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SpaceTooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(Candidate, T)> = None;
    for i in 0..size {
        let c = subgraph.knob_space.candidate(subgraph.id, i);
        let l = landscape.true_latency(subgraph, &c);
        if best.as_ref().is_none_or(|(_, b)| l < *b) {
            best = Some((c, l));
        }
    }
    Ok(best.expect("space has at least one candidate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    pub t_measure: f64,
    pub t_train_per_sample: f64,
    pub train_speedup: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            t_measure: 1.0,
            t_train_per_sample: 0.0005,
            train_speedup: 10.0,
        }
    }
}

/// Simulated wall clock in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimClock {
    now: f64,
    pub t_measure: f64,
    pub t_train_per_sample: f64,
    pub train_speedup: f64,
}

impl SimClock {
    pub fn new(config: ClockConfig) -> Result<Self> {
        if !(config.t_measure >= 0.0 && config.t_train_per_sample >= 0.0 && config.train_speedup >= 1.0) {
            return Err(Error::Config(format!("invalid clock parameters {config:?}")));
        }
        Ok(SimClock {
            now: 0.0,
            t_measure: config.t_measure,
            t_train_per_sample: config.t_train_per_sample,
            train_speedup: config.train_speedup,
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        self.now += dt;
    }
}

/// Charges a cost-model refit over `n_samples` records to the clock.
pub fn charge_training(clock: &mut SimClock, n_samples: usize, accelerated: bool) {
    let speedup = if accelerated { clock.train_speedup } else { 1.0 };
    let dt = n_samples as f64 * clock.t_train_per_sample / speedup;
    clock.advance(dt);
}

/// Measurement noise keyed by `(seed, subgraph_id, candidate index)`: a
/// candidate measures the same whichever policy, batch or worker asks for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseKey {
    pub fn new(seed: u64) -> Self {
        NoiseKey {
            seed: splitmix64(seed ^ 0x6e6f_6973_6500_0000),
        }
    }

    /// The rng that draws the noise of one candidate.
    pub fn rng(&self, subgraph_id: usize, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(index)));
        r.set_stream(subgraph_id as u64);
        r
    }

    /// Noisy latency of candidate `index` of `subgraph`.
    pub fn measure<T: Scalar>(&self, subgraph: &Subgraph, index: u64, landscape: &Landscape<T>) -> T {
        let c = subgraph.knob_space.candidate(subgraph.id, index);
        measure(subgraph, &c, landscape, &mut self.rng(subgraph.id, index))
    }
}

/// Everything needed to turn candidates into measurement records.
#[derive(Debug, Clone)]
pub struct SimBackend<T> {
    pub model: ModelGraph,
    pub landscape: Landscape<T>,
    pub clock: SimClock,
    pub workers: usize,
    pub feature_dim: usize,
    noise: NoiseKey,
}

impl<T: Scalar> SimBackend<T> {
    pub fn new(
        model: ModelGraph,
        landscape: Landscape<T>,
        clock: SimClock,
        workers: usize,
        noise_seed: u64,
    ) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        let feature_dim = crate::searchspace::feature_dim(model.max_knobs());
        let noise = NoiseKey::new(noise_seed);
        Ok(SimBackend {
            model,
            landscape,
            clock,
            workers,
            feature_dim,
            noise,
        })
    }

    /// Measures every candidate on `workers` simulated devices, one candidate
    /// per device at a time. The clock advances by `ceil(m / W) · t_measure`;
    /// records come back in input order.
    pub fn run_batch(&mut self, candidates: &[Candidate]) -> Result<Vec<MeasurementRecord<T>>> {
        let m = candidates.len();
        let w = self.workers;
        let start = self.clock.now();
        let t = self.clock.t_measure;
        let factors: Vec<T> = candidates
            .iter()
            .map(|c| {
                let sg = self.model.subgraph(c.subgraph_id)?;
                let mut rng = self.noise.rng(c.subgraph_id, sg.knob_space.index_of(c));
                Ok(noise_draw(self.landscape.noise_sigma, &mut rng))
            })
            .collect::<Result<_>>()?;

        let model = &self.model;
        let landscape = &self.landscape;
        let d = self.feature_dim;
        let evaluate = |i: usize| -> Result<MeasurementRecord<T>> {
            let c = &candidates[i];
            let sg = model.subgraph(c.subgraph_id)?;
            let features = featurize(c, sg, d)?;
            let latency = landscape.true_latency(sg, c) * factors[i];
            Ok(MeasurementRecord {
                candidate: c.clone(),
                features,
                latency,
                measured_at: start + ((i / w) + 1) as f64 * t,
            })
        };

        let mut slots: Vec<Option<Result<MeasurementRecord<T>>>> = (0..m).map(|_| None).collect();
        if w == 1 || m < 2 {
            for (i, slot) in slots.iter_mut().enumerate() {
                *slot = Some(evaluate(i));
            }
        } else {
            let per_device: Vec<Vec<(usize, Result<MeasurementRecord<T>>)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..w.min(m))
                    .map(|dev| {
                        let evaluate = &evaluate;
                        scope.spawn(move || (dev..m).step_by(w).map(|i| (i, evaluate(i))).collect())
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("measurement worker panicked"))
                    .collect()
            });
            for (i, r) in per_device.into_iter().flatten() {
                slots[i] = Some(r);
            }
        }
        let records = slots
            .into_iter()
            .map(|s| s.expect("every slot measured"))
            .collect::<Result<Vec<_>>>()?;
        self.clock.advance(m.div_ceil(w) as f64 * t);
        Ok(records)
    }
}

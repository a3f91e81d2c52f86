//! Metropolis + parallel-tempering Monte Carlo engine.
//!
//! Two interchangeable paths implement the same chain semantics: a scalar
//! reference path ([`scalar`]) and a bit-packed multi-spin path ([`packed`])
//! that advances up to 64 independent lane systems per word operation. With
//! a common master seed the two produce bitwise-identical trajectories lane
//! by lane; the random-stream layout that guarantees this lives in [`rng`].
//!
//! One *elementary step* is `sweeps_per_step` full-lattice Metropolis sweeps
//! (a pass over each bipartition half in turn) followed by one
//! parallel-tempering swap round over alternating even/odd adjacent slot
//! pairs.

pub mod dump;
pub mod packed;
pub mod rng;
pub mod scalar;

use thiserror::Error;

use crate::chimera::{Instance, SpinConfig};

pub use packed::PackedPt;
pub use scalar::ScalarPt;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("lane set must hold 1..=64 instances (got {0})")]
    BadLaneCount(usize),
    #[error("all lanes must share one graph")]
    MixedGraphs,
    #[error("packed path requires J = ±1, h = 0 instances")]
    NotPlusMinusOne,
    #[error("packed path requires site degree ≤ 6 (got {0})")]
    DegreeTooHigh(u32),
    #[error("invalid run config: {0}")]
    BadConfig(String),
    #[error("invalid temperature ladder: {0}")]
    BadLadder(String),
}

/// Strictly increasing, positive simulation temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureLadder {
    temps: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(temps: Vec<f64>) -> Result<Self, EngineError> {
        if temps.is_empty() {
            return Err(EngineError::BadLadder("no temperatures".into()));
        }
        if temps[0] <= 0.0 {
            return Err(EngineError::BadLadder("temperatures must be positive".into()));
        }
        if temps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EngineError::BadLadder("temperatures must strictly increase".into()));
        }
        Ok(TemperatureLadder { temps })
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.temps.iter().map(|t| 1.0 / t).collect()
    }
}

/// The production 30-temperature ladder: twelve low temperatures evenly
/// spaced on `[0.045, 0.2]` to expose temperature chaos, then eighteen
/// evenly spaced on `[0.21, 1.632]`.
pub fn default_ladder() -> TemperatureLadder {
    let mut temps = Vec::with_capacity(30);
    for i in 0..12 {
        temps.push(0.045 + i as f64 * (0.2 - 0.045) / 11.0);
    }
    for i in 0..18 {
        temps.push(0.21 + i as f64 * (1.632 - 0.21) / 17.0);
    }
    TemperatureLadder::new(temps).unwrap()
}

/// Parameters of one PT run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Elementary steps (each = `sweeps_per_step` sweeps + one swap round).
    pub steps: u64,
    pub sweeps_per_step: u32,
    pub replicas: u32,
    /// Number of checkpoint blocks for stored configs and blocked energies.
    pub checkpoints: u32,
    pub store_configs: bool,
    /// Maximum stored trace length per copy; longer runs record a strided
    /// subsequence (the stride is reported in the trace metadata).
    pub trace_cap: usize,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn new(steps: u64, master_seed: u64) -> RunConfig {
        RunConfig {
            steps,
            sweeps_per_step: 10,
            replicas: 4,
            checkpoints: 100,
            store_configs: false,
            trace_cap: 1 << 17,
            master_seed,
        }
    }

    pub fn with_configs(mut self) -> RunConfig {
        self.store_configs = true;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.sweeps_per_step == 0 || self.replicas == 0 || self.checkpoints == 0 {
            return Err(EngineError::BadConfig(
                "sweeps_per_step, replicas and checkpoints must be positive".into(),
            ));
        }
        if self.store_configs && self.steps > 0 && self.steps % self.checkpoints as u64 != 0 {
            return Err(EngineError::BadConfig(format!(
                "steps ({}) must divide evenly into {} checkpoints when storing configs",
                self.steps, self.checkpoints
            )));
        }
        Ok(())
    }

    pub fn trace_stride(&self) -> u64 {
        if self.steps == 0 {
            1
        } else {
            self.steps.div_ceil(self.trace_cap as u64).max(1)
        }
    }

    pub fn total_sweeps(&self) -> u64 {
        self.steps * self.sweeps_per_step as u64
    }
}

/// Temperature-index time series of one copy: `slots[t]` is the 0-based
/// ladder slot occupied after elementary step `t·stride_steps`.
#[derive(Debug, Clone)]
pub struct WalkTrace {
    pub replica: u32,
    pub copy: u32,
    pub n_t: u32,
    pub slots: Vec<u8>,
    pub stride_steps: u64,
    pub sweeps_per_step: u32,
}

impl WalkTrace {
    /// Sweeps per recorded trace entry.
    pub fn lag_unit_sweeps(&self) -> f64 {
        (self.stride_steps * self.sweeps_per_step as u64) as f64
    }
}

/// Per-temperature blocked energy series: `sums[slot·n_blocks + block]`
/// accumulates the energy of whichever copies sat at `slot`, summed over
/// replicas and the steps of the block.
#[derive(Debug, Clone)]
pub struct EnergyBlocks {
    pub n_t: usize,
    pub n_blocks: usize,
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
}

impl EnergyBlocks {
    pub fn mean(&self, slot: usize, block: usize) -> Option<f64> {
        let c = self.counts[block];
        if c == 0 {
            None
        } else {
            Some(self.sums[slot * self.n_blocks + block] / c as f64)
        }
    }
}

/// One stored spin configuration (bit-packed, 64 sites per word).
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub replica: u32,
    pub copy: u32,
    pub slot: u8,
    pub words: Vec<u64>,
}

impl Snapshot {
    pub fn config(&self, n: usize) -> SpinConfig {
        SpinConfig::from_words(&self.words, n)
    }
}

/// Logical PT state of one lane: a spin configuration and a ladder slot per
/// (replica, copy), plus bookkept energies.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub n_t: usize,
    pub replicas: usize,
    /// `configs[replica·n_t + copy]`.
    pub configs: Vec<SpinConfig>,
    /// Ladder slot per copy; restricted to each replica it is a permutation
    /// of `0..n_t`.
    pub slot_of: Vec<u8>,
    pub energies: Vec<f64>,
}

impl ReplicaSet {
    pub fn permutation_ok(&self) -> bool {
        for rho in 0..self.replicas {
            let mut seen = vec![false; self.n_t];
            for c in 0..self.n_t {
                let s = self.slot_of[rho * self.n_t + c] as usize;
                if s >= self.n_t || seen[s] {
                    return false;
                }
                seen[s] = true;
            }
        }
        true
    }
}

/// Everything a PT run produces for one lane instance.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub instance_id: String,
    pub master_seed: u64,
    pub lane: u32,
    pub replicas: u32,
    pub n_t: u32,
    pub n_sites: u32,
    pub steps: u64,
    pub sweeps_per_step: u32,
    pub trace_stride: u64,
    pub ladder: Vec<f64>,
    pub traces: Vec<WalkTrace>,
    pub energy_blocks: EnergyBlocks,
    pub snapshots: Vec<Snapshot>,
    /// Minimum energy observed at elementary-step boundaries (including the
    /// initial state).
    pub min_energy: f64,
    pub final_state: ReplicaSet,
}

/// Recording scaffolding shared by the two engine paths.
pub(crate) struct Recorder {
    n_t: usize,
    replicas: usize,
    steps: u64,
    stride: u64,
    n_blocks: usize,
    checkpoint_every: u64,
    store_configs: bool,
    traces: Vec<Vec<u8>>,
    block_sums: Vec<f64>,
    block_counts: Vec<u64>,
    snapshots: Vec<Snapshot>,
    min_energy: f64,
}

impl Recorder {
    pub(crate) fn new(cfg: &RunConfig, n_t: usize) -> Recorder {
        let replicas = cfg.replicas as usize;
        let n_blocks = cfg.checkpoints as usize;
        let checkpoint_every = if cfg.steps == 0 {
            0
        } else {
            (cfg.steps / cfg.checkpoints as u64).max(1)
        };
        Recorder {
            n_t,
            replicas,
            steps: cfg.steps,
            stride: cfg.trace_stride(),
            n_blocks,
            checkpoint_every,
            store_configs: cfg.store_configs,
            traces: vec![Vec::new(); replicas * n_t],
            block_sums: vec![0.0; n_t * n_blocks],
            block_counts: vec![0; n_blocks],
            snapshots: Vec::new(),
            min_energy: f64::INFINITY,
        }
    }

    pub(crate) fn observe_initial(&mut self, energies: &[f64]) {
        for &e in energies {
            self.min_energy = self.min_energy.min(e);
        }
    }

    /// Records the post-swap state of elementary step `t` (0-based):
    /// strided trace entries, blocked per-slot energies and the running
    /// minimum. `slot_of` and `energies` are copy-indexed.
    pub(crate) fn step_done(&mut self, t: u64, slot_of: &[u8], energies: &[f64]) {
        if t % self.stride == 0 {
            for (i, &s) in slot_of.iter().enumerate() {
                self.traces[i].push(s);
            }
        }
        let block = ((t * self.n_blocks as u64) / self.steps.max(1)) as usize;
        let block = block.min(self.n_blocks - 1);
        for (i, &s) in slot_of.iter().enumerate() {
            self.block_sums[s as usize * self.n_blocks + block] += energies[i];
            self.min_energy = self.min_energy.min(energies[i]);
        }
        self.block_counts[block] += self.replicas as u64;
    }

    pub(crate) fn wants_snapshot(&self, t: u64) -> bool {
        self.store_configs && self.checkpoint_every > 0 && (t + 1) % self.checkpoint_every == 0
    }

    pub(crate) fn wants_initial_snapshot(&self) -> bool {
        self.store_configs && self.steps == 0
    }

    pub(crate) fn push_snapshot(&mut self, s: Snapshot) {
        self.snapshots.push(s);
    }

    pub(crate) fn finish(
        self,
        instance: &Instance,
        cfg: &RunConfig,
        ladder: &TemperatureLadder,
        lane: u32,
        final_state: ReplicaSet,
    ) -> RunOutput {
        let traces = self
            .traces
            .into_iter()
            .enumerate()
            .map(|(i, slots)| WalkTrace {
                replica: (i / self.n_t) as u32,
                copy: (i % self.n_t) as u32,
                n_t: self.n_t as u32,
                slots,
                stride_steps: self.stride,
                sweeps_per_step: cfg.sweeps_per_step,
            })
            .collect();
        RunOutput {
            instance_id: instance.id.clone(),
            master_seed: cfg.master_seed,
            lane,
            replicas: cfg.replicas,
            n_t: self.n_t as u32,
            n_sites: instance.n() as u32,
            steps: cfg.steps,
            sweeps_per_step: cfg.sweeps_per_step,
            trace_stride: self.stride,
            ladder: ladder.temps().to_vec(),
            traces,
            energy_blocks: EnergyBlocks {
                n_t: self.n_t,
                n_blocks: self.n_blocks,
                sums: self.block_sums,
                counts: self.block_counts,
            },
            snapshots: self.snapshots,
            min_energy: self.min_energy,
            final_state,
        }
    }
}

fn check_lanes(instances: &[Instance]) -> Result<(), EngineError> {
    if instances.is_empty() || instances.len() > 64 {
        return Err(EngineError::BadLaneCount(instances.len()));
    }
    let g0 = &instances[0].graph;
    if instances.iter().any(|i| *i.graph != **g0) {
        return Err(EngineError::MixedGraphs);
    }
    Ok(())
}

/// Runs the packed multi-spin path on up to 64 instances sharing one graph;
/// returns one [`RunOutput`] per lane.
pub fn run_packed(
    instances: &[Instance],
    ladder: &TemperatureLadder,
    cfg: &RunConfig,
) -> Result<Vec<RunOutput>, EngineError> {
    cfg.validate()?;
    check_lanes(instances)?;
    let mut pt = PackedPt::new(instances, ladder, cfg)?;
    pt.run(instances, ladder, cfg)
}

/// Runs the scalar reference path for lane `lane` of the given lane set,
/// consuming exactly the random streams that lane sees in the packed path.
pub fn run_scalar(
    instances: &[Instance],
    lane: usize,
    ladder: &TemperatureLadder,
    cfg: &RunConfig,
) -> Result<RunOutput, EngineError> {
    cfg.validate()?;
    check_lanes(instances)?;
    if lane >= instances.len() {
        return Err(EngineError::BadLaneCount(lane));
    }
    let mut pt = ScalarPt::new(&instances[lane], lane, ladder, cfg)?;
    pt.run(ladder, cfg)
}

/// Scalar run of a single instance (lane 0 of a one-lane set).
pub fn run_one(
    instance: &Instance,
    ladder: &TemperatureLadder,
    cfg: &RunConfig,
) -> Result<RunOutput, EngineError> {
    run_scalar(std::slice::from_ref(instance), 0, ladder, cfg)
}

/// Outcome of a heuristic-solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicResult {
    /// Full-lattice sweeps elapsed at the first visit to a configuration
    /// with scoring energy ≤ target; `None` if the budget ran out.
    pub first_hit_sweeps: Option<u64>,
    pub best_energy: f64,
    pub sweeps_run: u64,
}

/// PT as a heuristic solver: one replica across the ladder, stopping at the
/// first configuration whose energy reaches `target_energy`.
pub fn run_heuristic(
    instance: &Instance,
    ladder: &TemperatureLadder,
    target_energy: f64,
    max_sweeps: u64,
    master_seed: u64,
) -> Result<HeuristicResult, EngineError> {
    scalar::heuristic(instance, None, ladder, target_energy, max_sweeps, 10, master_seed)
}

/// Heuristic run whose dynamics follow `instance` while hits are scored
/// against `scoring` (the intended, unperturbed problem).
pub fn run_heuristic_scored(
    instance: &Instance,
    scoring: &Instance,
    target_energy: f64,
    ladder: &TemperatureLadder,
    max_sweeps: u64,
    master_seed: u64,
) -> Result<HeuristicResult, EngineError> {
    scalar::heuristic(instance, Some(scoring), ladder, target_energy, max_sweeps, 10, master_seed)
}

/// Packs scalar lane states into a bit-packed state. The inverse is
/// [`unpack`]; `unpack(pack(x)) == x`.
pub fn pack(
    instances: &[Instance],
    states: &[ReplicaSet],
    ladder: &TemperatureLadder,
    cfg: &RunConfig,
) -> Result<PackedPt, EngineError> {
    check_lanes(instances)?;
    if states.len() != instances.len() {
        return Err(EngineError::BadLaneCount(states.len()));
    }
    let mut pt = PackedPt::new(instances, ladder, cfg)?;
    pt.load_states(states);
    Ok(pt)
}

/// Extracts the logical per-lane states from a packed state.
pub fn unpack(pt: &PackedPt) -> Vec<ReplicaSet> {
    pt.states()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn default_ladder_matches_published_grid() {
        let l = default_ladder();
        assert_eq!(l.len(), 30);
        let t = l.temps();
        assert!((t[0] - 0.045).abs() < 1e-15);
        assert!((t[11] - 0.2).abs() < 1e-15);
        assert!((t[12] - 0.21).abs() < 1e-15);
        assert!((t[29] - 1.632).abs() < 1e-15);
        // Upper grid spacing is uniform at (1.632 − 0.21)/17.
        let d = (1.632f64 - 0.21) / 17.0;
        assert!((d - 0.08364705882352941).abs() < 1e-15);
        for w in t[12..].windows(2) {
            assert!((w[1] - w[0] - d).abs() < 1e-12);
        }
        for w in t[..12].windows(2) {
            assert!((w[1] - w[0] - (0.2 - 0.045) / 11.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_rejects_nonmonotone() {
        assert!(TemperatureLadder::new(vec![0.5, 0.5]).is_err());
        assert!(TemperatureLadder::new(vec![-1.0, 0.5]).is_err());
        assert!(TemperatureLadder::new(vec![]).is_err());
    }

    #[test]
    fn zero_step_run_is_empty() {
        let g = Arc::new(build_chimera(1, 1, 2, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 3);
        let ladder = default_ladder();
        let mut cfg = RunConfig::new(0, 9);
        cfg.store_configs = true;
        let out = run_one(&inst, &ladder, &cfg).unwrap();
        assert!(out.traces.iter().all(|t| t.slots.is_empty()));
        // Initial snapshot set only.
        assert_eq!(out.snapshots.len(), (cfg.replicas * 30) as usize);
        assert!(out.min_energy.is_finite());
    }

    #[test]
    fn same_seed_same_output() {
        let g = Arc::new(build_chimera(1, 1, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 5);
        let ladder = default_ladder();
        let cfg = RunConfig::new(40, 123);
        let a = run_one(&inst, &ladder, &cfg).unwrap();
        let b = run_one(&inst, &ladder, &cfg).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.min_energy, b.min_energy);
        assert_eq!(
            a.traces.iter().map(|t| t.slots.clone()).collect::<Vec<_>>(),
            b.traces.iter().map(|t| t.slots.clone()).collect::<Vec<_>>()
        );
    }
}

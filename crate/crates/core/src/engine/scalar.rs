//! Scalar reference implementation of the PT chain.
//!
//! Simulates one lane of a lane set, drawing from exactly the streams that
//! lane sees in the packed path: eight plane words per proposal from the
//! copy's shared plane stream (bit `lane` extracted), a private escape word
//! on 8-bit ties, swap words from the lane's swap stream. Handles arbitrary
//! real couplings and fields; ±J instances additionally use the
//! precomputed threshold tables so decisions match the packed path bit for
//! bit.

use rand_xoshiro::rand_core::RngCore;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::chimera::{Instance, SpinConfig};

use super::rng::{
    pm1_threshold_tables, stream, swap_accept, AcceptThreshold, PLANE_WORDS, TAG_ESC, TAG_INIT,
    plane_stream, PlaneRng, TAG_SWAP,
};
use super::{
    EngineError, HeuristicResult, Recorder, ReplicaSet, RunConfig, RunOutput, Snapshot,
    TemperatureLadder,
};

struct Scorer {
    /// Couplings parallel to the main CSR adjacency.
    adj_j: Vec<f64>,
    h: Vec<f64>,
    energies: Vec<f64>,
}

pub struct ScalarPt<'a> {
    instance: &'a Instance,
    lane: usize,
    n_sites: usize,
    n_t: usize,
    replicas: usize,
    temps: Vec<f64>,
    betas: Vec<f64>,
    // CSR adjacency with couplings inlined.
    adj_off: Vec<u32>,
    adj_site: Vec<u32>,
    adj_j: Vec<f64>,
    h: Vec<f64>,
    site_order: Vec<u32>,
    pm1: bool,
    t_hi: Vec<[u8; 6]>,
    t_lo: Vec<[u64; 6]>,
    // State, copy-indexed by replica*n_t + copy.
    spins: Vec<i8>,
    energies: Vec<f64>,
    slot_of: Vec<u8>,
    copy_at: Vec<u8>,
    plane_rng: Vec<PlaneRng>,
    esc_rng: Vec<Xoshiro256PlusPlus>,
    swap_rng: Vec<Xoshiro256PlusPlus>,
    scorer: Option<Scorer>,
}

impl<'a> ScalarPt<'a> {
    pub fn new(
        instance: &'a Instance,
        lane: usize,
        ladder: &TemperatureLadder,
        cfg: &RunConfig,
    ) -> Result<Self, EngineError> {
        Self::with_replicas(instance, lane, ladder, cfg, cfg.replicas as usize)
    }

    fn with_replicas(
        instance: &'a Instance,
        lane: usize,
        ladder: &TemperatureLadder,
        cfg: &RunConfig,
        replicas: usize,
    ) -> Result<Self, EngineError> {
        let g = &instance.graph;
        let n_sites = g.n();
        let n_t = ladder.len();
        let mut adj_off = Vec::with_capacity(n_sites + 1);
        let mut adj_site = Vec::new();
        let mut adj_j = Vec::new();
        adj_off.push(0u32);
        for i in 0..n_sites as u32 {
            for &(nbr, e) in g.neighbors(i) {
                adj_site.push(nbr);
                adj_j.push(instance.couplings[e as usize]);
            }
            adj_off.push(adj_site.len() as u32);
        }
        let mut site_order = g.half_sites(0);
        site_order.extend(g.half_sites(1));

        let pm1 = instance.is_pm1();
        let (t_hi, t_lo) = pm1_threshold_tables(ladder.temps());

        let copies = replicas * n_t;
        let mut spins = vec![0i8; copies * n_sites];
        let mut slot_of = vec![0u8; copies];
        let mut copy_at = vec![0u8; copies];
        let mut plane_rng = Vec::with_capacity(copies);
        let mut esc_rng = Vec::with_capacity(copies);
        for rho in 0..replicas {
            for c in 0..n_t {
                let idx = rho * n_t + c;
                slot_of[idx] = c as u8;
                copy_at[idx] = c as u8;
                let mut init =
                    stream(cfg.master_seed, TAG_INIT, [rho as u64, c as u64, lane as u64]);
                let base = idx * n_sites;
                for s in 0..n_sites {
                    spins[base + s] = if init.next_u64() & 1 == 0 { 1 } else { -1 };
                }
                plane_rng.push(plane_stream(cfg.master_seed, [rho as u64, c as u64, 0]));
                esc_rng.push(stream(cfg.master_seed, TAG_ESC, [rho as u64, c as u64, lane as u64]));
            }
        }
        let swap_rng = (0..replicas)
            .map(|rho| stream(cfg.master_seed, TAG_SWAP, [rho as u64, lane as u64, 0]))
            .collect();

        let mut pt = ScalarPt {
            instance,
            lane,
            n_sites,
            n_t,
            replicas,
            temps: ladder.temps().to_vec(),
            betas: ladder.betas(),
            adj_off,
            adj_site,
            adj_j,
            h: instance.fields.clone(),
            site_order,
            pm1,
            t_hi,
            t_lo,
            spins,
            energies: vec![0.0; copies],
            slot_of,
            copy_at,
            plane_rng,
            esc_rng,
            swap_rng,
            scorer: None,
        };
        for idx in 0..copies {
            let e = pt.recompute_energy(idx);
            pt.energies[idx] = e;
        }
        Ok(pt)
    }

    fn attach_scorer(&mut self, scoring: &Instance) {
        let g = &self.instance.graph;
        let mut adj_j = Vec::with_capacity(self.adj_site.len());
        for i in 0..self.n_sites as u32 {
            for &(_, e) in g.neighbors(i) {
                adj_j.push(scoring.couplings[e as usize]);
            }
        }
        let copies = self.replicas * self.n_t;
        let mut sc = Scorer { adj_j, h: scoring.fields.clone(), energies: vec![0.0; copies] };
        for idx in 0..copies {
            sc.energies[idx] = recompute_energy_with(
                &self.spins[idx * self.n_sites..(idx + 1) * self.n_sites],
                &self.adj_off,
                &self.adj_site,
                &sc.adj_j,
                &sc.h,
            );
        }
        self.scorer = Some(sc);
    }

    /// Energy of copy `idx` recomputed from scratch (bookkeeping oracle).
    pub fn recompute_energy(&self, idx: usize) -> f64 {
        recompute_energy_with(
            &self.spins[idx * self.n_sites..(idx + 1) * self.n_sites],
            &self.adj_off,
            &self.adj_site,
            &self.adj_j,
            &self.h,
        )
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// One full-lattice Metropolis sweep of every copy: a pass over each
    /// bipartition half in turn at the copy's current temperature.
    pub fn metropolis_sweep(&mut self) {
        for idx in 0..self.replicas * self.n_t {
            self.sweep_copy(idx);
        }
    }

    fn sweep_copy(&mut self, idx: usize) {
        let slot = self.slot_of[idx] as usize;
        let temp = self.temps[slot];
        let base = idx * self.n_sites;
        let lane = self.lane;
        let mut e = self.energies[idx];
        for oi in 0..self.site_order.len() {
            let site = self.site_order[oi] as usize;
            // Plane words are drawn unconditionally; bit `lane` of the q-th
            // word is bit (7-q) of the 8-bit draw.
            let mut r8 = 0u8;
            let prng = &mut self.plane_rng[idx];
            for q in 0..PLANE_WORDS {
                let w = prng.next_u64();
                r8 |= (((w >> lane) & 1) as u8) << (7 - q);
            }
            let s = self.spins[base + site];
            let a = self.adj_off[site] as usize;
            let b = self.adj_off[site + 1] as usize;
            let mut local = self.h[site];
            for k in a..b {
                local += self.adj_j[k] * f64::from(self.spins[base + self.adj_site[k] as usize]);
            }
            let de = -2.0 * f64::from(s) * local;
            let accept = if de <= 0.0 {
                true
            } else {
                let th = if self.pm1 {
                    let m = (de * 0.5) as usize;
                    debug_assert!((1..=6).contains(&m));
                    AcceptThreshold {
                        hi: self.t_hi[slot][m - 1],
                        lo: self.t_lo[slot][m - 1],
                    }
                } else {
                    AcceptThreshold::from_prob((-de / temp).exp())
                };
                th.decide(r8, &mut self.esc_rng[idx])
            };
            if accept {
                self.spins[base + site] = -s;
                e += de;
                if let Some(sc) = &mut self.scorer {
                    let mut local_s = sc.h[site];
                    for k in a..b {
                        local_s +=
                            sc.adj_j[k] * f64::from(self.spins[base + self.adj_site[k] as usize]);
                    }
                    // Spin already flipped: ΔE_score = 2·s_new·local' with
                    // local' evaluated after the flip equals −2·s_old·local'.
                    sc.energies[idx] += 2.0 * f64::from(-s) * local_s;
                }
            }
        }
        self.energies[idx] = e;
    }

    /// One PT swap round over adjacent slot pairs starting at `parity`.
    /// Only the copy↔slot assignment changes; spins stay put.
    pub fn pt_swap_round(&mut self, parity: u64) {
        for rho in 0..self.replicas {
            let rb = rho * self.n_t;
            let mut p = parity as usize & 1;
            while p + 1 < self.n_t {
                let ca = self.copy_at[rb + p] as usize;
                let cb = self.copy_at[rb + p + 1] as usize;
                let accept = swap_accept(
                    self.betas[p],
                    self.betas[p + 1],
                    self.energies[rb + ca],
                    self.energies[rb + cb],
                    &mut self.swap_rng[rho],
                );
                if accept {
                    self.copy_at[rb + p] = cb as u8;
                    self.copy_at[rb + p + 1] = ca as u8;
                    self.slot_of[rb + ca] = (p + 1) as u8;
                    self.slot_of[rb + cb] = p as u8;
                }
                p += 2;
            }
            debug_assert!(self.permutation_ok(rho));
        }
    }

    fn permutation_ok(&self, rho: usize) -> bool {
        let mut seen = vec![false; self.n_t];
        for c in 0..self.n_t {
            let s = self.slot_of[rho * self.n_t + c] as usize;
            if seen[s] {
                return false;
            }
            seen[s] = true;
        }
        true
    }

    pub fn state(&self) -> ReplicaSet {
        let configs = (0..self.replicas * self.n_t)
            .map(|idx| SpinConfig {
                spins: self.spins[idx * self.n_sites..(idx + 1) * self.n_sites].to_vec(),
            })
            .collect();
        ReplicaSet {
            n_t: self.n_t,
            replicas: self.replicas,
            configs,
            slot_of: self.slot_of.clone(),
            energies: self.energies.clone(),
        }
    }

    fn snapshot(&self, step: u64, idx: usize) -> Snapshot {
        let cfg = SpinConfig {
            spins: self.spins[idx * self.n_sites..(idx + 1) * self.n_sites].to_vec(),
        };
        Snapshot {
            step,
            replica: (idx / self.n_t) as u32,
            copy: (idx % self.n_t) as u32,
            slot: self.slot_of[idx],
            words: cfg.to_words(),
        }
    }

    pub(super) fn run(
        &mut self,
        ladder: &TemperatureLadder,
        cfg: &RunConfig,
    ) -> Result<RunOutput, EngineError> {
        let mut rec = Recorder::new(cfg, self.n_t);
        rec.observe_initial(&self.energies);
        if rec.wants_initial_snapshot() {
            for idx in 0..self.replicas * self.n_t {
                let s = self.snapshot(0, idx);
                rec.push_snapshot(s);
            }
        }
        for t in 0..cfg.steps {
            for _ in 0..cfg.sweeps_per_step {
                self.metropolis_sweep();
            }
            self.pt_swap_round(t);
            rec.step_done(t, &self.slot_of, &self.energies);
            if rec.wants_snapshot(t) {
                for idx in 0..self.replicas * self.n_t {
                    let s = self.snapshot(t + 1, idx);
                    rec.push_snapshot(s);
                }
            }
        }
        Ok(rec.finish(self.instance, cfg, ladder, self.lane as u32, self.state()))
    }
}

fn recompute_energy_with(
    spins: &[i8],
    adj_off: &[u32],
    adj_site: &[u32],
    adj_j: &[f64],
    h: &[f64],
) -> f64 {
    let mut e = 0.0;
    for site in 0..spins.len() {
        let a = adj_off[site] as usize;
        let b = adj_off[site + 1] as usize;
        for k in a..b {
            let nbr = adj_site[k] as usize;
            if nbr > site {
                e += adj_j[k] * f64::from(spins[site]) * f64::from(spins[nbr]);
            }
        }
        e += h[site] * f64::from(spins[site]);
    }
    e
}

/// Heuristic-solver driver: one replica across the ladder, first hit counted
/// in full-lattice sweeps. `scoring`, when given, supplies the energy
/// function hits are judged by (the dynamics still follow `instance`).
pub(super) fn heuristic(
    instance: &Instance,
    scoring: Option<&Instance>,
    ladder: &TemperatureLadder,
    target: f64,
    max_sweeps: u64,
    sweeps_per_step: u32,
    master_seed: u64,
) -> Result<HeuristicResult, EngineError> {
    let cfg = RunConfig { replicas: 1, sweeps_per_step, ..RunConfig::new(0, master_seed) };
    let mut pt = ScalarPt::with_replicas(instance, 0, ladder, &cfg, 1)?;
    if let Some(sc) = scoring {
        pt.attach_scorer(sc);
    }
    let score_energy = |pt: &ScalarPt, idx: usize| match &pt.scorer {
        Some(sc) => sc.energies[idx],
        None => pt.energies[idx],
    };

    let mut best = f64::INFINITY;
    for idx in 0..pt.n_t {
        best = best.min(score_energy(&pt, idx));
    }
    if best <= target {
        return Ok(HeuristicResult { first_hit_sweeps: Some(0), best_energy: best, sweeps_run: 0 });
    }
    let mut sweeps = 0u64;
    let mut swap_round = 0u64;
    while sweeps < max_sweeps {
        pt.metropolis_sweep();
        sweeps += 1;
        for idx in 0..pt.n_t {
            best = best.min(score_energy(&pt, idx));
        }
        if best <= target {
            return Ok(HeuristicResult {
                first_hit_sweeps: Some(sweeps),
                best_energy: best,
                sweeps_run: sweeps,
            });
        }
        if sweeps % sweeps_per_step as u64 == 0 {
            pt.pt_swap_round(swap_round);
            swap_round += 1;
        }
    }
    Ok(HeuristicResult { first_hit_sweeps: None, best_energy: best, sweeps_run: sweeps })
}

/// Fixed-temperature Metropolis sampler for small systems: runs
/// `n_samples · thin_steps` elementary steps at temperature `t`, recording
/// the spin bitmask (bit i set ⇔ spin i = −1) every `thin_steps` steps.
pub fn run_fixed_t(
    instance: &Instance,
    t: f64,
    n_samples: usize,
    thin_steps: u64,
    sweeps_per_step: u32,
    master_seed: u64,
) -> Result<Vec<u64>, EngineError> {
    assert!(instance.n() <= 64, "state bitmask limited to 64 spins");
    let ladder = TemperatureLadder::new(vec![t])?;
    let cfg = RunConfig { replicas: 1, sweeps_per_step, ..RunConfig::new(0, master_seed) };
    let mut pt = ScalarPt::with_replicas(instance, 0, &ladder, &cfg, 1)?;
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for _ in 0..thin_steps {
            for _ in 0..sweeps_per_step {
                pt.metropolis_sweep();
            }
        }
        let mut mask = 0u64;
        for (i, &s) in pt.spins[..pt.n_sites].iter().enumerate() {
            if s < 0 {
                mask |= 1 << i;
            }
        }
        out.push(mask);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, energy, generate_instance};
    use crate::engine::default_ladder;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn small_instance(seed: u64) -> Instance {
        let g = Arc::new(build_chimera(1, 1, 4, &BTreeSet::new()).unwrap());
        generate_instance(g, seed)
    }

    #[test]
    fn bookkeeping_matches_recompute() {
        let inst = small_instance(9);
        let ladder = default_ladder();
        let cfg = RunConfig::new(50, 4);
        let mut pt = ScalarPt::new(&inst, 0, &ladder, &cfg).unwrap();
        for step in 0..50u64 {
            for _ in 0..10 {
                pt.metropolis_sweep();
            }
            pt.pt_swap_round(step);
        }
        for idx in 0..pt.replicas * pt.n_t {
            assert_eq!(pt.energies[idx], pt.recompute_energy(idx), "copy {idx}");
        }
    }

    #[test]
    fn energies_agree_with_chimera_energy() {
        let inst = small_instance(2);
        let ladder = default_ladder();
        let cfg = RunConfig::new(10, 1);
        let mut pt = ScalarPt::new(&inst, 0, &ladder, &cfg).unwrap();
        for _ in 0..30 {
            pt.metropolis_sweep();
        }
        let st = pt.state();
        for (idx, c) in st.configs.iter().enumerate() {
            assert_eq!(st.energies[idx], energy(&inst, c).unwrap());
        }
    }

    #[test]
    fn hot_limit_accepts_everything() {
        // At an enormous temperature every proposal has acceptance ~1.
        let inst = small_instance(5);
        let ladder = TemperatureLadder::new(vec![1e12]).unwrap();
        let cfg = RunConfig { replicas: 1, ..RunConfig::new(0, 3) };
        let mut pt = ScalarPt::with_replicas(&inst, 0, &ladder, &cfg, 1).unwrap();
        let before = pt.spins[..pt.n_sites].to_vec();
        pt.metropolis_sweep();
        let after = &pt.spins[..pt.n_sites];
        let flipped = before.iter().zip(after).filter(|(a, b)| a != b).count();
        // Acceptance probability per proposal is ≥ 1 − 2^-72.
        assert_eq!(flipped, pt.n_sites);
    }

    #[test]
    fn heuristic_trivial_targets() {
        let inst = small_instance(7);
        let ladder = default_ladder();
        let r = heuristic(&inst, None, &ladder, f64::INFINITY, 100, 10, 1).unwrap();
        assert_eq!(r.first_hit_sweeps, Some(0));
        // Unreachable target: below −(#edges).
        let r = heuristic(&inst, None, &ladder, -17.0, 200, 10, 1).unwrap();
        assert_eq!(r.first_hit_sweeps, None);
        assert_eq!(r.sweeps_run, 200);
    }

    #[test]
    fn swap_round_preserves_permutation() {
        let inst = small_instance(3);
        let ladder = default_ladder();
        let cfg = RunConfig::new(10, 8);
        let mut pt = ScalarPt::new(&inst, 0, &ladder, &cfg).unwrap();
        for step in 0..40 {
            pt.metropolis_sweep();
            pt.pt_swap_round(step);
            let st = pt.state();
            assert!(st.permutation_ok());
        }
    }
}

//! Coupling-noise ("J-chaos") laboratory: Gaussian perturbation of the
//! programmed couplings, ground-state shift statistics, simulated
//! programming cycles with random gauges, and the percentile analytics
//! used to quantify cycle-to-cycle success fluctuations.

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use thiserror::Error;

use crate::chimera::{apply_gauge, energy, Gauge, Instance};
use crate::engine::rng::{splitmix64, stream_seed};
use crate::engine::{run_heuristic_scored, TemperatureLadder};
use crate::exact::{solve, ExactError};
use crate::landscape::overlap;
use crate::util::{fmt_sig9, quantile};

const TAG_GAUGE: u64 = 0x6a63_6761_7567_6531;
const TAG_PERTURB: u64 = 0x6a63_7065_7274_7572;
const TAG_ATTEMPT: u64 = 0x6a63_6174_7465_6d70;

#[derive(Debug, Error, PartialEq)]
pub enum ChaosError {
    #[error("perturbation width must be non-negative (got {0})")]
    NegativeWidth(f64),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("engine failure: {0}")]
    Engine(String),
}

/// Gaussian coupling-noise model: each programmed coupling picks up an
/// independent `N(0, δJ)` error per programming cycle.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub delta_j: f64,
    /// Optional hardware-range clamp applied after the noise.
    pub clamp: Option<(f64, f64)>,
    pub seed: u64,
    /// Hook for systematic per-vertex field bias; `None` leaves fields
    /// untouched.
    pub field_bias: Option<Vec<f64>>,
}

impl PerturbationSpec {
    pub fn new(delta_j: f64, seed: u64) -> Result<Self, ChaosError> {
        if delta_j < 0.0 {
            return Err(ChaosError::NegativeWidth(delta_j));
        }
        Ok(PerturbationSpec { delta_j, clamp: None, seed, field_bias: None })
    }
}

/// Applies the noise model: `J'_ij = J_ij + R`, `R ~ N(0, δJ)` i.i.d. per
/// coupling, reproducible from the spec seed. Fields stay untouched unless
/// a bias hook is given.
pub fn perturb(instance: &Instance, spec: &PerturbationSpec) -> Instance {
    let mut out = instance.clone();
    out.seed = spec.seed;
    out.id = format!("{}-p{:016x}", instance.id, spec.seed);
    if spec.delta_j > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.delta_j).unwrap();
        for j in out.couplings.iter_mut() {
            *j += normal.sample(&mut rng);
            if let Some((lo, hi)) = spec.clamp {
                *j = j.clamp(lo, hi);
            }
        }
    }
    if let Some(bias) = &spec.field_bias {
        for (h, b) in out.fields.iter_mut().zip(bias) {
            *h += b;
        }
    }
    out
}

/// Ground-state sensitivity to coupling noise.
#[derive(Debug, Clone)]
pub struct GsShift {
    /// |q| between the original and perturbed ground-state witnesses,
    /// one entry per trial.
    pub overlaps: Vec<f64>,
    /// Fraction of trials where the original witness is no longer optimal
    /// under the perturbed couplings.
    pub changed_fraction: f64,
}

pub fn gs_shift(
    instance: &Instance,
    delta_j: f64,
    trials: u32,
    master_seed: u64,
) -> Result<GsShift, ChaosError> {
    let base = solve(instance)?;
    let results: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = PerturbationSpec {
                delta_j,
                clamp: None,
                seed: splitmix64(master_seed ^ splitmix64(t as u64 | 1 << 63)),
                field_bias: None,
            };
            let pert = perturb(instance, &spec);
            let p = solve(&pert)?;
            let q = overlap(&base.witness, &p.witness).expect("same graph").abs();
            let e_wit = energy(&pert, &base.witness).expect("same graph");
            Ok((q, e_wit > p.e0 + 1e-9))
        })
        .collect::<Result<_, ChaosError>>()?;
    let changed = results.iter().filter(|(_, c)| *c).count() as f64 / trials.max(1) as f64;
    Ok(GsShift { overlaps: results.into_iter().map(|(q, _)| q).collect(), changed_fraction: changed })
}

/// Outcome of one simulated programming cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub cycle: u32,
    pub gauge_seed: u64,
    pub perturb_seed: u64,
    /// Anneal attempts in the cycle.
    pub x: u32,
    /// Attempts that reached the intended ground-state energy.
    pub y: u32,
}

impl CycleResult {
    pub fn p(&self) -> f64 {
        self.y as f64 / self.x as f64
    }
}

/// Knobs of the simulated acquisition loop. One attempt is one bounded
/// heuristic PT run (standing in for one hardware anneal); hits are scored
/// against the unperturbed instance's ground-state energy.
#[derive(Debug, Clone)]
pub struct CycleConfig {
    pub delta_j: f64,
    pub clamp: Option<(f64, f64)>,
    pub n_cycles: u32,
    pub attempts_per_cycle: u32,
    pub budget_sweeps: u64,
    pub master_seed: u64,
}

/// Simulates `n_cycles` programming cycles: draw a random gauge, perturb
/// the gauged couplings, run X bounded heuristic solves, count the ones
/// that reach `target_e0` (judged gauge-invariantly via the unperturbed
/// gauged instance).
pub fn simulate_cycles(
    instance: &Instance,
    target_e0: f64,
    ladder: &TemperatureLadder,
    cfg: &CycleConfig,
) -> Result<Vec<CycleResult>, ChaosError> {
    (0..cfg.n_cycles)
        .into_par_iter()
        .map(|cycle| {
            let gauge_seed = stream_seed(cfg.master_seed, TAG_GAUGE, [cycle as u64, 0, 0]);
            let perturb_seed = stream_seed(cfg.master_seed, TAG_PERTURB, [cycle as u64, 0, 0]);
            let gauge = Gauge::random(instance.n(), gauge_seed);
            let gauged = apply_gauge(instance, &gauge).expect("gauge dimension");
            let spec = PerturbationSpec {
                delta_j: cfg.delta_j,
                clamp: cfg.clamp,
                seed: perturb_seed,
                field_bias: None,
            };
            let pert = perturb(&gauged, &spec);
            let mut y = 0u32;
            for a in 0..cfg.attempts_per_cycle {
                let seed =
                    stream_seed(cfg.master_seed, TAG_ATTEMPT, [cycle as u64, a as u64, 0]);
                let r = run_heuristic_scored(
                    &pert,
                    &gauged,
                    target_e0,
                    ladder,
                    cfg.budget_sweeps,
                    seed,
                )
                .map_err(|e| ChaosError::Engine(e.to_string()))?;
                if r.first_hit_sweeps.is_some() {
                    y += 1;
                }
            }
            Ok(CycleResult {
                cycle,
                gauge_seed,
                perturb_seed,
                x: cfg.attempts_per_cycle,
                y,
            })
        })
        .collect()
}

/// Empirical quantile I_q of per-cycle success probabilities (type-7
/// interpolation).
pub fn percentile(p_values: &[f64], q: f64) -> Option<f64> {
    quantile(p_values, q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio89 {
    Value(f64),
    /// I_{0.9} = 0: the ratio is not computable at this success level.
    Undefined,
}

/// `R_{8,9} = I_{0.8}/I_{0.9} ∈ [0, 1]`; small values mean success drops
/// sharply between typical and favorable cycles.
pub fn ratio_89(p_values: &[f64]) -> Option<Ratio89> {
    let i8 = percentile(p_values, 0.8)?;
    let i9 = percentile(p_values, 0.9)?;
    if i9 == 0.0 {
        return Some(Ratio89::Undefined);
    }
    Some(Ratio89::Value(i8 / i9))
}

/// `instance_id cycle gauge_seed perturb_seed X Y p` rows.
pub fn cycles_table(instance_id: &str, cycles: &[CycleResult]) -> String {
    let mut out = String::from("instance_id\tcycle\tgauge_seed\tperturb_seed\tX\tY\tp\n");
    for c in cycles {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            instance_id,
            c.cycle,
            c.gauge_seed,
            c.perturb_seed,
            c.x,
            c.y,
            fmt_sig9(c.p())
        ));
    }
    out
}

/// `id n_cycles I50 I80 I90 R89` row.
pub fn percentile_report(instance_id: &str, cycles: &[CycleResult]) -> String {
    let ps: Vec<f64> = cycles.iter().map(|c| c.p()).collect();
    let i50 = percentile(&ps, 0.5).unwrap_or(f64::NAN);
    let i80 = percentile(&ps, 0.8).unwrap_or(f64::NAN);
    let i90 = percentile(&ps, 0.9).unwrap_or(f64::NAN);
    let r = match ratio_89(&ps) {
        Some(Ratio89::Value(v)) => fmt_sig9(v),
        Some(Ratio89::Undefined) => "undefined".into(),
        None => "na".into(),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\n",
        instance_id,
        cycles.len(),
        fmt_sig9(i50),
        fmt_sig9(i80),
        fmt_sig9(i90),
        r
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use crate::engine::default_ladder;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn c1(seed: u64) -> Instance {
        let g = Arc::new(build_chimera(1, 1, 4, &BTreeSet::new()).unwrap());
        generate_instance(g, seed)
    }

    #[test]
    fn zero_width_is_identity() {
        let inst = c1(1);
        let spec = PerturbationSpec::new(0.0, 99).unwrap();
        let p = perturb(&inst, &spec);
        assert_eq!(p.couplings, inst.couplings);
        assert_eq!(p.fields, inst.fields);
    }

    #[test]
    fn noise_variance_matches_width() {
        // Pool couplings over enough instances for ≥ 10^4 draws.
        let g = Arc::new(build_chimera(8, 8, 4, &BTreeSet::new()).unwrap());
        let delta = 0.05;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0usize;
        for seed in 0..7u64 {
            let inst = generate_instance(Arc::clone(&g), seed);
            let spec = PerturbationSpec::new(delta, seed ^ 0xfeed).unwrap();
            let p = perturb(&inst, &spec);
            for (a, b) in p.couplings.iter().zip(&inst.couplings) {
                let d = a - b;
                sum += d;
                sum2 += d * d;
                n += 1;
            }
        }
        assert!(n >= 10_000);
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        assert!(
            (var / (delta * delta) - 1.0).abs() < 0.05,
            "var = {var}, expected {}",
            delta * delta
        );
    }

    #[test]
    fn small_noise_preserves_signs() {
        let g = Arc::new(build_chimera(8, 8, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 4);
        let spec = PerturbationSpec::new(0.05, 123).unwrap();
        let p = perturb(&inst, &spec);
        for (a, b) in p.couplings.iter().zip(&inst.couplings) {
            assert_eq!(a.signum(), b.signum());
        }
    }

    #[test]
    fn gs_shift_at_zero_noise() {
        let inst = c1(7);
        let s = gs_shift(&inst, 0.0, 8, 5).unwrap();
        assert!(s.overlaps.iter().all(|&q| q == 1.0));
        assert_eq!(s.changed_fraction, 0.0);
    }

    #[test]
    fn two_spin_gs_robust_to_small_noise() {
        // Gap 2, noise δJ = 0.05 on one coupling cannot reorder the levels.
        let g = Arc::new(build_chimera(1, 1, 1, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 3);
        let s = gs_shift(&inst, 0.05, 50, 11).unwrap();
        assert_eq!(s.changed_fraction, 0.0);
        assert!(s.overlaps.iter().all(|&q| q == 1.0));
    }

    #[test]
    fn gs_change_fraction_grows_with_noise() {
        let g = Arc::new(build_chimera(2, 2, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 21);
        let mut prev = -1.0;
        for &dj in &[0.01, 0.05, 0.2] {
            let s = gs_shift(&inst, dj, 40, 17).unwrap();
            assert!(
                s.changed_fraction >= prev,
                "fraction decreased at δJ = {dj}: {} < {prev}",
                s.changed_fraction
            );
            prev = s.changed_fraction;
        }
        assert!(prev > 0.0, "largest noise should change some ground states");
    }

    #[test]
    fn cycles_are_reproducible_and_counted() {
        let inst = c1(2);
        let e0 = solve(&inst).unwrap().e0;
        let ladder = default_ladder();
        let cfg = CycleConfig {
            delta_j: 0.05,
            clamp: None,
            n_cycles: 6,
            attempts_per_cycle: 3,
            budget_sweeps: 200,
            master_seed: 31,
        };
        let a = simulate_cycles(&inst, e0, &ladder, &cfg).unwrap();
        let b = simulate_cycles(&inst, e0, &ladder, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|c| c.y <= c.x));
    }

    #[test]
    fn zero_noise_control_has_stable_success() {
        let inst = c1(6);
        let e0 = solve(&inst).unwrap().e0;
        let ladder = default_ladder();
        let cfg = CycleConfig {
            delta_j: 0.0,
            clamp: None,
            n_cycles: 5,
            attempts_per_cycle: 4,
            budget_sweeps: 2000,
            master_seed: 8,
        };
        let rs = simulate_cycles(&inst, e0, &ladder, &cfg).unwrap();
        // Generous budget on an 8-spin instance: every attempt lands.
        assert!(rs.iter().all(|c| c.p() == 1.0), "{rs:?}");
    }

    #[test]
    fn strong_noise_makes_success_bimodal() {
        // On a 128-spin C4, δJ = 0.3 shifts the ground state in some
        // cycles but not others: those cycles score ~0, the rest ~1.
        // (Small instances stay unimodal: their ground manifolds are so
        // degenerate that some intended optimum survives any noise.)
        let g = Arc::new(build_chimera(4, 4, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 1);
        let e0 = solve(&inst).unwrap().e0;
        let ladder = default_ladder();
        let cfg = CycleConfig {
            delta_j: 0.3,
            clamp: None,
            n_cycles: 10,
            attempts_per_cycle: 3,
            budget_sweeps: 800,
            master_seed: 12,
        };
        let rs = simulate_cycles(&inst, e0, &ladder, &cfg).unwrap();
        let ps: Vec<f64> = rs.iter().map(|c| c.p()).collect();
        let lo = ps.iter().filter(|&&p| p <= 0.34).count();
        let hi = ps.iter().filter(|&&p| p >= 0.99).count();
        assert!(lo >= 2, "expected failing cycles, got {ps:?}");
        assert!(hi >= 2, "expected succeeding cycles, got {ps:?}");
    }

    #[test]
    fn ratio_basics() {
        let equal = vec![0.4; 20];
        assert_eq!(ratio_89(&equal), Some(Ratio89::Value(1.0)));
        let zeros = vec![0.0; 20];
        assert_eq!(ratio_89(&zeros), Some(Ratio89::Undefined));
        // Percentile is monotone in q and permutation invariant.
        let mut v: Vec<f64> = (0..50).map(|i| (i as f64) / 50.0).collect();
        let p80 = percentile(&v, 0.8).unwrap();
        let p90 = percentile(&v, 0.9).unwrap();
        assert!(p80 <= p90);
        v.reverse();
        assert_eq!(percentile(&v, 0.8).unwrap(), p80);
    }
}

#[cfg(test)]
mod probe {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use crate::engine::default_ladder;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    #[ignore = "parameter probe"]
    fn bimodal_probe() {
        let g = Arc::new(build_chimera(4, 4, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 1);
        let e0 = solve(&inst).unwrap().e0;
        let ladder = default_ladder();
        for dj in [0.3, 0.5] {
            for budget in [1000u64, 4000] {
                let cfg = CycleConfig {
                    delta_j: dj, clamp: None, n_cycles: 12, attempts_per_cycle: 3,
                    budget_sweeps: budget, master_seed: 12,
                };
                let t0 = std::time::Instant::now();
                let rs = simulate_cycles(&inst, e0, &ladder, &cfg).unwrap();
                let ps: Vec<f64> = rs.iter().map(|c| c.p()).collect();
                println!("dj={dj} budget={budget} dt={:.1}s ps={ps:?}", t0.elapsed().as_secs_f64());
            }
        }
    }
}

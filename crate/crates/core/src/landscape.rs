//! Thermodynamic and landscape analysis: energy-versus-temperature curves,
//! temperature-chaos detection, zero-temperature extrapolation, and spin
//! overlap statistics between stored ground / minimally-excited states.

use rand_xoshiro::rand_core::RngCore;
use thiserror::Error;

use crate::chimera::SpinConfig;
use crate::engine::rng::{stream, stream_seed};
use crate::engine::RunOutput;
use crate::exact::StateLabel;
use crate::util::{fmt_sig9, median, quantile_sorted};

#[derive(Debug, Error, PartialEq)]
pub enum LandscapeError {
    #[error("not enough equilibrated blocks (have {0}, need ≥ 2)")]
    InsufficientBlocks(usize),
    #[error("need at least {need} {kind} snapshots (have {have})")]
    InsufficientData { kind: &'static str, need: usize, have: usize },
    #[error("configurations must have equal dimension")]
    DimensionMismatch,
    #[error("curve is missing temperatures near {0}")]
    MissingTemperature(f64),
}

/// Mean energy above the ground state per ladder temperature, with
/// jackknife errors over post-burn-in checkpoint blocks.
#[derive(Debug, Clone)]
pub struct EnergyCurve {
    pub temps: Vec<f64>,
    pub above_gs: Vec<f64>,
    pub errors: Vec<f64>,
    pub e0: f64,
    pub tau_sweeps: f64,
    pub run_sweeps: u64,
    pub blocks_used: usize,
}

/// Time-averaged `⟨E⟩(T_i) − E0` from a finished run, discarding blocks
/// that start before `burn_in_taus · τ` sweeps.
pub fn energy_curve(
    run: &RunOutput,
    e0: f64,
    tau_sweeps: f64,
    burn_in_taus: f64,
) -> Result<EnergyCurve, LandscapeError> {
    let blocks = &run.energy_blocks;
    let total_sweeps = run.steps * run.sweeps_per_step as u64;
    let mut included = Vec::new();
    for b in 0..blocks.n_blocks {
        if blocks.counts[b] == 0 {
            continue;
        }
        let start_sweeps = (b as u64 * run.steps / blocks.n_blocks as u64)
            * run.sweeps_per_step as u64;
        if start_sweeps as f64 > burn_in_taus * tau_sweeps {
            included.push(b);
        }
    }
    if included.len() < 2 {
        return Err(LandscapeError::InsufficientBlocks(included.len()));
    }
    let n_t = blocks.n_t;
    let mut above = Vec::with_capacity(n_t);
    let mut errors = Vec::with_capacity(n_t);
    for slot in 0..n_t {
        let means: Vec<f64> = included
            .iter()
            .map(|&b| blocks.sums[slot * blocks.n_blocks + b] / blocks.counts[b] as f64)
            .collect();
        let nb = means.len() as f64;
        let m = means.iter().sum::<f64>() / nb;
        // Jackknife over blocks; for the mean this reduces to the usual
        // standard error of block means.
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (nb * (nb - 1.0));
        above.push(m - e0);
        errors.push(var.sqrt());
    }
    Ok(EnergyCurve {
        temps: run.ladder.clone(),
        above_gs: above,
        errors,
        e0,
        tau_sweeps,
        run_sweeps: total_sweeps,
        blocks_used: included.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    /// Extrapolated total energy at T = 0.
    pub e_extrap: f64,
    /// Systematic error vs the exact ground state: `e_extrap − e0`.
    pub error_vs_e0: f64,
    /// Ladder temperatures actually used (nearest to the requested pair).
    pub temps_used: [f64; 2],
}

/// Linear T→0 extrapolation of the total energy in `x = exp(−Δ/T)`
/// through the curve values nearest `T = 0.2` and `T = 0.3`. Exact for any
/// curve of the form `E0 + c·exp(−Δ/T)` (a dilute gas of gap-Δ
/// excitations over one minimum).
pub fn extrapolate_zero_t(curve: &EnergyCurve, gap: f64) -> Result<Extrapolation, LandscapeError> {
    let nearest = |target: f64| -> Result<usize, LandscapeError> {
        curve
            .temps
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - target).abs().partial_cmp(&(*b - target).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .ok_or(LandscapeError::MissingTemperature(target))
    };
    let i2 = nearest(0.2)?;
    let i3 = nearest(0.3)?;
    if i2 == i3 {
        return Err(LandscapeError::MissingTemperature(0.3));
    }
    let (t2, t3) = (curve.temps[i2], curve.temps[i3]);
    let (x2, x3) = ((-gap / t2).exp(), (-gap / t3).exp());
    let (e2, e3) = (curve.e0 + curve.above_gs[i2], curve.e0 + curve.above_gs[i3]);
    let slope = (e3 - e2) / (x3 - x2);
    let e_extrap = e2 - slope * x2;
    Ok(Extrapolation { e_extrap, error_vs_e0: e_extrap - curve.e0, temps_used: [t2, t3] })
}

/// Temperatures flagged as temperature-chaos candidates: midpoints of
/// ladder intervals whose energy increment exceeds `threshold` times both
/// the local jackknife error and the median inter-point change.
pub fn detect_tc(curve: &EnergyCurve, threshold: f64) -> Vec<f64> {
    let n = curve.temps.len();
    if n < 3 {
        return Vec::new();
    }
    let diffs: Vec<f64> =
        (0..n - 1).map(|i| curve.above_gs[i + 1] - curve.above_gs[i]).collect();
    let med = median(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>()).unwrap_or(0.0);
    let mut out = Vec::new();
    for i in 0..n - 1 {
        let err = (curve.errors[i].powi(2) + curve.errors[i + 1].powi(2)).sqrt();
        if diffs[i] > threshold * err && diffs[i] > threshold * med && diffs[i] > 0.0 {
            out.push((curve.temps[i] + curve.temps[i + 1]) / 2.0);
        }
    }
    out
}

/// Hamming distance and dimension of two configurations.
pub fn overlap_counts(a: &SpinConfig, b: &SpinConfig) -> Result<(usize, usize), LandscapeError> {
    if a.n() != b.n() || a.n() == 0 {
        return Err(LandscapeError::DimensionMismatch);
    }
    let d = a.spins.iter().zip(&b.spins).filter(|(x, y)| x != y).count();
    Ok((d, a.n()))
}

/// Spin overlap `q = 1 − 2·hamming/N ∈ [−1, 1]`.
pub fn overlap(a: &SpinConfig, b: &SpinConfig) -> Result<f64, LandscapeError> {
    let (d, n) = overlap_counts(a, b)?;
    Ok(1.0 - 2.0 * d as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairType {
    GsGs,
    GsEs,
}

/// Distribution of |q| over sampled configuration pairs.
#[derive(Debug, Clone)]
pub struct OverlapDistribution {
    pub pair_type: PairType,
    /// Probability mass per bin of width `bin_width` on [0, 1].
    pub histogram: Vec<f64>,
    pub bin_width: f64,
    pub samples: usize,
    pub median: f64,
}

pub const OVERLAP_BIN_WIDTH: f64 = 0.02;

fn build_distribution(qs: &mut Vec<f64>, pair_type: PairType) -> OverlapDistribution {
    let nbins = (1.0 / OVERLAP_BIN_WIDTH).round() as usize;
    let mut hist = vec![0.0; nbins];
    for &q in qs.iter() {
        let idx = ((q / OVERLAP_BIN_WIDTH) as usize).min(nbins - 1);
        hist[idx] += 1.0;
    }
    let total = qs.len() as f64;
    for h in hist.iter_mut() {
        *h /= total;
    }
    qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = quantile_sorted(qs, 0.5);
    OverlapDistribution {
        pair_type,
        histogram: hist,
        bin_width: OVERLAP_BIN_WIDTH,
        samples: qs.len(),
        median: med,
    }
}

/// |q| distributions over GS–GS and GS–ES pairs of labeled snapshots.
/// Pairs are enumerated exhaustively when fewer than `max_pairs`, otherwise
/// sampled uniformly with replacement from the seeded stream.
pub fn overlap_distributions(
    configs: &[SpinConfig],
    labels: &[StateLabel],
    max_pairs: usize,
    seed: u64,
) -> Result<(OverlapDistribution, OverlapDistribution), LandscapeError> {
    assert_eq!(configs.len(), labels.len());
    let gs: Vec<&SpinConfig> = configs
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == StateLabel::Gs)
        .map(|(c, _)| c)
        .collect();
    let es: Vec<&SpinConfig> = configs
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == StateLabel::Es)
        .map(|(c, _)| c)
        .collect();
    if gs.len() < 2 {
        return Err(LandscapeError::InsufficientData { kind: "GS", need: 2, have: gs.len() });
    }
    if es.is_empty() {
        return Err(LandscapeError::InsufficientData { kind: "ES", need: 1, have: 0 });
    }

    let mut rng = stream(stream_seed(seed, 0x6f76_6572_6c61_70, [0, 0, 0]), 1, [0, 0, 0]);
    let mut pick = |n: usize| -> usize { (rng.next_u64() % n as u64) as usize };

    let mut qs_gg = Vec::new();
    let n_gg_exhaustive = gs.len() * (gs.len() - 1) / 2;
    if n_gg_exhaustive <= max_pairs {
        for i in 0..gs.len() {
            for j in i + 1..gs.len() {
                qs_gg.push(overlap(gs[i], gs[j])?.abs());
            }
        }
    } else {
        for _ in 0..max_pairs {
            let i = pick(gs.len());
            let mut j = pick(gs.len());
            while j == i {
                j = pick(gs.len());
            }
            qs_gg.push(overlap(gs[i], gs[j])?.abs());
        }
    }

    let mut qs_ge = Vec::new();
    if gs.len() * es.len() <= max_pairs {
        for g in &gs {
            for e in &es {
                qs_ge.push(overlap(g, e)?.abs());
            }
        }
    } else {
        for _ in 0..max_pairs {
            let i = pick(gs.len());
            let j = pick(es.len());
            qs_ge.push(overlap(gs[i], es[j])?.abs());
        }
    }

    Ok((
        build_distribution(&mut qs_gg, PairType::GsGs),
        build_distribution(&mut qs_ge, PairType::GsEs),
    ))
}

/// Median-of-medians per τ-generation: input rows are
/// `(generation, gsgs_median, gses_median)` per instance; output one row
/// per generation (ascending) with the medians over its instances.
pub fn typical_overlap(per_instance: &[(i32, f64, f64)]) -> Vec<(i32, f64, f64)> {
    let mut gens: Vec<i32> = per_instance.iter().map(|r| r.0).collect();
    gens.sort_unstable();
    gens.dedup();
    gens.into_iter()
        .map(|g| {
            let gg: Vec<f64> =
                per_instance.iter().filter(|r| r.0 == g).map(|r| r.1).collect();
            let ge: Vec<f64> =
                per_instance.iter().filter(|r| r.0 == g).map(|r| r.2).collect();
            (g, median(&gg).unwrap(), median(&ge).unwrap())
        })
        .collect()
}

/// Tab-separated curve table with metadata header lines.
pub fn curve_table(curve: &EnergyCurve, instance_id: &str, generation: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# instance {instance_id}\n"));
    out.push_str(&format!("# tau_sweeps {}\n", fmt_sig9(curve.tau_sweeps)));
    out.push_str(&format!("# generation {generation}\n"));
    out.push_str(&format!("# e0 {}\n", fmt_sig9(curve.e0)));
    out.push_str("T\te_above_gs\terror\n");
    for i in 0..curve.temps.len() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            fmt_sig9(curve.temps[i]),
            fmt_sig9(curve.above_gs[i]),
            fmt_sig9(curve.errors[i])
        ));
    }
    out
}

/// Tab-separated |q| histogram table.
pub fn overlap_table(dist: &OverlapDistribution, instance_id: &str) -> String {
    let label = match dist.pair_type {
        PairType::GsGs => "gs-gs",
        PairType::GsEs => "gs-es",
    };
    let mut out = String::new();
    out.push_str(&format!("# instance {instance_id}\n"));
    out.push_str(&format!("# pair_type {label}\n"));
    out.push_str(&format!("# samples {}\n", dist.samples));
    out.push_str(&format!("# median {}\n", fmt_sig9(dist.median)));
    out.push_str("q_lo\tq_hi\tmass\n");
    for (i, &m) in dist.histogram.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            fmt_sig9(i as f64 * dist.bin_width),
            fmt_sig9((i + 1) as f64 * dist.bin_width),
            fmt_sig9(m)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, energy, generate_instance};
    use crate::engine::{default_ladder, run_one, RunConfig};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn synthetic_curve(f: impl Fn(f64) -> f64, e0: f64) -> EnergyCurve {
        let temps = default_ladder().temps().to_vec();
        let above: Vec<f64> = temps.iter().map(|&t| f(t) - e0).collect();
        EnergyCurve {
            errors: vec![1e-6; temps.len()],
            temps,
            above_gs: above,
            e0,
            tau_sweeps: 1.0,
            run_sweeps: 1000,
            blocks_used: 10,
        }
    }

    #[test]
    fn extrapolation_exact_on_single_exponential_model() {
        let e0 = -340.0;
        let c = 25.0;
        let curve = synthetic_curve(|t| e0 + c * (-2.0 / t).exp(), e0);
        let ex = extrapolate_zero_t(&curve, 2.0).unwrap();
        assert!(ex.error_vs_e0.abs() < 1e-9, "err = {}", ex.error_vs_e0);
        assert!((ex.temps_used[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_sees_false_minimum_of_tc_curve() {
        // Above its chaos temperature a TC sample looks like a gas of
        // excitations over a local minimum at E0 + 4.
        let e0 = -100.0;
        let curve = synthetic_curve(|t| e0 + 4.0 + 10.0 * (-2.0 / t).exp(), e0);
        let ex = extrapolate_zero_t(&curve, 2.0).unwrap();
        assert!((ex.error_vs_e0 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn tc_detector_flags_step_and_ignores_smooth() {
        let e0 = 0.0;
        let smooth = synthetic_curve(|t| 3.0 * t, e0);
        assert!(detect_tc(&smooth, 5.0).is_empty());
        // Step of height 4 at T = 0.2 on a gently increasing background.
        let step = synthetic_curve(|t| if t > 0.2 { 4.0 + 0.1 * t } else { 0.1 * t }, e0);
        let hits = detect_tc(&step, 5.0);
        assert_eq!(hits.len(), 1);
        assert!((hits[0] - 0.205).abs() < 0.01, "hit at {}", hits[0]);
    }

    #[test]
    fn overlap_algebra() {
        let a = SpinConfig { spins: vec![1, 1, -1, 1, -1, 1, 1, 1] };
        assert_eq!(overlap(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap(&a, &a.flipped()).unwrap(), -1.0);
        let mut b = a.clone();
        b.spins[0] = -b.spins[0];
        b.spins[3] = -b.spins[3];
        assert_eq!(overlap(&a, &b).unwrap(), 0.5);
        // Symmetry and sign under flipping one argument.
        assert_eq!(overlap(&a, &b).unwrap(), overlap(&b, &a).unwrap());
        assert_eq!(overlap(&a, &b.flipped()).unwrap(), -overlap(&a, &b).unwrap());
    }

    #[test]
    fn distributions_all_identical_snapshots() {
        let a = SpinConfig { spins: vec![1; 10] };
        let configs = vec![a.clone(), a.clone(), a.clone(), a.clone()];
        let labels = vec![StateLabel::Gs, StateLabel::Gs, StateLabel::Gs, StateLabel::Es];
        let (gg, ge) = overlap_distributions(&configs, &labels, 1000, 7).unwrap();
        assert!((gg.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((ge.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gg.histogram[49], 1.0);
        assert_eq!(gg.median, 1.0);
        assert_eq!(ge.median, 1.0);
    }

    #[test]
    fn planted_distant_excited_state() {
        // GS pair related by global flip; ES at Hamming distance N/2 from
        // both: GS-ES median far below GS-GS median.
        let n = 16;
        let gs1 = SpinConfig { spins: vec![1; n] };
        let gs2 = gs1.flipped();
        let mut es = gs1.clone();
        for i in 0..n / 2 {
            es.spins[i] = -es.spins[i];
        }
        let configs = vec![gs1, gs2, es];
        let labels = vec![StateLabel::Gs, StateLabel::Gs, StateLabel::Es];
        let (gg, ge) = overlap_distributions(&configs, &labels, 1000, 3).unwrap();
        assert_eq!(gg.median, 1.0);
        assert_eq!(ge.median, 0.0);
    }

    #[test]
    fn insufficient_data_is_explicit() {
        let a = SpinConfig { spins: vec![1; 4] };
        let configs = vec![a.clone(), a.clone()];
        let err = overlap_distributions(
            &configs,
            &[StateLabel::Gs, StateLabel::Gs],
            10,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, LandscapeError::InsufficientData { kind: "ES", .. }));
    }

    #[test]
    fn typical_overlap_mechanics() {
        // Single instance per generation: identity. Mixed: median over
        // instances; permutation invariant.
        let rows = vec![(3, 0.918, 0.918), (6, 0.4, 0.25)];
        let t = typical_overlap(&rows);
        assert_eq!(t, vec![(3, 0.918, 0.918), (6, 0.4, 0.25)]);
        let rows2 = vec![(3, 0.9, 0.8), (3, 0.5, 0.2), (3, 0.7, 0.6)];
        let mut rows3 = rows2.clone();
        rows3.reverse();
        assert_eq!(typical_overlap(&rows2), typical_overlap(&rows3));
        assert_eq!(typical_overlap(&rows2), vec![(3, 0.7, 0.6)]);
    }

    #[test]
    fn curve_matches_exact_canonical_average() {
        // 4-spin K_{2,2} toy: compare the measured curve with the exact
        // canonical mean Σ E e^{−E/T}/Z at every ladder temperature.
        let g = Arc::new(build_chimera(1, 1, 2, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 11);
        let ladder = default_ladder();
        let mut cfg = RunConfig::new(4000, 99);
        cfg.checkpoints = 40;
        let out = run_one(&inst, &ladder, &cfg).unwrap();
        let exact = crate::exact::brute_force(&inst).unwrap();
        let curve = energy_curve(&out, exact.e0, 20.0, 3.0).unwrap();
        assert!(curve.above_gs.iter().all(|&v| v >= 0.0));
        // Exact canonical averages over the 16 states.
        let n = inst.n();
        for (i, &t) in curve.temps.iter().enumerate() {
            let mut z = 0.0;
            let mut ez = 0.0;
            for mask in 0..(1u32 << n) {
                let cfg = SpinConfig {
                    spins: (0..n).map(|k| if mask >> k & 1 == 1 { -1 } else { 1 }).collect(),
                };
                let e = energy(&inst, &cfg).unwrap();
                let w = (-(e - exact.e0) / t).exp();
                z += w;
                ez += e * w;
            }
            let expect = ez / z - exact.e0;
            let tol = 5.0 * curve.errors[i] + 0.02;
            assert!(
                (curve.above_gs[i] - expect).abs() < tol,
                "T = {t}: measured {} vs exact {expect} (tol {tol})",
                curve.above_gs[i]
            );
        }
    }
}

//! Classical-hardness measurement: autocorrelation of the temperature
//! random walk, two-exponential fits, the mixing time τ, the trapping
//! figure of merit, the multi-round escalation protocol and τ-generation
//! binning.
//!
//! The temperature index of a copy at Monte Carlo time t is `i_t ∈ 1..N_T`
//! (1-based here, matching the uniform-equilibrium mean `(N_T+1)/2`). The
//! autocorrelation `C(s) = ⟨i_t·i_{t+s}⟩ − (N_T+1)²/4` is estimated by
//! time-and-copy averaging with exact integer sums, fitted to
//! `a₁·e^{−s/τ₁} + a₂·e^{−s/τ₂}`; τ = τ₁ converted to full-lattice sweeps
//! is the hardness of record.

use rayon::prelude::*;
use thiserror::Error;

use crate::chimera::Instance;
use crate::engine::{RunOutput, WalkTrace};
use crate::util::{fmt_sig9, linfit};

/// Production escalation schedule: elementary-step budgets per round and
/// survivor caps between rounds.
pub const PAPER_ROUND_BUDGETS: [u64; 3] = [1_000_000, 10_000_000, 100_000_000];
pub const PAPER_SURVIVOR_CAPS: [usize; 2] = [1024, 256];
/// Workstation-scale defaults (used by campaign configs).
pub const DESK_ROUND_BUDGETS: [u64; 3] = [100_000, 1_000_000, 10_000_000];
pub const DESK_SURVIVOR_CAPS: [usize; 2] = [64, 16];

#[derive(Debug, Error, PartialEq)]
pub enum MixingError {
    #[error("no traces supplied")]
    Empty,
    #[error("traces disagree in length or metadata")]
    Mismatched,
}

/// Autocorrelation of the temperature walk on a lag grid.
#[derive(Debug, Clone)]
pub struct CorrelationCurve {
    /// Lags in trace units (one unit = `lag_unit_sweeps` sweeps).
    pub lags: Vec<u64>,
    pub values: Vec<f64>,
    /// Sample pairs averaged per lag.
    pub counts: Vec<u64>,
    pub lag_unit_sweeps: f64,
    pub n_t: u32,
    pub trace_len: usize,
}

/// Log-spaced lag grid: dense up to 15, then ×1.15 steps, capped at L/4.
fn lag_grid(len: usize) -> Vec<u64> {
    let max_lag = (len / 4).max(1) as u64;
    let mut lags: Vec<u64> = (0..=15.min(max_lag)).collect();
    let mut x = 15f64;
    while (x * 1.15) as u64 <= max_lag {
        x *= 1.15;
        lags.push(x as u64);
    }
    lags.dedup();
    lags
}

/// Estimates `C(s)` by time-and-copy averaging. The subtracted mean is the
/// exact equilibrium value `(N_T+1)/2`, not the empirical one, so a
/// constant trace has a nonzero plateau.
pub fn correlation(traces: &[WalkTrace]) -> Result<CorrelationCurve, MixingError> {
    let first = traces.first().ok_or(MixingError::Empty)?;
    let len = first.slots.len();
    if len == 0 {
        return Err(MixingError::Empty);
    }
    if traces.iter().any(|t| {
        t.slots.len() != len
            || t.n_t != first.n_t
            || t.stride_steps != first.stride_steps
            || t.sweeps_per_step != first.sweeps_per_step
    }) {
        return Err(MixingError::Mismatched);
    }
    let n_t = first.n_t;
    let mean = (n_t as f64 + 1.0) / 2.0;
    let lags = lag_grid(len);
    let mut values = Vec::with_capacity(lags.len());
    let mut counts = Vec::with_capacity(lags.len());
    for &s in &lags {
        let s = s as usize;
        let mut sum = 0u64;
        for t in traces {
            let a = &t.slots[..len - s];
            let b = &t.slots[s..];
            sum += a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x as u64 + 1) * (y as u64 + 1))
                .sum::<u64>();
        }
        let n = (traces.len() * (len - s)) as u64;
        values.push(sum as f64 / n as f64 - mean * mean);
        counts.push(n);
    }
    Ok(CorrelationCurve {
        lags,
        values,
        counts,
        lag_unit_sweeps: first.lag_unit_sweeps(),
        n_t,
        trace_len: len,
    })
}

/// Converged two-exponential fit; times in full-lattice sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoExpFit {
    pub tau: f64,
    pub tau_sub: f64,
    pub a1: f64,
    pub a2: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

/// Non-negative least-squares amplitudes for fixed decay times; returns
/// (a1, a2, sse).
fn amplitudes(s: &[f64], c: &[f64], t1: f64, t2: f64) -> (f64, f64, f64) {
    let e1: Vec<f64> = s.iter().map(|&x| (-x / t1).exp()).collect();
    let e2: Vec<f64> = s.iter().map(|&x| (-x / t2).exp()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (g11, g12, g22) = (dot(&e1, &e1), dot(&e1, &e2), dot(&e2, &e2));
    let (b1, b2) = (dot(c, &e1), dot(c, &e2));
    let sse_for = |a1: f64, a2: f64| {
        c.iter()
            .zip(&e1)
            .zip(&e2)
            .map(|((&ci, &x1), &x2)| {
                let r = ci - a1 * x1 - a2 * x2;
                r * r
            })
            .sum::<f64>()
    };
    let det = g11 * g22 - g12 * g12;
    if det.abs() > 1e-300 {
        let a1 = (b1 * g22 - b2 * g12) / det;
        let a2 = (b2 * g11 - b1 * g12) / det;
        if a1 >= 0.0 && a2 >= 0.0 {
            return (a1, a2, sse_for(a1, a2));
        }
    }
    // Clamped single-basis candidates.
    let a1 = (b1 / g11).max(0.0);
    let a2 = (b2 / g22).max(0.0);
    let s1 = sse_for(a1, 0.0);
    let s2 = sse_for(0.0, a2);
    if s1 <= s2 {
        (a1, 0.0, s1)
    } else {
        (0.0, a2, s2)
    }
}

/// Two-dimensional Nelder–Mead minimization.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(f: F, start: [f64; 2], step: f64, iters: usize) -> ([f64; 2], f64) {
    let mut pts = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut vals = pts.map(&f);
    for _ in 0..iters {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let (best, mid, worst) = (order[0], order[1], order[2]);
        if (vals[worst] - vals[best]).abs() <= 1e-12 * (1.0 + vals[best].abs()) {
            break;
        }
        let centroid = [
            (pts[best][0] + pts[mid][0]) / 2.0,
            (pts[best][1] + pts[mid][1]) / 2.0,
        ];
        let refl = [
            centroid[0] + (centroid[0] - pts[worst][0]),
            centroid[1] + (centroid[1] - pts[worst][1]),
        ];
        let fr = f(refl);
        if fr < vals[best] {
            let exp = [
                centroid[0] + 2.0 * (centroid[0] - pts[worst][0]),
                centroid[1] + 2.0 * (centroid[1] - pts[worst][1]),
            ];
            let fe = f(exp);
            if fe < fr {
                pts[worst] = exp;
                vals[worst] = fe;
            } else {
                pts[worst] = refl;
                vals[worst] = fr;
            }
        } else if fr < vals[mid] {
            pts[worst] = refl;
            vals[worst] = fr;
        } else {
            let con = [
                centroid[0] + 0.5 * (pts[worst][0] - centroid[0]),
                centroid[1] + 0.5 * (pts[worst][1] - centroid[1]),
            ];
            let fc = f(con);
            if fc < vals[worst] {
                pts[worst] = con;
                vals[worst] = fc;
            } else {
                for i in 0..3 {
                    if i != best {
                        pts[i] = [
                            (pts[i][0] + pts[best][0]) / 2.0,
                            (pts[i][1] + pts[best][1]) / 2.0,
                        ];
                        vals[i] = f(pts[i]);
                    }
                }
            }
        }
    }
    let mut bi = 0;
    for i in 1..3 {
        if vals[i] < vals[bi] {
            bi = i;
        }
    }
    (pts[bi], vals[bi])
}

/// Fits `a₁e^{−s/τ₁} + a₂e^{−s/τ₂}` (τ₁ > τ₂ > 0, a ≥ 0) to the positive
/// part of the curve at lags ≥ 1. `None` means unresolved: the caller
/// escalates to a longer run rather than trusting the numbers.
pub fn fit_two_exp(curve: &CorrelationCurve) -> Option<TwoExpFit> {
    // Fit window: lags 1.. until the curve first drops below a small
    // fraction of C(0) (or goes non-positive). Beyond that point the
    // estimator is dominated by trajectory-correlated fluctuations that
    // wander coherently around zero and would masquerade as a spurious
    // very-slow component.
    let c0 = curve
        .lags
        .iter()
        .position(|&l| l == 0)
        .map(|i| curve.values[i])
        .unwrap_or_else(|| curve.values.iter().cloned().fold(f64::NAN, f64::max));
    let floor = 0.02 * c0;
    let mut s = Vec::new();
    let mut c = Vec::new();
    for (i, &lag) in curve.lags.iter().enumerate() {
        if lag < 1 {
            continue;
        }
        if curve.values[i] <= floor.max(0.0) {
            break;
        }
        s.push(lag as f64);
        c.push(curve.values[i]);
    }
    if s.len() < 8 {
        return None;
    }
    // Initial guess from a log-linear fit of the curve tail.
    let tail = s.len() * 2 / 3;
    let ln_c: Vec<f64> = c[tail..].iter().map(|&v| v.ln()).collect();
    let tau_guess = match linfit(&s[tail..], &ln_c) {
        Some((_, slope, _)) if slope < 0.0 => (-1.0 / slope).min(s[s.len() - 1] * 10.0),
        _ => s[s.len() - 1] / 2.0,
    };
    let objective = |p: [f64; 2]| {
        let (t1, t2) = (p[0].exp(), p[1].exp());
        if !t1.is_finite() || !t2.is_finite() || t1 <= 0.0 || t2 <= 0.0 {
            return f64::INFINITY;
        }
        amplitudes(&s, &c, t1, t2).2
    };
    let starts = [
        [tau_guess.ln(), (tau_guess / 8.0).ln()],
        [(tau_guess * 3.0).ln(), (tau_guess / 2.0).ln()],
        [(s[s.len() - 1] / 2.0).ln(), (s[1].max(1.0) * 2.0).ln()],
    ];
    let mut best: Option<([f64; 2], f64)> = None;
    for st in starts {
        let (p, v) = nelder_mead(objective, st, 0.7, 400);
        if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((p, v));
        }
    }
    let (p, sse) = best?;
    if !sse.is_finite() {
        return None;
    }
    let (mut t1, mut t2) = (p[0].exp(), p[1].exp());
    let (mut a1, mut a2, _) = amplitudes(&s, &c, t1, t2);
    if t1 < t2 {
        std::mem::swap(&mut t1, &mut t2);
        std::mem::swap(&mut a1, &mut a2);
    }
    if !(t1.is_finite() && t1 > 0.0) || a1 + a2 <= 0.0 {
        return None;
    }
    // An ultra-slow component carrying a token amplitude is the noise
    // floor of the estimator, not a physical mode: the record τ is then
    // the remaining single decay.
    if a1 < 0.02 * (a1 + a2) {
        let (t, a, sse1) = single_exp(&s, &c, t2.max(s[0]));
        if !(t.is_finite() && t > 0.0 && a > 0.0) {
            return None;
        }
        return Some(TwoExpFit {
            tau: t * curve.lag_unit_sweeps,
            tau_sub: t * curve.lag_unit_sweeps,
            a1: a,
            a2: 0.0,
            residual: (sse1 / s.len() as f64).sqrt(),
        });
    }
    if a1 <= 0.0 {
        return None;
    }
    Some(TwoExpFit {
        tau: t1 * curve.lag_unit_sweeps,
        tau_sub: t2 * curve.lag_unit_sweeps,
        a1,
        a2,
        residual: (sse / s.len() as f64).sqrt(),
    })
}

/// One-exponential least squares: golden-section search on ln τ with the
/// amplitude solved in closed form. Returns (τ, amplitude, sse).
fn single_exp(s: &[f64], c: &[f64], t_guess: f64) -> (f64, f64, f64) {
    let eval = |t: f64| -> (f64, f64) {
        let e: Vec<f64> = s.iter().map(|&x| (-x / t).exp()).collect();
        let num: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
        let den: f64 = e.iter().map(|x| x * x).sum();
        let a = (num / den).max(0.0);
        let sse = c
            .iter()
            .zip(&e)
            .map(|(ci, ei)| {
                let r = ci - a * ei;
                r * r
            })
            .sum::<f64>();
        (a, sse)
    };
    let (mut lo, mut hi) = ((t_guess / 100.0).ln(), (t_guess * 100.0).ln());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if eval(m1.exp()).1 < eval(m2.exp()).1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t = ((lo + hi) / 2.0).exp();
    let (a, sse) = eval(t);
    (t, a, sse)
}

/// Fraction of time spent in the high-temperature region (upper half of
/// the ladder; slots ≥ N_T/2, i.e. index ≥ 16 of 30 1-based), minimized
/// over copies. Small values mean some copy is badly trapped.
pub fn figure_of_merit(traces: &[WalkTrace]) -> f64 {
    let mut f = f64::INFINITY;
    for t in traces {
        if t.slots.is_empty() {
            continue;
        }
        let hi = t.slots.iter().filter(|&&s| s as u32 >= t.n_t / 2).count();
        f = f.min(hi as f64 / t.slots.len() as f64);
    }
    if f.is_finite() {
        f
    } else {
        0.0
    }
}

/// Hardness bin `10^k ≤ τ ≤ 3·10^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generation {
    K(i32),
    BetweenBins,
}

pub fn assign_generation(tau: f64) -> Generation {
    if !(tau > 0.0) {
        return Generation::BetweenBins;
    }
    let mut k = tau.log10().floor() as i32;
    // Guard the floor against log rounding at bin edges.
    for kk in [k - 1, k, k + 1] {
        let lo = 10f64.powi(kk);
        if tau >= lo && tau <= 3.0 * lo {
            k = kk;
            return Generation::K(k);
        }
    }
    Generation::BetweenBins
}

/// Final classification of one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum HardnessClass {
    Generation(Generation),
    /// Not resolved within the final budget; τ is at least this many sweeps.
    UnresolvedAtLeast(f64),
}

/// Per-instance hardness report.
#[derive(Debug, Clone)]
pub struct HardnessReport {
    pub id: String,
    pub fit: Option<TwoExpFit>,
    pub figure_of_merit: f64,
    pub class: HardnessClass,
    pub rounds: u32,
    /// Total sweeps of the longest run that produced the fit.
    pub run_sweeps: u64,
}

impl HardnessReport {
    pub fn tau(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.tau)
    }

    pub fn generation(&self) -> Option<i32> {
        match self.class {
            HardnessClass::Generation(Generation::K(k)) => Some(k),
            _ => None,
        }
    }
}

pub fn class_label(class: &HardnessClass) -> String {
    match class {
        HardnessClass::Generation(Generation::K(k)) => k.to_string(),
        HardnessClass::Generation(Generation::BetweenBins) => "between".into(),
        HardnessClass::UnresolvedAtLeast(b) => format!(">={}", fmt_sig9(*b)),
    }
}

/// One row per instance: `id τ τ_sub residual f generation rounds`.
pub fn report_table(reports: &[HardnessReport]) -> String {
    let mut out = String::from("id\ttau\ttau_sub\tresidual\tf\tgeneration\trounds\n");
    for r in reports {
        let (tau, tau_sub, res) = match &r.fit {
            Some(f) => (fmt_sig9(f.tau), fmt_sig9(f.tau_sub), fmt_sig9(f.residual)),
            None => ("na".into(), "na".into(), "na".into()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            tau,
            tau_sub,
            res,
            fmt_sig9(r.figure_of_merit),
            class_label(&r.class),
            r.rounds
        ));
    }
    out
}

/// Escalation schedule: per-round elementary-step budgets and survivor
/// caps between rounds (`caps.len() == budgets.len() − 1`).
#[derive(Debug, Clone)]
pub struct EscalationSpec {
    pub budgets: Vec<u64>,
    pub caps: Vec<usize>,
    /// A fit is trusted only if the run is at least this many times τ.
    pub resolvable_factor: f64,
    pub sweeps_per_step: u32,
}

impl EscalationSpec {
    pub fn desk() -> EscalationSpec {
        EscalationSpec {
            budgets: DESK_ROUND_BUDGETS.to_vec(),
            caps: DESK_SURVIVOR_CAPS.to_vec(),
            resolvable_factor: 10.0,
            sweeps_per_step: 10,
        }
    }

    pub fn paper() -> EscalationSpec {
        EscalationSpec {
            budgets: PAPER_ROUND_BUDGETS.to_vec(),
            caps: PAPER_SURVIVOR_CAPS.to_vec(),
            resolvable_factor: 10.0,
            sweeps_per_step: 10,
        }
    }
}

/// Classifies a finished run: fit, resolvability gate, generation.
pub fn classify_run(id: &str, run: &RunOutput, resolvable_factor: f64, rounds: u32) -> HardnessReport {
    let run_sweeps = run.steps * run.sweeps_per_step as u64;
    let curve = correlation(&run.traces).ok();
    let fit = curve.as_ref().and_then(fit_two_exp);
    let f = figure_of_merit(&run.traces);
    let class = match &fit {
        Some(fit) if fit.tau * resolvable_factor <= run_sweeps as f64 => {
            HardnessClass::Generation(assign_generation(fit.tau))
        }
        _ => HardnessClass::UnresolvedAtLeast(run_sweeps as f64 / resolvable_factor),
    };
    HardnessReport { id: id.to_string(), fit, figure_of_merit: f, class, rounds, run_sweeps }
}

/// Multi-round protocol: run everything, keep the worst-trapped unresolved
/// instances (lowest figure of merit first) within the survivor caps, and
/// rerun them with ten-times-longer budgets. Instances still unresolved
/// after the final round stay marked `UnresolvedAtLeast`.
///
/// `runner(batch, steps, round)` produces one PT run per batch instance;
/// batches are at most `batch_size` instances so a multi-spin engine can
/// run them as lanes of one word. The engine is injected so tests can
/// drive the protocol with synthetic dynamics.
pub fn escalation_protocol<F>(
    instances: &[Instance],
    runner: F,
    spec: &EscalationSpec,
    batch_size: usize,
) -> Vec<HardnessReport>
where
    F: Fn(&[Instance], u64, usize) -> Vec<RunOutput> + Sync,
{
    assert_eq!(spec.caps.len() + 1, spec.budgets.len());
    let batch_size = batch_size.clamp(1, 64);
    let mut reports: Vec<Option<HardnessReport>> = vec![None; instances.len()];
    let mut active: Vec<usize> = (0..instances.len()).collect();
    for (round, &budget) in spec.budgets.iter().enumerate() {
        let batches: Vec<Vec<usize>> =
            active.chunks(batch_size).map(|c| c.to_vec()).collect();
        let new_reports: Vec<(usize, HardnessReport)> = batches
            .par_iter()
            .flat_map(|batch| {
                let insts: Vec<Instance> =
                    batch.iter().map(|&i| instances[i].clone()).collect();
                let runs = runner(&insts, budget, round);
                assert_eq!(runs.len(), insts.len());
                batch
                    .iter()
                    .zip(runs)
                    .map(|(&i, run)| {
                        (
                            i,
                            classify_run(
                                &instances[i].id,
                                &run,
                                spec.resolvable_factor,
                                round as u32 + 1,
                            ),
                        )
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut survivors = Vec::new();
        for (i, rep) in new_reports {
            let unresolved = matches!(rep.class, HardnessClass::UnresolvedAtLeast(_));
            reports[i] = Some(rep);
            if unresolved {
                survivors.push(i);
            }
        }
        if round == spec.budgets.len() - 1 {
            break;
        }
        // Worst figure of merit first.
        survivors.sort_by(|&a, &b| {
            let fa = reports[a].as_ref().unwrap().figure_of_merit;
            let fb = reports[b].as_ref().unwrap().figure_of_merit;
            fa.partial_cmp(&fb).unwrap().then(a.cmp(&b))
        });
        survivors.truncate(spec.caps[round]);
        active = survivors;
        if active.is_empty() {
            break;
        }
    }
    reports.into_iter().map(|r| r.unwrap()).collect()
}

/// Leave-one-copy-out jackknife of τ: returns (mean, standard error) over
/// the refits, when enough copies resolve.
pub fn jackknife_tau(traces: &[WalkTrace]) -> Option<(f64, f64)> {
    let n = traces.len();
    if n < 3 {
        return None;
    }
    let taus: Vec<f64> = (0..n)
        .into_par_iter()
        .filter_map(|skip| {
            let subset: Vec<WalkTrace> = traces
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, t)| t.clone())
                .collect();
            correlation(&subset).ok().as_ref().and_then(fit_two_exp).map(|f| f.tau)
        })
        .collect();
    if taus.len() < n {
        return None;
    }
    let m = taus.iter().sum::<f64>() / n as f64;
    let var = taus.iter().map(|t| (t - m) * (t - m)).sum::<f64>() * (n as f64 - 1.0) / n as f64;
    Some((m, var.sqrt()))
}

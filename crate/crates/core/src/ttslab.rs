//! Success-probability and time-to-solution analytics: aggregation of
//! anneal records, TTS, hardness-group medians, power-law scaling fits and
//! annealing-time windows.

use thiserror::Error;

use crate::util::{fmt_sig9, linfit};

#[derive(Debug, Error, PartialEq)]
pub enum TtsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty record set")]
    Empty,
}

/// One programming cycle's outcome at a given anneal duration.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealRecord {
    pub instance_id: String,
    /// Anneal duration in microseconds.
    pub t_ann_us: f64,
    pub cycle: u32,
    /// Attempts.
    pub x: u64,
    /// Hits.
    pub y: u64,
    /// Provenance: `simulated` or an importer-defined label.
    pub source: String,
}

impl AnnealRecord {
    pub fn validate(&self, line: usize) -> Result<(), TtsError> {
        if !(self.t_ann_us > 0.0) {
            return Err(TtsError::Parse { line, msg: "t_ann must be positive".into() });
        }
        if self.x == 0 {
            return Err(TtsError::Parse { line, msg: "X must be at least 1".into() });
        }
        if self.y > self.x {
            return Err(TtsError::Parse { line, msg: format!("Y ({}) > X ({})", self.y, self.x) });
        }
        Ok(())
    }
}

pub fn records_table(records: &[AnnealRecord]) -> String {
    let mut out = String::from("instance_id\tt_ann_us\tcycle\tX\tY\tsource\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.instance_id,
            fmt_sig9(r.t_ann_us),
            r.cycle,
            r.x,
            r.y,
            r.source
        ));
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<AnnealRecord>, TtsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || (i == 0 && t.starts_with("instance_id")) {
            continue;
        }
        let toks: Vec<&str> = t.split('\t').collect();
        if toks.len() != 6 {
            return Err(TtsError::Parse {
                line,
                msg: format!("expected 6 tab-separated fields, got {}", toks.len()),
            });
        }
        let rec = AnnealRecord {
            instance_id: toks[0].to_string(),
            t_ann_us: toks[1]
                .parse()
                .map_err(|_| TtsError::Parse { line, msg: "bad t_ann_us".into() })?,
            cycle: toks[2].parse().map_err(|_| TtsError::Parse { line, msg: "bad cycle".into() })?,
            x: toks[3].parse().map_err(|_| TtsError::Parse { line, msg: "bad X".into() })?,
            y: toks[4].parse().map_err(|_| TtsError::Parse { line, msg: "bad Y".into() })?,
            source: toks[5].to_string(),
        };
        rec.validate(line)?;
        out.push(rec);
    }
    Ok(out)
}

/// Pooled success probability for one (instance, t_ann) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub p: f64,
    /// Resolution floor `1/X_tot`: probabilities below it read as zero.
    pub floor: f64,
    pub below_resolution: bool,
    pub x_tot: u64,
    pub y_tot: u64,
}

/// `P = ΣY/ΣX` over the given records (order-free; splitting a record
/// leaves the result unchanged).
pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a AnnealRecord>) -> Option<Aggregate> {
    let mut x_tot = 0u64;
    let mut y_tot = 0u64;
    for r in records {
        x_tot += r.x;
        y_tot += r.y;
    }
    if x_tot == 0 {
        return None;
    }
    let p = y_tot as f64 / x_tot as f64;
    Some(Aggregate { p, floor: 1.0 / x_tot as f64, below_resolution: y_tot == 0, x_tot, y_tot })
}

/// Time to solution; `Infinite` encodes "below the resolution floor".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tts {
    Finite(f64),
    Infinite,
}

impl Tts {
    pub fn label(&self) -> String {
        match self {
            Tts::Finite(v) => fmt_sig9(*v),
            Tts::Infinite => "inf".into(),
        }
    }
}

/// `tts = t_ann / P`, infinite at P = 0.
pub fn tts(p: f64, t_ann_us: f64) -> Tts {
    assert!((0.0..=1.0).contains(&p));
    if p == 0.0 {
        Tts::Infinite
    } else {
        Tts::Finite(t_ann_us / p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TypicalTts {
    Finite(f64),
    /// The median itself is infinite: the group is not resolved.
    Unresolved,
}

/// Median over per-instance minimal TTS values, with infinities sorting
/// last. An even-count median touching an infinity reports `Unresolved`.
pub fn group_typical_tts(min_tts: &[Tts]) -> Result<TypicalTts, TtsError> {
    if min_tts.is_empty() {
        return Err(TtsError::Empty);
    }
    let mut v: Vec<Tts> = min_tts.to_vec();
    v.sort_by(|a, b| match (a, b) {
        (Tts::Finite(x), Tts::Finite(y)) => x.partial_cmp(y).unwrap(),
        (Tts::Finite(_), Tts::Infinite) => std::cmp::Ordering::Less,
        (Tts::Infinite, Tts::Finite(_)) => std::cmp::Ordering::Greater,
        (Tts::Infinite, Tts::Infinite) => std::cmp::Ordering::Equal,
    });
    let n = v.len();
    let typical = if n % 2 == 1 {
        v[n / 2]
    } else {
        match (v[n / 2 - 1], v[n / 2]) {
            (Tts::Finite(a), Tts::Finite(b)) => Tts::Finite((a + b) / 2.0),
            _ => Tts::Infinite,
        }
    };
    Ok(match typical {
        Tts::Finite(x) => TypicalTts::Finite(x),
        Tts::Infinite => TypicalTts::Unresolved,
    })
}

/// Power-law fit `y ~ x^exponent` by least squares on (ln x, ln y).
#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub stderr: f64,
    pub n_points: usize,
    /// Non-positive or non-finite points dropped before fitting.
    pub excluded: usize,
    pub tag: String,
}

pub fn fit_power_law(x: &[f64], y: &[f64], tag: &str) -> Option<ScalingFit> {
    assert_eq!(x.len(), y.len());
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut excluded = 0usize;
    for (&a, &b) in x.iter().zip(y) {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            lx.push(a.ln());
            ly.push(b.ln());
        } else {
            excluded += 1;
        }
    }
    if lx.len() < 3 {
        return None;
    }
    let (intercept, slope, se) = linfit(&lx, &ly)?;
    Some(ScalingFit {
        exponent: slope,
        amplitude: intercept.exp(),
        stderr: se,
        n_points: lx.len(),
        excluded,
        tag: tag.to_string(),
    })
}

pub fn fit_table(fits: &[ScalingFit]) -> String {
    let mut out = String::from("tag\texponent\tamplitude\tstderr\tn_points\texcluded\n");
    for f in fits {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            f.tag,
            fmt_sig9(f.exponent),
            fmt_sig9(f.amplitude),
            fmt_sig9(f.stderr),
            f.n_points,
            f.excluded
        ));
    }
    out
}

/// Annealing-time window: `20 ≤ t/10^k < 60` (low) or `60 ≤ t/10^k < 200`
/// (high) microseconds for k = 0, 1, 2; the 20 ms endpoint joins the
/// largest window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub k: u8,
    pub high: bool,
}

impl Window {
    pub fn label(&self) -> String {
        format!("k{}-{}", self.k, if self.high { "high" } else { "low" })
    }

    pub fn all() -> Vec<Window> {
        let mut v = Vec::new();
        for k in 0..3 {
            v.push(Window { k, high: false });
            v.push(Window { k, high: true });
        }
        v
    }
}

/// Window of an anneal time, `None` outside the hardware range
/// `[20 µs, 20 ms]`.
pub fn time_window(t_us: f64) -> Option<Window> {
    if !(20.0..=20_000.0).contains(&t_us) {
        return None;
    }
    if t_us == 20_000.0 {
        return Some(Window { k: 2, high: true });
    }
    for k in 0..3u8 {
        let scale = 10f64.powi(k as i32);
        let t = t_us / scale;
        if (20.0..60.0).contains(&t) {
            return Some(Window { k, high: false });
        }
        if (60.0..200.0).contains(&t) {
            return Some(Window { k, high: true });
        }
    }
    None
}

/// Groups records by window; returns the groups and the out-of-range
/// rejects (as warnings naming the offending times).
pub fn time_windows(records: &[AnnealRecord]) -> (Vec<(Window, Vec<&AnnealRecord>)>, Vec<String>) {
    let mut groups: Vec<(Window, Vec<&AnnealRecord>)> =
        Window::all().into_iter().map(|w| (w, Vec::new())).collect();
    let mut warnings = Vec::new();
    for r in records {
        match time_window(r.t_ann_us) {
            Some(w) => groups.iter_mut().find(|(g, _)| *g == w).unwrap().1.push(r),
            None => warnings.push(format!(
                "rejected record (instance {}, t_ann {} µs outside [20 µs, 20 ms])",
                r.instance_id, r.t_ann_us
            )),
        }
    }
    groups.retain(|(_, v)| !v.is_empty());
    (groups, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowStat {
    Resolved(f64),
    /// The requested quantile falls among below-resolution zeros.
    Unresolved,
}

/// Quantile of per-instance success probabilities within one
/// (generation, window) group. Entries are `(P, below_resolution)`; the
/// group is unresolved when the order statistics the quantile interpolates
/// between are both unresolved zeros.
pub fn window_percentile(values: &[(f64, bool)], q: f64) -> Option<WindowStat> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v: Vec<(f64, bool)> = values.to_vec();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = v.len();
    let h = (n - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    if v[lo].1 && v[hi].1 {
        return Some(WindowStat::Unresolved);
    }
    let value = if lo == hi {
        v[lo].0
    } else {
        v[lo].0 + (h - lo as f64) * (v[hi].0 - v[lo].0)
    };
    Some(WindowStat::Resolved(value))
}

/// Per-(generation, window) percentile table rows:
/// `generation window n percentile_or_unresolved`.
pub fn percentile_by_generation(
    data: &[(i32, Window, f64, bool)],
    q: f64,
) -> Vec<(i32, Window, usize, WindowStat)> {
    let mut keys: Vec<(i32, Window)> = data.iter().map(|r| (r.0, r.1)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(g, w)| {
            let vals: Vec<(f64, bool)> = data
                .iter()
                .filter(|r| r.0 == g && r.1 == w)
                .map(|r| (r.2, r.3))
                .collect();
            let stat = window_percentile(&vals, q).unwrap();
            (g, w, vals.len(), stat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, x: u64, y: u64) -> AnnealRecord {
        AnnealRecord {
            instance_id: "i0".into(),
            t_ann_us: t,
            cycle: 0,
            x,
            y,
            source: "simulated".into(),
        }
    }

    #[test]
    fn aggregate_cases() {
        let a = aggregate(&[rec(20.0, 49_500, 0)]).unwrap();
        assert_eq!(a.p, 0.0);
        assert!(a.below_resolution);
        assert!((a.floor - 2.0202020e-5).abs() < 1e-11);
        let b = aggregate(&[rec(20_000.0, 49, 10)]).unwrap();
        assert!((b.floor - 1.0 / 49.0).abs() < 1e-15);
        let c = aggregate(&[rec(20.0, 100, 100)]).unwrap();
        assert_eq!(c.p, 1.0);
    }

    #[test]
    fn tts_cases() {
        assert_eq!(tts(0.5, 20.0), Tts::Finite(40.0));
        assert_eq!(tts(1.0, 20.0), Tts::Finite(20.0));
        assert_eq!(tts(0.0, 20.0), Tts::Infinite);
    }

    #[test]
    fn typical_tts_with_infinities() {
        let one = group_typical_tts(&[Tts::Finite(55.0)]).unwrap();
        assert_eq!(one, TypicalTts::Finite(55.0));
        let m =
            group_typical_tts(&[Tts::Finite(40.0), Tts::Finite(100.0), Tts::Infinite]).unwrap();
        assert_eq!(m, TypicalTts::Finite(100.0));
        // Permutation invariance.
        let m2 =
            group_typical_tts(&[Tts::Infinite, Tts::Finite(100.0), Tts::Finite(40.0)]).unwrap();
        assert_eq!(m, m2);
        // Median touching infinity is unresolved.
        let u = group_typical_tts(&[Tts::Finite(40.0), Tts::Infinite]).unwrap();
        assert_eq!(u, TypicalTts::Unresolved);
        assert_eq!(group_typical_tts(&[]), Err(TtsError::Empty));
    }

    #[test]
    fn power_law_recovery() {
        let f = fit_power_law(&[1e3, 1e4, 1e5], &[1e3, 1e4, 1e5], "pt").unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12);
        // p doubling per decade of t_ann: θ = log10(2).
        let t: Vec<f64> = (0..5).map(|k| 20.0 * 10f64.powi(k)).collect();
        let p: Vec<f64> = (0..5).map(|k| 1e-4 * 2f64.powi(k)).collect();
        let f = fit_power_law(&t, &p, "theta").unwrap();
        assert!((f.exponent - std::f64::consts::LN_2 / std::f64::consts::LN_10).abs() < 1e-9);
        // Planted amplitude and exponent.
        let x: Vec<f64> = (1..8).map(|k| 10f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 3.0 * v.powf(0.3)).collect();
        let f = fit_power_law(&x, &y, "hfs").unwrap();
        assert!((f.exponent - 0.3).abs() < 1e-9);
        assert!((f.amplitude - 3.0).abs() < 1e-6);
        assert!(f.stderr < 1e-9);
        // Non-positive points are excluded, not fatal.
        let f = fit_power_law(&[1.0, 2.0, 4.0, 8.0], &[1.0, 0.0, 4.0, 8.0], "x").unwrap();
        assert_eq!(f.excluded, 1);
        assert_eq!(f.n_points, 3);
    }

    #[test]
    fn window_assignment() {
        assert_eq!(time_window(20.0), Some(Window { k: 0, high: false }));
        assert_eq!(time_window(60.0), Some(Window { k: 0, high: true }));
        assert_eq!(time_window(200.0), Some(Window { k: 1, high: false }));
        assert_eq!(time_window(20_000.0), Some(Window { k: 2, high: true }));
        assert_eq!(time_window(19.0), None);
        assert_eq!(time_window(20_001.0), None);
    }

    #[test]
    fn windows_report_rejects() {
        let records = vec![rec(20.0, 5, 1), rec(5.0, 5, 1), rec(70.0, 5, 1)];
        let (groups, warnings) = time_windows(&records);
        assert_eq!(groups.iter().map(|(_, v)| v.len()).sum::<usize>(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("5 µs"));
    }

    #[test]
    fn percentile_groups() {
        // All below resolution: unresolved at the median.
        let zeros = vec![(0.0, true); 6];
        assert_eq!(window_percentile(&zeros, 0.5), Some(WindowStat::Unresolved));
        // Single value.
        assert_eq!(
            window_percentile(&[(0.25, false)], 0.8),
            Some(WindowStat::Resolved(0.25))
        );
        // More than half zero: median unresolved, 80th percentile fine.
        let mixed: Vec<(f64, bool)> = (0..10)
            .map(|i| if i < 6 { (0.0, true) } else { (0.1 * i as f64, false) })
            .collect();
        assert_eq!(window_percentile(&mixed, 0.5), Some(WindowStat::Unresolved));
        match window_percentile(&mixed, 0.8).unwrap() {
            WindowStat::Resolved(v) => {
                // Sort oracle: values 0,0,0,0,0,0,0.6,0.7,0.8,0.9; h = 7.2.
                assert!((v - (0.7 + 0.2 * 0.1)).abs() < 1e-12);
            }
            WindowStat::Unresolved => panic!("80th percentile should resolve"),
        }
    }

    #[test]
    fn record_roundtrip_and_validation() {
        let records = vec![rec(20.0, 100, 3), rec(200.0, 10, 0)];
        let text = records_table(&records);
        let back = parse_records(&text).unwrap();
        assert_eq!(back, records);
        let bad = "instance_id\tt_ann_us\tcycle\tX\tY\tsource\ni0\t20\t0\t5\t9\tsim\n";
        let err = parse_records(bad).unwrap_err();
        assert_eq!(err, TtsError::Parse { line: 2, msg: "Y (9) > X (5)".into() });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregate_split_invariance(x in 1u64..10_000, cut in 0u64..10_000, yfrac in 0.0f64..=1.0) {
            let y = (x as f64 * yfrac) as u64;
            let full = aggregate(&[rec(20.0, x, y)]).unwrap();
            let x1 = cut % x;
            if x1 > 0 && x1 < x {
                let y1 = y.min(x1);
                let split = vec![rec(20.0, x1, y1), rec(20.0, x - x1, y - y1)];
                let agg = aggregate(&split).unwrap();
                prop_assert_eq!(full.p, agg.p);
                prop_assert_eq!(full.floor, agg.floor);
            }
        }

        #[test]
        fn window_partition(t in 20.0f64..=20_000.0) {
            // Every in-range time lands in exactly one window.
            let w = time_window(t);
            prop_assert!(w.is_some());
            let mut count = 0;
            for k in 0..3u8 {
                for high in [false, true] {
                    let scale = 10f64.powi(k as i32);
                    let lo = if high { 60.0 } else { 20.0 } * scale;
                    let hi = if high { 200.0 } else { 60.0 } * scale;
                    let inside = t >= lo && t < hi || (t == 20_000.0 && k == 2 && high);
                    if inside {
                        count += 1;
                        prop_assert_eq!(w, Some(Window { k, high }));
                    }
                }
            }
            prop_assert_eq!(count, 1);
        }

        #[test]
        fn tts_monotone_in_p(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, t in 1.0f64..1e5) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            match (tts(lo, t), tts(hi, t)) {
                (Tts::Infinite, _) => {}
                (Tts::Finite(a), Tts::Finite(b)) => prop_assert!(a >= b),
                (Tts::Finite(_), Tts::Infinite) => prop_assert!(false, "monotonicity violated"),
            }
        }
    }
}

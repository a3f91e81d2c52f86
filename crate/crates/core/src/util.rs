//! Small shared helpers: deterministic float formatting, quantiles, medians.

/// Formats a float with 9 significant digits, deterministically.
///
/// All emitted tables go through this so that output files are stable byte
/// streams for fixed inputs.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..9).contains(&mag) {
        // Fixed-point with 9 significant digits.
        let decimals = (8 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{x:.8e}")
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0');
        let t = t.strip_suffix('.').unwrap_or(t);
        t.to_string()
    } else {
        s.to_string()
    }
}

/// Formats a float so that parsing the text recovers the identical bits.
///
/// Integers print without a fractional part; everything else uses Rust's
/// shortest round-trip representation.
pub fn fmt_roundtrip(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" convention). `q` must lie in `[0, 1]`; `values` need not be
/// sorted.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(quantile_sorted(&v, q))
}

/// Same as [`quantile`] but assumes `sorted` is already ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Median via [`quantile`].
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Ordinary least squares of `y = a + b x`; returns `(a, b, stderr_b)`.
///
/// The slope standard error comes from the usual residual estimate; `None`
/// if fewer than two distinct x values are supplied.
pub fn linfit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let r = v - (a + b * u);
            r * r
        })
        .sum();
    let se = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((a, b, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_is_stable() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
        assert_eq!(fmt_sig9(1.23456789e12), "1.23456789e12");
    }

    #[test]
    fn roundtrip_format_parses_back() {
        for &x in &[1.0, -1.0, 0.5, 1.0 + 1e-13, -0.047, 1e300, 3.14159] {
            let s = fmt_roundtrip(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        // h = 3*0.8 = 2.4 -> 3 + 0.4
        assert!((quantile(&v, 0.8).unwrap() - 3.4).abs() < 1e-12);
    }

    #[test]
    fn linfit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (a, b, se) = linfit(&x, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        assert!((b - 2.0).abs() < 1e-12);
        assert!(se.abs() < 1e-12);
    }
}

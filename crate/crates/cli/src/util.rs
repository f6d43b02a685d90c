//! Output formatting shared by the commands.

/// Formats with at most 6 significant digits, decimal where the magnitude
/// allows and scientific otherwise; trailing zeros are trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{x:.5e}")
    }
}

/// Space-separated permutation entries, the `pi = …` payload.
pub fn fmt_perm(pi: &[usize]) -> String {
    pi.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

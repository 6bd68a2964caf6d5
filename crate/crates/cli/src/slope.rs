//! Least-squares convergence rates.

/// Slope of `log₂ e` against `log₂ h` over indices `lo..=hi`.
pub fn fit_slope(h: &[f64], e: &[f64], lo: usize, hi: usize) -> Option<f64> {
    if h.len() != e.len() || hi >= h.len() || hi <= lo {
        return None;
    }
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&i| h[i] > 0.0 && e[i] > 0.0)
        .map(|i| (h[i].log2(), e[i].log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Inclusive index window, clamped to a list of length `len`.
pub fn clamp_window(w: (usize, usize), len: usize) -> (usize, usize) {
    let hi = w.1.min(len.saturating_sub(1));
    (w.0.min(hi), hi)
}

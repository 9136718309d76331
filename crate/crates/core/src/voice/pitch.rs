//! Fundamental-frequency estimation by normalized autocorrelation.

pub const MIN_F0_HZ: f64 = 60.0;
pub const MAX_F0_HZ: f64 = 400.0;

/// Estimate F0 over the whole buffer. Returns `None` for silent or aperiodic
/// input.
///
/// The normalized cross-correlation is evaluated for every lag in the
/// `[MIN_F0_HZ, MAX_F0_HZ]` range; the shortest lag whose peak reaches 90% of
/// the global maximum wins (this avoids picking a multiple of the period),
/// and is refined by parabolic interpolation.
pub fn estimate_f0(samples: &[f32], sample_rate: u32) -> Option<f64> {
    let rate = sample_rate as f64;
    let min_lag = (rate / MAX_F0_HZ).floor().max(2.0) as usize;
    let max_lag = (rate / MIN_F0_HZ).ceil() as usize;
    if samples.len() < 2 * max_lag + 2 {
        return None;
    }
    let x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let n = x.len();

    // prefix sums of squares give the energies of both overlap windows
    let mut energy = Vec::with_capacity(n + 1);
    energy.push(0.0);
    for v in &x {
        let last = *energy.last().unwrap();
        energy.push(last + v * v);
    }

    let nccf_at = |lag: usize| -> f64 {
        let m = n - lag;
        let dot: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = energy[m];
        let e1 = energy[n] - energy[lag];
        if e0 <= 0.0 || e1 <= 0.0 {
            0.0
        } else {
            dot / (e0 * e1).sqrt()
        }
    };

    let nccf: Vec<f64> = (min_lag - 1..=max_lag + 1).map(nccf_at).collect();
    let at = |lag: usize| nccf[lag + 1 - min_lag];

    let best = (min_lag..=max_lag).map(at).fold(f64::MIN, f64::max);
    if best < 0.3 {
        return None;
    }
    let lag = (min_lag..=max_lag)
        .find(|&l| at(l) >= 0.9 * best && at(l) >= at(l - 1) && at(l) >= at(l + 1))?;

    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(rate / (lag as f64 + shift))
}

/// Integrated autocorrelation time of several chains of one scalar quantity.
///
/// Autocovariances are averaged over chains (each centred on its own mean)
/// and summed with Sokal's adaptive window: the smallest `M` with
/// `M ≥ c · τ(M)`, `c = 5`.
pub fn autocorrelation_time(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 || chains.is_empty() {
        return f64::NAN;
    }
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let m = c[..n].iter().sum::<f64>() / n as f64;
            c[..n].iter().map(|v| v - m).collect()
        })
        .collect();
    let autocov = |lag: usize| -> f64 {
        centred
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / centred.len() as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n {
        tau += 2.0 * autocov(lag) / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0 / n as f64)
}

/// Split-chain potential scale reduction factor. Each chain is halved, so a
/// single trending chain is also flagged.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if n < 2 {
        return f64::NAN;
    }
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..n], &c[n..2 * n]]).collect();
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

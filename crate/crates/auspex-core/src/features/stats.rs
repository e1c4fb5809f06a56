//! Statistical primitives shared by the feature categories. Degenerate
//! inputs (constant series, empty overlaps) follow one convention: any
//! 0/0 yields 0.

use rustfft::{num_complex::Complex64, FftPlanner};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mu = mean(x);
    x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Linear-interpolation quantile over the sorted sample (the `n - 1` basis).
pub fn quantile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Standardized third moment; 0 for constant input.
pub fn skewness(x: &[f64]) -> f64 {
    let mu = mean(x);
    let m2 = variance(x);
    if m2 == 0.0 || x.is_empty() {
        return 0.0;
    }
    let m3 = x.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / x.len() as f64;
    m3 / m2.powf(1.5)
}

/// Excess kurtosis; 0 for constant input.
pub fn kurtosis(x: &[f64]) -> f64 {
    let mu = mean(x);
    let m2 = variance(x);
    if m2 == 0.0 || x.is_empty() {
        return 0.0;
    }
    let m4 = x.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / x.len() as f64;
    m4 / (m2 * m2) - 3.0
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Autocorrelation at lags `0..=max_lag` with the full-series variance in
/// the denominator. Constant series give zeros (lag 0 included).
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mu = mean(x);
    let denom: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        if denom == 0.0 || lag >= n {
            out.push(0.0);
            continue;
        }
        let num: f64 = (0..n - lag).map(|i| (x[i] - mu) * (x[i + lag] - mu)).sum();
        out.push(num / denom);
    }
    out
}

/// Partial autocorrelation at lags `1..=max_lag` by Levinson–Durbin
/// recursion over the autocorrelation sequence.
pub fn pacf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let r = acf(x, max_lag);
    let mut out = Vec::with_capacity(max_lag);
    if max_lag == 0 {
        return out;
    }
    if r[0] == 0.0 {
        return vec![0.0; max_lag];
    }
    let mut phi_prev: Vec<f64> = Vec::new(); // phi_{k-1, 1..k-1}
    for k in 1..=max_lag {
        let num = r[k]
            - phi_prev
                .iter()
                .enumerate()
                .map(|(j, p)| p * r[k - 1 - j])
                .sum::<f64>();
        let den = 1.0
            - phi_prev
                .iter()
                .enumerate()
                .map(|(j, p)| p * r[j + 1])
                .sum::<f64>();
        if den == 0.0 {
            out.resize(max_lag, 0.0);
            return out;
        }
        let phi_kk = num / den;
        let mut phi: Vec<f64> = Vec::with_capacity(k);
        for j in 0..k - 1 {
            phi.push(phi_prev[j] - phi_kk * phi_prev[k - 2 - j]);
        }
        phi.push(phi_kk);
        out.push(phi_kk);
        phi_prev = phi;
    }
    out
}

/// Least-squares line fit over indices `0..n`: slope, intercept and the
/// standard error of the slope estimate (0 when fewer than three points
/// or an exact fit).
pub fn linregress(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    if n < 2 {
        return (0.0, mean(x), 0.0);
    }
    let ti = (n as f64 - 1.0) / 2.0;
    let xbar = mean(x);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, v) in x.iter().enumerate() {
        let d = i as f64 - ti;
        sxx += d * d;
        sxy += d * (v - xbar);
    }
    let slope = sxy / sxx;
    let intercept = xbar - slope * ti;
    if n < 3 {
        return (slope, intercept, 0.0);
    }
    let sse: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v - (intercept + slope * i as f64)).powi(2))
        .sum();
    let stderr = (sse.max(0.0) / (n as f64 - 2.0) / sxx).sqrt();
    (slope, intercept, stderr)
}

/// Unnormalized forward DFT via FFT.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.len() > 1 {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

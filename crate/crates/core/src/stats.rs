//! Monte-Carlo reductions with a fixed summation order.

use rayon::prelude::*;

use crate::error::Result;

/// Paths per chunk; chunk sums are combined in index order.
pub const CHUNK: usize = 256;

/// Mean and standard error of each coordinate of `f(i)` over `i < n`.
///
/// Results do not depend on the number of threads.
pub fn mean_stderr_by<F>(n: usize, width: usize, f: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).collect();
    let partial: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&c| {
            let mut s = vec![0.0; width];
            let mut q = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(i)?;
                for (j, y) in v.iter().enumerate() {
                    s[j] += y;
                    q[j] += y * y;
                }
            }
            Ok((s, q))
        })
        .collect();
    let mut s = vec![0.0; width];
    let mut q = vec![0.0; width];
    for p in partial {
        let (ps, pq) = p?;
        for j in 0..width {
            s[j] += ps[j];
            q[j] += pq[j];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = s.iter().map(|v| v / nf).collect();
    let se = (0..width)
        .map(|j| {
            if n < 2 {
                return 0.0;
            }
            let var = ((q[j] - nf * mean[j] * mean[j]) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    Ok((mean, se))
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `mean / stderr`, zero when both vanish.
pub fn z_score(mean: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        mean / stderr
    } else if mean.abs() < 1e-300 {
        0.0
    } else {
        f64::INFINITY.copysign(mean)
    }
}

/// Welch z statistic for the difference of two sample means.
pub fn two_sample_z(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_stderr(a);
    let (mb, sb) = mean_stderr(b);
    z_score(ma - mb, (sa * sa + sb * sb).sqrt())
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    d
}

/// `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

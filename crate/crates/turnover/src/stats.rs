//! Small statistics helpers shared by the influence validation suites and reports.

use crate::rng::SplitMix64;

/// Average ranks (1-based), ties get the mean of their rank range.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of the rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample skewness g1 = m3 / m2^(3/2).
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Rank AUC: probability that a positive's score exceeds a negative's, ties at 1/2
/// (Mann-Whitney U through average ranks).
pub fn rank_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    let np = positives.len();
    let nn = negatives.len();
    if np == 0 || nn == 0 {
        return None;
    }
    let mut all = Vec::with_capacity(np + nn);
    all.extend_from_slice(positives);
    all.extend_from_slice(negatives);
    let r = ranks(&all);
    let rank_sum_pos: f64 = r[..np].iter().sum();
    let u = rank_sum_pos - (np as f64 * (np as f64 + 1.0)) / 2.0;
    Some(u / (np as f64 * nn as f64))
}

/// Seeded bootstrap percentile CI for mean(a) - mean(b).
pub fn bootstrap_mean_diff_ci(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    if a.is_empty() || b.is_empty() || resamples < 10 {
        return None;
    }
    let mut rng = SplitMix64::new(seed);
    let mut diffs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let ma = resample_mean(a, &mut rng);
        let mb = resample_mean(b, &mut rng);
        diffs.push(ma - mb);
    }
    diffs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let alpha = (1.0 - confidence) / 2.0;
    let lo_idx = ((resamples as f64) * alpha).floor() as usize;
    let hi_idx = (((resamples as f64) * (1.0 - alpha)).ceil() as usize).min(resamples) - 1;
    Some((diffs[lo_idx], diffs[hi_idx]))
}

fn resample_mean(xs: &[f64], rng: &mut SplitMix64) -> f64 {
    let n = xs.len();
    let mut sum = 0.0;
    for _ in 0..n {
        sum += xs[rng.next_below(n as u64) as usize];
    }
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_perfect_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 1.0, 2.0, 3.0];
        let b = [5.0, 5.0, 6.0, 7.0];
        let r = spearman(&a, &b).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn auc_separated_is_one() {
        let pos = [5.0, 6.0, 7.0];
        let neg = [1.0, 2.0, 3.0];
        assert!((rank_auc(&pos, &neg).unwrap() - 1.0).abs() < 1e-12);
        assert!((rank_auc(&neg, &pos).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_identical_is_half() {
        let pos = [1.0, 1.0];
        let neg = [1.0, 1.0, 1.0];
        assert!((rank_auc(&pos, &neg).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn skewness_sign() {
        let right = [0.0, 0.0, 0.1, 0.1, 0.2, 5.0];
        assert!(skewness(&right) > 0.0);
        let left = [-5.0, 0.0, 0.1, 0.1, 0.2, 0.2];
        assert!(skewness(&left) < 0.0);
    }

    #[test]
    fn bootstrap_separates_clear_difference() {
        let a: Vec<f64> = (0..200).map(|i| 2.0 + (i % 7) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..200).map(|i| 1.0 + (i % 5) as f64 * 0.01).collect();
        let (lo, hi) = bootstrap_mean_diff_ci(&a, &b, 500, 0.95, 42).unwrap();
        assert!(lo > 0.0, "lo {lo}");
        assert!(hi > lo);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

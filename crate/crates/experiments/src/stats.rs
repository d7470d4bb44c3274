//! Summary statistics over repetitions, generic over the float type.

use num_traits::Float;

/// Median of `xs`; the mean of the two middle values for even lengths.
/// `None` when empty or when any value is NaN.
pub fn median<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() || xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered above"));
    let n = v.len();
    let two = T::one() + T::one();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / two })
}

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::from(xs.len())?)
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn std_dev<T: Float>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    if xs.len() == 1 {
        return Some(T::zero());
    }
    let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    Some((ss / T::from(xs.len() - 1)?).sqrt())
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks<T: Float>(xs: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 averaged.
        let avg = T::from(i + j + 2).unwrap_or_else(T::zero) / (T::one() + T::one());
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson<T: Float>(xs: &[T], ys: &[T]) -> Option<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs)?, mean(ys)?);
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
        syy = syy + (y - my) * (y - my);
    }
    let denom = (sxx * syy).sqrt();
    (denom > T::zero()).then(|| sxy / denom)
}

/// Spearman rank correlation: Pearson over tie-averaged ranks.
pub fn spearman<T: Float>(xs: &[T], ys: &[T]) -> Option<T> {
    pearson(&ranks(xs), &ranks(ys))
}

/// Median and sample standard deviation of a set of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<T> {
    pub count: usize,
    pub median: T,
    pub std_dev: T,
}

impl<T: Float> Summary<T> {
    pub fn of(xs: &[T]) -> Option<Self> {
        Some(Self { count: xs.len(), median: median(xs)?, std_dev: std_dev(xs)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0f32, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median::<f64>(&[]), None);
        assert_eq!(median(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn std_dev_matches_hand_value() {
        // Mean 5, squared deviations sum to 32, n - 1 = 7.
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let sd = std_dev(&xs).unwrap();
        assert!((sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(std_dev(&[1.5]), Some(0.0));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 8.0, 27.0, 64.0, 125.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let r: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &r).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]), None);
    }
}

use crate::scalar::Scalar;

use super::MetricsError;

/// Two aligned, equal-length series of at least two finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples<T> {
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Scalar> PairedSamples<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>) -> Result<Self, MetricsError> {
        if xs.len() != ys.len() {
            return Err(MetricsError::InvalidSamples(format!(
                "series lengths differ ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(MetricsError::InvalidSamples(
                "need at least two paired observations".into(),
            ));
        }
        if xs.iter().chain(&ys).any(|v| v.is_nan()) {
            return Err(MetricsError::InvalidSamples("NaN in series".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = T::from_usize(start + end + 1).expect("rank fits") / T::lit(2.0);
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

fn product_moment<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, MetricsError> {
    let n = T::from_usize(xs.len()).expect("length fits");
    let mean_x = xs.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mean_y = ys.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(MetricsError::DegenerateSeries);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Pearson product-moment correlation.
pub fn pearson_r<T: Scalar>(s: &PairedSamples<T>) -> Result<T, MetricsError> {
    product_moment(s.xs(), s.ys())
}

/// Spearman rank correlation using average ranks for ties.
pub fn spearman_rho<T: Scalar>(s: &PairedSamples<T>) -> Result<T, MetricsError> {
    product_moment(&average_ranks(s.xs()), &average_ranks(s.ys()))
}

/// Kendall's tau-b.
pub fn kendall_tau<T: Scalar>(s: &PairedSamples<T>) -> Result<T, MetricsError> {
    let (xs, ys) = (s.xs(), s.ys());
    let n = xs.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("no NaN");
            let dy = ys[i].partial_cmp(&ys[j]).expect("no NaN");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (Equal, _) => tied_x += 1,
                (_, Equal) => tied_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = ((pairs - tied_x) as f64 * (pairs - tied_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(MetricsError::DegenerateSeries);
    }
    let tau = T::lit((concordant - discordant) as f64 / denom);
    Ok(tau.max(-T::one()).min(T::one()))
}

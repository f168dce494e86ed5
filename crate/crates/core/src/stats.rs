//! Small descriptive statistics used by estimators and the harness.

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Variance of `values`: population convention (divide by `n`) unless
/// `bessel` is set, in which case divide by `n − 1`.
pub fn variance(values: &[f64], bessel: bool) -> f64 {
    let n = values.len();
    if n == 0 || (bessel && n < 2) {
        return f64::NAN;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    ss / if bessel { (n - 1) as f64 } else { n as f64 }
}

/// Mean, standard deviation (n − 1) and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let m = mean(values);
    let sd = if n > 1 { variance(values, true).sqrt() } else { 0.0 };
    Summary {
        n,
        mean: m,
        sd,
        se: if n > 0 { sd / (n as f64).sqrt() } else { f64::NAN },
    }
}

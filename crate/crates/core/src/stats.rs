//! Small sample statistics: Welch normal-approximation contrasts, rank
//! correlation and the sign test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Accumulated as offsets from the first value, so constant input gives
/// that constant back exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else {
        return f64::NAN;
    };
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator; zero for a single value.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// A difference estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn ci95_halfwidth(&self) -> f64 {
        Z95 * self.se
    }

    /// Two-sided p-value for `value == 0` under the normal approximation.
    pub fn p_value(&self) -> f64 {
        two_sided_p(self.value, self.se)
    }

    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            se: self.se.hypot(other.se),
        }
    }

    pub fn covers_zero(&self) -> bool {
        self.value.abs() <= self.ci95_halfwidth()
    }
}

/// Welch difference of means `mean(a) - mean(b)`.
pub fn welch(a: &[f64], b: &[f64]) -> Estimate {
    Estimate {
        value: mean(a) - mean(b),
        se: (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt(),
    }
}

pub fn two_sided_p(value: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if value == 0.0 { 1.0 } else { 0.0 };
    }
    let n = Normal::standard();
    2.0 * n.sf((value / se).abs())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation. NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    pearson(&average_ranks(a), &average_ranks(b))
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips.
pub fn sign_test_p(wins: u64, trials: u64) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials).expect("p = 0.5 is valid");
    b.sf(wins - 1)
}

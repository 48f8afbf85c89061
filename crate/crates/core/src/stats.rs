//! Summation, moments and the Welch two-sample t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Exact floating-point accumulator (Shewchuk partials, as in `math.fsum`).
///
/// `value()` is the correctly rounded sum of everything added, so the result
/// depends only on the multiset of inputs, never on their order.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction across the remaining partial.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

pub fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    exact_sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance (`n - 1` denominator); 0 for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    exact_sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64
}

/// Population standard deviation (`n` denominator).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (exact_sum(xs.iter().map(|x| (x - m) * (x - m))) / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Upper tail `P[T_df > t]` of Student's t.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df.max(f64::MIN_POSITIVE)).expect("valid t parameters");
    // cdf(-t) keeps full relative precision deep in the tail.
    dist.cdf(-t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub mean_a: f64,
    pub mean_b: f64,
    /// `(mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b)`.
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// One-sided `P[T > t]`, i.e. evidence that `mean_a > mean_b`.
    pub p_greater: f64,
    /// Both samples had zero variance.
    pub degenerate: bool,
}

/// One-sided Welch test of `H0: mean_a <= mean_b` against `mean_a > mean_b`.
///
/// With zero variance in both samples the statistic is 0 (equal means, and
/// then `p = 0.5`) or `+-inf`, and the result is flagged `degenerate`.
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> WelchTest {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let diff = ma - mb;
        let (t, p) = if diff == 0.0 {
            (0.0, 0.5)
        } else if diff > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };
        return WelchTest {
            mean_a: ma,
            mean_b: mb,
            t,
            df: na + nb - 2.0,
            p_greater: p,
            degenerate: true,
        };
    }
    let t = (ma - mb) / se2.sqrt();
    let mut denom = 0.0;
    if sa > 0.0 {
        denom += sa * sa / (na - 1.0);
    }
    if sb > 0.0 {
        denom += sb * sb / (nb - 1.0);
    }
    let df = se2 * se2 / denom;
    WelchTest {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p_greater: student_t_sf(t, df),
        degenerate: false,
    }
}

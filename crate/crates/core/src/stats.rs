//! Hypothesis tests: independent two-sample t-test with Cohen's d, one-way
//! ANOVA and Pearson correlation.
//!
//! p-values come from the regularized incomplete beta function, evaluated
//! with a Lentz continued fraction and a Lanczos log-gamma.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{self, CompensatedSum};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{what} needs at least {needed} observations, got {found}")]
    TooFewSamples { what: &'static str, needed: usize, found: usize },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("test is undefined: every sample has zero variance")]
    ZeroVariance,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for a constant series")]
    ConstantSeries,
    #[error("non-finite observation")]
    NonFinite,
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    WelchT,
    StudentT,
    AnovaOneway,
    Pearson,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::WelchT => "welch-t",
            TestKind::StudentT => "student-t",
            TestKind::AnovaOneway => "anova-oneway",
            TestKind::Pearson => "pearson-r",
        }
    }
}

/// Outcome of one test invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult<T> {
    pub test: TestKind,
    /// t, F or r.
    pub statistic: T,
    /// Degrees of freedom (numerator df for ANOVA).
    pub df: T,
    /// Denominator degrees of freedom, ANOVA only.
    pub df2: Option<T>,
    pub p_value: T,
    /// Cohen's d for t-tests, η² for ANOVA.
    pub effect_size: Option<T>,
    pub sample_sizes: Vec<usize>,
}

/// Variance assumption of the two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestKind {
    #[default]
    Welch,
    /// Pooled-variance Student test.
    Student,
}

fn check_finite<T: Scalar>(xs: &[T]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Sum of squared deviations from the mean.
fn sum_sq_dev<T: Scalar>(xs: &[T], mean: T) -> T {
    numeric::sum(xs.iter().map(|&x| (x - mean) * (x - mean)))
}

pub fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    sum_sq_dev(xs, numeric::mean(xs)) / T::from_usize_lossy(xs.len() - 1)
}

/// Welch's unequal-variance t-test, two-sided, with pooled-SD Cohen's d.
pub fn ttest_ind<T: Scalar>(a: &[T], b: &[T]) -> Result<StatResult<T>> {
    ttest_ind_with(a, b, TTestKind::Welch)
}

pub fn ttest_ind_with<T: Scalar>(a: &[T], b: &[T], kind: TTestKind) -> Result<StatResult<T>> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewSamples { what: "t-test sample", needed: 2, found: s.len() });
        }
        check_finite(s)?;
    }
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (ma, mb) = (numeric::mean(a), numeric::mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == T::zero() && vb == T::zero() {
        return Err(StatsError::ZeroVariance);
    }
    let one = T::one();
    let pooled_var = ((na - one) * va + (nb - one) * vb) / (na + nb - T::c(2.0));
    let diff = ma - mb;
    let (t, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (na - one) + qb * qb / (nb - one));
            (diff / se2.sqrt(), df)
        }
        TTestKind::Student => {
            let se2 = pooled_var * (one / na + one / nb);
            (diff / se2.sqrt(), na + nb - T::c(2.0))
        }
    };
    Ok(StatResult {
        test: match kind {
            TTestKind::Welch => TestKind::WelchT,
            TTestKind::Student => TestKind::StudentT,
        },
        statistic: t,
        df,
        df2: None,
        p_value: t_two_sided_p(t, df),
        effect_size: Some(diff / pooled_var.sqrt()),
        sample_sizes: vec![a.len(), b.len()],
    })
}

/// One-way ANOVA across `groups`; effect size is η² = SS_between / SS_total.
pub fn anova_oneway<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<StatResult<T>> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for g in groups {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(StatsError::TooFewSamples { what: "ANOVA group", needed: 2, found: g.len() });
        }
        check_finite(g)?;
    }
    let n_total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = numeric::mean(&groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect::<Vec<_>>());
    let mut ss_between = CompensatedSum::new();
    let mut ss_within = CompensatedSum::new();
    for g in groups {
        let g = g.as_ref();
        let m = numeric::mean(g);
        ss_between.add(T::from_usize_lossy(g.len()) * (m - grand) * (m - grand));
        ss_within.add(sum_sq_dev(g, m));
    }
    let (ssb, ssw) = (ss_between.value(), ss_within.value());
    let d1 = T::from_usize_lossy(groups.len() - 1);
    let d2 = T::from_usize_lossy(n_total - groups.len());
    let (f, p) = if ssw == T::zero() {
        if ssb == T::zero() {
            return Err(StatsError::ZeroVariance);
        }
        (T::infinity(), T::zero())
    } else {
        let f = (ssb / d1) / (ssw / d2);
        (f, f_survival(f, d1, d2))
    };
    Ok(StatResult {
        test: TestKind::AnovaOneway,
        statistic: f,
        df: d1,
        df2: Some(d2),
        p_value: p,
        effect_size: Some(ssb / (ssb + ssw)),
        sample_sizes: groups.iter().map(|g| g.as_ref().len()).collect(),
    })
}

/// Sample correlation coefficient with a two-sided p-value (df = n - 2).
///
/// r is evaluated from unit-normalized deviation vectors `u`, `w` as
/// `1 - |u - w|²/2` (r ≥ 0) or `|u + w|²/2 - 1` (r < 0), which keeps it inside
/// `[-1, 1]` without clamping.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Result<StatResult<T>> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples { what: "correlation", needed: 3, found: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let unit = |s: &[T]| -> Result<Vec<T>> {
        let m = numeric::mean(s);
        let dev: Vec<T> = s.iter().map(|&v| v - m).collect();
        let norm = numeric::sum(dev.iter().map(|&d| d * d)).sqrt();
        if norm == T::zero() {
            return Err(StatsError::ConstantSeries);
        }
        Ok(dev.into_iter().map(|d| d / norm).collect())
    };
    let (u, w) = (unit(x)?, unit(y)?);
    let cross = numeric::sum(u.iter().zip(&w).map(|(&a, &b)| a * b));
    let half = T::c(0.5);
    let r = if cross >= T::zero() {
        T::one() - half * numeric::sum(u.iter().zip(&w).map(|(&a, &b)| (a - b) * (a - b)))
    } else {
        half * numeric::sum(u.iter().zip(&w).map(|(&a, &b)| (a + b) * (a + b))) - T::one()
    };
    let df = T::from_usize_lossy(x.len() - 2);
    let one_minus_r2 = (T::one() - r) * (T::one() + r);
    let p = if one_minus_r2 <= T::zero() {
        T::zero()
    } else {
        t_two_sided_p(r * (df / one_minus_r2).sqrt(), df)
    };
    Ok(StatResult {
        test: TestKind::Pearson,
        statistic: r,
        df,
        df2: None,
        p_value: p,
        effect_size: None,
        sample_sizes: vec![x.len()],
    })
}

/// Two-sided tail probability of Student's t distribution.
pub fn t_two_sided_p<T: Scalar>(t: T, df: T) -> T {
    if t.is_infinite() {
        return T::zero();
    }
    let t2 = t * t;
    let denom = df + t2;
    let half = T::c(0.5);
    clamp_unit(beta_reg(df * half, half, df / denom, t2 / denom))
}

/// Upper tail probability of the F distribution.
pub fn f_survival<T: Scalar>(f: T, d1: T, d2: T) -> T {
    if f <= T::zero() {
        return T::one();
    }
    let denom = d2 + d1 * f;
    let half = T::c(0.5);
    clamp_unit(beta_reg(d2 * half, d1 * half, d2 / denom, d1 * f / denom))
}

fn clamp_unit<T: Scalar>(p: T) -> T {
    p.max(T::zero()).min(T::one())
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    if x < half {
        // Reflection.
        let pi = T::c(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::c(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + T::c(c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::c(LANCZOS_G) + half;
    T::c(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 - x` passed explicitly
/// so callers can supply it without cancellation.
pub fn beta_reg<T: Scalar>(a: T, b: T, x: T, y: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if y <= T::zero() {
        return T::one();
    }
    let ln_front = a * x.ln() + b * y.ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + T::one()) / (a + b + T::c(2.0)) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        T::one() - front * beta_continued_fraction(b, a, y) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction<T: Scalar>(a: T, b: T, x: T) -> T {
    const MAX_ITER: usize = 10_000;
    let one = T::one();
    let two = T::c(2.0);
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = T::from_usize_lossy(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let delta = d * c;
        h = h * delta;
        if (delta - one).abs() <= eps {
            break;
        }
    }
    h
}

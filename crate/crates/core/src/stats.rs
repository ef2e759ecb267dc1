//! Nonparametric statistics for the response-length analysis: 3-sigma
//! outlier removal, Shapiro-Wilk normality (Royston's AS R94 approximation),
//! Spearman rank correlation, and the Mann-Whitney U test.
//!
//! Everything here is pure and deterministic. Samples are plain `&[f64]`
//! slices; every operation validates finiteness up front, so a NaN or
//! infinity is rejected rather than silently poisoning a rank sum.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("sample sizes {nx} and {ny} differ")]
    LengthMismatch { nx: usize, ny: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("sample size {n} outside the supported range 3..=5000")]
    OutOfRange { n: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("zero rank variance in the {which} vector")]
    ZeroRankVariance { which: &'static str },
    #[error("empty sample")]
    EmptySample,
    #[error("exact permutation test limited to n <= 10, got {n}")]
    ExactTooLarge { n: usize },
    #[error("negative average output length on record {record}")]
    NegativeLength { record: String },
    #[error("{group} group has {n} records after filtering, need at least 3")]
    GroupTooSmall { group: &'static str, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub alternative: Alternative,
}

fn validate_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample (n-1) standard deviation. Caller guarantees n >= 2.
fn sample_sd(values: &[f64]) -> f64 {
    let m = mean_of(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

pub fn three_sigma_bounds(values: &[f64]) -> Result<(f64, f64), StatsError> {
    validate_finite(values)?;
    if values.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: values.len() });
    }
    let m = mean_of(values);
    let sd = sample_sd(values);
    Ok((m - 3.0 * sd, m + 3.0 * sd))
}

/// Removes values outside mean +/- 3 sample standard deviations. One pass:
/// the bounds come from the input as given and are not recomputed after
/// removal.
pub fn three_sigma_filter(values: &[f64]) -> Result<Vec<f64>, StatsError> {
    let (lo, hi) = three_sigma_bounds(values)?;
    Ok(values.iter().copied().filter(|v| (lo..=hi).contains(v)).collect())
}

/// Inverse standard-normal CDF, Wichura's PPND16 (AS 241). Accurate to
/// roughly 1e-16 over (0, 1); out-of-range p maps to +/- infinity.
fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946_1e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 7] = [
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545_6e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 7] = [
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_9e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 7] = [
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-6,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    let q = p - 0.5;
    if libm::fabs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((A[7] * r + A[6]) * r + A[5]) * r + A[4]) * r + A[3]) * r + A[2]) * r
            + A[1])
            * r
            + A[0])
            * q;
        let den = ((((((B[6] * r + B[5]) * r + B[4]) * r + B[3]) * r + B[2]) * r + B[1]) * r
            + B[0])
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    if r <= 0.0 {
        return if q < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    let mut r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((C[7] * r + C[6]) * r + C[5]) * r + C[4]) * r + C[3]) * r + C[2]) * r
            + C[1])
            * r
            + C[0];
        let den = ((((((D[6] * r + D[5]) * r + D[4]) * r + D[3]) * r + D[2]) * r + D[1]) * r
            + D[0])
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((E[7] * r + E[6]) * r + E[5]) * r + E[4]) * r + E[3]) * r + E[2]) * r
            + E[1])
            * r
            + E[0];
        let den = ((((((F[6] * r + F[5]) * r + F[4]) * r + F[3]) * r + F[2]) * r + F[1]) * r
            + F[0])
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Shapiro-Wilk normality test via Royston's AS R94: Blom-score based
/// coefficients with the published polynomial corrections, and the
/// log-normal / logistic null transforms for the p-value. Supported for
/// 3 <= n <= 5000; n = 3 uses the exact arcsine distribution.
pub fn shapiro_wilk(values: &[f64]) -> Result<TestResult, StatsError> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    validate_finite(values)?;
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::OutOfRange { n });
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] == 0.0 {
        return Err(StatsError::ZeroVariance);
    }

    let nf = n as f64;
    let n2 = n / 2;
    // Positive half-coefficients; a[i] weights the gap between the i-th
    // largest and i-th smallest order statistic.
    let mut a = vec![0.0; n2];
    if n == 3 {
        a[0] = libm::sqrt(0.5);
    } else {
        let mut m = vec![0.0; n2];
        let mut summ2 = 0.0;
        for (i, mi) in m.iter_mut().enumerate() {
            *mi = ppnd16((i as f64 + 0.625) / (nf + 0.25));
            summ2 += *mi * *mi;
        }
        summ2 *= 2.0;
        let ssumm2 = libm::sqrt(summ2);
        let rsn = 1.0 / libm::sqrt(nf);
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (start, fac) = if n > 5 {
            let a2 = poly(&C2, rsn) - m[1] / ssumm2;
            let fac = libm::sqrt(
                (summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                    / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2),
            );
            a[1] = a2;
            (2, fac)
        } else {
            let fac = libm::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
            (1, fac)
        };
        a[0] = a1;
        for i in start..n2 {
            a[i] = -m[i] / fac;
        }
    }

    let mean = mean_of(&x);
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut num = 0.0;
    for (i, ai) in a.iter().enumerate() {
        num += ai * (x[n - 1 - i] - x[i]);
    }
    let w = ((num * num) / ss).min(1.0);

    let p_value = if n == 3 {
        ((6.0 / PI) * (libm::asin(libm::sqrt(w)) - PI / 3.0)).clamp(0.0, 1.0)
    } else {
        // ln(1-W) is normal under the null after Royston's shift; w == 1
        // pushes z to -infinity and the p-value to exactly 1.
        let y = libm::log(1.0 - w);
        let z = if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                f64::INFINITY
            } else {
                (-libm::log(gamma - y) - poly(&C3, nf)) / libm::exp(poly(&C4, nf))
            }
        } else {
            let ln_n = libm::log(nf);
            (y - poly(&C5, ln_n)) / libm::exp(poly(&C6, ln_n))
        };
        norm_sf(z)
    };

    Ok(TestResult {
        statistic: w,
        p_value,
        method: Method::Approximate,
        alternative: Alternative::TwoSided,
    })
}

/// Ranks with ties sharing their average position, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let mx = mean_of(x);
    let my = mean_of(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroRankVariance { which: "first" });
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroRankVariance { which: "second" });
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// Regularized incomplete beta I_x(a, b) by continued fraction.
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log(1.0 - x);
    let bt = libm::exp(ln_bt);
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAXIT: usize = 300;
    const EPS: f64 = 1e-14;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for i in 1..=MAXIT {
        let m = i as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Two-sided p for a t statistic with df degrees of freedom,
/// P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
fn t_two_sided(t: f64, df: f64) -> f64 {
    betai(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    validate_finite(x)?;
    validate_finite(y)?;
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { nx: x.len(), ny: y.len() });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: x.len() });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman rank correlation with average ranks for ties; two-sided p via
/// the t-approximation with n-2 degrees of freedom. |rho| of 1 short-circuits
/// to p = 0 rather than evaluating an infinite t.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    let rho = spearman_rho(x, y)?;
    let n = x.len() as f64;
    let p_value = if libm::fabs(rho) >= 1.0 - 1e-15 {
        0.0
    } else {
        let t = rho * libm::sqrt((n - 2.0) / (1.0 - rho * rho));
        t_two_sided(t, n - 2.0)
    };
    Ok(TestResult {
        statistic: rho,
        p_value,
        method: Method::Approximate,
        alternative: Alternative::TwoSided,
    })
}

fn for_each_permutation<F: FnMut(&[f64])>(k: usize, arr: &mut [f64], f: &mut F) {
    if k <= 1 {
        f(arr);
        return;
    }
    for i in 0..k {
        for_each_permutation(k - 1, arr, f);
        if k % 2 == 0 {
            arr.swap(i, k - 1);
        } else {
            arr.swap(0, k - 1);
        }
    }
}

/// Exact two-sided permutation test for Spearman's rho, enumerating all n!
/// pairings. Feasible only for small n, hence the hard n <= 10 limit.
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() > 10 {
        return Err(StatsError::ExactTooLarge { n: x.len() });
    }
    let rho = spearman_rho(x, y)?;
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let threshold = libm::fabs(rho) - 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    let k = ry.len();
    for_each_permutation(k, &mut ry, &mut |perm| {
        // Rank variance is permutation-invariant, so pearson cannot fail here.
        let r = pearson(&rx, perm).expect("rank variance survives permutation");
        total += 1;
        if libm::fabs(r) >= threshold {
            hits += 1;
        }
    });
    Ok(TestResult {
        statistic: rho,
        p_value: hits as f64 / total as f64,
        method: Method::Exact,
        alternative: Alternative::TwoSided,
    })
}

/// Mann-Whitney U with U counted from the first sample: ties add 1/2.
/// Exact enumeration when both samples have at most 8 values and the pooled
/// data is tie-free; otherwise the normal approximation with tie and
/// continuity corrections. A fully tied pool degenerates to p = 1.
pub fn mann_whitney(
    x: &[f64],
    y: &[f64],
    alternative: Alternative,
) -> Result<TestResult, StatsError> {
    validate_finite(x)?;
    validate_finite(y)?;
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = x.len();
    let m = y.len();
    let mut u = 0.0;
    for xi in x {
        for yj in y {
            if xi > yj {
                u += 1.0;
            } else if xi == yj {
                u += 0.5;
            }
        }
    }
    let mut pooled = Vec::with_capacity(n + m);
    pooled.extend_from_slice(x);
    pooled.extend_from_slice(y);
    pooled.sort_by(f64::total_cmp);
    let has_ties = pooled.windows(2).any(|w| w[0] == w[1]);

    if n.max(m) <= 8 && !has_ties {
        let nt = n + m;
        let mut counts = vec![0u64; n * m + 1];
        for mask in 0u32..(1u32 << nt) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let mut ranksum = 0usize;
            for pos in 0..nt {
                if mask & (1 << pos) != 0 {
                    ranksum += pos + 1;
                }
            }
            counts[ranksum - n * (n + 1) / 2] += 1;
        }
        let total: u64 = counts.iter().sum();
        // Tie-free U is an integer; the rounding only undoes float noise.
        let u_obs = libm::round(u) as usize;
        let p_less = counts[..=u_obs].iter().sum::<u64>() as f64 / total as f64;
        let p_greater = counts[u_obs..].iter().sum::<u64>() as f64 / total as f64;
        let p_value = match alternative {
            Alternative::Less => p_less,
            Alternative::Greater => p_greater,
            Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
        };
        return Ok(TestResult { statistic: u, p_value, method: Method::Exact, alternative });
    }

    let nf = n as f64;
    let mf = m as f64;
    let total = nf + mf;
    let mu = nf * mf / 2.0;
    let mut tiesum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tiesum += t * t * t - t;
        i = j + 1;
    }
    let var = nf * mf / 12.0 * (total + 1.0 - tiesum / (total * (total - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let sd = libm::sqrt(var);
        match alternative {
            Alternative::Less => norm_cdf((u - mu + 0.5) / sd),
            Alternative::Greater => norm_sf((u - mu - 0.5) / sd),
            Alternative::TwoSided => {
                (2.0 * norm_sf((libm::fabs(u - mu) - 0.5) / sd)).min(1.0)
            }
        }
    };
    Ok(TestResult { statistic: u, p_value, method: Method::Approximate, alternative })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRecord {
    pub record: String,
    pub input_tokens: u64,
    /// Mean completion length over the record's runs.
    pub avg_output_tokens: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthConfig {
    pub input_alternative: Alternative,
    pub output_alternative: Alternative,
}

impl Default for RunLengthConfig {
    fn default() -> RunLengthConfig {
        // The working hypothesis is that misclassified notes are longer, so
        // both group tests default to "incorrect greater".
        RunLengthConfig {
            input_alternative: Alternative::Greater,
            output_alternative: Alternative::Greater,
        }
    }
}

/// A single test slot in the analysis report. Degenerate inputs (constant
/// lengths, say) fail per slot without sinking the rest of the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOutcome {
    Ok(TestResult),
    Error(String),
}

impl From<Result<TestResult, StatsError>> for TestOutcome {
    fn from(res: Result<TestResult, StatsError>) -> TestOutcome {
        match res {
            Ok(r) => TestOutcome::Ok(r),
            Err(e) => TestOutcome::Error(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLengthReport {
    pub total_records: usize,
    pub dropped_outliers: usize,
    pub correct_n: usize,
    pub incorrect_n: usize,
    pub input_normality_correct: TestOutcome,
    pub input_normality_incorrect: TestOutcome,
    pub output_normality_correct: TestOutcome,
    pub output_normality_incorrect: TestOutcome,
    pub spearman_input_vs_output: TestOutcome,
    /// Mann-Whitney on input lengths, incorrect group as the first sample.
    pub input_by_correctness: TestOutcome,
    /// Same grouping for average output lengths.
    pub output_by_correctness: TestOutcome,
    pub retained: Vec<LengthRecord>,
}

/// The length-vs-correctness study: 3-sigma filtering per variable over the
/// whole record set (a record drops if either of its lengths is an outlier),
/// then per-group normality, input/output correlation, and the two
/// Mann-Whitney group comparisons.
pub fn run_length_analysis(
    records: &[LengthRecord],
    cfg: RunLengthConfig,
) -> Result<RunLengthReport, StatsError> {
    for r in records {
        if !r.avg_output_tokens.is_finite() {
            return Err(StatsError::NonFinite);
        }
        if r.avg_output_tokens < 0.0 {
            return Err(StatsError::NegativeLength { record: r.record.clone() });
        }
    }
    let inputs: Vec<f64> = records.iter().map(|r| r.input_tokens as f64).collect();
    let outputs: Vec<f64> = records.iter().map(|r| r.avg_output_tokens).collect();
    let (ilo, ihi) = three_sigma_bounds(&inputs)?;
    let (olo, ohi) = three_sigma_bounds(&outputs)?;
    let retained: Vec<LengthRecord> = records
        .iter()
        .filter(|r| {
            let iv = r.input_tokens as f64;
            (ilo..=ihi).contains(&iv) && (olo..=ohi).contains(&r.avg_output_tokens)
        })
        .cloned()
        .collect();

    let mut ci = Vec::new();
    let mut co = Vec::new();
    let mut ii = Vec::new();
    let mut io = Vec::new();
    for r in &retained {
        if r.correct {
            ci.push(r.input_tokens as f64);
            co.push(r.avg_output_tokens);
        } else {
            ii.push(r.input_tokens as f64);
            io.push(r.avg_output_tokens);
        }
    }
    if ci.len() < 3 {
        return Err(StatsError::GroupTooSmall { group: "correct", n: ci.len() });
    }
    if ii.len() < 3 {
        return Err(StatsError::GroupTooSmall { group: "incorrect", n: ii.len() });
    }

    let all_in: Vec<f64> = retained.iter().map(|r| r.input_tokens as f64).collect();
    let all_out: Vec<f64> = retained.iter().map(|r| r.avg_output_tokens).collect();

    Ok(RunLengthReport {
        total_records: records.len(),
        dropped_outliers: records.len() - retained.len(),
        correct_n: ci.len(),
        incorrect_n: ii.len(),
        input_normality_correct: shapiro_wilk(&ci).into(),
        input_normality_incorrect: shapiro_wilk(&ii).into(),
        output_normality_correct: shapiro_wilk(&co).into(),
        output_normality_incorrect: shapiro_wilk(&io).into(),
        spearman_input_vs_output: spearman(&all_in, &all_out).into(),
        input_by_correctness: mann_whitney(&ii, &ci, cfg.input_alternative).into(),
        output_by_correctness: mann_whitney(&io, &co, cfg.output_alternative).into(),
        retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn filter_keeps_constant_samples() {
        assert_eq!(three_sigma_filter(&[5.0, 5.0, 5.0]).unwrap(), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn filter_drops_the_gross_outlier() {
        let mut v = vec![0.0; 10];
        v.push(1000.0);
        assert_eq!(three_sigma_filter(&v).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn filter_leaves_tight_samples_alone() {
        assert_eq!(three_sigma_filter(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn filter_is_single_pass() {
        // 2000 falls outside the initial bounds, 500 inside. Rerunning on
        // the output would also remove 500; one pass keeps it.
        let mut v = vec![0.0; 10];
        v.push(500.0);
        v.push(2000.0);
        let kept = three_sigma_filter(&v).unwrap();
        assert!(kept.contains(&500.0));
        assert!(!kept.contains(&2000.0));
    }

    #[test]
    fn filter_rejects_degenerate_input() {
        assert_eq!(
            three_sigma_filter(&[1.0]).unwrap_err(),
            StatsError::TooFew { need: 2, got: 1 }
        );
        assert_eq!(three_sigma_filter(&[1.0, f64::NAN]).unwrap_err(), StatsError::NonFinite);
    }

    proptest::proptest! {
        #[test]
        fn filter_output_is_a_subsequence(v in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
            let kept = three_sigma_filter(&v).unwrap();
            proptest::prop_assert!(kept.len() <= v.len());
            let mut it = v.iter();
            for k in &kept {
                proptest::prop_assert!(it.any(|x| x == k));
            }
        }
    }

    #[test]
    fn ppnd16_inverts_the_normal_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6] {
            let z = ppnd16(p);
            assert_abs_diff_eq!(norm_cdf(z), p, epsilon = 1e-9);
        }
        assert_eq!(ppnd16(0.5), 0.0);
    }

    #[test]
    fn shapiro_wilk_is_exact_for_symmetric_triple() {
        let r = shapiro_wilk(&[-1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shapiro_wilk_rejects_degenerate_samples() {
        assert_eq!(
            shapiro_wilk(&[3.0, 3.0, 3.0]).unwrap_err(),
            StatsError::ZeroVariance
        );
        assert_eq!(shapiro_wilk(&[1.0, 2.0]).unwrap_err(), StatsError::OutOfRange { n: 2 });
        let big = vec![0.5; 5001];
        assert_eq!(shapiro_wilk(&big).unwrap_err(), StatsError::OutOfRange { n: 5001 });
    }

    // Reference W and p values computed with an independent implementation
    // of the same algorithm.
    #[test]
    fn shapiro_wilk_reference_values() {
        let x11 =
            [148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0];
        let r = shapiro_wilk(&x11).unwrap();
        assert_relative_eq!(r.statistic, 0.7888146948631716, max_relative = 1e-6);
        assert_relative_eq!(r.p_value, 0.006703814061898823, max_relative = 1e-4);

        let x20 = [
            2.3, -1.1, 0.4, 0.9, -0.6, 1.7, -2.2, 0.1, 0.8, -0.3, 1.2, -1.8, 0.5, 2.9, -0.7,
            0.2, 1.0, -1.4, 0.6, -0.1,
        ];
        let r = shapiro_wilk(&x20).unwrap();
        assert_relative_eq!(r.statistic, 0.9893717517808959, max_relative = 1e-6);
        assert_relative_eq!(r.p_value, 0.9972918832948848, max_relative = 1e-4);

        let r = shapiro_wilk(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert_relative_eq!(r.statistic, 0.9202026788806026, max_relative = 1e-6);
        assert_relative_eq!(r.p_value, 0.5380837777759025, max_relative = 1e-4);

        let r = shapiro_wilk(&[3.1, 3.3, 3.5, 3.6, 3.8, 4.0, 9.9]).unwrap();
        assert_relative_eq!(r.statistic, 0.5748111165557315, max_relative = 1e-6);
        assert_relative_eq!(r.p_value, 0.00013683106718835416, max_relative = 1e-3);
    }

    #[test]
    fn shapiro_wilk_rejection_rate_under_the_null() {
        let mut rejected = 0;
        for trial in 0..1000u64 {
            let mut rng = seeds::rng(42, "sw-null", trial);
            let sample: Vec<f64> =
                (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            if shapiro_wilk(&sample).unwrap().p_value < 0.05 {
                rejected += 1;
            }
        }
        let rate = rejected as f64 / 1000.0;
        assert!((0.03..=0.07).contains(&rate), "rejection rate {rate}");
    }

    proptest::proptest! {
        #[test]
        fn shapiro_wilk_is_affine_invariant(
            base in proptest::collection::vec(-100.0f64..100.0, 5..30),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            if let Ok(r1) = shapiro_wilk(&base) {
                proptest::prop_assert!(r1.statistic > 0.0 && r1.statistic <= 1.0);
                let mapped: Vec<f64> = base.iter().map(|x| a * x + b).collect();
                let r2 = shapiro_wilk(&mapped).unwrap();
                proptest::prop_assert!((r1.statistic - r2.statistic).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_handles_monotone_extremes() {
        let r = spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 0.0);
        let r = spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap();
        assert_eq!(r.statistic, -1.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn spearman_tie_example() {
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.9486832980505139, epsilon = 1e-12);
        assert_relative_eq!(r.p_value, 0.05131670194948612, max_relative = 1e-8);
    }

    #[test]
    fn spearman_reference_pair() {
        let xs = [12.0, 7.5, 3.2, 9.9, 15.1, 4.4, 8.8, 6.1, 11.3, 2.0, 13.7, 5.5];
        let ys = [30.0, 18.2, 9.1, 31.5, 40.0, 8.0, 19.9, 22.2, 28.8, 7.7, 33.1, 12.4];
        let r = spearman(&xs, &ys).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.9510489510489512, epsilon = 1e-12);
        assert_relative_eq!(r.p_value, 2.0384246324655723e-6, max_relative = 1e-7);
    }

    #[test]
    fn spearman_rejects_flat_ranks() {
        assert_eq!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            StatsError::ZeroRankVariance { which: "first" }
        );
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]).unwrap_err(),
            StatsError::ZeroRankVariance { which: "second" }
        );
    }

    #[test]
    fn spearman_exact_small_cases() {
        // n=3, observed |rho| = 0.5; every permutation reaches 0.5, so p = 1.
        let r = spearman_exact(&[1.0, 2.0, 3.0], &[30.0, 10.0, 20.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, -0.5, epsilon = 1e-12);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, Method::Exact);
        // Perfect agreement: only the two monotone permutations match.
        let r = spearman_exact(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_abs_diff_eq!(r.p_value, 2.0 / 6.0, epsilon = 1e-12);

        let big: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert_eq!(
            spearman_exact(&big, &big).unwrap_err(),
            StatsError::ExactTooLarge { n: 11 }
        );
    }

    proptest::proptest! {
        #[test]
        fn spearman_survives_monotone_transforms(
            x in proptest::collection::vec(-20i32..20, 4..15),
            y in proptest::collection::vec(-20i32..20, 4..15),
        ) {
            let n = x.len().min(y.len());
            let xf: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
            let yf: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
            if let Ok(r1) = spearman(&xf, &yf) {
                proptest::prop_assert!((-1.0..=1.0).contains(&r1.statistic));
                let xt: Vec<f64> = xf.iter().map(|&v| libm::exp(v / 10.0)).collect();
                let yt: Vec<f64> = yf.iter().map(|&v| v * v * v).collect();
                let r2 = spearman(&xt, &yt).unwrap();
                proptest::prop_assert!((r1.statistic - r2.statistic).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mann_whitney_exact_examples() {
        let r = mann_whitney(&[1.0, 2.0], &[3.0, 4.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 2.0 / 6.0, epsilon = 1e-12);
        assert_eq!(r.method, Method::Exact);

        let r = mann_whitney(&[1.0, 3.0], &[2.0, 4.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_abs_diff_eq!(r.p_value, 4.0 / 6.0, epsilon = 1e-12);

        let r =
            mann_whitney(&[20.0, 21.0, 22.0], &[10.0, 11.0, 12.0], Alternative::Greater)
                .unwrap();
        assert_eq!(r.statistic, 9.0);
        assert_abs_diff_eq!(r.p_value, 0.05, epsilon = 1e-12);

        let r = mann_whitney(&[1.5, 2.5, 6.0, 7.0], &[3.0, 4.0, 5.0], Alternative::Less)
            .unwrap();
        assert_eq!(r.statistic, 6.0);
        assert_abs_diff_eq!(r.p_value, 0.5714285714285714, epsilon = 1e-12);
    }

    #[test]
    fn mann_whitney_rejects_empty_samples() {
        assert_eq!(
            mann_whitney(&[], &[1.0], Alternative::TwoSided).unwrap_err(),
            StatsError::EmptySample
        );
    }

    // Reference values from an independent implementation of the
    // tie-corrected continuity-adjusted normal approximation.
    #[test]
    fn mann_whitney_approximate_reference() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 6.0, 8.0, 9.0, 9.0];
        let y = [2.0, 4.0, 4.0, 5.0, 7.0, 7.0, 8.0, 10.0, 11.0, 12.0];
        let r = mann_whitney(&x, &y, Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 30.0);
        assert_eq!(r.method, Method::Approximate);
        assert_relative_eq!(r.p_value, 0.23458873584281237, max_relative = 1e-10);
        let r = mann_whitney(&x, &y, Alternative::Less).unwrap();
        assert_relative_eq!(r.p_value, 0.11729436792140618, max_relative = 1e-10);
        let r = mann_whitney(&x, &y, Alternative::Greater).unwrap();
        assert_relative_eq!(r.p_value, 0.8980636426382422, max_relative = 1e-10);
    }

    #[test]
    fn mann_whitney_fully_tied_pool() {
        let r = mann_whitney(&[4.0; 12], &[4.0; 9], Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    proptest::proptest! {
        #[test]
        fn mann_whitney_u_counts_are_complementary(
            split in 1usize..7,
            perm_seed in 0u64..500,
        ) {
            // A shuffled run of distinct integers, split into two samples.
            let mut values: Vec<f64> = (0..8).map(|i| i as f64).collect();
            let mut rng = seeds::rng(9, "mw-prop", perm_seed);
            crate::corpus::shuffle(&mut values, &mut rng);
            let (x, y) = values.split_at(split);
            let rx = mann_whitney(x, y, Alternative::TwoSided).unwrap();
            let ry = mann_whitney(y, x, Alternative::TwoSided).unwrap();
            proptest::prop_assert!(
                (rx.statistic + ry.statistic - (x.len() * y.len()) as f64).abs() < 1e-9
            );
            // Exact two-sided p doubles the smaller tail.
            let less = mann_whitney(x, y, Alternative::Less).unwrap().p_value;
            let greater = mann_whitney(x, y, Alternative::Greater).unwrap().p_value;
            let expect = (2.0 * less.min(greater)).min(1.0);
            proptest::prop_assert!((rx.p_value - expect).abs() < 1e-12);
        }
    }

    fn rec(id: usize, input: u64, output: f64, correct: bool) -> LengthRecord {
        LengthRecord {
            record: std::format!("r{id}"),
            input_tokens: input,
            avg_output_tokens: output,
            correct,
        }
    }

    #[test]
    fn length_analysis_separated_groups() {
        let mut records = Vec::new();
        for (i, v) in [10u64, 11, 12].iter().enumerate() {
            records.push(rec(i, *v, *v as f64, true));
        }
        for (i, v) in [20u64, 21, 22].iter().enumerate() {
            records.push(rec(10 + i, *v, *v as f64, false));
        }
        let report = run_length_analysis(&records, RunLengthConfig::default()).unwrap();
        assert_eq!(report.dropped_outliers, 0);
        match &report.input_by_correctness {
            TestOutcome::Ok(r) => {
                assert_abs_diff_eq!(r.p_value, 0.05, epsilon = 1e-12);
                assert_eq!(r.method, Method::Exact);
            }
            TestOutcome::Error(e) => panic!("unexpected error {e}"),
        }
        match &report.spearman_input_vs_output {
            TestOutcome::Ok(r) => assert_eq!(r.statistic, 1.0),
            TestOutcome::Error(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn length_analysis_degenerate_lengths_fail_per_slot() {
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(rec(i, 5, 7.0, true));
        }
        for i in 4..8 {
            records.push(rec(i, 5, 7.0, false));
        }
        let report = run_length_analysis(&records, RunLengthConfig::default()).unwrap();
        assert!(matches!(report.spearman_input_vs_output, TestOutcome::Error(_)));
        assert!(matches!(report.input_normality_correct, TestOutcome::Error(_)));
        match &report.input_by_correctness {
            TestOutcome::Ok(r) => assert_eq!(r.p_value, 1.0),
            TestOutcome::Error(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn length_analysis_names_the_small_group() {
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(rec(i, 10 + i as u64, 20.0 + i as f64, true));
        }
        records.push(rec(90, 15, 25.0, false));
        records.push(rec(91, 16, 26.0, false));
        let err = run_length_analysis(&records, RunLengthConfig::default()).unwrap_err();
        assert_eq!(err, StatsError::GroupTooSmall { group: "incorrect", n: 2 });
    }

    #[test]
    fn length_analysis_drops_outlier_records() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec(i, 100 + i as u64, 200.0 + i as f64, i % 2 == 0));
        }
        records.push(rec(99, 1_000_000, 205.0, true));
        let report = run_length_analysis(&records, RunLengthConfig::default()).unwrap();
        assert_eq!(report.dropped_outliers, 1);
        assert_eq!(report.retained.len(), 10);
        assert!(report.retained.iter().all(|r| r.record != "r99"));
    }

    #[test]
    fn length_analysis_null_simulation() {
        // Lengths independent of correctness: the two-sided group test
        // should stay quiet in the vast majority of trials.
        let mut quiet = 0;
        for trial in 0..100u64 {
            let mut rng = seeds::rng(7, "mw-null", trial);
            let records: Vec<LengthRecord> = (0..500)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let input = (500.0 + 50.0 * z).max(1.0) as u64;
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    rec(i, input, (300.0 + 30.0 * z2).max(1.0), i % 2 == 0)
                })
                .collect();
            let cfg = RunLengthConfig {
                input_alternative: Alternative::TwoSided,
                output_alternative: Alternative::TwoSided,
            };
            let report = run_length_analysis(&records, cfg).unwrap();
            if let TestOutcome::Ok(r) = &report.input_by_correctness {
                if r.p_value > 0.05 {
                    quiet += 1;
                }
            }
        }
        assert!(quiet >= 90, "null MW quiet in only {quiet}/100 trials");
    }

    #[test]
    fn outcome_serialization_shapes() {
        let ok = TestOutcome::Ok(TestResult {
            statistic: 1.0,
            p_value: 0.5,
            method: Method::Exact,
            alternative: Alternative::TwoSided,
        });
        let s = serde_json::to_string(&ok).unwrap();
        assert!(s.contains("\"ok\""), "{s}");
        assert!(s.contains("\"two_sided\""), "{s}");
        let err = TestOutcome::Error("zero variance".into());
        let s = serde_json::to_string(&err).unwrap();
        assert!(s.contains("\"error\""), "{s}");
        let back: TestOutcome = serde_json::from_str(&s).unwrap();
        assert_eq!(back, err);
    }
}

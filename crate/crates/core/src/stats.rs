//! Nonparametric tests, effect sizes and agreement measures.
//!
//! Exact p-values are computed by dynamic programming over doubled ranks, so
//! average ranks from ties stay integral. Small samples always use the exact
//! null distribution: Wilcoxon up to 20 non-zero differences, Mann-Whitney up
//! to 12 pooled observations.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::signal::AttentionState;

pub const WILCOXON_EXACT_MAX_N: usize = 20;
pub const MANN_WHITNEY_EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("chance agreement is 1; kappa undefined")]
    DegenerateAgreement,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("zero variance")]
    ZeroVariance,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// First sample (or positive differences) tends larger.
    Greater,
    /// First sample (or positive differences) tends smaller.
    Less,
}

impl Alternative {
    pub fn tail(self) -> Tail {
        match self {
            Alternative::TwoSided => Tail::Two,
            _ => Tail::One,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: PMethod,
    pub tail: Tail,
    pub alternative: Alternative,
    /// Observations used after dropping zero differences.
    pub n: usize,
}

/// Cohen's kappa for a square contingency table (rows: rater A, cols: rater B).
pub fn cohen_kappa<const N: usize>(m: &[[u64; N]; N]) -> Result<f64> {
    let rows: Vec<&[u64]> = m.iter().map(|r| r.as_slice()).collect();
    kappa_from_rows(&rows)
}

/// Cohen's kappa for a square table given as row slices.
pub fn kappa_from_rows(rows: &[&[u64]]) -> Result<f64> {
    let k = rows.len();
    if k == 0 {
        return Err(StatsError::EmptyInput);
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(StatsError::InvalidInput("matrix must be square".into()));
    }
    let total: u64 = rows.iter().flat_map(|r| r.iter()).sum();
    if total == 0 {
        return Err(StatsError::EmptyInput);
    }
    let diag: u64 = (0..k).map(|i| rows[i][i]).sum();
    let row_sums: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    // Exact integer test for p_e = 1.
    let chance: u128 = row_sums
        .iter()
        .zip(&col_sums)
        .map(|(&r, &c)| r as u128 * c as u128)
        .sum();
    let n2 = total as u128 * total as u128;
    if chance == n2 {
        return Err(StatsError::DegenerateAgreement);
    }
    let n = total as f64;
    let p_o = diag as f64 / n;
    let p_e = chance as f64 / (n * n);
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// 4×4 agreement table over attention states (rows: rater A or truth).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix4(pub [[u64; 4]; 4]);

impl ConfusionMatrix4 {
    pub fn from_pairs(a: &[AttentionState], b: &[AttentionState]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let mut m = [[0u64; 4]; 4];
        for (x, y) in a.iter().zip(b) {
            m[x.index()][y.index()] += 1;
        }
        Ok(ConfusionMatrix4(m))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn kappa(&self) -> Result<f64> {
        cohen_kappa(&self.0)
    }
}

/// Square compatibility relation over states; `[a][b]` true when a decision
/// of `a` by rater A and `b` by rater B count as functionally equivalent.
pub type CompatMatrix = [[bool; 4]; 4];

pub fn identity_compat() -> CompatMatrix {
    let mut m = [[false; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = true;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRates {
    pub exact: f64,
    pub compatible: f64,
    pub n: usize,
}

pub fn match_rates(
    a: &[AttentionState],
    b: &[AttentionState],
    compat: &CompatMatrix,
) -> Result<MatchRates> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if (0..4).any(|i| !compat[i][i]) {
        return Err(StatsError::InvalidInput(
            "compatibility diagonal must be all true".into(),
        ));
    }
    let n = a.len();
    let exact = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let compatible = a
        .iter()
        .zip(b)
        .filter(|(x, y)| compat[x.index()][y.index()])
        .count();
    Ok(MatchRates {
        exact: exact as f64 / n as f64,
        compatible: compatible as f64 / n as f64,
        n,
    })
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    doubled_ranks(values).into_iter().map(|r| r as f64 / 2.0).collect()
}

/// Twice the average rank, always an integer.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let doubled = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            ranks[idx] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups among `values`.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

fn upper_normal(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn lower_normal(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// One- or two-sided normal p-value with a 0.5 continuity correction.
fn normal_p(stat: f64, mean: f64, sd: f64, alt: Alternative) -> f64 {
    if sd <= 0.0 {
        return 1.0;
    }
    let p = match alt {
        Alternative::Greater => upper_normal((stat - mean - 0.5) / sd),
        Alternative::Less => lower_normal((stat - mean + 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((stat - mean).abs() - 0.5).max(0.0) / sd;
            2.0 * upper_normal(z)
        }
    };
    p.clamp(0.0, 1.0)
}

/// Exact tail probability from a count distribution over doubled statistics.
/// `center2` is twice the null mean of the doubled statistic.
fn exact_tail(counts: &[f64], observed: usize, center2: i64, alt: Alternative) -> f64 {
    let total: f64 = counts.iter().sum();
    let mass: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, &c)| {
            c > 0.0
                && match alt {
                    Alternative::Greater => s >= observed,
                    Alternative::Less => s <= observed,
                    Alternative::TwoSided => {
                        (2 * s as i64 - center2).abs() >= (2 * observed as i64 - center2).abs()
                    }
                }
        })
        .map(|(_, &c)| c)
        .sum();
    (mass / total).min(1.0)
}

/// Wilcoxon signed-rank test on paired differences, exact for up to 20
/// non-zero differences.
pub fn wilcoxon_signed_rank(diffs: &[f64], alt: Alternative) -> Result<TestResult> {
    let nonzero = diffs.iter().filter(|d| **d != 0.0).count();
    let method = if nonzero <= WILCOXON_EXACT_MAX_N {
        PMethod::Exact
    } else {
        PMethod::NormalApprox
    };
    wilcoxon_signed_rank_with(diffs, alt, method)
}

pub fn wilcoxon_signed_rank_with(
    diffs: &[f64],
    alt: Alternative,
    method: PMethod,
) -> Result<TestResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite difference".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&abs);
    let observed2: u64 = nz
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total2: u64 = ranks2.iter().sum();
    let statistic = observed2 as f64 / 2.0;

    let p_value = match method {
        PMethod::Exact => {
            // counts[s]: sign patterns whose doubled W+ equals s
            let mut counts = vec![0.0f64; total2 as usize + 1];
            counts[0] = 1.0;
            let mut reach = 0usize;
            for &r in &ranks2 {
                let r = r as usize;
                for s in (0..=reach).rev() {
                    if counts[s] > 0.0 {
                        counts[s + r] += counts[s];
                    }
                }
                reach += r;
            }
            exact_tail(&counts, observed2 as usize, total2 as i64, alt)
        }
        PMethod::NormalApprox => {
            let mean = total2 as f64 / 4.0;
            // Var(W+) = Σ r_i² / 4 already includes the tie correction
            let var: f64 = ranks2.iter().map(|&r| (r as f64 / 2.0).powi(2)).sum::<f64>() / 4.0;
            normal_p(statistic, mean, var.sqrt(), alt)
        }
    };

    Ok(TestResult {
        statistic,
        p_value,
        method,
        tail: alt.tail(),
        alternative: alt,
        n: nz.len(),
    })
}

/// Mann-Whitney U test. The statistic is U for sample `a`, counting ties as
/// one half; `Greater` means `a` tends to be larger.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    let method = if a.len() + b.len() <= MANN_WHITNEY_EXACT_MAX_N {
        PMethod::Exact
    } else {
        PMethod::NormalApprox
    };
    mann_whitney_u_with(a, b, alt, method)
}

pub fn mann_whitney_u_with(
    a: &[f64],
    b: &[f64],
    alt: Alternative,
    method: PMethod,
) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks2 = doubled_ranks(&pooled);
    let ra2: u64 = ranks2[..na].iter().sum();
    let offset2 = (na * (na + 1)) as u64;
    let u2 = ra2 - offset2;
    let statistic = u2 as f64 / 2.0;
    let nanb = (na * nb) as f64;

    let p_value = match method {
        PMethod::Exact => {
            let max2: usize = ranks2.iter().sum::<u64>() as usize;
            // ways[k][s]: subsets of size k with doubled rank sum s
            let mut ways = vec![vec![0.0f64; max2 + 1]; na + 1];
            ways[0][0] = 1.0;
            for &r in &ranks2 {
                let r = r as usize;
                for k in (1..=na).rev() {
                    let (lo, hi) = ways.split_at_mut(k);
                    let prev = &lo[k - 1];
                    let cur = &mut hi[0];
                    for s in (r..=max2).rev() {
                        if prev[s - r] > 0.0 {
                            cur[s] += prev[s - r];
                        }
                    }
                }
            }
            // re-index by doubled U
            let counts: Vec<f64> = ways[na].iter().skip(offset2 as usize).copied().collect();
            exact_tail(&counts, u2 as usize, 2 * (na * nb) as i64, alt)
        }
        PMethod::NormalApprox => {
            let n = (na + nb) as f64;
            let ties: f64 = tie_groups(&pooled)
                .iter()
                .map(|&t| {
                    let t = t as f64;
                    t * t * t - t
                })
                .sum();
            let var = nanb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
            normal_p(statistic, nanb / 2.0, var.max(0.0).sqrt(), alt)
        }
    };

    Ok(TestResult {
        statistic,
        p_value,
        method,
        tail: alt.tail(),
        alternative: alt,
        n: na + nb,
    })
}

/// Summary statistics of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl GroupSummary {
    pub fn new(mean: f64, sd: f64, n: usize) -> Self {
        GroupSummary { mean, sd, n }
    }

    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(StatsError::InvalidInput("need at least two values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(GroupSummary::new(mean, var.sqrt(), values.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DVariant {
    /// Root-mean-square of the two group SDs as the standardizer.
    Pooled,
    /// Standardized by the SD of the paired differences.
    Paired { diff_sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub d: f64,
    pub ci95: (f64, f64),
    pub variant: DVariant,
}

const Z_975: f64 = 1.96;

/// Cohen's d of `b` relative to `a` (positive when `b` has the larger mean)
/// with a normal-theory 95% interval.
pub fn cohens_d(a: GroupSummary, b: GroupSummary, variant: DVariant) -> Result<EffectSize> {
    if a.n < 2 || b.n < 2 {
        return Err(StatsError::InvalidInput("group sizes must be at least 2".into()));
    }
    if !(a.sd > 0.0 && b.sd > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let diff = b.mean - a.mean;
    let (d, se) = match variant {
        DVariant::Pooled => {
            let d = diff / ((a.sd * a.sd + b.sd * b.sd) / 2.0).sqrt();
            let (na, nb) = (a.n as f64, b.n as f64);
            let se = ((na + nb) / (na * nb) + d * d / (2.0 * (na + nb))).sqrt();
            (d, se)
        }
        DVariant::Paired { diff_sd } => {
            if !(diff_sd > 0.0) {
                return Err(StatsError::ZeroVariance);
            }
            if a.n != b.n {
                return Err(StatsError::LengthMismatch {
                    left: a.n,
                    right: b.n,
                });
            }
            let n = a.n as f64;
            let d = diff / diff_sd;
            (d, (1.0 / n + d * d / (2.0 * n)).sqrt())
        }
    };
    Ok(EffectSize {
        d,
        ci95: (d - Z_975 * se, d + Z_975 * se),
        variant,
    })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::InvalidInput("need at least three pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rank-based area under the ROC curve: the probability that a positive
/// scores above a negative, ties counting one half.
pub fn roc_auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let np = scores_pos.len();
    let pooled: Vec<f64> = scores_pos.iter().chain(scores_neg).copied().collect();
    let ranks2 = doubled_ranks(&pooled);
    let rp2: u64 = ranks2[..np].iter().sum();
    let u2 = rp2 - (np * (np + 1)) as u64;
    Ok(u2 as f64 / 2.0 / (np * scores_neg.len()) as f64)
}

/// Statistics for one CSV of paired (`a,b`) or grouped (`group,value`)
/// observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum BatchReport {
    Paired {
        n: usize,
        a: GroupSummary,
        b: GroupSummary,
        wilcoxon: TestResult,
        cohens_d_paired: EffectSize,
        cohens_d_pooled: EffectSize,
        pearson_r: Option<f64>,
    },
    Grouped {
        groups: [String; 2],
        a: GroupSummary,
        b: GroupSummary,
        mann_whitney: TestResult,
        auc: f64,
        cohens_d_pooled: EffectSize,
    },
}

/// Runs the batch statistics on CSV text. Paired data tests `b − a`; grouped
/// data needs exactly two groups, taken in order of first appearance.
pub fn batch_from_csv(text: &str, alt: Alternative) -> Result<BatchReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| StatsError::InvalidInput(e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| StatsError::InvalidInput(e.to_string()))?;
    let num = |s: &str, row: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| StatsError::InvalidInput(format!("row {row}: `{s}` is not a number")))
    };
    match cols.as_slice() {
        ["a", "b"] => {
            let mut xa = Vec::new();
            let mut xb = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                xa.push(num(&r[0], i + 1)?);
                xb.push(num(&r[1], i + 1)?);
            }
            let diffs: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| b - a).collect();
            let sa = GroupSummary::of(&xa)?;
            let sb = GroupSummary::of(&xb)?;
            let sd = GroupSummary::of(&diffs)?;
            Ok(BatchReport::Paired {
                n: diffs.len(),
                a: sa,
                b: sb,
                wilcoxon: wilcoxon_signed_rank(&diffs, alt)?,
                cohens_d_paired: cohens_d(sa, sb, DVariant::Paired { diff_sd: sd.sd })?,
                cohens_d_pooled: cohens_d(sa, sb, DVariant::Pooled)?,
                pearson_r: pearson_r(&xa, &xb).ok(),
            })
        }
        ["group", "value"] => {
            let mut names: Vec<String> = Vec::new();
            let mut values: Vec<Vec<f64>> = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let g = r[0].to_string();
                let v = num(&r[1], i + 1)?;
                match names.iter().position(|n| *n == g) {
                    Some(k) => values[k].push(v),
                    None => {
                        names.push(g);
                        values.push(vec![v]);
                    }
                }
            }
            if names.len() != 2 {
                return Err(StatsError::InvalidInput(format!(
                    "expected exactly two groups, found {}",
                    names.len()
                )));
            }
            let sa = GroupSummary::of(&values[0])?;
            let sb = GroupSummary::of(&values[1])?;
            Ok(BatchReport::Grouped {
                groups: [names[0].clone(), names[1].clone()],
                a: sa,
                b: sb,
                mann_whitney: mann_whitney_u(&values[0], &values[1], alt)?,
                auc: roc_auc(&values[0], &values[1])?,
                cohens_d_pooled: cohens_d(sa, sb, DVariant::Pooled)?,
            })
        }
        _ => Err(StatsError::InvalidInput(
            "expected header `a,b` or `group,value`".into(),
        )),
    }
}

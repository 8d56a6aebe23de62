//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use attnguard_core::stats::Alternative;

/// Mid-rank of `values[i]` by direct counting.
pub fn midrank(values: &[f64], i: usize) -> f64 {
    let below = values.iter().filter(|&&v| v < values[i]).count() as f64;
    let equal = values.iter().filter(|&&v| v == values[i]).count() as f64;
    below + (equal + 1.0) / 2.0
}

fn in_tail(stat: f64, observed: f64, center: f64, alt: Alternative) -> bool {
    const EPS: f64 = 1e-9;
    match alt {
        Alternative::Greater => stat >= observed - EPS,
        Alternative::Less => stat <= observed + EPS,
        Alternative::TwoSided => (stat - center).abs() >= (observed - center).abs() - EPS,
    }
}

/// Exact signed-rank p-value by visiting all 2^n sign patterns.
pub fn wilcoxon_brute(diffs: &[f64], alt: Alternative) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks: Vec<f64> = (0..abs.len()).map(|i| midrank(&abs, i)).collect();
    let observed: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let center = ranks.iter().sum::<f64>() / 2.0;
    let n = nz.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if in_tail(w, observed, center, alt) {
            hits += 1;
        }
    }
    (observed, hits as f64 / (1u64 << n) as f64)
}

/// U for `a` by counting every pair.
pub fn u_pairs(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn subsets(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::new(), f);
}

/// Exact Mann-Whitney p-value by visiting every assignment of the pooled
/// values to the two groups.
pub fn mann_whitney_brute(a: &[f64], b: &[f64], alt: Alternative) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let observed = u_pairs(a, b);
    let center = (a.len() * b.len()) as f64 / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    subsets(pooled.len(), a.len(), &mut |idx| {
        let ga: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
        let gb: Vec<f64> = (0..pooled.len())
            .filter(|i| !idx.contains(i))
            .map(|i| pooled[i])
            .collect();
        total += 1;
        if in_tail(u_pairs(&ga, &gb), observed, center, alt) {
            hits += 1;
        }
    });
    (observed, hits as f64 / total as f64)
}

pub fn auc_brute(pos: &[f64], neg: &[f64]) -> f64 {
    u_pairs(pos, neg) / (pos.len() * neg.len()) as f64
}

/// κ straight from the definition, `None` when chance agreement is 1.
pub fn kappa_direct(m: &[[u64; 2]; 2]) -> Option<f64> {
    let n = (m[0][0] + m[0][1] + m[1][0] + m[1][1]) as f64;
    if n == 0.0 {
        return None;
    }
    let po = (m[0][0] + m[1][1]) as f64 / n;
    let r0 = (m[0][0] + m[0][1]) as f64 / n;
    let r1 = (m[1][0] + m[1][1]) as f64 / n;
    let c0 = (m[0][0] + m[1][0]) as f64 / n;
    let c1 = (m[0][1] + m[1][1]) as f64 / n;
    let pe = r0 * c0 + r1 * c1;
    if pe == 1.0 {
        return None;
    }
    Some((po - pe) / (1.0 - pe))
}

//! Exact stationary distribution of a small cluster, by enumerating every
//! occupancy vector `(n_0, ..., n_B)` of `N` identical servers.

use std::collections::HashMap;

use lbmf_core::PolicyKind;
use nalgebra::{DMatrix, DVector};

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn states(n: usize, b: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in 0..=left {
            cur.push(x);
            rec(left - x, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, b + 1, &mut Vec::new(), &mut out);
    out
}

/// Probability that an arrival joins a length-`i` server, for every `i`.
/// Index `b` is a loss.
fn dispatch(kind: PolicyKind, mpl: usize, s: &[usize]) -> Vec<f64> {
    let n: usize = s.iter().sum();
    let nf = n as f64;
    let b = s.len() - 1;
    let random: Vec<f64> = s.iter().map(|&c| c as f64 / nf).collect();
    let below = |m: usize| -> usize { s[..m].iter().sum() };
    match kind {
        PolicyKind::Random | PolicyKind::JsqD(1) => random,
        PolicyKind::Jiq => {
            if s[0] > 0 {
                let mut f = vec![0.0; b + 1];
                f[0] = 1.0;
                f
            } else {
                random
            }
        }
        PolicyKind::Jbt => {
            let y = below(mpl);
            if y == 0 {
                random
            } else {
                (0..=b)
                    .map(|i| if i < mpl { s[i] as f64 / y as f64 } else { 0.0 })
                    .collect()
            }
        }
        PolicyKind::Jsq => {
            let lvl = s.iter().position(|&c| c > 0).unwrap();
            let mut f = vec![0.0; b + 1];
            f[lvl] = 1.0;
            f
        }
        PolicyKind::JsqD(d) => {
            let d = (d as usize).min(n);
            let tail = |i: usize| -> usize { s[i..].iter().sum() };
            (0..=b)
                .map(|i| {
                    let next = if i < b { tail(i + 1) } else { 0 };
                    (binom(tail(i), d) - binom(next, d)) / binom(n, d)
                })
                .collect()
        }
    }
}

/// Expected fraction of servers at each length, `0..=b`, in stationarity.
pub fn stationary_occupancy(
    kind: PolicyKind,
    mpl: usize,
    n: usize,
    b: usize,
    lambda: f64,
    mu: f64,
) -> Vec<f64> {
    let all = states(n, b);
    let index: HashMap<Vec<usize>, usize> = all
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    let m = all.len();
    let mut q = DMatrix::<f64>::zeros(m, m);
    for (from, s) in all.iter().enumerate() {
        let f = dispatch(kind, mpl, s);
        for i in 0..b {
            let r = n as f64 * lambda * f[i];
            if r > 0.0 {
                let mut t = s.clone();
                t[i] -= 1;
                t[i + 1] += 1;
                q[(from, index[&t])] += r;
            }
        }
        for i in 1..=b {
            let r = mu * s[i] as f64;
            if r > 0.0 {
                let mut t = s.clone();
                t[i] -= 1;
                t[i - 1] += 1;
                q[(from, index[&t])] += r;
            }
        }
        let out: f64 = q.row(from).iter().sum();
        q[(from, from)] = -out;
    }
    // pi Q = 0 with sum(pi) = 1: transpose and swap one balance row for the
    // normalization.
    let mut a = q.transpose();
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let pi = a.lu().solve(&rhs).expect("irreducible chain");
    let mut occ = vec![0.0; b + 1];
    for (p, s) in pi.iter().zip(&all) {
        for i in 0..=b {
            occ[i] += p * s[i] as f64 / n as f64;
        }
    }
    occ
}

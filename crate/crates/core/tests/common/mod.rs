#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gendep::corpus::is_projective;
use gendep::hpyp::Symbol;
use gendep::model::{Derivation, GenerativeModel};
use gendep::transition::{Configuration, DepTree, Transition};

/// Every projective tree over `n` words with a single root dependent.
pub fn projective_trees(n: usize) -> Vec<DepTree> {
    let mut out = Vec::new();
    let mut heads = vec![0usize; n];
    fn rec(i: usize, n: usize, heads: &mut Vec<usize>, out: &mut Vec<DepTree>) {
        if i == n {
            if let Ok(t) = DepTree::from_heads(heads.clone()) {
                if is_projective(&t) {
                    out.push(t);
                }
            }
            return;
        }
        for h in 0..=n {
            if h != i + 1 {
                heads[i] = h;
                rec(i + 1, n, heads, out);
            }
        }
    }
    rec(0, n, &mut heads, &mut out);
    out
}

/// A self-contained arc-standard machine, independent of the library's.
#[derive(Clone)]
struct Machine {
    stack: Vec<usize>,
    next: usize,
    heads: Vec<usize>,
}

/// Brute force: all unlabelled arc-standard derivations of `n` words, keyed
/// by the head vector they build. The root shift is excluded.
pub fn all_derivations(n: usize) -> BTreeMap<Vec<usize>, BTreeSet<Vec<Transition>>> {
    let mut out: BTreeMap<Vec<usize>, BTreeSet<Vec<Transition>>> = BTreeMap::new();
    let m = Machine {
        stack: vec![0],
        next: 1,
        heads: vec![usize::MAX; n + 1],
    };
    let mut path = Vec::new();
    fn rec(
        m: &Machine,
        n: usize,
        path: &mut Vec<Transition>,
        out: &mut BTreeMap<Vec<usize>, BTreeSet<Vec<Transition>>>,
    ) {
        if m.next > n && m.stack == [0] {
            out.entry(m.heads[1..].to_vec()).or_default().insert(path.clone());
            return;
        }
        let k = m.stack.len();
        if m.next <= n {
            let mut c = m.clone();
            c.stack.push(c.next);
            c.next += 1;
            path.push(Transition::Shift);
            rec(&c, n, path, out);
            path.pop();
        }
        if k >= 2 && m.stack[k - 2] != 0 {
            let mut c = m.clone();
            let s1 = c.stack.pop().unwrap();
            let s2 = c.stack.pop().unwrap();
            c.heads[s2] = s1;
            c.stack.push(s1);
            path.push(Transition::LeftArc(0));
            rec(&c, n, path, out);
            path.pop();
        }
        if k >= 2 && (m.stack[k - 2] != 0 || m.next > n) {
            let mut c = m.clone();
            let s1 = c.stack.pop().unwrap();
            c.heads[s1] = *c.stack.last().unwrap();
            path.push(Transition::RightArc(0));
            rec(&c, n, path, out);
            path.pop();
        }
    }
    rec(&m, n, &mut path, &mut out);
    out
}

/// The exhaustive-search argmax and the total probability of a sentence
/// over all derivations and tag sequences, by depth-first enumeration.
pub struct Exhaustive {
    pub best: f64,
    pub best_derivation: Option<Derivation>,
    pub marginal: Option<f64>,
    pub leaves: Vec<(Vec<Symbol>, Vec<Transition>, f64)>,
}

/// Enumerates every derivation of `words`. With `prune` only the argmax is
/// found (branch and bound on the running log probability, which can only
/// decrease); otherwise every leaf is kept and the marginal is summed.
pub fn exhaustive(model: &GenerativeModel, words: &[Symbol], prune: bool) -> Exhaustive {
    let n = words.len();
    let mut c = Configuration::initial();
    c.apply_in_place(Transition::Shift, n).unwrap();
    let mut ex = Exhaustive {
        best: f64::NEG_INFINITY,
        best_derivation: None,
        marginal: None,
        leaves: Vec::new(),
    };
    let mut tags = Vec::new();
    let mut ts = Vec::new();
    let mut sum = 0.0;
    search(model, words, &c, &mut tags, &mut ts, 0.0, prune, &mut ex, &mut sum);
    if !prune {
        ex.marginal = Some(sum.ln());
    }
    ex
}

#[allow(clippy::too_many_arguments)]
fn search(
    model: &GenerativeModel,
    words: &[Symbol],
    c: &Configuration,
    tags: &mut Vec<Symbol>,
    ts: &mut Vec<Transition>,
    lp: f64,
    prune: bool,
    ex: &mut Exhaustive,
    sum: &mut f64,
) {
    let n = words.len();
    if prune && lp < ex.best {
        return;
    }
    if c.is_terminal(n) {
        if !prune {
            *sum += lp.exp();
            ex.leaves.push((tags.clone(), ts.clone(), lp));
        }
        if lp > ex.best {
            ex.best = lp;
            ex.best_derivation = Some(Derivation::new(words.to_vec(), tags.clone(), ts.clone()).unwrap());
        }
        return;
    }
    let f = model.features(c, words, tags);
    let legal = c.legal_transitions(n);
    for (t, p) in model.transition_probs(&f, c.generative_moves()) {
        if !legal.allows(t.kind()) || p <= 0.0 {
            continue;
        }
        let next = c.apply(t, n).unwrap();
        ts.push(t);
        if t == Transition::Shift {
            let word = words[c.buffer() - 1];
            for (tag, pt) in model.tag_probs(&f).into_iter().enumerate() {
                let pw = model.word_prob(&f, tag as Symbol, word).unwrap();
                tags.push(tag as Symbol);
                search(model, words, &next, tags, ts, lp + p.ln() + pt.ln() + pw.ln(), prune, ex, sum);
                tags.pop();
            }
        } else {
            search(model, words, &next, tags, ts, lp + p.ln(), prune, ex, sum);
        }
        ts.pop();
    }
}

/// Least-squares polynomial fit of the given degree; returns the RMSE.
#[allow(clippy::needless_range_loop)]
pub fn poly_fit_rmse(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
    let m = degree + 1;
    // Normal equations on x scaled to [0, 1] for conditioning.
    let scale = xs.iter().copied().fold(1.0, f64::max);
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&x, &y) in xs.iter().zip(ys) {
        let x = x / scale;
        let pows: Vec<f64> = (0..m).map(|k| x.powi(k as i32)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += pows[i] * pows[j];
            }
            a[i][m] += pows[i] * y;
        }
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        for row in 0..m {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..=m {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let x = x / scale;
            let fit: f64 = coef.iter().enumerate().map(|(k, c)| c * x.powi(k as i32)).sum();
            (y - fit).powi(2)
        })
        .sum();
    (sse / xs.len() as f64).sqrt()
}

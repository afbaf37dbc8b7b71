//! Linear-chain CRF scoring over emission matrices `[T, L]` (row-major) and a
//! transition matrix `[(L + 2), (L + 2)]` indexed `[from][to]`, where row `L`
//! is the begin-of-sequence state and column `L + 1` the end-of-sequence
//! state.

use crate::nn::logsumexp;

#[inline]
fn bos(l: usize) -> usize {
    l
}

#[inline]
fn eos(l: usize) -> usize {
    l + 1
}

/// Score of one tag path including the boundary transitions.
pub fn path_score(emissions: &[f64], transitions: &[f64], n_tags: usize, path: &[usize]) -> f64 {
    let l = n_tags;
    let w = l + 2;
    debug_assert_eq!(emissions.len(), path.len() * l);
    let mut s = 0.0;
    let mut prev = bos(l);
    for (t, &y) in path.iter().enumerate() {
        s += transitions[prev * w + y] + emissions[t * l + y];
        prev = y;
    }
    s + transitions[prev * w + eos(l)]
}

fn forward_table(emissions: &[f64], transitions: &[f64], l: usize) -> Vec<f64> {
    let w = l + 2;
    let t_len = emissions.len() / l;
    let mut alpha = vec![0.0; t_len * l];
    for j in 0..l {
        alpha[j] = transitions[bos(l) * w + j] + emissions[j];
    }
    let mut buf = vec![0.0; l];
    for t in 1..t_len {
        for j in 0..l {
            for i in 0..l {
                buf[i] = alpha[(t - 1) * l + i] + transitions[i * w + j];
            }
            alpha[t * l + j] = logsumexp(&buf) + emissions[t * l + j];
        }
    }
    alpha
}

fn backward_table(emissions: &[f64], transitions: &[f64], l: usize) -> Vec<f64> {
    let w = l + 2;
    let t_len = emissions.len() / l;
    let mut beta = vec![0.0; t_len * l];
    for i in 0..l {
        beta[(t_len - 1) * l + i] = transitions[i * w + eos(l)];
    }
    let mut buf = vec![0.0; l];
    for t in (0..t_len - 1).rev() {
        for i in 0..l {
            for j in 0..l {
                buf[j] = transitions[i * w + j] + emissions[(t + 1) * l + j] + beta[(t + 1) * l + j];
            }
            beta[t * l + i] = logsumexp(&buf);
        }
    }
    beta
}

/// log Z by the forward algorithm.
pub fn log_partition(emissions: &[f64], transitions: &[f64], n_tags: usize) -> f64 {
    let l = n_tags;
    let w = l + 2;
    let t_len = emissions.len() / l;
    assert!(t_len >= 1, "CRF needs at least one position");
    let alpha = forward_table(emissions, transitions, l);
    let last: Vec<f64> = (0..l)
        .map(|j| alpha[(t_len - 1) * l + j] + transitions[j * w + eos(l)])
        .collect();
    logsumexp(&last)
}

/// Highest-scoring path. Ties go to the lower tag index, both when choosing
/// back-pointers and the final state.
pub fn viterbi(emissions: &[f64], transitions: &[f64], n_tags: usize) -> (Vec<usize>, f64) {
    let l = n_tags;
    let w = l + 2;
    let t_len = emissions.len() / l;
    assert!(t_len >= 1, "CRF needs at least one position");
    let mut delta: Vec<f64> = (0..l)
        .map(|j| transitions[bos(l) * w + j] + emissions[j])
        .collect();
    let mut back = vec![0usize; t_len * l];
    for t in 1..t_len {
        let mut next = vec![0.0; l];
        for j in 0..l {
            let mut best = 0;
            let mut best_s = f64::NEG_INFINITY;
            for (i, d) in delta.iter().enumerate() {
                let s = d + transitions[i * w + j];
                if s > best_s {
                    best_s = s;
                    best = i;
                }
            }
            next[j] = best_s + emissions[t * l + j];
            back[t * l + j] = best;
        }
        delta = next;
    }
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (j, d) in delta.iter().enumerate() {
        let s = d + transitions[j * w + eos(l)];
        if s > best_s {
            best_s = s;
            best = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = best;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    (path, best_s)
}

/// Negative log-likelihood of `gold` and its gradients with respect to the
/// emissions and the transition matrix.
pub fn nll_with_grad(
    emissions: &[f64],
    transitions: &[f64],
    n_tags: usize,
    gold: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let l = n_tags;
    let w = l + 2;
    let t_len = gold.len();
    assert_eq!(emissions.len(), t_len * l, "emission/tag length mismatch");
    let alpha = forward_table(emissions, transitions, l);
    let beta = backward_table(emissions, transitions, l);
    let log_z = {
        let last: Vec<f64> = (0..l)
            .map(|j| alpha[(t_len - 1) * l + j] + transitions[j * w + eos(l)])
            .collect();
        logsumexp(&last)
    };
    let nll = log_z - path_score(emissions, transitions, l, gold);

    let mut d_em = vec![0.0; t_len * l];
    let mut d_tr = vec![0.0; w * w];
    for t in 0..t_len {
        for j in 0..l {
            d_em[t * l + j] = (alpha[t * l + j] + beta[t * l + j] - log_z).exp();
        }
    }
    for j in 0..l {
        d_tr[bos(l) * w + j] += d_em[j];
        d_tr[j * w + eos(l)] += d_em[(t_len - 1) * l + j];
    }
    for t in 1..t_len {
        for i in 0..l {
            for j in 0..l {
                let lp = alpha[(t - 1) * l + i]
                    + transitions[i * w + j]
                    + emissions[t * l + j]
                    + beta[t * l + j]
                    - log_z;
                d_tr[i * w + j] += lp.exp();
            }
        }
    }
    let mut prev = bos(l);
    for (t, &y) in gold.iter().enumerate() {
        d_em[t * l + y] -= 1.0;
        d_tr[prev * w + y] -= 1.0;
        prev = y;
    }
    d_tr[prev * w + eos(l)] -= 1.0;
    (nll, d_em, d_tr)
}

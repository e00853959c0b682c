//! Linear-chain CRF: Viterbi decoding and the forward-backward gradient.

use serde::{Deserialize, Serialize};

use super::TagInventory;
use crate::error::{MinerError, Result};

/// Transition scores `transition[from][to]` plus start/end vectors.
/// Masked (forbidden) entries are `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParameters {
    pub transition: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParameters {
    pub fn zeros(n_tags: usize) -> Self {
        CrfParameters {
            transition: vec![vec![0.0; n_tags]; n_tags],
            start: vec![0.0; n_tags],
            end: vec![0.0; n_tags],
        }
    }

    pub fn n_tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.start.len();
        if self.end.len() != n || self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return Err(MinerError::Dimension(format!(
                "CRF parameters are not consistently {n}-dimensional"
            )));
        }
        let bad = |x: &f64| x.is_nan() || *x == f64::INFINITY;
        if self.start.iter().chain(&self.end).chain(self.transition.iter().flatten()).any(bad) {
            return Err(MinerError::Dimension("CRF parameters contain NaN or +inf".into()));
        }
        Ok(())
    }

    /// Copy with BIO-illegal transitions (and illegal first tags) set to `-inf`.
    pub fn masked(&self, inventory: &TagInventory) -> Self {
        let (allowed, start_ok) = inventory.transition_mask();
        let mut out = self.clone();
        for (from, row) in out.transition.iter_mut().enumerate() {
            for (to, v) in row.iter_mut().enumerate() {
                if !allowed[from][to] {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        for (to, v) in out.start.iter_mut().enumerate() {
            if !start_ok[to] {
                *v = f64::NEG_INFINITY;
            }
        }
        out
    }
}

fn check_emissions(emissions: &[Vec<f64>], crf: &CrfParameters) -> Result<usize> {
    crf.check()?;
    let n = crf.n_tags();
    if emissions.is_empty() {
        return Err(MinerError::Dimension("viterbi needs at least one token".into()));
    }
    if let Some((t, row)) = emissions.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(MinerError::Dimension(format!(
            "token {t} has {} emission scores, CRF has {n} tags",
            row.len()
        )));
    }
    Ok(n)
}

/// Total score of a tag path.
pub fn path_score(emissions: &[Vec<f64>], crf: &CrfParameters, path: &[usize]) -> f64 {
    let mut s = crf.start[path[0]] + emissions[0][path[0]];
    for t in 1..path.len() {
        s += crf.transition[path[t - 1]][path[t]] + emissions[t][path[t]];
    }
    s + crf.end[path[path.len() - 1]]
}

/// Highest-scoring tag path. Among equal scores the lowest tag index wins,
/// both for the final tag and at every backtrack step.
pub fn viterbi_decode(emissions: &[Vec<f64>], crf: &CrfParameters) -> Result<Vec<usize>> {
    let n = check_emissions(emissions, crf)?;
    let len = emissions.len();
    let mut score: Vec<f64> = (0..n).map(|y| crf.start[y] + emissions[0][y]).collect();
    let mut back = vec![vec![0usize; n]; len];
    for t in 1..len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for y in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (p, s) in score.iter().enumerate() {
                let v = s + crf.transition[p][y];
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            next[y] = best + emissions[t][y];
            back[t][y] = arg;
        }
        score = next;
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for y in 0..n {
        let v = score[y] + crf.end[y];
        if v > best {
            best = v;
            last = y;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gradient of the CRF negative log-likelihood.
#[derive(Debug, Clone)]
pub struct CrfGradient {
    pub nll: f64,
    pub emissions: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

type Lattice = Vec<Vec<f64>>;

fn forward_backward(emissions: &[Vec<f64>], crf: &CrfParameters, n: usize) -> (Lattice, Lattice, f64) {
    let len = emissions.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; n]; len];
    for y in 0..n {
        alpha[0][y] = crf.start[y] + emissions[0][y];
    }
    for t in 1..len {
        for y in 0..n {
            alpha[t][y] = logsumexp((0..n).map(|p| alpha[t - 1][p] + crf.transition[p][y])) + emissions[t][y];
        }
    }
    let mut beta = vec![vec![f64::NEG_INFINITY; n]; len];
    beta[len - 1].clone_from(&crf.end);
    for t in (0..len - 1).rev() {
        for y in 0..n {
            beta[t][y] = logsumexp((0..n).map(|q| crf.transition[y][q] + emissions[t + 1][q] + beta[t + 1][q]));
        }
    }
    let log_z = logsumexp((0..n).map(|y| alpha[len - 1][y] + crf.end[y]));
    (alpha, beta, log_z)
}

/// `-log p(gold | emissions)` and its gradient, by forward-backward.
pub fn crf_nll(emissions: &[Vec<f64>], crf: &CrfParameters, gold: &[usize]) -> Result<CrfGradient> {
    let n = check_emissions(emissions, crf)?;
    let len = emissions.len();
    if gold.len() != len || gold.iter().any(|g| *g >= n) {
        return Err(MinerError::Dimension("gold path does not match emissions".into()));
    }
    let gold_score = path_score(emissions, crf, gold);
    if !gold_score.is_finite() {
        return Err(MinerError::Data("gold tag path is forbidden by the CRF mask".into()));
    }
    let (alpha, beta, log_z) = forward_backward(emissions, crf, n);

    let mut d_em = vec![vec![0.0; n]; len];
    let mut d_tr = vec![vec![0.0; n]; n];
    let mut d_start = vec![0.0; n];
    let mut d_end = vec![0.0; n];
    for t in 0..len {
        for y in 0..n {
            let m = (alpha[t][y] + beta[t][y] - log_z).exp();
            d_em[t][y] = m;
            if t == 0 {
                d_start[y] = m;
            }
            if t == len - 1 {
                d_end[y] = m;
            }
        }
    }
    for t in 1..len {
        for p in 0..n {
            if alpha[t - 1][p] == f64::NEG_INFINITY {
                continue;
            }
            for q in 0..n {
                let lp = alpha[t - 1][p] + crf.transition[p][q] + emissions[t][q] + beta[t][q] - log_z;
                d_tr[p][q] += lp.exp();
            }
        }
    }
    for t in 0..len {
        d_em[t][gold[t]] -= 1.0;
        if t > 0 {
            d_tr[gold[t - 1]][gold[t]] -= 1.0;
        }
    }
    d_start[gold[0]] -= 1.0;
    d_end[gold[len - 1]] -= 1.0;
    Ok(CrfGradient {
        nll: log_z - gold_score,
        emissions: d_em,
        transition: d_tr,
        start: d_start,
        end: d_end,
    })
}

/// Per-token marginal probabilities `p(y_t = y | x)`.
pub fn crf_marginals(emissions: &[Vec<f64>], crf: &CrfParameters) -> Result<Vec<Vec<f64>>> {
    let n = check_emissions(emissions, crf)?;
    let (alpha, beta, log_z) = forward_backward(emissions, crf, n);
    Ok(alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (0..n).map(|y| (a[y] + b[y] - log_z).exp()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, len: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, CrfParameters) {
        let mut r = || rng.gen_range(-2.0..2.0);
        let em = (0..len).map(|_| (0..n).map(|_| r()).collect()).collect();
        let crf = CrfParameters {
            transition: (0..n).map(|_| (0..n).map(|_| r()).collect()).collect(),
            start: (0..n).map(|_| r()).collect(),
            end: (0..n).map(|_| r()).collect(),
        };
        (em, crf)
    }

    fn all_paths(n: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| (0..n).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let len = rng.gen_range(1..=5);
            let (em, crf) = random(n, len, &mut rng);
            let best = all_paths(n, len)
                .iter()
                .map(|p| path_score(&em, &crf, p))
                .fold(f64::NEG_INFINITY, f64::max);
            let path = viterbi_decode(&em, &crf).unwrap();
            assert_eq!(path_score(&em, &crf, &path), best);
        }
    }

    #[test]
    fn single_token_and_zero_transitions() {
        let crf = CrfParameters {
            transition: vec![vec![0.0; 3]; 3],
            start: vec![0.0, 1.0, 0.0],
            end: vec![0.0, 0.0, 2.0],
        };
        assert_eq!(viterbi_decode(&[vec![1.5, 0.0, 0.0]], &crf).unwrap(), vec![2]);
        let zero = CrfParameters::zeros(3);
        let em = vec![vec![0.1, 0.5, 0.2], vec![0.9, 0.0, 0.0], vec![0.0, 0.0, 0.3]];
        assert_eq!(viterbi_decode(&em, &zero).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let em = vec![vec![0.0; 3]; 3];
        assert_eq!(viterbi_decode(&em, &CrfParameters::zeros(3)).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn dimension_errors() {
        let crf = CrfParameters::zeros(3);
        assert!(matches!(viterbi_decode(&[], &crf), Err(MinerError::Dimension(_))));
        assert!(matches!(viterbi_decode(&[vec![0.0; 2]], &crf), Err(MinerError::Dimension(_))));
    }

    #[test]
    fn nll_matches_enumeration_and_gradient_is_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (em, crf) = random(3, 4, &mut rng);
            let gold = vec![rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)];
            let z = logsumexp(all_paths(3, 4).iter().map(|p| path_score(&em, &crf, p)));
            let g = crf_nll(&em, &crf, &gold).unwrap();
            assert!((g.nll - (z - path_score(&em, &crf, &gold))).abs() < 1e-9);
            let eps = 1e-6;
            for (i, j) in [(0, 0), (1, 2), (2, 1)] {
                let mut plus = crf.clone();
                plus.transition[i][j] += eps;
                let num = (crf_nll(&em, &plus, &gold).unwrap().nll - g.nll) / eps;
                assert!((num - g.transition[i][j]).abs() < 1e-4);
            }
            let mut em2 = em.clone();
            em2[2][1] += eps;
            let num = (crf_nll(&em2, &crf, &gold).unwrap().nll - g.nll) / eps;
            assert!((num - g.emissions[2][1]).abs() < 1e-4);
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, crf) = random(4, 6, &mut rng);
        for row in crf_marginals(&em, &crf).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

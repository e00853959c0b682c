//! Document-level splits for the three evaluation protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::Corpus;
use crate::error::{MinerError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub name: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if corpus.get(id).is_none() {
                return Err(MinerError::Config(format!("split `{}` names unknown doc `{id}`", self.name)));
            }
            if !seen.insert(id) {
                return Err(MinerError::Config(format!("split `{}` repeats doc `{id}`", self.name)));
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`.
/// Remainder ties go to the lower index.
pub(crate) fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum::<usize>());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Per-group partition sizes: largest remainder inside each group, every
/// partition non-empty for groups with at least `fractions.len()` members,
/// then rebalanced so the column totals match the global apportionment.
fn stratified_counts(group_sizes: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let k = fractions.len();
    let mut rows: Vec<Vec<usize>> = group_sizes
        .iter()
        .map(|&n| {
            let mut row = largest_remainder(n, fractions);
            if n >= k {
                while let Some(empty) = row.iter().position(|&c| c == 0) {
                    let donor = (0..k).max_by_key(|&j| (row[j], std::cmp::Reverse(j))).unwrap();
                    row[donor] -= 1;
                    row[empty] += 1;
                }
            }
            row
        })
        .collect();

    let total: usize = group_sizes.iter().sum();
    let target = largest_remainder(total, fractions);
    let min_of = |n: usize| if n >= k { 1 } else { 0 };
    loop {
        let col: Vec<usize> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
        let over = (0..k).find(|&j| col[j] > target[j]);
        let under = (0..k).find(|&j| col[j] < target[j]);
        let (Some(p), Some(q)) = (over, under) else { break };
        let donor = (0..rows.len())
            .filter(|&g| rows[g][p] > min_of(group_sizes[g]))
            .max_by_key(|&g| (rows[g][p], std::cmp::Reverse(g)));
        match donor {
            Some(g) => {
                rows[g][p] -= 1;
                rows[g][q] += 1;
            }
            None => break,
        }
    }
    rows
}

fn shuffled(mut ids: Vec<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    ids.sort();
    ids.shuffle(rng);
    ids
}

/// Stratified 60/20/20 split by municipality.
///
/// With `strict`, every municipality must have at least three documents so
/// it can appear in all partitions.
pub fn make_global_split(corpus: &Corpus, seed: u64, strict: bool) -> Result<CorpusSplit> {
    if corpus.is_empty() {
        return Err(MinerError::Config("cannot split an empty corpus".into()));
    }
    let munis = corpus.municipalities();
    let groups: Vec<Vec<String>> = munis.iter().map(|m| corpus.doc_ids_of(m)).collect();
    if strict {
        if let Some((m, g)) = munis.iter().zip(&groups).find(|(_, g)| g.len() < 3) {
            return Err(MinerError::Config(format!(
                "municipality `{m}` has {} documents; strict stratification needs 3",
                g.len()
            )));
        }
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let counts = stratified_counts(&sizes, &[0.6, 0.2, 0.2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = CorpusSplit {
        name: format!("global-seed{seed}"),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (ids, c) in groups.into_iter().zip(counts) {
        let ids = shuffled(ids, &mut rng);
        split.train.extend_from_slice(&ids[..c[0]]);
        split.val.extend_from_slice(&ids[c[0]..c[0] + c[1]]);
        split.test.extend_from_slice(&ids[c[0] + c[1]..]);
    }
    Ok(split)
}

/// One split per municipality: its documents are the test set, the rest is
/// split 80/20 into train/val stratified by municipality.
pub fn make_leave_one_out(corpus: &Corpus, seed: u64) -> Result<Vec<CorpusSplit>> {
    let munis = corpus.municipalities();
    if munis.len() < 2 {
        return Err(MinerError::Config(
            "leave-one-out needs at least two municipalities".into(),
        ));
    }
    munis
        .iter()
        .map(|held_out| leave_one_out_for(corpus, held_out, seed))
        .collect()
}

pub(crate) fn leave_one_out_for(corpus: &Corpus, held_out: &str, seed: u64) -> Result<CorpusSplit> {
    let others: Vec<String> = corpus
        .municipalities()
        .into_iter()
        .filter(|m| m != held_out)
        .collect();
    let groups: Vec<Vec<String>> = others.iter().map(|m| corpus.doc_ids_of(m)).collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let counts = stratified_counts(&sizes, &[0.8, 0.2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = CorpusSplit {
        name: format!("loo-{held_out}"),
        train: Vec::new(),
        val: Vec::new(),
        test: corpus.doc_ids_of(held_out),
    };
    for (ids, c) in groups.into_iter().zip(counts) {
        let ids = shuffled(ids, &mut rng);
        split.train.extend_from_slice(&ids[..c[0]]);
        split.val.extend_from_slice(&ids[c[0]..]);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementalStep {
    pub k: usize,
    /// The leave-one-out split for the target municipality.
    pub base: CorpusSplit,
    /// Target-municipality documents added to training at this step.
    pub extra_train: Vec<String>,
    /// Fixed across all steps.
    pub test: Vec<String>,
}

/// Nested series k = 0..=k_max: step k adds the first k documents of a
/// seeded ordering of the target municipality; the test set is every target
/// document never used by any step.
pub fn make_incremental_series(
    corpus: &Corpus,
    target: &str,
    k_max: usize,
    seed: u64,
) -> Result<Vec<IncrementalStep>> {
    let ids = corpus.doc_ids_of(target);
    if ids.is_empty() {
        return Err(MinerError::Config(format!("unknown municipality `{target}`")));
    }
    if k_max >= ids.len() {
        return Err(MinerError::Config(format!(
            "k_max = {k_max} but `{target}` has only {} documents",
            ids.len()
        )));
    }
    let base = leave_one_out_for(corpus, target, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let order = shuffled(ids, &mut rng);
    let test = order[k_max..].to_vec();
    Ok((0..=k_max)
        .map(|k| IncrementalStep {
            k,
            base: base.clone(),
            extra_train: order[..k].to_vec(),
            test: test.clone(),
        })
        .collect())
}

//! Label-order enumeration for the permutation-averaged protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Hard cap on exhaustive enumeration: 5 labels, 120 orderings. The
/// protocol does not extend to large option counts; sample beyond this.
pub const ALL_PERMUTATIONS_CAP: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy")]
pub enum PermutationPolicy {
    /// All n! orderings in lexicographic index order.
    All,
    /// k distinct orderings drawn reproducibly from the given seed.
    Sample { k: usize, seed: u64 },
}

/// Enumerates label orderings (as index permutations) under the policy.
pub fn enumerate_permutations(
    n_labels: usize,
    policy: &PermutationPolicy,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if n_labels < 2 {
        return Err(EvalError::InvalidPlan(format!(
            "need at least 2 labels, got {n_labels}"
        )));
    }
    match policy {
        PermutationPolicy::All => {
            let total = factorial(n_labels);
            if total > ALL_PERMUTATIONS_CAP {
                return Err(EvalError::CapExceeded {
                    n_labels,
                    total,
                    cap: ALL_PERMUTATIONS_CAP,
                });
            }
            Ok(lexicographic(n_labels))
        }
        PermutationPolicy::Sample { k, seed } => {
            let total = factorial(n_labels);
            if *k == 0 || *k > total {
                return Err(EvalError::InvalidPlan(format!(
                    "cannot sample {k} distinct orderings of {n_labels} labels ({total} exist)"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::with_capacity(*k);
            while out.len() < *k {
                let mut perm: Vec<usize> = (0..n_labels).collect();
                perm.shuffle(&mut rng);
                if seen.insert(perm.clone()) {
                    out.push(perm);
                }
            }
            Ok(out)
        }
    }
}

/// n! saturating at usize::MAX; callers only compare against small caps.
pub fn factorial(n: usize) -> usize {
    (2..=n)
        .try_fold(1usize, |acc, i| acc.checked_mul(i))
        .unwrap_or(usize::MAX)
}

fn lexicographic(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    while next_permutation(&mut current) {
        out.push(current.clone());
    }
    out
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

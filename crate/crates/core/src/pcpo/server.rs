//! Server-side steps: gradient averaging, neighbourhood pruning and
//! reinitialization of the global policies.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::stats::pairwise_sum_matrices;

/// One sorted agent list per agent.
pub type Neighborhoods = Vec<Vec<usize>>;

pub fn all_connected(n: usize) -> Neighborhoods {
    vec![(0..n).collect(); n]
}

pub fn singletons(n: usize) -> Neighborhoods {
    (0..n).map(|i| vec![i]).collect()
}

/// Keeps `j ∈ prev[i]` when `|Ĉ_j - Ĉ_i| ≤ Δ_l / 2`. An agent always keeps
/// itself, even with a non-finite estimate.
pub fn update_neighborhood(costs: &[f64], prev: &Neighborhoods, gap_scale: f64) -> Neighborhoods {
    let threshold = gap_scale / 2.0;
    prev.iter()
        .enumerate()
        .map(|(i, members)| {
            members
                .iter()
                .copied()
                .filter(|&j| j == i || (costs[j] - costs[i]).abs() <= threshold)
                .collect()
        })
        .collect()
}

/// Mean of the members' gradients, summed pairwise in ascending agent order.
/// `gradients[j]` is `None` for agents that submitted nothing.
pub fn aggregate_gradients(gradients: &[Option<Mat>], members: &[usize]) -> Result<Mat> {
    if members.is_empty() {
        return Err(Error::Protocol("empty neighbourhood".into()));
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut terms = Vec::with_capacity(sorted.len());
    for &j in &sorted {
        match gradients.get(j).and_then(Option::as_ref) {
            Some(g) => terms.push(g.clone()),
            None => {
                return Err(Error::Protocol(format!("missing gradient from agent {j}")));
            }
        }
    }
    let shape = terms[0].shape();
    if terms.iter().any(|g| g.shape() != shape) {
        return Err(Error::Protocol("gradient shapes differ".into()));
    }
    Ok(pairwise_sum_matrices(&terms).expect("non-empty") / terms.len() as f64)
}

/// For every agent, the local policy of the cheapest neighbour (lowest index
/// on ties).
pub fn reinitialize(local: &[Mat], costs: &[f64], neighborhoods: &Neighborhoods) -> Result<Vec<Mat>> {
    neighborhoods
        .iter()
        .enumerate()
        .map(|(i, members)| {
            let mut best: Option<usize> = None;
            for &j in members {
                let better = match best {
                    None => true,
                    Some(b) => costs[j] < costs[b] || (costs[j] == costs[b] && j < b),
                };
                if better {
                    best = Some(j);
                }
            }
            best.map(|j| local[j].clone())
                .ok_or_else(|| Error::Protocol(format!("agent {i} has an empty neighbourhood")))
        })
        .collect()
}

//! Subset-selection strategies for the next tournament query.
//!
//! Random draws happen in a fixed order per strategy:
//! - `uniform`: one K-of-N sample.
//! - `qbc`: R proposal samples, then C committee vectors (N normals each,
//!   item order).
//! - `mckg`: R proposal samples, then one `u64` rollout key. Rollout `m` of
//!   proposal `p` draws from its own stream `p * M + m` under that key, so
//!   the rollouts can run in parallel without changing the result.
//!
//! `variance_topk` and `boundary` never touch the rng.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{argsort_desc, cutoff_depth};
use crate::model::{RankingObservation, Strategy, TournamentConfig, UtilityState};
use crate::pl::{self, FitOptions};
use crate::rng::rollout_rng;

/// Refit budget for each hypothetical MC-KG rollout.
pub const ROLLOUT_FIT_STEPS: usize = 25;

/// A candidate subset and its acquisition value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalSubset {
    /// Distinct, ascending.
    pub indices: Vec<usize>,
    pub score: f64,
}

/// Outcome of one selection: the chosen subset and everything scored on the
/// way there.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub chosen: ProposalSubset,
    pub proposals: Vec<ProposalSubset>,
}

impl Selection {
    fn single(indices: Vec<usize>, score: f64) -> Self {
        let chosen = ProposalSubset { indices, score };
        Selection {
            proposals: vec![chosen.clone()],
            chosen,
        }
    }

    /// Picks the first proposal with the maximal score.
    fn best_of(proposals: Vec<ProposalSubset>) -> Self {
        let mut best = 0;
        for (i, p) in proposals.iter().enumerate() {
            if p.score > proposals[best].score {
                best = i;
            }
        }
        Selection {
            chosen: proposals[best].clone(),
            proposals,
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::structural(format!("subset size {k} invalid for {n} candidates")));
    }
    Ok(())
}

pub fn select_uniform<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_k(n, k)?;
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// The K most uncertain candidates, ties to the lower index.
pub fn select_variance_topk(state: &UtilityState, k: usize) -> Result<Vec<usize>> {
    check_k(state.len(), k)?;
    let mut picked = argsort_desc(&state.sigma2);
    picked.truncate(k);
    picked.sort_unstable();
    Ok(picked)
}

/// The K candidates ranked closest to the shortlist boundary between ranks
/// `c` and `c + 1`, where `c = ceil(shortlist_fraction * N)`. Ties go to the
/// larger variance, then the lower index.
pub fn select_boundary(state: &UtilityState, k: usize, shortlist_fraction: f64) -> Result<Vec<usize>> {
    let n = state.len();
    check_k(n, k)?;
    let c = cutoff_depth(shortlist_fraction, n);
    if c < 1 || c >= n {
        return Err(Error::structural(format!(
            "shortlist fraction {shortlist_fraction} gives boundary {c} outside 1..{n}"
        )));
    }
    // rank r (0-based) sits |r - (c - 0.5)| from the boundary; doubled to stay integral
    let order = state.ranking();
    let twice_c = 2 * c as i64 - 1;
    let mut keyed: Vec<(i64, usize)> = order
        .iter()
        .enumerate()
        .map(|(rank, &item)| ((2 * rank as i64 - twice_c).abs(), item))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(state.sigma2[b.1].total_cmp(&state.sigma2[a.1]))
            .then(a.1.cmp(&b.1))
    });
    let mut picked: Vec<usize> = keyed.into_iter().take(k).map(|(_, i)| i).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Fraction of discordant pairs between two score vectors restricted to
/// `subset`, i.e. `(1 - tau) / 2` of the induced orderings.
fn kendall_distance(a: &[f64], b: &[f64], subset: &[usize]) -> f64 {
    let rank_of = |u: &[f64]| {
        let mut order = subset.to_vec();
        order.sort_by(|&x, &y| u[y].total_cmp(&u[x]).then(x.cmp(&y)));
        let mut pos = vec![0usize; subset.len()];
        for (p, item) in order.iter().enumerate() {
            let slot = subset.iter().position(|s| s == item).expect("member");
            pos[slot] = p;
        }
        pos
    };
    let pa = rank_of(a);
    let pb = rank_of(b);
    let k = subset.len();
    let mut discordant = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            if (pa[i] < pa[j]) != (pb[i] < pb[j]) {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (k * (k - 1) / 2) as f64
}

fn posterior_draw<R: Rng + ?Sized>(state: &UtilityState, rng: &mut R) -> Vec<f64> {
    state
        .u
        .iter()
        .zip(&state.sigma2)
        .map(|(m, v)| {
            let z: f64 = rng.sample(StandardNormal);
            m + v.sqrt() * z
        })
        .collect()
}

/// Query-by-committee: among R random subsets, the one on which C posterior
/// draws disagree most (mean pairwise Kendall distance).
pub fn select_qbc<R: Rng + ?Sized>(
    state: &UtilityState,
    k: usize,
    committee: usize,
    proposal_pool: usize,
    rng: &mut R,
) -> Result<Selection> {
    let n = state.len();
    check_k(n, k)?;
    if committee == 0 || proposal_pool == 0 {
        return Err(Error::structural("committee and proposal pool must be non-empty"));
    }
    let subsets = (0..proposal_pool)
        .map(|_| select_uniform(n, k, rng))
        .collect::<Result<Vec<_>>>()?;
    let members: Vec<Vec<f64>> = (0..committee).map(|_| posterior_draw(state, rng)).collect();
    let pairs = committee * (committee - 1) / 2;
    let proposals = subsets
        .into_iter()
        .map(|indices| {
            let score = if pairs == 0 {
                0.0
            } else {
                let mut total = 0.0;
                for a in 0..committee {
                    for b in a + 1..committee {
                        total += kendall_distance(&members[a], &members[b], &indices);
                    }
                }
                total / pairs as f64
            };
            ProposalSubset { indices, score }
        })
        .collect();
    Ok(Selection::best_of(proposals))
}

/// Monte-Carlo knowledge gradient: for each of R random subsets, the mean
/// drop in total posterior variance after appending one hypothetical
/// ranking sampled from the posterior and refitting from the current mode.
#[allow(clippy::too_many_arguments)]
pub fn select_mckg<R: Rng + ?Sized>(
    state: &UtilityState,
    observations: &[RankingObservation],
    k: usize,
    rollouts: usize,
    proposal_pool: usize,
    fit: FitOptions,
    rng: &mut R,
) -> Result<Selection> {
    let n = state.len();
    check_k(n, k)?;
    if rollouts == 0 || proposal_pool == 0 {
        return Err(Error::structural("rollouts and proposal pool must be non-empty"));
    }
    let subsets = (0..proposal_pool)
        .map(|_| select_uniform(n, k, rng))
        .collect::<Result<Vec<_>>>()?;
    let key: u64 = rng.random();
    let before: f64 = state.sigma2.iter().sum();
    let options = FitOptions {
        max_steps: fit.max_steps.min(ROLLOUT_FIT_STEPS),
        ..fit
    };

    let jobs: Vec<(usize, usize)> = (0..subsets.len())
        .flat_map(|p| (0..rollouts).map(move |m| (p, m)))
        .collect();
    let reductions = jobs
        .par_iter()
        .map(|&(p, m)| -> Result<f64> {
            let mut rng = rollout_rng(key, (p * rollouts + m) as u64);
            let subset = &subsets[p];
            let mut draw = state.u.clone();
            for &i in subset {
                let z: f64 = rng.sample(StandardNormal);
                draw[i] = state.u[i] + state.sigma2[i].sqrt() * z;
            }
            let ranking = pl::sample_ranking(&draw, subset, 1.0, &mut rng)?;
            let mut extended = Vec::with_capacity(observations.len() + 1);
            extended.extend_from_slice(observations);
            extended.push(RankingObservation::from_ranking(ranking)?);
            let refit = pl::fit(&extended, n, Some(&state.u), options)?;
            Ok(before - refit.state.sigma2.iter().sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;

    let proposals = subsets
        .into_iter()
        .enumerate()
        .map(|(p, indices)| {
            let chunk = &reductions[p * rollouts..(p + 1) * rollouts];
            let score = chunk.iter().sum::<f64>() / rollouts as f64;
            ProposalSubset { indices, score }
        })
        .collect();
    Ok(Selection::best_of(proposals))
}

/// Dispatches to the configured strategy.
pub fn select<R: Rng + ?Sized>(
    config: &TournamentConfig,
    state: &UtilityState,
    observations: &[RankingObservation],
    rng: &mut R,
) -> Result<Selection> {
    let k = config.subset_size;
    match config.strategy {
        Strategy::Uniform => Ok(Selection::single(select_uniform(state.len(), k, rng)?, 0.0)),
        Strategy::VarianceTopk => {
            let picked = select_variance_topk(state, k)?;
            let score = picked.iter().map(|&i| state.sigma2[i]).sum();
            Ok(Selection::single(picked, score))
        }
        Strategy::Boundary => {
            let picked = select_boundary(state, k, config.shortlist_fraction)?;
            let score = picked.iter().map(|&i| state.sigma2[i]).sum();
            Ok(Selection::single(picked, score))
        }
        Strategy::Qbc => select_qbc(state, k, config.qbc_committee, config.proposal_pool, rng),
        Strategy::Mckg => select_mckg(
            state,
            observations,
            k,
            config.mckg_rollouts,
            config.proposal_pool,
            FitOptions {
                lambda: config.lambda,
                tolerance: config.fit_tolerance,
                max_steps: config.max_fit_steps,
            },
            rng,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn state(u: Vec<f64>, sigma2: Vec<f64>) -> UtilityState {
        UtilityState {
            iteration: 0,
            u,
            sigma2,
            n_observations: 0,
        }
    }

    #[test]
    fn uniform_forced_and_seeded() {
        let mut rng = stream_rng(3, Stream::Selection);
        assert_eq!(select_uniform(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let a = select_uniform(20, 4, &mut stream_rng(9, Stream::Selection)).unwrap();
        let b = select_uniform(20, 4, &mut stream_rng(9, Stream::Selection)).unwrap();
        assert_eq!(a, b);
        assert!(select_uniform(3, 4, &mut rng).is_err());
    }

    #[test]
    fn variance_topk_examples() {
        let s = state(vec![0.0; 5], vec![4.0, 1.0, 1.0, 1.0, 9.0]);
        assert_eq!(select_variance_topk(&s, 2).unwrap(), vec![0, 4]);
        let s = state(vec![0.0; 5], vec![2.0; 5]);
        assert_eq!(select_variance_topk(&s, 3).unwrap(), vec![0, 1, 2]);
        let s1 = state(vec![1.0, -2.0, 0.5, 3.0, 0.0], vec![4.0, 1.0, 1.0, 1.0, 9.0]);
        let s2 = state(vec![3.0, 0.5, -2.0, 0.0, 1.0], vec![4.0, 1.0, 1.0, 1.0, 9.0]);
        assert_eq!(select_variance_topk(&s1, 2).unwrap(), select_variance_topk(&s2, 2).unwrap());
    }

    #[test]
    fn boundary_block() {
        // ranks by u descending are items 9, 8, ..., 0
        let u: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = state(u, vec![1.0; 10]);
        // c = 3: ranks 2..5 (1-based) are items 8, 7, 6, 5
        assert_eq!(select_boundary(&s, 4, 0.3).unwrap(), vec![5, 6, 7, 8]);
        assert_eq!(select_boundary(&s, 10, 0.3).unwrap(), (0..10).collect::<Vec<_>>());
        let shifted = state(s.u.iter().map(|x| x + 5.0).collect(), s.sigma2.clone());
        assert_eq!(select_boundary(&shifted, 4, 0.3).unwrap(), vec![5, 6, 7, 8]);
    }

    #[test]
    fn boundary_ties_prefer_uncertain() {
        // c = 3, K = 5: distance-2 tie between ranks 1 and 6 (items 9 and 4)
        let u: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut sigma2 = vec![1.0; 10];
        sigma2[4] = 2.0;
        let s = state(u, sigma2);
        assert_eq!(select_boundary(&s, 5, 0.3).unwrap(), vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn qbc_degenerate_committees() {
        let s = state(vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5], vec![1.0; 6]);
        let mut rng = stream_rng(1, Stream::Selection);
        let sel = select_qbc(&s, 3, 1, 8, &mut rng).unwrap();
        assert!(sel.proposals.iter().all(|p| p.score == 0.0));
        assert_eq!(sel.chosen, sel.proposals[0]);

        let s = state(vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5], vec![0.0; 6]);
        let sel = select_qbc(&s, 3, 8, 8, &mut rng).unwrap();
        assert!(sel.proposals.iter().all(|p| p.score == 0.0));
    }

    #[test]
    fn mckg_single_proposal() {
        let s = state(vec![0.0; 6], vec![10.0; 6]);
        let opts = FitOptions::default();
        let mut rng = stream_rng(2, Stream::Selection);
        let sel = select_mckg(&s, &[], 3, 4, 1, opts, &mut rng).unwrap();
        assert_eq!(sel.proposals.len(), 1);
        assert_eq!(sel.chosen, sel.proposals[0]);
        assert!(sel.chosen.score > 0.0);
    }

    #[test]
    fn kendall_distance_extremes() {
        let a = [0.0, 1.0, 2.0];
        let b = [2.0, 1.0, 0.0];
        assert_eq!(kendall_distance(&a, &a, &[0, 1, 2]), 0.0);
        assert_eq!(kendall_distance(&a, &b, &[0, 1, 2]), 1.0);
        assert!((kendall_distance(&a, &[0.0, 2.0, 1.0], &[0, 1, 2]) - 1.0 / 3.0).abs() < 1e-15);
    }
}

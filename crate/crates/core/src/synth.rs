//! Synthetic candidate pools for simulation runs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::model::{Candidate, CandidatePool};
use crate::rng::{stream_rng, Stream};

/// How true utilities are generated.
///
/// Text forms: `normal:sd=1`, `uniform:lo,hi` and
/// `tiered:tiers=3,gap=2[,sd=0.6]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UtilityGen {
    Normal { sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Equal-sized tiers whose centres sit `gap` apart, with normal spread
    /// `sd` inside each tier.
    Tiered { tiers: usize, gap: f64, sd: f64 },
}

pub const DEFAULT_TIER_SD: f64 = 0.6;

impl UtilityGen {
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            UtilityGen::Normal { sd } => {
                let dist = Normal::new(0.0, sd).expect("validated sd");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            UtilityGen::Uniform { lo, hi } => {
                let dist = Uniform::new_inclusive(lo, hi).expect("validated bounds");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            UtilityGen::Tiered { tiers, gap, sd } => {
                let spread = Normal::new(0.0, sd).expect("validated sd");
                let mut values: Vec<f64> = (0..n)
                    .map(|i| {
                        let tier = i * tiers / n;
                        gap * (tiers - 1 - tier) as f64 + spread.sample(rng)
                    })
                    .collect();
                values.shuffle(rng);
                values
            }
        }
    }
}

impl fmt::Display for UtilityGen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityGen::Normal { sd } => write!(f, "normal:sd={sd}"),
            UtilityGen::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            UtilityGen::Tiered { tiers, gap, sd } => write!(f, "tiered:tiers={tiers},gap={gap},sd={sd}"),
        }
    }
}

impl FromStr for UtilityGen {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("bad utility generator {spec:?}: {why}"));
        let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
        let params: Vec<&str> = args.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("{s:?} is not a number")));
        let named = |key: &str| -> Result<Option<f64>> {
            for p in &params {
                if let Some((k, v)) = p.split_once('=') {
                    if k.trim() == key {
                        return num(v.trim()).map(Some);
                    }
                } else if kind != "uniform" {
                    return Err(bad(&format!("expected key=value, got {p:?}")));
                }
            }
            Ok(None)
        };
        let gen = match kind {
            "normal" => UtilityGen::Normal {
                sd: named("sd")?.unwrap_or(1.0),
            },
            "uniform" => match params.as_slice() {
                [] => UtilityGen::Uniform { lo: -1.0, hi: 1.0 },
                [lo, hi] => UtilityGen::Uniform { lo: num(lo)?, hi: num(hi)? },
                _ => return Err(bad("expected uniform:lo,hi")),
            },
            "tiered" => {
                let tiers = named("tiers")?.unwrap_or(3.0);
                if tiers < 1.0 || tiers.fract() != 0.0 {
                    return Err(bad("tiers must be a positive integer"));
                }
                UtilityGen::Tiered {
                    tiers: tiers as usize,
                    gap: named("gap")?.unwrap_or(2.0),
                    sd: named("sd")?.unwrap_or(DEFAULT_TIER_SD),
                }
            }
            _ => return Err(bad("unknown kind (normal, uniform, tiered)")),
        };
        match gen {
            UtilityGen::Normal { sd } | UtilityGen::Tiered { sd, .. } if !(sd >= 0.0 && sd.is_finite()) => {
                Err(bad("sd must be finite and non-negative"))
            }
            UtilityGen::Uniform { lo, hi } if !(lo <= hi && lo.is_finite() && hi.is_finite()) => {
                Err(bad("need finite lo <= hi"))
            }
            UtilityGen::Tiered { gap, .. } if !gap.is_finite() => Err(bad("gap must be finite")),
            _ => Ok(gen),
        }
    }
}

/// A pool of `n` candidates `c00, c01, ...` with generated true utilities,
/// drawn from the seed's pool stream.
pub fn synthetic_pool(n: usize, gen: &UtilityGen, seed: u64) -> Result<CandidatePool> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    let mut rng = stream_rng(seed, Stream::Pool);
    let utilities = gen.generate(n, &mut rng);
    let candidates = utilities
        .into_iter()
        .enumerate()
        .map(|(i, u)| Candidate::new(format!("c{i:0width$}"), format!("Candidate {i:0width$}")).with_true_utility(u))
        .collect();
    CandidatePool::new(candidates, None)
}

//! Location-disjoint train/validation/test split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::features::MotionType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    fn as_array(self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let f = self.as_array();
        let sum: f64 = f.iter().sum();
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("split fractions {f:?} must be positive and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

struct Location {
    samples: Vec<usize>,
    motions: BTreeMap<MotionType, usize>,
}

/// Greedy assignment of whole locations, largest first, to the part with
/// the largest remaining sample deficit. Among parts whose deficit is
/// within half a location of the best, the one whose motion-type deficits
/// best absorb the location wins. Equal-size locations are ordered by a
/// seeded shuffle.
pub fn split_by_location(ds: &Dataset, fractions: SplitFractions, seed: u64) -> Result<Split, DataError> {
    fractions.validate()?;
    let mut by_name: BTreeMap<&str, Location> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let loc = by_name.entry(&s.location_id).or_insert_with(|| Location {
            samples: Vec::new(),
            motions: BTreeMap::new(),
        });
        loc.samples.push(i);
        *loc.motions.entry(s.motion_type).or_default() += 1;
    }
    if by_name.len() < 3 {
        return Err(DataError::TooFewLocations(by_name.len()));
    }
    let mut locations: Vec<Location> = by_name.into_values().collect();
    locations.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    locations.sort_by_key(|l| std::cmp::Reverse(l.samples.len()));

    let total = ds.len() as f64;
    let frac = fractions.as_array();
    let mut motion_totals: BTreeMap<MotionType, usize> = BTreeMap::new();
    for s in &ds.samples {
        *motion_totals.entry(s.motion_type).or_default() += 1;
    }
    let mut sizes = [0usize; 3];
    let mut motions: [BTreeMap<MotionType, usize>; 3] = Default::default();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut remaining = locations.len();
    for loc in &locations {
        let empty: Vec<usize> = (0..3).filter(|&p| sizes[p] == 0).collect();
        let candidates: Vec<usize> = if empty.len() == remaining { empty } else { (0..3).collect() };
        let deficit = |p: usize| frac[p] * total - sizes[p] as f64;
        let best = candidates.iter().map(|&p| deficit(p)).fold(f64::NEG_INFINITY, f64::max);
        let slack = loc.samples.len() as f64 / 2.0;
        let motion_fit = |p: usize| -> f64 {
            loc.motions
                .iter()
                .map(|(m, &n)| {
                    let want = frac[p] * motion_totals[m] as f64 - motions[p].get(m).copied().unwrap_or(0) as f64;
                    n as f64 * want
                })
                .sum()
        };
        let mut chosen = None;
        for &p in &candidates {
            if deficit(p) < best - slack {
                continue;
            }
            chosen = match chosen {
                Some(q) if motion_fit(q) >= motion_fit(p) => Some(q),
                _ => Some(p),
            };
        }
        let p = chosen.expect("at least one candidate part");
        sizes[p] += loc.samples.len();
        for (m, &n) in &loc.motions {
            *motions[p].entry(*m).or_default() += n;
        }
        parts[p].extend(&loc.samples);
        remaining -= 1;
    }
    let take = |idx: &mut Vec<usize>| -> Dataset {
        idx.sort_unstable();
        Dataset {
            manifest: ds.manifest.clone(),
            samples: idx.iter().map(|&i| ds.samples[i].clone()).collect(),
        }
    };
    let [mut a, mut b, mut c] = parts;
    Ok(Split {
        train: take(&mut a),
        validation: take(&mut b),
        test: take(&mut c),
    })
}

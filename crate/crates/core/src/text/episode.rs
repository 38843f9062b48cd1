use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{labels_in_order, Example};
use crate::error::{Error, Result};
use crate::rng::{fnv1a, Rng};

/// A K-shot training/validation split drawn with a fixed seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub k: usize,
    pub seed: u64,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
}

fn class_stream(seed: u64, class: &str) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(format!("episode/{class}").as_bytes()));
    rng
}

/// Samples `k` training and `k` validation examples per class. The
/// examples not drawn are returned as the held-out remainder, in pool order.
///
/// Each class is shuffled by its own stream keyed on `(seed, class name)`,
/// so membership for one class does not depend on which other classes exist.
pub fn sample_episode_with_rest(
    pool: &[Example],
    k: usize,
    seed: u64,
) -> Result<(Episode, Vec<Example>)> {
    if k == 0 {
        return Err(Error::Input("K must be positive".into()));
    }
    let classes = labels_in_order(pool);
    let mut taken = vec![false; pool.len()];
    let mut train = Vec::with_capacity(classes.len() * k);
    let mut valid = Vec::with_capacity(classes.len() * k);
    for class in &classes {
        let mut members: Vec<usize> = (0..pool.len())
            .filter(|&i| &pool[i].label == class)
            .collect();
        if members.len() < 2 * k {
            return Err(Error::InsufficientExamples {
                class: class.clone(),
                have: members.len(),
                need: 2 * k,
            });
        }
        members.shuffle(&mut class_stream(seed, class));
        for (slot, &i) in members[..2 * k].iter().enumerate() {
            taken[i] = true;
            if slot < k {
                train.push(pool[i].clone());
            } else {
                valid.push(pool[i].clone());
            }
        }
    }
    let rest = pool
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(e, _)| e.clone())
        .collect();
    Ok((
        Episode {
            k,
            seed,
            train,
            valid,
        },
        rest,
    ))
}

pub fn sample_episode(pool: &[Example], k: usize, seed: u64) -> Result<Episode> {
    sample_episode_with_rest(pool, k, seed).map(|(e, _)| e)
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::protocol::{
    config_fingerprint, run_protocol, run_seed, Dataset, Method, ProtocolConfig, RunResult, Shots,
};
use crate::error::{Error, Result};
use crate::objective::{LabelSet, MappingMode};
use crate::rng::{stream, Fingerprint};

/// Labels kept for `seed` when sweeping down to `count` classes, in dataset order.
pub fn class_subset(labels: &[String], count: usize, seed: u64) -> Result<Vec<String>> {
    if count == 0 || count > labels.len() {
        return Err(Error::Config(format!(
            "class count {count} must be between 1 and the {} available classes",
            labels.len()
        )));
    }
    if count == labels.len() {
        return Ok(labels.to_vec());
    }
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(&mut stream(seed, "class-subset"));
    let mut keep = idx[..count].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| labels[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCountPoint {
    pub count: usize,
    pub tcm: RunResult,
    pub task_head: RunResult,
}

impl ClassCountPoint {
    /// Mean macro-F1 of TCM minus that of the task head.
    pub fn gap(&self) -> f64 {
        self.tcm.mean.macro_f1 - self.task_head.mean.macro_f1
    }
}

fn run_on_subsets(
    method: Method,
    data: &Dataset,
    cfg: &ProtocolConfig,
    count: usize,
    seeds: &[u64],
) -> Result<RunResult> {
    let all = data.labels();
    if count == all.len() {
        return run_protocol(method, data, cfg, seeds);
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let wrap = |e| Error::Seed {
            seed,
            source: Box::new(e),
        };
        let subset = class_subset(&all, count, seed).map_err(wrap)?;
        let sub = data.restrict(&subset).map_err(wrap)?;
        let mut r = run_seed(method, &sub, cfg, seed).map_err(wrap)?.result;
        r.labels = Some(subset);
        per_seed.push(r);
    }
    let fp = Fingerprint::new()
        .u64(config_fingerprint(method, data, cfg, seeds))
        .u64(count as u64)
        .finish();
    RunResult::aggregate(method, all, cfg.clone(), fp, per_seed)
}

/// Runs TCM and the task head on identical seeded label subsets of each size.
pub fn class_number_sweep(
    data: &Dataset,
    counts: &[usize],
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<Vec<ClassCountPoint>> {
    let total = data.mapping.len();
    if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > total) {
        return Err(Error::Config(format!(
            "class count {bad} must be between 1 and the {total} available classes"
        )));
    }
    counts
        .iter()
        .map(|&count| {
            Ok(ClassCountPoint {
                count,
                tcm: run_on_subsets(Method::Tcm, data, cfg, count, seeds)?,
                task_head: run_on_subsets(Method::TaskHead, data, cfg, count, seeds)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptionPoint {
    pub mode: MappingMode,
    pub k: usize,
    pub result: RunResult,
}

/// Reruns TCM for every (mode, K) pair with everything else fixed.
pub fn description_sweep(
    data: &Dataset,
    modes: &[MappingMode],
    ks: &[usize],
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<Vec<DescriptionPoint>> {
    // Names and definitions must come from the mapping; samples may be
    // drawn from each episode instead.
    for &mode in modes {
        if mode != MappingMode::Sample {
            LabelSet::from_mapping(&data.mapping, mode, None)?;
        }
    }
    let mut out = Vec::with_capacity(modes.len() * ks.len());
    for &k in ks {
        for &mode in modes {
            let cfg = ProtocolConfig {
                mode,
                shots: Shots::K(k),
                ..cfg.clone()
            };
            out.push(DescriptionPoint {
                mode,
                k,
                result: run_protocol(Method::Tcm, data, &cfg, seeds)?,
            });
        }
    }
    Ok(out)
}

/// Largest minus smallest mean macro-F1 across modes at `k`.
pub fn mode_spread(points: &[DescriptionPoint], k: usize) -> Option<f64> {
    let f: Vec<f64> = points
        .iter()
        .filter(|p| p.k == k)
        .map(|p| p.result.mean.macro_f1)
        .collect();
    let max = f.iter().copied().reduce(f64::max)?;
    let min = f.iter().copied().reduce(f64::min)?;
    Some(max - min)
}

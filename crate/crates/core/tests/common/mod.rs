//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

pub mod gradcases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcm_core::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};

pub const FD_STEP: Float = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: Float, numeric: Float, floor: Float) -> Float {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Builds `f` over leaves made from `inputs`, backpropagates, and compares
/// every leaf gradient entry with a central difference of the scalar output.
/// Returns the largest relative error.
pub fn leaf_gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> Float {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out, &mut ParamStore::new()).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Float {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut worst: Float = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric, 1e-6));
        }
    }
    worst
}

/// Same check for parameters in a store. At most `per_param` coordinates of
/// each listed parameter are probed, chosen by `seed`.
pub fn param_gradcheck(
    store: &ParamStore,
    ids: &[ParamId],
    per_param: usize,
    seed: u64,
    f: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> Float {
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work);
    tape.backward(out, &mut work).unwrap();
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| work.grad(id).unwrap().clone())
        .collect();

    let eval = |s: &ParamStore| -> Float {
        let mut tape = Tape::new();
        let out = f(&mut tape, s);
        tape.value(out).item()
    };
    let mut pick = rng(seed);
    let mut worst: Float = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        let n = store.value(id).numel();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| pick.random_range(0..n)).collect()
        };
        for j in coords {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[j] += FD_STEP;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[j], numeric, 1e-6));
        }
    }
    worst
}

/// Contracts any tensor to a scalar with fixed random weights so that every
/// output element carries a distinct upstream gradient.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = random_tensor(&mut rng(seed), &shape);
    let w = tape.constant(w);
    let y = tape.mul(x, w).unwrap();
    tape.sum(y)
}

/// Macro-F1, pooled micro-F1 and accuracy recomputed by expanding the
/// confusion matrix into one (actual, predicted) pair per example and
/// counting each class's outcomes directly.
pub fn brute_force_scores(m: &[Vec<u64>]) -> (f64, f64, f64) {
    let pairs: Vec<(usize, usize)> = m
        .iter()
        .enumerate()
        .flat_map(|(a, row)| {
            row.iter()
                .enumerate()
                .flat_map(move |(p, &n)| std::iter::repeat_n((a, p), n as usize))
        })
        .collect();
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let (mut all_tp, mut all_fp, mut all_fn) = (0, 0, 0);
    let mut per_class = Vec::new();
    for c in 0..m.len() {
        let tp = pairs.iter().filter(|&&(a, p)| a == c && p == c).count();
        let fp = pairs.iter().filter(|&&(a, p)| a != c && p == c).count();
        let fn_ = pairs.iter().filter(|&&(a, p)| a == c && p != c).count();
        per_class.push(f1(tp, fp, fn_));
        all_tp += tp;
        all_fp += fp;
        all_fn += fn_;
    }
    let correct = pairs.iter().filter(|&&(a, p)| a == p).count();
    (
        per_class.iter().sum::<f64>() / m.len() as f64,
        f1(all_tp, all_fp, all_fn),
        correct as f64 / pairs.len() as f64,
    )
}

/// Square count matrix with `2..=12` classes and at least one example.
pub fn random_confusion(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let n = rng.random_range(2..=12);
    let sparse = rng.random_bool(0.5);
    let mut m: Vec<Vec<u64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if sparse && rng.random_bool(0.7) {
                        0
                    } else {
                        rng.random_range(0..20)
                    }
                })
                .collect()
        })
        .collect();
    m[0][0] += 1;
    m
}

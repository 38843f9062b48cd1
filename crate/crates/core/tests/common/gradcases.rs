//! Central finite-difference cases (h = 1e-5, fp64) for every
//! differentiable op, the two losses, and the full encoder.

use super::*;
use tcm_core::autodiff::{Float, ParamStore, Tape, Tensor, Var};
use tcm_core::encoder::{Encoder, EncoderConfig};
use tcm_core::objective::{matching_loss, regularization_loss, total_loss};
use tcm_core::text::{TokenBatch, Vocab};

pub const OP_TOL: Float = 1e-4;
pub const END_TO_END_TOL: Float = 1e-3;

pub struct OpCase {
    pub name: &'static str,
    pub seed: u64,
    pub shapes: &'static [&'static [usize]],
    pub f: fn(&mut Tape, &[Var]) -> Var,
}

macro_rules! case {
    ($name:ident, $seed:expr, $shapes:expr, |$t:ident, $v:ident| $body:expr) => {
        OpCase {
            name: stringify!($name),
            seed: $seed,
            shapes: $shapes,
            f: |$t: &mut Tape, $v: &[Var]| $body,
        }
    };
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        case!(add, 1, &[&[3, 4], &[3, 4]], |t, v| t
            .add(v[0], v[1])
            .unwrap()),
        case!(sub, 2, &[&[5], &[5]], |t, v| t.sub(v[0], v[1]).unwrap()),
        case!(mul, 3, &[&[2, 3], &[2, 3]], |t, v| t
            .mul(v[0], v[1])
            .unwrap()),
        case!(mul_self, 4, &[&[4]], |t, v| t.mul(v[0], v[0]).unwrap()),
        case!(scale, 5, &[&[3, 2]], |t, v| t.scale(v[0], -1.7)),
        case!(add_row, 6, &[&[4, 3], &[3]], |t, v| t
            .add_row(v[0], v[1])
            .unwrap()),
        case!(matmul, 7, &[&[3, 3], &[3, 3]], |t, v| t
            .matmul(v[0], v[1])
            .unwrap()),
        case!(matmul_sum, 8, &[&[3, 3], &[3, 3]], |t, v| {
            let p = t.matmul(v[0], v[1]).unwrap();
            t.sum(p)
        }),
        case!(matmul_ta, 9, &[&[4, 2], &[4, 3]], |t, v| t
            .matmul_t(v[0], v[1], true, false)
            .unwrap()),
        case!(matmul_tb, 10, &[&[2, 4], &[3, 4]], |t, v| t
            .matmul_t(v[0], v[1], false, true)
            .unwrap()),
        case!(matmul_ta_tb, 11, &[&[4, 2], &[3, 4]], |t, v| t
            .matmul_t(v[0], v[1], true, true)
            .unwrap()),
        case!(gram_matrix, 12, &[&[4, 3]], |t, v| t
            .matmul_t(v[0], v[0], false, true)
            .unwrap()),
        case!(bmm, 13, &[&[2, 3, 4], &[2, 4, 2]], |t, v| t
            .bmm(v[0], v[1], false)
            .unwrap()),
        case!(bmm_tb, 14, &[&[2, 3, 4], &[2, 5, 4]], |t, v| t
            .bmm(v[0], v[1], true)
            .unwrap()),
        case!(reshape, 15, &[&[2, 6]], |t, v| t
            .reshape(v[0], vec![3, 4])
            .unwrap()),
        case!(permute, 16, &[&[2, 3, 2, 2]], |t, v| t
            .permute(v[0], &[0, 2, 1, 3])
            .unwrap()),
        case!(transpose, 17, &[&[3, 5]], |t, v| t.transpose(v[0]).unwrap()),
        case!(layer_norm, 18, &[&[3, 5], &[5], &[5]], |t, v| t
            .layer_norm(v[0], v[1], v[2], 1e-5)
            .unwrap()),
        case!(gelu, 19, &[&[7]], |t, v| t.gelu(v[0])),
        case!(tanh, 20, &[&[7]], |t, v| t.tanh(v[0])),
        case!(relu, 21, &[&[7]], |t, v| t.relu(v[0])),
        case!(gather_rows, 22, &[&[4, 3]], |t, v| t
            .gather_rows(v[0], &[2, 0, 2, 3])
            .unwrap()),
        case!(slice_rows, 23, &[&[5, 2]], |t, v| t
            .slice_rows(v[0], 1, 3)
            .unwrap()),
        case!(concat_rows, 24, &[&[2, 3], &[1, 3]], |t, v| t
            .concat_rows(&[v[0], v[1], v[0]])
            .unwrap()),
        case!(sum, 25, &[&[3, 3]], |t, v| t.sum(v[0])),
        case!(mean, 26, &[&[3, 3]], |t, v| t.mean(v[0])),
        case!(masked_softmax, 27, &[&[4, 3, 3]], |t, v| {
            t.masked_softmax(v[0], &[true, true, false, true, false, true], 2)
                .unwrap()
        }),
        case!(softmax_cross_entropy, 28, &[&[3, 4]], |t, v| t
            .softmax_cross_entropy(v[0], &[1, 0, 3])
            .unwrap()),
        case!(softmax_cross_entropy_one_row, 29, &[&[1, 5]], |t, v| t
            .softmax_cross_entropy(v[0], &[2])
            .unwrap()),
        case!(dot, 30, &[&[6], &[6]], |t, v| t.dot(v[0], v[1]).unwrap()),
        case!(maximum, 31, &[&[8], &[8]], |t, v| t
            .maximum(v[0], v[1])
            .unwrap()),
        case!(max_scalar, 32, &[&[8]], |t, v| t.max_scalar(v[0], 0.1)),
        case!(row_max_off_diag, 33, &[&[4, 4]], |t, v| t
            .row_max_off_diag(v[0])
            .unwrap()),
        case!(matching_loss_grad, 40, &[&[3, 4], &[5, 4]], |t, v| {
            matching_loss(t, v[0], v[1], &[4, 0, 2], 0.5).unwrap()
        }),
        case!(regularization_loss_grad, 41, &[&[5, 3]], |t, v| {
            regularization_loss(t, v[0], -0.2).unwrap()
        }),
        case!(total_loss_grad, 42, &[&[3, 4], &[5, 4]], |t, v| {
            let lm = matching_loss(t, v[0], v[1], &[1, 1, 3], 0.3).unwrap();
            let lr = regularization_loss(t, v[1], 0.0).unwrap();
            total_loss(t, lm, lr, 0.7).unwrap()
        }),
    ]
}

/// Largest relative error of `case` over three random draws of its inputs.
/// Non-scalar outputs are contracted with fixed random weights.
pub fn op_case_error(case: &OpCase) -> Float {
    (0..3u64)
        .map(|trial| {
            let mut r = rng(case.seed * 100 + trial);
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|s| random_tensor(&mut r, s))
                .collect();
            leaf_gradcheck(&inputs, |t, v| {
                let out = (case.f)(t, v);
                if t.value(out).numel() == 1 {
                    out
                } else {
                    project(t, out, 99)
                }
            })
        })
        .fold(0.0, Float::max)
}

fn tiny_encoder() -> (Encoder, ParamStore, TokenBatch, TokenBatch) {
    let vocab = Vocab::build(["a b c d e f g h"], 1, 20).unwrap();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        max_len: 8,
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 12,
        repr_dim: 6,
        dropout: 0.0,
        init_std: 0.02,
        seed: 17,
    };
    let (enc, mut store) = Encoder::new(&cfg).unwrap();
    // Larger weights than the 0.02 init so the check is not dominated by
    // near-zero gradients.
    let mut r = rng(5);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += rand::Rng::random_range(&mut r, -0.3..0.3);
        }
    }
    let inputs = TokenBatch::encode(&vocab, &["a b c", "d e", "f g h a"], 8).unwrap();
    let labels = TokenBatch::encode(&vocab, &["a c e", "b d f h", "g", "h a"], 8).unwrap();
    (enc, store, inputs, labels)
}

/// Error of the encoder output with respect to the token embedding table.
pub fn encoder_embedding_error() -> Float {
    let (enc, store, inputs, _) = tiny_encoder();
    let emb = enc.token_embedding_id();
    param_gradcheck(&store, &[emb], 200, 1, |tape, s| {
        let out = enc.forward(tape, s, &inputs, None).unwrap();
        project(tape, out, 7)
    })
}

type LossFn<'a> = Box<dyn Fn(&mut Tape, Var, Var) -> Var + 'a>;

/// Errors of the matching, regularizer and total losses with respect to
/// every encoder parameter, inputs and labels both run through the encoder.
pub fn end_to_end_errors() -> Vec<(&'static str, Float)> {
    let (enc, store, inputs, labels) = tiny_encoder();
    let ids = enc.param_ids();
    let targets = [0, 3, 1];
    let losses: [(&str, LossFn); 3] = [
        (
            "matching",
            Box::new(|t, x, l| matching_loss(t, x, l, &targets, 0.5).unwrap()),
        ),
        (
            "regularizer",
            Box::new(|t, _, l| regularization_loss(t, l, -1.0).unwrap()),
        ),
        (
            "total",
            Box::new(|t, x, l| {
                let lm = matching_loss(t, x, l, &targets, 0.5).unwrap();
                let lr = regularization_loss(t, l, -1.0).unwrap();
                total_loss(t, lm, lr, 1.0).unwrap()
            }),
        ),
    ];
    losses
        .iter()
        .map(|(name, loss)| {
            let err = param_gradcheck(&store, &ids, 4, 3, |tape, s| {
                let x = enc.forward(tape, s, &inputs, None).unwrap();
                let l = enc.forward(tape, s, &labels, None).unwrap();
                loss(tape, x, l)
            });
            (*name, err)
        })
        .collect()
}

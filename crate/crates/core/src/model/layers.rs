//! Building blocks: positional encoding, multi-head attention, GCN layer,
//! feed-forward network and masks.

use crate::scalar::Scalar;
use crate::tensor::{Result, Tape, Tensor, Var};

/// Additive offset for blocked attention positions.
pub const MASK_OFFSET: f64 = -1e9;

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn positional_encoding<T: Scalar>(max_len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[max_len, d], |k| {
        let (pos, col) = (k / d, k % d);
        let i2 = (col - col % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
        T::of(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Projection weights of one attention module, each `d_model × d_model`.
#[derive(Clone, Copy, Debug)]
pub struct AttnWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// `Concat(head_1..head_J) W^o` with `head_j = softmax(q_j k_jᵀ / √d_k + bias) v_j`.
///
/// `q_in` is `(B, Lq, d)`, `kv_in` is `(B, Lk, d)`, `bias` (if any) is
/// `(B, Lq, Lk)` and is shared by all heads.
pub fn multi_head_attention<T: Scalar>(
    tape: &Tape<T>,
    q_in: Var,
    kv_in: Var,
    bias: Option<Var>,
    w: &AttnWeights,
    heads: usize,
) -> Result<Var> {
    let qs = tape.shape(q_in);
    let ks = tape.shape(kv_in);
    let (b, lq, d) = (qs[0], qs[1], qs[2]);
    let lk = ks[1];
    let dk = d / heads;
    let split = |x: Var, w: Var, len: usize| -> Result<Var> {
        let p = tape.matmul(x, w)?;
        let p = tape.reshape(p, &[b, len, heads, dk])?;
        tape.permute(p, &[2, 0, 1, 3])
    };
    let q = split(q_in, w.wq, lq)?;
    let k = split(kv_in, w.wk, lk)?;
    let v = split(kv_in, w.wv, lk)?;
    let mut scores = tape.scale(tape.matmul_nt(q, k)?, T::of(1.0 / (dk as f64).sqrt()));
    if let Some(bias) = bias {
        scores = tape.add(scores, bias)?;
    }
    let probs = tape.softmax(scores, 3)?;
    let ctx = tape.matmul(probs, v)?;
    let ctx = tape.permute(ctx, &[1, 2, 0, 3])?;
    let ctx = tape.reshape(ctx, &[b, lq, d])?;
    tape.matmul(ctx, w.wo)
}

/// `H' = ReLU(Ã H W)` for batched `H (B, n, d)` and `Ã (B, n, n)`.
pub fn gcn_layer<T: Scalar>(tape: &Tape<T>, h: Var, a_tilde: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    Ok(tape.relu(tape.matmul(a_tilde, hw)?))
}

/// `max(0, x W1 + b1) W2 + b2`
pub fn feed_forward<T: Scalar>(tape: &Tape<T>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.relu(tape.add(tape.matmul(x, w1)?, b1)?);
    tape.add(tape.matmul(h, w2)?, b2)
}

/// `(B, Lq, Lk)` additive bias from keep flags laid out the same way.
pub fn mask_bias<T: Scalar>(keep: &[bool], shape: [usize; 3]) -> Tensor<T> {
    let off = T::of(MASK_OFFSET);
    let data = keep.iter().map(|&k| if k { T::zero() } else { off }).collect();
    Tensor::new(shape.to_vec(), data).expect("keep flags match the bias shape")
}

/// Key-padding keep flags `(B, Lq, Lk)` from per-row key lengths.
pub fn key_padding(lens: &[usize], lq: usize, lk: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(lens.len() * lq * lk);
    for &n in lens {
        for _ in 0..lq {
            out.extend((0..lk).map(|j| j < n));
        }
    }
    out
}

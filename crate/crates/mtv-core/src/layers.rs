//! Parameter bundles shared by the conditioning streams and the backbone:
//! linear maps, feed-forward blocks, timestep-modulated normalization, and
//! projected attention.
//!
//! Each bundle stores positions into a [`ParamSet`](crate::params::ParamSet);
//! forward methods read the lifted tape ids through those positions, so one
//! layout serves checkpointing, freezing, and differentiation alike. Weights
//! initialize to `N(0, 1/fan_in)` draws and biases to zero; residual-branch
//! output layers offer a zero init so a fresh branch starts as the identity.

use crate::error::Result;
use crate::numerics::{DenseArray, Rng, Tape, ValueId};
use crate::params::ParamSet;

/// Epsilon inside every layer normalization.
pub const LN_EPS: f64 = 1e-5;

fn random_weight(rng: &mut Rng, fan_in: usize, fan_out: usize) -> DenseArray {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let mut w = rng.normal_array(&[fan_in, fan_out]);
    let data: Vec<f64> = w.data().iter().map(|&v| v * scale).collect();
    w = DenseArray::new(vec![fan_in, fan_out], data).expect("same shape");
    w
}

/// Affine map `x W + b`, `W: [fan_in, fan_out]`, `b: [fan_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn random(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Linear {
            w: ps.register(format!("{prefix}.w"), random_weight(rng, fan_in, fan_out)),
            b: ps.register(format!("{prefix}.b"), DenseArray::zeros(&[fan_out])),
        }
    }

    pub fn zeros(ps: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: ps.register(format!("{prefix}.w"), DenseArray::zeros(&[fan_in, fan_out])),
            b: ps.register(format!("{prefix}.b"), DenseArray::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[ValueId], x: ValueId) -> Result<ValueId> {
        let y = tape.matmul(x, p[self.w])?;
        tape.add_last(y, p[self.b])
    }
}

/// Two linears around a GELU; the residual add stays with the caller.
#[derive(Debug, Clone, Copy)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
}

impl Ffn {
    pub fn random(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        width: usize,
        hidden: usize,
    ) -> Self {
        Ffn {
            l1: Linear::random(ps, rng, &format!("{prefix}.l1"), width, hidden),
            l2: Linear::random(ps, rng, &format!("{prefix}.l2"), hidden, width),
        }
    }

    /// Random first layer, zero second layer: the branch starts at zero but
    /// still carries gradient signal through `l1`.
    pub fn random_zero_out(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        width: usize,
        hidden: usize,
    ) -> Self {
        Ffn {
            l1: Linear::random(ps, rng, &format!("{prefix}.l1"), width, hidden),
            l2: Linear::zeros(ps, &format!("{prefix}.l2"), hidden, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[ValueId], x: ValueId) -> Result<ValueId> {
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.gelu(h);
        self.l2.forward(tape, p, h)
    }
}

/// Timestep-conditioned normalization: normalize over channels (unit gain,
/// zero bias), then modulate with projections of the timestep embedding:
/// `y = LN(x) ⊙ (1 + scale(t)) + shift(t)`.
#[derive(Debug, Clone, Copy)]
pub struct AdaLn {
    pub scale: Linear,
    pub shift: Linear,
}

impl AdaLn {
    pub fn random(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        d_t: usize,
        width: usize,
    ) -> Self {
        AdaLn {
            scale: Linear::random(ps, rng, &format!("{prefix}.scale"), d_t, width),
            shift: Linear::random(ps, rng, &format!("{prefix}.shift"), d_t, width),
        }
    }

    /// Zero projections: modulation starts as plain normalization.
    pub fn zeros(ps: &mut ParamSet, prefix: &str, d_t: usize, width: usize) -> Self {
        AdaLn {
            scale: Linear::zeros(ps, &format!("{prefix}.scale"), d_t, width),
            shift: Linear::zeros(ps, &format!("{prefix}.shift"), d_t, width),
        }
    }

    /// `x: [rows, width]`, `t_embed: [1, d_t]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[ValueId],
        x: ValueId,
        t_embed: ValueId,
    ) -> Result<ValueId> {
        let width = tape.value(x).last_dim();
        let gain = tape.constant(DenseArray::full(&[width], 1.0));
        let bias = tape.constant(DenseArray::zeros(&[width]));
        let normed = tape.layer_norm(x, gain, bias, LN_EPS)?;
        let s = self.scale.forward(tape, p, t_embed)?;
        let s = tape.reshape(s, &[width])?;
        let s1 = tape.add_scalar(s, 1.0);
        let h = self.shift.forward(tape, p, t_embed)?;
        let h = tape.reshape(h, &[width])?;
        let scaled = tape.mul_last(normed, s1)?;
        tape.add_last(scaled, h)
    }
}

/// Projected multi-head attention: independent query/key/value projections,
/// scaled dot-product attention, output projection. The key projection has
/// no bias: a constant added to every key shifts each query's logits
/// uniformly, which softmax cancels, so a key bias would be a parameter with
/// an identically zero gradient.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k_w: usize,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub struct AttentionDims {
    pub d_query_in: usize,
    pub d_kv_in: usize,
    pub d_attn: usize,
    pub d_out: usize,
    pub heads: usize,
}

impl Attention {
    /// `zero_out` zeroes the output projection so the attention branch
    /// contributes nothing until trained (residual-safe start).
    pub fn random(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        dims: &AttentionDims,
        zero_out: bool,
    ) -> Self {
        let q = Linear::random(ps, rng, &format!("{prefix}.q"), dims.d_query_in, dims.d_attn);
        let k_w = ps.register(
            format!("{prefix}.k.w"),
            random_weight(rng, dims.d_kv_in, dims.d_attn),
        );
        let v = Linear::random(ps, rng, &format!("{prefix}.v"), dims.d_kv_in, dims.d_attn);
        let o = if zero_out {
            Linear::zeros(ps, &format!("{prefix}.o"), dims.d_attn, dims.d_out)
        } else {
            Linear::random(ps, rng, &format!("{prefix}.o"), dims.d_attn, dims.d_out)
        };
        Attention { q, k_w, v, o, heads: dims.heads }
    }

    /// Cross-attention: queries from `xq: [n, d_query_in]`, keys and values
    /// from `xkv: [l, d_kv_in]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[ValueId],
        xq: ValueId,
        xkv: ValueId,
    ) -> Result<ValueId> {
        let q = self.q.forward(tape, p, xq)?;
        let k = tape.matmul(xkv, p[self.k_w])?;
        let v = self.v.forward(tape, p, xkv)?;
        let a = tape.scaled_dot_attention(q, k, v, self.heads)?;
        self.o.forward(tape, p, a)
    }

    pub fn self_forward(&self, tape: &mut Tape, p: &[ValueId], x: ValueId) -> Result<ValueId> {
        self.forward(tape, p, x, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;

    fn run_pure(ps: &ParamSet, f: impl FnOnce(&mut Tape, &[ValueId]) -> Result<ValueId>) -> DenseArray {
        let mut tape = Tape::new();
        let ids = ps.lift_all(&mut tape);
        let out = f(&mut tape, &ids).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn linear_matches_hand_computation() {
        let mut ps = ParamSet::new();
        let lin = Linear::zeros(&mut ps, "t", 2, 2);
        *ps.value_mut(lin.w) = DenseArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        *ps.value_mut(lin.b) = DenseArray::new(vec![2], vec![10.0, 20.0]).unwrap();
        let out = run_pure(&ps, |tape, p| {
            let x = tape.constant(DenseArray::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
            lin.forward(tape, p, x)
        });
        assert_eq!(out.data(), &[14.0, 26.0]);
    }

    #[test]
    fn zero_adaln_is_plain_layer_norm() {
        let mut ps = ParamSet::new();
        let ada = AdaLn::zeros(&mut ps, "a", 3, 4);
        let x = Rng::new(1).normal_array(&[5, 4]);
        let t = Rng::new(2).normal_array(&[1, 3]);
        let got = run_pure(&ps, |tape, p| {
            let xid = tape.constant(x.clone());
            let tid = tape.constant(t.clone());
            ada.forward(tape, p, xid, tid)
        });
        let want = {
            let mut tape = Tape::new();
            let xid = tape.constant(x.clone());
            let gain = tape.constant(DenseArray::full(&[4], 1.0));
            let bias = tape.constant(DenseArray::zeros(&[4]));
            let out = tape.layer_norm(xid, gain, bias, LN_EPS).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn zero_output_attention_contributes_nothing() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(3);
        let dims = AttentionDims {
            d_query_in: 4,
            d_kv_in: 4,
            d_attn: 4,
            d_out: 4,
            heads: 2,
        };
        let attn = Attention::random(&mut ps, &mut rng, "attn", &dims, true);
        let x = Rng::new(4).normal_array(&[6, 4]);
        let out = run_pure(&ps, |tape, p| {
            let xid = tape.constant(x.clone());
            attn.self_forward(tape, p, xid)
        });
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ffn_composition_matches_manual_graph() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(5);
        let ffn = Ffn::random(&mut ps, &mut rng, "f", 3, 6);
        let x = Rng::new(6).normal_array(&[4, 3]);
        let got = run_pure(&ps, |tape, p| {
            let xid = tape.constant(x.clone());
            ffn.forward(tape, p, xid)
        });
        let want = run_pure(&ps, |tape, p| {
            let xid = tape.constant(x.clone());
            let h = tape.matmul(xid, p[ffn.l1.w])?;
            let h = tape.add_last(h, p[ffn.l1.b])?;
            let h = tape.gelu(h);
            let h = tape.matmul(h, p[ffn.l2.w])?;
            tape.add_last(h, p[ffn.l2.b])
        });
        assert!(max_abs_diff(&got, &want).unwrap() == 0.0);
    }
}

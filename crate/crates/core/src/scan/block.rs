use super::params::ScanBlockParams;
use crate::autodiff::{Bound, Tape, Var};
use crate::error::{Error, Result};
use crate::masks::AttentionMask;

/// One scan block over a flattened feature `[B, L, C]`:
///
/// ```text
/// F̄ = F + MaskedSA(LN₁(F), M)
/// F̃ = F̄ + FFN(LN₂(F̄))
/// ```
///
/// Scores are scaled by `1/√(C/h)` and blocked slots receive `-inf` before
/// the softmax, so a blocked key contributes exactly nothing to a query.
pub fn scan_block(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    mask: &AttentionMask,
    p: &ScanBlockParams,
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::config(format!("scan block expects [B, L, C], got {s:?}")));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    if l != mask.length() {
        return Err(Error::config(format!(
            "{} mask length {} does not match sequence length {l}",
            mask.axis(),
            mask.length()
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!("{c} channels cannot be split into {heads} heads")));
    }
    let d = c / heads;
    let v = |id| bound.var(id);

    let n1 = tape.layer_norm(x, v(p.norm1_gamma), v(p.norm1_beta), eps)?;
    let q = tape.linear(n1, v(p.query_w), v(p.query_b))?;
    let k = tape.linear(n1, v(p.key_w), v(p.key_b))?;
    let val = tape.linear(n1, v(p.value_w), v(p.value_b))?;

    let split = |tape: &mut Tape, t: Var| -> Result<Var> {
        if heads == 1 {
            return Ok(t);
        }
        let t = tape.reshape(t, &[b, l, heads, d])?;
        let t = tape.permute(t, &[0, 2, 1, 3])?;
        tape.reshape(t, &[b * heads, l, d])
    };
    let q = split(tape, q)?;
    let k = split(tape, k)?;
    let val = split(tape, val)?;

    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let bias = tape.constant(mask.bias().reshape(&[1, l, l])?);
    let scores = tape.add(scores, bias)?;
    let attn = tape.softmax(scores, 2)?;
    let ctx = tape.matmul(attn, val)?;

    let ctx = if heads == 1 {
        ctx
    } else {
        let t = tape.reshape(ctx, &[b, heads, l, d])?;
        let t = tape.permute(t, &[0, 2, 1, 3])?;
        tape.reshape(t, &[b, l, c])?
    };
    let attn_out = tape.linear(ctx, v(p.out_w), v(p.out_b))?;
    let f_bar = tape.add(x, attn_out)?;

    let n2 = tape.layer_norm(f_bar, v(p.norm2_gamma), v(p.norm2_beta), eps)?;
    let h = tape.linear(n2, v(p.ffn1_w), v(p.ffn1_b))?;
    let h = tape.relu(h);
    let ff = tape.linear(h, v(p.ffn2_w), v(p.ffn2_b))?;
    tape.add(f_bar, ff)
}

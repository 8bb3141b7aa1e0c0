use super::ModelError;
use crate::numcore::{NumError, Tape, Tensor, Var};

/// Sinusoidal encoding `P[i, 2j] = sin(i / 10000^(2j/D))`,
/// `P[i, 2j+1] = cos(i / 10000^(2j/D))`.
pub fn positional_encoding(t: usize, d: usize) -> Result<Tensor, ModelError> {
    if d == 0 || d % 2 != 0 {
        return Err(ModelError::Config(format!("positional encoding needs an even width, got {d}")));
    }
    Ok(Tensor::from_fn(&[t, d], |idx| {
        let (i, c) = (idx / d, idx % d);
        let j = c / 2;
        let angle = i as f64 / 10000f64.powf((2 * j) as f64 / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Handles of one multi-head attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head self-attention along the time axis of `z: [..., T, D]`.
///
/// Returns the projected output `[..., T, D]` and the attention weights
/// `[..., heads, T, T]`.
pub fn temporal_attention(
    tape: &mut Tape,
    z: Var,
    p: &AttentionVars,
    heads: usize,
) -> Result<(Var, Var), NumError> {
    let shape = tape.shape(z).to_vec();
    let r = shape.len();
    if r < 2 || heads == 0 || shape[r - 1] % heads != 0 {
        return Err(NumError::UnexpectedShape {
            op: "temporal_attention",
            shape,
        });
    }
    let (t, d) = (shape[r - 2], shape[r - 1]);
    let dk = d / heads;
    let lead = &shape[..r - 2];
    // [..., T, D] -> [..., heads, T, dk]
    let split = |tape: &mut Tape, x: Var| -> Result<Var, NumError> {
        let mut s = lead.to_vec();
        s.extend([t, heads, dk]);
        let x = tape.reshape(x, &s)?;
        let mut axes: Vec<usize> = (0..r - 2).collect();
        axes.extend([r - 1, r - 2, r]);
        tape.permute(x, &axes)
    };
    let q = tape.linear(z, p.wq, Some(p.bq))?;
    let k = tape.matmul(z, p.wk)?;
    let v = tape.linear(z, p.wv, Some(p.bv))?;
    let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax_rows(scores)?;
    let ctx = tape.matmul(weights, v)?;
    let mut axes: Vec<usize> = (0..r - 2).collect();
    axes.extend([r - 1, r - 2, r]);
    let ctx = tape.permute(ctx, &axes)?;
    let ctx = tape.reshape(ctx, &shape)?;
    let out = tape.linear(ctx, p.wo, Some(p.bo))?;
    Ok((out, weights))
}

/// `Σ_k Ã^k Z Θ_k` with `Ã` acting on the node axis of `z: [B, N, T, D]`.
///
/// `a_norm` is `[N, N]` or `[B, N, N]`.
pub fn gcn_propagate(tape: &mut Tape, a_norm: Var, z: Var, thetas: &[Var]) -> Result<Var, NumError> {
    let shape = tape.shape(z).to_vec();
    let [b, n, t, d] = shape[..] else {
        return Err(NumError::UnexpectedShape {
            op: "gcn_propagate",
            shape,
        });
    };
    let Some((first, rest)) = thetas.split_first() else {
        return Err(NumError::UnexpectedShape {
            op: "gcn_propagate",
            shape: vec![0],
        });
    };
    let mut h = tape.matmul(z, *first)?;
    let mut power = tape.reshape(z, &[b, n, t * d])?;
    for &theta in rest {
        power = tape.matmul(a_norm, power)?;
        let p4 = tape.reshape(power, &shape)?;
        let term = tape.matmul(p4, theta)?;
        h = tape.add(h, term)?;
    }
    Ok(h)
}

/// `concat_last(h_geo, h_adp) · W_x`, or the lone stream times its block of
/// `W_x` when only one is present.
pub fn dual_fuse(
    tape: &mut Tape,
    h_geo: Option<(Var, Var)>,
    h_adp: Option<(Var, Var)>,
) -> Result<Var, ModelError> {
    match (h_geo, h_adp) {
        (Some((hg, wg)), Some((ha, wa))) => {
            let h = tape.concat_last(hg, ha)?;
            let w = tape.concat(wg, wa, 0)?;
            Ok(tape.matmul(h, w)?)
        }
        (Some((h, w)), None) | (None, Some((h, w))) => Ok(tape.matmul(h, w)?),
        (None, None) => Err(ModelError::Config("fusion needs at least one stream".into())),
    }
}

/// `relu(h) + z_t`.
pub fn block_update(tape: &mut Tape, h: Var, z_t: Var) -> Result<Var, NumError> {
    let r = tape.relu(h);
    tape.add(r, z_t)
}

/// `x + LN(y)`.
pub fn residual_norm(tape: &mut Tape, x: Var, y: Var) -> Result<Var, NumError> {
    let n = tape.layer_norm(y);
    tape.add(x, n)
}

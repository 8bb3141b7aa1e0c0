use super::layers::{
    block_update, dual_fuse, gcn_propagate, positional_encoding, residual_norm, temporal_attention,
    AttentionVars,
};
use super::{ModelConfig, ModelError, ModelParams, ParamVars, Variant};
use crate::graph::{
    normalize_sym, normalize_sym_on_tape, sparsify_on_tape, spatial_attention, AdjacencyOptions,
    GeneratedAdjacency, GeoAdjacency, SquareMatrix, TruncationPlan,
};
use crate::numcore::{Tape, Tensor, Var};

/// Graph inputs shared by every forward pass of an experiment.
#[derive(Debug, Clone)]
pub struct GraphContext {
    geo_norm: Option<Tensor>,
    geo_density: Option<f64>,
    pub options: AdjacencyOptions,
    /// Replaces the generated adjacency in every block when set.
    pub adp_override: Option<SquareMatrix>,
}

impl GraphContext {
    pub fn new(geo: Option<&GeoAdjacency>, options: AdjacencyOptions) -> Self {
        Self {
            geo_norm: geo.map(|g| normalize_sym(&g.weights).to_tensor()),
            geo_density: geo.map(GeoAdjacency::density),
            options,
            adp_override: None,
        }
    }

    pub fn without_geo() -> Self {
        Self::new(None, AdjacencyOptions::generated())
    }

    pub fn has_geo(&self) -> bool {
        self.geo_norm.is_some()
    }
}

/// Handles produced by one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `[B, N, F, D_o]`
    pub output: Var,
    /// Generated adjacency per block, `[B, N, N]`, before normalization.
    pub adjacency: Vec<Var>,
    pub plans: Vec<Vec<TruncationPlan>>,
}

fn attention_vars(p: &ParamVars, l: usize) -> Result<AttentionVars, ModelError> {
    let g = |s: &str| p.get(&format!("block{l}.attn.{s}"));
    Ok(AttentionVars {
        wq: g("wq")?,
        bq: g("bq")?,
        wk: g("wk")?,
        wv: g("wv")?,
        bv: g("bv")?,
        wo: g("wo")?,
        bo: g("bo")?,
    })
}

fn thetas(p: &ParamVars, l: usize, stream: &str, hops: usize) -> Result<Vec<Var>, ModelError> {
    (0..=hops)
        .map(|k| p.get(&format!("block{l}.gcn_{stream}.theta{k}")))
        .collect()
}

/// Builds the forward graph for a batch `x: [B, N, T, C]`.
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ParamVars,
    x: Var,
    ctx: &GraphContext,
) -> Result<ForwardTrace, ModelError> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[2] != cfg.window || shape[3] != cfg.channels {
        return Err(ModelError::InputShape {
            expected: vec![0, cfg.nodes, cfg.window, cfg.channels],
            found: shape,
        });
    }
    if cfg.variant == Variant::DLinear {
        return Ok(ForwardTrace {
            output: dlinear_on_tape(tape, cfg, p, x)?,
            adjacency: Vec::new(),
            plans: Vec::new(),
        });
    }
    let n = shape[1];
    let geo = if cfg.variant.uses_geo() {
        let g = ctx
            .geo_norm
            .as_ref()
            .ok_or(ModelError::MissingGeo(cfg.variant))?;
        if g.shape() != [n, n] {
            return Err(ModelError::InputShape {
                expected: vec![n, n],
                found: g.shape().to_vec(),
            });
        }
        Some(tape.constant(g.clone()))
    } else {
        None
    };

    let emb = tape.linear(x, p.get("embed.w")?, Some(p.get("embed.b")?))?;
    let pe = tape.constant(positional_encoding(cfg.window, cfg.d_model)?);
    let mut z = tape.add(emb, pe)?;
    let mut adjacency = Vec::new();
    let mut plans = Vec::new();

    for l in 0..cfg.layers {
        let (attn, _) = temporal_attention(tape, z, &attention_vars(p, l)?, cfg.heads)?;
        let z_t = residual_norm(tape, z, attn)?;
        if !cfg.variant.has_gcn() {
            let g = |s: &str| p.get(&format!("block{l}.ffn.{s}"));
            let hidden = tape.linear(z_t, g("w1")?, Some(g("b1")?))?;
            let hidden = tape.relu(hidden);
            let ff = tape.linear(hidden, g("w2")?, Some(g("b2")?))?;
            z = residual_norm(tape, z_t, ff)?;
            continue;
        }
        let h_geo = match geo {
            Some(a) => {
                let h = gcn_propagate(tape, a, z_t, &thetas(p, l, "geo", cfg.hops)?)?;
                Some((h, p.get(&format!("block{l}.fuse.geo"))?))
            }
            None => None,
        };
        let h_adp = if cfg.variant.uses_adp() {
            let a_s = match &ctx.adp_override {
                Some(m) => {
                    let b = shape[0];
                    let tiled = m.data().repeat(b);
                    tape.constant(Tensor::new(vec![b, n, n], tiled)?)
                }
                None => {
                    let wq = p.get(&format!("block{l}.spatial.wq"))?;
                    let wk = p.get(&format!("block{l}.spatial.wk"))?;
                    let m = spatial_attention(tape, z, wq, wk)?;
                    let (a_s, pl) = sparsify_on_tape(tape, m, ctx.geo_density, &ctx.options)?;
                    plans.push(pl);
                    a_s
                }
            };
            adjacency.push(a_s);
            let a_norm = normalize_sym_on_tape(tape, a_s)?;
            let h = gcn_propagate(tape, a_norm, z_t, &thetas(p, l, "adp", cfg.hops)?)?;
            Some((h, p.get(&format!("block{l}.fuse.adp"))?))
        } else {
            None
        };
        let h = dual_fuse(tape, h_geo, h_adp)?;
        z = block_update(tape, h, z_t)?;
    }

    // W_o along time, then W_g along features
    let zt = tape.permute(z, &[0, 1, 3, 2])?;
    let y = tape.linear(zt, p.get("decoder.w_o")?, Some(p.get("decoder.b_o")?))?;
    let y = tape.permute(y, &[0, 1, 3, 2])?;
    let output = tape.linear(y, p.get("decoder.w_g")?, Some(p.get("decoder.b_g")?))?;
    Ok(ForwardTrace {
        output,
        adjacency,
        plans,
    })
}

/// Per-site linear maps averaged over channels; output `[B, N, F, 1]`.
pub fn dlinear_on_tape(tape: &mut Tape, cfg: &ModelConfig, p: &ParamVars, x: Var) -> Result<Var, ModelError> {
    let shape = tape.shape(x).to_vec();
    let (b, n, t, c) = (shape[0], shape[1], shape[2], shape[3]);
    if n != cfg.nodes {
        return Err(ModelError::InputShape {
            expected: vec![b, cfg.nodes, t, c],
            found: shape,
        });
    }
    let f = cfg.horizon;
    let xt = tape.permute(x, &[0, 1, 3, 2])?;
    let xt = tape.reshape(xt, &[b, n, c, 1, t])?;
    let y = tape.matmul(xt, p.get("dlinear.w")?)?;
    let y = tape.reshape(y, &[b, n, c, f])?;
    let y = tape.add(y, p.get("dlinear.b")?)?;
    let y = tape.permute(y, &[0, 1, 3, 2])?;
    let y = tape.sum_last(y);
    let y = tape.scale(y, 1.0 / c as f64);
    Ok(tape.reshape(y, &[b, n, f, 1])?)
}

/// Batched inference. Returns `[B, N, F, D_o]` and, for each block, one
/// generated adjacency per sample.
pub fn forward_batch(
    cfg: &ModelConfig,
    params: &ModelParams,
    x: &Tensor,
    ctx: &GraphContext,
) -> Result<(Tensor, Vec<Vec<GeneratedAdjacency>>), ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let trace = forward_on_tape(&mut tape, cfg, &vars, xv, ctx)?;
    let snapshots = trace
        .adjacency
        .iter()
        .enumerate()
        .map(|(l, &a)| {
            let v = tape.value(a);
            let (b, n) = (v.shape()[0], v.shape()[1]);
            (0..b)
                .map(|s| {
                    let plan = trace.plans.get(l).map(|p| p[s]);
                    GeneratedAdjacency {
                        weights: SquareMatrix::from_vec(n, v.data()[s * n * n..(s + 1) * n * n].to_vec())
                            .expect("square block"),
                        tau: plan.map_or(ctx.options.tau(n), |p| p.tau),
                        rho: plan.map_or(f64::NAN, |p| p.rho),
                        truncated: plan.is_some_and(|p| p.truncated),
                        source_block: l,
                    }
                })
                .collect()
        })
        .collect();
    Ok((tape.value(trace.output).clone(), snapshots))
}

/// Single-sample inference on `x: [N, T, C]`; returns `[N, F, D_o]` and
/// one generated adjacency per block.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    x: &Tensor,
    ctx: &GraphContext,
) -> Result<(Tensor, Vec<GeneratedAdjacency>), ModelError> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(ModelError::InputShape {
            expected: vec![cfg.nodes, cfg.window, cfg.channels],
            found: s.to_vec(),
        });
    }
    let mut batched = vec![1];
    batched.extend_from_slice(s);
    let (y, snaps) = forward_batch(cfg, params, &x.reshape(&batched)?, ctx)?;
    let out_shape = y.shape()[1..].to_vec();
    Ok((
        y.reshape(&out_shape)?,
        snaps.into_iter().map(|mut v| v.remove(0)).collect(),
    ))
}

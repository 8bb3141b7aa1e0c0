use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Trans,
    TransGCN,
    TransAdp,
    TransGCNAdp,
    DLinear,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Trans,
        Variant::TransGCN,
        Variant::TransAdp,
        Variant::TransGCNAdp,
        Variant::DLinear,
    ];

    pub fn uses_geo(self) -> bool {
        matches!(self, Variant::TransGCN | Variant::TransGCNAdp)
    }

    pub fn uses_adp(self) -> bool {
        matches!(self, Variant::TransAdp | Variant::TransGCNAdp)
    }

    pub fn has_gcn(self) -> bool {
        self.uses_geo() || self.uses_adp()
    }

    /// Label used in tables, e.g. `Trans+GCN+Adp`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Trans => "Trans",
            Variant::TransGCN => "Trans+GCN",
            Variant::TransAdp => "Trans+Adp",
            Variant::TransGCNAdp => "Trans+GCN+Adp",
            Variant::DLinear => "DLinear",
        }
    }

    /// Identifier safe for file names, e.g. `trans_gcn_adp`.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Trans => "trans",
            Variant::TransGCN => "trans_gcn",
            Variant::TransAdp => "trans_adp",
            Variant::TransGCNAdp => "trans_gcn_adp",
            Variant::DLinear => "dlinear",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.slug().replace('_', "") == key)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of nodes; only the per-site baseline depends on it.
    pub nodes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub hops: usize,
    pub window: usize,
    pub horizon: usize,
    pub channels: usize,
}

impl ModelConfig {
    /// Defaults: 16 features, 4 heads, 2 blocks, 2 hops.
    pub fn new(variant: Variant, nodes: usize, window: usize, horizon: usize, channels: usize) -> Self {
        Self {
            variant,
            nodes,
            d_model: 16,
            heads: 4,
            layers: 2,
            hops: 2,
            window,
            horizon,
            channels,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn d_v(&self) -> usize {
        self.d_k()
    }

    pub fn ffn_dim(&self) -> usize {
        2 * self.d_model
    }

    /// Output channels: all inputs for the multi-task head, incidence only
    /// for the per-site baseline.
    pub fn d_out(&self) -> usize {
        match self.variant {
            Variant::DLinear => 1,
            _ => self.channels,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.window == 0 || self.horizon == 0 || self.channels == 0 || self.nodes == 0 {
            return bad("window, horizon, channels and nodes must be positive");
        }
        if self.variant == Variant::DLinear {
            return Ok(());
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even for the positional encoding");
        }
        if self.layers == 0 {
            return bad("at least one encoder block is required");
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, t, f, c) = (self.d_model, self.window, self.horizon, self.channels);
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: &[usize]| out.push((name, shape.to_vec()));
        if self.variant == Variant::DLinear {
            push("dlinear.w".into(), &[self.nodes, c, t, f]);
            push("dlinear.b".into(), &[self.nodes, c, f]);
            return out;
        }
        push("embed.w".into(), &[c, d]);
        push("embed.b".into(), &[d]);
        for l in 0..self.layers {
            for p in ["q", "k", "v", "o"] {
                push(format!("block{l}.attn.w{p}"), &[d, d]);
                // a key bias shifts every score in a row equally, so it is omitted
                if p != "k" {
                    push(format!("block{l}.attn.b{p}"), &[d]);
                }
            }
            if !self.variant.has_gcn() {
                push(format!("block{l}.ffn.w1"), &[d, self.ffn_dim()]);
                push(format!("block{l}.ffn.b1"), &[self.ffn_dim()]);
                push(format!("block{l}.ffn.w2"), &[self.ffn_dim(), d]);
                push(format!("block{l}.ffn.b2"), &[d]);
                continue;
            }
            if self.variant.uses_adp() {
                push(format!("block{l}.spatial.wq"), &[t * d, self.d_k()]);
                push(format!("block{l}.spatial.wk"), &[t * d, self.d_k()]);
            }
            for (on, stream) in [(self.variant.uses_geo(), "geo"), (self.variant.uses_adp(), "adp")] {
                if on {
                    for k in 0..=self.hops {
                        push(format!("block{l}.gcn_{stream}.theta{k}"), &[d, d]);
                    }
                    push(format!("block{l}.fuse.{stream}"), &[d, d]);
                }
            }
        }
        push("decoder.w_o".into(), &[t, f]);
        push("decoder.b_o".into(), &[f]);
        push("decoder.w_g".into(), &[d, self.d_out()]);
        push("decoder.b_g".into(), &[self.d_out()]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

use serde::{Deserialize, Serialize};

use super::{GeoAdjacency, GraphError, SquareMatrix};
use crate::numcore::{NumError, Tape, Tensor, Var};

/// Where the sparsity ratio ρ comes from when a geographic matrix exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoSource {
    /// Density of the geographic matrix.
    #[default]
    Geographic,
    /// Density of the attention scores themselves (always 1 for a softmax
    /// output, so truncation never fires when a geographic matrix exists).
    AttentionLiteral,
}

/// Post-processing switches for an adjacency matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjacencyOptions {
    pub set_diag: bool,
    pub undirected: bool,
    pub truncate: bool,
    /// Truncation threshold τ; `None` means `1/N`.
    pub threshold: Option<f64>,
    /// ρ used when no geographic matrix exists.
    pub rho_default: f64,
    pub rho_source: RhoSource,
}

impl Default for AdjacencyOptions {
    fn default() -> Self {
        Self::generated()
    }
}

impl AdjacencyOptions {
    /// Symmetric, self-looped, truncated.
    pub fn generated() -> Self {
        Self {
            set_diag: true,
            undirected: true,
            truncate: true,
            threshold: None,
            rho_default: 0.001,
            rho_source: RhoSource::Geographic,
        }
    }

    /// As-is: directed, no self-loops, untruncated.
    pub fn geographic() -> Self {
        Self {
            set_diag: false,
            undirected: false,
            truncate: false,
            ..Self::generated()
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(GraphError::ThresholdRange(t));
            }
        }
        if !(0.0..=1.0).contains(&self.rho_default) {
            return Err(GraphError::ThresholdRange(self.rho_default));
        }
        Ok(())
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.threshold.unwrap_or(1.0 / n as f64)
    }
}

/// Sparsified attention map with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAdjacency {
    pub weights: SquareMatrix,
    pub tau: f64,
    pub rho: f64,
    /// Whether the thresholded candidate was kept.
    pub truncated: bool,
    pub source_block: usize,
}

/// Zeroes entries below `tau`; others are kept verbatim.
pub fn hard_threshold(m: &SquareMatrix, tau: f64) -> SquareMatrix {
    SquareMatrix::from_fn(m.n(), |i, j| {
        let v = m.get(i, j);
        if v < tau {
            0.0
        } else {
            v
        }
    })
}

/// Fraction of strictly positive entries.
pub fn mobility_indicator(a: &SquareMatrix) -> f64 {
    let n = a.n();
    if n == 0 {
        return 0.0;
    }
    a.count_positive() as f64 / (n * n) as f64
}

/// The thresholding decision for one attention map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPlan {
    pub tau: f64,
    pub rho: f64,
    pub truncated: bool,
}

/// Decides whether the thresholded candidate replaces `m`: it does when its
/// non-zero ratio exceeds ρ.
pub fn truncation_plan(
    m: &SquareMatrix,
    geo_density: Option<f64>,
    opts: &AdjacencyOptions,
) -> TruncationPlan {
    let n = m.n();
    let n2 = (n * n) as f64;
    let tau = opts.tau(n);
    let rho = match (geo_density, opts.rho_source) {
        (Some(d), RhoSource::Geographic) => d,
        (Some(_), RhoSource::AttentionLiteral) => m.count_nonzero() as f64 / n2,
        (None, _) => opts.rho_default,
    };
    if !opts.truncate {
        return TruncationPlan {
            tau,
            rho,
            truncated: false,
        };
    }
    let r = hard_threshold(m, tau).count_nonzero() as f64 / n2;
    TruncationPlan {
        tau,
        rho,
        truncated: r > rho,
    }
}

/// Sparsifies a row-stochastic attention map, then applies the undirected
/// and self-loop options.
pub fn sparsify(
    m: &SquareMatrix,
    geo: Option<&GeoAdjacency>,
    opts: &AdjacencyOptions,
    source_block: usize,
) -> GeneratedAdjacency {
    let plan = truncation_plan(m, geo.map(GeoAdjacency::density), opts);
    let base = if plan.truncated {
        hard_threshold(m, plan.tau)
    } else {
        m.clone()
    };
    GeneratedAdjacency {
        weights: apply_options(&base, opts),
        tau: plan.tau,
        rho: plan.rho,
        truncated: plan.truncated,
        source_block,
    }
}

/// `(A + Aᵀ)/2` when undirected, then a unit diagonal when `set_diag`.
pub fn apply_options(a: &SquareMatrix, opts: &AdjacencyOptions) -> SquareMatrix {
    let n = a.n();
    let mut out = if opts.undirected {
        SquareMatrix::from_fn(n, |i, j| (a.get(i, j) + a.get(j, i)) * 0.5)
    } else {
        a.clone()
    };
    if opts.set_diag {
        for i in 0..n {
            out.set(i, i, 1.0);
        }
    }
    out
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row sums; zero-degree rows stay zero.
pub fn normalize_sym(a: &SquareMatrix) -> SquareMatrix {
    let dinv: Vec<f64> = (0..a.n())
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    SquareMatrix::from_fn(a.n(), |i, j| a.get(i, j) * (dinv[i] * dinv[j]))
}

/// Node attention scores `softmax(Q_n K_nᵀ / √d_k)` from a block input.
///
/// `z` is `[B, N, T, D]`; each node's `T·D` features are flattened and
/// projected by `w_q`, `w_k` (`[T·D, d_k]`). Returns `[B, N, N]`.
pub fn spatial_attention(tape: &mut Tape, z: Var, w_q: Var, w_k: Var) -> Result<Var, NumError> {
    let shape = tape.shape(z).to_vec();
    let [b, n, t, d] = shape[..] else {
        return Err(NumError::UnexpectedShape {
            op: "spatial_attention",
            shape,
        });
    };
    let flat = tape.reshape(z, &[b, n, t * d])?;
    let q = tape.matmul(flat, w_q)?;
    let k = tape.matmul(flat, w_k)?;
    let dk = tape.shape(q)[2];
    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    tape.softmax_rows(scaled)
}

/// Tape version of [`sparsify`] over a batch of attention maps `[B, N, N]`.
///
/// The truncation mask is decided from the values and held constant, so
/// gradients flow through the kept entries. Returns the adjacency and the
/// per-sample plans.
pub fn sparsify_on_tape(
    tape: &mut Tape,
    m: Var,
    geo_density: Option<f64>,
    opts: &AdjacencyOptions,
) -> Result<(Var, Vec<TruncationPlan>), NumError> {
    let shape = tape.shape(m).to_vec();
    let (b, n) = (shape[0], shape[1]);
    let mut mask = Vec::with_capacity(b * n * n);
    let mut plans = Vec::with_capacity(b);
    for s in 0..b {
        let vals = &tape.value(m).data()[s * n * n..(s + 1) * n * n];
        let mat = SquareMatrix::from_vec(n, vals.to_vec()).expect("square block");
        let plan = truncation_plan(&mat, geo_density, opts);
        mask.extend(
            vals.iter()
                .map(|&v| if plan.truncated && v < plan.tau { 0.0 } else { 1.0 }),
        );
        plans.push(plan);
    }
    let mask = tape.constant(Tensor::new(shape.clone(), mask)?);
    let mut a = tape.mul(m, mask)?;
    if opts.undirected {
        let at = tape.transpose_last2(a)?;
        let s = tape.add(a, at)?;
        a = tape.scale(s, 0.5);
    }
    if opts.set_diag {
        let off = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 0.0 } else { 1.0 });
        let off = tape.constant(off);
        let eye = tape.constant(Tensor::eye(n));
        let masked = tape.mul(a, off)?;
        a = tape.add(masked, eye)?;
    }
    Ok((a, plans))
}

/// Differentiable `D^{-1/2} A D^{-1/2}` over the last two axes.
pub fn normalize_sym_on_tape(tape: &mut Tape, a: Var) -> Result<Var, NumError> {
    let shape = tape.shape(a).to_vec();
    let r = shape.len();
    let deg = tape.sum_last(a);
    let dinv = tape.rsqrt_or_zero(deg);
    let mut col = shape.clone();
    col[r - 1] = 1;
    let mut row = shape;
    row[r - 2] = 1;
    let left = tape.reshape(dinv, &col)?;
    let right = tape.reshape(dinv, &row)?;
    let scaled = tape.mul(a, left)?;
    tape.mul(scaled, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{central_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
        let mut m = SquareMatrix::from_fn(n, |_, _| rng.gen_range(0.0..1.0f64).powi(3));
        for i in 0..n {
            let s: f64 = m.row(i).iter().sum();
            for j in 0..n {
                m.set(i, j, m.get(i, j) / s);
            }
        }
        m
    }

    #[test]
    fn hard_threshold_examples() {
        let u = SquareMatrix::filled(28, 1.0 / 28.0);
        assert_eq!(hard_threshold(&u, 1.0 / 28.0), u);
        let m = SquareMatrix::from_rows(&[vec![0.6, 0.4], vec![0.01, 0.99]]).unwrap();
        assert_eq!(hard_threshold(&m, 1.0), SquareMatrix::zeros(2));
        assert_eq!(
            hard_threshold(&m, 0.05),
            SquareMatrix::from_rows(&[vec![0.6, 0.4], vec![0.0, 0.99]]).unwrap()
        );
    }

    #[test]
    fn sparsify_uniform_with_dense_geo_keeps_candidate() {
        let m = SquareMatrix::filled(3, 1.0 / 3.0);
        let geo = GeoAdjacency {
            weights: SquareMatrix::from_fn(3, |i, j| if i == j { 0.0 } else { 0.5 }),
            sigma: 1.0,
            kappa: 1.0,
        };
        let plain = AdjacencyOptions {
            set_diag: false,
            undirected: false,
            ..AdjacencyOptions::generated()
        };
        let out = sparsify(&m, Some(&geo), &plain, 0);
        assert!((out.rho - 6.0 / 9.0).abs() < 1e-15);
        assert!(out.truncated);
        assert_eq!(out.weights, m);
    }

    #[test]
    fn sparsify_branch_selection_by_enumeration() {
        // off-diagonal entries all below 1/3, no geographic matrix
        let m = SquareMatrix::from_rows(&[
            vec![0.8, 0.1, 0.1],
            vec![0.05, 0.9, 0.05],
            vec![0.2, 0.2, 0.6],
        ])
        .unwrap();
        let plain = AdjacencyOptions {
            set_diag: false,
            undirected: false,
            ..AdjacencyOptions::generated()
        };
        let out = sparsify(&m, None, &plain, 0);
        // candidate keeps the 3 diagonal entries: r = 3/9 > 0.001
        assert!(out.truncated);
        assert_eq!(out.weights, SquareMatrix::from_fn(3, |i, j| if i == j { m.get(i, i) } else { 0.0 }));
        // with ρ at least r the untruncated map comes back
        let loose = AdjacencyOptions {
            rho_default: 3.0 / 9.0,
            ..plain.clone()
        };
        let out = sparsify(&m, None, &loose, 0);
        assert!(!out.truncated);
        assert_eq!(out.weights, m);
    }

    #[test]
    fn literal_rho_never_truncates_softmax_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_stochastic(4, &mut rng);
        let geo = GeoAdjacency {
            weights: SquareMatrix::identity(4),
            sigma: 1.0,
            kappa: 1.0,
        };
        let opts = AdjacencyOptions {
            rho_source: RhoSource::AttentionLiteral,
            ..AdjacencyOptions::generated()
        };
        assert!(!sparsify(&m, Some(&geo), &opts, 0).truncated);
    }

    #[test]
    fn single_node_is_unit() {
        let m = SquareMatrix::filled(1, 1.0);
        for opts in [AdjacencyOptions::generated(), AdjacencyOptions::geographic()] {
            assert_eq!(sparsify(&m, None, &opts, 0).weights, m);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_sym(&SquareMatrix::identity(3)), SquareMatrix::identity(3));
        let swap = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(normalize_sym(&swap), swap);
        let iso = SquareMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]])
            .unwrap();
        let out = normalize_sym(&iso);
        assert!(out.row(2).iter().all(|&v| v == 0.0));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(mobility_indicator(&SquareMatrix::zeros(3)), 0.0);
        assert_eq!(mobility_indicator(&SquareMatrix::identity(4)), 0.25);
        let m = SquareMatrix::from_rows(&[
            vec![0.1, 0.0, 0.0],
            vec![0.0, 0.2, 0.3],
            vec![0.0, 0.0, 0.4],
        ])
        .unwrap();
        assert!((mobility_indicator(&m) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_spectral_radius_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let raw = SquareMatrix::from_fn(5, |_, _| {
                if rng.gen_bool(0.6) {
                    rng.gen_range(0.0..2.0)
                } else {
                    0.0
                }
            });
            let a = apply_options(&raw, &AdjacencyOptions::generated());
            let norm = normalize_sym(&a);
            assert!(norm.is_symmetric());
            let eig = nalgebra::DMatrix::from_row_slice(5, 5, norm.data()).symmetric_eigen();
            let radius = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(radius <= 1.0 + 1e-12, "radius {radius}");
        }
    }

    #[test]
    fn tape_versions_match_plain_versions() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mats: Vec<SquareMatrix> = (0..3).map(|_| random_stochastic(4, &mut rng)).collect();
        let data: Vec<f64> = mats.iter().flat_map(|m| m.data().to_vec()).collect();
        for opts in [
            AdjacencyOptions::generated(),
            AdjacencyOptions::geographic(),
            AdjacencyOptions {
                threshold: Some(0.3),
                ..AdjacencyOptions::generated()
            },
        ] {
            let mut tape = Tape::new();
            let m = tape.constant(Tensor::new(vec![3, 4, 4], data.clone()).unwrap());
            let (a, _) = sparsify_on_tape(&mut tape, m, None, &opts).unwrap();
            let an = normalize_sym_on_tape(&mut tape, a).unwrap();
            for (s, mat) in mats.iter().enumerate() {
                let want = sparsify(mat, None, &opts, 0).weights;
                let got = &tape.value(a).data()[s * 16..(s + 1) * 16];
                assert_eq!(got, want.data());
                let wn = normalize_sym(&want);
                let gn = &tape.value(an).data()[s * 16..(s + 1) * 16];
                for (x, y) in gn.iter().zip(wn.data()) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn normalize_on_tape_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a0 = Tensor::from_fn(&[2, 4, 4], |_| rng.gen_range(0.1..1.0));
        let w = Tensor::from_fn(&[2, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let run = |x: &Tensor, leaf: bool| {
            let mut tape = Tape::new();
            let a = if leaf { tape.leaf(x.clone()) } else { tape.constant(x.clone()) };
            let n = normalize_sym_on_tape(&mut tape, a).unwrap();
            let wv = tape.constant(w.clone());
            let p = tape.mul(n, wv).unwrap();
            let l = tape.sum(p);
            (tape, a, l)
        };
        let (tape, a, l) = run(&a0, true);
        let g = tape.backward(l).unwrap();
        let fd = central_difference(
            |xs| {
                let (t, _, l) = run(&xs[0], false);
                t.value(l).item().unwrap()
            },
            &[a0.clone()],
            1e-5,
        );
        assert!(max_relative_error(g.get(a).unwrap(), &fd[0], 1e-8) < 1e-4);
    }

    #[test]
    fn spatial_attention_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 5, 3, 4]));
        let wq = tape.constant(Tensor::ones(&[12, 2]));
        let wk = tape.constant(Tensor::ones(&[12, 2]));
        let m = spatial_attention(&mut tape, z, wq, wk).unwrap();
        assert!(tape.value(m).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

        let z = tape.constant(Tensor::filled(&[1, 1, 3, 4], 0.7));
        let m = spatial_attention(&mut tape, z, wq, wk).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = tape.constant(Tensor::from_fn(&[2, 4, 3, 4], |_| rng.gen_range(-1.0..1.0)));
        let wq = tape.constant(Tensor::from_fn(&[12, 2], |_| rng.gen_range(-1.0..1.0)));
        let wk = tape.constant(Tensor::from_fn(&[12, 2], |_| rng.gen_range(-1.0..1.0)));
        let m = spatial_attention(&mut tape, z, wq, wk).unwrap();
        for row in tape.value(m).data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let bad = tape.constant(Tensor::zeros(&[11, 2]));
        assert!(spatial_attention(&mut tape, z, bad, wk).is_err());
    }

    proptest::proptest! {
        #[test]
        fn threshold_is_idempotent_and_monotone(seed in 0u64..10_000, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_stochastic(5, &mut rng);
            let g = hard_threshold(&m, t1);
            proptest::prop_assert_eq!(hard_threshold(&g, t1), g.clone());
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            proptest::prop_assert!(
                mobility_indicator(&hard_threshold(&m, hi)) <= mobility_indicator(&hard_threshold(&m, lo))
            );
        }

        #[test]
        fn self_loops_bound_density(seed in 0u64..10_000, geo_density in proptest::option::of(0.0f64..1.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..7);
            let m = random_stochastic(n, &mut rng);
            let geo = geo_density.map(|d| GeoAdjacency {
                weights: SquareMatrix::from_fn(n, |i, j| if ((i * n + j) as f64) < d * (n * n) as f64 { 0.5 } else { 0.0 }),
                sigma: 1.0,
                kappa: 1.0,
            });
            let out = sparsify(&m, geo.as_ref(), &AdjacencyOptions::generated(), 0);
            proptest::prop_assert!(mobility_indicator(&out.weights) >= 1.0 / n as f64);
            proptest::prop_assert!(out.weights.is_symmetric());
            proptest::prop_assert!((0..n).all(|i| out.weights.get(i, i) > 0.0));
        }
    }
}

use super::{GraphError, SquareMatrix};
use crate::data::RegionTable;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in kilometres between two (lat, lon) points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Pairwise distances between all regions.
pub fn haversine_matrix(table: &RegionTable) -> SquareMatrix {
    let r = table.regions();
    SquareMatrix::from_fn(r.len(), |i, j| {
        if i == j {
            0.0
        } else {
            haversine_km(r[i].lat, r[i].lon, r[j].lat, r[j].lon)
        }
    })
}

fn off_diagonal(dist: &SquareMatrix) -> impl Iterator<Item = f64> + '_ {
    let n = dist.n();
    (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| dist.get(i, j)))
}

/// Population standard deviation of the off-diagonal distances.
pub fn distance_std(dist: &SquareMatrix) -> f64 {
    let v: Vec<f64> = off_diagonal(dist).collect();
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn mean_pairwise_distance(dist: &SquareMatrix) -> f64 {
    let v: Vec<f64> = off_diagonal(dist).collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Static distance-kernel adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoAdjacency {
    pub weights: SquareMatrix,
    /// Kernel width in km.
    pub sigma: f64,
    /// Distance cutoff in km.
    pub kappa: f64,
}

impl GeoAdjacency {
    /// Fraction of non-zero weights.
    pub fn density(&self) -> f64 {
        let n = self.weights.n();
        self.weights.count_nonzero() as f64 / (n * n) as f64
    }
}

/// `exp(−d²/σ²)` for pairs within `kappa`, zero otherwise; no self-loops.
pub fn gaussian_kernel_adjacency(
    dist: &SquareMatrix,
    sigma: f64,
    kappa: f64,
) -> Result<GeoAdjacency, GraphError> {
    if !(sigma > 0.0) {
        return Err(GraphError::NonPositiveSigma(sigma));
    }
    let weights = SquareMatrix::from_fn(dist.n(), |i, j| {
        let d = dist.get(i, j);
        if i == j || d > kappa {
            0.0
        } else {
            (-(d * d) / (sigma * sigma)).exp()
        }
    });
    Ok(GeoAdjacency {
        weights,
        sigma,
        kappa,
    })
}

/// Kernel adjacency with σ = std of distances and κ defaulting to the mean
/// pairwise distance.
pub fn geo_adjacency_from_table(
    table: &RegionTable,
    kappa: Option<f64>,
) -> Result<GeoAdjacency, GraphError> {
    let dist = haversine_matrix(table);
    let sigma = distance_std(&dist);
    let kappa = kappa.unwrap_or_else(|| mean_pairwise_distance(&dist));
    gaussian_kernel_adjacency(&dist, sigma, kappa)
}

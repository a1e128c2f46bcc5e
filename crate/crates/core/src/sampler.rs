//! Density-based profile sampling.
//!
//! Profiles are embedded, reduced to a few dimensions, and modeled with an
//! isotropic Gaussian KDE. Majority sampling keeps the densest profiles;
//! minority sampling draws without replacement with weight inversely
//! proportional to density. Virtual profiles pair one profile's objective
//! paragraph with a near neighbor's subjective paragraph.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::extractor::{AttributeSet, UserProfile};
use crate::gateway::{Channel, Gateway, GatewayError};
use crate::linalg::{cosine, euclidean, normalize, squared_distance, Pca, PcaError};

pub const DENSITY_EPSILON: f64 = 1e-12;
pub const DEFAULT_REDUCED_DIMS: usize = 2;
pub const DEFAULT_LDL_K: usize = 5;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("need more than {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("cannot reduce {dim}-dimensional vectors to {d_r} dimensions")]
    BadDims { dim: usize, d_r: usize },
    #[error("points have inconsistent dimensions")]
    RaggedInput,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("all points coincide; bandwidth cannot be estimated")]
    ZeroVariance,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("requested {n} items but only {available} available")]
    TooMany { n: usize, available: usize },
    #[error("{items} items but {vectors} vectors")]
    LengthMismatch { items: usize, vectors: usize },
    #[error("profile {0} has no point in the density model")]
    MissingPoint(String),
    #[error("neighbor count must be at least 1")]
    BadK,
    #[error("empty {0}")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub id: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ReduceMethod {
    #[default]
    Pca,
    /// Force-directed layout over the k-nearest-neighbor graph, started from
    /// the PCA projection.
    NeighborGraph { neighbors: usize, epochs: usize, seed: u64 },
}

fn check_points(points: &[Vec<f64>]) -> Result<usize, SamplerError> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(SamplerError::RaggedInput);
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(SamplerError::NonFinite);
    }
    Ok(dim)
}

/// Reduces labeled vectors to `d_r` dimensions; `d_r` must be below the input dimension.
pub fn reduce(
    ids: &[String],
    vectors: &[Vec<f64>],
    d_r: usize,
    method: ReduceMethod,
) -> Result<Vec<ReducedPoint>, SamplerError> {
    if ids.len() != vectors.len() {
        return Err(SamplerError::LengthMismatch {
            items: ids.len(),
            vectors: vectors.len(),
        });
    }
    if vectors.len() < 2 {
        return Err(SamplerError::TooFewPoints { need: 1, got: vectors.len() });
    }
    let dim = check_points(vectors)?;
    if d_r == 0 || d_r >= dim {
        return Err(SamplerError::BadDims { dim, d_r });
    }
    let pca = Pca::fit(vectors, d_r)?;
    let mut coords = pca.transform(vectors);
    if let ReduceMethod::NeighborGraph { neighbors, epochs, seed } = method {
        coords = neighbor_graph_layout(vectors, coords, neighbors.max(1), epochs, seed);
    }
    Ok(ids
        .iter()
        .zip(coords)
        .map(|(id, coords)| ReducedPoint { id: id.clone(), coords })
        .collect())
}

/// Indices of the `k` nearest points to `i` by Euclidean distance, ties by index.
fn knn(points: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(&points[i], &points[j]), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

fn neighbor_graph_layout(
    high: &[Vec<f64>],
    mut low: Vec<Vec<f64>>,
    k: usize,
    epochs: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let n = high.len();
    let graph: Vec<Vec<usize>> = (0..n).map(|i| knn(high, i, k.min(n - 1))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 0..epochs {
        let rate = 1.0 - epoch as f64 / epochs as f64;
        for i in 0..n {
            for &j in &graph[i] {
                let dist2 = squared_distance(&low[i], &low[j]);
                let pull = rate * 2.0 / (1.0 + dist2);
                let step: Vec<f64> = low[j].iter().zip(&low[i]).map(|(b, a)| (b - a) * pull * 0.5).collect();
                low[i].iter_mut().zip(&step).for_each(|(x, s)| *x += s);
                low[j].iter_mut().zip(&step).for_each(|(x, s)| *x -= s);
                let neg = rng.gen_range(0..n);
                if neg == i {
                    continue;
                }
                let dist2 = squared_distance(&low[i], &low[neg]);
                let push = rate * 0.1 / ((0.001 + dist2) * (1.0 + dist2));
                let step: Vec<f64> =
                    low[i].iter().zip(&low[neg]).map(|(a, b)| ((a - b) * push).clamp(-4.0, 4.0)).collect();
                low[i].iter_mut().zip(&step).for_each(|(x, s)| *x += s);
            }
        }
    }
    low
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
}

/// Isotropic Gaussian KDE over reduced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub points: Vec<ReducedPoint>,
    pub bandwidth: f64,
    pub kernel: Kernel,
}

/// Scott's rule: n^(-1/(d+4)) times the mean per-dimension sample deviation.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut sigma = 0.0;
    for c in 0..d {
        let mean = points.iter().map(|p| p[c]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sigma += var.sqrt();
    }
    sigma /= d as f64;
    (n as f64).powf(-1.0 / (d as f64 + 4.0)) * sigma
}

pub fn fit_kde(points: Vec<ReducedPoint>, bandwidth: Option<f64>) -> Result<DensityModel, SamplerError> {
    if points.len() < 2 {
        return Err(SamplerError::TooFewPoints { need: 1, got: points.len() });
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.coords.clone()).collect();
    let dim = check_points(&coords)?;
    if dim == 0 {
        return Err(SamplerError::BadDims { dim, d_r: 0 });
    }
    let bandwidth = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(SamplerError::BadBandwidth(h)),
        None => {
            let h = scott_bandwidth(&coords);
            if h <= 0.0 {
                return Err(SamplerError::ZeroVariance);
            }
            h
        }
    };
    Ok(DensityModel {
        points,
        bandwidth,
        kernel: Kernel::Gaussian,
    })
}

impl DensityModel {
    pub fn dims(&self) -> usize {
        self.points[0].coords.len()
    }

    /// (1/n) Σ (2πh²)^(-d/2) exp(-|x - xᵢ|² / 2h²)
    pub fn density(&self, x: &[f64]) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let norm = (2.0 * PI * h2).powf(-(self.dims() as f64) / 2.0);
        let sum: f64 = self
            .points
            .iter()
            .map(|p| (-squared_distance(x, &p.coords) / (2.0 * h2)).exp())
            .sum();
        norm * sum / self.points.len() as f64
    }

    /// Density at each model point, keyed by id.
    pub fn point_densities(&self) -> HashMap<&str, f64> {
        self.points.iter().map(|p| (p.id.as_str(), self.density(&p.coords))).collect()
    }
}

fn densities_for(model: &DensityModel, profiles: &[UserProfile]) -> Result<Vec<f64>, SamplerError> {
    let by_id = model.point_densities();
    profiles
        .iter()
        .map(|p| by_id.get(p.id.as_str()).copied().ok_or_else(|| SamplerError::MissingPoint(p.id.clone())))
        .collect()
}

fn tagged(mut p: UserProfile, strategy: &str) -> UserProfile {
    p.meta.insert("sampling_strategy".into(), strategy.into());
    p
}

/// The `n` profiles at the highest density, ties broken by id.
pub fn sample_majority(model: &DensityModel, profiles: &[UserProfile], n: usize) -> Result<Vec<UserProfile>, SamplerError> {
    if n > profiles.len() {
        return Err(SamplerError::TooMany { n, available: profiles.len() });
    }
    let dens = densities_for(model, profiles)?;
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| dens[b].total_cmp(&dens[a]).then_with(|| profiles[a].id.cmp(&profiles[b].id)));
    Ok(order.into_iter().take(n).map(|i| tagged(profiles[i].clone(), "major")).collect())
}

/// Weighted sampling without replacement, weight 1 / (density + ε).
pub fn sample_minority(
    model: &DensityModel,
    profiles: &[UserProfile],
    n: usize,
    seed: u64,
) -> Result<Vec<UserProfile>, SamplerError> {
    if n > profiles.len() {
        return Err(SamplerError::TooMany { n, available: profiles.len() });
    }
    let dens = densities_for(model, profiles)?;
    let weights: Vec<f64> = dens.iter().map(|d| 1.0 / (d + DENSITY_EPSILON)).collect();
    Ok(weighted_without_replacement(&weights, n, seed)
        .into_iter()
        .map(|i| tagged(profiles[i].clone(), "minor"))
        .collect())
}

/// Sequential weighted draws without replacement; returns indices in draw order.
pub fn weighted_without_replacement(weights: &[f64], n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.min(weights.len()) {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if target < weights[i] {
                pick = pos;
                break;
            }
            target -= weights[i];
        }
        out.push(remaining.remove(pick));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualProfile {
    pub profile: UserProfile,
    pub of_source_id: String,
    pub sc_source_id: String,
}

fn virtual_profile(base: &UserProfile, neighbor: &UserProfile) -> VirtualProfile {
    let mut attributes = AttributeSet {
        scene_consistent: base.attributes.scene_consistent.clone(),
        scene_related: base.attributes.scene_related.clone(),
        big_five: neighbor.attributes.big_five.clone(),
    };
    attributes.scene_consistent.remove("language_style");
    if let Some(style) = neighbor.attributes.scene_consistent.get("language_style") {
        attributes.scene_consistent.insert("language_style".into(), style.clone());
    }
    let meta = BTreeMap::from([
        ("sampling_strategy".to_string(), "virtual".to_string()),
        ("of_source".to_string(), base.id.clone()),
        ("sc_source".to_string(), neighbor.id.clone()),
    ]);
    VirtualProfile {
        profile: UserProfile {
            id: format!("virt-{}-{}", base.id, neighbor.id),
            attributes,
            narrative_of: base.narrative_of.clone(),
            narrative_sc: neighbor.narrative_sc.clone(),
            source_dialogue_id: None,
            meta,
            warnings: Vec::new(),
        },
        of_source_id: base.id.clone(),
        sc_source_id: neighbor.id.clone(),
    }
}

/// Lazily yields distinct (base, neighbor) virtual profiles until every
/// combination has been produced.
pub struct VirtualProfiles<'a> {
    profiles: &'a [UserProfile],
    neighbors: Vec<Vec<usize>>,
    used: HashSet<(usize, usize)>,
    total: usize,
    rng: ChaCha8Rng,
}

impl<'a> VirtualProfiles<'a> {
    /// `k` is clamped to `profiles.len() - 1`.
    pub fn new(profiles: &'a [UserProfile], embeddings: &[Vec<f64>], k: usize, seed: u64) -> Result<Self, SamplerError> {
        if profiles.len() < 2 {
            return Err(SamplerError::TooFewPoints { need: 1, got: profiles.len() });
        }
        if embeddings.len() != profiles.len() {
            return Err(SamplerError::LengthMismatch {
                items: profiles.len(),
                vectors: embeddings.len(),
            });
        }
        if k == 0 {
            return Err(SamplerError::BadK);
        }
        check_points(embeddings)?;
        let n = profiles.len();
        let k_eff = if k > n - 1 {
            warn!(k, clamped = n - 1, "neighbor count exceeds available profiles");
            n - 1
        } else {
            k
        };
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (cosine(&embeddings[i], &embeddings[j]), j)).collect();
                others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(k_eff).map(|(_, j)| j).collect()
            })
            .collect();
        Ok(VirtualProfiles {
            profiles,
            neighbors,
            used: HashSet::new(),
            total: n * k_eff,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Number of distinct combinations available.
    pub fn capacity(&self) -> usize {
        self.total
    }
}

impl Iterator for VirtualProfiles<'_> {
    type Item = VirtualProfile;

    fn next(&mut self) -> Option<VirtualProfile> {
        if self.used.len() >= self.total {
            return None;
        }
        let n = self.profiles.len();
        let k = self.neighbors[0].len();
        let mut pair = None;
        for _ in 0..64 {
            let base = self.rng.gen_range(0..n);
            let nb = self.neighbors[base][self.rng.gen_range(0..k)];
            if !self.used.contains(&(base, nb)) {
                pair = Some((base, nb));
                break;
            }
        }
        // Near exhaustion random probing stalls; scan from a random start instead.
        let (base, nb) = pair.unwrap_or_else(|| {
            let start = self.rng.gen_range(0..self.total);
            (0..self.total)
                .map(|o| (start + o) % self.total)
                .map(|slot| (slot / k, self.neighbors[slot / k][slot % k]))
                .find(|p| !self.used.contains(p))
                .expect("an unused combination remains")
        });
        self.used.insert((base, nb));
        Some(virtual_profile(&self.profiles[base], &self.profiles[nb]))
    }
}

/// Up to `n` distinct virtual profiles; fewer (with a warning) when the
/// combinations run out.
pub fn synthesize_virtual(
    profiles: &[UserProfile],
    embeddings: &[Vec<f64>],
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<VirtualProfile>, SamplerError> {
    let iter = VirtualProfiles::new(profiles, embeddings, k, seed)?;
    let capacity = iter.capacity();
    if n > capacity {
        warn!(requested = n, available = capacity, "fewer virtual profiles constructible than requested");
    }
    Ok(iter.take(n).collect())
}

/// Semantic embeddings of each profile's full narrative.
pub fn embed_profiles(profiles: &[UserProfile], gateway: &Gateway) -> Result<Vec<Vec<f64>>, SamplerError> {
    if profiles.is_empty() {
        return Err(SamplerError::EmptyInput("profile list"));
    }
    let texts: Vec<String> = profiles.iter().map(UserProfile::full_narrative).collect();
    Ok(gateway.embed(&texts, Channel::Semantic)?.into_iter().map(|v| v.values).collect())
}

/// Candidate indices sorted by ascending max-cosine to any reference, with the score.
pub fn rank_dissimilar(candidates: &[Vec<f64>], references: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, references.iter().map(|r| cosine(c, r)).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored
}

/// The `n` candidates least similar to every reference profile, ascending by score.
pub fn select_dissimilar(
    candidates: &[UserProfile],
    references: &[UserProfile],
    n: usize,
    gateway: &Gateway,
) -> Result<Vec<(UserProfile, f64)>, SamplerError> {
    if n > candidates.len() {
        return Err(SamplerError::TooMany { n, available: candidates.len() });
    }
    if references.is_empty() {
        return Err(SamplerError::EmptyInput("reference profiles"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let c = embed_profiles(candidates, gateway)?;
    let r = embed_profiles(references, gateway)?;
    Ok(rank_dissimilar(&c, &r)
        .into_iter()
        .take(n)
        .map(|(i, s)| (tagged(candidates[i].clone(), "dissimilar"), s))
        .collect())
}

/// Mean over points of the mean distance to their `k` nearest neighbors.
pub fn ldl(points: &[Vec<f64>], k: usize) -> Result<f64, SamplerError> {
    if k == 0 {
        return Err(SamplerError::BadK);
    }
    if points.len() <= k {
        return Err(SamplerError::TooFewPoints { need: k, got: points.len() });
    }
    check_points(points)?;
    let per_point: Vec<f64> = (0..points.len())
        .map(|i| knn(points, i, k).iter().map(|&j| euclidean(&points[i], &points[j])).sum::<f64>() / k as f64)
        .collect();
    Ok(per_point.iter().sum::<f64>() / points.len() as f64)
}

/// log mean over distinct pairs of exp(-2‖x - y‖²), after L2 normalization.
pub fn uniformity_loss(points: &[Vec<f64>]) -> Result<f64, SamplerError> {
    if points.len() < 2 {
        return Err(SamplerError::TooFewPoints { need: 1, got: points.len() });
    }
    check_points(points)?;
    let unit: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let mut v = p.clone();
            normalize(&mut v);
            v
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            sum += (-2.0 * squared_distance(&unit[i], &unit[j])).exp();
            pairs += 1;
        }
    }
    Ok((sum / pairs as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    fn points(coords: &[Vec<f64>]) -> Vec<ReducedPoint> {
        ids(coords.len())
            .into_iter()
            .zip(coords)
            .map(|(id, c)| ReducedPoint { id, coords: c.clone() })
            .collect()
    }

    fn profiles(n: usize) -> Vec<UserProfile> {
        ids(n)
            .into_iter()
            .map(|id| UserProfile::from_narratives(id.clone(), format!("You are {id} OF."), format!("You are {id} SC.")))
            .collect()
    }

    #[test]
    fn reduce_collinear_preserves_ratios() {
        let v = vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 2.0], vec![3.0, 6.0, 6.0]];
        let r = reduce(&ids(3), &v, 1, ReduceMethod::Pca).unwrap();
        let x: Vec<f64> = r.iter().map(|p| p.coords[0]).collect();
        assert_abs_diff_eq!((x[1] - x[0]).abs(), 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!((x[2] - x[1]).abs(), 6.0, epsilon = 1e-10);
        assert!(matches!(reduce(&ids(3), &v, 3, ReduceMethod::Pca), Err(SamplerError::BadDims { .. })));
    }

    #[test]
    fn reduce_duplicates_coincide() {
        let v = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0]];
        let r = reduce(&ids(3), &v, 2, ReduceMethod::Pca).unwrap();
        assert_eq!(r[0].coords, r[1].coords);
    }

    #[test]
    fn neighbor_graph_is_seeded() {
        let v: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64 % 7.0, (i % 3) as f64]).collect();
        let m = ReduceMethod::NeighborGraph { neighbors: 3, epochs: 50, seed: 4 };
        let a = reduce(&ids(12), &v, 2, m).unwrap();
        let b = reduce(&ids(12), &v, 2, m).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|p| &p.coords).all(|x| x.is_finite()));
    }

    #[test]
    fn kde_two_points_formula() {
        let m = fit_kde(points(&[vec![0.0], vec![2.0]]), Some(1.0)).unwrap();
        let phi = |z: f64| (-z * z / 2.0).exp() / (2.0 * PI).sqrt();
        for x in [-1.0, 0.0, 0.5, 3.0] {
            assert_abs_diff_eq!(m.density(&[x]), 0.5 * (phi(x) + phi(x - 2.0)), epsilon = 1e-15);
        }
        assert!(matches!(fit_kde(points(&[vec![0.0]]), None), Err(SamplerError::TooFewPoints { .. })));
        assert!(matches!(fit_kde(points(&[vec![1.0], vec![1.0]]), None), Err(SamplerError::ZeroVariance)));
        assert!(matches!(fit_kde(points(&[vec![1.0], vec![2.0]]), Some(0.0)), Err(SamplerError::BadBandwidth(_))));
    }

    #[test]
    fn kde_serializes() {
        let m = fit_kde(points(&[vec![0.0, 1.0], vec![2.0, 0.5]]), None).unwrap();
        let back: DensityModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn cluster_and_outlier() -> (DensityModel, Vec<UserProfile>) {
        let mut c: Vec<Vec<f64>> = (0..6).map(|i| vec![0.01 * i as f64, 0.0]).collect();
        c.push(vec![10.0, 10.0]);
        (fit_kde(points(&c), None).unwrap(), profiles(7))
    }

    #[test]
    fn majority_picks_cluster() {
        let (m, ps) = cluster_and_outlier();
        let one = sample_majority(&m, &ps, 1).unwrap();
        assert_ne!(one[0].id, "p06");
        assert_eq!(one[0].meta["sampling_strategy"], "major");
        let mut all: Vec<String> = sample_majority(&m, &ps, 7).unwrap().into_iter().map(|p| p.id).collect();
        all.sort();
        assert_eq!(all, ids(7));
        assert!(sample_majority(&m, &ps, 0).unwrap().is_empty());
        assert!(sample_majority(&m, &ps, 8).is_err());
    }

    #[test]
    fn minority_prefers_outlier() {
        let (m, ps) = cluster_and_outlier();
        let hits = (0..1000).filter(|&s| sample_minority(&m, &ps, 1, s).unwrap()[0].id == "p06").count();
        assert!(hits as f64 / 1000.0 > 1.0 / 7.0);
        assert_eq!(sample_minority(&m, &ps, 3, 9).unwrap(), sample_minority(&m, &ps, 3, 9).unwrap());
        assert_eq!(sample_minority(&m, &ps, 7, 1).unwrap().len(), 7);
    }

    #[test]
    fn virtual_forced_pairing() {
        let ps = profiles(2);
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = synthesize_virtual(&ps, &emb, 5, 3, 0).unwrap();
        assert_eq!(v.len(), 2);
        for vp in &v {
            assert_ne!(vp.of_source_id, vp.sc_source_id);
            let of = ps.iter().find(|p| p.id == vp.of_source_id).unwrap();
            let sc = ps.iter().find(|p| p.id == vp.sc_source_id).unwrap();
            assert_eq!(vp.profile.narrative_of, of.narrative_of);
            assert_eq!(vp.profile.narrative_sc, sc.narrative_sc);
        }
    }

    #[test]
    fn virtual_uses_nearest_neighbors() {
        let ps = profiles(4);
        let emb = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]];
        let v = synthesize_virtual(&ps, &emb, 4, 1, 7).unwrap();
        for vp in v {
            let pair = (vp.of_source_id.as_str(), vp.sc_source_id.as_str());
            assert!(matches!(pair, ("p00", "p01") | ("p01", "p00") | ("p02", "p03") | ("p03", "p02")));
        }
    }

    #[test]
    fn dissimilar_ranking() {
        let refs = vec![vec![1.0, 0.0]];
        let cands = vec![
            vec![0.9, (1.0f64 - 0.81).sqrt()],
            vec![0.2, (1.0f64 - 0.04).sqrt()],
            vec![0.5, (1.0f64 - 0.25).sqrt()],
        ];
        let ranked = rank_dissimilar(&cands, &refs);
        let order: Vec<usize> = ranked.iter().map(|r| r.0).collect();
        assert_eq!(order, [1, 2, 0]);
        assert_abs_diff_eq!(ranked[0].1, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn select_dissimilar_identical_last() {
        let g = Gateway::mock(0);
        let refs = profiles(1);
        let mut cands = profiles(3);
        cands[0] = refs[0].clone();
        cands[1].narrative_of = "You enjoy sailing on cold northern seas.".into();
        let out = select_dissimilar(&cands, &refs, 3, &g).unwrap();
        assert_eq!(out.last().unwrap().0.id, refs[0].id);
        assert_abs_diff_eq!(out.last().unwrap().1, 1.0, epsilon = 1e-12);
        assert!(out.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn ldl_and_uniformity() {
        assert_eq!(ldl(&vec![vec![1.0, 1.0]; 4], 2).unwrap(), 0.0);
        assert_abs_diff_eq!(ldl(&[vec![0.0], vec![1.0], vec![2.0]], 1).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(ldl(&[vec![0.0], vec![1.0]], 2), Err(SamplerError::TooFewPoints { .. })));
        assert_abs_diff_eq!(uniformity_loss(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(), -8.0, epsilon = 1e-12);
        assert_eq!(uniformity_loss(&[vec![0.0, 2.0], vec![0.0, 2.0]]).unwrap(), 0.0);
        assert!(uniformity_loss(&[vec![1.0]]).is_err());
    }
}

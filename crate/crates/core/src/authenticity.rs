//! Authenticity, diversity and continuity metrics.
//!
//! - Semantic and stylistic similarity: cosine of channel embeddings.
//! - Author verification accuracy (AVA): style similarity thresholded into a
//!   same-author prediction.
//! - ADV: Euclidean distance between PCA-reduced embeddings of generated and
//!   target dialogues (user side only).
//! - Early-stop rate (ESR): share of dialogues with three consecutive
//!   gratitude turns or three consecutive near-identical user turns. The same
//!   detector runs in streaming mode inside the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dialogue;
use crate::gateway::{Channel, Gateway, GatewayError};
use crate::linalg::{euclidean, percentile, Pca, PcaError};
use crate::text::edit_similarity;

pub const GRATITUDE_LEXICON: [&str; 5] = ["thank", "thanks", "thank you", "appreciate it", "much appreciated"];
pub const DEFAULT_REPETITION_THRESHOLD: f64 = 0.9;
pub const DEFAULT_ADV_DIMS: usize = 2;
/// Percentiles reported for ADV distances.
pub const ADV_PERCENTILES: [f64; 11] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];
const RUN: usize = 3;

#[derive(Debug, Error)]
pub enum AuthenticityError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("generated and target lists differ in length ({generated} vs {targets})")]
    LengthMismatch { generated: usize, targets: usize },
    #[error("need at least 2 dialogue pairs, got {0}")]
    TooFewPairs(usize),
}

/// Case-insensitive substring match of the trimmed turn against the gratitude lexicon.
pub fn is_gratitude(text: &str) -> bool {
    let t = text.trim().to_lowercase();
    GRATITUDE_LEXICON.iter().any(|g| t.contains(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub channel: Channel,
}

fn similarity(a: &str, b: &str, channel: Channel, gateway: &Gateway) -> Result<SimilarityScore, AuthenticityError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(AuthenticityError::EmptyInput("text"));
    }
    let v = gateway.embed(&[a, b], channel)?;
    Ok(SimilarityScore {
        value: v[0].cosine(&v[1]),
        channel,
    })
}

pub fn sem_sim(a: &str, b: &str, gateway: &Gateway) -> Result<SimilarityScore, AuthenticityError> {
    similarity(a, b, Channel::Semantic, gateway)
}

pub fn style_sim(a: &str, b: &str, gateway: &Gateway) -> Result<SimilarityScore, AuthenticityError> {
    similarity(a, b, Channel::Style, gateway)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorPair {
    pub a: String,
    pub b: String,
    pub same_author: bool,
}

impl AuthorPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, same_author: bool) -> Self {
        AuthorPair {
            a: a.into(),
            b: b.into(),
            same_author,
        }
    }
}

/// Fraction of pairs whose `similarity >= threshold` prediction matches the label.
pub fn accuracy_at(similarities: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let correct = similarities
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= threshold) == **l)
        .count();
    correct as f64 / similarities.len() as f64
}

/// Mean of per-class recall; classes absent from `labels` are ignored.
pub fn balanced_accuracy_at(similarities: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let mut recalls = Vec::new();
    for class in [true, false] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if !idx.is_empty() {
            let hit = idx.iter().filter(|&&i| (similarities[i] >= threshold) == class).count();
            recalls.push(hit as f64 / idx.len() as f64);
        }
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

fn style_similarities(pairs: &[AuthorPair], gateway: &Gateway) -> Result<Vec<f64>, AuthenticityError> {
    if pairs.is_empty() {
        return Err(AuthenticityError::EmptyInput("pair list"));
    }
    crate::par_map(pairs, |p| style_sim(&p.a, &p.b, gateway).map(|s| s.value))
        .into_iter()
        .collect()
}

/// Author verification accuracy at a fixed threshold.
pub fn ava(pairs: &[AuthorPair], threshold: f64, gateway: &Gateway) -> Result<f64, AuthenticityError> {
    let sims = style_similarities(pairs, gateway)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.same_author).collect();
    Ok(accuracy_at(&sims, &labels, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Threshold maximizing balanced accuracy. Candidates are every observed
/// similarity plus one value above the maximum; ties go to the lowest threshold.
pub fn calibrate_threshold(similarities: &[f64], labels: &[bool]) -> Option<Calibration> {
    if similarities.is_empty() {
        return None;
    }
    let mut candidates = similarities.to_vec();
    candidates.push(similarities.iter().copied().fold(f64::MIN, f64::max) + 1e-9);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: Option<Calibration> = None;
    for t in candidates {
        let b = balanced_accuracy_at(similarities, labels, t);
        if best.is_none_or(|c| b > c.balanced_accuracy) {
            best = Some(Calibration {
                threshold: t,
                balanced_accuracy: b,
            });
        }
    }
    best
}

pub fn calibrate(pairs: &[AuthorPair], gateway: &Gateway) -> Result<Calibration, AuthenticityError> {
    let sims = style_similarities(pairs, gateway)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.same_author).collect();
    Ok(calibrate_threshold(&sims, &labels).expect("pairs are non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvReport {
    pub dims: usize,
    pub distances: Vec<f64>,
    /// `(percentile, distance)` rows of the empirical distribution.
    pub percentiles: Vec<(f64, f64)>,
    pub mean: f64,
}

/// ADV from precomputed embeddings: PCA is fitted on the union of both sets.
pub fn adv_from_embeddings(
    generated: &[Vec<f64>],
    targets: &[Vec<f64>],
    dims: usize,
) -> Result<AdvReport, AuthenticityError> {
    if generated.len() != targets.len() {
        return Err(AuthenticityError::LengthMismatch {
            generated: generated.len(),
            targets: targets.len(),
        });
    }
    if generated.len() < 2 {
        return Err(AuthenticityError::TooFewPairs(generated.len()));
    }
    let union: Vec<Vec<f64>> = generated.iter().chain(targets).cloned().collect();
    let pca = Pca::fit(&union, dims)?;
    let distances: Vec<f64> = generated
        .iter()
        .zip(targets)
        .map(|(g, t)| euclidean(&pca.transform_one(g), &pca.transform_one(t)))
        .collect();
    let percentiles = ADV_PERCENTILES.iter().map(|&q| (q, percentile(&distances, q))).collect();
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    Ok(AdvReport {
        dims,
        distances,
        percentiles,
        mean,
    })
}

/// Embeds each dialogue's concatenated user utterances (semantic channel) and
/// compares generated and target dialogues pairwise after PCA.
pub fn adv(
    generated: &[Dialogue],
    targets: &[Dialogue],
    dims: usize,
    gateway: &Gateway,
) -> Result<AdvReport, AuthenticityError> {
    if generated.len() != targets.len() {
        return Err(AuthenticityError::LengthMismatch {
            generated: generated.len(),
            targets: targets.len(),
        });
    }
    if generated.len() < 2 {
        return Err(AuthenticityError::TooFewPairs(generated.len()));
    }
    let texts: Vec<String> = generated.iter().chain(targets).map(Dialogue::user_text).collect();
    let vectors: Vec<Vec<f64>> = gateway
        .embed(&texts, Channel::Semantic)?
        .into_iter()
        .map(|v| v.values)
        .collect();
    let (g, t) = vectors.split_at(generated.len());
    adv_from_embeddings(g, t, dims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopKind {
    Gratitude,
    Repetition,
}

/// Streaming early-stop detector fed one user turn at a time.
#[derive(Debug, Clone)]
pub struct EarlyStopDetector {
    threshold: f64,
    gratitude_run: usize,
    previous: Option<String>,
    similar_run: usize,
}

impl EarlyStopDetector {
    pub fn new(threshold: f64) -> Self {
        EarlyStopDetector {
            threshold,
            gratitude_run: 0,
            previous: None,
            similar_run: 0,
        }
    }

    /// Feeds the next user turn; returns the trigger once the latest three
    /// turns form a gratitude or repetition run.
    pub fn push(&mut self, turn: &str) -> Option<EarlyStopKind> {
        self.gratitude_run = if is_gratitude(turn) { self.gratitude_run + 1 } else { 0 };
        let lowered = turn.to_lowercase();
        self.similar_run = match &self.previous {
            Some(prev) if edit_similarity(prev, &lowered) >= self.threshold => self.similar_run + 1,
            _ => 0,
        };
        self.previous = Some(lowered);
        if self.gratitude_run >= RUN {
            Some(EarlyStopKind::Gratitude)
        } else if self.similar_run >= RUN - 1 {
            Some(EarlyStopKind::Repetition)
        } else {
            None
        }
    }
}

/// First trigger over a dialogue's user turns, if any.
pub fn early_stop_trigger(d: &Dialogue, threshold: f64) -> Option<EarlyStopKind> {
    let mut det = EarlyStopDetector::new(threshold);
    d.user_turns().find_map(|t| det.push(&t.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsrReport {
    pub flagged: Vec<String>,
    pub total: usize,
    /// Percentage of evaluated dialogues flagged, in [0, 100].
    pub rate: f64,
}

pub fn esr(dialogues: &[Dialogue], sim_threshold: f64) -> Result<EsrReport, AuthenticityError> {
    if dialogues.is_empty() {
        return Err(AuthenticityError::EmptyInput("dialogue list"));
    }
    let flagged: Vec<String> = dialogues
        .iter()
        .filter(|d| early_stop_trigger(d, sim_threshold).is_some())
        .map(|d| d.id.clone())
        .collect();
    Ok(EsrReport {
        rate: 100.0 * flagged.len() as f64 / dialogues.len() as f64,
        total: dialogues.len(),
        flagged,
    })
}

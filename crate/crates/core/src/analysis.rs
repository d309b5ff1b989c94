//! Post-processing of attribution maps: spatial projection, scale
//! embeddings, consistency statistics and reconstructions.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::pipeline::{compute_wcam, perturbed_image, WCAMap, WcamConfig};
use crate::scorer::Scorer;
use crate::wavelet::{dwt_forward, SubbandId};
use crate::{Error, Image, Result};

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

/// Attribution collapsed onto the coarsest spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWCAM {
    pub grid: Array2<f64>,
}

impl SpatialWCAM {
    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.grid.iter().copied())
    }
}

/// Sum-pools every subband onto the `(g / 2^L)²` approximation grid.
///
/// A cell at level `l` covers `2^(L-l)` approximation cells per side, so its
/// mass lands in the approximation cell sharing its spatial footprint.
pub fn spatial_project(map: &WCAMap) -> Result<SpatialWCAM> {
    let g = map.grid_size();
    let levels = map.levels();
    let side = g >> levels;
    let mut acc = vec![CompensatedSum::default(); side * side];
    for id in SubbandId::all(levels) {
        let rect = map.subband_cells(id)?;
        let n = rect.row1 - rect.row0;
        let pool = n / side;
        for r in 0..n {
            for c in 0..n {
                acc[(r / pool) * side + c / pool].add(map.total_indices[[rect.row0 + r, rect.col0 + c]]);
            }
        }
    }
    let grid = Array2::from_shape_fn((side, side), |(r, c)| acc[r * side + c].value());
    Ok(SpatialWCAM { grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingNorm {
    /// Sum of the indices in each subband.
    #[default]
    RawSum,
    /// Sum divided by the number of cells in the subband.
    MeanPerCell,
}

impl std::str::FromStr for EmbeddingNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw-sum" | "sum" => Ok(EmbeddingNorm::RawSum),
            "mean" | "mean-per-cell" => Ok(EmbeddingNorm::MeanPerCell),
            _ => Err(Error::InvalidParam(format!("unknown embedding normalization {s:?}"))),
        }
    }
}

/// Per-subband aggregate of a map, ordered `a, h_L, v_L, d_L, ..., h_1, v_1, d_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEmbedding {
    pub z: Vec<f64>,
    pub labels: Vec<String>,
    pub normalization: EmbeddingNorm,
    /// Number of negative indices floored to zero.
    pub floored: usize,
}

pub fn scale_embed(map: &WCAMap, normalization: EmbeddingNorm) -> Result<ScaleEmbedding> {
    let mut z = Vec::new();
    let mut labels = Vec::new();
    let mut floored = 0;
    for id in SubbandId::all(map.levels()) {
        let rect = map.subband_cells(id)?;
        let mut acc = CompensatedSum::default();
        for r in rect.row0..rect.row1 {
            for c in rect.col0..rect.col1 {
                let v = map.total_indices[[r, c]];
                if v < 0.0 {
                    floored += 1;
                } else {
                    acc.add(v);
                }
            }
        }
        let sum = acc.value();
        z.push(match normalization {
            EmbeddingNorm::RawSum => sum,
            EmbeddingNorm::MeanPerCell => sum / rect.area() as f64,
        });
        labels.push(id.label());
    }
    if floored > 0 {
        log::warn!("floored {floored} negative indices while embedding");
    }
    Ok(ScaleEmbedding { z, labels, normalization, floored })
}

/// Importance per decomposition level, coarse to fine.
///
/// Entry 0 is the approximation; entry `j >= 1` is level `L + 1 - j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCurve {
    pub importance: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub floored: usize,
}

pub fn frequency_curve(embedding: &ScaleEmbedding) -> Result<FrequencyCurve> {
    let z = &embedding.z;
    if z.is_empty() || !(z.len() - 1).is_multiple_of(3) {
        return Err(Error::Shape(format!("embedding of length {} is not 1 + 3L", z.len())));
    }
    let mut floored = embedding.floored;
    let mut clip = |v: f64| {
        if v < 0.0 {
            floored += 1;
            0.0
        } else {
            v
        }
    };
    let mut raw = vec![clip(z[0])];
    for chunk in z[1..].chunks(3) {
        let s = chunk.iter().map(|&v| clip(v)).sum();
        raw.push(s);
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateVariance("embedding has no positive mass".into()));
    }
    let importance: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let cumulative = importance
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(FrequencyCurve { importance, cumulative, floored })
}

pub fn embedding_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// All pairwise distances `d(i, j)` for `i < j`, in lexicographic order.
pub fn pairwise_distances(embeddings: &[ScaleEmbedding]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            out.push(embedding_distance(&embeddings[i].z, &embeddings[j].z)?);
        }
    }
    Ok(out)
}

/// Mean pairwise distance of a batch of embeddings.
pub fn batch_consistency(embeddings: &[ScaleEmbedding]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidParam("consistency needs at least two embeddings".into()));
    }
    let d = pairwise_distances(embeddings)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci95: (f64, f64),
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidParam("need at least two values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.975);
    let half = t * sd / (n as f64).sqrt();
    Ok(Summary { n, mean, std_dev: sd, ci95: (mean - half, mean + half) })
}

/// Distances between repeated estimates of one image under different seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBaseline {
    pub seeds: Vec<u64>,
    pub distances: Vec<f64>,
    pub summary: Summary,
}

pub const DEFAULT_NOISE_REPEATS: usize = 20;
pub const NOISE_SEED_OFFSET: u64 = 1_000_000;

/// Runs the estimator `repeats` times on one image with seeds
/// `config.sampler.seed + NOISE_SEED_OFFSET + r` and summarises the pairwise
/// embedding distances.
pub fn noise_baseline<S: Scorer + ?Sized>(
    image: &Image,
    target_class: usize,
    scorer: &S,
    config: &WcamConfig,
    normalization: EmbeddingNorm,
    repeats: usize,
) -> Result<NoiseBaseline> {
    if repeats < 3 {
        return Err(Error::InvalidParam("noise baseline needs at least three repeats".into()));
    }
    let seeds: Vec<u64> = (0..repeats as u64)
        .map(|r| config.sampler.seed.wrapping_add(NOISE_SEED_OFFSET + r))
        .collect();
    let embeddings = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = *config;
            cfg.sampler.seed = seed;
            scale_embed(&compute_wcam(image, target_class, scorer, &cfg)?, normalization)
        })
        .collect::<Result<Vec<_>>>()?;
    let distances = pairwise_distances(&embeddings)?;
    let summary = summarize(&distances)?;
    Ok(NoiseBaseline { seeds, distances, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    let sa = summarize(a)?;
    let sb = summarize(b)?;
    let va = sa.std_dev.powi(2) / sa.n as f64;
    let vb = sb.std_dev.powi(2) / sb.n as f64;
    let se2 = va + vb;
    if se2 <= 0.0 {
        return Err(Error::DegenerateVariance("both samples are constant".into()));
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (sa.n - 1) as f64 + vb * vb / (sb.n - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(WelchTest { t, dof, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub batch: Summary,
    pub noise: Summary,
    pub welch: WelchTest,
}

pub fn consistency_report(batch_distances: &[f64], noise: &NoiseBaseline) -> Result<ConsistencyReport> {
    Ok(ConsistencyReport {
        batch: summarize(batch_distances)?,
        noise: noise.summary.clone(),
        welch: welch_t_test(batch_distances, &noise.distances)?,
    })
}

/// Cell indices ranked by floored total index, descending; ties go to the
/// lower row-major index.
pub fn rank_cells(map: &WCAMap) -> Vec<usize> {
    let vals: Vec<f64> = map.total_indices.iter().map(|&v| v.max(0.0)).collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    order
}

fn topk_mask(order: &[usize], g: usize, k: usize) -> Array2<f64> {
    let mut mask = Array2::zeros((g, g));
    for &i in &order[..k] {
        mask[[i / g, i % g]] = 1.0;
    }
    mask
}

/// Keeps the coefficient groups of the `k` most important cells, zeroes the
/// rest, inverts and clamps to `[0, 1]`.
pub fn reconstruct_topk(image: &Image, map: &WCAMap, k: usize) -> Result<Image> {
    let g = map.grid_size();
    if k > g * g {
        return Err(Error::InvalidParam(format!("k = {k} exceeds {} cells", g * g)));
    }
    let (_, h, w) = image.dim();
    map.config.validate_image(h, w)?;
    let pyramid = dwt_forward(image, &map.config.wavelet)?;
    perturbed_image(&pyramid, &topk_mask(&rank_cells(map), g, k), true)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MinimalOutcome {
    /// Smallest `k` whose reconstruction is classified as the target.
    Found { k: usize, image: Array3<f64>, scores: Vec<f64> },
    NeverSufficient,
}

fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in scores.iter().enumerate() {
        if best.is_none_or(|b| v > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scans `k = 1..=K` and returns the first top-`k` reconstruction whose
/// predicted class (argmax of the class scores, ties to the lower class) is
/// `target_class`.
pub fn minimal_image<S: Scorer + ?Sized>(
    image: &Image,
    map: &WCAMap,
    scorer: &S,
    target_class: usize,
) -> Result<MinimalOutcome> {
    let g = map.grid_size();
    let (_, h, w) = image.dim();
    map.config.validate_image(h, w)?;
    let pyramid = dwt_forward(image, &map.config.wavelet)?;
    let order = rank_cells(map);
    let total = g * g;
    let chunk = scorer.max_batch().min(map.config.batch_size).max(1);
    let mut k = 1;
    while k <= total {
        let hi = (k + chunk - 1).min(total);
        let images = (k..=hi)
            .map(|kk| perturbed_image(&pyramid, &topk_mask(&order, g, kk), true))
            .collect::<Result<Vec<_>>>()?;
        let scores = scorer.class_scores(&images)?;
        if scores.len() != images.len() {
            return Err(Error::Scorer(crate::ScorerError::protocol(format!(
                "expected {} class-score rows, got {}",
                images.len(),
                scores.len()
            ))));
        }
        for (offset, (img, s)) in images.into_iter().zip(scores).enumerate() {
            if argmax(&s) == Some(target_class) {
                return Ok(MinimalOutcome::Found { k: k + offset, image: img, scores: s });
            }
        }
        k = hi + 1;
    }
    Ok(MinimalOutcome::NeverSufficient)
}

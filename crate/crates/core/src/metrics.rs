//! Faithfulness metrics: deletion and insertion curves, and μ-fidelity.
//!
//! An attribution is an importance per feature cell. Features live either in
//! the wavelet domain (one group of coefficients per mask cell) or in the
//! pixel domain (one block of pixels per cell). Removing a feature replaces
//! its values by the baseline.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pipeline::{score_lazily, WCAMap};
use crate::wavelet::{dwt_forward, inverse_in_place, WaveletSpec};
use crate::{Error, Image, Result, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureSpace {
    WaveletCells { wavelet: WaveletSpec },
    PixelCells,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionGrid {
    pub importance: Array2<f64>,
    pub feature_space: FeatureSpace,
    pub baseline: f64,
}

impl AttributionGrid {
    pub fn pixels(importance: Array2<f64>) -> Self {
        AttributionGrid { importance, feature_space: FeatureSpace::PixelCells, baseline: 0.0 }
    }

    pub fn from_wcam(map: &WCAMap) -> Self {
        AttributionGrid {
            importance: map.total_indices.clone(),
            feature_space: FeatureSpace::WaveletCells { wavelet: map.config.wavelet },
            baseline: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.importance.len()
    }

    /// Feature indices by descending importance, ties to the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let vals: Vec<f64> = self.importance.iter().copied().collect();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
        order
    }
}

/// Builds images with arbitrary subsets of features present.
struct Perturber<'a> {
    image: &'a Image,
    source: Image,
    attr: &'a AttributionGrid,
    cell: (usize, usize),
}

impl<'a> Perturber<'a> {
    fn new(image: &'a Image, attr: &'a AttributionGrid) -> Result<Self> {
        let (_, h, w) = image.dim();
        let (gr, gc) = attr.importance.dim();
        if gr == 0 || gc == 0 || h % gr != 0 || w % gc != 0 {
            return Err(Error::Shape(format!("{gr}x{gc} grid does not tile a {h}x{w} image")));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let source = match attr.feature_space {
            FeatureSpace::PixelCells => image.clone(),
            FeatureSpace::WaveletCells { wavelet } => {
                wavelet.check_shape(h, w)?;
                if gr % wavelet.block() != 0 || gr != gc {
                    return Err(Error::Shape(format!(
                        "wavelet grid must be square and divisible by {}",
                        wavelet.block()
                    )));
                }
                dwt_forward(image, &wavelet)?.coeffs
            }
        };
        Ok(Perturber { image, source, attr, cell: (h / gr, w / gc) })
    }

    fn render(&self, present: &[bool]) -> Image {
        if present.iter().all(|&p| p) {
            return self.image.clone();
        }
        let gc = self.attr.importance.ncols();
        let (ch, cw) = self.cell;
        let mut out = self.source.clone();
        let (c, h, w) = out.dim();
        for ci in 0..c {
            for r in 0..h {
                for col in 0..w {
                    if !present[(r / ch) * gc + col / cw] {
                        out[[ci, r, col]] = self.attr.baseline;
                    }
                }
            }
        }
        if let FeatureSpace::WaveletCells { wavelet } = self.attr.feature_space {
            inverse_in_place(&mut out, &wavelet).expect("shape checked");
            out.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    /// Features removed (deletion) or inserted (insertion) at each step.
    pub counts: Vec<usize>,
    pub scores: Vec<f64>,
    /// Trapezoidal area on a unit-width axis.
    pub auc: f64,
}

fn trapezoid(scores: &[f64]) -> f64 {
    let t = (scores.len() - 1) as f64;
    scores.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / t
}

fn step_counts(k: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > k {
        return Err(Error::InvalidParam(format!("steps must be in 1..={k}, got {steps}")));
    }
    Ok((0..=steps).map(|t| t * k / steps).collect())
}

fn curve<S: Scorer + ?Sized>(
    image: &Image,
    attr: &AttributionGrid,
    scorer: &S,
    target_class: usize,
    steps: usize,
    batch_size: usize,
    insert: bool,
) -> Result<CurveResult> {
    let perturber = Perturber::new(image, attr)?;
    let k = attr.n_features();
    let counts = step_counts(k, steps)?;
    let order = attr.ranking();
    let scores = score_lazily(counts.len(), batch_size, scorer, target_class, |t| {
        let mut present = vec![!insert; k];
        for &i in &order[..counts[t]] {
            present[i] = insert;
        }
        perturber.render(&present)
    })?;
    let auc = trapezoid(&scores);
    Ok(CurveResult { counts, scores, auc })
}

/// Removes features in order of decreasing importance; lower AUC is better.
pub fn deletion<S: Scorer + ?Sized>(
    image: &Image,
    attr: &AttributionGrid,
    scorer: &S,
    target_class: usize,
    steps: usize,
    batch_size: usize,
) -> Result<CurveResult> {
    curve(image, attr, scorer, target_class, steps, batch_size, false)
}

/// Inserts features into the baseline in order of decreasing importance;
/// higher AUC is better.
pub fn insertion<S: Scorer + ?Sized>(
    image: &Image,
    attr: &AttributionGrid,
    scorer: &S,
    target_class: usize,
    steps: usize,
    batch_size: usize,
) -> Result<CurveResult> {
    curve(image, attr, scorer, target_class, steps, batch_size, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuFidelity {
    pub correlation: f64,
    /// Set when either series is constant; the correlation is then reported as 0.
    pub degenerate: bool,
    pub subset_size: usize,
    pub n_subsets: usize,
    pub seed: u64,
}

pub const DEFAULT_MU_SUBSETS: usize = 128;

/// Default subset size: an eighth of the features, at least one.
pub fn default_subset_size(n_features: usize) -> usize {
    (n_features / 8).max(1)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between the attribution mass of random feature subsets and
/// the score drop caused by removing them.
#[allow(clippy::too_many_arguments)]
pub fn mu_fidelity<S: Scorer + ?Sized>(
    image: &Image,
    attr: &AttributionGrid,
    scorer: &S,
    target_class: usize,
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
    batch_size: usize,
) -> Result<MuFidelity> {
    let perturber = Perturber::new(image, attr)?;
    let k = attr.n_features();
    if subset_size == 0 || subset_size > k {
        return Err(Error::InvalidParam(format!("subset size must be in 1..={k}, got {subset_size}")));
    }
    if n_subsets < 2 {
        return Err(Error::InvalidParam("μ-fidelity needs at least two subsets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0..n_subsets).map(|_| sample(&mut rng, k, subset_size).into_vec()).collect();
    let flat: Vec<f64> = attr.importance.iter().copied().collect();
    let mass: Vec<f64> = subsets.iter().map(|s| s.iter().map(|&i| flat[i]).sum()).collect();

    let scores = score_lazily(n_subsets + 1, batch_size, scorer, target_class, |i| {
        let mut present = vec![true; k];
        if i > 0 {
            for &j in &subsets[i - 1] {
                present[j] = false;
            }
        }
        perturber.render(&present)
    })?;
    let drops: Vec<f64> = scores[1..].iter().map(|s| scores[0] - s).collect();
    let corr = pearson(&mass, &drops);
    if corr.is_none() {
        log::warn!("μ-fidelity is undefined: constant attribution mass or score drop");
    }
    Ok(MuFidelity {
        correlation: corr.unwrap_or(0.0),
        degenerate: corr.is_none(),
        subset_size,
        n_subsets,
        seed,
    })
}

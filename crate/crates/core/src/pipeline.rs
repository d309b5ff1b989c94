//! The attribution pipeline: design → masks → perturbed wavelet transforms →
//! reconstructions → scores → total Sobol indices.
//!
//! Design rows are scored in this order: the `N` rows of `A`, the `N` rows of
//! `B`, then the `N` rows of each `C^(k)` for `k = 0..K`. Every row is reshaped
//! row-major into a `g x g` mask; mask cell `(r, c)` covers design column
//! `r * g + c`. A mask is upsampled by nearest neighbour onto the coefficient
//! plane and multiplies the coefficients of every channel, so a mask value of
//! 1 keeps a coefficient group and 0 sends it to the zero baseline.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qmc::{draw_design, DesignMatrices, Sampler};
use crate::scorer::{ScoreKind, Scorer, ScorerError};
use crate::sensitivity::{jansen_estimate, ScoredDesign};
use crate::wavelet::{dwt_forward, inverse_in_place, subband_region, Rect, SubbandId, WaveletSpec};
use crate::{Error, Image, Pyramid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MaskMode {
    /// Mask values scale coefficients continuously.
    #[default]
    Continuous,
    /// Mask values are thresholded to {0, 1} before use.
    Binary { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcamConfig {
    pub grid_size: usize,
    pub n_design: usize,
    pub sampler: Sampler,
    pub wavelet: WaveletSpec,
    pub batch_size: usize,
    pub score_kind: ScoreKind,
    pub clamp_output: bool,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl Default for WcamConfig {
    fn default() -> Self {
        WcamConfig {
            grid_size: 28,
            n_design: 8,
            sampler: Sampler::default(),
            wavelet: WaveletSpec::haar(2),
            batch_size: 32,
            score_kind: ScoreKind::Probability,
            clamp_output: true,
            mask_mode: MaskMode::Continuous,
        }
    }
}

impl WcamConfig {
    /// Estimator dimension `K = g²`.
    pub fn dim(&self) -> usize {
        self.grid_size * self.grid_size
    }

    /// Scorer evaluations per image: `N (K + 2)`.
    pub fn n_forwards(&self) -> usize {
        self.n_design * (self.dim() + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 || !self.grid_size.is_multiple_of(self.wavelet.block()) {
            return Err(Error::InvalidParam("grid_size must be divisible by 2^levels".into()));
        }
        if self.n_design < 2 {
            return Err(Error::InvalidParam("n_design must be at least 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be positive".into()));
        }
        if let MaskMode::Binary { threshold } = self.mask_mode {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::InvalidParam("binary mask threshold must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn validate_image(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if !height.is_multiple_of(self.grid_size) || !width.is_multiple_of(self.grid_size) {
            return Err(Error::Shape(format!(
                "image {height}x{width} is not divisible by grid_size {}",
                self.grid_size
            )));
        }
        self.wavelet.check_shape(height, width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    A,
    B,
    C(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBatch {
    pub masks: Vec<Array2<f64>>,
    pub provenance: Vec<Provenance>,
}

/// Row-major reshape of every `K`-vector into a `g x g` mask.
pub fn design_to_masks(rows: &Array2<f64>, grid_size: usize) -> Result<Vec<Array2<f64>>> {
    let k = rows.ncols();
    if k != grid_size * grid_size {
        return Err(Error::Shape(format!("design has {k} columns but grid {grid_size}² = {}", grid_size * grid_size)));
    }
    Ok(rows
        .rows()
        .into_iter()
        .map(|r| Array2::from_shape_vec((grid_size, grid_size), r.to_vec()).expect("K = g²"))
        .collect())
}

fn design_row(design: &DesignMatrices, index: usize) -> (Provenance, Vec<f64>) {
    let n = design.n_design();
    if index < n {
        (Provenance::A, design.a.row(index).to_vec())
    } else if index < 2 * n {
        (Provenance::B, design.b.row(index - n).to_vec())
    } else {
        let k = (index - 2 * n) / n;
        let j = (index - 2 * n) % n;
        (Provenance::C(k), design.pivot_row(k, j))
    }
}

/// All `N (K + 2)` masks of a design, in scoring order.
pub fn build_mask_batch(design: &DesignMatrices, grid_size: usize) -> Result<MaskBatch> {
    if design.dim() != grid_size * grid_size {
        return Err(Error::Shape("design dimension must equal grid_size²".into()));
    }
    let total = design.n_design() * (design.dim() + 2);
    let (provenance, masks) = (0..total)
        .map(|i| {
            let (p, row) = design_row(design, i);
            (p, Array2::from_shape_vec((grid_size, grid_size), row).expect("K = g²"))
        })
        .unzip();
    Ok(MaskBatch { masks, provenance })
}

fn check_mask(coeff_dim: (usize, usize, usize), mask: &Array2<f64>) -> Result<(usize, usize)> {
    let (_, h, w) = coeff_dim;
    let (gr, gc) = mask.dim();
    if gr == 0 || gc == 0 || h % gr != 0 || w % gc != 0 {
        return Err(Error::Shape(format!("plane {h}x{w} is not divisible by mask {gr}x{gc}")));
    }
    Ok((h / gr, w / gc))
}

fn mask_into(src: &Array3<f64>, mask: &Array2<f64>, factors: (usize, usize), dst: &mut Array3<f64>) {
    let (c, h, w) = src.dim();
    let (fh, fw) = factors;
    let src = src.as_slice().expect("standard layout");
    let out = dst.as_slice_mut().expect("standard layout");
    for r in 0..h {
        let mrow = mask.row(r / fh);
        for ch in 0..c {
            let base = (ch * h + r) * w;
            for col in 0..w {
                out[base + col] = src[base + col] * mrow[col / fw];
            }
        }
    }
}

/// Multiplies every channel's coefficient plane by the upsampled mask.
pub fn apply_mask(pyramid: &Pyramid, mask: &Array2<f64>) -> Result<Pyramid> {
    let src = pyramid.coeffs.as_standard_layout().into_owned();
    let factors = check_mask(src.dim(), mask)?;
    let mut dst = Array3::zeros(src.dim());
    mask_into(&src, mask, factors, &mut dst);
    Ok(Pyramid { coeffs: dst, spec: pyramid.spec })
}

/// Masks the pyramid, inverts it and optionally clamps to `[0, 1]`.
pub fn perturbed_image(pyramid: &Pyramid, mask: &Array2<f64>, clamp: bool) -> Result<Image> {
    let masked = apply_mask(pyramid, mask)?;
    let mut img = masked.coeffs;
    inverse_in_place(&mut img, &pyramid.spec)?;
    if clamp {
        img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(img)
}

/// Wavelet-domain attribution map: one total Sobol index per mask cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WCAMap {
    pub total_indices: Array2<f64>,
    pub first_order: Array2<f64>,
    pub config: WcamConfig,
    pub target_class: usize,
    pub n_forwards: usize,
    pub degenerate: bool,
    pub f_empty: f64,
    pub variance: f64,
}

impl WCAMap {
    pub fn grid_size(&self) -> usize {
        self.total_indices.nrows()
    }

    pub fn levels(&self) -> usize {
        self.config.wavelet.levels
    }

    /// Builds a map from a precomputed grid of total indices.
    pub fn from_grid(total_indices: Array2<f64>, config: WcamConfig) -> Result<Self> {
        let (r, c) = total_indices.dim();
        if r != c || r != config.grid_size {
            return Err(Error::Shape(format!("grid is {r}x{c}, config expects {}", config.grid_size)));
        }
        config.validate()?;
        let n_forwards = config.n_forwards();
        Ok(WCAMap {
            first_order: Array2::zeros((r, c)),
            total_indices,
            config,
            target_class: 0,
            n_forwards,
            degenerate: false,
            f_empty: 0.0,
            variance: 0.0,
        })
    }

    /// Mask cells of one subband, in grid coordinates.
    pub fn subband_cells(&self, id: SubbandId) -> Result<Rect> {
        let g = self.grid_size();
        subband_region(&self.config.wavelet, (g, g), id)
    }

    pub fn total_mass(&self) -> f64 {
        crate::analysis::compensated_sum(self.total_indices.iter().copied())
    }
}

fn prepare_mask(row: Vec<f64>, g: usize, mode: MaskMode) -> Array2<f64> {
    let mut m = Array2::from_shape_vec((g, g), row).expect("K = g²");
    if let MaskMode::Binary { threshold } = mode {
        m.mapv_inplace(|v| if v >= threshold { 1.0 } else { 0.0 });
    }
    m
}

/// Scores `count` images produced on demand by `make`, in batches of at most
/// `batch_size` (and the scorer's own limit). Scores come back in index
/// order whatever the scheduling; batches run in parallel only when the
/// scorer allows it.
pub fn score_lazily<S, F>(
    count: usize,
    batch_size: usize,
    scorer: &S,
    target_class: usize,
    make: F,
) -> Result<Vec<f64>>
where
    S: Scorer + ?Sized,
    F: Fn(usize) -> Image + Sync,
{
    let batch = batch_size.min(scorer.max_batch()).max(1);
    let n_batches = count.div_ceil(batch);
    log::debug!("scoring {count} images in {n_batches} batches of {batch}");
    let run_batch = |b: usize| -> std::result::Result<Vec<f64>, ScorerError> {
        let images: Vec<Image> = (b * batch..((b + 1) * batch).min(count)).map(&make).collect();
        let scores = scorer.score_batch(&images, target_class).map_err(|e| e.with_batch(b))?;
        crate::scorer::check_scores(&scores, images.len()).map_err(|e| e.with_batch(b))?;
        Ok(scores)
    };
    let per_batch: Vec<Vec<f64>> = if scorer.concurrent_safe() {
        (0..n_batches).into_par_iter().map(run_batch).collect::<std::result::Result<_, _>>()?
    } else {
        (0..n_batches).map(run_batch).collect::<std::result::Result<_, _>>()?
    };
    Ok(per_batch.into_iter().flatten().collect())
}

pub fn compute_wcam<S: Scorer + ?Sized>(
    image: &Image,
    target_class: usize,
    scorer: &S,
    config: &WcamConfig,
) -> Result<WCAMap> {
    let (_, h, w) = image.dim();
    config.validate_image(h, w)?;
    let g = config.grid_size;
    let k_dim = config.dim();
    let n = config.n_design;
    let design = draw_design(&config.sampler, n, k_dim)?;
    let pyramid = dwt_forward(image, &config.wavelet)?;
    let src = pyramid.coeffs.as_standard_layout().into_owned();
    let factors = (h / g, w / g);

    let total = config.n_forwards();
    let scores = score_lazily(total, config.batch_size, scorer, target_class, |i| {
        let (_, row) = design_row(&design, i);
        let mask = prepare_mask(row, g, config.mask_mode);
        let mut img = Array3::zeros(src.dim());
        mask_into(&src, &mask, factors, &mut img);
        inverse_in_place(&mut img, &config.wavelet).expect("shape checked");
        if config.clamp_output {
            img.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
        img
    })?;

    let f_a = scores[..n].to_vec();
    let f_b = scores[n..2 * n].to_vec();
    let f_c = Array2::from_shape_vec((k_dim, n), scores[2 * n..].to_vec()).expect("K x N scores");
    let indices = jansen_estimate(&ScoredDesign::new(f_a, f_b, f_c)?)?;

    Ok(WCAMap {
        total_indices: Array2::from_shape_vec((g, g), indices.total).expect("K = g²"),
        first_order: Array2::from_shape_vec((g, g), indices.first_order).expect("K = g²"),
        config: *config,
        target_class,
        n_forwards: total,
        degenerate: indices.degenerate,
        f_empty: indices.f_empty,
        variance: indices.variance,
    })
}

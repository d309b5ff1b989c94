//! Multilevel 2D discrete wavelet transform with periodic boundaries.
//!
//! Coefficients live in a single image-sized plane per channel using the
//! nested (Mallat) layout: the approximation block sits in the top-left
//! corner and the detail blocks of level `j` complete the square of side
//! `H / 2^(j-1)`. Within a level the horizontal detail occupies the top-right
//! block, the vertical detail the bottom-left block and the diagonal detail
//! the bottom-right block.
//!
//! Orientation convention: the horizontal detail is low-pass along rows and
//! high-pass along columns, so it responds to horizontal edges. The vertical
//! detail is the transpose.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    /// Four-tap Daubechies filter (two vanishing moments).
    Daubechies4,
}

impl WaveletFamily {
    fn lowpass(self) -> &'static [f64] {
        const S2: f64 = std::f64::consts::SQRT_2;
        const S3: f64 = 1.732_050_807_568_877_2;
        const HAAR: [f64; 2] = [1.0 / S2, 1.0 / S2];
        const DB4: [f64; 4] = [
            (1.0 + S3) / (4.0 * S2),
            (3.0 + S3) / (4.0 * S2),
            (3.0 - S3) / (4.0 * S2),
            (1.0 - S3) / (4.0 * S2),
        ];
        match self {
            WaveletFamily::Haar => &HAAR,
            WaveletFamily::Daubechies4 => &DB4,
        }
    }
}

impl std::str::FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletFamily::Haar),
            "db4" | "d4" | "daubechies4" => Ok(WaveletFamily::Daubechies4),
            other => Err(Error::InvalidParam(format!("unknown wavelet family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub levels: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl WaveletSpec {
    pub fn new(family: WaveletFamily, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParam("wavelet levels must be at least 1".into()));
        }
        Ok(WaveletSpec { family, levels, boundary: Boundary::Periodic })
    }

    pub fn haar(levels: usize) -> Self {
        Self::new(WaveletFamily::Haar, levels).expect("levels must be at least 1")
    }

    pub fn db4(levels: usize) -> Self {
        Self::new(WaveletFamily::Daubechies4, levels).expect("levels must be at least 1")
    }

    /// `2^levels`, the factor every plane side must be divisible by.
    pub fn block(&self) -> usize {
        1usize << self.levels
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidParam("wavelet levels must be at least 1".into()));
        }
        let b = self.block();
        if height == 0 || width == 0 || !height.is_multiple_of(b) || !width.is_multiple_of(b) {
            return Err(Error::Shape(format!(
                "image {height}x{width} is not divisible by 2^{} = {b}",
                self.levels
            )));
        }
        Ok(())
    }

    fn filters<T: Real>(&self) -> Filters<T> {
        let lo: Vec<T> = self
            .family
            .lowpass()
            .iter()
            .map(|&v| T::from_f64(v).unwrap())
            .collect();
        let m = lo.len();
        let hi = (0..m)
            .map(|k| if k % 2 == 0 { lo[m - 1 - k] } else { -lo[m - 1 - k] })
            .collect();
        Filters { lo, hi }
    }
}

struct Filters<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Approx,
    Horizontal,
    Vertical,
    Diagonal,
}

impl Orientation {
    pub fn label(self) -> &'static str {
        match self {
            Orientation::Approx => "a",
            Orientation::Horizontal => "h",
            Orientation::Vertical => "v",
            Orientation::Diagonal => "d",
        }
    }
}

/// One subband of the pyramid. Level 0 is the approximation; detail levels
/// run from 1 (finest) to `L` (coarsest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubbandId {
    pub level: usize,
    pub orientation: Orientation,
}

impl SubbandId {
    pub const APPROX: SubbandId = SubbandId { level: 0, orientation: Orientation::Approx };

    pub fn detail(level: usize, orientation: Orientation) -> Result<Self> {
        if level == 0 || orientation == Orientation::Approx {
            return Err(Error::InvalidParam(
                "detail subbands need level >= 1 and a non-approximation orientation".into(),
            ));
        }
        Ok(SubbandId { level, orientation })
    }

    /// Short label such as `a`, `h2` or `d1`.
    pub fn label(&self) -> String {
        match self.orientation {
            Orientation::Approx => "a".to_string(),
            o => format!("{}{}", o.label(), self.level),
        }
    }

    /// All `1 + 3L` subbands ordered coarse to fine: `a, h_L, v_L, d_L, ..., h_1, v_1, d_1`.
    pub fn all(levels: usize) -> Vec<SubbandId> {
        let mut out = Vec::with_capacity(1 + 3 * levels);
        out.push(SubbandId::APPROX);
        for level in (1..=levels).rev() {
            for orientation in [Orientation::Horizontal, Orientation::Vertical, Orientation::Diagonal] {
                out.push(SubbandId { level, orientation });
            }
        }
        out
    }
}

impl std::str::FromStr for SubbandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "a" {
            return Ok(SubbandId::APPROX);
        }
        let (o, lvl) = s.split_at(1.min(s.len()));
        let orientation = match o {
            "h" => Orientation::Horizontal,
            "v" => Orientation::Vertical,
            "d" => Orientation::Diagonal,
            _ => return Err(Error::InvalidParam(format!("bad subband label '{s}'"))),
        };
        let level = lvl
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad subband label '{s}'")))?;
        SubbandId::detail(level, orientation)
    }
}

/// Half-open rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

/// Location of a subband in a nested plane of the given `(height, width)`.
///
/// Works for any plane divisible by `2^L`, including the `g x g` mask grid.
pub fn subband_region(spec: &WaveletSpec, shape: (usize, usize), id: SubbandId) -> Result<Rect> {
    let (h, w) = shape;
    spec.check_shape(h, w)?;
    if id.level > spec.levels {
        return Err(Error::InvalidSubband { level: id.level, levels: spec.levels });
    }
    match (id.level, id.orientation) {
        (0, Orientation::Approx) => {
            let b = spec.block();
            Ok(Rect { row0: 0, col0: 0, row1: h / b, col1: w / b })
        }
        (0, _) | (_, Orientation::Approx) => Err(Error::InvalidParam(
            "orientation must be Approx exactly when level is 0".into(),
        )),
        (j, o) => {
            let (bh, bw) = (h >> j, w >> j);
            let (r0, c0) = match o {
                Orientation::Horizontal => (0, bw),
                Orientation::Vertical => (bh, 0),
                _ => (bh, bw),
            };
            Ok(Rect { row0: r0, col0: c0, row1: r0 + bh, col1: c0 + bw })
        }
    }
}

/// Subband containing the coefficient at `(row, col)` of a nested plane.
pub fn subband_of(spec: &WaveletSpec, shape: (usize, usize), row: usize, col: usize) -> SubbandId {
    let (h, w) = shape;
    for level in 1..=spec.levels {
        let (bh, bw) = (h >> level, w >> level);
        let low_r = row < bh;
        let low_c = col < bw;
        let orientation = match (low_r, low_c) {
            (true, true) => continue,
            (true, false) => Orientation::Horizontal,
            (false, true) => Orientation::Vertical,
            (false, false) => Orientation::Diagonal,
        };
        return SubbandId { level, orientation };
    }
    SubbandId::APPROX
}

/// Per-channel wavelet coefficients in nested layout, axes (channel, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid<T> {
    pub coeffs: Array3<T>,
    pub spec: WaveletSpec,
}

impl<T: Real> WaveletPyramid<T> {
    pub fn new(coeffs: Array3<T>, spec: WaveletSpec) -> Result<Self> {
        let (_, h, w) = coeffs.dim();
        spec.check_shape(h, w)?;
        Ok(WaveletPyramid { coeffs, spec })
    }

    /// `(H, W, C)` of the image the pyramid was computed from.
    pub fn original_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.coeffs.dim();
        (h, w, c)
    }

    pub fn channels(&self) -> usize {
        self.coeffs.dim().0
    }

    pub fn energy(&self) -> T {
        self.coeffs.iter().map(|&v| v * v).sum()
    }

    pub fn region(&self, id: SubbandId) -> Result<Rect> {
        let (h, w, _) = self.original_shape();
        subband_region(&self.spec, (h, w), id)
    }
}

pub fn dwt_forward<T: Real>(image: &Image<T>, spec: &WaveletSpec) -> Result<WaveletPyramid<T>> {
    let (_, h, w) = image.dim();
    spec.check_shape(h, w)?;
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let filters = spec.filters::<T>();
    let mut coeffs = image.as_standard_layout().into_owned();
    let mut scratch = Scratch::new(h.max(w));
    for mut plane in coeffs.outer_iter_mut() {
        let data = plane.as_slice_mut().expect("standard layout");
        for level in 0..spec.levels {
            analyze_level(data, w, h >> level, w >> level, &filters, &mut scratch);
        }
    }
    Ok(WaveletPyramid { coeffs, spec: *spec })
}

pub fn dwt_inverse<T: Real>(pyramid: &WaveletPyramid<T>) -> Result<Image<T>> {
    let mut out = pyramid.coeffs.as_standard_layout().into_owned();
    inverse_in_place(&mut out, &pyramid.spec)?;
    Ok(out)
}

/// Inverts a nested coefficient array in place. Used by the pipeline to avoid
/// one allocation per perturbed sample.
pub fn inverse_in_place<T: Real>(coeffs: &mut Array3<T>, spec: &WaveletSpec) -> Result<()> {
    let (_, h, w) = coeffs.dim();
    spec.check_shape(h, w)?;
    if !coeffs.is_standard_layout() {
        return Err(Error::Shape("coefficient array must be in standard layout".into()));
    }
    let filters = spec.filters::<T>();
    let mut scratch = Scratch::new(h.max(w));
    for mut plane in coeffs.outer_iter_mut() {
        let data = plane.as_slice_mut().expect("standard layout");
        for level in (0..spec.levels).rev() {
            synthesize_level(data, w, h >> level, w >> level, &filters, &mut scratch);
        }
    }
    Ok(())
}

struct Scratch<T> {
    line: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(n: usize) -> Self {
        Scratch { line: vec![T::zero(); n], out: vec![T::zero(); n] }
    }
}

/// Periodic analysis of `x` into `[approx | detail]` halves of `out`.
fn analyze_1d<T: Real>(x: &[T], out: &mut [T], f: &Filters<T>) {
    let n = x.len();
    let half = n / 2;
    for i in 0..half {
        let mut a = T::zero();
        let mut d = T::zero();
        for (k, (&lo, &hi)) in f.lo.iter().zip(f.hi.iter()).enumerate() {
            let v = x[(2 * i + k) % n];
            a = a + lo * v;
            d = d + hi * v;
        }
        out[i] = a;
        out[half + i] = d;
    }
}

/// Exact inverse (transpose) of [`analyze_1d`].
fn synthesize_1d<T: Real>(c: &[T], out: &mut [T], f: &Filters<T>) {
    let n = c.len();
    let half = n / 2;
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..half {
        let a = c[i];
        let d = c[half + i];
        for (k, (&lo, &hi)) in f.lo.iter().zip(f.hi.iter()).enumerate() {
            let j = (2 * i + k) % n;
            out[j] = out[j] + lo * a + hi * d;
        }
    }
}

fn swap_off_diagonal_blocks<T: Real>(data: &mut [T], stride: usize, bh: usize, bw: usize) {
    // rows [0,bh) x cols [bw,2bw) <-> rows [bh,2bh) x cols [0,bw)
    for r in 0..bh {
        for c in 0..bw {
            data.swap(r * stride + bw + c, (bh + r) * stride + c);
        }
    }
}

/// One analysis step on the top-left `rows x cols` block of a plane.
fn analyze_level<T: Real>(
    data: &mut [T],
    stride: usize,
    rows: usize,
    cols: usize,
    f: &Filters<T>,
    s: &mut Scratch<T>,
) {
    for r in 0..rows {
        let row = &mut data[r * stride..r * stride + cols];
        s.line[..cols].copy_from_slice(row);
        analyze_1d(&s.line[..cols], &mut s.out[..cols], f);
        row.copy_from_slice(&s.out[..cols]);
    }
    for c in 0..cols {
        for r in 0..rows {
            s.line[r] = data[r * stride + c];
        }
        analyze_1d(&s.line[..rows], &mut s.out[..rows], f);
        for r in 0..rows {
            data[r * stride + c] = s.out[r];
        }
    }
    // The top-right block is now high-pass along rows (vertical edges);
    // move it to the bottom-left so the horizontal detail sits top-right.
    swap_off_diagonal_blocks(data, stride, rows / 2, cols / 2);
}

fn synthesize_level<T: Real>(
    data: &mut [T],
    stride: usize,
    rows: usize,
    cols: usize,
    f: &Filters<T>,
    s: &mut Scratch<T>,
) {
    swap_off_diagonal_blocks(data, stride, rows / 2, cols / 2);
    for c in 0..cols {
        for r in 0..rows {
            s.line[r] = data[r * stride + c];
        }
        synthesize_1d(&s.line[..rows], &mut s.out[..rows], f);
        for r in 0..rows {
            data[r * stride + c] = s.out[r];
        }
    }
    for r in 0..rows {
        let row = &mut data[r * stride..r * stride + cols];
        s.line[..cols].copy_from_slice(row);
        synthesize_1d(&s.line[..cols], &mut s.out[..cols], f);
        row.copy_from_slice(&s.out[..cols]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen::<f64>())
    }

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Explicit orthonormal 2D Haar matrix on a 2x2 block, rows = (a, h, v, d)
    /// acting on (x00, x01, x10, x11).
    fn haar_matrix_2x2(x: [f64; 4]) -> [f64; 4] {
        let m = [
            [0.5, 0.5, 0.5, 0.5],
            [0.5, 0.5, -0.5, -0.5],
            [0.5, -0.5, 0.5, -0.5],
            [0.5, -0.5, -0.5, 0.5],
        ];
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(m.iter()) {
            *o = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }

    #[test]
    fn two_by_two_matches_haar_matrix() {
        let img: Image = array![[[1.0, 2.0], [3.0, 4.0]]];
        let pyr = dwt_forward(&img, &WaveletSpec::haar(1)).unwrap();
        let oracle = haar_matrix_2x2([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(oracle, [5.0, -2.0, -1.0, 0.0]);
        let c = &pyr.coeffs;
        let got = [c[[0, 0, 0]], c[[0, 0, 1]], c[[0, 1, 0]], c[[0, 1, 1]]];
        for (g, o) in got.iter().zip(oracle.iter()) {
            assert!((g - o).abs() < 1e-12, "{got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn constant_image_has_no_details() {
        let img = Array3::from_elem((2, 8, 8), 0.3f64);
        let pyr = dwt_forward(&img, &WaveletSpec::haar(1)).unwrap();
        for ch in 0..2 {
            for r in 0..8 {
                for c in 0..8 {
                    let v = pyr.coeffs[[ch, r, c]];
                    if r < 4 && c < 4 {
                        assert!((v - 0.6).abs() < 1e-12);
                    } else {
                        assert!(v.abs() < 1e-12);
                    }
                }
            }
        }
        for spec in [WaveletSpec::haar(3), WaveletSpec::db4(3)] {
            let pyr = dwt_forward(&img, &spec).unwrap();
            let a = pyr.region(SubbandId::APPROX).unwrap();
            for ((_, r, c), v) in pyr.coeffs.indexed_iter() {
                if !a.contains(r, c) {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn horizontal_edge_lands_in_horizontal_detail() {
        // Top half dark, bottom half bright: a single horizontal edge, placed
        // off the dyadic grid so the finest level sees it.
        let img = Array3::from_shape_fn((1, 8, 8), |(_, r, _)| if r < 3 { 0.0f64 } else { 1.0 });
        let pyr = dwt_forward(&img, &WaveletSpec::haar(1)).unwrap();
        let energy = |id| {
            let rect = pyr.region(id).unwrap();
            let mut e = 0.0;
            for r in rect.row0..rect.row1 {
                for c in rect.col0..rect.col1 {
                    e += pyr.coeffs[[0, r, c]].powi(2);
                }
            }
            e
        };
        let h = energy(SubbandId::detail(1, Orientation::Horizontal).unwrap());
        let v = energy(SubbandId::detail(1, Orientation::Vertical).unwrap());
        let d = energy(SubbandId::detail(1, Orientation::Diagonal).unwrap());
        assert!(h > 0.1);
        assert!(v < 1e-20 && d < 1e-20);
    }

    #[test]
    fn round_trip_and_energy() {
        for (seed, spec) in [WaveletSpec::haar(3), WaveletSpec::db4(3), WaveletSpec::db4(1)]
            .into_iter()
            .enumerate()
        {
            let img = random_image(3, 8, 16, seed as u64);
            let pyr = dwt_forward(&img, &spec).unwrap();
            let back = dwt_inverse(&pyr).unwrap();
            assert!(max_abs_diff(&img, &back) <= 1e-9);
            let e0: f64 = img.iter().map(|v| v * v).sum();
            assert!(((pyr.energy() - e0) / e0).abs() <= 1e-9);
        }
    }

    #[test]
    fn approximation_only_gives_block_means() {
        let img: Image = array![[[1.0, 2.0], [3.0, 4.0]]];
        let mut pyr = dwt_forward(&img, &WaveletSpec::haar(1)).unwrap();
        pyr.coeffs[[0, 0, 1]] = 0.0;
        pyr.coeffs[[0, 1, 0]] = 0.0;
        pyr.coeffs[[0, 1, 1]] = 0.0;
        let back = dwt_inverse(&pyr).unwrap();
        for v in back.iter() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pyramid_inverts_to_zero() {
        let pyr = WaveletPyramid::new(Array3::<f64>::zeros((3, 16, 16)), WaveletSpec::db4(2)).unwrap();
        assert!(dwt_inverse(&pyr).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let img = Array3::<f64>::zeros((1, 12, 12));
        assert!(matches!(dwt_forward(&img, &WaveletSpec::haar(3)), Err(Error::Shape(_))));
        let mut img = Array3::<f64>::zeros((1, 8, 8));
        img[[0, 3, 3]] = f64::NAN;
        assert!(matches!(dwt_forward(&img, &WaveletSpec::haar(1)), Err(Error::NonFinite)));
        assert!(WaveletSpec::new(WaveletFamily::Haar, 0).is_err());
    }

    #[test]
    fn f32_round_trip() {
        let img = random_image(1, 16, 16, 9).mapv(|v| v as f32);
        let pyr = dwt_forward(&img, &WaveletSpec::db4(2)).unwrap();
        let back = dwt_inverse(&pyr).unwrap();
        let err = img.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-5);
    }

    #[test]
    fn subband_regions() {
        let spec = WaveletSpec::haar(2);
        assert_eq!(
            subband_region(&spec, (28, 28), SubbandId::APPROX).unwrap(),
            Rect { row0: 0, col0: 0, row1: 7, col1: 7 }
        );
        let spec1 = WaveletSpec::haar(1);
        let d1 = SubbandId::detail(1, Orientation::Diagonal).unwrap();
        assert_eq!(
            subband_region(&spec1, (4, 4), d1).unwrap(),
            Rect { row0: 2, col0: 2, row1: 4, col1: 4 }
        );
        let bad = SubbandId { level: 3, orientation: Orientation::Vertical };
        assert!(matches!(
            subband_region(&spec, (28, 28), bad),
            Err(Error::InvalidSubband { level: 3, levels: 2 })
        ));
    }

    #[test]
    fn subbands_tile_the_plane() {
        let spec = WaveletSpec::haar(3);
        let mut hits = vec![0u8; 32 * 32];
        let all = SubbandId::all(3);
        assert_eq!(all.len(), 10);
        for id in all {
            let r = subband_region(&spec, (32, 32), id).unwrap();
            for row in r.row0..r.row1 {
                for col in r.col0..r.col1 {
                    hits[row * 32 + col] += 1;
                    assert_eq!(subband_of(&spec, (32, 32), row, col), id);
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn subband_labels_parse() {
        for id in SubbandId::all(4) {
            assert_eq!(id.label().parse::<SubbandId>().unwrap(), id);
        }
        assert!("x1".parse::<SubbandId>().is_err());
        assert!("h0".parse::<SubbandId>().is_err());
    }
}

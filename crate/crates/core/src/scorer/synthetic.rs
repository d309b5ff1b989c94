//! Closed-form synthetic models.
//!
//! Each model computes a raw value `s(x)` with a documented formula. The
//! models act as binary classifiers: class 1 scores `s(x)` and class 0
//! scores `1 - s(x)`. Both are affine in `s`, so Sobol indices do not depend
//! on which class is targeted.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{ScorerError, ScorerErrorKind};
use crate::wavelet::{dwt_forward, subband_region, SubbandId, WaveletFamily, WaveletSpec};
use crate::{Error, Image};

/// Rectangle in fractions of the image height and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracRect {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl FracRect {
    pub const TOP_LEFT_QUADRANT: FracRect = FracRect { top: 0.0, left: 0.0, bottom: 0.5, right: 0.5 };

    /// Pixel bounds `(row0, col0, row1, col1)` for an `h x w` image.
    pub fn pixels(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let r = |f: f64, n: usize| ((f * n as f64).round() as usize).min(n);
        (r(self.top, h), r(self.left, w), r(self.bottom, h), r(self.right, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaveletWeights {
    /// One weight per coefficient, shaped like the image `(C, H, W)`.
    Dense(Array3<f64>),
    /// The same weight on every coefficient of one subband, all channels.
    Subband(SubbandId, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModel {
    /// `s(x)` = mean of all pixels (all channels) inside the region.
    PixelRegionMean { region: FracRect },
    /// `s(x)` = Σ w · DWT(x) over every coefficient.
    WaveletLinear { spec: WaveletSpec, weights: WaveletWeights },
    /// `s(x)` = Σ_s w_s · mean of squared coefficients in subband `s`, with
    /// subbands ordered `a, h_L, v_L, d_L, ..., d_1`.
    SubbandEnergy { spec: WaveletSpec, weights: Vec<f64> },
    /// `s(x)` = c.
    ConstantScore(f64),
}

fn shape_error(msg: String) -> ScorerError {
    ScorerError::new(ScorerErrorKind::Protocol, msg)
}

impl SyntheticModel {
    pub fn raw_score(&self, image: &Image) -> Result<f64, ScorerError> {
        let (c, h, w) = image.dim();
        match self {
            SyntheticModel::ConstantScore(v) => Ok(*v),
            SyntheticModel::PixelRegionMean { region } => {
                let (r0, c0, r1, c1) = region.pixels(h, w);
                let count = c * (r1 - r0) * (c1 - c0);
                if count == 0 {
                    return Err(shape_error("empty pixel region".into()));
                }
                let mut sum = 0.0;
                for ch in 0..c {
                    for r in r0..r1 {
                        for col in c0..c1 {
                            sum += image[[ch, r, col]];
                        }
                    }
                }
                Ok(sum / count as f64)
            }
            SyntheticModel::WaveletLinear { spec, weights } => {
                let pyr = dwt_forward(image, spec).map_err(|e| shape_error(e.to_string()))?;
                match weights {
                    WaveletWeights::Dense(wts) => {
                        if wts.dim() != pyr.coeffs.dim() {
                            return Err(shape_error(format!(
                                "weights {:?} do not match image {:?}",
                                wts.dim(),
                                pyr.coeffs.dim()
                            )));
                        }
                        Ok(wts.iter().zip(pyr.coeffs.iter()).map(|(a, b)| a * b).sum())
                    }
                    WaveletWeights::Subband(id, wt) => {
                        let rect = subband_region(spec, (h, w), *id)
                            .map_err(|e| shape_error(e.to_string()))?;
                        let mut sum = 0.0;
                        for ch in 0..c {
                            for r in rect.row0..rect.row1 {
                                for col in rect.col0..rect.col1 {
                                    sum += pyr.coeffs[[ch, r, col]];
                                }
                            }
                        }
                        Ok(wt * sum)
                    }
                }
            }
            SyntheticModel::SubbandEnergy { spec, weights } => {
                let bands = SubbandId::all(spec.levels);
                if weights.len() != bands.len() {
                    return Err(shape_error(format!(
                        "{} subband weights for {} subbands",
                        weights.len(),
                        bands.len()
                    )));
                }
                let pyr = dwt_forward(image, spec).map_err(|e| shape_error(e.to_string()))?;
                let mut total = 0.0;
                for (id, wt) in bands.iter().zip(weights) {
                    let rect = subband_region(spec, (h, w), *id).map_err(|e| shape_error(e.to_string()))?;
                    let mut e = 0.0;
                    for ch in 0..c {
                        for r in rect.row0..rect.row1 {
                            for col in rect.col0..rect.col1 {
                                e += pyr.coeffs[[ch, r, col]].powi(2);
                            }
                        }
                    }
                    total += wt * e / (c * rect.area()) as f64;
                }
                Ok(total)
            }
        }
    }

    pub fn score_batch(&self, images: &[Image], target_class: usize) -> Result<Vec<f64>, ScorerError> {
        images
            .iter()
            .map(|img| {
                let s = self.raw_score(img)?;
                match target_class {
                    1 => Ok(s),
                    0 => Ok(1.0 - s),
                    k => Err(ScorerError::new(
                        ScorerErrorKind::Unsupported,
                        format!("synthetic models are binary; class {k} does not exist"),
                    )),
                }
            })
            .collect()
    }

    pub fn class_scores(&self, images: &[Image]) -> Result<Vec<Vec<f64>>, ScorerError> {
        images
            .iter()
            .map(|img| self.raw_score(img).map(|s| vec![1.0 - s, s]))
            .collect()
    }

    pub fn describe(&self) -> String {
        let wavelet = |s: &WaveletSpec| {
            let fam = match s.family {
                WaveletFamily::Haar => "haar",
                WaveletFamily::Daubechies4 => "db4",
            };
            format!("{fam}:{}", s.levels)
        };
        match self {
            SyntheticModel::ConstantScore(c) => format!("constant:{c}"),
            SyntheticModel::PixelRegionMean { region: r } => {
                format!("region-mean:{},{},{},{}", r.top, r.left, r.bottom, r.right)
            }
            SyntheticModel::WaveletLinear { spec, weights: WaveletWeights::Subband(id, w) } => {
                format!("wavelet-linear:{}:{}:{w}", wavelet(spec), id.label())
            }
            SyntheticModel::WaveletLinear { spec, .. } => format!("wavelet-linear:{}:dense", wavelet(spec)),
            SyntheticModel::SubbandEnergy { spec, weights } => {
                let w: Vec<String> = weights.iter().map(|v| v.to_string()).collect();
                format!("subband-energy:{}:{}", wavelet(spec), w.join(","))
            }
        }
    }
}

fn parse_f64(s: &str) -> crate::Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidParam(format!("'{s}' is not a number")))
}

fn parse_wavelet(family: &str, levels: &str) -> crate::Result<WaveletSpec> {
    let levels = levels
        .parse()
        .map_err(|_| Error::InvalidParam(format!("bad level count '{levels}'")))?;
    WaveletSpec::new(family.parse()?, levels)
}

/// Parses the model part of `synthetic:<model>`:
///
/// * `constant:<c>`
/// * `quadrant-mean` or `region-mean:<top>,<left>,<bottom>,<right>` (fractions)
/// * `wavelet-linear:<haar|db4>:<levels>:<subband>[:<weight>]`
/// * `subband-energy:<haar|db4>:<levels>:<w_a>,<w_hL>,...`
impl std::str::FromStr for SyntheticModel {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParam(format!("unrecognised synthetic model '{s}'"));
        match parts.as_slice() {
            ["constant", c] => Ok(SyntheticModel::ConstantScore(parse_f64(c)?)),
            ["quadrant-mean"] => Ok(SyntheticModel::PixelRegionMean { region: FracRect::TOP_LEFT_QUADRANT }),
            ["region-mean", r] => {
                let v: Vec<f64> = r.split(',').map(parse_f64).collect::<crate::Result<_>>()?;
                match v.as_slice() {
                    &[top, left, bottom, right] if top < bottom && left < right => {
                        Ok(SyntheticModel::PixelRegionMean { region: FracRect { top, left, bottom, right } })
                    }
                    _ => Err(bad()),
                }
            }
            ["wavelet-linear", fam, lvl, band, rest @ ..] => {
                let spec = parse_wavelet(fam, lvl)?;
                let id: SubbandId = band.parse()?;
                let weight = match rest {
                    [] => 1.0,
                    [w] => parse_f64(w)?,
                    _ => return Err(bad()),
                };
                Ok(SyntheticModel::WaveletLinear { spec, weights: WaveletWeights::Subband(id, weight) })
            }
            ["subband-energy", fam, lvl, w] => {
                let spec = parse_wavelet(fam, lvl)?;
                let weights: Vec<f64> = w.split(',').map(parse_f64).collect::<crate::Result<_>>()?;
                if weights.len() != 1 + 3 * spec.levels {
                    return Err(Error::InvalidParam(format!(
                        "subband-energy needs {} weights",
                        1 + 3 * spec.levels
                    )));
                }
                Ok(SyntheticModel::SubbandEnergy { spec, weights })
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::Orientation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_score() {
        let m = SyntheticModel::ConstantScore(0.5);
        let imgs = vec![Image::zeros((3, 4, 4)); 3];
        assert_eq!(m.score_batch(&imgs, 1).unwrap(), vec![0.5; 3]);
        assert_eq!(m.score_batch(&imgs, 0).unwrap(), vec![0.5; 3]);
        assert!(m.score_batch(&imgs, 2).is_err());
    }

    #[test]
    fn quadrant_mean() {
        let m = SyntheticModel::PixelRegionMean { region: FracRect::TOP_LEFT_QUADRANT };
        let ones = Image::from_elem((3, 8, 8), 1.0);
        let zeros = Image::zeros((3, 8, 8));
        assert_eq!(m.score_batch(&[ones, zeros], 1).unwrap(), vec![1.0, 0.0]);
        let mut half = Image::zeros((1, 8, 8));
        half[[0, 0, 0]] = 1.6;
        assert!((m.raw_score(&half).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn wavelet_linear_reads_one_coefficient() {
        let spec = WaveletSpec::haar(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_shape_fn((2, 8, 8), |_| rng.gen());
        let pyr = dwt_forward(&img, &spec).unwrap();
        let mut wts = Array3::zeros((2, 8, 8));
        wts[[1, 5, 2]] = 1.0;
        let m = SyntheticModel::WaveletLinear { spec, weights: WaveletWeights::Dense(wts) };
        assert!((m.raw_score(&img).unwrap() - pyr.coeffs[[1, 5, 2]]).abs() < 1e-12);
    }

    #[test]
    fn parse_and_describe_round_trip() {
        for s in [
            "constant:0.25",
            "region-mean:0,0,0.5,0.5",
            "wavelet-linear:haar:2:v2:1",
            "subband-energy:db4:1:1,0,0,2",
        ] {
            let m: SyntheticModel = s.parse().unwrap();
            assert_eq!(m.describe(), s);
        }
        let m: SyntheticModel = "wavelet-linear:haar:2:h1".parse().unwrap();
        assert_eq!(
            m,
            SyntheticModel::WaveletLinear {
                spec: WaveletSpec::haar(2),
                weights: WaveletWeights::Subband(SubbandId::detail(1, Orientation::Horizontal).unwrap(), 1.0)
            }
        );
        assert!("subband-energy:haar:1:1,2".parse::<SyntheticModel>().is_err());
        assert!("nope".parse::<SyntheticModel>().is_err());
    }
}

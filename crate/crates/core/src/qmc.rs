//! Samplers for the pick-freeze design.
//!
//! Every sampler draws `N` points in `[0, 1]^{2K}`; the first `K` columns form
//! matrix `A` and the last `K` columns form matrix `B`. Splitting one
//! `2K`-dimensional draw keeps `A` and `B` independent for the
//! low-discrepancy samplers, whose consecutive dimensions are designed to be
//! uncorrelated.
//!
//! The Sobol sequence uses the Joe & Kuo `new-joe-kuo-6.21201` direction
//! numbers (first 4096 dimensions) with hash-based nested uniform (Owen)
//! scrambling keyed by the seed. Halton uses the first `2K` primes with an
//! independent random permutation of each digit position, also keyed by the
//! seed.

use std::sync::OnceLock;

use ndarray::{s, Array2, ArrayView1};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

static JOE_KUO: &str = include_str!("../data/new-joe-kuo-6.4096.txt");

/// Largest point dimension the embedded direction numbers support.
pub const SOBOL_MAX_DIMS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    SobolSequence,
    Halton,
    LatinHypercube,
    MonteCarlo,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::SobolSequence,
        SamplerKind::Halton,
        SamplerKind::LatinHypercube,
        SamplerKind::MonteCarlo,
    ];
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sobol" | "sobolsequence" => Ok(SamplerKind::SobolSequence),
            "halton" => Ok(SamplerKind::Halton),
            "lhs" | "latinhypercube" => Ok(SamplerKind::LatinHypercube),
            "mc" | "montecarlo" => Ok(SamplerKind::MonteCarlo),
            _ => Err(Error::InvalidParam(format!("unknown sampler '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl Sampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        Sampler { kind, seed }
    }

    /// `n x dims` points in `[0, 1)`.
    pub fn points(&self, n: usize, dims: usize) -> Result<Array2<f64>> {
        match self.kind {
            SamplerKind::SobolSequence => sobol_points(n, dims, Some(self.seed)),
            SamplerKind::Halton => Ok(halton_points(n, dims, self.seed)),
            SamplerKind::LatinHypercube => Ok(latin_hypercube(n, dims, self.seed)),
            SamplerKind::MonteCarlo => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(Array2::from_shape_simple_fn((n, dims), || rng.gen::<f64>()))
            }
        }
    }
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { kind: SamplerKind::SobolSequence, seed: 0 }
    }
}

/// The two independent `N x K` matrices of the pick-freeze scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl DesignMatrices {
    pub fn new(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("A is {:?} but B is {:?}", a.dim(), b.dim())));
        }
        Ok(DesignMatrices { a, b })
    }

    pub fn n_design(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Row `j` of `C^(k)`: row `j` of `A` with entry `k` taken from `B`.
    pub fn pivot_row(&self, k: usize, j: usize) -> Vec<f64> {
        let mut row = self.a.row(j).to_vec();
        row[k] = self.b[[j, k]];
        row
    }
}

pub fn draw_design(sampler: &Sampler, n_design: usize, dim: usize) -> Result<DesignMatrices> {
    if n_design < 2 {
        return Err(Error::InvalidParam(format!("n_design must be at least 2, got {n_design}")));
    }
    if dim < 1 {
        return Err(Error::InvalidParam("design dimension must be at least 1".into()));
    }
    let pts = sampler.points(n_design, 2 * dim)?;
    Ok(DesignMatrices {
        a: pts.slice(s![.., ..dim]).to_owned(),
        b: pts.slice(s![.., dim..]).to_owned(),
    })
}

/// `C^(k)`: `A` with column `k` replaced by column `k` of `B`.
pub fn pivot_columns(design: &DesignMatrices, k: usize) -> Result<Array2<f64>> {
    let dim = design.dim();
    if k >= dim {
        return Err(Error::Index { index: k, dim });
    }
    let mut c = design.a.clone();
    c.column_mut(k).assign(&design.b.column(k));
    Ok(c)
}

/// One-dimensional star discrepancy of a sample.
pub fn star_discrepancy(xs: ArrayView1<f64>) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let worst = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - (2.0 * i as f64 + 1.0) / (2.0 * n)).abs())
        .fold(0.0, f64::max);
    0.5 / n + worst
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a ^ splitmix64(b)))
}

struct DirectionNumbers {
    v: Vec<[u32; 32]>,
}

fn direction_numbers() -> &'static DirectionNumbers {
    static DIRS: OnceLock<DirectionNumbers> = OnceLock::new();
    DIRS.get_or_init(|| {
        let mut v = Vec::with_capacity(SOBOL_MAX_DIMS);
        let mut first = [0u32; 32];
        for (i, x) in first.iter_mut().enumerate() {
            *x = 1u32 << (31 - i);
        }
        v.push(first);
        for line in JOE_KUO.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let nums: Vec<u32> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
            let (s, a, m) = (nums[1] as usize, nums[2], &nums[3..]);
            let mut dir = [0u32; 32];
            for i in 0..s.min(32) {
                dir[i] = m[i] << (31 - i);
            }
            for i in s..32 {
                let mut x = dir[i - s] ^ (dir[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= dir[i - k];
                    }
                }
                dir[i] = x;
            }
            v.push(dir);
        }
        DirectionNumbers { v }
    })
}

fn laine_karras(mut x: u32, seed: u32) -> u32 {
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x
}

fn owen_scramble(x: u32, seed: u32) -> u32 {
    laine_karras(x.reverse_bits(), seed).reverse_bits()
}

/// Sobol points in Gray-code order; `scramble = None` gives the raw sequence.
pub fn sobol_points(n: usize, dims: usize, scramble: Option<u64>) -> Result<Array2<f64>> {
    if dims > SOBOL_MAX_DIMS {
        return Err(Error::InvalidParam(format!(
            "Sobol sampler supports at most {SOBOL_MAX_DIMS} dimensions (2K), got {dims}"
        )));
    }
    if n as u64 > u32::MAX as u64 {
        return Err(Error::InvalidParam("too many Sobol points".into()));
    }
    let dirs = direction_numbers();
    let seeds: Vec<u32> = (0..dims)
        .map(|d| scramble.map_or(0, |s| mix(s, 0x0005_0b01, d as u64) as u32))
        .collect();
    let scale = 1.0 / 4_294_967_296.0;
    let mut out = Array2::zeros((n, dims));
    for i in 0..n {
        let gray = (i ^ (i >> 1)) as u32;
        for d in 0..dims {
            let mut x = 0u32;
            let mut bits = gray;
            let mut b = 0;
            while bits != 0 {
                if bits & 1 == 1 {
                    x ^= dirs.v[d][b];
                }
                bits >>= 1;
                b += 1;
            }
            if scramble.is_some() {
                x = owen_scramble(x, seeds[d]);
            }
            out[[i, d]] = x as f64 * scale;
        }
    }
    Ok(out)
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Randomly permuted Halton points. Each dimension and digit position gets
/// its own permutation of `0..base`.
///
/// A coordinate whose base exceeds `n` only varies in its leading digit, so
/// it is no better spread than a sample without replacement on `base` points.
pub fn halton_points(n: usize, dims: usize, seed: u64) -> Array2<f64> {
    let primes = first_primes(dims);
    let mut out = Array2::zeros((n, dims));
    for (d, &base) in primes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x0004_a170, d as u64));
        let varying = digit_count(n.saturating_sub(1) as u64, base).max(1);
        let digits = ((53.0 / (base as f64).log2()).ceil() as usize).max(varying);
        // Only the images of digits that actually occur are drawn.
        let mut span = n.max(1) as u64;
        let perms: Vec<Vec<u64>> = (0..digits)
            .map(|_| {
                let m = span.min(base) as usize;
                span = span.div_ceil(base);
                sample(&mut rng, base as usize, m).into_iter().map(|v| v as u64).collect()
            })
            .collect();
        for i in 0..n {
            let mut idx = i as u64;
            let mut value = 0.0;
            let mut weight = 1.0 / base as f64;
            for perm in &perms {
                value += perm[(idx % base) as usize] as f64 * weight;
                idx /= base;
                weight /= base as f64;
            }
            out[[i, d]] = value.min(1.0 - f64::EPSILON);
        }
    }
    out
}

fn digit_count(mut n: u64, base: u64) -> usize {
    let mut c = 0;
    while n > 0 {
        n /= base;
        c += 1;
    }
    c
}

pub fn latin_hypercube(n: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, dims));
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(&mut rng);
        for (i, &p) in perm.iter().enumerate() {
            out[[i, d]] = (p as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_sobol_matches_reference_values() {
        // Frozen from an independent Joe-Kuo implementation (unscrambled).
        let pts = sobol_points(1024, 4096, None).unwrap();
        let first8: [(usize, [f64; 8]); 3] = [
            (0, [0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125]),
            (2, [0.0, 0.5, 0.25, 0.75, 0.625, 0.125, 0.875, 0.375]),
            (783, [0.0, 0.5, 0.75, 0.25, 0.125, 0.625, 0.875, 0.375]),
        ];
        for (d, vals) in first8 {
            for (i, v) in vals.iter().enumerate() {
                assert_eq!(pts[[i, d]], *v, "dim {d} point {i}");
            }
        }
        let deep: [(usize, [f64; 4]); 4] = [
            (5, [0.9375, 0.5078125, 0.939453125, 0.4384765625]),
            (100, [0.1875, 0.8984375, 0.599609375, 0.2373046875]),
            (2047, [0.1875, 0.1171875, 0.384765625, 0.2412109375]),
            (4095, [0.3125, 0.0703125, 0.294921875, 0.7822265625]),
        ];
        for (d, vals) in deep {
            for (&i, v) in [13usize, 77, 500, 1023].iter().zip(vals.iter()) {
                assert_eq!(pts[[i, d]], *v, "dim {d} point {i}");
            }
        }
    }

    #[test]
    fn default_design_shape() {
        for kind in SamplerKind::ALL {
            let d = draw_design(&Sampler::new(kind, 3), 8, 784).unwrap();
            assert_eq!(d.a.dim(), (8, 784));
            assert_eq!(d.b.dim(), (8, 784));
            assert!(d.a.iter().chain(d.b.iter()).all(|&v| (0.0..=1.0).contains(&v)));
            assert_ne!(d.a, d.b);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in SamplerKind::ALL {
            let s = Sampler::new(kind, 11);
            assert_eq!(draw_design(&s, 16, 20).unwrap(), draw_design(&s, 16, 20).unwrap());
            let other = Sampler::new(kind, 12);
            assert_ne!(draw_design(&s, 16, 20).unwrap(), draw_design(&other, 16, 20).unwrap());
        }
    }

    #[test]
    fn latin_hypercube_one_point_per_stratum() {
        let d = draw_design(&Sampler::new(SamplerKind::LatinHypercube, 5), 16, 1).unwrap();
        for col in [d.a.column(0), d.b.column(0)] {
            let mut counts = [0; 16];
            for &v in col.iter() {
                counts[(v * 16.0).floor() as usize] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "{counts:?}");
        }
    }

    #[test]
    fn scrambled_sobol_keeps_stratification() {
        let pts = sobol_points(8, 64, Some(42)).unwrap();
        for col in pts.columns() {
            let mut counts = [0; 8];
            for &v in col.iter() {
                counts[(v * 8.0).floor() as usize] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn low_discrepancy_beats_monte_carlo() {
        let n = 64;
        let mean_disc = |kind, dims| {
            let mut total = 0.0;
            let mut count = 0.0;
            for seed in 0..5 {
                let pts = Sampler::new(kind, seed).points(n, dims).unwrap();
                for col in pts.columns() {
                    total += star_discrepancy(col);
                    count += 1.0;
                }
            }
            total / count
        };
        let mc = mean_disc(SamplerKind::MonteCarlo, 40);
        for kind in [SamplerKind::SobolSequence, SamplerKind::LatinHypercube] {
            let d = mean_disc(kind, 40);
            assert!(d < 0.5 * mc, "{kind:?}: {d} vs MC {mc}");
        }
        // The first 18 primes are below 64.
        let d = mean_disc(SamplerKind::Halton, 18);
        let mc = mean_disc(SamplerKind::MonteCarlo, 18);
        assert!(d < 0.5 * mc, "Halton: {d} vs MC {mc}");
    }

    #[test]
    fn a_and_b_columns_are_uncorrelated() {
        for kind in SamplerKind::ALL {
            let d = draw_design(&Sampler::new(kind, 1), 256, 50).unwrap();
            let mut mean_corr = 0.0;
            for k in 0..50 {
                let (x, y) = (d.a.column(k), d.b.column(k));
                let (mx, my) = (x.mean().unwrap(), y.mean().unwrap());
                let cov: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
                let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
                let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
                mean_corr += cov / (vx * vy).sqrt() / 50.0;
            }
            assert!(mean_corr.abs() < 0.05, "{kind:?}: {mean_corr}");
        }
    }

    #[test]
    fn invalid_parameters() {
        let s = Sampler::default();
        assert!(matches!(draw_design(&s, 1, 4), Err(Error::InvalidParam(_))));
        assert!(matches!(draw_design(&s, 4, 0), Err(Error::InvalidParam(_))));
        assert!(matches!(draw_design(&s, 4, 2049), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn pivot_columns_replaces_one_column() {
        let d = draw_design(&Sampler::new(SamplerKind::MonteCarlo, 9), 6, 5).unwrap();
        let c = pivot_columns(&d, 2).unwrap();
        for j in 0..6 {
            for k in 0..5 {
                let expected = if k == 2 { d.b[[j, k]] } else { d.a[[j, k]] };
                assert_eq!(c[[j, k]], expected);
            }
            assert_eq!(d.pivot_row(2, j), c.row(j).to_vec());
        }
        assert!(matches!(pivot_columns(&d, 5), Err(Error::Index { index: 5, dim: 5 })));
    }

    #[test]
    fn pivot_degenerate_cases() {
        let single = draw_design(&Sampler::default(), 4, 1).unwrap();
        assert_eq!(pivot_columns(&single, 0).unwrap(), single.b);
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 / 12.0);
        let same = DesignMatrices::new(a.clone(), a.clone()).unwrap();
        for k in 0..4 {
            assert_eq!(pivot_columns(&same, k).unwrap(), a);
        }
    }
}

//! Sobol index estimation.
//!
//! [`jansen_estimate`] turns the scores of the pick-freeze design (`A`, `B`
//! and the pivoted matrices `C^(k)`) into first-order and total indices.
//! [`sobol_hoeffding_check`] is an exhaustive reference for small binary
//! models: it builds the full functional ANOVA decomposition by enumeration
//! and is what the estimator is tested against.

use ndarray::Array2;
use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Variance at or below which the scorer is treated as constant.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;

/// Largest feature count [`sobol_hoeffding_check`] will enumerate.
pub const MAX_ENUMERATED_FEATURES: usize = 12;

/// Scores of one design. `f_c` is `K x N`: row `k` holds the scores of `C^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDesign<T> {
    pub f_a: Vec<T>,
    pub f_b: Vec<T>,
    pub f_c: Array2<T>,
}

impl<T: Real> ScoredDesign<T> {
    pub fn new(f_a: Vec<T>, f_b: Vec<T>, f_c: Array2<T>) -> Result<Self> {
        let s = ScoredDesign { f_a, f_b, f_c };
        s.validate()?;
        Ok(s)
    }

    pub fn n_design(&self) -> usize {
        self.f_a.len()
    }

    pub fn dim(&self) -> usize {
        self.f_c.nrows()
    }

    fn validate(&self) -> Result<()> {
        let n = self.f_a.len();
        if n < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 designs, got {n}")));
        }
        if self.f_b.len() != n || self.f_c.ncols() != n {
            return Err(Error::Shape(format!(
                "score lengths disagree: f_a {n}, f_b {}, f_c {:?}",
                self.f_b.len(),
                self.f_c.dim()
            )));
        }
        let all = self.f_a.iter().chain(self.f_b.iter()).chain(self.f_c.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices<T> {
    pub first_order: Vec<T>,
    pub total: Vec<T>,
    /// Mean of the `A` scores.
    pub f_empty: T,
    /// Unbiased sample variance of the `A` scores.
    pub variance: T,
    /// Set when the variance fell below the floor; indices are then all zero.
    pub degenerate: bool,
}

pub fn jansen_estimate<T: Real>(scores: &ScoredDesign<T>) -> Result<SobolIndices<T>> {
    jansen_estimate_with_floor(scores, T::from_f64(DEFAULT_VARIANCE_FLOOR).unwrap())
}

pub fn jansen_estimate_with_floor<T: Real>(
    scores: &ScoredDesign<T>,
    variance_floor: T,
) -> Result<SobolIndices<T>> {
    scores.validate()?;
    let n = scores.n_design();
    let k_dim = scores.dim();
    let nf = T::from_usize(n).unwrap();

    let f_empty = scores.f_a.iter().fold(T::zero(), |acc, &v| acc + v) / nf;
    let variance = scores
        .f_a
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - f_empty) * (v - f_empty))
        / (nf - T::one());

    if variance <= variance_floor {
        log::warn!("scorer variance {variance:?} below floor; reporting zero indices");
        return Ok(SobolIndices {
            first_order: vec![T::zero(); k_dim],
            total: vec![T::zero(); k_dim],
            f_empty,
            variance,
            degenerate: true,
        });
    }

    let two_n = nf + nf;
    let mut first_order = Vec::with_capacity(k_dim);
    let mut total = Vec::with_capacity(k_dim);
    for fc in scores.f_c.rows() {
        let mut sq_b = T::zero();
        let mut sq_a = T::zero();
        for j in 0..n {
            let db = scores.f_b[j] - fc[j];
            let da = scores.f_a[j] - fc[j];
            sq_b = sq_b + db * db;
            sq_a = sq_a + da * da;
        }
        first_order.push((variance - sq_b / two_n) / variance);
        total.push(sq_a / two_n / variance);
    }
    Ok(SobolIndices { first_order, total, f_empty, variance, degenerate: false })
}

/// Exhaustive functional ANOVA of a function of `K` independent uniform
/// binary inputs. `partial_variances[mask]` is `Var(f_κ)` for the subset
/// whose members are the set bits of `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoeffdingTable<T> {
    pub features: usize,
    pub mean: T,
    pub total_variance: T,
    pub partial_variances: Vec<T>,
}

impl<T: Num + Clone + PartialEq> HoeffdingTable<T> {
    pub fn sum_of_partials(&self) -> T {
        self.partial_variances.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    /// `S_κ`, or `None` when the function is constant.
    pub fn index(&self, mask: usize) -> Option<T> {
        (self.total_variance != T::zero())
            .then(|| self.partial_variances[mask].clone() / self.total_variance.clone())
    }

    pub fn first_order(&self, k: usize) -> Option<T> {
        self.index(1 << k)
    }

    pub fn total(&self, k: usize) -> Option<T> {
        if self.total_variance == T::zero() {
            return None;
        }
        let sum = (0..self.partial_variances.len())
            .filter(|m| m & (1 << k) != 0)
            .map(|m| self.partial_variances[m].clone())
            .fold(T::zero(), |a, b| a + b);
        Some(sum / self.total_variance.clone())
    }
}

/// Enumerates all `2^K` corners of `{0,1}^K` and decomposes `f` into its
/// Sobol-Hoeffding summands by Möbius inversion of the conditional
/// expectations `E[f | X_λ]`.
pub fn sobol_hoeffding_check<T, F>(features: usize, f: F) -> Result<HoeffdingTable<T>>
where
    T: Num + Clone + PartialEq,
    F: Fn(&[bool]) -> T,
{
    if features > MAX_ENUMERATED_FEATURES {
        return Err(Error::InvalidParam(format!(
            "exhaustive decomposition limited to {MAX_ENUMERATED_FEATURES} features, got {features}"
        )));
    }
    let corners = 1usize << features;
    let two = T::one() + T::one();
    let mut n_corners = T::one();
    for _ in 0..features {
        n_corners = n_corners * two.clone();
    }
    let values: Vec<T> = (0..corners)
        .map(|x| {
            let bits: Vec<bool> = (0..features).map(|i| x & (1 << i) != 0).collect();
            f(&bits)
        })
        .collect();

    // cond[λ][x] = E[f | X_λ = x_λ]: average out every bit outside λ.
    let mut cond: Vec<Vec<T>> = Vec::with_capacity(corners);
    for lambda in 0..corners {
        let mut g = values.clone();
        for bit in 0..features {
            if lambda & (1 << bit) != 0 {
                continue;
            }
            let b = 1 << bit;
            for x in 0..corners {
                if x & b == 0 {
                    let avg = (g[x].clone() + g[x | b].clone()) / two.clone();
                    g[x] = avg.clone();
                    g[x | b] = avg;
                }
            }
        }
        cond.push(g);
    }

    // Möbius inversion over the subset lattice, corner by corner:
    // f_κ(x) = Σ_{λ ⊆ κ} (-1)^{|κ \ λ|} E[f | X_λ](x).
    let mut partial_variances = vec![T::zero(); corners];
    let mut effects = vec![T::zero(); corners];
    for x in 0..corners {
        for (kappa, e) in effects.iter_mut().enumerate() {
            *e = cond[kappa][x].clone();
        }
        for bit in 0..features {
            let b = 1 << bit;
            for kappa in 0..corners {
                if kappa & b != 0 {
                    effects[kappa] = effects[kappa].clone() - effects[kappa ^ b].clone();
                }
            }
        }
        for kappa in 1..corners {
            partial_variances[kappa] =
                partial_variances[kappa].clone() + effects[kappa].clone() * effects[kappa].clone();
        }
    }
    for v in partial_variances.iter_mut() {
        *v = v.clone() / n_corners.clone();
    }

    let mean = values.iter().cloned().fold(T::zero(), |a, b| a + b) / n_corners.clone();
    let total_variance = values
        .iter()
        .map(|v| (v.clone() - mean.clone()) * (v.clone() - mean.clone()))
        .fold(T::zero(), |a, b| a + b)
        / n_corners;

    Ok(HoeffdingTable { features, mean, total_variance, partial_variances })
}

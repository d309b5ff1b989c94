//! Black-box scorer contract and its backends.
//!
//! A scorer maps a batch of images (channel-first, values in `[0, 1]`) to
//! one finite score per image, aligned with the batch order. Backends:
//!
//! * [`SyntheticModel`]: closed-form models used as analytic test oracles.
//! * [`RemoteClient`]: HTTP `POST /score` speaking the [`protocol`] framing.
//! * [`SubprocessScorer`]: the same payload over length-prefixed stdio frames.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Image;

pub mod protocol;
mod remote;
mod subprocess;
pub mod synthetic;

pub use remote::RemoteClient;
pub use subprocess::SubprocessScorer;
pub use synthetic::SyntheticModel;

/// Environment variable holding the default remote endpoint.
pub const SCORER_URL_ENV: &str = "WCAM_SCORER_URL";

/// Transport retries before a remote or subprocess call gives up.
pub const DEFAULT_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Probability,
    Logit,
}

impl std::str::FromStr for ScoreKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probability" | "prob" => Ok(ScoreKind::Probability),
            "logit" => Ok(ScoreKind::Logit),
            _ => Err(crate::Error::InvalidParam(format!("unknown score kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerErrorKind {
    Transport,
    Protocol,
    NonFinite,
    Unsupported,
}

impl fmt::Display for ScorerErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScorerErrorKind::Transport => "transport",
            ScorerErrorKind::Protocol => "protocol",
            ScorerErrorKind::NonFinite => "non_finite",
            ScorerErrorKind::Unsupported => "unsupported",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Error)]
#[error("scorer {kind} error (batch {batch_index}): {message}")]
pub struct ScorerError {
    pub kind: ScorerErrorKind,
    pub batch_index: usize,
    pub message: String,
}

impl ScorerError {
    pub fn new(kind: ScorerErrorKind, message: impl Into<String>) -> Self {
        ScorerError { kind, batch_index: 0, message: message.into() }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Self::new(ScorerErrorKind::Transport, message)
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(ScorerErrorKind::Protocol, message)
    }

    pub fn with_batch(mut self, batch_index: usize) -> Self {
        self.batch_index = batch_index;
        self
    }
}

/// Checks that a backend returned exactly one finite score per image.
pub fn check_scores(scores: &[f64], expected: usize) -> Result<(), ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::protocol(format!(
            "expected {expected} scores, got {}",
            scores.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|v| !v.is_finite()) {
        return Err(ScorerError::new(
            ScorerErrorKind::NonFinite,
            format!("score {pos} is {}", scores[pos]),
        ));
    }
    Ok(())
}

pub trait Scorer: Send + Sync {
    /// Score of `target_class` for every image, in batch order.
    fn score_batch(&self, images: &[Image], target_class: usize) -> Result<Vec<f64>, ScorerError>;

    /// Scores of every class for every image.
    fn class_scores(&self, _images: &[Image]) -> Result<Vec<Vec<f64>>, ScorerError> {
        Err(ScorerError::new(
            ScorerErrorKind::Unsupported,
            "this scorer does not report all-class scores",
        ))
    }

    fn max_batch(&self) -> usize {
        usize::MAX
    }

    /// Whether batches may be scored from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }

    fn score_kind(&self) -> ScoreKind {
        ScoreKind::Probability
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, images: &[Image], target_class: usize) -> Result<Vec<f64>, ScorerError> {
        (**self).score_batch(images, target_class)
    }
    fn class_scores(&self, images: &[Image]) -> Result<Vec<Vec<f64>>, ScorerError> {
        (**self).class_scores(images)
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
    fn score_kind(&self) -> ScoreKind {
        (**self).score_kind()
    }
}

#[derive(Debug)]
pub enum Backend {
    Synthetic(SyntheticModel),
    Remote(RemoteClient),
    Subprocess(SubprocessScorer),
}

/// A configured scorer: one backend plus the batch and score-kind contract.
#[derive(Debug)]
pub struct ScorerHandle {
    pub backend: Backend,
    pub score_kind: ScoreKind,
    pub max_batch: usize,
}

impl ScorerHandle {
    pub fn synthetic(model: SyntheticModel) -> Self {
        ScorerHandle { backend: Backend::Synthetic(model), score_kind: ScoreKind::Probability, max_batch: 256 }
    }

    pub fn remote(endpoint: &str) -> Self {
        ScorerHandle {
            backend: Backend::Remote(RemoteClient::new(endpoint)),
            score_kind: ScoreKind::Probability,
            max_batch: 64,
        }
    }

    pub fn subprocess(command: &str) -> Self {
        ScorerHandle {
            backend: Backend::Subprocess(SubprocessScorer::new(command)),
            score_kind: ScoreKind::Probability,
            max_batch: 64,
        }
    }

    /// Parses `synthetic:<model>`, `subprocess:<command>` or an `http(s)://` URL.
    /// `None` falls back to the `WCAM_SCORER_URL` environment variable.
    pub fn from_spec(spec: Option<&str>) -> crate::Result<Self> {
        let owned;
        let spec = match spec {
            Some(s) => s,
            None => {
                owned = std::env::var(SCORER_URL_ENV).map_err(|_| {
                    crate::Error::InvalidParam(format!("no scorer given and {SCORER_URL_ENV} is unset"))
                })?;
                owned.as_str()
            }
        };
        if let Some(rest) = spec.strip_prefix("synthetic:") {
            Ok(Self::synthetic(rest.parse()?))
        } else if let Some(cmd) = spec.strip_prefix("subprocess:") {
            Ok(Self::subprocess(cmd))
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(Self::remote(spec))
        } else {
            Err(crate::Error::InvalidParam(format!(
                "scorer must be a URL, synthetic:<id> or subprocess:<cmd>, got '{spec}'"
            )))
        }
    }

    pub fn with_score_kind(mut self, kind: ScoreKind) -> Self {
        self.score_kind = kind;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    /// Short description recorded in run manifests.
    pub fn describe(&self) -> String {
        match &self.backend {
            Backend::Synthetic(m) => format!("synthetic:{}", m.describe()),
            Backend::Remote(r) => r.endpoint().to_string(),
            Backend::Subprocess(s) => format!("subprocess:{}", s.command()),
        }
    }
}

impl Scorer for ScorerHandle {
    fn score_batch(&self, images: &[Image], target_class: usize) -> Result<Vec<f64>, ScorerError> {
        if images.len() > self.max_batch {
            return Err(ScorerError::protocol(format!(
                "batch of {} exceeds max_batch {}",
                images.len(),
                self.max_batch
            )));
        }
        let scores = match &self.backend {
            Backend::Synthetic(m) => m.score_batch(images, target_class)?,
            Backend::Remote(r) => r.score(images, target_class, self.score_kind)?,
            Backend::Subprocess(s) => s.score(images, target_class, self.score_kind)?,
        };
        check_scores(&scores, images.len())?;
        Ok(scores)
    }

    fn class_scores(&self, images: &[Image]) -> Result<Vec<Vec<f64>>, ScorerError> {
        let all = match &self.backend {
            Backend::Synthetic(m) => m.class_scores(images)?,
            Backend::Remote(r) => r.score_all(images, self.score_kind)?,
            Backend::Subprocess(s) => s.score_all(images, self.score_kind)?,
        };
        if all.len() != images.len() {
            return Err(ScorerError::protocol(format!(
                "expected {} score vectors, got {}",
                images.len(),
                all.len()
            )));
        }
        for row in &all {
            check_scores(row, row.len())?;
        }
        Ok(all)
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn concurrent_safe(&self) -> bool {
        !matches!(self.backend, Backend::Subprocess(_))
    }

    fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert!(matches!(
            ScorerHandle::from_spec(Some("synthetic:constant:0.5")).unwrap().backend,
            Backend::Synthetic(SyntheticModel::ConstantScore(c)) if c == 0.5
        ));
        assert!(matches!(
            ScorerHandle::from_spec(Some("http://localhost:1/")).unwrap().backend,
            Backend::Remote(_)
        ));
        assert!(matches!(
            ScorerHandle::from_spec(Some("subprocess:python3 serve.py")).unwrap().backend,
            Backend::Subprocess(_)
        ));
        assert!(ScorerHandle::from_spec(Some("ftp://x")).is_err());
    }

    #[test]
    fn check_scores_flags_problems() {
        assert!(check_scores(&[1.0, 2.0], 2).is_ok());
        assert_eq!(check_scores(&[1.0], 2).unwrap_err().kind, ScorerErrorKind::Protocol);
        assert_eq!(check_scores(&[1.0, f64::NAN], 2).unwrap_err().kind, ScorerErrorKind::NonFinite);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let h = ScorerHandle::synthetic(SyntheticModel::ConstantScore(0.1)).with_max_batch(2);
        let imgs = vec![Image::zeros((1, 2, 2)); 3];
        assert!(h.score_batch(&imgs, 0).is_err());
        assert_eq!(h.score_batch(&imgs[..2], 0).unwrap(), vec![0.9, 0.9]);
    }
}

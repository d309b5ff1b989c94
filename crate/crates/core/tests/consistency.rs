use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcam_core::analysis::{noise_baseline, pairwise_distances, scale_embed, welch_t_test, EmbeddingNorm};
use wcam_core::scorer::synthetic::WaveletWeights;
use wcam_core::scorer::SyntheticModel;
use wcam_core::wavelet::{Orientation, SubbandId, WaveletSpec};
use wcam_core::{compute_wcam, ScorerHandle, WcamConfig};

#[test]
fn perturbed_copies_are_indistinguishable_from_seed_noise() {
    let spec = WaveletSpec::haar(2);
    let id = SubbandId::detail(1, Orientation::Vertical).unwrap();
    let scorer = ScorerHandle::synthetic(SyntheticModel::WaveletLinear { spec, weights: WaveletWeights::Subband(id, 0.5) });
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let image = Array3::from_shape_fn((1, 32, 32), |(_, _, c)| 0.3 + 0.4 * ((c % 2) as f64));
    let config = WcamConfig { grid_size: 8, n_design: 16, wavelet: spec, ..WcamConfig::default() };

    let embeddings: Vec<_> = (0..10u64)
        .map(|i| {
            let noisy = image.mapv(|v| (v + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0));
            let mut cfg = config;
            cfg.sampler.seed = i;
            scale_embed(&compute_wcam(&noisy, 1, &scorer, &cfg).unwrap(), EmbeddingNorm::RawSum).unwrap()
        })
        .collect();
    let batch = pairwise_distances(&embeddings).unwrap();
    assert_eq!(batch.len(), 45);
    let noise = noise_baseline(&image, 1, &scorer, &config, EmbeddingNorm::RawSum, 20).unwrap();
    assert_eq!(noise.distances.len(), 190);
    assert!(noise.summary.mean > 0.0);
    let w = welch_t_test(&batch, &noise.distances).unwrap();
    assert!(w.p_value >= 0.05, "p = {}", w.p_value);
}

#[test]
fn different_scale_usage_is_detected() {
    // Two scorers relying on different subbands give embeddings far apart
    // compared with seed noise.
    let spec = WaveletSpec::haar(2);
    let image = Array3::from_shape_fn((1, 32, 32), |(_, _, c)| 0.3 + 0.4 * ((c % 2) as f64));
    let config = WcamConfig { grid_size: 8, n_design: 16, wavelet: spec, ..WcamConfig::default() };
    let embed = |id: SubbandId| {
        let s = ScorerHandle::synthetic(SyntheticModel::WaveletLinear { spec, weights: WaveletWeights::Subband(id, 0.5) });
        scale_embed(&compute_wcam(&image, 1, &s, &config).unwrap(), EmbeddingNorm::RawSum).unwrap()
    };
    let a = embed(SubbandId::detail(1, Orientation::Vertical).unwrap());
    let b = embed(SubbandId::APPROX);
    let d = wcam_core::analysis::embedding_distance(&a.z, &b.z).unwrap();
    let s = ScorerHandle::synthetic(SyntheticModel::WaveletLinear {
        spec,
        weights: WaveletWeights::Subband(SubbandId::detail(1, Orientation::Vertical).unwrap(), 0.5),
    });
    let noise = noise_baseline(&image, 1, &s, &config, EmbeddingNorm::RawSum, 5).unwrap();
    assert!(d > noise.summary.ci95.1, "{d} vs {:?}", noise.summary.ci95);
}

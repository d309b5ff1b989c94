use ndarray::Array3;
use wcam_core::analysis::{scale_embed, spatial_project, EmbeddingNorm};
use wcam_core::{compute_wcam, ScorerHandle, WcamConfig};

fn main() -> wcam_core::Result<()> {
    let image = Array3::from_shape_fn((3, 64, 64), |(c, y, x)| ((x + 2 * y + c) % 7) as f64 / 7.0);
    let scorer = ScorerHandle::from_spec(Some("synthetic:quadrant-mean"))?;
    let config = WcamConfig { grid_size: 16, ..WcamConfig::default() };

    let map = compute_wcam(&image, 1, &scorer, &config)?;
    let spatial = spatial_project(&map)?;
    let embedding = scale_embed(&map, EmbeddingNorm::RawSum)?;

    println!("forwards: {}", map.n_forwards);
    println!("mass: {:.6} / {:.6}", map.total_mass(), spatial.total_mass());
    for (label, z) in embedding.labels.iter().zip(&embedding.z) {
        println!("{label}: {z:.4}");
    }
    Ok(())
}

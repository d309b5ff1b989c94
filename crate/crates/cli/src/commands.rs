use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use wcam_core::analysis::{
    consistency_report, frequency_curve, minimal_image, noise_baseline, pairwise_distances, reconstruct_topk,
    scale_embed, spatial_project, EmbeddingNorm, MinimalOutcome,
};
use wcam_core::metrics::{default_subset_size, deletion, insertion, mu_fidelity, AttributionGrid, CurveResult};
use wcam_core::qmc::{Sampler, SamplerKind};
use wcam_core::scorer::ScoreKind;
use wcam_core::wavelet::{WaveletFamily, WaveletSpec};
use wcam_core::{compute_wcam, Image, ScorerHandle, WCAMap, WcamConfig};

use crate::output::{
    ensure_dir, fmt17, load_image, read_grid_csv, write_csv, write_grid_csv, write_heatmap, write_image, write_json,
    write_manifest, Manifest, MANIFEST_SCHEMA,
};
use crate::{CliError, ConsistencyArgs, EmbedArgs, MetricsArgs, ReconstructArgs, RunArgs};

fn config_error<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn build_config(run: &RunArgs) -> Result<WcamConfig, CliError> {
    let family: WaveletFamily = run.wavelet.parse().map_err(config_error)?;
    let kind: SamplerKind = run.sampler.parse().map_err(config_error)?;
    let score_kind: ScoreKind = run.score_kind.parse().map_err(config_error)?;
    let config = WcamConfig {
        grid_size: run.grid,
        n_design: run.designs,
        sampler: Sampler::new(kind, run.seed),
        wavelet: WaveletSpec::new(family, run.levels).map_err(config_error)?,
        batch_size: run.batch.max(1),
        score_kind,
        ..WcamConfig::default()
    };
    config.validate()?;
    Ok(config)
}

struct Setup {
    config: WcamConfig,
    scorer: ScorerHandle,
    image: Image,
    out: std::path::PathBuf,
}

fn setup(run: &RunArgs) -> Result<Setup, CliError> {
    let config = build_config(run)?;
    let scorer = ScorerHandle::from_spec(Some(&run.scorer))?.with_score_kind(config.score_kind);
    let image = load_image(&run.image, run.size)?;
    let (_, h, w) = image.dim();
    config.validate_image(h, w)?;
    let out = ensure_dir(&run.out)?;
    Ok(Setup { config, scorer, image, out })
}

fn manifest(command: &str, run: &RunArgs, s: &Setup, images: Vec<String>, n_forwards: usize) -> Manifest {
    Manifest {
        schema: MANIFEST_SCHEMA,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config: s.config,
        images,
        scorer: s.scorer.describe(),
        target_class: run.class,
        seed: run.seed,
        output_dir: run.out.display().to_string(),
        resize: (run.size > 0).then_some(run.size),
        n_forwards,
        wall_time_s: None,
    }
}

fn finish(mut m: Manifest, start: Instant, out: &Path) -> Result<(), CliError> {
    m.wall_time_s = Some(start.elapsed().as_secs_f64());
    write_manifest(out, &m)
}

/// Estimates the map, or loads it from `map` when given.
fn obtain_map(run: &RunArgs, s: &Setup, map: Option<&Path>) -> Result<WCAMap, CliError> {
    match map {
        Some(path) => {
            let mut m = WCAMap::from_grid(read_grid_csv(path)?, s.config)?;
            m.target_class = run.class;
            m.n_forwards = 0;
            Ok(m)
        }
        None => Ok(compute_wcam(&s.image, run.class, &s.scorer, &s.config)?),
    }
}

pub fn attribute(run: &RunArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let s = setup(run)?;
    let map = obtain_map(run, &s, None)?;
    let spatial = spatial_project(&map)?;
    let m = manifest("attribute", run, &s, vec![run.image.display().to_string()], map.n_forwards);
    write_grid_csv(&s.out.join("wcam.csv"), "wcam.grid.v1", &m, &map.total_indices)?;
    write_heatmap(&s.out.join("wcam.png"), &map.total_indices, Some(map.levels()), &m)?;
    write_grid_csv(&s.out.join("spatial.csv"), "wcam.spatial.v1", &m, &spatial.grid)?;
    write_heatmap(&s.out.join("spatial.png"), &spatial.grid, None, &m)?;
    if map.degenerate {
        log::warn!("scorer output did not vary; the map is all zeros");
    }
    finish(m, start, &s.out)
}

fn curve_rows(c: &CurveResult) -> Vec<Vec<String>> {
    c.counts
        .iter()
        .zip(&c.scores)
        .enumerate()
        .map(|(t, (n, v))| vec![t.to_string(), n.to_string(), fmt17(*v)])
        .collect()
}

#[derive(Serialize)]
struct MetricsDoc {
    correlation: f64,
    degenerate: bool,
    subset_size: usize,
    n_subsets: usize,
    subset_seed: u64,
    deletion_auc: f64,
    insertion_auc: f64,
    steps: usize,
}

pub fn metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let run = &args.run;
    let s = setup(run)?;
    let map = obtain_map(run, &s, args.map.as_deref())?;
    let attr = AttributionGrid::from_wcam(&map);
    let k = attr.n_features();
    let steps = args.steps.unwrap_or(k);
    let batch = s.config.batch_size;
    let del = deletion(&s.image, &attr, &s.scorer, run.class, steps, batch)?;
    let ins = insertion(&s.image, &attr, &s.scorer, run.class, steps, batch)?;
    let d = args.subset_size.unwrap_or_else(|| default_subset_size(k));
    let mu = mu_fidelity(&s.image, &attr, &s.scorer, run.class, d, args.subsets, run.seed, batch)?;
    let forwards = map.n_forwards + del.scores.len() + ins.scores.len() + args.subsets + 1;
    let m = manifest("metrics", run, &s, vec![run.image.display().to_string()], forwards);
    let header = Some("step,count,score");
    write_csv(&s.out.join("deletion.csv"), "wcam.deletion.v1", &m, header, &curve_rows(&del))?;
    write_csv(&s.out.join("insertion.csv"), "wcam.insertion.v1", &m, header, &curve_rows(&ins))?;
    let doc = MetricsDoc {
        correlation: mu.correlation,
        degenerate: mu.degenerate,
        subset_size: mu.subset_size,
        n_subsets: mu.n_subsets,
        subset_seed: mu.seed,
        deletion_auc: del.auc,
        insertion_auc: ins.auc,
        steps,
    };
    write_json(&s.out.join("mufidelity.json"), "wcam.mufidelity.v1", &m, &doc)?;
    finish(m, start, &s.out)
}

#[derive(Serialize)]
struct Entry {
    label: String,
    value: f64,
}

#[derive(Serialize)]
struct EmbeddingDoc {
    normalization: EmbeddingNorm,
    floored: usize,
    curve_defined: bool,
    entries: Vec<Entry>,
}

pub fn embed(args: &EmbedArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let run = &args.run;
    let norm: EmbeddingNorm = args.norm.parse().map_err(config_error)?;
    let s = setup(run)?;
    let map = obtain_map(run, &s, args.map.as_deref())?;
    let emb = scale_embed(&map, norm)?;
    let curve = match frequency_curve(&emb) {
        Ok(c) => Some(c),
        Err(wcam_core::Error::DegenerateVariance(msg)) => {
            log::warn!("frequency curve undefined: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let m = manifest("embed", run, &s, vec![run.image.display().to_string()], map.n_forwards);
    let doc = EmbeddingDoc {
        normalization: norm,
        floored: emb.floored,
        curve_defined: curve.is_some(),
        entries: emb.labels.iter().zip(&emb.z).map(|(l, &v)| Entry { label: l.clone(), value: v }).collect(),
    };
    write_json(&s.out.join("embedding.json"), "wcam.embedding.v1", &m, &doc)?;
    if let Some(c) = curve {
        let levels = map.levels();
        let rows: Vec<Vec<String>> = c
            .importance
            .iter()
            .zip(&c.cumulative)
            .enumerate()
            .map(|(j, (v, cum))| {
                let label = if j == 0 { "a".to_string() } else { format!("level{}", levels + 1 - j) };
                vec![j.to_string(), label, fmt17(*v), fmt17(*cum)]
            })
            .collect();
        write_csv(&s.out.join("curve.csv"), "wcam.curve.v1", &m, Some("index,label,importance,cumulative"), &rows)?;
    }
    finish(m, start, &s.out)
}

#[derive(Serialize)]
struct MinimalDoc {
    target_class: usize,
    found: bool,
    k: Option<usize>,
    n_cells: usize,
    class_scores: Option<Vec<f64>>,
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let run = &args.run;
    let s = setup(run)?;
    let map = obtain_map(run, &s, args.map.as_deref())?;
    let m = manifest("reconstruct", run, &s, vec![run.image.display().to_string()], map.n_forwards);
    for &k in &args.k {
        let img = reconstruct_topk(&s.image, &map, k)?;
        write_image(&s.out.join(format!("topk_{k:03}.png")), &img, &m)?;
    }
    if !args.no_minimal {
        let n_cells = map.total_indices.len();
        let doc = match minimal_image(&s.image, &map, &s.scorer, run.class)? {
            MinimalOutcome::Found { k, image, scores } => {
                write_image(&s.out.join("minimal.png"), &image, &m)?;
                MinimalDoc { target_class: run.class, found: true, k: Some(k), n_cells, class_scores: Some(scores) }
            }
            MinimalOutcome::NeverSufficient => {
                MinimalDoc { target_class: run.class, found: false, k: None, n_cells, class_scores: None }
            }
        };
        write_json(&s.out.join("minimal.json"), "wcam.minimal.v1", &m, &doc)?;
    }
    finish(m, start, &s.out)
}

#[derive(Serialize)]
struct NoiseDoc {
    normalization: EmbeddingNorm,
    baseline: wcam_core::analysis::NoiseBaseline,
    batch_mean_distance: f64,
    report: Option<wcam_core::analysis::ConsistencyReport>,
}

pub fn consistency(args: &ConsistencyArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let run = &args.run;
    let norm: EmbeddingNorm = args.norm.parse().map_err(config_error)?;
    let s = setup(run)?;
    let mut paths = vec![run.image.clone()];
    paths.extend(args.with.iter().cloned());
    if paths.len() < 2 {
        return Err(CliError::Config("consistency needs at least two images (use --with)".into()));
    }
    let mut embeddings = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let image = if i == 0 { s.image.clone() } else { load_image(path, run.size)? };
        let mut cfg = s.config;
        cfg.sampler.seed = run.seed.wrapping_add(i as u64);
        embeddings.push(scale_embed(&compute_wcam(&image, run.class, &s.scorer, &cfg)?, norm)?);
    }
    let distances = pairwise_distances(&embeddings)?;
    let baseline = noise_baseline(&s.image, run.class, &s.scorer, &s.config, norm, args.repeats)?;
    let forwards = s.config.n_forwards() * (paths.len() + args.repeats);
    let m = manifest("consistency", run, &s, paths.iter().map(|p| p.display().to_string()).collect(), forwards);

    let n = paths.len();
    let mut rows = Vec::with_capacity(distances.len());
    let mut idx = 0;
    for i in 0..n {
        for j in i + 1..n {
            rows.push(vec![i.to_string(), j.to_string(), fmt17(distances[idx])]);
            idx += 1;
        }
    }
    write_csv(&s.out.join("distances.csv"), "wcam.distances.v1", &m, Some("i,j,distance"), &rows)?;
    let report = if distances.len() >= 2 {
        Some(consistency_report(&distances, &baseline)?)
    } else {
        None
    };
    let doc = NoiseDoc {
        normalization: norm,
        batch_mean_distance: distances.iter().sum::<f64>() / distances.len() as f64,
        baseline,
        report,
    };
    write_json(&s.out.join("noise_baseline.json"), "wcam.noise_baseline.v1", &m, &doc)?;
    finish(m, start, &s.out)
}

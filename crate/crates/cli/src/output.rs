//! Run manifests and the on-disk formats: CSV grids, JSON documents and PNGs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::{Array2, Array3};
use serde::Serialize;
use wcam_core::WcamConfig;

use crate::CliError;

pub const MANIFEST_SCHEMA: &str = "wcam.manifest.v1";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: WcamConfig,
    pub images: Vec<String>,
    pub scorer: String,
    pub target_class: usize,
    pub seed: u64,
    pub output_dir: String,
    /// Side images were resized to with a bilinear filter, if any.
    pub resize: Option<u32>,
    pub n_forwards: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl Manifest {
    /// The manifest without timing, as embedded in every artifact.
    pub fn embedded(&self) -> Manifest {
        Manifest { wall_time_s: None, ..self.clone() }
    }

    pub fn embedded_json(&self) -> String {
        serde_json::to_string(&self.embedded()).expect("manifest serializes")
    }
}

/// Scientific notation with 17 significant digits, enough to round-trip an f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv(path: &Path, schema: &str, manifest: &Manifest, header: Option<&str>, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let err = io_err(path);
    writeln!(w, "# schema: {schema}").map_err(&err)?;
    writeln!(w, "# manifest: {}", manifest.embedded_json()).map_err(&err)?;
    if let Some(h) = header {
        writeln!(w, "{h}").map_err(&err)?;
    }
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

pub fn write_grid_csv(path: &Path, schema: &str, manifest: &Manifest, grid: &Array2<f64>) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = grid.rows().into_iter().map(|r| r.iter().map(|&v| fmt17(v)).collect()).collect();
    write_csv(path, schema, manifest, None, &rows)
}

pub fn read_grid_csv(path: &Path) -> Result<Array2<f64>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Config(format!("{}: ragged rows", path.display())));
        }
        values.extend(row);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Writes `{"schema": ..., "manifest": ..., <body fields>}`.
pub fn write_json<T: Serialize>(path: &Path, schema: &str, manifest: &Manifest, body: &T) -> Result<(), CliError> {
    let mut doc = serde_json::Map::new();
    doc.insert("schema".into(), schema.into());
    doc.insert("manifest".into(), serde_json::to_value(manifest.embedded()).expect("manifest serializes"));
    match serde_json::to_value(body).expect("body serializes") {
        serde_json::Value::Object(fields) => doc.extend(fields),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, manifest).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}

fn write_png(path: &Path, width: u32, height: u32, color: png::ColorType, data: &[u8], manifest: &Manifest) -> Result<(), CliError> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("wcam-manifest".into(), manifest.embedded_json())
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut writer = enc.write_header().map_err(|e| CliError::Io(e.to_string()))?;
    writer.write_image_data(data).map_err(|e| CliError::Io(e.to_string()))?;
    writer.finish().map_err(|e| CliError::Io(e.to_string()))
}

/// Viridis heatmap of a grid. Negative values are shown as 0. With `levels`,
/// white lines mark the subband boundaries of the nested layout.
pub fn write_heatmap(path: &Path, grid: &Array2<f64>, levels: Option<usize>, manifest: &Manifest) -> Result<(), CliError> {
    let (gr, gc) = grid.dim();
    let scale = (448 / gr.max(gc)).max(4);
    let (h, w) = (gr * scale, gc * scale);
    let max = grid.iter().cloned().fold(0.0f64, f64::max);
    let mut data = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let v = grid[[y / scale, x / scale]].max(0.0);
            let t = if max > 0.0 { v / max } else { 0.0 };
            let c = colorous::VIRIDIS.eval_continuous(t);
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&[c.r, c.g, c.b]);
        }
    }
    if let Some(levels) = levels {
        for l in 1..=levels {
            let s = (gr >> l) * scale;
            for t in 0..(2 * s).min(h) {
                // Vertical boundary at column s, horizontal at row s.
                data[(t * w + s) * 3..(t * w + s) * 3 + 3].fill(255);
                data[(s * w + t) * 3..(s * w + t) * 3 + 3].fill(255);
            }
        }
    }
    write_png(path, w as u32, h as u32, png::ColorType::Rgb, &data, manifest)
}

pub fn write_image(path: &Path, image: &Array3<f64>, manifest: &Manifest) -> Result<(), CliError> {
    let (c, h, w) = image.dim();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(CliError::Config(format!("cannot write a {c}-channel image"))),
    };
    let mut data = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push((image[[ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    write_png(path, w as u32, h as u32, color, &data, manifest)
}

/// Loads an image as RGB in `[0, 1]`, shaped (channel, row, column), resized
/// bilinearly to `size` x `size` unless `size` is 0.
pub fn load_image(path: &Path, size: u32) -> Result<Array3<f64>, CliError> {
    let img = image::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rgb = img.to_rgb32f();
    if size > 0 && (rgb.width() != size || rgb.height() != size) {
        rgb = image::imageops::resize(&rgb, size, size, FilterType::Triangle);
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        (rgb.get_pixel(x as u32, y as u32)[c] as f64).clamp(0.0, 1.0)
    }))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.to_path_buf())
}

//! Training data as field configurations.
//!
//! Pixel values are mapped affinely from `[0, max]` to `[-1, 1]` and images
//! are flattened row-major. Colour images are reduced to Rec. 709 luma
//! (`0.2126 R + 0.7152 G + 0.0722 B`) before mapping.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::FieldConfiguration;
use crate::lattice::LatticeGraph;
use crate::sampler::chain_rng;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// `count` configurations of `sites` i.i.d. `N(mu, sigma)` values.
    Gaussian {
        mu: f64,
        sigma: f64,
        count: usize,
        sites: usize,
    },
    /// PGM files (plain or raw); all must share one size.
    Pgm(Vec<PathBuf>),
    /// Numeric matrices without header, one image per file.
    Csv { paths: Vec<PathBuf>, max_pixel: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub configs: Vec<FieldConfiguration>,
    /// Image shape `(height, width)` for image sources.
    pub shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn check_graph(&self, graph: &LatticeGraph) -> Result<()> {
        match self.configs.iter().find(|c| c.len() != graph.vertex_count()) {
            Some(c) => Err(Error::SizeMismatch {
                what: "dataset configuration",
                expected: graph.vertex_count(),
                got: c.len(),
            }),
            None => Ok(()),
        }
    }
}

/// `[0, max] → [-1, 1]`.
#[inline]
pub fn pixel_to_field(value: f64, max_pixel: f64) -> f64 {
    2.0 * value / max_pixel - 1.0
}

pub fn ingest_dataset(source: &DatasetSource, seed: u64) -> Result<Dataset> {
    match source {
        DatasetSource::Gaussian {
            mu,
            sigma,
            count,
            sites,
        } => {
            if *count == 0 || *sites == 0 {
                return Err(Error::Dataset("synthetic dataset needs positive count and sites".into()));
            }
            let normal = Normal::new(*mu, *sigma).map_err(|e| Error::Dataset(e.to_string()))?;
            let mut rng = chain_rng(seed);
            let configs = (0..*count)
                .map(|_| FieldConfiguration::new((0..*sites).map(|_| normal.sample(&mut rng)).collect()))
                .collect::<Result<_>>()?;
            Ok(Dataset { configs, shape: None })
        }
        DatasetSource::Pgm(paths) => collect_images(paths, read_pgm),
        DatasetSource::Csv { paths, max_pixel } => {
            if !(*max_pixel > 0.0) {
                return Err(Error::Dataset(format!("max_pixel must be positive, got {max_pixel}")));
            }
            collect_images(paths, |p| read_csv_image(p, *max_pixel))
        }
    }
}

type Image = (usize, usize, Vec<f64>);

fn collect_images(paths: &[PathBuf], read: impl Fn(&Path) -> Result<Image>) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Dataset("no image files given".into()));
    }
    let mut shape = None;
    let mut configs = Vec::with_capacity(paths.len());
    for path in paths {
        let (h, w, values) = read(path)?;
        match shape {
            None => shape = Some((h, w)),
            Some(s) if s != (h, w) => {
                return Err(Error::Dataset(format!(
                    "{}: size {h}x{w} differs from {}x{}",
                    path.display(),
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        configs.push(FieldConfiguration::new(values)?);
    }
    Ok(Dataset { configs, shape })
}

fn read_pgm(path: &Path) -> Result<Image> {
    let bad = |e: String| Error::Dataset(format!("{}: {e}", path.display()));
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| bad(e.to_string()))?;
    // 16-bit luma keeps every 8- or 16-bit input exact.
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let values = luma
        .pixels()
        .map(|p| pixel_to_field(f64::from(p.0[0]), f64::from(u16::MAX)))
        .collect();
    Ok((h, w, values))
}

fn read_csv_image(path: &Path, max_pixel: f64) -> Result<Image> {
    let bad = |e: String| Error::Dataset(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut width = None;
    let mut values = Vec::new();
    let mut height = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if width.is_some_and(|w| w != rec.len()) {
            return Err(bad(format!("row {height} has {} columns", rec.len())));
        }
        width = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| bad(format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite pixel `{field}`")));
            }
            values.push(pixel_to_field(v, max_pixel));
        }
        height += 1;
    }
    match width {
        Some(w) if w > 0 => Ok((height, w, values)),
        _ => Err(bad("empty matrix".into())),
    }
}

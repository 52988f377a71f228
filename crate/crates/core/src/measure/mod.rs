//! Discrete probability measures: construction, file ingestion, fixture
//! sampling and convex-hull geometry.

mod hull;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hull::{hull_summary, HalfSpace, HullSummary};

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOL: f64 = 1e-12;

/// A finitely supported probability measure on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from explicit points. Missing weights default to
    /// uniform; given weights are renormalized to total mass one.
    pub fn new(dim: usize, points: &[Vec<f64>], weights: Option<Vec<f64>>) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::validation(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Builds a measure from row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::validation(format!("dimension must be >= 2, got {dim}")));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::validation(
                "a measure needs at least one point and whole coordinate rows",
            ));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::validation(format!(
                "point {} has a non-finite coordinate",
                i / dim
            )));
        }
        let n = coords.len() / dim;
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => normalize_weights(w, n)?,
        };
        Ok(Self {
            dim,
            coords,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Weighted mean `E_mu[x]`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, &w) in self.points().zip(&self.weights) {
            crate::geom::axpy(&mut m, w, x);
        }
        m
    }

    /// Applies `x -> scale * x + shift` to every point.
    pub fn transformed(&self, scale: f64, shift: &[f64]) -> Self {
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|x| x.iter().zip(shift).map(|(c, s)| scale * c + s))
            .collect();
        Self {
            dim: self.dim,
            coords,
            weights: self.weights.clone(),
        }
    }

    pub fn to_json(&self) -> MeasureJson {
        MeasureJson {
            dim: self.dim,
            points: self.points().map(<[f64]>::to_vec).collect(),
            weights: Some(self.weights.clone()),
        }
    }

    /// CSV rows of coordinates followed by the weight.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (x, w) in self.points().zip(&self.weights) {
            for c in x {
                out.push_str(&format!("{c:?},"));
            }
            out.push_str(&format!("{w:?}\n"));
        }
        out
    }
}

fn normalize_weights(mut w: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::validation(format!(
            "{} weights given for {n} points",
            w.len()
        )));
    }
    if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::validation(format!(
            "weight {i} is negative or non-finite ({})",
            w[i]
        )));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::validation("weights sum to zero"));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// JSON schema for measures: `{"dim": d, "points": [[...]], "weights": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureJson {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureFormat {
    Csv,
    Json,
}

impl MeasureFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => MeasureFormat::Json,
            _ => MeasureFormat::Csv,
        }
    }
}

/// Reads a measure from disk. `dim` disambiguates CSV files whose column
/// count could mean either `d` coordinates or `d - 1` coordinates plus a
/// weight; without it, two columns are a 2-d cloud and more columns carry a
/// trailing weight.
pub fn load_measure(path: &Path, format: MeasureFormat, dim: Option<usize>) -> Result<DiscreteMeasure> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeasureFormat::Csv => parse_csv(&text, dim),
        MeasureFormat::Json => parse_json(&text),
    }
}

pub fn parse_json(text: &str) -> Result<DiscreteMeasure> {
    let raw: MeasureJson = serde_json::from_str(text)?;
    DiscreteMeasure::new(raw.dim, &raw.points, raw.weights)
}

pub fn parse_csv(text: &str, dim: Option<usize>) -> Result<DiscreteMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let fields: Vec<&str> = record.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        // A header row is a first row with no numeric field at all.
        if rows.is_empty() && width.is_none() && parsed.iter().all(Option::is_none) {
            width = Some(fields.len());
            continue;
        }
        let mut row = Vec::with_capacity(fields.len());
        for (f, v) in fields.iter().zip(parsed) {
            match v {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-numeric field {f:?}"),
                    })
                }
            }
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::validation("no data rows"))?;
    let (d, weighted) = match dim {
        Some(d) if cols == d => (d, false),
        Some(d) if cols == d + 1 => (d, true),
        Some(d) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{cols} columns cannot hold {d} coordinates"),
            })
        }
        None if cols == 2 => (2, false),
        None if cols > 2 => (cols - 1, true),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{cols} columns; need at least 2 coordinates"),
            })
        }
    };
    let mut coords = Vec::with_capacity(rows.len() * d);
    let mut weights = weighted.then(|| Vec::with_capacity(rows.len()));
    for row in &rows {
        coords.extend_from_slice(&row[..d]);
        if let Some(w) = weights.as_mut() {
            w.push(row[d]);
        }
    }
    DiscreteMeasure::from_flat(d, coords, weights)
}

/// Fixture densities used for tests and experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    /// Uniform on the axis-aligned box `[lo, hi]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Uniform on the Euclidean ball.
    UniformDisk { center: Vec<f64>, radius: f64 },
    /// Isotropic Gaussian components `(weight, mean, std)`.
    GaussianMixture { components: Vec<GaussianComponent> },
    /// Uniform on the segment `[a, b]`. Charges a 1-d set, so it is not
    /// absolutely continuous.
    Segment { a: Vec<f64>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl DensitySpec {
    pub fn unit_square() -> Self {
        DensitySpec::UniformBox {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::UniformBox { lo, .. } => lo.len(),
            DensitySpec::UniformDisk { center, .. } => center.len(),
            DensitySpec::GaussianMixture { components } => {
                components.first().map_or(0, |c| c.mean.len())
            }
            DensitySpec::Segment { a, .. } => a.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::validation("density dimension must be >= 2"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            DensitySpec::UniformBox { lo, hi } => {
                if hi.len() != d || !finite(lo) || !finite(hi) {
                    return Err(Error::validation("box corners must be finite and of equal dimension"));
                }
                if lo.iter().zip(hi).any(|(l, h)| h <= l) {
                    return Err(Error::validation("box needs hi > lo in every coordinate"));
                }
            }
            DensitySpec::UniformDisk { center, radius } => {
                if !finite(center) || !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::validation("disk radius must be positive"));
                }
            }
            DensitySpec::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::validation("mixture has no components"));
                }
                for c in components {
                    if c.mean.len() != d || !finite(&c.mean) {
                        return Err(Error::validation("mixture means must share one dimension"));
                    }
                    if !(c.std.is_finite() && c.std > 0.0) {
                        return Err(Error::validation("mixture std must be positive"));
                    }
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return Err(Error::validation("mixture weights must be positive"));
                    }
                }
            }
            DensitySpec::Segment { a, b } => {
                if b.len() != d || !finite(a) || !finite(b) {
                    return Err(Error::validation("segment endpoints must be finite"));
                }
                if crate::geom::dist(a, b) == 0.0 {
                    return Err(Error::validation("segment has zero length"));
                }
            }
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. samples with uniform weights. Deterministic per seed.
pub fn sample_density(spec: &DensitySpec, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::validation("sample count must be >= 1"));
    }
    spec.validate()?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d);
    match spec {
        DensitySpec::UniformBox { lo, hi } => {
            for _ in 0..n {
                for k in 0..d {
                    coords.push(lo[k] + (hi[k] - lo[k]) * rng.random::<f64>());
                }
            }
        }
        DensitySpec::UniformDisk { center, radius } => {
            for _ in 0..n {
                // rejection from the bounding cube keeps the stream simple
                loop {
                    let u: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                    if crate::geom::norm_sq(&u) <= 1.0 {
                        coords.extend(u.iter().zip(center).map(|(x, c)| c + radius * x));
                        break;
                    }
                }
            }
        }
        DensitySpec::GaussianMixture { components } => {
            let total: f64 = components.iter().map(|c| c.weight).sum();
            for _ in 0..n {
                let mut r = rng.random::<f64>() * total;
                let mut pick = components.len() - 1;
                for (j, c) in components.iter().enumerate() {
                    if r < c.weight {
                        pick = j;
                        break;
                    }
                    r -= c.weight;
                }
                let c = &components[pick];
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coords.push(c.mean[k] + c.std * z);
                }
            }
        }
        DensitySpec::Segment { a, b } => {
            for _ in 0..n {
                let t = rng.random::<f64>();
                coords.extend(crate::geom::lerp(a, b, t));
            }
        }
    }
    DiscreteMeasure::from_flat(d, coords, None)
}

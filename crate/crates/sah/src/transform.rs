//! Shifting-invariant asymmetric transformation and norm-descending
//! partitioning of items into bands.
//!
//! Each band is centered at its own centroid and lifted to the sphere of
//! radius R, so the inner product with a user reduces to an angular
//! distance on the lifted sphere.

use crate::error::{Error, Result};
use crate::vector::{dot, l2_norm_slice, DenseVector};

/// Relative slack allowed on the radicand before we treat the geometry as
/// corrupted.
const RADICAND_TOL: f64 = 1e-6;

/// Geometry of one norm band: max member norm, centroid, enclosing radius.
#[derive(Debug, Clone)]
pub struct PartitionGeometry {
    pub index: usize,
    pub max_norm: f64,
    pub centroid: Vec<f32>,
    pub radius: f64,
    pub member_ids: Vec<u32>,
}

/// Greedy norm-band split: a band opens at the current largest norm M and
/// absorbs items while their norm stays above b*M.
///
/// `items` must be sorted descending by norm, with `norms` aligned.
pub fn partition_by_norm(
    items: &[DenseVector],
    norms: &[f64],
    b: f64,
) -> Result<Vec<PartitionGeometry>> {
    if !(0.0 < b && b < 1.0) {
        return Err(Error::invalid("b", "interval ratio must lie in (0, 1)"));
    }
    if items.len() != norms.len() {
        return Err(Error::invalid("norms", "norm cache not aligned with items"));
    }
    if norms.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("items", "must be sorted descending by norm"));
    }
    if let Some(&last) = norms.last() {
        if last <= 0.0 {
            return Err(Error::invalid("items", "all norms must be positive"));
        }
    }

    let mut bands = Vec::new();
    let mut i = 0usize;
    let mut j = 0usize;
    while i < items.len() {
        j += 1;
        let max_norm = norms[i];
        let start = i;
        while i < items.len() && norms[i] > b * max_norm {
            i += 1;
        }
        bands.push(band_geometry(j, max_norm, &items[start..i]));
    }
    Ok(bands)
}

fn band_geometry(index: usize, max_norm: f64, members: &[DenseVector]) -> PartitionGeometry {
    let dim = members[0].dim();
    let mut acc = vec![0.0f64; dim];
    for p in members {
        for (a, x) in acc.iter_mut().zip(&p.coords) {
            *a += *x as f64;
        }
    }
    let centroid: Vec<f32> = acc.iter().map(|a| (*a / members.len() as f64) as f32).collect();
    let radius = members
        .iter()
        .map(|p| dist_to(&p.coords, &centroid))
        .fold(0.0f64, f64::max);
    PartitionGeometry {
        index,
        max_norm,
        centroid,
        radius,
        member_ids: members.iter().map(|p| p.id).collect(),
    }
}

fn dist_to(p: &[f32], c: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in p.iter().zip(c.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// Lift an item onto the sphere of radius R around the band centroid:
/// first d coordinates are p - c, the last is sqrt(R^2 - ||p-c||^2).
pub fn item_transform(p: &[f32], c: &[f32], r: f64) -> Result<Vec<f32>> {
    if p.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            got: p.len(),
        });
    }
    let dist = dist_to(p, c);
    if dist > r * (1.0 + RADICAND_TOL) {
        return Err(Error::Format(format!(
            "item lies outside its band sphere: ||p-c|| = {dist} > R = {r}"
        )));
    }
    let mut out: Vec<f32> = p.iter().zip(c.iter()).map(|(x, y)| x - y).collect();
    let radicand = (r * r - dist * dist).max(0.0);
    out.push(radicand.sqrt() as f32);
    Ok(out)
}

/// Scale a user onto the same sphere: lambda * u with a trailing zero,
/// lambda = R / ||u||.
pub fn user_transform(u: &[f32], r: f64) -> Result<Vec<f32>> {
    let n = l2_norm_slice(u);
    if n == 0.0 {
        return Err(Error::ZeroNorm(u32::MAX));
    }
    if r <= 0.0 {
        return Err(Error::invalid("R", "sphere radius must be positive"));
    }
    let lambda = r / n;
    let mut out: Vec<f32> = u.iter().map(|x| (*x as f64 * lambda) as f32).collect();
    out.push(0.0);
    Ok(out)
}

/// Cosine similarity of two slices, f64 accumulation.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b) / (l2_norm_slice(a) * l2_norm_slice(b))
}

//! Dense vector model, inner-product kernels, and brute-force oracles.
//!
//! Everything here is exact. The brute-force searches are the reference
//! implementations that the hashed index is measured against.

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};

/// A d-dimensional point with a stable integer id.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    pub id: u32,
    pub coords: Vec<f32>,
}

impl DenseVector {
    pub fn new(id: u32, coords: Vec<f32>) -> Self {
        Self { id, coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm_slice(&self.coords)
    }
}

/// Inner product of two raw slices, accumulated in f64.
///
/// Callers are responsible for equal lengths; this is the hot path.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

#[inline]
pub fn l2_norm_slice(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Checked inner product of two vectors.
pub fn inner_product(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.coords, &b.coords))
}

pub fn l2_norm(a: &DenseVector) -> f64 {
    a.norm()
}

/// Angle between two non-zero vectors, in [0, pi].
///
/// The cosine is clamped to [-1, 1] before arccos so that collinear inputs
/// with rounding noise do not produce NaN.
pub fn angle(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    angle_slices(a.id, &a.coords, b.id, &b.coords)
}

pub(crate) fn angle_slices(a_id: u32, a: &[f32], b_id: u32, b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = l2_norm_slice(a);
    let nb = l2_norm_slice(b);
    if na == 0.0 {
        return Err(Error::ZeroNorm(a_id));
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm(b_id));
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// An ordered collection of vectors sharing one dimension, with unique ids.
#[derive(Debug, Clone)]
pub struct VectorSet {
    dim: usize,
    vectors: Vec<DenseVector>,
    norms: Option<Vec<f64>>,
}

impl VectorSet {
    pub fn new(dim: usize, vectors: Vec<DenseVector>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        let mut seen = HashSet::with_capacity(vectors.len());
        for v in &vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            if v.coords.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("coords", format!("non-finite value in vector {}", v.id)));
            }
            if !seen.insert(v.id) {
                return Err(Error::invalid("id", format!("duplicate id {}", v.id)));
            }
        }
        Ok(Self {
            dim,
            vectors,
            norms: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DenseVector] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<DenseVector> {
        self.vectors
    }

    pub fn get(&self, i: usize) -> &DenseVector {
        &self.vectors[i]
    }

    /// Cached Euclidean norms, computed on first call.
    pub fn norms(&mut self) -> &[f64] {
        if self.norms.is_none() {
            self.norms = Some(self.vectors.iter().map(|v| v.norm()).collect());
        }
        self.norms.as_deref().unwrap()
    }

    pub fn norms_computed(&self) -> Vec<f64> {
        match &self.norms {
            Some(n) => n.clone(),
            None => self.vectors.iter().map(|v| v.norm()).collect(),
        }
    }
}

/// Answer set of one reverse top-k query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultSet {
    pub query_id: u32,
    pub user_ids: BTreeSet<u32>,
}

impl ResultSet {
    pub fn new(query_id: u32) -> Self {
        Self {
            query_id,
            user_ids: BTreeSet::new(),
        }
    }
}

/// Scale every user to unit norm, dropping zero-norm vectors.
///
/// Returns the normalized set and the number of dropped vectors.
pub fn normalize_users(users: &VectorSet) -> (VectorSet, usize) {
    let mut out = Vec::with_capacity(users.len());
    let mut dropped = 0usize;
    for v in users.vectors() {
        let n = v.norm();
        if n == 0.0 {
            dropped += 1;
            continue;
        }
        let coords = v.coords.iter().map(|x| (*x as f64 / n) as f32).collect();
        out.push(DenseVector::new(v.id, coords));
    }
    let set = VectorSet::new(users.dim(), out).expect("normalization preserves set invariants");
    (set, dropped)
}

/// Exact top-k inner products of `u` over `items`, descending by score,
/// ties broken by smaller item id.
pub fn brute_force_kmips(
    u: &DenseVector,
    items: &VectorSet,
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k > items.len() {
        return Err(Error::invalid(
            "k",
            format!("k = {} exceeds item count {}", k, items.len()),
        ));
    }
    if u.dim() != items.dim() {
        return Err(Error::DimensionMismatch {
            expected: items.dim(),
            got: u.dim(),
        });
    }
    let mut scored: Vec<(u32, f64)> = items
        .vectors()
        .iter()
        .map(|p| (p.id, dot(&p.coords, &u.coords)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Membership test behind Definition-style reverse top-k: `u` belongs to the
/// answer iff fewer than k items strictly beat `q` (ties favor q).
pub fn rkmips_member(u: &DenseVector, q: &DenseVector, items: &VectorSet, k: usize) -> Result<bool> {
    let uq = inner_product(u, q)?;
    let mut beaten = 0usize;
    for p in items.vectors() {
        if dot(&p.coords, &u.coords) > uq {
            beaten += 1;
            if beaten >= k {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exhaustive reverse top-k: every user for whom `q` enters the top-k over
/// `items` plus `q` itself.
pub fn brute_force_rkmips(
    q: &DenseVector,
    items: &VectorSet,
    users: &VectorSet,
    k: usize,
) -> Result<ResultSet> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if q.dim() != items.dim() || users.dim() != items.dim() {
        return Err(Error::DimensionMismatch {
            expected: items.dim(),
            got: q.dim(),
        });
    }
    let mut out = ResultSet::new(q.id);
    for u in users.vectors() {
        if rkmips_member(u, q, items, k)? {
            out.user_ids.insert(u.id);
        }
    }
    Ok(out)
}

//! SA-ALSH: hash index over norm-banded, shift-transformed items, with the
//! yes/no top-k decision query and a standalone top-k MIPS mode.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::srp::{build_tables, probe, probe_greedy, SignatureTableSet, SrpFunctionSet};
use crate::transform::{item_transform, partition_by_norm, PartitionGeometry};
use crate::vector::{dot, DenseVector, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaAlshConfig {
    /// Norm-band interval ratio, in (0, 1).
    pub b: f64,
    /// Number of hash tables K.
    pub tables: usize,
    /// Bits per table L.
    pub bits: usize,
    pub seed: u64,
    /// Hamming-ring expansion radius when probing.
    pub probe_radius: usize,
    /// Base verification candidate budget; k is added per query. Decision
    /// queries spend it per band, [`SaAlshIndex::kmips`] treats it as a
    /// total across the band sweep.
    pub budget: usize,
}

impl Default for SaAlshConfig {
    fn default() -> Self {
        Self {
            b: 0.5,
            tables: 128,
            bits: 8,
            seed: 1,
            probe_radius: 1,
            budget: 500,
        }
    }
}

impl SaAlshConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.b && self.b < 1.0) {
            return Err(Error::invalid("b", "must lie in (0, 1)"));
        }
        if self.tables == 0 || self.bits == 0 {
            return Err(Error::invalid("K/L", "table and bit counts must be >= 1"));
        }
        Ok(())
    }
}

/// One norm band: geometry plus the signature tables over its transformed
/// members. Bucket entries are positions into `geometry.member_ids`. Bands
/// with zero radius (or zero norms) skip hashing and are scanned exactly.
#[derive(Debug, Clone)]
pub struct Band {
    pub geometry: PartitionGeometry,
    pub tables: Option<SignatureTableSet>,
    /// Original member coordinates, flat and position-aligned with
    /// `geometry.member_ids`, so verification reads sequential memory.
    pub coords: Vec<f32>,
}

impl Band {
    #[inline]
    fn member_coords(&self, pos: usize, dim: usize) -> &[f32] {
        &self.coords[pos * dim..(pos + 1) * dim]
    }
}

#[derive(Debug, Clone)]
pub struct SaAlshIndex {
    dim: usize,
    config: SaAlshConfig,
    /// One hyperplane set shared by every hashed band: the user-side hash
    /// input is scale-invariant per band, so sharing lets a query hash once.
    hash_fn: Option<SrpFunctionSet>,
    bands: Vec<Band>,
    /// Original (unshifted) vectors for exact verification, keyed by id.
    items: HashMap<u32, Vec<f32>>,
}

impl SaAlshIndex {
    /// Sort items descending by norm, split into norm bands, and hash each
    /// band's shift-transformed members. Zero-norm items land in a trailing
    /// exact-scan band.
    pub fn build(items: &VectorSet, config: SaAlshConfig) -> Result<Self> {
        config.validate()?;
        let dim = items.dim();

        let mut positive: Vec<DenseVector> = Vec::new();
        let mut zero: Vec<DenseVector> = Vec::new();
        for v in items.vectors() {
            if v.norm() > 0.0 {
                positive.push(v.clone());
            } else {
                zero.push(v.clone());
            }
        }
        positive.sort_by(|a, b| {
            b.norm().partial_cmp(&a.norm()).unwrap().then(a.id.cmp(&b.id))
        });
        let norms: Vec<f64> = positive.iter().map(|p| p.norm()).collect();

        let mut payload = HashMap::with_capacity(items.len());
        for v in items.vectors() {
            payload.insert(v.id, v.coords.clone());
        }

        let mut hash_fn: Option<SrpFunctionSet> = None;
        let mut bands = Vec::new();
        for geometry in partition_by_norm(&positive, &norms, config.b)? {
            let tables = if geometry.radius > 0.0 {
                if hash_fn.is_none() {
                    hash_fn = Some(SrpFunctionSet::draw(
                        config.seed,
                        config.tables,
                        config.bits,
                        dim + 1,
                    )?);
                }
                let f = hash_fn.as_ref().expect("just drawn");
                let transformed: Vec<(u32, Vec<f32>)> = geometry
                    .member_ids
                    .iter()
                    .enumerate()
                    .map(|(pos, id)| {
                        let t = item_transform(&payload[id], &geometry.centroid, geometry.radius)?;
                        Ok((pos as u32, t))
                    })
                    .collect::<Result<_>>()?;
                let refs: Vec<(u32, &[f32])> =
                    transformed.iter().map(|(pos, t)| (*pos, t.as_slice())).collect();
                Some(build_tables(f, &refs)?)
            } else {
                None
            };
            let coords = flat_coords(&geometry.member_ids, &payload, dim);
            bands.push(Band {
                geometry,
                tables,
                coords,
            });
        }
        if !zero.is_empty() {
            let member_ids: Vec<u32> = zero.iter().map(|v| v.id).collect();
            let coords = flat_coords(&member_ids, &payload, dim);
            bands.push(Band {
                geometry: PartitionGeometry {
                    index: bands.len() + 1,
                    max_norm: 0.0,
                    centroid: vec![0.0; dim],
                    radius: 0.0,
                    member_ids,
                },
                tables: None,
                coords,
            });
        }

        Ok(Self {
            dim,
            config,
            hash_fn,
            bands,
            items: payload,
        })
    }

    pub fn hash_fn(&self) -> Option<&SrpFunctionSet> {
        self.hash_fn.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &SaAlshConfig {
        &self.config
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: u32) -> Option<&[f32]> {
        self.items.get(&id).map(|v| v.as_slice())
    }

    pub fn item_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.bands.iter().flat_map(|b| b.geometry.member_ids.iter().copied())
    }

    /// Reconstruct an index from deserialized parts. Callers must pass bands
    /// ordered descending by max norm.
    pub(crate) fn from_parts(
        dim: usize,
        config: SaAlshConfig,
        hash_fn: Option<SrpFunctionSet>,
        mut bands: Vec<Band>,
        items: HashMap<u32, Vec<f32>>,
    ) -> Self {
        for band in &mut bands {
            if band.coords.is_empty() {
                band.coords = flat_coords(&band.geometry.member_ids, &items, dim);
            }
        }
        Self {
            dim,
            config,
            hash_fn,
            bands,
            items,
        }
    }

    /// Decide whether `q` enters the (approximate) top-k of `u` over the
    /// indexed items plus `q` itself, ties favoring `q`.
    pub fn decide_topk(&self, u: &DenseVector, q: &DenseVector, k: usize) -> Result<bool> {
        if u.dim() != self.dim || q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: if u.dim() != self.dim { u.dim() } else { q.dim() },
            });
        }
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        let uq = dot(&u.coords, &q.coords);
        let sigs = self.user_signatures(&u.coords)?;
        self.decide_seeded(&u.coords, u.norm(), uq, k, &[], sigs.as_deref())
    }

    /// Same decision, but with exact scores over items held outside this
    /// index folded in up-front (the composite index seeds the top-norm
    /// prefix scores here).
    pub fn decide_topk_seeded(
        &self,
        u: &DenseVector,
        uq: f64,
        k: usize,
        seed_scores: &[f64],
    ) -> Result<bool> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        let sigs = self.user_signatures(&u.coords)?;
        self.decide_seeded(&u.coords, u.norm(), uq, k, seed_scores, sigs.as_deref())
    }

    /// Same decision with the user's probe signatures precomputed. They do
    /// not depend on `q`, so batch callers hash each user once up front
    /// (see [`Self::probe_signatures`]) instead of once per decision.
    pub fn decide_topk_presigned(
        &self,
        u: &[f32],
        u_norm: f64,
        uq: f64,
        k: usize,
        seed_scores: &[f64],
        sigs: Option<&[u32]>,
    ) -> Result<bool> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        self.decide_seeded(u, u_norm, uq, k, seed_scores, sigs)
    }

    /// The per-table probe signatures for a user vector, or None when every
    /// band is scanned exactly.
    pub fn probe_signatures(&self, u: &[f32]) -> Result<Option<Vec<u32>>> {
        self.user_signatures(u)
    }

    fn decide_seeded(
        &self,
        u: &[f32],
        u_norm: f64,
        uq: f64,
        k: usize,
        seed_scores: &[f64],
        sigs: Option<&[u32]>,
    ) -> Result<bool> {
        let mut beaters = seed_scores.iter().filter(|s| **s > uq).count();
        if beaters >= k {
            return Ok(false);
        }
        for band in &self.bands {
            // bands are sorted by descending norm cap, so once the cap's
            // Cauchy-Schwarz ceiling falls to uq no later item can beat q
            if band.geometry.max_norm * u_norm <= uq {
                break;
            }
            self.verify_band_ids(
                band,
                u,
                self.config.budget.saturating_add(k),
                sigs,
                true,
                |_, score| {
                    if score > uq {
                        beaters += 1;
                    }
                },
            )?;
            if beaters >= k {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Hash the user side once per query. The user transform only scales,
    /// which never flips a hyperplane sign, so one signature set serves
    /// every band.
    fn user_signatures(&self, u: &[f32]) -> Result<Option<Vec<u32>>> {
        match &self.hash_fn {
            None => Ok(None),
            Some(f) => {
                let mut padded = Vec::with_capacity(u.len() + 1);
                padded.extend_from_slice(u);
                padded.push(0.0);
                Ok(Some(f.signatures(&padded)?))
            }
        }
    }

    /// Feed the exact (id, score) of up to `budget` candidates in `band` to
    /// `sink`, returning how many were verified (exact-scan bands ignore the
    /// budget). `ranked` selects the evidence-ranked probe (better
    /// candidates, O(band) per call) over the greedy probe (near-constant
    /// cost per call).
    fn verify_band_ids<F: FnMut(u32, f64)>(
        &self,
        band: &Band,
        u: &[f32],
        budget: usize,
        sigs: Option<&[u32]>,
        ranked: bool,
        mut sink: F,
    ) -> Result<usize> {
        match &band.tables {
            None => {
                for (pos, id) in band.geometry.member_ids.iter().enumerate() {
                    sink(*id, dot(band.member_coords(pos, self.dim), u));
                }
                Ok(band.geometry.member_ids.len())
            }
            Some(tables) => {
                let sigs = sigs.ok_or_else(|| {
                    Error::Format("hashed band without hash functions".to_string())
                })?;
                let positions = if ranked {
                    probe(
                        tables,
                        sigs,
                        self.config.probe_radius,
                        budget,
                        band.geometry.member_ids.len(),
                    )?
                } else {
                    probe_greedy(tables, sigs, self.config.probe_radius, budget)?
                };
                let verified = positions.len();
                for pos in positions {
                    let id = band.geometry.member_ids[pos as usize];
                    sink(id, dot(band.member_coords(pos as usize, self.dim), u));
                }
                Ok(verified)
            }
        }
    }

    /// Standalone approximate top-k MIPS: the same band sweep and early stop
    /// as the decision query, run to completion of the stopping rule.
    pub fn kmips(&self, u: &DenseVector, k: usize) -> Result<Vec<(u32, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if u.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: u.dim(),
            });
        }
        let u_norm = u.norm();
        let sigs = self.user_signatures(&u.coords)?;
        let mut best = KthBest::new(k);
        let mut candidates: Vec<(u32, f64)> = Vec::new();
        // The budget is a total across the sweep, not per band: bands are
        // visited in descending norm order, so each band gets 3/4 of what is
        // left (top-k items concentrate in high-norm bands) while the
        // verified set stays well below a brute-force scan.
        let mut remaining = self.config.budget.saturating_add(k);
        for band in &self.bands {
            let mu = band.geometry.max_norm * u_norm;
            if let Some(phi) = best.kth() {
                if phi > mu {
                    break;
                }
            }
            if remaining == 0 && band.tables.is_some() {
                break;
            }
            let share = remaining
                .saturating_mul(3)
                .div_ceil(4)
                .max(k)
                .min(remaining);
            let verified =
                self.verify_band_ids(band, &u.coords, share, sigs.as_deref(), true, |id, s| {
                    best.insert(s);
                    candidates.push((id, s));
                })?;
            remaining = remaining.saturating_sub(verified);
        }
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        candidates.truncate(k);
        Ok(candidates)
    }
}

fn flat_coords(member_ids: &[u32], payload: &HashMap<u32, Vec<f32>>, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(member_ids.len() * dim);
    for id in member_ids {
        out.extend_from_slice(&payload[id]);
    }
    out
}

/// Running k-th largest value over a stream of scores.
#[derive(Debug, Clone)]
pub(crate) struct KthBest {
    k: usize,
    /// Ascending; vals[0] is the k-th best once full.
    vals: Vec<f64>,
}

impl KthBest {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            vals: Vec::with_capacity(k),
        }
    }

    pub fn insert(&mut self, v: f64) {
        if self.vals.len() < self.k {
            let pos = self.vals.partition_point(|x| *x < v);
            self.vals.insert(pos, v);
        } else if v > self.vals[0] {
            let pos = self.vals.partition_point(|x| *x < v);
            self.vals.remove(0);
            self.vals.insert(pos - 1, v);
        }
    }

    /// The k-th largest seen so far, or None while fewer than k scores.
    pub fn kth(&self) -> Option<f64> {
        if self.vals.len() == self.k {
            self.vals.first().copied()
        } else {
            None
        }
    }
}

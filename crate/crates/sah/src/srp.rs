//! Sign random projection hashing (SimHash) with multi-table signature
//! indexes and deterministic Hamming-ring multi-probe.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::vector::dot;

/// A reproducible set of K tables x L bits of random hyperplanes.
#[derive(Debug, Clone)]
pub struct SrpFunctionSet {
    seed: u64,
    tables: usize,
    bits: usize,
    dim: usize,
    /// K * L hyperplanes, each `dim` floats, row-major.
    projections: Vec<f32>,
}

impl SrpFunctionSet {
    /// Draw K*L standard-normal hyperplanes from `seed`. The same
    /// (seed, K, L, dim) regenerates bit-identical projections.
    pub fn draw(seed: u64, tables: usize, bits: usize, dim: usize) -> Result<Self> {
        if tables == 0 || bits == 0 || dim == 0 {
            return Err(Error::invalid("srp", "tables, bits, and dim must be >= 1"));
        }
        if bits > 32 {
            return Err(Error::invalid("bits", "at most 32 bits per table"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let projections = (0..tables * bits * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Self {
            seed,
            tables,
            bits,
            dim,
            projections,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projections(&self) -> &[f32] {
        &self.projections
    }

    #[inline]
    fn plane(&self, table: usize, bit: usize) -> &[f32] {
        let off = (table * self.bits + bit) * self.dim;
        &self.projections[off..off + self.dim]
    }

    /// One L-bit signature per table. Bit t of table j is set iff the
    /// projection of `v` onto hyperplane (j, t) is >= 0.
    pub fn signatures(&self, v: &[f32]) -> Result<Vec<u32>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut sigs = Vec::with_capacity(self.tables);
        for j in 0..self.tables {
            let mut sig = 0u32;
            for t in 0..self.bits {
                if dot(self.plane(j, t), v) >= 0.0 {
                    sig |= 1 << t;
                }
            }
            sigs.push(sig);
        }
        Ok(sigs)
    }
}

/// Empirical single-bit collision rate of random vector pairs at angle
/// `delta`, over `trials` freshly drawn hyperplanes.
pub fn estimate_collision_probability(f: &SrpFunctionSet, delta: f64, trials: usize) -> Result<f64> {
    if !(0.0..=std::f64::consts::PI).contains(&delta) {
        return Err(Error::invalid("delta", "angle must lie in [0, pi]"));
    }
    let dim = f.dim.max(2);
    let mut rng = ChaCha12Rng::seed_from_u64(f.seed ^ 0xc011_1de5);
    let normal = StandardNormal;
    let mut collisions = 0usize;
    for _ in 0..trials {
        // Unit vector a and a unit direction w orthogonal to it.
        let a = random_unit(dim, &mut rng);
        let mut w = random_unit(dim, &mut rng);
        let aw = dot_f64(&a, &w);
        for (wi, ai) in w.iter_mut().zip(a.iter()) {
            *wi -= aw * ai;
        }
        let wn = dot_f64(&w, &w).sqrt();
        if wn < 1e-12 {
            continue; // essentially collinear draw, retry not worth it
        }
        for wi in w.iter_mut() {
            *wi /= wn;
        }
        let b: Vec<f64> = a
            .iter()
            .zip(w.iter())
            .map(|(ai, wi)| delta.cos() * ai + delta.sin() * wi)
            .collect();
        let plane: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let sa = dot_f64(&plane, &a) >= 0.0;
        let sb = dot_f64(&plane, &b) >= 0.0;
        if sa == sb {
            collisions += 1;
        }
    }
    Ok(collisions as f64 / trials as f64)
}

fn random_unit(dim: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let normal = StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = dot_f64(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Signatures are already uniform hashes; feeding them through SipHash
/// would only slow down the (hot) bucket lookups.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignatureHasher(u64);

impl Hasher for SignatureHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, _bytes: &[u8]) {
        unreachable!("signature keys hash via write_u32");
    }

    fn write_u32(&mut self, i: u32) {
        self.0 = i as u64;
    }
}

/// Bucket map from an L-bit signature to member ids.
pub type SignatureMap = HashMap<u32, Vec<u32>, BuildHasherDefault<SignatureHasher>>;

/// K hash tables mapping an L-bit signature to its bucket of member ids.
#[derive(Debug, Clone)]
pub struct SignatureTableSet {
    bits: usize,
    tables: Vec<SignatureMap>,
}

impl SignatureTableSet {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn tables(&self) -> &[SignatureMap] {
        &self.tables
    }

    pub fn from_raw(bits: usize, tables: Vec<SignatureMap>) -> Self {
        Self { bits, tables }
    }
}

/// Insert every member into all K tables under its signature.
pub fn build_tables(f: &SrpFunctionSet, members: &[(u32, &[f32])]) -> Result<SignatureTableSet> {
    let mut tables: Vec<SignatureMap> = vec![SignatureMap::default(); f.tables()];
    for (id, coords) in members {
        let sigs = f.signatures(coords)?;
        for (table, sig) in tables.iter_mut().zip(sigs) {
            table.entry(sig).or_default().push(*id);
        }
    }
    Ok(SignatureTableSet {
        bits: f.bits(),
        tables,
    })
}

/// Deduplicated candidates from the query's buckets across all tables,
/// expanding each table's bucket set by Hamming ring up to `probe_radius`.
/// Ids must be dense in `0..universe`. Each hit contributes collision
/// evidence of `bits + 1 - ring distance` (an id lands in exactly one
/// bucket per table, so per table at most one ring matches it); the
/// `budget` best-evidenced ids are returned in ascending id order, ties
/// in evidence broken by ascending id. An unlimited budget therefore
/// returns every colliding id.
pub fn probe(
    tables: &SignatureTableSet,
    sigs: &[u32],
    probe_radius: usize,
    budget: usize,
    universe: usize,
) -> Result<Vec<u32>> {
    if sigs.len() != tables.tables.len() {
        return Err(Error::invalid(
            "sigs",
            format!(
                "{} signatures for {} tables",
                sigs.len(),
                tables.tables.len()
            ),
        ));
    }
    if budget == 0 || universe == 0 {
        return Ok(Vec::new());
    }
    let bits = tables.bits;
    let mut score = vec![0u32; universe];
    let mut distinct = 0usize;
    let radius = probe_radius.min(bits);
    for r in 0..=radius {
        let weight = (bits + 1 - r) as u32;
        let masks = masks_of_weight(r, bits);
        for (table, sig) in tables.tables.iter().zip(sigs) {
            for &mask in &masks {
                if let Some(bucket) = table.get(&(sig ^ mask)) {
                    for id in bucket {
                        let slot = &mut score[*id as usize];
                        if *slot == 0 {
                            distinct += 1;
                        }
                        *slot += weight;
                    }
                }
            }
        }
    }
    if distinct <= budget {
        return Ok((0..universe as u32).filter(|i| score[*i as usize] > 0).collect());
    }
    let mut ranked: Vec<(u32, u32)> = score
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 0)
        .map(|(i, s)| (i as u32, *s))
        .collect();
    let cmp = |a: &(u32, u32), b: &(u32, u32)| b.1.cmp(&a.1).then(a.0.cmp(&b.0));
    ranked.select_nth_unstable_by(budget - 1, cmp);
    ranked.truncate(budget);
    // ascending ids so callers touch member storage near-sequentially
    let mut ids: Vec<u32> = ranked.into_iter().map(|(id, _)| id).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Deduplicated candidates collected greedily in probe order (ring
/// distance ascending, then table order, then mask order) until `budget`
/// ids are found. Much cheaper than [`probe`] — no per-id evidence is
/// aggregated — at the cost of candidate quality under tight budgets.
/// An unlimited budget returns every colliding id.
pub fn probe_greedy(
    tables: &SignatureTableSet,
    sigs: &[u32],
    probe_radius: usize,
    budget: usize,
) -> Result<Vec<u32>> {
    if sigs.len() != tables.tables.len() {
        return Err(Error::invalid(
            "sigs",
            format!(
                "{} signatures for {} tables",
                sigs.len(),
                tables.tables.len()
            ),
        ));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let bits = tables.bits;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for r in 0..=probe_radius.min(bits) {
        let masks = masks_of_weight(r, bits);
        for (table, sig) in tables.tables.iter().zip(sigs) {
            for &mask in &masks {
                if let Some(bucket) = table.get(&(sig ^ mask)) {
                    for id in bucket {
                        if seen.insert(*id) {
                            out.push(*id);
                            if out.len() >= budget {
                                return Ok(out);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// All L-bit masks of popcount `weight`, ascending numeric order.
fn masks_of_weight(weight: usize, bits: usize) -> Vec<u32> {
    if weight == 0 {
        return vec![0];
    }
    if weight > bits {
        return vec![];
    }
    let limit = 1u64 << bits;
    let mut out = Vec::new();
    // Gosper's hack walks same-popcount masks in ascending order.
    let mut m = (1u64 << weight) - 1;
    while m < limit {
        out.push(m as u32);
        let c = m & m.wrapping_neg();
        let r = m + c;
        m = (((r ^ m) >> 2) / c) | r;
    }
    out
}

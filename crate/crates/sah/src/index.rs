//! The composite reverse top-k index: norm-sorted items, a top-norm prefix
//! with per-user and per-block lower-bound arrays, a hash index over the
//! residual items, and cone-tree user blocks. Includes the on-disk format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::cone::{self, ConeNode, NodeKind};
use crate::error::{Error, Result};
use crate::sa_alsh::{Band, SaAlshConfig, SaAlshIndex};
use crate::srp::{SignatureMap, SignatureTableSet, SrpFunctionSet};
use crate::transform::PartitionGeometry;
use crate::vector::{dot, normalize_users, DenseVector, ResultSet, VectorSet};

const MAGIC: &[u8; 4] = b"SAH1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SahConfig {
    pub k_max: usize,
    /// Cone-tree leaf size.
    pub n0: usize,
    pub b: f64,
    /// Hash tables K.
    pub tables: usize,
    /// Bits per table L.
    pub bits: usize,
    pub seed: u64,
    /// |P'| = prefix_factor * k_max items feed the lower-bound arrays.
    pub prefix_factor: usize,
    pub probe_radius: usize,
    pub budget: usize,
}

impl Default for SahConfig {
    fn default() -> Self {
        Self {
            k_max: 50,
            n0: 20,
            b: 0.5,
            tables: 128,
            bits: 8,
            seed: 1,
            prefix_factor: 10,
            probe_radius: 1,
            budget: 500,
        }
    }
}

impl SahConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::invalid("k_max", "must be at least 1"));
        }
        if self.n0 == 0 {
            return Err(Error::invalid("N0", "must be at least 1"));
        }
        if self.prefix_factor == 0 {
            return Err(Error::invalid("prefix_factor", "must be at least 1"));
        }
        self.sa_alsh().validate()
    }

    pub fn sa_alsh(&self) -> SaAlshConfig {
        SaAlshConfig {
            b: self.b,
            tables: self.tables,
            bits: self.bits,
            seed: self.seed,
            probe_radius: self.probe_radius,
            budget: self.budget,
        }
    }
}

/// One cone-tree leaf promoted to a query-time block.
#[derive(Debug, Clone)]
pub struct Block {
    pub center: Vec<f32>,
    pub omega: f64,
    /// Indexes into the index's user table.
    pub member_slots: Vec<usize>,
    pub thetas: Vec<f64>,
    /// Entry j-1 is the minimum over members of their (j-th best over P').
    pub lower_bounds: Vec<f64>,
}

#[derive(Debug)]
pub struct SahIndex {
    config: SahConfig,
    dim: usize,
    /// All item norms, descending.
    item_norms: Vec<f64>,
    /// Top-norm prefix P', descending by norm.
    prefix: Vec<DenseVector>,
    /// Unit user vectors.
    users: Vec<DenseVector>,
    /// Per-user descending top scores over P', length k_max.
    user_lb: Vec<Vec<f64>>,
    /// Per-user probe signatures into the residual index, precomputed once
    /// (they do not depend on the query). Empty when no band is hashed.
    user_sigs: Vec<Vec<u32>>,
    residual: SaAlshIndex,
    tree: ConeNode,
    blocks: Vec<Block>,
    dropped_users: usize,
}

impl SahIndex {
    pub fn build(items: &VectorSet, users: &VectorSet, config: SahConfig) -> Result<Self> {
        config.validate()?;
        let dim = items.dim();
        if users.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: users.dim(),
            });
        }
        if items.len() < config.k_max {
            return Err(Error::invalid(
                "k_max",
                format!("item count {} is below k_max {}", items.len(), config.k_max),
            ));
        }

        let (unit_users, dropped_users) = normalize_users(users);
        if unit_users.is_empty() {
            return Err(Error::invalid("users", "no users with positive norm"));
        }

        let mut sorted: Vec<DenseVector> = items.vectors().to_vec();
        sorted.sort_by(|a, b| {
            b.norm().partial_cmp(&a.norm()).unwrap().then(a.id.cmp(&b.id))
        });
        let item_norms: Vec<f64> = sorted.iter().map(|p| p.norm()).collect();

        let prefix_len = (config.prefix_factor * config.k_max).min(sorted.len());
        let prefix: Vec<DenseVector> = sorted[..prefix_len].to_vec();
        let residual_items = VectorSet::new(dim, sorted[prefix_len..].to_vec())?;

        let user_lb: Vec<Vec<f64>> = unit_users
            .vectors()
            .iter()
            .map(|u| prefix_lower_bounds(u, &prefix, config.k_max))
            .collect();

        let residual = SaAlshIndex::build(&residual_items, config.sa_alsh())?;
        let tree = cone::build(&unit_users, config.n0, config.seed ^ 0x636f_6e65)?;

        let users_vec: Vec<DenseVector> = unit_users.vectors().to_vec();
        let slot_of: HashMap<u32, usize> =
            users_vec.iter().enumerate().map(|(i, u)| (u.id, i)).collect();
        let blocks = extract_blocks(&tree, &slot_of, &user_lb, config.k_max);
        let user_sigs = compute_user_sigs(&residual, &users_vec)?;

        Ok(Self {
            config,
            dim,
            item_norms,
            prefix,
            users: users_vec,
            user_lb,
            user_sigs,
            residual,
            tree,
            blocks,
            dropped_users,
        })
    }

    pub fn config(&self) -> &SahConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_count(&self) -> usize {
        self.item_norms.len()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn dropped_users(&self) -> usize {
        self.dropped_users
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn residual(&self) -> &SaAlshIndex {
        &self.residual
    }

    pub fn tree(&self) -> &ConeNode {
        &self.tree
    }

    pub fn user_lower_bounds(&self, slot: usize) -> &[f64] {
        &self.user_lb[slot]
    }

    pub fn users(&self) -> &[DenseVector] {
        &self.users
    }

    /// Reverse top-k query with the hashed decision procedure.
    pub fn query(&self, q: &DenseVector, k: usize) -> Result<ResultSet> {
        self.query_inner(q, k, DecisionMode::Hashed)
    }

    /// Same filtering cascade, but the final per-user decision is an exact
    /// scan over all items. Isolates the filters from hashing error.
    pub fn query_with_exact_oracle(&self, q: &DenseVector, k: usize) -> Result<ResultSet> {
        self.query_inner(q, k, DecisionMode::Exact)
    }

    fn query_inner(&self, q: &DenseVector, k: usize, mode: DecisionMode) -> Result<ResultSet> {
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.dim(),
            });
        }
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if k > self.config.k_max {
            return Err(Error::invalid(
                "k",
                format!("k = {} exceeds k_max = {}", k, self.config.k_max),
            ));
        }
        let q_norm = q.norm();
        let kth_norm = self.item_norms[k - 1];
        let mut out = ResultSet::new(q.id);

        for block in &self.blocks {
            let phi = if q_norm > 0.0 {
                crate::vector::angle_slices(q.id, &q.coords, u32::MAX, &block.center)?
            } else {
                0.0
            };
            let node_bound = if q_norm > 0.0 {
                q_norm * (phi - block.omega).max(0.0).cos()
            } else {
                0.0
            };
            let block_lb = lb_at(&block.lower_bounds, k);
            if node_bound < block_lb {
                continue;
            }
            for (slot, theta) in block.member_slots.iter().zip(&block.thetas) {
                let user_lb = lb_at(&self.user_lb[*slot], k);
                let vector_bound = if q_norm > 0.0 {
                    q_norm * (phi - theta).abs().cos()
                } else {
                    0.0
                };
                if vector_bound < user_lb {
                    continue;
                }
                let user = &self.users[*slot];
                let uq = dot(&user.coords, &q.coords);
                if uq < user_lb {
                    continue;
                }
                let accepted = if uq >= kth_norm {
                    true
                } else {
                    match mode {
                        DecisionMode::Hashed => self.residual.decide_topk_presigned(
                            &user.coords,
                            user.norm(),
                            uq,
                            k,
                            &self.user_lb[*slot],
                            self.user_sigs.get(*slot).map(|s| s.as_slice()),
                        )?,
                        DecisionMode::Exact => self.exact_decide(user, uq, k),
                    }
                };
                if accepted {
                    out.user_ids.insert(user.id);
                }
            }
        }
        Ok(out)
    }

    /// Count-based exact decision over the full item payload.
    fn exact_decide(&self, user: &DenseVector, uq: f64, k: usize) -> bool {
        let mut beaten = 0usize;
        for p in &self.prefix {
            if dot(&p.coords, &user.coords) > uq {
                beaten += 1;
                if beaten >= k {
                    return false;
                }
            }
        }
        for id in self.residual.item_ids() {
            let coords = self.residual.item(id).expect("indexed id");
            if dot(coords, &user.coords) > uq {
                beaten += 1;
                if beaten >= k {
                    return false;
                }
            }
        }
        true
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.item_norms.len() as u64)?;
        w.write_u64::<LittleEndian>(self.users.len() as u64)?;
        let c = &self.config;
        w.write_f64::<LittleEndian>(c.b)?;
        w.write_u32::<LittleEndian>(c.tables as u32)?;
        w.write_u32::<LittleEndian>(c.bits as u32)?;
        w.write_u32::<LittleEndian>(c.n0 as u32)?;
        w.write_u32::<LittleEndian>(c.k_max as u32)?;
        w.write_u64::<LittleEndian>(c.seed)?;
        w.write_u32::<LittleEndian>(c.prefix_factor as u32)?;
        w.write_u32::<LittleEndian>(c.probe_radius as u32)?;
        w.write_u64::<LittleEndian>(c.budget as u64)?;

        write_section(&mut w, &self.encode_items()?)?;
        write_section(&mut w, &self.encode_users()?)?;
        write_section(&mut w, &self.encode_lower_bounds()?)?;
        write_section(&mut w, &self.encode_partitions()?)?;
        write_section(&mut w, &self.encode_tree()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02x?}, expected {:02x?}",
                magic, MAGIC
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let m = r.read_u64::<LittleEndian>()? as usize;
        let config = SahConfig {
            b: r.read_f64::<LittleEndian>()?,
            tables: r.read_u32::<LittleEndian>()? as usize,
            bits: r.read_u32::<LittleEndian>()? as usize,
            n0: r.read_u32::<LittleEndian>()? as usize,
            k_max: r.read_u32::<LittleEndian>()? as usize,
            seed: r.read_u64::<LittleEndian>()?,
            prefix_factor: r.read_u32::<LittleEndian>()? as usize,
            probe_radius: r.read_u32::<LittleEndian>()? as usize,
            budget: r.read_u64::<LittleEndian>()? as usize,
        };
        config.validate()?;

        let items = read_section(&mut r)?;
        let users = read_section(&mut r)?;
        let lbs = read_section(&mut r)?;
        let partitions = read_section(&mut r)?;
        let tree_bytes = read_section(&mut r)?;

        let (item_norms, prefix, residual_items) = decode_items(&items, dim, n)?;
        let users_vec = decode_users(&users, dim, m)?;
        let user_lb = decode_lower_bounds(&lbs, m)?;
        let bands = decode_partitions(&partitions, dim, &config)?;
        let hash_fn = if bands.iter().any(|b| b.tables.is_some()) {
            Some(SrpFunctionSet::draw(
                config.seed,
                config.tables,
                config.bits,
                dim + 1,
            )?)
        } else {
            None
        };
        let residual =
            SaAlshIndex::from_parts(dim, config.sa_alsh(), hash_fn, bands, residual_items);
        let (tree, blocks) = decode_tree(&tree_bytes, dim, &users_vec)?;
        let user_sigs = compute_user_sigs(&residual, &users_vec)?;

        Ok(Self {
            config,
            dim,
            item_norms,
            prefix,
            users: users_vec,
            user_lb,
            user_sigs,
            residual,
            tree,
            blocks,
            dropped_users: 0,
        })
    }

    fn encode_items(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        for norm in &self.item_norms {
            b.write_f64::<LittleEndian>(*norm)?;
        }
        b.write_u64::<LittleEndian>(self.prefix.len() as u64)?;
        for p in &self.prefix {
            write_vector(&mut b, p)?;
        }
        let mut residual_ids: Vec<u32> = self.residual.item_ids().collect();
        residual_ids.sort_unstable();
        b.write_u64::<LittleEndian>(residual_ids.len() as u64)?;
        for id in residual_ids {
            b.write_u32::<LittleEndian>(id)?;
            for x in self.residual.item(id).expect("indexed id") {
                b.write_f32::<LittleEndian>(*x)?;
            }
        }
        Ok(b)
    }

    fn encode_users(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        for u in &self.users {
            write_vector(&mut b, u)?;
        }
        Ok(b)
    }

    fn encode_lower_bounds(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        for lb in &self.user_lb {
            b.write_u32::<LittleEndian>(lb.len() as u32)?;
            for v in lb {
                b.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(b)
    }

    fn encode_partitions(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.write_u64::<LittleEndian>(self.residual.bands().len() as u64)?;
        for band in self.residual.bands() {
            let g = &band.geometry;
            b.write_u8(band.tables.is_some() as u8)?;
            b.write_u64::<LittleEndian>(g.index as u64)?;
            b.write_f64::<LittleEndian>(g.max_norm)?;
            b.write_f64::<LittleEndian>(g.radius)?;
            for x in &g.centroid {
                b.write_f32::<LittleEndian>(*x)?;
            }
            b.write_u64::<LittleEndian>(g.member_ids.len() as u64)?;
            for id in &g.member_ids {
                b.write_u32::<LittleEndian>(*id)?;
            }
            if let Some(tables) = &band.tables {
                for table in tables.tables() {
                    let mut sigs: Vec<u32> = table.keys().copied().collect();
                    sigs.sort_unstable();
                    b.write_u64::<LittleEndian>(sigs.len() as u64)?;
                    for sig in sigs {
                        let bucket = &table[&sig];
                        b.write_u32::<LittleEndian>(sig)?;
                        b.write_u64::<LittleEndian>(bucket.len() as u64)?;
                        for id in bucket {
                            b.write_u32::<LittleEndian>(*id)?;
                        }
                    }
                }
            }
        }
        Ok(b)
    }

    fn encode_tree(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        let mut leaf_idx = 0usize;
        encode_node(&mut b, &self.tree, &self.blocks, &mut leaf_idx)?;
        Ok(b)
    }
}

/// Hash every user against the residual index's probe functions, or return
/// an empty table when no band is hashed.
fn compute_user_sigs(residual: &SaAlshIndex, users: &[DenseVector]) -> Result<Vec<Vec<u32>>> {
    if residual.hash_fn().is_none() {
        return Ok(Vec::new());
    }
    users
        .iter()
        .map(|u| {
            Ok(residual
                .probe_signatures(&u.coords)?
                .expect("hashed residual always yields signatures"))
        })
        .collect()
}

enum DecisionMode {
    Hashed,
    Exact,
}

/// k-th entry of a descending lower-bound array, -inf when absent.
#[inline]
fn lb_at(lb: &[f64], k: usize) -> f64 {
    lb.get(k - 1).copied().unwrap_or(f64::NEG_INFINITY)
}

/// Descending top-`k_max` exact scores of `u` over the prefix.
fn prefix_lower_bounds(u: &DenseVector, prefix: &[DenseVector], k_max: usize) -> Vec<f64> {
    let mut scores: Vec<f64> = prefix.iter().map(|p| dot(&p.coords, &u.coords)).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.truncate(k_max);
    scores
}

fn extract_blocks(
    tree: &ConeNode,
    slot_of: &HashMap<u32, usize>,
    user_lb: &[Vec<f64>],
    k_max: usize,
) -> Vec<Block> {
    tree.leaves()
        .into_iter()
        .map(|leaf| {
            let NodeKind::Leaf { thetas } = &leaf.kind else {
                unreachable!("leaves() returns leaves")
            };
            let member_slots: Vec<usize> =
                leaf.member_ids.iter().map(|id| slot_of[id]).collect();
            let depth = member_slots
                .iter()
                .map(|s| user_lb[*s].len())
                .min()
                .unwrap_or(0)
                .min(k_max);
            let lower_bounds: Vec<f64> = (0..depth)
                .map(|j| {
                    member_slots
                        .iter()
                        .map(|s| user_lb[*s][j])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            Block {
                center: leaf.center.clone(),
                omega: leaf.omega,
                member_slots,
                thetas: thetas.clone(),
                lower_bounds,
            }
        })
        .collect()
}

fn write_vector(b: &mut Vec<u8>, v: &DenseVector) -> Result<()> {
    b.write_u32::<LittleEndian>(v.id)?;
    for x in &v.coords {
        b.write_f32::<LittleEndian>(*x)?;
    }
    Ok(())
}

fn write_section<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_u64::<LittleEndian>(bytes.len() as u64)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| {
        Error::Format(format!("truncated section (wanted {len} bytes): {e}"))
    })?;
    Ok(buf)
}

fn read_vector(r: &mut &[u8], dim: usize) -> Result<DenseVector> {
    let id = r.read_u32::<LittleEndian>()?;
    let mut coords = Vec::with_capacity(dim);
    for _ in 0..dim {
        coords.push(r.read_f32::<LittleEndian>()?);
    }
    Ok(DenseVector::new(id, coords))
}

type DecodedItems = (Vec<f64>, Vec<DenseVector>, HashMap<u32, Vec<f32>>);

fn decode_items(bytes: &[u8], dim: usize, n: usize) -> Result<DecodedItems> {
    let mut r = bytes;
    let mut norms = Vec::with_capacity(n);
    for _ in 0..n {
        norms.push(r.read_f64::<LittleEndian>()?);
    }
    let prefix_len = r.read_u64::<LittleEndian>()? as usize;
    let mut prefix = Vec::with_capacity(prefix_len);
    for _ in 0..prefix_len {
        prefix.push(read_vector(&mut r, dim)?);
    }
    let residual_len = r.read_u64::<LittleEndian>()? as usize;
    if prefix_len + residual_len != n {
        return Err(Error::Format(format!(
            "item sections hold {} vectors, header says {n}",
            prefix_len + residual_len
        )));
    }
    let mut residual = HashMap::with_capacity(residual_len);
    for _ in 0..residual_len {
        let v = read_vector(&mut r, dim)?;
        residual.insert(v.id, v.coords);
    }
    Ok((norms, prefix, residual))
}

fn decode_users(bytes: &[u8], dim: usize, m: usize) -> Result<Vec<DenseVector>> {
    let mut r = bytes;
    let mut users = Vec::with_capacity(m);
    for _ in 0..m {
        users.push(read_vector(&mut r, dim)?);
    }
    Ok(users)
}

fn decode_lower_bounds(bytes: &[u8], m: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = bytes;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut lb = Vec::with_capacity(len);
        for _ in 0..len {
            lb.push(r.read_f64::<LittleEndian>()?);
        }
        out.push(lb);
    }
    Ok(out)
}

fn decode_partitions(bytes: &[u8], dim: usize, config: &SahConfig) -> Result<Vec<Band>> {
    let mut r = bytes;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut bands = Vec::with_capacity(count);
    for _ in 0..count {
        let hashed = r.read_u8()? != 0;
        let index = r.read_u64::<LittleEndian>()? as usize;
        let max_norm = r.read_f64::<LittleEndian>()?;
        let radius = r.read_f64::<LittleEndian>()?;
        let mut centroid = Vec::with_capacity(dim);
        for _ in 0..dim {
            centroid.push(r.read_f32::<LittleEndian>()?);
        }
        let member_count = r.read_u64::<LittleEndian>()? as usize;
        let mut member_ids = Vec::with_capacity(member_count);
        for _ in 0..member_count {
            member_ids.push(r.read_u32::<LittleEndian>()?);
        }
        let tables = if hashed {
            let mut tables = Vec::with_capacity(config.tables);
            for _ in 0..config.tables {
                let bucket_count = r.read_u64::<LittleEndian>()? as usize;
                let mut table = SignatureMap::default();
                table.reserve(bucket_count);
                for _ in 0..bucket_count {
                    let sig = r.read_u32::<LittleEndian>()?;
                    let len = r.read_u64::<LittleEndian>()? as usize;
                    let mut bucket = Vec::with_capacity(len);
                    for _ in 0..len {
                        bucket.push(r.read_u32::<LittleEndian>()?);
                    }
                    table.insert(sig, bucket);
                }
                tables.push(table);
            }
            Some(SignatureTableSet::from_raw(config.bits, tables))
        } else {
            None
        };
        bands.push(Band {
            geometry: PartitionGeometry {
                index,
                max_norm,
                centroid,
                radius,
                member_ids,
            },
            tables,
            // filled in by SaAlshIndex::from_parts once the item payload
            // is available
            coords: Vec::new(),
        });
    }
    Ok(bands)
}

fn encode_node(
    b: &mut Vec<u8>,
    node: &ConeNode,
    blocks: &[Block],
    leaf_idx: &mut usize,
) -> Result<()> {
    b.write_u8(node.is_leaf() as u8)?;
    b.write_u64::<LittleEndian>(node.member_ids.len() as u64)?;
    for id in &node.member_ids {
        b.write_u32::<LittleEndian>(*id)?;
    }
    for x in &node.center {
        b.write_f32::<LittleEndian>(*x)?;
    }
    b.write_f64::<LittleEndian>(node.omega)?;
    match &node.kind {
        NodeKind::Leaf { thetas } => {
            for t in thetas {
                b.write_f64::<LittleEndian>(*t)?;
            }
            let lb = &blocks[*leaf_idx].lower_bounds;
            *leaf_idx += 1;
            b.write_u32::<LittleEndian>(lb.len() as u32)?;
            for v in lb {
                b.write_f64::<LittleEndian>(*v)?;
            }
        }
        NodeKind::Internal { left, right } => {
            encode_node(b, left, blocks, leaf_idx)?;
            encode_node(b, right, blocks, leaf_idx)?;
        }
    }
    Ok(())
}

fn decode_tree(bytes: &[u8], dim: usize, users: &[DenseVector]) -> Result<(ConeNode, Vec<Block>)> {
    let slot_of: HashMap<u32, usize> =
        users.iter().enumerate().map(|(i, u)| (u.id, i)).collect();
    let mut r = bytes;
    let mut blocks = Vec::new();
    let tree = decode_node(&mut r, dim, &slot_of, &mut blocks)?;
    Ok((tree, blocks))
}

fn decode_node(
    r: &mut &[u8],
    dim: usize,
    slot_of: &HashMap<u32, usize>,
    blocks: &mut Vec<Block>,
) -> Result<ConeNode> {
    let is_leaf = r.read_u8()? != 0;
    let member_count = r.read_u64::<LittleEndian>()? as usize;
    let mut member_ids = Vec::with_capacity(member_count);
    for _ in 0..member_count {
        member_ids.push(r.read_u32::<LittleEndian>()?);
    }
    let mut center = Vec::with_capacity(dim);
    for _ in 0..dim {
        center.push(r.read_f32::<LittleEndian>()?);
    }
    let omega = r.read_f64::<LittleEndian>()?;
    if is_leaf {
        let mut thetas = Vec::with_capacity(member_count);
        for _ in 0..member_count {
            thetas.push(r.read_f64::<LittleEndian>()?);
        }
        let lb_len = r.read_u32::<LittleEndian>()? as usize;
        let mut lower_bounds = Vec::with_capacity(lb_len);
        for _ in 0..lb_len {
            lower_bounds.push(r.read_f64::<LittleEndian>()?);
        }
        let member_slots: Vec<usize> = member_ids
            .iter()
            .map(|id| {
                slot_of.get(id).copied().ok_or_else(|| {
                    Error::Format(format!("cone leaf references unknown user id {id}"))
                })
            })
            .collect::<Result<_>>()?;
        blocks.push(Block {
            center: center.clone(),
            omega,
            member_slots,
            thetas: thetas.clone(),
            lower_bounds,
        });
        Ok(ConeNode {
            member_ids,
            center,
            omega,
            kind: NodeKind::Leaf { thetas },
        })
    } else {
        let left = decode_node(r, dim, slot_of, blocks)?;
        let right = decode_node(r, dim, slot_of, blocks)?;
        Ok(ConeNode {
            member_ids,
            center,
            omega,
            kind: NodeKind::Internal {
                left: Box::new(left),
                right: Box::new(right),
            },
        })
    }
}

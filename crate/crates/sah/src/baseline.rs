//! Exact reverse top-k reference: the same user-side pruning structures as
//! the hashed index, but with a norm-ordered early-stopping scan as the
//! per-user decision. Ground truth for accuracy measurement.

use std::collections::HashMap;

use crate::cone::{self, ConeNode, NodeKind};
use crate::error::{Error, Result};
use crate::vector::{dot, normalize_users, DenseVector, ResultSet, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactConfig {
    pub k_max: usize,
    pub n0: usize,
    pub seed: u64,
    pub prefix_factor: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            k_max: 50,
            n0: 20,
            seed: 1,
            prefix_factor: 10,
        }
    }
}

impl ExactConfig {
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
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ExactBlock {
    center: Vec<f32>,
    omega: f64,
    member_slots: Vec<usize>,
    thetas: Vec<f64>,
    lower_bounds: Vec<f64>,
}

/// Exact index. `scan_counter` style instrumentation is exposed through the
/// return of [`ExactIndex::decide`].
#[derive(Debug)]
pub struct ExactIndex {
    config: ExactConfig,
    dim: usize,
    /// Items sorted by descending norm.
    items: Vec<DenseVector>,
    users: Vec<DenseVector>,
    user_lb: Vec<Vec<f64>>,
    blocks: Vec<ExactBlock>,
    dropped_users: usize,
}

/// Outcome of one early-stopping decision scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub accepted: bool,
    /// Items examined before the scan stopped.
    pub scanned: usize,
}

impl ExactIndex {
    pub fn build(items: &VectorSet, users: &VectorSet, config: ExactConfig) -> Result<Self> {
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

        let prefix_len = (config.prefix_factor * config.k_max).min(sorted.len());
        let user_lb: Vec<Vec<f64>> = unit_users
            .vectors()
            .iter()
            .map(|u| {
                let mut scores: Vec<f64> = sorted[..prefix_len]
                    .iter()
                    .map(|p| dot(&p.coords, &u.coords))
                    .collect();
                scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
                scores.truncate(config.k_max);
                scores
            })
            .collect();

        let tree = cone::build(&unit_users, config.n0, config.seed ^ 0x636f_6e65)?;
        let users_vec: Vec<DenseVector> = unit_users.vectors().to_vec();
        let slot_of: HashMap<u32, usize> =
            users_vec.iter().enumerate().map(|(i, u)| (u.id, i)).collect();
        let blocks = extract_blocks(&tree, &slot_of, &user_lb, config.k_max);

        Ok(Self {
            config,
            dim,
            items: sorted,
            users: users_vec,
            user_lb,
            blocks,
            dropped_users,
        })
    }

    pub fn config(&self) -> &ExactConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn dropped_users(&self) -> usize {
        self.dropped_users
    }

    pub fn users(&self) -> &[DenseVector] {
        &self.users
    }

    /// Exact membership decision via a descending-norm scan that stops as
    /// soon as k strict beaters are found or the norm cap drops below `uq`.
    pub fn decide(&self, user: &DenseVector, uq: f64, k: usize) -> Decision {
        let mut beaten = 0usize;
        let mut scanned = 0usize;
        for p in &self.items {
            // every remaining score is at most ||p|| for unit users
            if p.norm() <= uq {
                break;
            }
            scanned += 1;
            if dot(&p.coords, &user.coords) > uq {
                beaten += 1;
                if beaten >= k {
                    return Decision {
                        accepted: false,
                        scanned,
                    };
                }
            }
        }
        Decision {
            accepted: true,
            scanned,
        }
    }

    /// Exact reverse top-k answer, using the same filter cascade as the
    /// hashed index ahead of the decision scan.
    pub fn query(&self, q: &DenseVector, k: usize) -> Result<ResultSet> {
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
        let kth_norm = self.items[k - 1].norm();
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
            if node_bound < lb_at(&block.lower_bounds, k) {
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
                if uq >= kth_norm || self.decide(user, uq, k).accepted {
                    out.user_ids.insert(user.id);
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn lb_at(lb: &[f64], k: usize) -> f64 {
    lb.get(k - 1).copied().unwrap_or(f64::NEG_INFINITY)
}

fn extract_blocks(
    tree: &ConeNode,
    slot_of: &HashMap<u32, usize>,
    user_lb: &[Vec<f64>],
    k_max: usize,
) -> Vec<ExactBlock> {
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
            ExactBlock {
                center: leaf.center.clone(),
                omega: leaf.omega,
                member_slots,
                thetas: thetas.clone(),
                lower_bounds,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::{brute_force_rkmips, rkmips_member};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_set(seed: u64, count: usize, dim: usize, scale: f32) -> VectorSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        VectorSet::new(
            dim,
            (0..count)
                .map(|i| {
                    let s = 1.0 + (scale - 1.0) * rng.random::<f32>();
                    DenseVector::new(
                        i as u32,
                        (0..dim).map(|_| (rng.random::<f32>() - 0.5) * s).collect(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn query_matches_brute_force() {
        let items = random_set(1, 300, 8, 4.0);
        let users = random_set(2, 120, 8, 1.0);
        let cfg = ExactConfig {
            k_max: 10,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        let unit_users = VectorSet::new(8, idx.users().to_vec()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..25 {
            let q = items.get(rng.random_range(0..items.len()));
            for k in [1usize, 5, 10] {
                let got = idx.query(q, k).unwrap();
                let want = brute_force_rkmips(q, &items, &unit_users, k).unwrap();
                assert_eq!(got.user_ids, want.user_ids, "k = {k}");
            }
        }
    }

    #[test]
    fn decision_matches_membership_oracle() {
        let items = random_set(4, 200, 6, 4.0);
        let users = random_set(5, 50, 6, 1.0);
        let cfg = ExactConfig {
            k_max: 10,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..200 {
            let u = &idx.users()[rng.random_range(0..idx.user_count())];
            let q = items.get(rng.random_range(0..items.len()));
            let uq = dot(&u.coords, &q.coords);
            for k in [1usize, 3, 10] {
                let want = rkmips_member(u, q, &items, k).unwrap();
                assert_eq!(idx.decide(u, uq, k).accepted, want);
            }
        }
    }

    #[test]
    fn scan_count_bounded_by_norm_cap() {
        // a scan never outlives the norm cap, and raising uq only tightens it
        let items = random_set(7, 200, 6, 4.0);
        let users = random_set(8, 20, 6, 1.0);
        let cfg = ExactConfig {
            k_max: 5,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        for u in idx.users() {
            let mut prev_cap = usize::MAX;
            for uq in [-2.0, -0.5, 0.0, 0.5, 2.0] {
                let cap = idx.items.iter().filter(|p| p.norm() > uq).count();
                assert!(cap <= prev_cap);
                prev_cap = cap;
                let d = idx.decide(u, uq, 5);
                assert!(d.scanned <= cap);
            }
        }
    }

    #[test]
    fn scan_stops_at_norm_cap() {
        let items = random_set(9, 100, 4, 4.0);
        let users = random_set(10, 10, 4, 1.0);
        let cfg = ExactConfig {
            k_max: 5,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        let top = idx.items[0].norm();
        let d = idx.decide(&idx.users()[0], top + 1.0, 5);
        assert!(d.accepted);
        assert_eq!(d.scanned, 0);
    }

    #[test]
    fn duplicate_scores_respect_tie_rule() {
        // three items with identical score 1.0 for u; q scores 1.0 as well,
        // so q only enters top-k once k exceeds the strict beater count (0).
        let items = VectorSet::new(
            2,
            vec![
                DenseVector::new(0, vec![1.0, 0.0]),
                DenseVector::new(1, vec![1.0, 0.0]),
                DenseVector::new(2, vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let users = VectorSet::new(2, vec![DenseVector::new(0, vec![1.0, 0.0])]).unwrap();
        let cfg = ExactConfig {
            k_max: 3,
            n0: 2,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        let q = DenseVector::new(7, vec![1.0, 0.0]);
        for k in 1..=3 {
            assert!(idx.query(&q, k).unwrap().user_ids.contains(&0), "k = {k}");
        }
    }

    #[test]
    fn zero_norm_users_are_dropped() {
        let items = random_set(11, 50, 3, 3.0);
        let users = VectorSet::new(
            3,
            vec![
                DenseVector::new(0, vec![0.0, 0.0, 0.0]),
                DenseVector::new(1, vec![1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let cfg = ExactConfig {
            k_max: 5,
            ..ExactConfig::default()
        };
        let idx = ExactIndex::build(&items, &users, cfg).unwrap();
        assert_eq!(idx.user_count(), 1);
        assert_eq!(idx.dropped_users(), 1);
    }
}

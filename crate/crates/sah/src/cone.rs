//! Cone-Tree blocking over unit user vectors, with the node-level and
//! vector-level inner-product upper bounds used to prune users in a batch.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::vector::{angle_slices, dot, l2_norm_slice, DenseVector, VectorSet};

/// A node of the binary cone tree. The center is the unnormalized mean of
/// the members; omega is the largest angle between a member and the center.
#[derive(Debug, Clone)]
pub struct ConeNode {
    pub member_ids: Vec<u32>,
    pub center: Vec<f32>,
    pub omega: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Internal {
        left: Box<ConeNode>,
        right: Box<ConeNode>,
    },
    Leaf {
        /// Per-member angle to the node center, aligned with `member_ids`.
        thetas: Vec<f64>,
    },
}

impl ConeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Leaves in pre-order.
    pub fn leaves(&self) -> Vec<&ConeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match &node.kind {
                NodeKind::Leaf { .. } => out.push(node),
                NodeKind::Internal { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }
}

/// Build a cone tree over unit vectors. Splits pick a random member, take
/// the member farthest from it and the member farthest from that one as
/// pivots, and assign each member to the closer pivot. Recursion stops at
/// leaves of at most `n0` members.
pub fn build(users: &VectorSet, n0: usize, seed: u64) -> Result<ConeNode> {
    if users.is_empty() {
        return Err(Error::invalid("users", "cannot build a cone tree over an empty set"));
    }
    if n0 == 0 {
        return Err(Error::invalid("N0", "leaf size must be at least 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let members: Vec<&DenseVector> = users.vectors().iter().collect();
    Ok(build_node(&members, n0, &mut rng))
}

fn build_node(members: &[&DenseVector], n0: usize, rng: &mut ChaCha12Rng) -> ConeNode {
    let (center, angles) = cone_geometry(members);
    let omega = angles.iter().copied().fold(0.0f64, f64::max);
    let member_ids: Vec<u32> = members.iter().map(|u| u.id).collect();

    if members.len() <= n0 {
        return ConeNode {
            member_ids,
            center,
            omega,
            kind: NodeKind::Leaf { thetas: angles },
        };
    }

    let pivot_seed = members[rng.random_range(0..members.len())];
    let left_pivot = members
        .iter()
        .min_by(|a, b| {
            dot(&a.coords, &pivot_seed.coords)
                .partial_cmp(&dot(&b.coords, &pivot_seed.coords))
                .unwrap()
        })
        .unwrap();
    let right_pivot = members
        .iter()
        .min_by(|a, b| {
            dot(&a.coords, &left_pivot.coords)
                .partial_cmp(&dot(&b.coords, &left_pivot.coords))
                .unwrap()
        })
        .unwrap();

    let mut left: Vec<&DenseVector> = Vec::new();
    let mut right: Vec<&DenseVector> = Vec::new();
    for u in members {
        // unit vectors: larger inner product means smaller angle
        if dot(&u.coords, &left_pivot.coords) >= dot(&u.coords, &right_pivot.coords) {
            left.push(u);
        } else {
            right.push(u);
        }
    }
    if left.is_empty() || right.is_empty() {
        // All members coincide (or the pivots do); split by id order so the
        // recursion always terminates.
        let mut sorted: Vec<&DenseVector> = members.to_vec();
        sorted.sort_by_key(|u| u.id);
        let mid = sorted.len() / 2;
        right = sorted.split_off(mid);
        left = sorted;
    }

    ConeNode {
        member_ids,
        center,
        omega,
        kind: NodeKind::Internal {
            left: Box::new(build_node(&left, n0, rng)),
            right: Box::new(build_node(&right, n0, rng)),
        },
    }
}

/// Mean center and per-member angles. A near-zero mean (antipodal members)
/// falls back to the first member as the reference direction; the bounds in
/// this module only need a common non-zero reference.
fn cone_geometry(members: &[&DenseVector]) -> (Vec<f32>, Vec<f64>) {
    let dim = members[0].dim();
    let mut acc = vec![0.0f64; dim];
    for u in members {
        for (a, x) in acc.iter_mut().zip(&u.coords) {
            *a += *x as f64;
        }
    }
    let mut center: Vec<f32> = acc.iter().map(|a| (*a / members.len() as f64) as f32).collect();
    if l2_norm_slice(&center) < 1e-9 {
        center = members[0].coords.clone();
    }
    let angles = members
        .iter()
        .map(|u| angle_slices(u.id, &u.coords, u32::MAX, &center).expect("non-zero center"))
        .collect();
    (center, angles)
}

/// Lemma-style block bound: no member of the node can have an inner product
/// with q above ||q|| * cos(max(phi - omega, 0)), phi the angle of q to the
/// node center.
pub fn node_upper_bound(node: &ConeNode, q: &DenseVector) -> Result<f64> {
    let q_norm = l2_norm_slice(&q.coords);
    if q_norm == 0.0 {
        return Err(Error::ZeroNorm(q.id));
    }
    let phi = angle_slices(q.id, &q.coords, u32::MAX, &node.center)?;
    Ok(q_norm * (phi - node.omega).max(0.0).cos())
}

/// Per-member bound inside a leaf: ||q|| * cos(|phi - theta_u|).
pub fn vector_upper_bound(theta_u: f64, phi: f64, q_norm: f64) -> f64 {
    q_norm * (phi - theta_u).abs().cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::normalize_users;
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    fn unit_set(seed: u64, count: usize, dim: usize) -> VectorSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let raw = VectorSet::new(
            dim,
            (0..count)
                .map(|i| {
                    DenseVector::new(
                        i as u32,
                        (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
                    )
                })
                .collect(),
        )
        .unwrap();
        normalize_users(&raw).0
    }

    #[test]
    fn small_set_is_a_single_leaf() {
        let users = unit_set(1, 5, 4);
        let root = build(&users, 10, 0).unwrap();
        assert!(root.is_leaf());
        assert_eq!(root.len(), 5);
    }

    #[test]
    fn antipodal_pair_splits_into_singletons() {
        let users = VectorSet::new(
            2,
            vec![
                DenseVector::new(0, vec![1.0, 0.0]),
                DenseVector::new(1, vec![-1.0, 0.0]),
            ],
        )
        .unwrap();
        let root = build(&users, 1, 0).unwrap();
        let leaves = root.leaves();
        assert_eq!(leaves.len(), 2);
        assert!(leaves.iter().all(|l| l.len() == 1));
    }

    #[test]
    fn duplicate_members_terminate_via_fallback_split() {
        let users = VectorSet::new(
            2,
            (0..8).map(|i| DenseVector::new(i, vec![1.0, 0.0])).collect(),
        )
        .unwrap();
        let root = build(&users, 2, 3).unwrap();
        let leaves = root.leaves();
        assert!(leaves.iter().all(|l| l.len() <= 2));
        let total: usize = leaves.iter().map(|l| l.len()).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn structural_audit_random_tree() {
        let users = unit_set(2, 1000, 8);
        let root = build(&users, 20, 9).unwrap();
        let leaves = root.leaves();
        let mut seen = BTreeSet::new();
        for leaf in &leaves {
            assert!(leaf.len() <= 20);
            for id in &leaf.member_ids {
                assert!(seen.insert(*id), "leaf members overlap");
            }
            // leaf thetas match recomputed angles; omega attained
            let mut max_theta = 0.0f64;
            if let NodeKind::Leaf { thetas } = &leaf.kind {
                for (id, theta) in leaf.member_ids.iter().zip(thetas) {
                    let u = users.vectors().iter().find(|u| u.id == *id).unwrap();
                    let recomputed =
                        angle_slices(u.id, &u.coords, u32::MAX, &leaf.center).unwrap();
                    assert!((theta - recomputed).abs() < 1e-6);
                    max_theta = max_theta.max(*theta);
                }
            }
            assert!((leaf.omega - max_theta).abs() < 1e-6);
        }
        assert_eq!(seen.len(), users.len());
    }

    #[test]
    fn node_bound_hand_cases() {
        // phi <= omega -> ||q||
        let node = ConeNode {
            member_ids: vec![0],
            center: vec![1.0, 0.0],
            omega: PI / 2.0,
            kind: NodeKind::Leaf { thetas: vec![0.0] },
        };
        let q = DenseVector::new(9, vec![0.0, 2.0]); // phi = pi/2 = omega
        assert!((node_upper_bound(&node, &q).unwrap() - 2.0).abs() < 1e-9);

        // phi = pi/3, omega = pi/6, ||q|| = 2 -> 2 cos(pi/6) = sqrt(3)
        let node = ConeNode {
            member_ids: vec![0],
            center: vec![1.0, 0.0],
            omega: PI / 6.0,
            kind: NodeKind::Leaf { thetas: vec![0.0] },
        };
        let q = DenseVector::new(9, vec![(PI / 3.0).cos() as f32 * 2.0, (PI / 3.0).sin() as f32 * 2.0]);
        assert!((node_upper_bound(&node, &q).unwrap() - 3.0f64.sqrt()).abs() < 1e-6);

        assert!(node_upper_bound(&node, &DenseVector::new(9, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn singleton_leaf_bound_is_exact_inner_product() {
        let users = unit_set(5, 1, 6);
        let root = build(&users, 1, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..50 {
            let q = DenseVector::new(
                u32::MAX,
                (0..6).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
            );
            if q.norm() == 0.0 {
                continue;
            }
            let bound = node_upper_bound(&root, &q).unwrap();
            let exact = dot(&users.get(0).coords, &q.coords);
            assert!((bound - exact).abs() < 1e-6 * q.norm().max(1.0));
        }
    }

    #[test]
    fn vector_bound_hand_cases() {
        assert!((vector_upper_bound(0.3, 0.3, 5.0) - 5.0).abs() < 1e-12);
        assert!(vector_upper_bound(0.0, PI / 2.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_sound_on_random_instances() {
        let users = unit_set(8, 400, 6);
        let root = build(&users, 10, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let by_id = |id: u32| users.vectors().iter().find(|u| u.id == id).unwrap();
        for _ in 0..200 {
            let q = DenseVector::new(
                u32::MAX,
                (0..6).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect(),
            );
            let q_norm = q.norm();
            if q_norm == 0.0 {
                continue;
            }
            for leaf in root.leaves() {
                let node_bound = node_upper_bound(leaf, &q).unwrap();
                let phi = angle_slices(q.id, &q.coords, u32::MAX, &leaf.center).unwrap();
                let NodeKind::Leaf { thetas } = &leaf.kind else { unreachable!() };
                for (id, theta) in leaf.member_ids.iter().zip(thetas) {
                    let ip = dot(&by_id(*id).coords, &q.coords);
                    let vb = vector_upper_bound(*theta, phi, q_norm);
                    assert!(ip <= node_bound + 1e-9, "node bound violated");
                    assert!(ip <= vb + 1e-9, "vector bound violated");
                    assert!(vb <= q_norm + 1e-12, "vector bound looser than Cauchy-Schwarz");
                    // vector bound no looser than the node bound on its member
                    assert!(vb <= node_bound + 1e-9);
                }
            }
        }
    }
}

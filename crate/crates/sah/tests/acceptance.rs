//! End-to-end acceptance checks. Each test prints exactly one
//! `criterion N ... PASS/FAIL` line with the measured quantities.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use sah::baseline::{ExactConfig, ExactIndex};
use sah::bench::{exact_truth, f1, gen_synth, SynthConfig};
use sah::cone;
use sah::index::{SahConfig, SahIndex};
use sah::sa_alsh::{SaAlshConfig, SaAlshIndex};
use sah::srp::{estimate_collision_probability, SrpFunctionSet};
use sah::transform::{cosine, item_transform, user_transform};
use sah::vector::{
    angle, brute_force_kmips, brute_force_rkmips, dot, l2_norm_slice, normalize_users,
    DenseVector, VectorSet,
};

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {criterion} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    // write to the real stdout so the line shows up even when the harness
    // captures test output (capture only hooks the print macros)
    let mut out = std::io::stdout();
    let _ = out.write_all(format!("{line}\n").as_bytes());
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn random_instance(rng: &mut ChaCha12Rng, n: usize, m: usize, d: usize) -> (VectorSet, VectorSet) {
    let gen = |rng: &mut ChaCha12Rng, count: usize, scale: f32| {
        (0..count)
            .map(|i| {
                let s = 1.0 + (scale - 1.0) * rng.random::<f32>();
                DenseVector::new(
                    i as u32,
                    (0..d).map(|_| (rng.random::<f32>() - 0.5) * s).collect(),
                )
            })
            .collect()
    };
    let items = VectorSet::new(d, gen(rng, n, 4.0)).unwrap();
    let users = VectorSet::new(d, gen(rng, m, 1.0)).unwrap();
    (items, users)
}

fn criterion1_dataset() -> (VectorSet, VectorSet, VectorSet) {
    gen_synth(&SynthConfig {
        n: 10_000,
        m: 10_000,
        d: 50,
        clusters: 5,
        queries: 100,
        seed: 20_260_823,
        norm_spread: 4.0,
    })
    .unwrap()
}

#[test]
fn criterion_1_accuracy_on_clustered_10k() {
    let (items, users, queries) = criterion1_dataset();
    let index = SahIndex::build(&items, &users, SahConfig::default()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for k in [1usize, 5, 10] {
        let truth = exact_truth(&items, &users, &queries, k).unwrap();
        let mean: f64 = queries
            .vectors()
            .iter()
            .zip(&truth)
            .map(|(q, t)| f1(&index.query(q, k).unwrap(), t))
            .sum::<f64>()
            / queries.len() as f64;
        pass &= mean >= 0.90;
        details.push(format!("k={k} mean F1 {mean:.4}"));
    }
    report(1, "accuracy", pass, &details.join(", "));
}

#[test]
fn criterion_2_exact_baseline_equals_brute_force() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for _ in 0..20 {
        let n = rng.random_range(60..=1000);
        let m = rng.random_range(50..=1000);
        let d = rng.random_range(4..=32);
        let (items, users) = random_instance(&mut rng, n, m, d);
        let cfg = ExactConfig {
            k_max: 10,
            ..ExactConfig::default()
        };
        let index = ExactIndex::build(&items, &users, cfg).unwrap();
        for _ in 0..5 {
            let q = items.get(rng.random_range(0..n)).clone();
            for k in [1usize, 5, 10] {
                let got = index.query(&q, k).unwrap();
                let want = brute_force_rkmips(&q, &items, &users, k).unwrap();
                checks += 1;
                if got.user_ids != want.user_ids {
                    mismatches += 1;
                }
            }
        }
    }
    report(
        2,
        "exact baseline equivalence",
        mismatches == 0,
        &format!("{mismatches} mismatches over {checks} query/k checks"),
    );
}

#[test]
fn criterion_3_speedup_direction_at_100k() {
    let (items, users, queries) = gen_synth(&SynthConfig {
        n: 100_000,
        m: 100_000,
        d: 50,
        clusters: 5,
        queries: 5,
        seed: 3,
        norm_spread: 4.0,
    })
    .unwrap();
    let k = 10;
    let sah_index = SahIndex::build(&items, &users, SahConfig::default()).unwrap();
    let exact_index = ExactIndex::build(&items, &users, ExactConfig::default()).unwrap();

    let t = Instant::now();
    for q in queries.vectors() {
        let _ = sah_index.query(q, k).unwrap();
    }
    let sah_mean = t.elapsed().as_secs_f64() / queries.len() as f64;
    let t = Instant::now();
    for q in queries.vectors() {
        let _ = exact_index.query(q, k).unwrap();
    }
    let exact_mean = t.elapsed().as_secs_f64() / queries.len() as f64;
    report(
        3,
        "speedup direction",
        sah_mean < exact_mean,
        &format!(
            "mean query {:.3}s hashed vs {:.3}s exact, ratio {:.2}x",
            sah_mean,
            exact_mean,
            exact_mean / sah_mean
        ),
    );
}

#[test]
fn criterion_4_collision_law() {
    let f = SrpFunctionSet::draw(4, 1, 1, 32).unwrap();
    let mut worst = 0.0f64;
    for delta in [PI / 6.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
        let p = estimate_collision_probability(&f, delta, 100_000).unwrap();
        worst = worst.max((p - (1.0 - delta / PI)).abs());
    }
    report(
        4,
        "collision law",
        worst <= 0.01,
        &format!("max |empirical - theory| = {worst:.5}"),
    );
}

#[test]
fn criterion_5_transform_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(2..=32);
        let c: Vec<f32> = (0..d).map(|_| rng.random::<f32>() - 0.5).collect();
        let p: Vec<f32> = c
            .iter()
            .map(|ci| ci + (rng.random::<f32>() - 0.5) * 2.0)
            .collect();
        let u: Vec<f32> = (0..d).map(|_| rng.random::<f32>() - 0.5).collect();
        if l2_norm_slice(&u) == 0.0 {
            continue;
        }
        let shifted: Vec<f32> = p.iter().zip(&c).map(|(a, b)| a - b).collect();
        let r = l2_norm_slice(&shifted) * (1.0 + rng.random::<f64>());
        let lifted = item_transform(&p, &c, r).unwrap();
        let scaled = user_transform(&u, r).unwrap();
        let want = dot(&shifted, &u) / (r * l2_norm_slice(&u));
        worst = worst.max((cosine(&lifted, &scaled) - want).abs());
    }
    report(
        5,
        "transform identity",
        worst <= 1e-6,
        &format!("max |cos - <p-c,u>/(R|u|)| = {worst:.2e}"),
    );
}

#[test]
fn criterion_6_cone_bound_soundness() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let mut node_checks = 0usize;
    let mut vector_checks = 0usize;
    let mut violations = 0usize;
    while node_checks < 100_000 || vector_checks < 100_000 {
        let d = rng.random_range(2..=16);
        let m = rng.random_range(5..=120);
        let (_, users) = random_instance(&mut rng, 1, m, d);
        let (unit, _) = normalize_users(&users);
        if unit.is_empty() {
            continue;
        }
        let tree = cone::build(&unit, 8, rng.random()).unwrap();
        for _ in 0..20 {
            let q = DenseVector::new(
                u32::MAX,
                (0..d)
                    .map(|_| (rng.random::<f32>() - 0.5) * 4.0)
                    .collect(),
            );
            if q.norm() == 0.0 {
                continue;
            }
            let mut stack = vec![&tree];
            while let Some(node) = stack.pop() {
                let bound = cone::node_upper_bound(node, &q).unwrap();
                let true_max = node
                    .member_ids
                    .iter()
                    .map(|id| {
                        let u = &unit.vectors()[*id as usize];
                        dot(&u.coords, &q.coords)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                node_checks += 1;
                if bound < true_max - 1e-6 * (1.0 + q.norm()) {
                    violations += 1;
                }
                match &node.kind {
                    cone::NodeKind::Internal { left, right } => {
                        stack.push(left);
                        stack.push(right);
                    }
                    cone::NodeKind::Leaf { thetas } => {
                        let center = DenseVector::new(u32::MAX - 1, node.center.clone());
                        let phi = angle(&q, &center).unwrap();
                        for (id, theta) in node.member_ids.iter().zip(thetas) {
                            let u = &unit.vectors()[*id as usize];
                            let vb = cone::vector_upper_bound(*theta, phi, q.norm());
                            vector_checks += 1;
                            let tol = 1e-6 * (1.0 + q.norm());
                            if vb < dot(&u.coords, &q.coords) - tol || vb > q.norm() + tol {
                                violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    report(
        6,
        "cone bound soundness",
        violations == 0,
        &format!("{violations} violations over {node_checks} node and {vector_checks} vector checks"),
    );
}

#[test]
fn criterion_7_filter_cascade_exactness() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for _ in 0..20 {
        let n = rng.random_range(60..=1000);
        let m = rng.random_range(50..=1000);
        let d = rng.random_range(4..=32);
        let (items, users) = random_instance(&mut rng, n, m, d);
        let cfg = SahConfig {
            k_max: 10,
            ..SahConfig::default()
        };
        let index = SahIndex::build(&items, &users, cfg).unwrap();
        for _ in 0..5 {
            let q = items.get(rng.random_range(0..n)).clone();
            for k in [1usize, 5, 10] {
                let got = index.query_with_exact_oracle(&q, k).unwrap();
                let want = brute_force_rkmips(&q, &items, &users, k).unwrap();
                checks += 1;
                if got.user_ids != want.user_ids {
                    mismatches += 1;
                }
            }
        }
    }
    report(
        7,
        "filter cascade exactness",
        mismatches == 0,
        &format!("{mismatches} mismatches over {checks} query/k checks"),
    );
}

#[test]
fn criterion_8_hash_exhaustion_limit() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for _ in 0..10 {
        let n = rng.random_range(60..=500);
        let m = rng.random_range(50..=500);
        let d = rng.random_range(4..=16);
        let (items, users) = random_instance(&mut rng, n, m, d);
        let cfg = SahConfig {
            k_max: 10,
            tables: 4,
            probe_radius: SahConfig::default().bits,
            budget: usize::MAX - 64,
            ..SahConfig::default()
        };
        let index = SahIndex::build(&items, &users, cfg).unwrap();
        for _ in 0..5 {
            let q = items.get(rng.random_range(0..n)).clone();
            for k in [1usize, 5, 10] {
                let got = index.query(&q, k).unwrap();
                let want = brute_force_rkmips(&q, &items, &users, k).unwrap();
                checks += 1;
                if got.user_ids != want.user_ids {
                    mismatches += 1;
                }
            }
        }
    }
    report(
        8,
        "hash exhaustion limit",
        mismatches == 0,
        &format!("{mismatches} mismatches over {checks} query/k checks"),
    );
}

#[test]
fn criterion_9_index_round_trip() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let (items, users) = random_instance(&mut rng, 2000, 500, 16);
    let index = SahIndex::build(&items, &users, SahConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acceptance.sah");
    index.save(&path).unwrap();
    let loaded = SahIndex::load(&path).unwrap();

    let mut mismatches = 0usize;
    for _ in 0..100 {
        let q = items.get(rng.random_range(0..items.len())).clone();
        let k = *[1usize, 5, 10].choose(&mut rng).unwrap();
        if index.query(&q, k).unwrap().user_ids != loaded.query(&q, k).unwrap().user_ids {
            mismatches += 1;
        }
    }

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    let bad = dir.path().join("corrupt.sah");
    std::fs::write(&bad, &bytes).unwrap();
    let clean_failure = SahIndex::load(&bad).is_err();

    report(
        9,
        "index round trip",
        mismatches == 0 && clean_failure,
        &format!("{mismatches} query mismatches over 100, corrupted header rejected: {clean_failure}"),
    );
}

#[test]
fn criterion_10_standalone_kmips() {
    let (items, users, _) = criterion1_dataset();
    let cfg = SaAlshConfig {
        tables: 64,
        probe_radius: 2,
        budget: 3000,
        ..SaAlshConfig::default()
    };
    let index = SaAlshIndex::build(&items, cfg).unwrap();
    let (unit, _) = normalize_users(&users);
    let sample: Vec<&DenseVector> = unit.vectors().iter().take(100).collect();
    let k = 10;

    let t = Instant::now();
    let mut recall_sum = 0.0;
    let mut answers = Vec::with_capacity(sample.len());
    for u in &sample {
        answers.push(index.kmips(u, k).unwrap());
    }
    let hashed_mean = t.elapsed().as_secs_f64() / sample.len() as f64;

    let t = Instant::now();
    for (u, got) in sample.iter().zip(&answers) {
        let truth: Vec<u32> = brute_force_kmips(u, &items, k)
            .unwrap()
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let hits = got.iter().filter(|(id, _)| truth.contains(id)).count();
        recall_sum += hits as f64 / k as f64;
    }
    let brute_mean = t.elapsed().as_secs_f64() / sample.len() as f64;

    let recall = recall_sum / sample.len() as f64;
    report(
        10,
        "standalone kMIPS",
        recall >= 0.9 && hashed_mean < brute_mean,
        &format!(
            "mean recall {recall:.3}, mean query {:.2}ms hashed vs {:.2}ms brute",
            hashed_mean * 1e3,
            brute_mean * 1e3
        ),
    );
}

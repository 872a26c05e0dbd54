mod common;

use common::brute_force_eval;
use lfm::metrics::{evaluate, pairwise_distances, random_ranking_ap, DistanceKind, EvalOptions, Labels};
use lfm::RngStream;
use proptest::prelude::*;

fn random_instance(r: &mut RngStream) -> (Vec<f64>, Labels, Labels) {
    let nq = 1 + r.uniform_int(8);
    let ng = 1 + r.uniform_int(12);
    let ids = 1 + r.uniform_int(4);
    let query = Labels {
        ids: (0..nq).map(|_| r.uniform_int(ids) as u32).collect(),
        cams: (0..nq).map(|_| r.uniform_int(3) as u16).collect(),
    };
    let gallery = Labels {
        ids: (0..ng).map(|_| r.uniform_int(ids) as u32).collect(),
        cams: (0..ng).map(|_| r.uniform_int(3) as u16).collect(),
    };
    // coarse values so that ties occur
    let dist = (0..nq * ng).map(|_| r.uniform_int(6) as f64 * 0.5).collect();
    (dist, query, gallery)
}

#[test]
fn evaluate_matches_the_brute_force_oracle() {
    let mut r = RngStream::new(2024);
    for _ in 0..20 {
        let (dist, q, g) = random_instance(&mut r);
        for exclude in [true, false] {
            let opts = EvalOptions { ks: vec![1, 2, 3, 5, 10], exclude_same_camera: exclude };
            let report = evaluate(&dist, &q, &g, &opts, DistanceKind::Euclidean).unwrap();
            let (cmc, map, valid) = brute_force_eval(&dist, &q, &g, &opts.ks, exclude);
            assert_eq!(report.n_queries, valid);
            assert_eq!(report.skipped, q.ids.len() - valid);
            let got: Vec<f64> = report.cmc.iter().map(|(_, v)| *v).collect();
            assert_eq!(got, cmc);
            assert!((report.map - map).abs() <= 1e-12, "{} vs {map}", report.map);
        }
    }
}

#[test]
fn hand_case_ap_is_five_sixths() {
    let dist = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    let q = Labels { ids: vec![1], cams: vec![0] };
    let g = Labels { ids: vec![1, 2, 1, 3, 4], cams: vec![1; 5] };
    let report = evaluate(&dist, &q, &g, &EvalOptions::default(), DistanceKind::Euclidean).unwrap();
    assert!((report.map - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(report.rank1, 1.0);
}

#[test]
fn distances_match_a_scalar_loop() {
    let mut r = RngStream::new(5);
    let (nq, ng, d) = (5, 7, 6);
    let q: Vec<f64> = (0..nq * d).map(|_| r.uniform_real(-1.0, 1.0)).collect();
    let g: Vec<f64> = (0..ng * d).map(|_| r.uniform_real(-1.0, 1.0)).collect();
    let eu = pairwise_distances(&q, &g, d, DistanceKind::Euclidean).unwrap();
    let co = pairwise_distances(&q, &g, d, DistanceKind::Cosine).unwrap();
    for i in 0..nq {
        for j in 0..ng {
            let (mut ss, mut dot, mut na, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..d {
                let (a, b) = (q[i * d + k], g[j * d + k]);
                ss += (a - b) * (a - b);
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            assert!((eu[i * ng + j] - ss.sqrt()).abs() <= 1e-6);
            assert!((co[i * ng + j] - (1.0 - dot / (na.sqrt() * nb.sqrt()))).abs() <= 1e-6);
        }
    }
}

#[test]
fn zero_vector_under_cosine_is_numeric_error() {
    let r = pairwise_distances(&[0.0f64, 0.0], &[1.0, 0.0], 2, DistanceKind::Cosine);
    assert!(matches!(r, Err(lfm::Error::Numeric { .. })));
}

/// Expected AP by enumerating every placement of the relevant items.
fn enumerated_random_ap(n: usize, r: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != r {
            continue;
        }
        let mut found = 0;
        let mut ap = 0.0;
        for p in 0..n {
            if mask & (1 << p) != 0 {
                found += 1;
                ap += found as f64 / (p + 1) as f64;
            }
        }
        total += ap / r as f64;
        count += 1;
    }
    total / count as f64
}

#[test]
fn random_ranking_ap_matches_enumeration() {
    for n in 1..=12 {
        for r in 1..=n {
            let want = enumerated_random_ap(n, r);
            assert!((random_ranking_ap(n, r) - want).abs() < 1e-12, "n={n} r={r}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_survive_gallery_permutation_and_embedding_scaling(
        seed in any::<u64>(), nq in 1usize..6, ng in 2usize..15, scale in 0.01f64..100.0,
    ) {
        let mut r = RngStream::new(seed);
        let d = 4;
        let q: Vec<f64> = (0..nq * d).map(|_| r.uniform_real(-1.0, 1.0)).collect();
        let g: Vec<f64> = (0..ng * d).map(|_| r.uniform_real(-1.0, 1.0)).collect();
        let ql = Labels { ids: (0..nq).map(|_| r.uniform_int(3) as u32).collect(), cams: vec![0; nq] };
        let gl = Labels { ids: (0..ng).map(|_| r.uniform_int(3) as u32).collect(), cams: vec![1; ng] };
        let opts = EvalOptions::default();
        let base = evaluate(&pairwise_distances(&q, &g, d, DistanceKind::Euclidean).unwrap(), &ql, &gl, &opts, DistanceKind::Euclidean).unwrap();

        let qs: Vec<f64> = q.iter().map(|v| v * scale).collect();
        let gs: Vec<f64> = g.iter().map(|v| v * scale).collect();
        let scaled = evaluate(&pairwise_distances(&qs, &gs, d, DistanceKind::Euclidean).unwrap(), &ql, &gl, &opts, DistanceKind::Euclidean).unwrap();
        prop_assert_eq!(&scaled.cmc, &base.cmc);
        prop_assert!((scaled.map - base.map).abs() < 1e-12);

        let mut perm: Vec<usize> = (0..ng).collect();
        r.shuffle(&mut perm);
        let gp: Vec<f64> = perm.iter().flat_map(|&i| g[i * d..(i + 1) * d].to_vec()).collect();
        let glp = Labels { ids: perm.iter().map(|&i| gl.ids[i]).collect(), cams: perm.iter().map(|&i| gl.cams[i]).collect() };
        let permuted = evaluate(&pairwise_distances(&q, &gp, d, DistanceKind::Euclidean).unwrap(), &ql, &glp, &opts, DistanceKind::Euclidean).unwrap();
        prop_assert_eq!(&permuted.cmc, &base.cmc);
        prop_assert!((permuted.map - base.map).abs() < 1e-12);

        prop_assert!(base.rank1 <= base.rank5 && base.rank5 <= base.rank10);
        for v in [base.rank1, base.rank5, base.rank10, base.map] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if ng <= 10 && base.skipped == 0 {
            prop_assert_eq!(base.rank10, 1.0);
        }
    }
}

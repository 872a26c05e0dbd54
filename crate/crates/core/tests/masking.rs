mod common;

use common::{check_locality, rect_attempt_oracle, replay_rect, sentinel_block};
use lfm::masking::{
    channel_dropout_apply, cutout_apply, cutout_span, element_dropout_apply, lfm_apply, replay_decisions,
    sample_mask_rect, select_channels, FeatureBlock, LfmConfig,
};
use lfm::RngStream;
use proptest::prelude::*;

fn random_block(dims: (usize, usize, usize, usize), seed: u64) -> FeatureBlock<f32> {
    let mut r = RngStream::new(seed);
    let n = dims.0 * dims.1 * dims.2 * dims.3;
    FeatureBlock::new(dims, (0..n).map(|_| r.uniform_real(-3.0, 3.0) as f32).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_is_local_constant_and_in_bounds(
        b in 1usize..4, c in 1usize..6, h in 1usize..20, w in 1usize..20,
        p in 0.0f64..=1.0, n_frac in 0.0f64..=1.0, seed in any::<u64>(),
    ) {
        let cfg = LfmConfig {
            probability: p,
            num_masked_channels: ((c as f64) * n_frac).floor() as usize,
            ..LfmConfig::for_channels(c)
        };
        let input = sentinel_block(b, c, h, w);
        let (out, decisions) = lfm_apply(&input, &cfg, &RngStream::new(seed), true).unwrap();
        let changed = check_locality(&input, &out, &decisions, &cfg).map_err(TestCaseError::fail)?;
        for (d, n) in decisions.iter().zip(changed) {
            let placed = d.rects.iter().filter(|(_, r)| r.is_some()).count();
            prop_assert_eq!(n, placed);
            if !d.applied {
                prop_assert_eq!(n, 0);
            }
        }
    }

    #[test]
    fn identity_gates_are_bit_exact(
        dims in (1usize..3, 1usize..6, 1usize..12, 1usize..12), seed in any::<u64>(), p in 0.0f64..=1.0,
    ) {
        let input = random_block(dims, seed);
        let rng = RngStream::new(seed ^ 1);
        let mut cfg = LfmConfig::for_channels(dims.1);
        cfg.probability = 0.0;
        let (out, d) = lfm_apply(&input, &cfg, &rng, true).unwrap();
        prop_assert_eq!(&out, &input);
        prop_assert!(d.iter().all(|x| !x.applied));
        cfg.probability = p;
        cfg.num_masked_channels = 0;
        prop_assert_eq!(&lfm_apply(&input, &cfg, &rng, true).unwrap().0, &input);
        cfg.num_masked_channels = dims.1;
        let (out, d) = lfm_apply(&input, &cfg, &rng, false).unwrap();
        prop_assert_eq!(&out, &input);
        prop_assert_eq!(d.len(), dims.0);
        prop_assert!(d.iter().all(|x| !x.applied && x.gate_draw.is_none()));
    }

    #[test]
    fn replaying_decisions_reproduces_the_output(
        dims in (1usize..3, 1usize..6, 2usize..16, 2usize..16), seed in any::<u64>(),
    ) {
        let input = random_block(dims, seed);
        let cfg = LfmConfig { probability: 0.7, ..LfmConfig::for_channels(dims.1) };
        let (out, decisions) = lfm_apply(&input, &cfg, &RngStream::new(seed), true).unwrap();
        let mut replayed = input.clone();
        replay_decisions(&mut replayed, &decisions).unwrap();
        prop_assert_eq!(&replayed, &out);
        let (again, d2) = lfm_apply(&input, &cfg, &RngStream::new(seed), true).unwrap();
        prop_assert_eq!(&again, &out);
        prop_assert_eq!(d2, decisions);
    }

    #[test]
    fn selected_channels_are_distinct_and_in_range(c in 1usize..70, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let n = ((c as f64) * frac) as usize;
        let picked = select_channels(&mut RngStream::new(seed), c, n).unwrap();
        prop_assert_eq!(picked.len(), n);
        let mut s = picked.clone();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), n);
        prop_assert!(picked.iter().all(|&x| x < c));
    }

    #[test]
    fn cutout_span_clips_to_the_map(center in 0usize..64, side in 1usize..40, limit in 1usize..64) {
        let center = center % limit;
        let (lo, hi) = cutout_span(center, side, limit);
        prop_assert!(lo <= hi && hi <= limit);
        let half = side / 2;
        prop_assert_eq!(lo, center.saturating_sub(half));
        prop_assert_eq!(hi, (center + side - half).min(limit));
    }
}

#[test]
fn one_pixel_map_accepts_only_at_the_origin() {
    let cfg = LfmConfig::for_channels(4);
    let mut rng = RngStream::new(5);
    for _ in 0..200 {
        if let Some(r) = sample_mask_rect(&mut rng, 1, 1, &cfg) {
            assert_eq!((r.x0, r.y0, r.w_px, r.h_px), (0, 0, 1, 1));
        }
    }
}

#[test]
fn accepted_rects_on_square_maps_respect_the_area_range() {
    let cfg = LfmConfig::for_channels(4);
    let mut rng = RngStream::new(6);
    for _ in 0..20_000 {
        let r = sample_mask_rect(&mut rng, 64, 64, &cfg).expect("default geometry accepts");
        assert!((0.03..=0.4).contains(&r.area_fraction));
        assert!(r.x0 + r.w_px <= 64 && r.y0 + r.h_px <= 64);
    }
}

#[test]
fn sampler_matches_an_exact_replay_of_the_draw_sequence() {
    let cfg = LfmConfig::for_channels(16);
    let mut a = RngStream::new(77);
    let mut b = RngStream::new(77);
    for _ in 0..100_000 {
        let got = sample_mask_rect(&mut a, 32, 16, &cfg).map(|r| (r.x0, r.y0, r.w_px, r.h_px, r.area_fraction));
        let (_, want) = replay_rect(&mut b, 32, 16, &cfg);
        assert_eq!(got, want);
    }
}

#[test]
fn single_attempt_acceptance_matches_the_analytic_oracle() {
    let cfg = LfmConfig { max_attempts: 1, ..LfmConfig::for_channels(16) };
    let (p, mean_area) = rect_attempt_oracle(32, 16, &cfg, 1500);
    let n = 200_000;
    let mut rng = RngStream::new(3);
    let mut areas = Vec::new();
    for _ in 0..n {
        if let Some(r) = sample_mask_rect(&mut rng, 32, 16, &cfg) {
            areas.push(r.area_fraction);
        }
    }
    let rate = areas.len() as f64 / n as f64;
    assert!((rate - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "rate {rate} vs {p}");
    let m = areas.iter().sum::<f64>() / areas.len() as f64;
    let sd = (areas.iter().map(|a| (a - m).powi(2)).sum::<f64>() / areas.len() as f64).sqrt();
    assert!((m - mean_area).abs() <= 3.0 * sd / (areas.len() as f64).sqrt(), "mean {m} vs {mean_area}");
}

#[test]
fn full_selection_is_a_permutation_and_empty_selection_is_empty() {
    let mut rng = RngStream::new(1);
    let mut all = select_channels(&mut rng, 64, 64).unwrap();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
    assert!(select_channels(&mut rng, 64, 0).unwrap().is_empty());
    assert!(matches!(select_channels(&mut rng, 4, 5), Err(lfm::Error::InvalidConfig(_))));
}

#[test]
fn each_channel_is_selected_half_the_time() {
    let mut counts = [0usize; 8];
    let mut rng = RngStream::new(12);
    let trials = 100_000;
    for _ in 0..trials {
        for c in select_channels(&mut rng, 8, 4).unwrap() {
            counts[c] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / trials as f64;
        assert!((f - 0.5).abs() <= 0.005, "frequency {f}");
    }
}

#[test]
fn sentinel_block_gets_exactly_n_channels_masked() {
    let cfg = LfmConfig { probability: 1.0, num_masked_channels: 32, ..LfmConfig::for_channels(64) };
    let input = sentinel_block(3, 64, 16, 16);
    let (out, decisions) = lfm_apply(&input, &cfg, &RngStream::new(8), true).unwrap();
    let changed = check_locality(&input, &out, &decisions, &cfg).unwrap();
    assert_eq!(changed, vec![32; 3]);
    for s in 0..3 {
        let untouched = (0..64).filter(|&c| out.plane(s, c).iter().all(|v| *v == 2.0)).count();
        assert_eq!(untouched, 32);
    }
}

#[test]
fn retry_exhaustion_is_rare_at_default_geometry() {
    let cfg = LfmConfig::for_channels(16);
    let mut rng = RngStream::new(21);
    let n = 100_000;
    let missing = (0..n).filter(|_| sample_mask_rect(&mut rng, 32, 16, &cfg).is_none()).count();
    assert!(missing as f64 <= 0.001 * n as f64, "{missing} exhausted");
}

#[test]
fn gate_fires_with_the_configured_probability() {
    let cfg = LfmConfig { probability: 0.15, num_masked_channels: 1, ..LfmConfig::for_channels(1) };
    let input = FeatureBlock::<f32>::filled((10_000, 1, 4, 4), 0.0).unwrap();
    let (_, d) = lfm_apply(&input, &cfg, &RngStream::new(2), true).unwrap();
    let f = d.iter().filter(|x| x.applied).count() as f64 / 10_000.0;
    assert!((0.139..=0.161).contains(&f), "applied fraction {f}");
}

/// Chi-square statistic of a contingency table.
fn chi_square(table: &[Vec<f64>]) -> (f64, usize) {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, o) in r.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o - e).powi(2) / e;
        }
    }
    (stat, (table.len() - 1) * (table[0].len() - 1))
}

#[test]
fn channel_choice_is_independent_of_the_gate_draw() {
    // rows: gate draw in [0, p/2) vs [p/2, p); columns: first chosen channel
    let cfg = LfmConfig { probability: 0.5, num_masked_channels: 2, ..LfmConfig::for_channels(6) };
    let input = FeatureBlock::<f32>::filled((40_000, 6, 8, 8), 0.0).unwrap();
    let (_, decisions) = lfm_apply(&input, &cfg, &RngStream::new(31), true).unwrap();
    let mut table = vec![vec![0.0; 6]; 2];
    for d in decisions.iter().filter(|d| d.applied) {
        let row = usize::from(d.gate_draw.unwrap() >= 0.25);
        table[row][d.channels[0]] += 1.0;
    }
    let (stat, dof) = chi_square(&table);
    assert_eq!(dof, 5);
    assert!(stat < 20.52, "chi-square {stat}");
}

#[test]
fn rect_geometry_is_independent_of_the_chosen_channel() {
    // rows: chosen channel; columns: area fraction quartile
    let cfg = LfmConfig { probability: 1.0, num_masked_channels: 1, ..LfmConfig::for_channels(4) };
    let input = FeatureBlock::<f32>::filled((40_000, 4, 32, 16), 0.0).unwrap();
    let (_, decisions) = lfm_apply(&input, &cfg, &RngStream::new(32), true).unwrap();
    let edges = [0.1225, 0.215, 0.3075];
    let mut table = vec![vec![0.0; 4]; 4];
    for d in &decisions {
        if let (c, Some(r)) = &d.rects[0] {
            let bin = edges.iter().filter(|e| r.area_fraction >= **e).count();
            table[*c][bin] += 1.0;
        }
    }
    let (stat, dof) = chi_square(&table);
    assert_eq!(dof, 9);
    assert!(stat < 27.88, "chi-square {stat}");
}

#[test]
fn cutout_at_the_corner_masks_a_clipped_square() {
    assert_eq!(cutout_span(0, 8, 32), (0, 4));
    assert_eq!(cutout_span(31, 8, 32), (27, 32));
}

#[test]
fn cutout_is_identity_outside_training_and_rejects_huge_squares() {
    let x = random_block((2, 3, 64, 32), 1);
    assert_eq!(cutout_apply(&x, 8, 0.0, &RngStream::new(1), false).unwrap(), x);
    assert!(matches!(cutout_apply(&x, 65, 0.0, &RngStream::new(1), true), Err(lfm::Error::InvalidConfig(_))));
}

#[test]
fn cutout_masked_fraction_matches_the_center_enumeration() {
    let (h, w, side) = (64usize, 32usize, 8usize);
    let span = |limit: usize| -> Vec<f64> {
        (0..limit)
            .map(|c| {
                let (lo, hi) = cutout_span(c, side, limit);
                (hi - lo) as f64
            })
            .collect()
    };
    let rows = span(h);
    let cols = span(w);
    let fracs: Vec<f64> = rows.iter().flat_map(|r| cols.iter().map(move |c| r * c / (h * w) as f64)).collect();
    let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
    let sd = (fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / fracs.len() as f64).sqrt();

    let n = 10_000;
    let x = FeatureBlock::<f32>::filled((n, 1, h, w), 1.0).unwrap();
    let out = cutout_apply(&x, side, 0.0, &RngStream::new(4), true).unwrap();
    let masked = out.values().iter().filter(|v| **v == 0.0).count() as f64 / (n * h * w) as f64;
    assert!((masked - mean).abs() <= 3.0 * sd / (n as f64).sqrt(), "{masked} vs {mean}");
}

#[test]
fn cutout_masks_all_channels_alike() {
    let x = FeatureBlock::<f32>::filled((4, 3, 64, 32), 1.0).unwrap();
    let out = cutout_apply(&x, 10, 0.0, &RngStream::new(9), true).unwrap();
    for b in 0..4 {
        assert_eq!(out.plane(b, 0), out.plane(b, 1));
        assert_eq!(out.plane(b, 0), out.plane(b, 2));
    }
}

#[test]
fn channel_dropout_scaling_and_rate() {
    let x = FeatureBlock::<f32>::filled((100, 100, 2, 2), 1.0).unwrap();
    assert_eq!(channel_dropout_apply(&x, 0.0, &RngStream::new(1), true).unwrap(), x);
    assert_eq!(channel_dropout_apply(&x, 0.5, &RngStream::new(1), false).unwrap(), x);
    let out = channel_dropout_apply(&x, 0.5, &RngStream::new(1), true).unwrap();
    for b in 0..100 {
        for c in 0..100 {
            let p = out.plane(b, c);
            assert!(p.iter().all(|v| *v == 2.0) || p.iter().all(|v| *v == 0.0));
        }
    }
    let out = channel_dropout_apply(&x, 0.25, &RngStream::new(2), true).unwrap();
    let dropped = (0..100).flat_map(|b| (0..100).map(move |c| (b, c))).filter(|&(b, c)| out.plane(b, c)[0] == 0.0).count();
    let f = dropped as f64 / 10_000.0;
    assert!((f - 0.25).abs() <= 3.0 * (0.25f64 * 0.75 / 10_000.0).sqrt(), "{f}");
    assert!(channel_dropout_apply(&x, 1.0, &RngStream::new(1), true).is_err());
}

#[test]
fn element_dropout_is_unbiased() {
    let mut r = RngStream::new(3);
    let values: Vec<f64> = (0..100_000).map(|_| r.uniform_real(0.0, 2.0)).collect();
    assert_eq!(element_dropout_apply(&values, 0.0, &RngStream::new(1), true).unwrap(), values);
    assert_eq!(element_dropout_apply(&values, 0.3, &RngStream::new(1), false).unwrap(), values);
    let q = 0.3;
    let out = element_dropout_apply(&values, q, &RngStream::new(1), true).unwrap();
    let n = values.len() as f64;
    let mean_in = values.iter().sum::<f64>() / n;
    let mean_out = out.iter().sum::<f64>() / n;
    let second = values.iter().map(|v| v * v).sum::<f64>() / n;
    // per-element variance of the inverted estimator: E[x^2] q / (1 - q)
    let sd = (second * q / (1.0 - q) / n).sqrt();
    assert!((mean_out - mean_in).abs() <= 3.0 * sd, "{mean_out} vs {mean_in}");
    assert!(element_dropout_apply(&values, 1.0, &RngStream::new(1), true).is_err());
}

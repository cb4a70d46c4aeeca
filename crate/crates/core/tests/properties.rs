use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use samreg_core::embed::Prototype;
use samreg_core::fit::{fit_ddf, objective_terms, smoothness_loss, FitConfig, FitPair};
use samreg_core::grid::{dice, resample_area, warp, Dims, DisplacementField, GridImage, SoftMask};
use samreg_core::io::{GridFile, Payload};
use samreg_core::matching::{select_pairs, similarity_matrix, MatchConfig, MatchMode, SimilarityMatrix};
use samreg_core::synth::{generate_shifted_volume, score_pairing, Pairing, SynthSpec};
use samreg_core::volume::{register_volume, register_volume_recompute, VolumeMatchConfig};

fn dims_strategy() -> impl Strategy<Value = Dims> {
    prop_oneof![
        (2usize..12, 2usize..12).prop_map(|(a, b)| Dims::new(&[a, b]).unwrap()),
        (1usize..5, 2usize..8, 2usize..8).prop_map(|(a, b, c)| Dims::new(&[a, b, c]).unwrap()),
    ]
}

fn values(dims: &Dims, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dims.len()).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Soft blob: a few random voxels raised to high values, the rest low.
fn soft_mask(dims: &Dims, seed: u64) -> SoftMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len())
        .map(|_| if rng.random_bool(0.3) { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.1) })
        .collect();
    SoftMask::new(dims.clone(), data).unwrap()
}

fn sim_matrix(rows: usize, cols: usize, seed: u64) -> SimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a coarse value set produces ties
    let v = (0..rows * cols).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
    SimilarityMatrix::new(rows, cols, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_field_warp_is_identity(dims in dims_strategy(), seed in any::<u64>()) {
        let img = GridImage::new(dims.clone(), values(&dims, seed)).unwrap();
        let out = warp(&img, &DisplacementField::zeros(dims, "zero")).unwrap();
        prop_assert_eq!(out.data(), img.data());
    }

    #[test]
    fn constant_integer_shift_moves_content(seed in any::<u64>(), dr in -2i64..=2, dc in -2i64..=2) {
        let dims = Dims::new(&[9, 11]).unwrap();
        let src = values(&dims, seed);
        let img = GridImage::new(dims.clone(), src.clone()).unwrap();
        let field = DisplacementField::constant(dims.clone(), &[dr as f64, dc as f64], "shift").unwrap();
        let out = warp(&img, &field).unwrap();
        for r in 0..9i64 {
            for c in 0..11i64 {
                let (sr, sc) = (r + dr, c + dc);
                let expect = if (0..9).contains(&sr) && (0..11).contains(&sc) { src[(sr * 11 + sc) as usize] } else { 0.0 };
                prop_assert_eq!(out.data()[(r * 11 + c) as usize], expect);
            }
        }
    }

    #[test]
    fn area_resampling_preserves_mean(from in dims_strategy(), seed in any::<u64>(), t in prop::collection::vec(1usize..10, 3)) {
        let target: Vec<usize> = t[..from.ndim()].to_vec();
        let target = Dims::new(&target).unwrap();
        let v = values(&from, seed);
        let out = resample_area(&v, &from, &target).unwrap();
        prop_assert_eq!(out.len(), target.len());
        let mean_in = v.iter().sum::<f64>() / v.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-9);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(dims in dims_strategy(), a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (soft_mask(&dims, a), soft_mask(&dims, b));
        let d = dice(&x, &y).unwrap();
        prop_assert_eq!(d, dice(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn similarity_is_bounded_and_transposes(
        m in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
        f in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
    ) {
        prop_assume!(m.iter().chain(&f).all(|p| p.iter().any(|x| x.abs() > 1e-3)));
        let mp: Vec<Prototype> = m.into_iter().map(Prototype).collect();
        let fp: Vec<Prototype> = f.into_iter().map(Prototype).collect();
        let s = similarity_matrix(&mp, &fp).unwrap();
        let t = similarity_matrix(&fp, &mp).unwrap();
        for i in 0..mp.len() {
            for j in 0..fp.len() {
                prop_assert!((0.0..=1.0).contains(&s.get(i, j)));
                prop_assert!((s.get(i, j) - t.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_to_one_selection_is_injective_and_ordered(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>(), eps in 0.0f64..1.0) {
        let sim = sim_matrix(rows, cols, seed);
        let cfg = MatchConfig { epsilon: eps, ..Default::default() };
        let sel = select_pairs(&sim, &cfg);
        let mut rows_seen = vec![false; rows];
        let mut cols_seen = vec![false; cols];
        for s in &sel {
            prop_assert!(s.similarity > eps);
            prop_assert!(!rows_seen[s.moving] && !cols_seen[s.fixed]);
            rows_seen[s.moving] = true;
            cols_seen[s.fixed] = true;
        }
        for w in sel.windows(2) {
            prop_assert!(w[0].similarity > w[1].similarity
                || (w[0].similarity == w[1].similarity && (w[0].moving, w[0].fixed) < (w[1].moving, w[1].fixed)));
        }
        // maximality: no admissible entry is left with both row and column free
        for (i, &row_taken) in rows_seen.iter().enumerate() {
            for (j, &col_taken) in cols_seen.iter().enumerate() {
                prop_assert!(row_taken || col_taken || sim.get(i, j) <= eps);
            }
        }
    }

    #[test]
    fn one_to_many_takes_row_maxima(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>(), eps in 0.0f64..1.0) {
        let sim = sim_matrix(rows, cols, seed);
        let cfg = MatchConfig { epsilon: eps, mode: MatchMode::OneToMany, ..Default::default() };
        let sel = select_pairs(&sim, &cfg);
        let mut seen = vec![false; rows];
        for s in &sel {
            prop_assert!(!seen[s.moving]);
            seen[s.moving] = true;
            let best = (0..cols).map(|j| sim.get(s.moving, j)).fold(f64::MIN, f64::max);
            prop_assert_eq!(s.similarity, best);
        }
        for (i, &hit) in seen.iter().enumerate() {
            let best = (0..cols).map(|j| sim.get(i, j)).fold(f64::MIN, f64::max);
            prop_assert_eq!(hit, best > eps);
        }
    }

    #[test]
    fn quantity_limit_keeps_the_best_prefix(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>(), k in 1usize..6, many in any::<bool>()) {
        let sim = sim_matrix(rows, cols, seed);
        let mode = if many { MatchMode::OneToMany } else { MatchMode::OneToOne };
        let all = select_pairs(&sim, &MatchConfig { epsilon: 0.3, mode, quantity_limit: None });
        let some = select_pairs(&sim, &MatchConfig { epsilon: 0.3, mode, quantity_limit: Some(k) });
        prop_assert_eq!(some.len(), all.len().min(k));
        prop_assert_eq!(&some[..], &all[..some.len()]);
    }

    #[test]
    fn pair_count_shrinks_as_epsilon_grows(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0, many in any::<bool>()) {
        let sim = sim_matrix(rows, cols, seed);
        let mode = if many { MatchMode::OneToMany } else { MatchMode::OneToOne };
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let n_lo = select_pairs(&sim, &MatchConfig { epsilon: lo, mode, ..Default::default() }).len();
        let n_hi = select_pairs(&sim, &MatchConfig { epsilon: hi, mode, ..Default::default() }).len();
        prop_assert!(n_hi <= n_lo);
    }

    #[test]
    fn grid_file_round_trips(dims in dims_strategy(), channels in 1usize..4, seed in any::<u64>(), float in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = dims.len() * channels;
        let payload = if float {
            Payload::F32((0..count).map(|_| f32::from_bits(rng.random())).collect())
        } else {
            Payload::U8((0..count).map(|_| rng.random()).collect())
        };
        let spacing = (0..dims.ndim()).map(|_| rng.random_range(0.1f32..3.0)).collect();
        let g = GridFile::new(dims, channels, spacing, payload).unwrap();
        let bytes = g.encode();
        let back = GridFile::decode(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.encode(), bytes.clone());
        // any truncation is rejected
        let cut = rng.random_range(0..bytes.len());
        prop_assert!(GridFile::decode(&bytes[..cut], std::path::Path::new("mem")).is_err());
    }

    #[test]
    fn pairing_score_is_a_fraction(n in 1usize..8, picks in prop::collection::vec((0usize..8, 0usize..8), 0..10)) {
        let truth = Pairing::identity(n);
        let picks: Vec<(usize, usize)> = picks.into_iter().map(|(m, f)| (m % n, f % n)).collect();
        let s = score_pairing(&picks, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let expect = if picks.is_empty() { 0.0 } else {
            picks.iter().filter(|(m, f)| m == f).count() as f64 / picks.len() as f64
        };
        prop_assert_eq!(s, expect);
        prop_assert!(score_pairing(&[(n, 0)], &truth).is_err());
    }
}

fn random_pairs(dims: &Dims, rng: &mut ChaCha8Rng) -> Vec<FitPair> {
    (0..rng.random_range(1..=3))
        .map(|_| FitPair::new(soft_mask(dims, rng.random()), soft_mask(dims, rng.random())).unwrap())
        .collect()
}

fn random_field(dims: &Dims, rng: &mut ChaCha8Rng) -> DisplacementField {
    let v = (0..dims.len() * dims.ndim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    DisplacementField::new(dims.clone(), v, "random").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_splits_into_roi_and_smoothness(dims in dims_strategy(), seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_pairs(&dims, &mut rng);
        let field = random_field(&dims, &mut rng);
        let terms = objective_terms(&pairs, &field, lambda).unwrap();
        // per-pair half MSE plus half Dice loss, from the public warp and dice
        let roi: f64 = pairs.iter().map(|p| {
            let w = warp(&p.moving, &field).unwrap();
            let mse = w.data().iter().zip(p.fixed.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dims.len() as f64;
            0.5 * mse + 0.5 * (1.0 - dice(&w, &p.fixed).unwrap())
        }).sum();
        prop_assert!((terms.roi - roi).abs() < 1e-10);
        prop_assert!((terms.smoothness - smoothness_loss(&field)).abs() < 1e-12);
        prop_assert!((terms.total() - (roi + lambda * smoothness_loss(&field))).abs() < 1e-9);
    }

    #[test]
    fn descent_history_never_rises(seed in any::<u64>(), levels in 1usize..3, lambda in 0.0f64..0.5) {
        let dims = Dims::new(&[16, 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_pairs(&dims, &mut rng);
        let cfg = FitConfig { lambda, iterations: 40, levels, ..Default::default() };
        let (field, report) = fit_ddf(&pairs, &dims, &cfg).unwrap();
        prop_assert!(report.history.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(report.final_loss <= report.initial_loss);
        let direct = objective_terms(&pairs, &field, lambda).unwrap().total();
        prop_assert!((direct - report.final_loss).abs() < 1e-12);
    }
}

#[test]
fn heavy_regularization_gives_a_smoother_field() {
    let dims = Dims::new(&[24, 24]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..4 {
        let pairs = random_pairs(&dims, &mut rng);
        let fit = |lambda| {
            let cfg = FitConfig { lambda, iterations: 80, levels: 1, ..Default::default() };
            fit_ddf(&pairs, &dims, &cfg).unwrap().1.smoothness_loss
        };
        assert!(fit(1e6) <= fit(0.1));
    }
}

#[test]
fn cached_volume_matching_equals_recompute() {
    let slice = SynthSpec {
        dims: Dims::new(&[48, 48]).unwrap(),
        blobs: 2,
        radius: (5.0, 7.0),
        seed: 4,
        ..Default::default()
    };
    let case = generate_shifted_volume(&slice, 6, 1).unwrap();
    for range in [0, 1, 2, 7] {
        for mode in [MatchMode::OneToOne, MatchMode::OneToMany] {
            let mut cfg = VolumeMatchConfig { slice_range: range, ..Default::default() };
            cfg.pipeline.matching.mode = mode;
            let cached = register_volume(&case.moving, &case.fixed, &cfg).unwrap();
            let fresh = register_volume_recompute(&case.moving, &case.fixed, &cfg).unwrap();
            assert_eq!(cached, fresh);
        }
    }
}

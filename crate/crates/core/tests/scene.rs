use proptest::prelude::*;
use radionet::geometry::Vec2;
use radionet::scene::{
    generate_scene, normalize_height, rasterize_scene, split_dataset, Building, SceneParams, SceneSpec,
    ShapeFamily, Transmitter, BUILDING_HEIGHT_M, FREQ_GHZ, TREE_HEIGHT_M, TX_HEIGHT_M,
};
use radionet::tensor::RngState;
use radionet::Error;
use std::collections::BTreeSet;

fn scene(seed: u64) -> SceneSpec {
    generate_scene(&mut RngState::new(seed), &SceneParams::default()).unwrap()
}

fn tx(x: f64, y: f64, h: f64) -> Transmitter {
    Transmitter { x_m: x, y_m: y, height_m: h }
}

#[test]
fn same_seed_same_scene() {
    let a = scene(42);
    let b = scene(42);
    assert_eq!(a, b);
    assert_eq!(a.to_toml().unwrap(), b.to_toml().unwrap());
    assert_ne!(a, scene(43));
}

#[test]
fn sampled_ranges_hold_over_many_seeds() {
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    let mut families = BTreeSet::new();
    for seed in 0..1000 {
        let s = scene(seed);
        s.validate().unwrap();
        assert!(within(s.freq_ghz, FREQ_GHZ));
        assert!(within(s.tx.height_m, TX_HEIGHT_M));
        assert!(s.buildings.iter().all(|b| within(b.height_m, BUILDING_HEIGHT_M)));
        assert!(s.trees.iter().all(|t| within(t.height_m, TREE_HEIGHT_M)));
        assert!(!s.buildings.iter().any(|b| b.contains(s.tx.position())));
        families.extend(s.buildings.iter().map(|b| format!("{:?}", b.shape)));
    }
    assert_eq!(families.len(), 4);
}

#[test]
fn tree_spacing_averages_ten_meters() {
    let s = scene(5);
    // Trees along one vertical corridor edge share an x coordinate.
    let x0 = s.trees[0].x_m;
    let mut ys: Vec<f64> = s.trees.iter().filter(|t| t.x_m == x0).map(|t| t.y_m).collect();
    ys.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean - 10.0).abs() < 1.0, "mean spacing {mean}");
    assert!(gaps.iter().all(|g| (7.0..=13.0).contains(g)));
}

#[test]
fn zero_buildings_rasterize_to_empty_building_map() {
    let params = SceneParams { building_count: 0, ..SceneParams::default() };
    let s = generate_scene(&mut RngState::new(3), &params).unwrap();
    assert!(s.buildings.is_empty());
    assert!(!s.trees.is_empty());
    let maps = rasterize_scene(&s, 64, 64).unwrap();
    assert!(maps.building.iter().all(|&v| v == 0.0));
    assert!(maps.tree.iter().any(|&v| v > 0.0));
}

#[test]
fn infeasible_density_is_a_generation_error() {
    let params = SceneParams { building_count: 2000, max_retries: 50, ..SceneParams::default() };
    let err = generate_scene(&mut RngState::new(1), &params).unwrap_err();
    assert!(matches!(err, Error::Generation(_)), "{err}");
}

#[test]
fn empty_scene_rasterizes_to_zero_obstacles() {
    let s = SceneSpec::empty(512.0, tx(100.0, 200.0, 40.0), 5.78);
    let m = rasterize_scene(&s, 32, 32).unwrap();
    assert!(m.building.iter().all(|&v| v == 0.0));
    assert!(m.tree.iter().all(|&v| v == 0.0));
}

#[test]
fn whole_world_building_is_half_height() {
    let mut s = SceneSpec::empty(512.0, tx(-1.0, 0.0, 40.0), 5.78);
    s.tx = tx(0.0, 0.0, 40.0);
    s.buildings.push(Building {
        shape: ShapeFamily::Rectangular,
        height_m: 50.0,
        footprint_m: vec![
            Vec2::new(-1.0, -1.0),
            Vec2::new(513.0, -1.0),
            Vec2::new(513.0, 513.0),
            Vec2::new(-1.0, 513.0),
        ],
    });
    let m = rasterize_scene(&s, 16, 16).unwrap();
    assert!(m.building.iter().all(|&v| v == 0.5));
}

#[test]
fn tx_pixel_is_one_hot_height() {
    // Cell (i, j) = (5, 9) at 32x32 over 512 m has 16 m cells.
    let s = SceneSpec::empty(512.0, tx(9.0 * 16.0 + 3.0, 5.0 * 16.0 + 8.0, 80.0), 5.735);
    let m = rasterize_scene(&s, 32, 32).unwrap();
    let nonzero: Vec<usize> = (0..m.tx.len()).filter(|&k| m.tx[k] != 0.0).collect();
    assert_eq!(nonzero, vec![5 * 32 + 9]);
    assert_eq!(m.tx[5 * 32 + 9], 0.8);
    assert_eq!(m.tx_cell(), (5, 9));
    assert!(m.freq.iter().all(|&v| v == 0.0));
}

#[test]
fn rasterize_contract_errors() {
    let s = SceneSpec::empty(512.0, tx(600.0, 10.0, 40.0), 5.78);
    assert!(matches!(rasterize_scene(&s, 32, 32), Err(Error::Contract(_))));
    let s = SceneSpec::empty(512.0, tx(10.0, 10.0, 40.0), 5.78);
    assert!(matches!(rasterize_scene(&s, 4, 32), Err(Error::Contract(_))));
}

#[test]
fn channels_stay_in_unit_range_and_grid_is_exact() {
    let s = scene(11);
    let (h, w) = (40, 24);
    let m = rasterize_scene(&s, h, w).unwrap();
    for k in 0..6 {
        assert!(m.channel(k).iter().all(|v| (0.0..=1.0).contains(v)), "channel {k}");
    }
    assert_eq!(m.tx.iter().filter(|&&v| v != 0.0).count(), 1);
    for i in 0..h {
        for j in 0..w {
            assert_eq!(m.grid_x[i * w + j], j as f32 / (w - 1) as f32);
            assert_eq!(m.grid_y[i * w + j], i as f32 / (h - 1) as f32);
        }
    }
    let t = m.to_tensor();
    assert_eq!(t.shape(), &[6, h, w]);
}

#[test]
fn grid_channels_downsample_consistently() {
    // Averaging 2x2 blocks of the corner-aligned grid at width W gives the
    // half-width grid mapped through x -> x (W-2)/(W-1) + 0.5/(W-1).
    for w in [16usize, 32, 128] {
        let full = rasterize_scene(&scene(1), w, w).unwrap();
        let half = rasterize_scene(&scene(1), w / 2, w / 2).unwrap();
        let hw = w / 2;
        for i in 0..hw {
            for j in 0..hw {
                let avg = |c: &[f32]| {
                    (c[2 * i * w + 2 * j] + c[2 * i * w + 2 * j + 1] + c[(2 * i + 1) * w + 2 * j] + c[(2 * i + 1) * w + 2 * j + 1]) as f64 / 4.0
                };
                let map = |v: f32| v as f64 * (w as f64 - 2.0) / (w as f64 - 1.0) + 0.5 / (w as f64 - 1.0);
                assert!((avg(&full.grid_x) - map(half.grid_x[i * hw + j])).abs() < 1e-6);
                assert!((avg(&full.grid_y) - map(half.grid_y[i * hw + j])).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn split_examples() {
    let (tr, va) = split_dataset(100, (99, 1), 0).unwrap();
    assert_eq!((tr.len(), va.len()), (99, 1));
    let (tr, va) = split_dataset(10, (1, 1), 0).unwrap();
    assert_eq!((tr.len(), va.len()), (5, 5));
    assert_eq!(split_dataset(10, (1, 1), 0).unwrap(), (tr, va));
    assert!(split_dataset(1, (1, 1), 0).is_err());
}

#[test]
fn scene_toml_round_trip() {
    let s = scene(8);
    let text = s.to_toml().unwrap();
    assert!(text.contains("world_size_m") && text.contains("height_m") && text.contains("freq_ghz"));
    assert_eq!(SceneSpec::from_toml(&text).unwrap(), s);
    let bad = text.replacen("freq_ghz = ", "freq_ghz = 9.0 #", 1);
    assert!(SceneSpec::from_toml(&bad).is_err());
}

#[test]
fn overlapping_footprints_are_rejected() {
    let rect = |x: f64| Building {
        shape: ShapeFamily::Rectangular,
        height_m: 40.0,
        footprint_m: vec![Vec2::new(x, 0.0), Vec2::new(x + 10.0, 0.0), Vec2::new(x + 10.0, 10.0), Vec2::new(x, 10.0)],
    };
    let mut s = SceneSpec::empty(512.0, tx(100.0, 100.0, 40.0), 5.78);
    s.buildings = vec![rect(0.0), rect(10.0)];
    s.validate().unwrap();
    s.buildings = vec![rect(0.0), rect(5.0)];
    assert!(s.validate().is_err());
    s.buildings = vec![rect(0.0)];
    s.tx = tx(5.0, 5.0, 40.0);
    assert!(s.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raster_matches_point_queries(seed in 0u64..10_000, res in 8usize..80) {
        let s = scene(seed);
        let m = rasterize_scene(&s, res, res).unwrap();
        for i in (0..res).step_by(3) {
            for j in 0..res {
                let c = m.cell_center(i, j);
                let b = s.building_height_at(c).map_or(0.0, normalize_height);
                let t = s.tree_height_at(c).map_or(0.0, normalize_height);
                prop_assert_eq!(m.building[i * res + j], b);
                prop_assert_eq!(m.tree[i * res + j], t);
            }
        }
    }

    #[test]
    fn splits_partition_indices(n in 2usize..500, a in 1u32..100, b in 1u32..100, seed: u64) {
        let (tr, va) = split_dataset(n, (a, b), seed).unwrap();
        prop_assert!(!tr.is_empty() && !va.is_empty());
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

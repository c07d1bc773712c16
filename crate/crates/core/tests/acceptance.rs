//! Acceptance suite: one test per criterion, each printing a pass line.
//! The asymptotic bounds are checked against the frozen calibration
//! constants on fresh samples (different seeds than the calibration pass).
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use hyptsp::constants::*;
use hyptsp::dyntsp::{
    all_matchings, fits, reduce_representative, run_tsp, ReduceMode, RepEntry, SolverConfig,
};
use hyptsp::hgeom::{
    crossing, from_klein, geodesic, hyp_distance, hyp_distance_unchecked, klein_distance, to_klein,
    HPoint, VerticalHyperplane,
};
use hyptsp::hybridtree::{
    build_compressed_tree, cell_children, phi, prepare, CellKey, Instance, NodeKind, Shift,
    ShiftSpec,
};
use hyptsp::portals::{
    build_facets, nearest_portal, place, sibling_facets, side_base, side_grid_counts, FacetKind,
    PortalConfig,
};
use hyptsp::steiner::{build_banyan, dreyfus_wagner, run_steiner, KleinHull};
use hyptsp::verify::{
    check_r_simple, count_horizontal_crossings, count_top_crossings, exact_tsp,
    fine_grid_steiner_reference, min_pairwise_distance, snap_and_patch, weighted_crossing_sum,
    SimpleMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(name: &str) {
    println!("[PASS] {name}");
}

fn random_point(rng: &mut impl Rng, d: usize, spread: f64) -> HPoint {
    HPoint {
        x: (0..d - 1).map(|_| rng.gen_range(-spread..spread)).collect(),
        z: rng.gen_range(0.4..0.4 + spread.exp()),
    }
}

fn ball_points(rng: &mut impl Rng, d: usize, n: usize, radius: f64) -> Vec<HPoint> {
    let r_klein = radius.tanh();
    let max_density = (1.0 - r_klein * r_klein).powf(-(d as f64 + 1.0) / 2.0);
    (0..n)
        .map(|_| loop {
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-r_klein..=r_klein)).collect();
            let norm_sq: f64 = u.iter().map(|v| v * v).sum();
            if norm_sq > r_klein * r_klein {
                continue;
            }
            let density = (1.0 - norm_sq).powf(-(d as f64 + 1.0) / 2.0);
            if rng.gen_range(0.0..1.0) <= density / max_density {
                break from_klein(&u).unwrap();
            }
        })
        .collect()
}

#[test]
fn criterion_distance_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_001);
    for _ in 0..10_000 {
        let a = random_point(&mut rng, 3, 2.0);
        let b = random_point(&mut rng, 3, 2.0);
        let c = random_point(&mut rng, 3, 2.0);
        let ab = hyp_distance(&a, &b).unwrap();
        let ba = hyp_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-9, "symmetry violated");
        assert!(hyp_distance(&a, &a).unwrap() <= 1e-9, "identity violated");
        let ac = hyp_distance(&a, &c).unwrap();
        let cb = hyp_distance(&c, &b).unwrap();
        assert!(ab <= ac + cb + 1e-9, "triangle inequality violated");
    }
    let p = |x: f64, z: f64| HPoint { x: vec![x], z };
    assert!(
        (hyp_distance(&p(0.0, 1.0), &p(0.0, 2.0)).unwrap() - std::f64::consts::LN_2).abs() <= 1e-12
    );
    assert!(
        (hyp_distance(&p(0.0, 1.0), &p(1.0, 1.0)).unwrap() - 2.0 * 0.5f64.asinh()).abs() <= 1e-12
    );
    let h = VerticalHyperplane { axis: 0, offset: 0.0 };
    assert!(
        (hyptsp::hgeom::dist_to_vertical(&p(1.0, 1.0), &h).unwrap() - 1f64.asinh()).abs() <= 1e-12
    );
    pass("distance kernel: 1e4 random pairs + closed forms");
}

#[test]
fn criterion_model_conversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_002);
    for _ in 0..10_000 {
        let p = random_point(&mut rng, 3, 1.8);
        let q = random_point(&mut rng, 3, 1.8);
        let kp = to_klein(&p).unwrap();
        let back = from_klein(&kp).unwrap();
        assert!(p.approx_eq(&back, 1e-9), "round trip drifted");
        let direct = hyp_distance_unchecked(&p, &q);
        let kq = to_klein(&q).unwrap();
        let kd = klein_distance(&kp, &kq).unwrap();
        assert!((direct - kd).abs() <= 1e-9 * direct.max(1.0), "distance not preserved");
    }
    pass("model conversion: Klein round trip and isometry on 1e4 pairs");
}

#[test]
fn criterion_tree_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_003);
    for trial in 0..100 {
        let d = if trial % 3 == 2 { 3 } else { 2 };
        let n = rng.gen_range(2..=64);
        let spread = rng.gen_range(0.6..1.8);
        let points: Vec<HPoint> = (0..n).map(|_| random_point(&mut rng, d, spread)).collect();
        let inst = Instance { d, points, eps: 0.4, r: Some(4) };
        let prep = prepare(&inst).unwrap();
        for s in 0..16 {
            let shift = if s == 0 {
                Shift::identity(d)
            } else {
                prep.shift_spec.sample(&mut rng)
            };
            let tree =
                build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &shift)
                    .unwrap();
            assert!(
                tree.nodes.len() <= 8 * (1 << d) * n,
                "node count {} over 8*2^d*n at n={n}, d={d}",
                tree.nodes.len()
            );
            for leaf in tree.leaves() {
                assert!(
                    tree.distinct_leaf_occupancy(leaf) <= 1 << (d - 1),
                    "leaf occupancy blown at d={d}"
                );
            }
            // every positive-level cell splits into 2^(d-1)+1 children
            for node in &tree.nodes {
                if node.cell.level() >= 1 {
                    let children = cell_children(&node.cell, d, prep.l_min);
                    assert_eq!(children.len(), (1 << (d - 1)) + 1);
                }
            }
        }
    }
    pass("tree structure: node count, fan-out, occupancy on 100 instances x 16 shifts");
}

#[test]
fn criterion_phi_chart() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_004);
    for d in [2usize, 3] {
        let k_frozen = PHI_BILIPSCHITZ_K[d - 2];
        let spec = ShiftSpec::new(d, -3, 4);
        let mut pairs = 0usize;
        while pairs < 100_000 {
            let shift = spec.sample(&mut rng);
            let cell = CellKey::Tile {
                scale: rng.gen_range(0..4),
                idx: (0..d - 1).map(|_| rng.gen_range(0..4)).collect(),
            };
            let bx = cell.boxed(d).shifted(&shift);
            for _ in 0..500 {
                let mut sample = || -> HPoint {
                    let x = (0..d - 1).map(|i| rng.gen_range(bx.x_lo[i]..bx.x_hi[i])).collect();
                    HPoint { x, z: rng.gen_range(bx.z_lo..bx.z_hi) }
                };
                let p = sample();
                let q = sample();
                let hyp = hyp_distance_unchecked(&p, &q);
                if hyp < 1e-9 {
                    continue;
                }
                let up = phi(&cell, &shift, d, &p).unwrap();
                let uq = phi(&cell, &shift, d, &q).unwrap();
                let eucl =
                    up.iter().zip(&uq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                assert!(
                    eucl >= hyp / k_frozen && eucl <= k_frozen * (d as f64).sqrt() * hyp,
                    "bi-Lipschitz bound violated at d={d}: hyp {hyp}, chart {eucl}"
                );
                pairs += 1;
            }
        }
    }
    pass("phi chart: frozen bi-Lipschitz constant holds on fresh 1e5-pair samples");
}

#[test]
fn criterion_portal_counts_and_covers() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_005);
    for d in [2usize, 3] {
        let k_d = K_PORTAL[d - 2];
        for r in [2u32, 4, 8, 16] {
            for level in [1, 3, 6] {
                let cell = CellKey::Hybrid { level, idx: vec![0; d - 1] };
                for l_min in [-2, -6] {
                    let cfg = PortalConfig::full(r, l_min);
                    for f in sibling_facets(&cell, d, l_min) {
                        let pset = place(&f, 0, &cfg, &Shift::identity(d));
                        assert!(
                            (pset.len() as f64) <= k_d * (r as f64).powi(d as i32 - 1),
                            "{} portals on {:?} facet at r={r}, d={d}",
                            pset.len(),
                            f.kind
                        );
                        if f.kind == FacetKind::Side {
                            let counts = side_grid_counts(&f, &cfg);
                            for w in counts.windows(2) {
                                assert!(w[1] <= w[0], "side decay broken");
                            }
                        }
                    }
                }
            }
        }
    }
    // cover radii by sampling, d = 2 and 3
    for d in [2usize, 3] {
        let cell = CellKey::Hybrid { level: 4, idx: vec![0; d - 1] };
        let shift = Shift::identity(d);
        let facets = sibling_facets(&cell, d, -3);
        let b = side_base(d);
        for r in [2u32, 8] {
            let cfg = PortalConfig::full(r, -3);
            for f in &facets {
                let pset = place(f, 0, &cfg, &shift);
                match f.kind {
                    FacetKind::Top => {
                        for _ in 0..1000 {
                            let x: Vec<f64> = (0..d - 1)
                                .map(|i| rng.gen_range(f.x_lo[i]..f.x_hi[i]))
                                .collect();
                            let p = HPoint { x, z: f.offset };
                            let (_, dist) = nearest_portal(&pset, &p).unwrap();
                            assert!(dist <= 1.0 / r as f64 + 1e-9, "top cover radius");
                        }
                    }
                    FacetKind::Side => {
                        for _ in 0..1000 {
                            let h = rng.gen_range(0..=(f.z_hi / f.z_lo).log2() as i32 - 1);
                            if b.powi(h) > r as f64 {
                                continue;
                            }
                            let z_hi_row = f.z_hi / (h as f64).exp2();
                            let mut x = vec![0.0; d - 1];
                            if let Some(ax) = f.axis {
                                x[ax] = f.offset;
                            }
                            for i in 0..d - 1 {
                                if Some(i) != f.axis {
                                    x[i] = rng.gen_range(f.x_lo[i]..f.x_hi[i]);
                                }
                            }
                            let p = HPoint { x, z: rng.gen_range(z_hi_row / 2.0..z_hi_row) };
                            let (_, dist) = nearest_portal(&pset, &p).unwrap();
                            assert!(
                                dist <= b.powi(h) / r as f64 + 1e-9,
                                "side cover radius at depth {h}"
                            );
                        }
                    }
                    FacetKind::NegGrid => {}
                }
            }
        }
        // negative-grid cover: spacing-driven bound on the unextended patch
        let tile = CellKey::Tile { scale: 0, idx: vec![0; d - 1] };
        for r in [2u32, 8] {
            let cfg = PortalConfig::full(r, -3);
            for f in sibling_facets(&tile, d, -3) {
                let pset = place(&f, 0, &cfg, &shift);
                let k = (cfg.c_g * r as f64).max(4.0); // log term >= 1
                let side = (f.base_z_hi - f.z_lo)
                    .max((0..d - 1).map(|i| f.x_hi[i] - f.x_lo[i]).fold(0.0, f64::max));
                let bound = (d as f64).sqrt() * side / (k * f.z_lo);
                for _ in 0..1000 {
                    let mut x = vec![0.0; d - 1];
                    for i in 0..d - 1 {
                        if Some(i) == f.axis {
                            x[i] = f.offset;
                        } else {
                            x[i] = rng.gen_range(f.x_lo[i]..f.x_hi[i]);
                        }
                    }
                    let z = if f.axis.is_some() {
                        rng.gen_range(f.z_lo..f.base_z_hi)
                    } else {
                        f.offset
                    };
                    let p = HPoint { x, z };
                    let (_, dist) = nearest_portal(&pset, &p).unwrap();
                    assert!(dist <= bound + 1e-9, "neg-grid cover radius {dist} > {bound}");
                }
            }
        }
    }
    pass("portals: counts within K_d * r^(d-1), side decay, sampled cover radii");
}

#[test]
fn criterion_extended_facets() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_006);
    let mut checked = 0usize;
    while checked < 10_000 {
        let d = 2usize;
        let depth = rng.gen_range(1..=4u32);
        let scale = rng.gen_range(0..3);
        // an adjacent pair of negative-level siblings along a random axis
        let side_cells = 1i64 << depth;
        let xi = rng.gen_range(0..side_cells - 1);
        let zi = rng.gen_range(0..side_cells);
        let c1 = CellKey::Neg { scale, tile: vec![0], depth, xi: vec![xi], zi };
        let c2 = CellKey::Neg { scale, tile: vec![0], depth, xi: vec![xi + 1], zi };
        let Some(facet) = hyptsp::portals::facet_between(&c1, &c2, d) else { continue };
        assert_eq!(facet.kind, FacetKind::NegGrid);
        let (b1, b2) = (c1.boxed(d), c2.boxed(d));
        let mut sample_in = |bx: &hyptsp::hybridtree::CellBox| HPoint {
            x: vec![rng.gen_range(bx.x_lo[0]..bx.x_hi[0])],
            z: rng.gen_range(bx.z_lo..bx.z_hi),
        };
        let a = sample_in(&b1);
        let b = sample_in(&b2);
        let geo = geodesic(&a, &b).unwrap();
        let plane = VerticalHyperplane { axis: 0, offset: facet.offset };
        let hit = crossing(&geo, &plane).unwrap().expect("sided crossing must exist");
        assert!(
            facet.contains_std(&hit, 1e-9, true),
            "crossing at z={} escapes the extended facet (top {})",
            hit.z,
            facet.z_hi
        );
        checked += 1;
    }
    pass("extended facets: 1e4 geodesics between adjacent negative siblings all cross");
}

#[test]
fn criterion_tsp_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_007);
    for trial in 0..200 {
        let n = rng.gen_range(4..=9);
        let radius = rng.gen_range(0.8..2.2);
        let points = ball_points(&mut rng, 2, n, radius);
        let inst = Instance { d: 2, points, eps: 0.5, r: Some(4) };
        let prep = prepare(&inst).unwrap();
        let shift = prep.shift_spec.sample(&mut rng);
        let run = run_tsp(&prep, &shift, &SolverConfig::default()).unwrap();
        assert!(run.tour.is_feasible(n), "infeasible tour on trial {trial}");
        let (opt, _) = exact_tsp(&prep.perturbed.points).unwrap();
        assert!(
            run.tour.length >= opt - 1e-9,
            "solver beat the oracle on trial {trial}: {} < {opt}",
            run.tour.length
        );
    }
    pass("tsp floor: 200 instances feasible and never below the exact optimum");
}

#[test]
fn criterion_tsp_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_008);
    let mut non_increasing = 0usize;
    let instances = 50usize;
    for _ in 0..instances {
        let points = ball_points(&mut rng, 2, 8, 2.0);
        let mut gaps = Vec::new();
        for r in [4u32, 8, 16] {
            let inst = Instance { d: 2, points: points.clone(), eps: 0.5, r: Some(r) };
            let prep = prepare(&inst).unwrap();
            let (opt, _) = exact_tsp(&prep.perturbed.points).unwrap();
            let mut sum = 0.0;
            for _ in 0..32 {
                let shift = prep.shift_spec.sample(&mut rng);
                let run = run_tsp(&prep, &shift, &SolverConfig::default()).unwrap();
                sum += run.tour.length;
            }
            let mean = sum / 32.0;
            let gap = mean / opt - 1.0;
            assert!(
                gap <= C_TSP_GAP / r as f64 + 1e-9,
                "mean gap {gap} over (1 + {C_TSP_GAP}/{r}) at r={r}"
            );
            gaps.push(gap);
        }
        if gaps[0] >= gaps[1] - 1e-9 && gaps[1] >= gaps[2] - 1e-9 {
            non_increasing += 1;
        }
    }
    assert!(
        non_increasing * 10 >= instances * 9,
        "gap non-increasing in r on only {non_increasing}/{instances} instances"
    );
    pass("tsp approximation: mean-over-32-shifts within (1 + c/r) OPT, gaps settle with r");
}

#[test]
fn criterion_structure_harness() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_009);
    let d = 2usize;
    // crossing statistics on 100 oracle tours
    for _ in 0..100 {
        let n = rng.gen_range(4..9);
        let radius = rng.gen_range(0.8..2.0);
        let points = ball_points(&mut rng, d, n, radius);
        let inst = Instance { d, points, eps: 0.5, r: Some(4) };
        let prep = prepare(&inst).unwrap();
        let (_, order) = exact_tsp(&prep.perturbed.points).unwrap();
        let tour: Vec<HPoint> =
            order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
        let len: f64 = (0..tour.len())
            .map(|i| hyp_distance_unchecked(&tour[i], &tour[(i + 1) % tour.len()]))
            .sum();
        if len < 1e-9 {
            continue;
        }
        let shift = prep.shift_spec.sample(&mut rng);
        let tree =
            build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &shift)
                .unwrap();
        let delta = tree.delta;
        let wsum = weighted_crossing_sum(&tour, &tree);
        assert!(
            wsum <= C_WEIGHTED_CROSSING * (d as f64) * (d as f64).sqrt() / delta * len,
            "weighted crossing sum {wsum} over the frozen bound"
        );
        let j = count_horizontal_crossings(&tour, &tree) as f64;
        assert!(
            j <= C_HORIZONTAL_CROSSING * (d as f64).sqrt() / delta * len,
            "|J| = {j} over the frozen bound"
        );
        let min_pair = min_pairwise_distance(&prep.perturbed.points);
        if min_pair.is_finite() {
            assert!(
                min_pair >= C_MIN_PAIR_DIST * delta / (d as f64).sqrt(),
                "perturbed points too close: {min_pair}"
            );
        }
        // top-facet crossing expectation over shifts
        let mut top_sum = 0.0;
        for _ in 0..8 {
            let s = prep.shift_spec.sample(&mut rng);
            let t =
                build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &s)
                    .unwrap();
            top_sum += count_top_crossings(&tour, &t) as f64;
        }
        assert!(
            top_sum / 8.0 <= C_TOP_CROSSING * (d as f64).sqrt() * len,
            "top crossings {} over the frozen bound",
            top_sum / 8.0
        );
    }
    // snap-and-patch expectation over 32 shifts on 12 instances
    for _ in 0..12 {
        let points = ball_points(&mut rng, d, 7, 1.6);
        let r = 8u32;
        let inst = Instance { d, points, eps: 0.5, r: Some(r) };
        let prep = prepare(&inst).unwrap();
        let (_, order) = exact_tsp(&prep.perturbed.points).unwrap();
        let tour: Vec<HPoint> =
            order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
        let mut rel = 0.0;
        for _ in 0..32 {
            let shift = prep.shift_spec.sample(&mut rng);
            let tree =
                build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &shift)
                    .unwrap();
            let fs = build_facets(&tree, &PortalConfig::full(r, prep.l_min)).unwrap();
            let (report, patched) = snap_and_patch(&tour, &tree, &fs).unwrap();
            rel += (report.patched_length - report.original_length) / report.original_length;
            let (ok, violations) =
                check_r_simple(&patched, &tree, &fs, r, SimpleMode::FixedGrid);
            assert!(ok, "patched tour failed the fixed-grid predicate: {violations:?}");
        }
        let mean_rel = rel / 32.0;
        assert!(
            mean_rel <= C_PATCH * (d as f64).powi(3) / r as f64 + 1e-9,
            "patching cost {mean_rel} over the frozen bound"
        );
    }
    pass("structure harness: crossing sums, |J|, patching cost, patched tours r-simple");
}

#[test]
fn criterion_steiner() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_010);
    let eps = 0.7f64;
    let mut within_2eps = 0usize;
    let instances = 50usize;
    for trial in 0..instances {
        let n = rng.gen_range(3..=6);
        let points = ball_points(&mut rng, 2, n, 0.8);
        let inst = Instance { d: 2, points: points.clone(), eps, r: Some(4) };
        let prep = prepare(&inst).unwrap();
        let reference =
            fine_grid_steiner_reference(&prep.perturbed.points, eps / 10.0, 2).unwrap();
        if reference < 1e-9 {
            within_2eps += 1;
            continue;
        }
        // banyan quality against the fine-grid reference
        let banyan = build_banyan(&prep.perturbed.points, eps, 2).unwrap();
        let v = banyan.len();
        let mut weights = vec![vec![0.0; v]; v];
        for i in 0..v {
            for j in i + 1..v {
                let w = banyan.weight(i, j);
                weights[i][j] = w;
                weights[j][i] = w;
            }
        }
        let terminals: Vec<usize> = (0..n).collect();
        let (banyan_opt, _) = dreyfus_wagner(&weights, &terminals).unwrap();
        assert!(
            banyan_opt <= (1.0 + eps) * reference + 1e-9,
            "banyan ratio {} over 1+eps on trial {trial}",
            banyan_opt / reference
        );

        // end-to-end solver output
        let shift = prep.shift_spec.sample(&mut rng);
        let run = run_steiner(&prep, &shift, &SolverConfig::default()).unwrap();
        assert!(run.tree.is_connected_spanning(n), "output not connected/spanning");
        let ratio = run.tree.length / reference;
        if ratio <= 1.0 + 2.0 * eps + 1e-9 {
            within_2eps += 1;
        }
    }
    assert!(
        within_2eps * 10 >= instances * 9,
        "solver within 1+2eps of the reference on only {within_2eps}/{instances}"
    );
    pass("steiner: banyan ratio <= 1+eps, solver connected/spanning and near the reference");
}

#[test]
fn criterion_derandomization() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_011);
    // diameter-2 instance with 6 points
    let points = ball_points(&mut rng, 2, 6, 1.0);
    let inst = Instance { d: 2, points, eps: 0.8, r: Some(4) };
    let prep = prepare(&inst).unwrap();
    // the count follows the per-axis lattice product
    let spec = &prep.shift_spec;
    let expected: u128 = (spec.nx as u128).pow((prep.d - 1) as u32) * spec.nz as u128;
    assert_eq!(spec.count(), expected);
    let shifts = spec.enumerate(1 << 22).unwrap();
    assert_eq!(shifts.len() as u128, expected);

    let cfg = SolverConfig::default();
    let mut best = f64::INFINITY;
    for shift in &shifts {
        let run = run_tsp(&prep, shift, &cfg).unwrap();
        best = best.min(run.tour.length);
    }
    let mut sum = 0.0;
    for _ in 0..32 {
        let shift = spec.sample(&mut rng);
        sum += run_tsp(&prep, &shift, &cfg).unwrap().tour.length;
    }
    let mean = sum / 32.0;
    assert!(best <= mean + 1e-9, "enumerated best {best} above the randomized mean {mean}");
    pass(&format!(
        "derandomization: {} enumerated shifts, best {:.6} <= randomized mean {:.6}",
        shifts.len(),
        best,
        mean
    ));
}

#[test]
fn criterion_representative_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(900_012);
    for size in [2usize, 4, 6] {
        let all = all_matchings(size);
        for _ in 0..40 {
            let mut entries: Vec<RepEntry> = Vec::new();
            for m in &all {
                if rng.gen_bool(0.75) {
                    entries.push(RepEntry { matching: m.clone(), cost: rng.gen_range(0.0..10.0) });
                }
            }
            if entries.is_empty() {
                continue;
            }
            for mode in [ReduceMode::CheapestPartner, ReduceMode::RankBased] {
                let red = reduce_representative(&entries, size, mode);
                for m in &all {
                    let full = entries
                        .iter()
                        .filter(|e| fits(&e.matching, m, size).unwrap())
                        .map(|e| e.cost)
                        .fold(f64::INFINITY, f64::min);
                    let kept = red
                        .iter()
                        .filter(|e| fits(&e.matching, m, size).unwrap())
                        .map(|e| e.cost)
                        .fold(f64::INFINITY, f64::min);
                    assert!(
                        (full - kept).abs() < 1e-12 || (full.is_infinite() && kept.is_infinite()),
                        "opt(M, .) changed under {mode:?}"
                    );
                }
            }
        }
    }
    pass("representative sets: reduction preserves opt(M, .) for every |B| <= 6 matching");
}

#[test]
fn criterion_banyan_cover() {
    // supporting invariant for the steiner criterion: Q_{a,b} covers the
    // pair hull within mu
    let mut rng = ChaCha8Rng::seed_from_u64(900_013);
    for _ in 0..10 {
        let n = rng.gen_range(3..=5);
        let y = ball_points(&mut rng, 2, n, 0.8);
        let banyan = build_banyan(&y, 0.6, 2).unwrap();
        for meta in &banyan.pairs {
            if meta.edge_branch {
                continue;
            }
            let members: Vec<HPoint> = y
                .iter()
                .filter(|p| hyp_distance_unchecked(p, &meta.ball_center) <= meta.ball_radius)
                .cloned()
                .collect();
            let hull = KleinHull::of(&members).unwrap();
            for sample in hull.sample(meta.mu / 3.0) {
                let p = from_klein(&sample).unwrap();
                let near = banyan.vertices[banyan.n_terminals..]
                    .iter()
                    .map(|q| hyp_distance_unchecked(&p, q))
                    .fold(f64::INFINITY, f64::min);
                assert!(near <= meta.mu + 1e-9, "cover radius {near} > mu {}", meta.mu);
            }
        }
    }
    pass("banyan cover: every sampled hull point within mu of the candidates");
}

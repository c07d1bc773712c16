//! Calibration pass for the frozen constants in `constants.rs`.
//!
//! Run with `cargo run --release -p hyptsp --example calibrate`. Each
//! section samples the relevant construction on large random inputs and
//! prints the observed extreme together with the margin-adjusted value to
//! freeze. Uses different seeds than the acceptance suite so the frozen
//! values are tested out of sample.

use hyptsp::dyntsp::{run_tsp, SolverConfig};
use hyptsp::hgeom::{hyp_distance_unchecked, HPoint};
use hyptsp::hybridtree::{
    build_compressed_tree, phi, prepare, CellKey, Instance, Shift, ShiftSpec,
};
use hyptsp::portals::{build_facets, place, sibling_facets, PortalConfig};
use hyptsp::verify::{
    count_horizontal_crossings, count_top_crossings, exact_tsp, min_pairwise_distance,
    snap_and_patch, weighted_crossing_sum,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut impl Rng, d: usize, n: usize, spread: f64) -> Vec<HPoint> {
    (0..n)
        .map(|_| HPoint {
            x: (0..d - 1).map(|_| rng.gen_range(-spread..spread)).collect(),
            z: rng.gen_range(0.6..0.6 + spread.exp()),
        })
        .collect()
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
                break hyptsp::hgeom::from_klein(&u).unwrap();
            }
        })
        .collect()
}

fn phi_bilipschitz() {
    println!("== phi bi-Lipschitz constant K (freeze with +10%) ==");
    for d in [2usize, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + d as u64);
        let spec = ShiftSpec::new(d, -3, 4);
        let mut k_max = 0.0f64;
        for _ in 0..100 {
            let shift = spec.sample(&mut rng);
            let cell = CellKey::Tile {
                scale: rng.gen_range(0..4),
                idx: (0..d - 1).map(|_| rng.gen_range(0..4)).collect(),
            };
            let bx = cell.boxed(d).shifted(&shift);
            for _ in 0..1000 {
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
                k_max = k_max.max(hyp / eucl);
                k_max = k_max.max(eucl / ((d as f64).sqrt() * hyp));
            }
        }
        println!("  d={d}: observed K {:.4} -> freeze {:.4}", k_max, 1.1 * k_max);
    }
}

fn portal_counts() {
    println!("== per-facet portal count / r^(d-1) (freeze with +25%) ==");
    for d in [2usize, 3] {
        let mut worst = 0.0f64;
        for level in 1..8 {
            let cell = CellKey::Hybrid { level, idx: vec![0; d - 1] };
            for r in [1u32, 2, 4, 8, 16] {
                for l_min in [-1i32, -4, -8, -12] {
                    let cfg = PortalConfig::full(r, l_min);
                    for f in sibling_facets(&cell, d, l_min) {
                        let pset = place(&f, 0, &cfg, &Shift::identity(d));
                        worst =
                            worst.max(pset.len() as f64 / (r as f64).powi(d as i32 - 1));
                    }
                }
            }
        }
        // negative-level facets at depth
        for depth in 1..5u32 {
            let cell = CellKey::Neg {
                scale: 0,
                tile: vec![0; d - 1],
                depth,
                xi: vec![0; d - 1],
                zi: 0,
            };
            for r in [1u32, 2, 4, 8, 16] {
                for l_min in [-(depth as i32) - 1, -12] {
                    let cfg = PortalConfig::full(r, l_min);
                    for f in sibling_facets(&cell, d, l_min) {
                        let pset = place(&f, 0, &cfg, &Shift::identity(d));
                        worst =
                            worst.max(pset.len() as f64 / (r as f64).powi(d as i32 - 1));
                    }
                }
            }
        }
        println!("  d={d}: observed {:.2} -> freeze {:.2}", worst, 1.25 * worst);
    }
}

fn crossing_bounds() {
    println!("== crossing statistics on oracle tours (freeze with +25%) ==");
    let d = 2usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let mut c_weighted = 0.0f64;
    let mut c_horiz = 0.0f64;
    let mut c_top = 0.0f64;
    let mut c_min_pair = f64::INFINITY;
    for _ in 0..120 {
        let n = rng.gen_range(4..9);
        let spread = rng.gen_range(0.8..2.0);
        let pts = random_points(&mut rng, d, n, spread);
        let inst = Instance { d, points: pts, eps: 0.5, r: Some(4) };
        let Ok(prep) = prepare(&inst) else { continue };
        let (_, order) = exact_tsp(&prep.perturbed.points).unwrap();
        let tour: Vec<HPoint> =
            order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
        let len: f64 = (0..tour.len())
            .map(|i| hyp_distance_unchecked(&tour[i], &tour[(i + 1) % tour.len()]))
            .sum();
        if len < 1e-9 {
            continue;
        }
        let mut top_sum = 0.0;
        let mut shifts_used = 0;
        for _ in 0..16 {
            let shift = prep.shift_spec.sample(&mut rng);
            let tree =
                build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &shift)
                    .unwrap();
            top_sum += count_top_crossings(&tour, &tree) as f64;
            shifts_used += 1;
            if shifts_used == 1 {
                let delta = tree.delta;
                let wsum = weighted_crossing_sum(&tour, &tree);
                c_weighted = c_weighted
                    .max(wsum * delta / ((d as f64) * (d as f64).sqrt() * len));
                let j = count_horizontal_crossings(&tour, &tree) as f64;
                c_horiz = c_horiz.max(j * delta / ((d as f64).sqrt() * len));
                let min_pair = min_pairwise_distance(&prep.perturbed.points);
                if min_pair.is_finite() {
                    c_min_pair = c_min_pair.min(min_pair * (d as f64).sqrt() / delta);
                }
            }
        }
        c_top = c_top.max(top_sum / shifts_used as f64 / ((d as f64).sqrt() * len));
    }
    println!("  weighted sum:    observed {:.4} -> freeze {:.4}", c_weighted, 1.25 * c_weighted);
    println!("  horizontal |J|:  observed {:.4} -> freeze {:.4}", c_horiz, 1.25 * c_horiz);
    println!("  top crossings:   observed {:.4} -> freeze {:.4}", c_top, 1.25 * c_top);
    println!(
        "  min pair dist:   observed {:.4} -> freeze {:.4} (lower bound, -25%)",
        c_min_pair,
        0.75 * c_min_pair
    );
}

fn patching_cost() {
    println!("== snap-and-patch relative cost * r / d^3 (freeze with +25%) ==");
    let d = 2usize;
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let mut c_patch = 0.0f64;
    for _ in 0..30 {
        let n = rng.gen_range(5..9);
        let pts = random_points(&mut rng, d, n, 1.5);
        for r in [4u32, 8, 16] {
            let inst = Instance { d, points: pts.clone(), eps: 0.5, r: Some(r) };
            let Ok(prep) = prepare(&inst) else { continue };
            let (_, order) = exact_tsp(&prep.perturbed.points).unwrap();
            let tour: Vec<HPoint> =
                order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
            let mut rel_sum = 0.0;
            let mut used = 0;
            for _ in 0..32 {
                let shift = prep.shift_spec.sample(&mut rng);
                let tree = build_compressed_tree(
                    &prep.perturbed.points,
                    d,
                    prep.l_min,
                    prep.l_max,
                    &shift,
                )
                .unwrap();
                let fs = build_facets(&tree, &PortalConfig::full(r, prep.l_min)).unwrap();
                let (report, _) = snap_and_patch(&tour, &tree, &fs).unwrap();
                rel_sum +=
                    (report.patched_length - report.original_length) / report.original_length;
                used += 1;
            }
            let mean_rel = rel_sum / used as f64;
            c_patch = c_patch.max(mean_rel * r as f64 / (d as f64).powi(3));
        }
    }
    println!("  observed {:.4} -> freeze {:.4}", c_patch, 1.25 * c_patch);
}

fn tsp_gap() {
    println!("== solver gap (mean over 32 shifts - 1) * r (freeze with +25%) ==");
    let d = 2usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut c_gap = 0.0f64;
    for inst_id in 0..30 {
        let pts = ball_points(&mut rng, d, 8, 2.0);
        for r in [4u32, 8, 16] {
            let inst = Instance { d, points: pts.clone(), eps: 0.5, r: Some(r) };
            let Ok(prep) = prepare(&inst) else { continue };
            let (opt, _) = exact_tsp(&prep.perturbed.points).unwrap();
            if opt < 1e-9 {
                continue;
            }
            let mut sum = 0.0;
            for _ in 0..32 {
                let shift = prep.shift_spec.sample(&mut rng);
                let run = run_tsp(&prep, &shift, &SolverConfig::default()).unwrap();
                sum += run.tour.length;
            }
            let gap = sum / 32.0 / opt - 1.0;
            c_gap = c_gap.max(gap * r as f64);
            if inst_id < 3 {
                println!("    instance {inst_id} r={r}: gap {gap:.5}");
            }
        }
    }
    println!("  observed {:.4} -> freeze {:.4}", c_gap, 1.25 * c_gap);
}

fn main() {
    let section = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    match section.as_str() {
        "phi" => phi_bilipschitz(),
        "portals" => portal_counts(),
        "crossings" => crossing_bounds(),
        "patch" => patching_cost(),
        "gap" => tsp_gap(),
        _ => {
            phi_bilipschitz();
            portal_counts();
            crossing_bounds();
            patching_cost();
            tsp_gap();
        }
    }
}

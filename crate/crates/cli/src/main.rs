//! Command line driver: instance generation, end-to-end runs (randomized
//! and derandomized shift enumeration), oracle comparison, the structure
//! harness, result summaries, and half-plane SVG rendering.
//!
//! Exit codes: 0 success, 2 invalid input, 3 resource cap exceeded.

mod gen;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hyptsp::dyntsp::{run_tsp, SolverConfig};
use hyptsp::error::Error;
use hyptsp::hybridtree::{build_compressed_tree, prepare, Instance, Prepared, Shift};
use hyptsp::io::{
    read_instance, read_result, write_instance, write_result, HarnessRecord, ResultRecord,
    ShiftRecord,
};
use hyptsp::portals::{build_facets, PortalConfig};
use hyptsp::steiner::run_steiner;
use hyptsp::verify::{
    check_r_simple, count_top_crossings, exact_tsp, fine_grid_steiner_reference, snap_and_patch,
    SimpleMode,
};

#[derive(Parser)]
#[command(name = "hyptsp", about = "Approximation schemes for TSP and Steiner tree in hyperbolic space")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Tsp,
    Steiner,
    Harness,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a random instance file.
    Generate {
        /// ball: uniform in a hyperbolic ball of the given radius;
        /// horobox: uniform in [0,scale]^(d-1) x [1, e^scale]
        #[arg(long, default_value = "ball")]
        kind: String,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.5)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve an instance or run the structure harness over random shifts.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        /// Portal density; defaults to ceil(8 / epsilon).
        #[arg(long)]
        r: Option<u32>,
        /// Number of sampled shifts, or "enumerate" for the full set.
        #[arg(long, default_value = "8")]
        shifts: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compare against the exact oracle (TSP: Held-Karp; Steiner: the
        /// fine-grid reference at epsilon/10).
        #[arg(long, default_value_t = false)]
        oracle: bool,
        /// Write an SVG of the decomposition and best tour (d = 2).
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Cap on tour crossings of a single cell boundary.
        #[arg(long, default_value_t = 10)]
        bmax: usize,
        /// Per-axis portal vocabulary cap of the solver.
        #[arg(long, default_value_t = 4)]
        axis_cap: u32,
        /// Cap on the size of the enumerated shift set.
        #[arg(long, default_value_t = 1 << 20)]
        shift_cap: u128,
    },
    /// Draw the shifted decomposition of an instance (d = 2).
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long)]
        r: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a result file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Domain(_) | Error::DegenerateGeodesic | Error::AmbiguousCrossing => {
                    ExitCode::from(2)
                }
                Error::ResourceCap(_) => ExitCode::from(3),
                Error::Internal(_) => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> hyptsp::Result<()> {
    match cmd {
        Cmd::Generate { kind, d, n, scale, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = gen::generate(&kind, d, n, scale, &mut rng)?;
            write_instance(&out, d, &points)
        }
        Cmd::Render { input, out, epsilon, r, seed } => {
            let (d, points) = read_instance(&input)?;
            let prep = prepare(&Instance { d, points, eps: epsilon, r })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shift = prep.shift_spec.sample(&mut rng);
            let tree =
                build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, &shift)?;
            let fs = build_facets(&tree, &PortalConfig::full(prep.r, prep.l_min))?;
            let doc = svg::render_svg(&tree, &fs, None)?;
            std::fs::write(&out, doc)
                .map_err(|e| Error::Domain(format!("cannot write {}: {e}", out.display())))
        }
        Cmd::Report { input } => {
            let record = read_result(&input)?;
            print_report(&record);
            Ok(())
        }
        Cmd::Run {
            mode,
            input,
            out,
            epsilon,
            r,
            shifts,
            seed,
            oracle,
            svg: svg_path,
            bmax,
            axis_cap,
            shift_cap,
        } => {
            let start = Instant::now();
            let (d, points) = read_instance(&input)?;
            let n = points.len();
            let prep = prepare(&Instance { d, points, eps: epsilon, r })?;
            let cfg = SolverConfig { b_max: bmax, axis_cap };
            let (shift_mode, shift_list) = pick_shifts(&prep, &shifts, seed, shift_cap)?;

            let mut record = ResultRecord {
                mode: match mode {
                    Mode::Tsp => "tsp".into(),
                    Mode::Steiner => "steiner".into(),
                    Mode::Harness => "harness".into(),
                },
                d,
                n,
                eps: epsilon,
                r: prep.r,
                seed,
                shift_mode,
                shifts: Vec::new(),
                best_length: f64::NAN,
                mean_length: f64::NAN,
                oracle_length: None,
                ratio: None,
                eps_observed: None,
                harness: Vec::new(),
                timing_ms: 0,
            };

            match mode {
                Mode::Tsp => {
                    let mut recs: Vec<ShiftRecord> = shift_list
                        .par_iter()
                        .enumerate()
                        .map(|(id, shift)| {
                            run_tsp(&prep, shift, &cfg).map(|run| ShiftRecord {
                                shift_id: id,
                                shift: shift.clone(),
                                length: run.tour.length,
                                exact: run.exact,
                                stats: run.stats,
                            })
                        })
                        .collect::<hyptsp::Result<Vec<_>>>()?;
                    recs.sort_by_key(|r| r.shift_id);
                    record.shifts = recs;
                    if oracle {
                        let (opt, _) = exact_tsp(&prep.perturbed.points)?;
                        record.oracle_length = Some(opt);
                    }
                }
                Mode::Steiner => {
                    let mut recs: Vec<ShiftRecord> = shift_list
                        .par_iter()
                        .enumerate()
                        .map(|(id, shift)| {
                            run_steiner(&prep, shift, &cfg).map(|run| ShiftRecord {
                                shift_id: id,
                                shift: shift.clone(),
                                length: run.tree.length,
                                exact: true,
                                stats: run.stats,
                            })
                        })
                        .collect::<hyptsp::Result<Vec<_>>>()?;
                    recs.sort_by_key(|r| r.shift_id);
                    record.shifts = recs;
                    if oracle {
                        let reference =
                            fine_grid_steiner_reference(&prep.perturbed.points, epsilon / 10.0, d)?;
                        record.oracle_length = Some(reference);
                    }
                }
                Mode::Harness => {
                    let (_, order) = exact_tsp(&prep.perturbed.points)?;
                    let tour_pts: Vec<_> =
                        order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
                    let mut recs: Vec<(ShiftRecord, HarnessRecord)> = shift_list
                        .par_iter()
                        .enumerate()
                        .map(|(id, shift)| {
                            let tree = build_compressed_tree(
                                &prep.perturbed.points,
                                d,
                                prep.l_min,
                                prep.l_max,
                                shift,
                            )?;
                            let fs = build_facets(&tree, &PortalConfig::full(prep.r, prep.l_min))?;
                            let (report, patched) = snap_and_patch(&tour_pts, &tree, &fs)?;
                            let (ok, _) =
                                check_r_simple(&patched, &tree, &fs, prep.r, SimpleMode::FixedGrid);
                            let shift_rec = ShiftRecord {
                                shift_id: id,
                                shift: shift.clone(),
                                length: report.patched_length,
                                exact: false,
                                stats: Default::default(),
                            };
                            let harness_rec = HarnessRecord {
                                shift_id: id,
                                horizontal_crossings: hyptsp::verify::count_horizontal_crossings(
                                    &tour_pts, &tree,
                                ),
                                top_crossings: count_top_crossings(&tour_pts, &tree),
                                fixed_grid_ok: ok,
                                report,
                            };
                            Ok((shift_rec, harness_rec))
                        })
                        .collect::<hyptsp::Result<Vec<_>>>()?;
                    recs.sort_by_key(|(r, _)| r.shift_id);
                    record.oracle_length = recs.first().map(|(_, h)| h.report.original_length);
                    for (s, h) in recs {
                        record.shifts.push(s);
                        record.harness.push(h);
                    }
                }
            }

            let lengths: Vec<f64> = record.shifts.iter().map(|s| s.length).collect();
            record.best_length = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
            record.mean_length = lengths.iter().sum::<f64>() / lengths.len().max(1) as f64;
            if let Some(opt) = record.oracle_length {
                let ratio = record.best_length / opt;
                record.ratio = Some(ratio);
                record.eps_observed = Some(ratio - 1.0);
                if matches!(mode, Mode::Tsp) && ratio < 1.0 - 1e-9 {
                    return Err(Error::Internal(format!(
                        "tour beat the exact oracle: ratio {ratio}"
                    )));
                }
            }
            record.timing_ms = start.elapsed().as_millis();

            if let Some(path) = svg_path {
                let best_id = record
                    .shifts
                    .iter()
                    .min_by(|a, b| a.length.partial_cmp(&b.length).unwrap())
                    .map(|s| s.shift_id)
                    .unwrap_or(0);
                let shift = &shift_list[best_id];
                let tree =
                    build_compressed_tree(&prep.perturbed.points, d, prep.l_min, prep.l_max, shift)?;
                let fs = build_facets(
                    &tree,
                    &PortalConfig::capped(prep.r, prep.l_min, cfg.axis_cap),
                )?;
                let tour = match mode {
                    Mode::Tsp => Some(run_tsp(&prep, shift, &cfg)?.tour),
                    Mode::Harness => {
                        let full = build_facets(&tree, &PortalConfig::full(prep.r, prep.l_min))?;
                        let (_, order) = exact_tsp(&prep.perturbed.points)?;
                        let pts: Vec<_> =
                            order.iter().map(|&i| prep.perturbed.points[i].clone()).collect();
                        Some(snap_and_patch(&pts, &tree, &full)?.1)
                    }
                    Mode::Steiner => None,
                };
                let doc = svg::render_svg(&tree, &fs, tour.as_ref())?;
                std::fs::write(&path, doc)
                    .map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))?;
            }
            write_result(&out, &record)
        }
    }
}

fn pick_shifts(
    prep: &Prepared,
    shifts: &str,
    seed: u64,
    cap: u128,
) -> hyptsp::Result<(String, Vec<Shift>)> {
    if shifts == "enumerate" {
        let list = prep.shift_spec.enumerate(cap)?;
        return Ok(("enumerate".into(), list));
    }
    let count: usize = shifts
        .parse()
        .map_err(|_| Error::Domain(format!("--shifts must be a count or 'enumerate', got '{shifts}'")))?;
    if count == 0 {
        return Err(Error::Domain("--shifts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list = (0..count).map(|_| prep.shift_spec.sample(&mut rng)).collect();
    Ok((format!("{count}"), list))
}

fn print_report(record: &ResultRecord) {
    println!(
        "mode {}  d {}  n {}  eps {}  r {}  shifts {} ({})",
        record.mode,
        record.d,
        record.n,
        record.eps,
        record.r,
        record.shifts.len(),
        record.shift_mode
    );
    println!("best length  {:.9}", record.best_length);
    println!("mean length  {:.9}", record.mean_length);
    if let Some(opt) = record.oracle_length {
        println!("oracle       {:.9}", opt);
        println!("ratio        {:.9}", record.ratio.unwrap_or(f64::NAN));
        println!("eps observed {:.9}", record.eps_observed.unwrap_or(f64::NAN));
    }
    if !record.harness.is_empty() {
        let rel: Vec<f64> = record
            .harness
            .iter()
            .map(|h| (h.report.patched_length - h.report.original_length) / h.report.original_length)
            .collect();
        let mean_rel = rel.iter().sum::<f64>() / rel.len() as f64;
        let all_simple = record.harness.iter().all(|h| h.fixed_grid_ok);
        let max_weighted = record
            .harness
            .iter()
            .map(|h| h.report.weighted_sum)
            .fold(0.0f64, f64::max);
        println!("patch cost   mean {:.6}  (relative to the oracle tour)", mean_rel);
        println!("weighted vertical crossing sum  max {:.6}", max_weighted);
        println!("patched tours r-simple: {}", if all_simple { "yes" } else { "NO" });
    }
    println!("timing       {} ms", record.timing_ms);
}

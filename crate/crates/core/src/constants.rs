//! Frozen empirical constants.
//!
//! The asymptotic bounds behind the scheme contain unspecified O(.) factors.
//! We freeze each of them once, by running the calibration pass in
//! `examples/calibrate.rs` over large random samples and adding a safety
//! margin, and then regression-test against the frozen values. Re-run the
//! calibration and update here if the constructions change.

/// Bi-Lipschitz constant of the level-0 chart: for points p, q in one tile,
/// (1/K) * d_H(p,q) <= |phi(p) - phi(q)| <= K * sqrt(d) * d_H(p,q).
/// Calibrated over 1e5 pairs per dimension, +10% margin.
pub const PHI_BILIPSCHITZ_K: [f64; 2] = [2.31, 2.53]; // d = 2, d = 3

/// Per-facet portal count bound: |portals(F)| <= K_PORTAL[d-2] * r^(d-1),
/// over all facet kinds and r in {1,2,4,8,16}.
pub const K_PORTAL: [f64; 2] = [23.0, 92.0]; // d = 2, d = 3

/// Weighted vertical crossing bound: sum of 1/z over sided crossings with
/// the level-l_min vertical grid is <= C * (d sqrt(d) / delta) * len(tour).
pub const C_WEIGHTED_CROSSING: f64 = 1.9;

/// Horizontal crossing count bound: |J| <= C * (sqrt(d) / delta) * len(tour).
pub const C_HORIZONTAL_CROSSING: f64 = 1.6;

/// Expected crossings with Top facets of non-negative-level cells over
/// random shifts: mean <= C * sqrt(d) * len(tour).
pub const C_TOP_CROSSING: f64 = 1.3;

/// Minimum pairwise distance of distinct perturbed points:
/// >= C * delta / sqrt(d).
pub const C_MIN_PAIR_DIST: f64 = 0.35;

/// Patching overhead: mean over shifts of (patched - original)/original for
/// oracle tours is <= C * d^3 / r.
pub const C_PATCH: f64 = 0.59;

/// DP approximation overhead: mean over shifts of DP length is
/// <= (1 + C / r) * OPT on the calibration distribution.
pub const C_TSP_GAP: f64 = 1.33;

/// Steiner output vs the fine-grid reference: ratio <= 1 + 2*eps on at
/// least this fraction of instances.
pub const STEINER_RATIO_FRACTION: f64 = 0.9;

//! The binary tiling, the hybrid hyperbolic quadtree and its compressed,
//! shifted form.
//!
//! Cells are cube-based horoboxes stored implicitly by lattice coordinates in
//! a fixed "standard frame". A cell of level `l >= 1` spans `z in [1, 2^(l+1)]`
//! and has one tiling-cell child on top plus `2^(d-1)` level-`(l-1)` cells
//! below it. Level-0 cells are tiles of the binary tiling; levels `l < 0` are
//! Euclidean quadtree splits of a tile in its chart (uniform in `x` and in
//! `log z`). The random shift `(a_x, a_z)` moves the tree by
//! `(x, z) -> (x - a_x, z / a_z)`; we keep the tree in the standard frame and
//! carry points into it with the inverse map instead.

use crate::error::{Error, Result};
use crate::hgeom::{hyp_distance_unchecked, HPoint};
use serde::{Deserialize, Serialize};

/// Tie tolerance for lattice index decisions.
const TIE_TOL: f64 = 1e-12;

/// Width parameter of the standard tile: w = 1/sqrt(d-1).
pub fn tile_width(d: usize) -> f64 {
    1.0 / ((d - 1) as f64).sqrt()
}

/// Euclidean axis-aligned bounding horobox after normalization:
/// `x_min = 0`, `z_min = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BBox {
    /// Per-axis horizontal extent (x ranges over [0, x_ext[i]]).
    pub x_ext: Vec<f64>,
    /// Top height (z ranges over [1, z_max]).
    pub z_max: f64,
    /// Largest distance between non-adjacent facets.
    pub s: f64,
}

impl BBox {
    pub fn corners(&self) -> Vec<HPoint> {
        let d1 = self.x_ext.len();
        let mut out = Vec::new();
        for mask in 0..(1usize << d1) {
            for z in [1.0, self.z_max] {
                let x: Vec<f64> = (0..d1)
                    .map(|i| if mask >> i & 1 == 1 { self.x_ext[i] } else { 0.0 })
                    .collect();
                out.push(HPoint { x, z });
            }
        }
        out
    }

    pub fn diameter(&self) -> f64 {
        max_pairwise_distance(&self.corners())
    }
}

pub fn max_pairwise_distance(pts: &[HPoint]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max(hyp_distance_unchecked(&pts[i], &pts[j]));
        }
    }
    best
}

/// Normalize the instance: translate and scale (an isometry) so that the
/// smallest axis-aligned bounding box has `x_min = 0`, `z_min = 1`. Returns
/// the transformed points, the box, and the facet-distance scale `s`.
/// Degenerate extents are inflated to keep the box full-dimensional.
pub fn normalize_bounding_box(points: &[HPoint]) -> Result<(Vec<HPoint>, BBox, f64)> {
    if points.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 points, got {}", points.len())));
    }
    let d1 = points[0].x.len();
    for p in points {
        p.validate()?;
        if p.x.len() != d1 {
            return Err(Error::Domain("mixed dimensions in point set".into()));
        }
    }
    let mut x_lo = vec![f64::INFINITY; d1];
    let mut x_hi = vec![f64::NEG_INFINITY; d1];
    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    for p in points {
        for i in 0..d1 {
            x_lo[i] = x_lo[i].min(p.x[i]);
            x_hi[i] = x_hi[i].max(p.x[i]);
        }
        z_lo = z_lo.min(p.z);
        z_hi = z_hi.max(p.z);
    }
    // T(x, z) = ((x - x_lo)/z_lo, z/z_lo) is a hyperbolic isometry.
    let normalized: Vec<HPoint> = points
        .iter()
        .map(|p| HPoint {
            x: p.x.iter().zip(&x_lo).map(|(v, lo)| (v - lo) / z_lo).collect(),
            z: p.z / z_lo,
        })
        .collect();
    let mut x_ext: Vec<f64> = (0..d1).map(|i| (x_hi[i] - x_lo[i]) / z_lo).collect();
    let mut z_max = z_hi / z_lo;

    // s from the un-inflated box: opposite horospheres are ln(z_max) apart,
    // opposite vertical facets are closest along their top edge.
    let mut s = z_max.ln();
    for ext in &x_ext {
        s = s.max(2.0 * (ext / (2.0 * z_max)).asinh());
    }
    if s <= 0.0 {
        s = 1e-6; // all points coincide
    }
    for ext in x_ext.iter_mut() {
        if *ext <= 0.0 {
            *ext = 1e-6 * s;
        }
    }
    if z_max <= 1.0 {
        z_max = (1e-6 * s).exp();
    }
    Ok((normalized, BBox { x_ext, z_max, s }, s))
}

/// A cell of the hybrid tree, stored implicitly in the standard frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKey {
    /// Level `l >= 1`: a complete height-`l` portion of the binary tiling,
    /// `x in prod [j_i 2^l w, (j_i+1) 2^l w]`, `z in [1, 2^(l+1)]`.
    Hybrid { level: i32, idx: Vec<i64> },
    /// One tile at scale `2^m`: `x` side `2^m w`, `z in [2^m, 2^(m+1)]`.
    /// Tiles at scale 0 are the level-0 cells.
    Tile { scale: i32, idx: Vec<i64> },
    /// Depth-`k` quadtree cell inside a tile (level `-k`): splits are uniform
    /// in `x` and in `log2 z` within the tile.
    Neg { scale: i32, tile: Vec<i64>, depth: u32, xi: Vec<i64>, zi: i64 },
}

/// Axis-aligned extent of a cell in the standard frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl CellBox {
    pub fn corners(&self) -> Vec<HPoint> {
        let d1 = self.x_lo.len();
        let mut out = Vec::new();
        for mask in 0..(1usize << d1) {
            for z in [self.z_lo, self.z_hi] {
                let x: Vec<f64> = (0..d1)
                    .map(|i| if mask >> i & 1 == 1 { self.x_hi[i] } else { self.x_lo[i] })
                    .collect();
                out.push(HPoint { x, z });
            }
        }
        out
    }

    pub fn diameter(&self) -> f64 {
        max_pairwise_distance(&self.corners())
    }

    pub fn contains(&self, p: &HPoint, tol: f64) -> bool {
        p.z >= self.z_lo - tol
            && p.z <= self.z_hi + tol
            && p
                .x
                .iter()
                .zip(self.x_lo.iter().zip(&self.x_hi))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn center(&self) -> HPoint {
        HPoint {
            x: self.x_lo.iter().zip(&self.x_hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            z: (self.z_lo * self.z_hi).sqrt(),
        }
    }

    /// Shifted copy: the cell as it sits in the normalized frame under `a`.
    pub fn shifted(&self, a: &Shift) -> CellBox {
        CellBox {
            x_lo: self.x_lo.iter().zip(&a.a_x).map(|(v, ax)| v - ax).collect(),
            x_hi: self.x_hi.iter().zip(&a.a_x).map(|(v, ax)| v - ax).collect(),
            z_lo: self.z_lo / a.a_z,
            z_hi: self.z_hi / a.a_z,
        }
    }
}

impl CellKey {
    /// Hybrid-tree level: tiles sit at level 0, depth-k quadtree cells at -k.
    pub fn level(&self) -> i32 {
        match self {
            CellKey::Hybrid { level, .. } => *level,
            CellKey::Tile { .. } => 0,
            CellKey::Neg { depth, .. } => -(*depth as i32),
        }
    }

    pub fn boxed(&self, d: usize) -> CellBox {
        let w = tile_width(d);
        match self {
            CellKey::Hybrid { level, idx } => {
                let side = (*level as f64).exp2() * w;
                CellBox {
                    x_lo: idx.iter().map(|j| *j as f64 * side).collect(),
                    x_hi: idx.iter().map(|j| (*j + 1) as f64 * side).collect(),
                    z_lo: 1.0,
                    z_hi: ((*level + 1) as f64).exp2(),
                }
            }
            CellKey::Tile { scale, idx } => {
                let side = (*scale as f64).exp2() * w;
                CellBox {
                    x_lo: idx.iter().map(|j| *j as f64 * side).collect(),
                    x_hi: idx.iter().map(|j| (*j + 1) as f64 * side).collect(),
                    z_lo: (*scale as f64).exp2(),
                    z_hi: ((*scale + 1) as f64).exp2(),
                }
            }
            CellKey::Neg { scale, tile, depth, xi, zi } => {
                let tile_side = (*scale as f64).exp2() * w;
                let frac = (-(*depth as f64)).exp2();
                let side = tile_side * frac;
                let x_lo: Vec<f64> = tile
                    .iter()
                    .zip(xi)
                    .map(|(t, x)| *t as f64 * tile_side + *x as f64 * side)
                    .collect();
                let x_hi: Vec<f64> = x_lo.iter().map(|lo| lo + side).collect();
                CellBox {
                    x_lo,
                    x_hi,
                    z_lo: (*scale as f64 + *zi as f64 * frac).exp2(),
                    z_hi: (*scale as f64 + (*zi + 1) as f64 * frac).exp2(),
                }
            }
        }
    }
}

/// Structural children of a cell: a level-`l` cell splits into its top tile
/// plus `2^(d-1)` level-`(l-1)` cells; tiles and negative cells split
/// quadtree-style into `2^d` children. Leaf-level cells have none.
pub fn cell_children(cell: &CellKey, d: usize, l_min: i32) -> Vec<CellKey> {
    if cell.level() <= l_min {
        return Vec::new();
    }
    let d1 = d - 1;
    match cell {
        CellKey::Hybrid { level, idx } => {
            let mut out = vec![CellKey::Tile { scale: *level, idx: idx.clone() }];
            for mask in 0..(1usize << d1) {
                let child_idx: Vec<i64> =
                    idx.iter().enumerate().map(|(i, j)| 2 * j + (mask >> i & 1) as i64).collect();
                out.push(if *level - 1 >= 1 {
                    CellKey::Hybrid { level: level - 1, idx: child_idx }
                } else {
                    CellKey::Tile { scale: 0, idx: child_idx }
                });
            }
            out
        }
        CellKey::Tile { scale, idx } => {
            let mut out = Vec::new();
            for mask in 0..(1usize << d1) {
                for z in 0..2i64 {
                    out.push(CellKey::Neg {
                        scale: *scale,
                        tile: idx.clone(),
                        depth: 1,
                        xi: (0..d1).map(|i| (mask >> i & 1) as i64).collect(),
                        zi: z,
                    });
                }
            }
            out
        }
        CellKey::Neg { scale, tile, depth, xi, zi } => {
            let mut out = Vec::new();
            for mask in 0..(1usize << d1) {
                for z in 0..2i64 {
                    out.push(CellKey::Neg {
                        scale: *scale,
                        tile: tile.clone(),
                        depth: depth + 1,
                        xi: xi
                            .iter()
                            .enumerate()
                            .map(|(i, v)| 2 * v + (mask >> i & 1) as i64)
                            .collect(),
                        zi: 2 * zi + z,
                    });
                }
            }
            out
        }
    }
}

/// Index of `value` on the grid `lo + step*Z`, clamped to `[lo_idx, max_idx]`.
/// Points on a grid line go to the smaller cell (the paper leaves boundary
/// assignment arbitrary; we fix the lexicographically smallest adjacent
/// cell, clamped at the minimum edge).
fn grid_index_tie_down(value: f64, lo: f64, step: f64, lo_idx: i64, max_idx: i64) -> i64 {
    let raw = (value - lo) / step;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= TIE_TOL * raw.abs().max(1.0) {
        nearest as i64 - 1
    } else {
        raw.floor() as i64
    };
    k.clamp(lo_idx, max_idx)
}

/// Which structural child of `cell` contains the (standard-frame) point.
pub fn child_containing(cell: &CellKey, p: &HPoint, d: usize, l_min: i32) -> Result<CellKey> {
    if cell.level() <= l_min {
        return Err(Error::Internal("leaf-level cell has no children".into()));
    }
    let d1 = d - 1;
    let w = tile_width(d);
    match cell {
        CellKey::Hybrid { level, idx } => {
            let split_z = (*level as f64).exp2();
            let lg = p.z.log2();
            let on_boundary = (lg - *level as f64).abs() <= TIE_TOL * lg.abs().max(1.0);
            if p.z > split_z && !on_boundary {
                return Ok(CellKey::Tile { scale: *level, idx: idx.clone() });
            }
            let child_side = ((*level - 1) as f64).exp2() * w;
            let child_idx: Vec<i64> = (0..d1)
                .map(|i| {
                    2 * idx[i]
                        + grid_index_tie_down(p.x[i], idx[i] as f64 * 2.0 * child_side, child_side, 0, 1)
                })
                .collect();
            Ok(if *level - 1 >= 1 {
                CellKey::Hybrid { level: level - 1, idx: child_idx }
            } else {
                CellKey::Tile { scale: 0, idx: child_idx }
            })
        }
        CellKey::Tile { scale, idx } => {
            let bx = cell.boxed(d);
            let side = (bx.x_hi[0] - bx.x_lo[0]) / 2.0;
            let xi: Vec<i64> =
                (0..d1).map(|i| grid_index_tie_down(p.x[i], bx.x_lo[i], side, 0, 1)).collect();
            let zi = grid_index_tie_down(p.z.log2(), *scale as f64, 0.5, 0, 1);
            Ok(CellKey::Neg { scale: *scale, tile: idx.clone(), depth: 1, xi, zi })
        }
        CellKey::Neg { scale, tile, depth, xi, zi } => {
            let bx = cell.boxed(d);
            let side = (bx.x_hi[0] - bx.x_lo[0]) / 2.0;
            let child_frac = (-((*depth + 1) as f64)).exp2();
            let new_xi: Vec<i64> = (0..d1)
                .map(|i| 2 * xi[i] + grid_index_tie_down(p.x[i], bx.x_lo[i], side, 0, 1))
                .collect();
            let z_lo_log = *scale as f64 + *zi as f64 * child_frac * 2.0;
            let new_zi = 2 * zi + grid_index_tie_down(p.z.log2(), z_lo_log, child_frac, 0, 1);
            Ok(CellKey::Neg {
                scale: *scale,
                tile: tile.clone(),
                depth: depth + 1,
                xi: new_xi,
                zi: new_zi,
            })
        }
    }
}

/// Level-`level` cell of the standard (unshifted) tree containing a
/// standard-frame point, for `level <= 0`. Used by the perturbation, which
/// happens before shifting.
pub fn cell_at_level(p: &HPoint, d: usize, level: i32) -> Result<CellKey> {
    cell_at_level_in(p, d, level, true)
}

/// As `cell_at_level`; `origin_clamp` keeps boundary ties at the instance
/// origin inside the nonnegative quadrant (wanted when perturbing a
/// normalized instance, unwanted when locating arbitrary points of H^d).
pub fn cell_at_level_in(p: &HPoint, d: usize, level: i32, origin_clamp: bool) -> Result<CellKey> {
    if p.z <= 0.0 || !p.z.is_finite() {
        return Err(Error::Domain(format!("point must have finite z > 0, got z={}", p.z)));
    }
    let w = tile_width(d);
    let lg = p.z.log2();
    let nearest = lg.round();
    let on_pow2 = (lg - nearest).abs() <= TIE_TOL * lg.abs().max(1.0);
    let scale = if on_pow2 { nearest as i32 - 1 } else { lg.floor() as i32 };
    let scale = if origin_clamp { scale.max(0) } else { scale };
    let side = (scale as f64).exp2() * w;
    let lo_clamp = if origin_clamp { 0 } else { i64::MIN >> 1 };
    let idx: Vec<i64> = p
        .x
        .iter()
        .map(|v| grid_index_tie_down(*v, 0.0, side, lo_clamp, i64::MAX >> 1))
        .collect();
    let mut cell = CellKey::Tile { scale, idx };
    let mut l = 0;
    while l > level {
        cell = child_containing(&cell, p, d, level)?;
        l -= 1;
    }
    Ok(cell)
}

/// Diameter of the standard bottom-row cell at the given level (`<= 0`).
/// Bottom-row cells are the largest of their level, so this bounds all of
/// them.
pub fn cell_diameter(d: usize, level: i32) -> f64 {
    debug_assert!(level <= 0);
    let cell = if level == 0 {
        CellKey::Tile { scale: 0, idx: vec![0; d - 1] }
    } else {
        CellKey::Neg {
            scale: 0,
            tile: vec![0; d - 1],
            depth: (-level) as u32,
            xi: vec![0; d - 1],
            zi: 0,
        }
    };
    cell.boxed(d).diameter()
}

/// Level selection: `l_min` is the largest level (capped at 0) where twice
/// the cell diameter is below `(eps/((d+1)n)) * diam(B)`, and `l_max - 1` is
/// the smallest level at which a standard cell fully contains `B`.
pub fn compute_levels(bbox: &BBox, d: usize, eps: f64, n: usize) -> Result<(i32, i32)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    let target = eps / ((d + 1) as f64 * n as f64) * bbox.diameter();
    let mut l_min = 0;
    while 2.0 * cell_diameter(d, l_min) >= target {
        l_min -= 1;
        if l_min < -48 {
            return Err(Error::ResourceCap(
                "level selection descended below -48; eps * diam too small".into(),
            ));
        }
    }

    let w = tile_width(d);
    let max_ext = bbox.x_ext.iter().cloned().fold(0.0f64, f64::max);
    let mut l_star = l_min + 1;
    loop {
        let fits_z = if l_star >= 1 {
            ((l_star + 1) as f64).exp2() >= bbox.z_max
        } else {
            (l_star as f64).exp2().exp2() >= bbox.z_max
        };
        let fits_x = (l_star as f64).exp2() * w >= max_ext;
        if fits_z && fits_x {
            break;
        }
        l_star += 1;
        if l_star > 62 {
            return Err(Error::ResourceCap("bounding box too large for level search".into()));
        }
    }
    Ok((l_min, l_star + 1))
}

/// Root cell of the tree: the level-`l_max` cell at the origin corner, whose
/// lexicographically minimal child contains the bounding box.
pub fn root_cell(d: usize, l_max: i32) -> CellKey {
    let d1 = d - 1;
    if l_max >= 1 {
        CellKey::Hybrid { level: l_max, idx: vec![0; d1] }
    } else if l_max == 0 {
        CellKey::Tile { scale: 0, idx: vec![0; d1] }
    } else {
        CellKey::Neg { scale: 0, tile: vec![0; d1], depth: (-l_max) as u32, xi: vec![0; d1], zi: 0 }
    }
}

/// The random shift. `a_x` ranges over `x_min` of level-`l_min` cells in the
/// lexicographically minimal child of the root, `a_z` over their `z_min`
/// values in [1, 2). Both sets are discrete; indices are kept for exact
/// lattice arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub ix: Vec<i64>,
    pub iz: i64,
    pub a_x: Vec<f64>,
    pub a_z: f64,
}

impl Shift {
    pub fn identity(d: usize) -> Shift {
        Shift { ix: vec![0; d - 1], iz: 0, a_x: vec![0.0; d - 1], a_z: 1.0 }
    }
}

/// The discrete sets the shift is drawn from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub d: usize,
    pub l_min: i32,
    pub l_max: i32,
    /// Number of admissible `a_x` values per horizontal axis.
    pub nx: u64,
    /// Number of admissible `a_z` values.
    pub nz: u64,
}

impl ShiftSpec {
    pub fn new(d: usize, l_min: i32, l_max: i32) -> ShiftSpec {
        let l_star = l_max - 1;
        let nx = 1u64 << ((l_star - l_min).min(62) as u64);
        let nz = 1u64 << ((l_star.min(0) - l_min).min(62) as u64);
        ShiftSpec { d, l_min, l_max, nx, nz }
    }

    pub fn count(&self) -> u128 {
        (self.nx as u128).pow((self.d - 1) as u32) * self.nz as u128
    }

    pub fn shift_from_indices(&self, ix: &[i64], iz: i64) -> Shift {
        let w = tile_width(self.d);
        let step = (self.l_min as f64).exp2() * w;
        Shift {
            ix: ix.to_vec(),
            iz,
            a_x: ix.iter().map(|i| *i as f64 * step).collect(),
            a_z: (iz as f64 * (self.l_min as f64).exp2()).exp2(),
        }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Shift {
        let ix: Vec<i64> = (0..self.d - 1).map(|_| rng.gen_range(0..self.nx) as i64).collect();
        let iz = rng.gen_range(0..self.nz) as i64;
        self.shift_from_indices(&ix, iz)
    }

    /// Full shift set for the derandomized mode.
    pub fn enumerate(&self, cap: u128) -> Result<Vec<Shift>> {
        let count = self.count();
        if count > cap {
            return Err(Error::ResourceCap(format!(
                "shift enumeration would produce {count} shifts (cap {cap})"
            )));
        }
        let mut out = Vec::with_capacity(count as usize);
        let d1 = self.d - 1;
        let mut ix = vec![0i64; d1];
        loop {
            for iz in 0..self.nz as i64 {
                out.push(self.shift_from_indices(&ix, iz));
            }
            let mut axis = 0;
            loop {
                if axis == d1 {
                    return Ok(out);
                }
                ix[axis] += 1;
                if (ix[axis] as u64) < self.nx {
                    break;
                }
                ix[axis] = 0;
                axis += 1;
            }
        }
    }
}

/// The shift as a map on points: `(x, z) -> (x - a_x, z / a_z)`. Not an
/// isometry; distances change by a factor of at most `a_z`.
pub fn apply_shift(p: &HPoint, a: &Shift) -> HPoint {
    HPoint { x: p.x.iter().zip(&a.a_x).map(|(v, ax)| v - ax).collect(), z: p.z / a.a_z }
}

/// Inverse of `apply_shift`: carries a normalized point into the standard
/// frame the tree is stored in.
pub fn to_tree_frame(p: &HPoint, a: &Shift) -> HPoint {
    HPoint { x: p.x.iter().zip(&a.a_x).map(|(v, ax)| v + ax).collect(), z: p.z * a.a_z }
}

/// Result of snapping the points to centers of level-`l_min` cells.
#[derive(Debug, Clone)]
pub struct Perturbed {
    pub points: Vec<HPoint>,
    pub cells: Vec<CellKey>,
    /// Maximum diameter of level-`l_min` cells (standard frame).
    pub delta: f64,
    /// Offset added to every coordinate after snapping.
    pub mu: f64,
}

/// Snap each normalized point to the center of the level-`l_min` standard
/// cell containing it, then add the offset `mu * (1, ..., 1)` with
/// `mu = 1e-9 * delta` so no perturbed point lies on a cell boundary under
/// any shift.
pub fn perturb(points: &[HPoint], d: usize, l_min: i32) -> Result<Perturbed> {
    let delta = cell_diameter(d, l_min);
    let mu = 1e-9 * delta;
    let mut out = Vec::with_capacity(points.len());
    let mut cells = Vec::with_capacity(points.len());
    for p in points {
        let cell = cell_at_level(p, d, l_min)?;
        let mut c = cell.boxed(d).center();
        for v in c.x.iter_mut() {
            *v += mu;
        }
        c.z += mu;
        out.push(c);
        cells.push(cell);
    }
    Ok(Perturbed { points: out, cells, delta, mu })
}

/// A TSP / Steiner instance in half-space coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instance {
    pub d: usize,
    pub points: Vec<HPoint>,
    pub eps: f64,
    /// Portal density parameter; defaults to ceil(8/eps) when absent.
    pub r: Option<u32>,
}

impl Instance {
    pub fn effective_r(&self) -> u32 {
        self.r.unwrap_or_else(|| (8.0 / self.eps).ceil() as u32)
    }
}

/// Everything shifts and solvers need, computed once per instance:
/// normalization, level selection, perturbation, and the shift lattice.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub d: usize,
    pub eps: f64,
    pub r: u32,
    pub normalized: Vec<HPoint>,
    pub bbox: BBox,
    pub s: f64,
    pub l_min: i32,
    pub l_max: i32,
    pub perturbed: Perturbed,
    pub shift_spec: ShiftSpec,
}

pub fn prepare(instance: &Instance) -> Result<Prepared> {
    if instance.d != 2 && instance.d != 3 {
        return Err(Error::Domain(format!("d must be 2 or 3, got {}", instance.d)));
    }
    for p in &instance.points {
        if p.dim() != instance.d {
            return Err(Error::Domain(format!(
                "point dimension {} does not match d = {}",
                p.dim(),
                instance.d
            )));
        }
    }
    let (normalized, bbox, s) = normalize_bounding_box(&instance.points)?;
    let (l_min, l_max) = compute_levels(&bbox, instance.d, instance.eps, instance.points.len())?;
    let perturbed = perturb(&normalized, instance.d, l_min)?;
    let shift_spec = ShiftSpec::new(instance.d, l_min, l_max);
    Ok(Prepared {
        d: instance.d,
        eps: instance.eps,
        r: instance.effective_r(),
        normalized,
        bbox,
        s,
        l_min,
        l_max,
        perturbed,
        shift_spec,
    })
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum NodeKind {
    Leaf { points: Vec<usize> },
    Branch { children: Vec<NodeId> },
    /// A contracted maximal chain of degree-one cells: the node's region is
    /// `cell \ inner`, and `child` is the tree below the inner cell.
    Compressed { inner: CellKey, child: NodeId },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub cell: CellKey,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
}

/// Compressed hybrid tree under one shift. Point geometry stays in the
/// normalized frame; the tree lattice lives in the standard frame.
#[derive(Debug, Clone)]
pub struct ShiftedTree {
    pub d: usize,
    pub l_min: i32,
    pub l_max: i32,
    pub shift: Shift,
    pub nodes: Vec<Node>,
    pub root: NodeId,
    /// Perturbed points in the normalized frame.
    pub points: Vec<HPoint>,
    /// The same points carried into the standard frame.
    pub points_tree: Vec<HPoint>,
    /// Leaf node holding each point.
    pub point_leaf: Vec<NodeId>,
    /// Maximum diameter of level-`l_min` cells of this shifted tree.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocateOutcome {
    Leaf(NodeId),
    /// The point lies in the carved region of a compressed node.
    CompressedRegion(NodeId),
    /// The point lies in an empty sibling cell below the given branch node.
    EmptyCell { node: NodeId, cell: CellKey },
}

/// Build the compressed hybrid tree for the perturbed points under a shift.
pub fn build_compressed_tree(
    perturbed: &[HPoint],
    d: usize,
    l_min: i32,
    l_max: i32,
    shift: &Shift,
) -> Result<ShiftedTree> {
    if perturbed.is_empty() {
        return Err(Error::Domain("cannot build a tree on an empty point set".into()));
    }
    let points_tree: Vec<HPoint> = perturbed.iter().map(|p| to_tree_frame(p, shift)).collect();
    let root_key = root_cell(d, l_max);
    let root_box = root_key.boxed(d);
    for q in &points_tree {
        if !root_box.contains(q, 1e-9) {
            return Err(Error::Internal(format!("point {q:?} escapes the root cell")));
        }
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut point_leaf = vec![usize::MAX; perturbed.len()];
    let all: Vec<usize> = (0..perturbed.len()).collect();
    let root =
        build_node(root_key, &all, None, d, l_min, &points_tree, &mut nodes, &mut point_leaf)?;

    // The shifted bottom-row leaf cell is the largest one: its horizontal
    // extent is unchanged while z shrinks by a_z.
    let standard = if l_min == 0 {
        CellKey::Tile { scale: 0, idx: vec![0; d - 1] }
    } else {
        CellKey::Neg {
            scale: 0,
            tile: vec![0; d - 1],
            depth: (-l_min) as u32,
            xi: vec![0; d - 1],
            zi: 0,
        }
    };
    let delta = standard.boxed(d).shifted(shift).diameter();

    Ok(ShiftedTree {
        d,
        l_min,
        l_max,
        shift: shift.clone(),
        nodes,
        root,
        points: perturbed.to_vec(),
        points_tree,
        point_leaf,
        delta,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    cell: CellKey,
    pts: &[usize],
    parent: Option<NodeId>,
    d: usize,
    l_min: i32,
    points_tree: &[HPoint],
    nodes: &mut Vec<Node>,
    point_leaf: &mut [usize],
) -> Result<NodeId> {
    debug_assert!(!pts.is_empty());
    if cell.level() <= l_min {
        let id = nodes.len();
        nodes.push(Node { cell, parent, kind: NodeKind::Leaf { points: pts.to_vec() } });
        for &p in pts {
            point_leaf[p] = id;
        }
        return Ok(id);
    }
    let split = split_points(&cell, pts, d, l_min, points_tree)?;
    if split.len() >= 2 {
        let id = nodes.len();
        nodes.push(Node { cell, parent, kind: NodeKind::Branch { children: Vec::new() } });
        let mut children = Vec::with_capacity(split.len());
        for (child_cell, child_pts) in split {
            children.push(build_node(
                child_cell,
                &child_pts,
                Some(id),
                d,
                l_min,
                points_tree,
                nodes,
                point_leaf,
            )?);
        }
        if let NodeKind::Branch { children: c } = &mut nodes[id].kind {
            *c = children;
        }
        return Ok(id);
    }

    // Exactly one nonempty child: walk the degree-one chain to its end.
    let (mut inner, _) = split.into_iter().next().unwrap();
    loop {
        if inner.level() <= l_min {
            break;
        }
        let next = split_points(&inner, pts, d, l_min, points_tree)?;
        if next.len() != 1 {
            break;
        }
        inner = next.into_iter().next().unwrap().0;
    }
    let id = nodes.len();
    nodes.push(Node { cell, parent, kind: NodeKind::Compressed { inner: inner.clone(), child: 0 } });
    let child = build_node(inner, pts, Some(id), d, l_min, points_tree, nodes, point_leaf)?;
    if let NodeKind::Compressed { child: c, .. } = &mut nodes[id].kind {
        *c = child;
    }
    Ok(id)
}

fn split_points(
    cell: &CellKey,
    pts: &[usize],
    d: usize,
    l_min: i32,
    points_tree: &[HPoint],
) -> Result<Vec<(CellKey, Vec<usize>)>> {
    let mut out: Vec<(CellKey, Vec<usize>)> = Vec::new();
    for &p in pts {
        let child = child_containing(cell, &points_tree[p], d, l_min)?;
        match out.iter_mut().find(|(c, _)| *c == child) {
            Some((_, v)) => v.push(p),
            None => out.push((child, vec![p])),
        }
    }
    Ok(out)
}

impl ShiftedTree {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Number of distinct perturbed point locations in a leaf.
    pub fn distinct_leaf_occupancy(&self, id: NodeId) -> usize {
        match &self.nodes[id].kind {
            NodeKind::Leaf { points } => {
                let mut distinct: Vec<&HPoint> = Vec::new();
                for &p in points {
                    if !distinct.iter().any(|q| q.approx_eq(&self.points[p], 1e-12)) {
                        distinct.push(&self.points[p]);
                    }
                }
                distinct.len()
            }
            _ => 0,
        }
    }

    /// Walk from the root to the region containing a normalized-frame point.
    pub fn locate(&self, p: &HPoint) -> Result<LocateOutcome> {
        let q = to_tree_frame(p, &self.shift);
        let root_box = self.nodes[self.root].cell.boxed(self.d);
        if !root_box.contains(&q, 1e-9) {
            return Err(Error::Domain("point outside the root cell".into()));
        }
        let mut id = self.root;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => return Ok(LocateOutcome::Leaf(id)),
                NodeKind::Compressed { inner, child } => {
                    if inner.boxed(self.d).contains(&q, 0.0) {
                        id = *child;
                    } else {
                        return Ok(LocateOutcome::CompressedRegion(id));
                    }
                }
                NodeKind::Branch { children } => {
                    let cell = self.nodes[id].cell.clone();
                    let child_cell = child_containing(&cell, &q, self.d, self.l_min)?;
                    match children.iter().find(|&&c| self.nodes[c].cell == child_cell) {
                        Some(&c) => id = c,
                        None => return Ok(LocateOutcome::EmptyCell { node: id, cell: child_cell }),
                    }
                }
            }
        }
    }

    /// All leaf node ids.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].kind, NodeKind::Leaf { .. }))
            .collect()
    }
}

/// The chart of a tiling cell `C` under shift `a`:
/// `phi(x, z) = ((x - x_min(C)) sqrt(d-1) / (a_z z_min(C)), log2(z / z_min(C)))`
/// in shifted coordinates, mapping `C` onto the unit hypercube so that
/// quadtree splits of `C` become Euclidean quadtree splits of the cube.
pub fn phi(cell: &CellKey, shift: &Shift, d: usize, p: &HPoint) -> Result<Vec<f64>> {
    let CellKey::Tile { .. } = cell else {
        return Err(Error::Domain("phi is defined on tiling (level-0) cells".into()));
    };
    let bx = cell.boxed(d).shifted(shift);
    if !bx.contains(p, 1e-9) {
        return Err(Error::Domain("point outside the chart cell".into()));
    }
    let scale = ((d - 1) as f64).sqrt() / (shift.a_z * bx.z_lo);
    let mut out: Vec<f64> = p.x.iter().zip(&bx.x_lo).map(|(v, lo)| (v - lo) * scale).collect();
    out.push((p.z / bx.z_lo).log2());
    Ok(out)
}

/// Inverse of `phi`.
pub fn phi_inv(cell: &CellKey, shift: &Shift, d: usize, u: &[f64]) -> Result<HPoint> {
    let CellKey::Tile { .. } = cell else {
        return Err(Error::Domain("phi is defined on tiling (level-0) cells".into()));
    };
    if u.len() != d {
        return Err(Error::Domain("chart point has wrong dimension".into()));
    }
    let bx = cell.boxed(d).shifted(shift);
    let scale = shift.a_z * bx.z_lo / ((d - 1) as f64).sqrt();
    let x: Vec<f64> = u[..d - 1].iter().zip(&bx.x_lo).map(|(v, lo)| lo + v * scale).collect();
    Ok(HPoint { x, z: bx.z_lo * u[d - 1].exp2() })
}

//! Facets shared by sibling cells and portal placement on them.
//!
//! Three regimes: `Top` facets (horosphere patches) get a plain `(1/r)`-cover;
//! `Side` facets are (d-1)-dimensional hybrid-tree cells, covered tile by
//! tile with radius `b^h / r` at hop depth `h` (and nothing once `b^h > r`);
//! negative-level facets get an Arora-style orthogonal grid, with vertical
//! ones extended upward by a factor of 4 so that every geodesic between the
//! two siblings crosses the extended facet.

use crate::error::{Error, Result};
use crate::hgeom::{hyp_distance_unchecked, HPoint};
use crate::hybridtree::{apply_shift, cell_children, CellKey, NodeId, NodeKind, Shift, ShiftedTree};

/// Scaling base of the side-facet cover radii: b = 2^(1 - 1/d).
pub fn side_base(d: usize) -> f64 {
    (1.0 - 1.0 / d as f64).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    Top,
    Side,
    NegGrid,
}

/// A shared boundary facet between two cells (or between a compressed
/// region and its carved inner cell). Geometry is kept in the standard
/// frame; `axis = None` means a horizontal facet at height `offset`,
/// otherwise the vertical plane `x_axis = offset`.
#[derive(Debug, Clone)]
pub struct Facet {
    pub kind: FacetKind,
    pub side_a: CellKey,
    pub side_b: CellKey,
    /// Level of the sibling cells the facet separates.
    pub level: i32,
    pub axis: Option<usize>,
    pub offset: f64,
    /// Extent over the horizontal axes (the `axis` entry is degenerate).
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    /// z-extent; for vertical negative facets `z_hi` includes the 4x upward
    /// extension and `base_z_hi` is the unextended top. Horizontal facets
    /// have `z_lo == z_hi == offset`.
    pub z_lo: f64,
    pub z_hi: f64,
    pub base_z_hi: f64,
}

impl Facet {
    /// Does a standard-frame point lie on the facet (optionally counting the
    /// extension region of vertical negative facets)?
    pub fn contains_std(&self, p: &HPoint, tol: f64, include_extension: bool) -> bool {
        let z_top = if include_extension { self.z_hi } else { self.base_z_hi };
        if p.z < self.z_lo - tol || p.z > z_top + tol {
            return false;
        }
        for (i, v) in p.x.iter().enumerate() {
            if Some(i) == self.axis {
                if (v - self.offset).abs() > tol {
                    return false;
                }
            } else if *v < self.x_lo[i] - tol || *v > self.x_hi[i] + tol {
                return false;
            }
        }
        true
    }
}

/// Placement parameters. `axis_cap` truncates every per-axis grid count to a
/// power of two, yielding the smaller nested vocabulary the dynamic program
/// works with; `None` gives the full placement used by the harness.
#[derive(Debug, Clone, Copy)]
pub struct PortalConfig {
    pub r: u32,
    /// Negative-level grid factor (per-axis count is c_g * r * log term).
    pub c_g: f64,
    pub axis_cap: Option<u32>,
    pub l_min: i32,
}

impl PortalConfig {
    pub fn full(r: u32, l_min: i32) -> Self {
        PortalConfig { r, c_g: 4.0, axis_cap: None, l_min }
    }

    pub fn capped(r: u32, l_min: i32, axis_cap: u32) -> Self {
        PortalConfig { r, c_g: 4.0, axis_cap: Some(axis_cap.next_power_of_two()), l_min }
    }

    fn cap(&self, k: u32) -> u32 {
        match self.axis_cap {
            Some(c) => k.min(c),
            None => k,
        }
    }
}

/// Portals attached to one facet. Points are stored in both frames: the
/// standard frame they were constructed in and the normalized frame used for
/// all distance work.
#[derive(Debug, Clone)]
pub struct PortalSet {
    pub facet: usize,
    pub points: Vec<HPoint>,
    pub points_std: Vec<HPoint>,
    /// Hop depth of the hosting tile (Side facets; 0 elsewhere).
    pub tile_depth: Vec<u32>,
}

impl PortalSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Dyadic grid count: smallest power of two >= x (at least 1).
fn pow2_at_least(x: f64) -> u32 {
    if x <= 1.0 {
        1
    } else {
        (x.ceil() as u32).next_power_of_two()
    }
}

/// Exact nearest portal under hyperbolic distance, ties broken by index.
pub fn nearest_portal(pset: &PortalSet, p: &HPoint) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in pset.points.iter().enumerate() {
        let dist = hyp_distance_unchecked(p, q);
        if best.map_or(true, |(_, b)| dist < b) {
            best = Some((i, dist));
        }
    }
    best
}

/// (1/r)-cover of a Top facet: an equally spaced grid over the horosphere
/// patch, sized via d_H((x,z*),(x',z*)) <= |x - x'| / z*.
pub fn place_top(facet: &Facet, facet_id: usize, cfg: &PortalConfig, shift: &Shift) -> PortalSet {
    debug_assert_eq!(facet.kind, FacetKind::Top);
    let d1 = facet.x_lo.len();
    let rho = 1.0 / cfg.r as f64;
    let z_star = facet.offset / shift.a_z;
    let side = facet.x_hi[0] - facet.x_lo[0];
    let k = cfg.cap(pow2_at_least(side * (d1 as f64).sqrt() / (2.0 * rho * z_star)));
    let mut points_std = Vec::new();
    let mut idx = vec![0u32; d1];
    loop {
        let x: Vec<f64> = (0..d1)
            .map(|i| facet.x_lo[i] + (facet.x_hi[i] - facet.x_lo[i]) * idx[i] as f64 / k as f64)
            .collect();
        points_std.push(HPoint { x, z: facet.offset });
        if !advance(&mut idx, k) {
            break;
        }
    }
    finish(facet_id, points_std, shift)
}

/// Per-depth, per-tile grid resolution used on a Side facet: the number of
/// grid intervals per chart axis for tiles at hop depth h. Non-increasing in
/// h; empty entries stop at the first depth with b^h > r.
pub fn side_grid_counts(facet: &Facet, cfg: &PortalConfig) -> Vec<u32> {
    let d1 = facet.x_lo.len();
    let b = side_base(d1 + 1);
    let r = cfg.r as f64;
    let rows = (facet.z_hi / facet.z_lo).log2().round().max(1.0) as i64;
    let mut out = Vec::new();
    for h in 0..rows {
        if b.powi(h as i32) > r {
            break;
        }
        let rho = b.powi(h as i32) / r;
        out.push(cfg.cap(pow2_at_least((d1 as f64).sqrt() / rho)));
    }
    out
}

/// Tile-by-tile cover of a Side facet: the facet is a (d-1)-dimensional
/// hybrid-tree cell whose tiles at hop depth h from the top get a
/// (b^h/r)-cover, and nothing once b^h > r.
pub fn place_side(facet: &Facet, facet_id: usize, cfg: &PortalConfig, shift: &Shift) -> PortalSet {
    debug_assert_eq!(facet.kind, FacetKind::Side);
    let d1 = facet.x_lo.len();
    let other: Vec<usize> = (0..d1).filter(|i| Some(*i) != facet.axis).collect();
    let b = side_base(d1 + 1);
    let r = cfg.r as f64;
    let rows = (facet.z_hi / facet.z_lo).log2().round() as i64;
    let mut points_std = Vec::new();
    let mut depths = Vec::new();
    for h in 0..rows.max(1) {
        if b.powi(h as i32) > r {
            break;
        }
        let rho = b.powi(h as i32) / r;
        // chart bound: d_H <= 2 * Euclidean distance in the unit-cube chart
        let k = cfg.cap(pow2_at_least((d1 as f64).sqrt() / rho));
        let z_hi_row = facet.z_hi / (h as f64).exp2();
        let z_lo_row = z_hi_row / 2.0;
        let tiles_per_axis = 1i64 << h.min(40);
        let mut tile_idx = vec![0i64; other.len()];
        loop {
            let mut grid = vec![0u32; other.len() + 1];
            loop {
                let mut x = vec![0.0; d1];
                if let Some(ax) = facet.axis {
                    x[ax] = facet.offset;
                }
                for (slot, &oi) in other.iter().enumerate() {
                    let span = (facet.x_hi[oi] - facet.x_lo[oi]) / tiles_per_axis as f64;
                    let lo = facet.x_lo[oi] + span * tile_idx[slot] as f64;
                    x[oi] = lo + span * grid[slot] as f64 / k as f64;
                }
                let z = z_lo_row * (grid[other.len()] as f64 / k as f64).exp2();
                points_std.push(HPoint { x, z });
                depths.push(h as u32);
                if !advance(&mut grid, k) {
                    break;
                }
            }
            if tile_idx.is_empty() || !advance_i64(&mut tile_idx, tiles_per_axis) {
                break;
            }
        }
    }
    dedupe(&mut points_std, &mut depths);
    let points = points_std.iter().map(|p| apply_shift(p, shift)).collect();
    PortalSet { facet: facet_id, points, points_std, tile_depth: depths }
}

/// Arora-style orthogonal grid on a negative-level facet, with the same
/// density carried into the upward extension of vertical facets.
pub fn place_neg(facet: &Facet, facet_id: usize, cfg: &PortalConfig, shift: &Shift) -> PortalSet {
    debug_assert_eq!(facet.kind, FacetKind::NegGrid);
    let d1 = facet.x_lo.len();
    let levels_below = (facet.level - cfg.l_min).max(0);
    let log_term = ((1 + levels_below) as f64).log2().max(1.0);
    let k = cfg.cap(pow2_at_least(cfg.c_g * cfg.r as f64 * log_term));
    let other: Vec<usize> = (0..d1).filter(|i| Some(*i) != facet.axis).collect();
    let mut points_std = Vec::new();
    match facet.axis {
        None => {
            let mut grid = vec![0u32; other.len()];
            loop {
                let mut x = vec![0.0; d1];
                for (slot, &oi) in other.iter().enumerate() {
                    x[oi] = facet.x_lo[oi]
                        + (facet.x_hi[oi] - facet.x_lo[oi]) * grid[slot] as f64 / k as f64;
                }
                points_std.push(HPoint { x, z: facet.offset });
                if grid.is_empty() || !advance(&mut grid, k) {
                    break;
                }
            }
        }
        Some(ax) => {
            // rows continue past base_z_hi into the extension at the same
            // Euclidean spacing
            let dz = (facet.base_z_hi - facet.z_lo) / k as f64;
            let rows = ((facet.z_hi - facet.z_lo) / dz).round() as u32;
            for row in 0..=rows {
                let z = facet.z_lo + dz * row as f64;
                let mut grid = vec![0u32; other.len()];
                loop {
                    let mut x = vec![0.0; d1];
                    x[ax] = facet.offset;
                    for (slot, &oi) in other.iter().enumerate() {
                        x[oi] = facet.x_lo[oi]
                            + (facet.x_hi[oi] - facet.x_lo[oi]) * grid[slot] as f64 / k as f64;
                    }
                    points_std.push(HPoint { x, z });
                    if grid.is_empty() || !advance(&mut grid, k) {
                        break;
                    }
                }
            }
        }
    }
    finish(facet_id, points_std, shift)
}

/// Kind-dispatching placement.
pub fn place(facet: &Facet, facet_id: usize, cfg: &PortalConfig, shift: &Shift) -> PortalSet {
    match facet.kind {
        FacetKind::Top => place_top(facet, facet_id, cfg, shift),
        FacetKind::Side => place_side(facet, facet_id, cfg, shift),
        FacetKind::NegGrid => place_neg(facet, facet_id, cfg, shift),
    }
}

fn advance(idx: &mut [u32], k: u32) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v <= k {
            return true;
        }
        *v = 0;
    }
    false
}

fn advance_i64(idx: &mut [i64], n: i64) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < n {
            return true;
        }
        *v = 0;
    }
    false
}

fn dedupe(points: &mut Vec<HPoint>, depths: &mut Vec<u32>) {
    // duplicates come from exact grid coincidences, so quantized hashing
    // keeps this linear
    let mut seen: std::collections::HashSet<Vec<i64>> = std::collections::HashSet::new();
    let mut keep: Vec<HPoint> = Vec::new();
    let mut keep_d: Vec<u32> = Vec::new();
    for (p, dep) in points.iter().zip(depths.iter()) {
        let mut key: Vec<i64> = p.x.iter().map(|v| (v * 1e10).round() as i64).collect();
        key.push((p.z * 1e10).round() as i64);
        if seen.insert(key) {
            keep.push(p.clone());
            keep_d.push(*dep);
        }
    }
    *points = keep;
    *depths = keep_d;
}

fn finish(facet_id: usize, points_std: Vec<HPoint>, shift: &Shift) -> PortalSet {
    let mut pts = points_std;
    let mut depths = vec![0u32; pts.len()];
    dedupe(&mut pts, &mut depths);
    let points = pts.iter().map(|p| apply_shift(p, shift)).collect();
    PortalSet { facet: facet_id, points, points_std: pts, tile_depth: depths }
}

/// All sibling facets of a tree node: between the structural children of a
/// branch cell (present or empty), or the interior faces of the carved inner
/// cell at a compressed node.
pub fn facets_of(tree: &ShiftedTree, node: NodeId) -> Vec<Facet> {
    let d = tree.d;
    let cell = &tree.nodes[node].cell;
    match &tree.nodes[node].kind {
        NodeKind::Leaf { .. } => Vec::new(),
        NodeKind::Branch { .. } => sibling_facets(cell, d, tree.l_min),
        NodeKind::Compressed { inner, .. } => inner_facets(cell, inner, d),
    }
}

/// Facets between all adjacent pairs of structural children of `cell`.
pub fn sibling_facets(cell: &CellKey, d: usize, l_min: i32) -> Vec<Facet> {
    let children = cell_children(cell, d, l_min);
    let mut out = Vec::new();
    for i in 0..children.len() {
        for j in i + 1..children.len() {
            if let Some(f) = facet_between(&children[i], &children[j], d) {
                out.push(f);
            }
        }
    }
    out
}

/// The shared boundary facet of two cells, if they abut along a face.
pub fn facet_between(a: &CellKey, b: &CellKey, d: usize) -> Option<Facet> {
    let tol = 1e-12;
    let ba = a.boxed(d);
    let bb = b.boxed(d);
    let d1 = d - 1;
    // vertical contact: lo.x_hi[i] == hi.x_lo[i], overlap elsewhere
    for i in 0..d1 {
        for (lo_box, hi_box, lo_cell, hi_cell) in [(&ba, &bb, a, b), (&bb, &ba, b, a)] {
            if (lo_box.x_hi[i] - hi_box.x_lo[i]).abs() < tol * lo_box.x_hi[i].abs().max(1.0) {
                let mut x_lo = vec![0.0; d1];
                let mut x_hi = vec![0.0; d1];
                let mut ok = true;
                for j in 0..d1 {
                    if j == i {
                        x_lo[j] = lo_box.x_hi[i];
                        x_hi[j] = lo_box.x_hi[i];
                        continue;
                    }
                    let lo = lo_box.x_lo[j].max(hi_box.x_lo[j]);
                    let hi = lo_box.x_hi[j].min(hi_box.x_hi[j]);
                    if hi - lo < tol {
                        ok = false;
                        break;
                    }
                    x_lo[j] = lo;
                    x_hi[j] = hi;
                }
                let z_lo = lo_box.z_lo.max(hi_box.z_lo);
                let z_hi = lo_box.z_hi.min(hi_box.z_hi);
                if !ok || z_hi - z_lo < tol {
                    continue;
                }
                let level = lo_cell.level().min(hi_cell.level());
                let kind = if level >= 0 { FacetKind::Side } else { FacetKind::NegGrid };
                let extended =
                    if kind == FacetKind::NegGrid { z_lo + 4.0 * (z_hi - z_lo) } else { z_hi };
                return Some(Facet {
                    kind,
                    side_a: lo_cell.clone(),
                    side_b: hi_cell.clone(),
                    level,
                    axis: Some(i),
                    offset: lo_box.x_hi[i],
                    x_lo,
                    x_hi,
                    z_lo,
                    z_hi: extended,
                    base_z_hi: z_hi,
                });
            }
        }
    }
    // horizontal contact
    for (lo_box, hi_box, lo_cell, hi_cell) in [(&ba, &bb, a, b), (&bb, &ba, b, a)] {
        if (lo_box.z_hi - hi_box.z_lo).abs() < tol * lo_box.z_hi.max(1.0) {
            let mut x_lo = vec![0.0; d1];
            let mut x_hi = vec![0.0; d1];
            let mut ok = true;
            for j in 0..d1 {
                let lo = lo_box.x_lo[j].max(hi_box.x_lo[j]);
                let hi = lo_box.x_hi[j].min(hi_box.x_hi[j]);
                if hi - lo < tol {
                    ok = false;
                    break;
                }
                x_lo[j] = lo;
                x_hi[j] = hi;
            }
            if !ok {
                continue;
            }
            let level = lo_cell.level().min(hi_cell.level());
            let kind = if level >= 0 { FacetKind::Top } else { FacetKind::NegGrid };
            return Some(Facet {
                kind,
                side_a: lo_cell.clone(),
                side_b: hi_cell.clone(),
                level,
                axis: None,
                offset: lo_box.z_hi,
                x_lo,
                x_hi,
                z_lo: lo_box.z_hi,
                z_hi: lo_box.z_hi,
                base_z_hi: lo_box.z_hi,
            });
        }
    }
    None
}

/// Interior faces of the inner cell of a compressed node: faces coplanar
/// with the outer cell's boundary are omitted (crossings there belong to
/// higher levels). Vertical inner faces carry no extension: any path into
/// the inner cell crosses an actual face.
pub fn inner_facets(outer: &CellKey, inner: &CellKey, d: usize) -> Vec<Facet> {
    let tol = 1e-12;
    let ob = outer.boxed(d);
    let ib = inner.boxed(d);
    let d1 = d - 1;
    let mut out = Vec::new();
    let level = inner.level();
    for i in 0..d1 {
        for (off, outer_off) in [(ib.x_lo[i], ob.x_lo[i]), (ib.x_hi[i], ob.x_hi[i])] {
            if (off - outer_off).abs() < tol * off.abs().max(1.0) {
                continue; // on the outer boundary
            }
            let mut x_lo = ib.x_lo.clone();
            let mut x_hi = ib.x_hi.clone();
            x_lo[i] = off;
            x_hi[i] = off;
            out.push(Facet {
                kind: if level >= 0 { FacetKind::Side } else { FacetKind::NegGrid },
                side_a: outer.clone(),
                side_b: inner.clone(),
                level,
                axis: Some(i),
                offset: off,
                x_lo,
                x_hi,
                z_lo: ib.z_lo,
                z_hi: ib.z_hi,
                base_z_hi: ib.z_hi,
            });
        }
    }
    for (off, outer_off) in [(ib.z_lo, ob.z_lo), (ib.z_hi, ob.z_hi)] {
        if (off - outer_off).abs() < tol * off.max(1.0) {
            continue;
        }
        out.push(Facet {
            kind: if level >= 0 { FacetKind::Top } else { FacetKind::NegGrid },
            side_a: outer.clone(),
            side_b: inner.clone(),
            level,
            axis: None,
            offset: off,
            x_lo: ib.x_lo.clone(),
            x_hi: ib.x_hi.clone(),
            z_lo: off,
            z_hi: off,
            base_z_hi: off,
        });
    }
    out
}

/// Facets and portal sets for a whole tree.
#[derive(Debug, Clone)]
pub struct FacetSet {
    pub facets: Vec<Facet>,
    pub portals: Vec<PortalSet>,
    pub owner: Vec<NodeId>,
}

impl FacetSet {
    pub fn total_portals(&self) -> usize {
        self.portals.iter().map(|p| p.len()).sum()
    }
}

/// Enumerate every facet in the compressed tree and place its portals.
pub fn build_facets(tree: &ShiftedTree, cfg: &PortalConfig) -> Result<FacetSet> {
    if cfg.r == 0 {
        return Err(Error::Domain("r must be at least 1".into()));
    }
    let mut facets = Vec::new();
    let mut portals = Vec::new();
    let mut owner = Vec::new();
    for node in 0..tree.nodes.len() {
        for facet in facets_of(tree, node) {
            let id = facets.len();
            let pset = place(&facet, id, cfg, &tree.shift);
            facets.push(facet);
            portals.push(pset);
            owner.push(node);
        }
    }
    Ok(FacetSet { facets, portals, owner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridtree::{
        build_compressed_tree, compute_levels, normalize_bounding_box, perturb, ShiftSpec,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tile(d: usize) -> CellKey {
        CellKey::Tile { scale: 0, idx: vec![0; d - 1] }
    }

    #[test]
    fn positive_level_facets_d2() {
        // a level-1 cell: facets between its two level-0 children and below
        // the tiling-cell child
        let cell = CellKey::Hybrid { level: 1, idx: vec![0] };
        let facets = sibling_facets(&cell, 2, -2);
        let tops = facets.iter().filter(|f| f.kind == FacetKind::Top).count();
        let sides = facets.iter().filter(|f| f.kind == FacetKind::Side).count();
        assert_eq!(tops, 2);
        assert_eq!(sides, 1);
        let side = facets.iter().find(|f| f.kind == FacetKind::Side).unwrap();
        assert_eq!(side.axis, Some(0));
        assert!((side.z_lo - 1.0).abs() < 1e-12 && (side.z_hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_facet_extension_height() {
        let facets = sibling_facets(&tile(2), 2, -2);
        let vertical: Vec<&Facet> =
            facets.iter().filter(|f| f.kind == FacetKind::NegGrid && f.axis.is_some()).collect();
        assert!(!vertical.is_empty());
        for f in vertical {
            let delta = f.base_z_hi - f.z_lo;
            assert!((f.z_hi - (f.z_lo + 4.0 * delta)).abs() < 1e-12);
            // the paper's requirement (1 + 2/ln 2) fits inside the 4x box
            assert!(f.z_lo + (1.0 + 2.0 / std::f64::consts::LN_2) * delta <= f.z_hi + 1e-12);
        }
    }

    #[test]
    fn facet_count_bounded_by_dimension() {
        for d in [2usize, 3] {
            for cell in [
                CellKey::Hybrid { level: 2, idx: vec![0; d - 1] },
                tile(d),
                CellKey::Neg { scale: 0, tile: vec![0; d - 1], depth: 1, xi: vec![0; d - 1], zi: 0 },
            ] {
                let count = sibling_facets(&cell, d, -4).len();
                let bound = match cell {
                    CellKey::Hybrid { .. } => (1 << (d - 1)) + (d - 1) * (1 << (d - 2)),
                    _ => d * (1 << (d - 1)),
                };
                assert_eq!(count, bound, "cell {cell:?}");
            }
        }
    }

    #[test]
    fn top_cover_radius_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for d in [2usize, 3] {
            let cell = CellKey::Hybrid { level: 2, idx: vec![0; d - 1] };
            let shift = Shift::identity(d);
            let facets = sibling_facets(&cell, d, -2);
            let top = facets.iter().find(|f| f.kind == FacetKind::Top).unwrap();
            let mut prev_len = 0usize;
            for r in [1u32, 2, 4, 8, 16] {
                let cfg = PortalConfig::full(r, -2);
                let pset = place_top(top, 0, &cfg, &shift);
                assert!(
                    pset.len() as f64
                        <= crate::constants::K_PORTAL[d - 2] * (r as f64).powi(d as i32 - 1),
                    "top count {} at r={r} d={d}",
                    pset.len()
                );
                // doubling r multiplies the count by at most c * 2^(d-1)
                if prev_len > 0 {
                    assert!(pset.len() <= 3 * (1 << (d - 1)) * prev_len);
                }
                prev_len = pset.len();
                // cover property by dense sampling
                for _ in 0..300 {
                    let x: Vec<f64> =
                        (0..d - 1).map(|i| rng.gen_range(top.x_lo[i]..top.x_hi[i])).collect();
                    let p = apply_shift(&HPoint { x, z: top.offset }, &shift);
                    let (_, dist) = nearest_portal(&pset, &p).unwrap();
                    assert!(dist <= 1.0 / r as f64 + 1e-9, "top cover radius {dist} at r={r}");
                }
            }
        }
    }

    #[test]
    fn side_cover_decay_and_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for d in [2usize, 3] {
            let cell = CellKey::Hybrid { level: 6, idx: vec![0; d - 1] };
            let shift = Shift::identity(d);
            let facets = sibling_facets(&cell, d, -2);
            let side = facets.iter().find(|f| f.kind == FacetKind::Side).unwrap();
            let b = side_base(d);
            for r in [2u32, 4, 8, 16] {
                let cfg = PortalConfig::full(r, -2);
                let pset = place_side(side, 0, &cfg, &shift);
                assert!(
                    (pset.len() as f64)
                        <= crate::constants::K_PORTAL[d - 2] * (r as f64).powi(d as i32 - 1),
                    "side count {} at r={r} d={d}",
                    pset.len()
                );
                // per-tile cover resolution decays with depth
                let counts = side_grid_counts(side, &cfg);
                for wpair in counts.windows(2) {
                    assert!(wpair[1] <= wpair[0], "per-tile grid grows with depth: {counts:?}");
                }
                // depths beyond log_b r carry no portals
                let max_h = *pset.tile_depth.iter().max().unwrap();
                assert!(b.powf(max_h as f64) <= r as f64 + 1e-9);
                assert_eq!(counts.len() as u32 - 1, max_h);

                // cover radius within a depth-h tile is b^h / r
                for h in 0..=max_h.min(3) {
                    let z_hi_row = side.z_hi / (h as f64).exp2();
                    let z_lo_row = z_hi_row / 2.0;
                    for _ in 0..100 {
                        let mut x = vec![0.0; d - 1];
                        if let Some(ax) = side.axis {
                            x[ax] = side.offset;
                        }
                        for i in 0..d - 1 {
                            if Some(i) != side.axis {
                                x[i] = rng.gen_range(side.x_lo[i]..side.x_hi[i]);
                            }
                        }
                        let z = rng.gen_range(z_lo_row..z_hi_row);
                        let p = apply_shift(&HPoint { x, z }, &shift);
                        let (_, dist) = nearest_portal(&pset, &p).unwrap();
                        let bound = b.powf(h as f64) / r as f64;
                        assert!(dist <= bound + 1e-9, "side cover {dist} > {bound} at h={h}");
                    }
                }
            }
        }
    }

    #[test]
    fn neg_grid_shape() {
        let facets = sibling_facets(&tile(2), 2, -1);
        let vert =
            facets.iter().find(|f| f.kind == FacetKind::NegGrid && f.axis.is_some()).unwrap();
        let horiz = facets.iter().find(|f| f.axis.is_none()).unwrap();
        let shift = Shift::identity(2);
        // one negative level below: log term is 1, so k = c_g * r
        let cfg = PortalConfig::full(2, -1);
        let pset = place_neg(vert, 0, &cfg, &shift);
        let k = (cfg.c_g * cfg.r as f64) as usize; // 8
        assert_eq!(pset.len(), 4 * k + 1, "extension carries 4x the rows");
        let ph = place_neg(horiz, 1, &cfg, &shift);
        assert_eq!(ph.len(), k + 1);
        // uniform spacing along the grid
        let dz = pset.points_std[1].z - pset.points_std[0].z;
        for pair in pset.points_std.windows(2) {
            assert!(((pair[1].z - pair[0].z) - dz).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_portal_basics() {
        let cell = tile(2);
        let facets = sibling_facets(&cell, 2, -1);
        let f = &facets[0];
        let shift = Shift::identity(2);
        let pset = place(f, 0, &PortalConfig::full(2, -1), &shift);
        let (idx, dist) = nearest_portal(&pset, &pset.points[3]).unwrap();
        assert_eq!(idx, 3);
        assert!(dist < 1e-12);
        let empty = PortalSet { facet: 0, points: vec![], points_std: vec![], tile_depth: vec![] };
        assert!(nearest_portal(&empty, &pset.points[0]).is_none());
    }

    #[test]
    fn capped_vocabulary_is_nested() {
        let cell = CellKey::Hybrid { level: 3, idx: vec![0] };
        let shift = Shift::identity(2);
        let facets = sibling_facets(&cell, 2, -3);
        for f in &facets {
            let mut prev: Option<PortalSet> = None;
            for r in [2u32, 4, 8, 16] {
                let pset = place(f, 0, &PortalConfig::capped(r, -3, 4), &shift);
                if let Some(prev_set) = &prev {
                    for p in &prev_set.points_std {
                        assert!(
                            pset.points_std.iter().any(|q| q.approx_eq(p, 1e-10)),
                            "portal sets not nested on facet {:?} at r={r}",
                            f.kind
                        );
                    }
                }
                prev = Some(pset);
            }
        }
    }

    #[test]
    fn whole_tree_facets() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let pts: Vec<HPoint> = (0..10)
            .map(|_| HPoint { x: vec![rng.gen_range(-1.0..1.0)], z: rng.gen_range(0.7..2.5) })
            .collect();
        let (norm, bbox, _) = normalize_bounding_box(&pts).unwrap();
        let (l_min, l_max) = compute_levels(&bbox, 2, 0.5, pts.len()).unwrap();
        let pert = perturb(&norm, 2, l_min).unwrap();
        let spec = ShiftSpec::new(2, l_min, l_max);
        let shift = spec.sample(&mut rng);
        let tree = build_compressed_tree(&pert.points, 2, l_min, l_max, &shift).unwrap();
        let fs = build_facets(&tree, &PortalConfig::full(4, l_min)).unwrap();
        assert!(!fs.facets.is_empty());
        for (f, pset) in fs.facets.iter().zip(&fs.portals) {
            assert!(!pset.is_empty(), "facet {:?} got no portals", f.kind);
            for p in &pset.points_std {
                assert!(f.contains_std(p, 1e-9, true), "portal off facet {f:?}");
            }
        }
    }
}

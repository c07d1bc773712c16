//! Exact oracles and the empirical structure-theorem harness.
//!
//! `exact_tsp` is the optimum the approximation results are measured
//! against; it is deliberately independent of the solver's route machinery
//! and cross-checked against full permutation enumeration. The harness turns
//! the crossing/patching analysis into measurements: weighted vertical
//! crossing sums, horizontal crossing counts, snapping of arbitrary tours to
//! portals, patching down to two transits per portal, and the two r-simple
//! predicates.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hgeom::{
    crossing, geodesic, horosphere_intersections, hyp_distance_unchecked, GeodesicKind, HPoint,
    Horosphere, VerticalHyperplane,
};
use crate::hybridtree::{tile_width, Shift, ShiftedTree};
use crate::dyntsp::{Tour, TourVertex};
use crate::portals::{nearest_portal, Facet, FacetSet};

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// Exact TSP optimum by Held-Karp over hyperbolic distances, for up to 15
/// points. Returns the length and one optimal cyclic order.
pub fn exact_tsp(points: &[HPoint]) -> Result<(f64, Vec<usize>)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Domain("oracle needs at least 2 points".into()));
    }
    if n > 15 {
        return Err(Error::ResourceCap(format!("exact oracle capped at 15 points, got {n}")));
    }
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|p| points.iter().map(|q| hyp_distance_unchecked(p, q)).collect())
        .collect();
    if n == 2 {
        return Ok((2.0 * dist[0][1], vec![0, 1]));
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut par = vec![usize::MAX; full * n];
    dp[n] = 0.0; // mask {0}, last 0
    for mask in 1..full {
        if mask & 1 == 0 {
            continue;
        }
        for last in 0..n {
            if mask >> last & 1 == 0 {
                continue;
            }
            let cur = dp[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 1..n {
                if mask >> next & 1 == 1 {
                    continue;
                }
                let nm = mask | 1 << next;
                let cand = cur + dist[last][next];
                if cand < dp[nm * n + next] {
                    dp[nm * n + next] = cand;
                    par[nm * n + next] = last;
                }
            }
        }
    }
    let (mut best, mut best_last) = (f64::INFINITY, 1);
    for last in 1..n {
        let total = dp[(full - 1) * n + last] + dist[last][0];
        if total < best {
            best = total;
            best_last = last;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full - 1;
    let mut last = best_last;
    while last != usize::MAX {
        order.push(last);
        let p = par[mask * n + last];
        mask &= !(1 << last);
        last = p;
    }
    order.reverse();
    Ok((best, order))
}

/// Brute-force optimum over all cyclic orders; the cross-check for the
/// Held-Karp oracle (n <= 9).
pub fn permutation_tsp(points: &[HPoint]) -> Result<(f64, Vec<usize>)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Domain("oracle needs at least 2 points".into()));
    }
    if n > 9 {
        return Err(Error::ResourceCap("permutation oracle capped at 9 points".into()));
    }
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|p| points.iter().map(|q| hyp_distance_unchecked(p, q)).collect())
        .collect();
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = (f64::INFINITY, Vec::new());
    permute_orders(&mut rest, 0, &mut |perm| {
        let mut len = dist[0][perm[0]];
        for w in perm.windows(2) {
            len += dist[w[0]][w[1]];
        }
        len += dist[*perm.last().unwrap()][0];
        if len < best.0 {
            let mut order = vec![0];
            order.extend_from_slice(perm);
            best = (len, order);
        }
    });
    Ok(best)
}

fn permute_orders(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_orders(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Geometric Steiner-tree reference: Dreyfus-Wagner over a fine cover of
/// the terminals' Klein hull (candidate spacing eps_ref * diam / (2n)),
/// with lattice-neighbor connectivity plus direct terminal edges. The
/// yardstick the banyan and the end-to-end Steiner solver are measured
/// against.
pub fn fine_grid_steiner_reference(points: &[HPoint], eps_ref: f64, d: usize) -> Result<f64> {
    use crate::hybridtree::{cell_at_level_in, cell_diameter, max_pairwise_distance, CellKey};
    use crate::steiner::{dreyfus_wagner_sparse, tiling_cover_cells, KleinHull};

    let n = points.len();
    if n < 2 {
        return Err(Error::Domain("reference needs at least 2 points".into()));
    }
    let diam = max_pairwise_distance(points);
    if diam < 1e-12 {
        return Ok(0.0);
    }
    let mu = eps_ref * diam / (2.0 * n as f64);
    let hull = KleinHull::of(points)?;
    let cells = tiling_cover_cells(&hull, d, mu)?;
    let mut level = 0;
    while cell_diameter(d, level) > 0.8 * mu {
        level -= 1;
    }
    let mut positions: Vec<HPoint> = points.to_vec();
    let mut index_of: HashMap<CellKey, usize> = HashMap::new();
    for cell in &cells {
        index_of.insert(cell.clone(), positions.len());
        positions.push(cell.boxed(d).center());
    }
    if positions.len() > 120_000 {
        return Err(Error::ResourceCap(format!(
            "reference grid has {} candidates; raise eps_ref",
            positions.len()
        )));
    }
    let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); positions.len()];
    let push_edge = |a: usize, b: usize, positions: &[HPoint], adj: &mut Vec<Vec<(u32, f64)>>| {
        if a == b {
            return;
        }
        let w = hyp_distance_unchecked(&positions[a], &positions[b]);
        adj[a].push((b as u32, w));
        adj[b].push((a as u32, w));
    };
    // lattice neighbors of each cell center within two steps
    for (cell, &ci) in &index_of {
        let bx = cell.boxed(d);
        let c = bx.center();
        let side = bx.x_hi[0] - bx.x_lo[0];
        let ratio = bx.z_hi / bx.z_lo;
        let offsets: Vec<i32> = vec![-2, -1, 1, 2];
        for axis in 0..d - 1 {
            for &k in &offsets {
                let mut p = c.clone();
                p.x[axis] += k as f64 * side;
                if let Ok(ncell) = cell_at_level_in(&p, d, level, false) {
                    if let Some(&ni) = index_of.get(&ncell) {
                        if ni > ci {
                            push_edge(ci, ni, &positions, &mut adj);
                        }
                    }
                }
            }
        }
        for &k in &offsets {
            let mut p = c.clone();
            p.z *= ratio.powi(k);
            if p.z <= 0.0 {
                continue;
            }
            if let Ok(ncell) = cell_at_level_in(&p, d, level, false) {
                if let Some(&ni) = index_of.get(&ncell) {
                    if ni > ci {
                        push_edge(ci, ni, &positions, &mut adj);
                    }
                }
            }
        }
        // diagonal neighbors keep the lattice metric close to geometric
        for axis in 0..d - 1 {
            for &kx in &[-1i32, 1] {
                for &kz in &[-1i32, 1] {
                    let mut p = c.clone();
                    p.x[axis] += kx as f64 * side;
                    p.z *= ratio.powi(kz);
                    if let Ok(ncell) = cell_at_level_in(&p, d, level, false) {
                        if let Some(&ni) = index_of.get(&ncell) {
                            if ni > ci {
                                push_edge(ci, ni, &positions, &mut adj);
                            }
                        }
                    }
                }
            }
        }
    }
    // terminals connect to nearby candidates and to each other directly
    for t in 0..n {
        for ci in n..positions.len() {
            if hyp_distance_unchecked(&positions[t], &positions[ci]) <= 4.0 * mu {
                push_edge(t, ci, &positions, &mut adj);
            }
        }
        for t2 in t + 1..n {
            push_edge(t, t2, &positions, &mut adj);
        }
    }
    let terminals: Vec<usize> = (0..n).collect();
    let (cost, _) = dreyfus_wagner_sparse(&adj, &terminals)?;
    Ok(cost)
}

/// Minimum pairwise distance among distinct points (the perturbation
/// spacing statistic).
pub fn min_pairwise_distance(points: &[HPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dij = hyp_distance_unchecked(&points[i], &points[j]);
            if dij > 1e-12 {
                best = best.min(dij);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// crossing statistics on the level-l_min grids
// ---------------------------------------------------------------------------

/// Sided crossings of a closed geometric tour with the vertical and
/// horizontal hyperplane families of the unshifted level-`l_min` grid.
#[derive(Debug, Clone, Default)]
pub struct CrossingSet {
    /// (crossing point, axis, plane offset, weight 1/z)
    pub vertical: Vec<(HPoint, usize, f64, f64)>,
    /// crossing points with the horizontal family
    pub horizontal: Vec<HPoint>,
}

fn tour_edges(points: &[HPoint]) -> Vec<(HPoint, HPoint)> {
    let mut edges = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let a = points[i].clone();
        let b = points[(i + 1) % points.len()].clone();
        if !a.approx_eq(&b, 1e-15) {
            edges.push((a, b));
        }
    }
    edges
}

/// All sided crossings with the unshifted level-`l_min` grid planes.
pub fn crossing_set(tour: &[HPoint], tree: &ShiftedTree) -> CrossingSet {
    let d = tree.d;
    let step = (tree.l_min as f64).exp2() * tile_width(d);
    let levels = (-(tree.l_min) as f64).exp2(); // planes per octave of z
    let mut out = CrossingSet::default();
    for (a, b) in tour_edges(tour) {
        let Ok(geo) = geodesic(&a, &b) else { continue };
        // vertical planes x_i = k * step
        for axis in 0..d - 1 {
            let (lo, hi) = (a.x[axis].min(b.x[axis]), a.x[axis].max(b.x[axis]));
            let k_lo = (lo / step).ceil() as i64;
            let k_hi = (hi / step).floor() as i64;
            for k in k_lo..=k_hi {
                let plane = VerticalHyperplane { axis, offset: k as f64 * step };
                if let Ok(Some(c)) = crossing(&geo, &plane) {
                    let wgt = 1.0 / c.z;
                    out.vertical.push((c, axis, plane.offset, wgt));
                }
            }
        }
        // horizontal planes z = 2^(j / levels)
        let (zlo, zhi) = (a.z.min(b.z), a.z.max(b.z));
        let j_lo = (zlo.log2() * levels).ceil() as i64;
        let j_hi = (zhi.log2() * levels).floor() as i64;
        for j in j_lo..=j_hi {
            let plane_z = (j as f64 / levels).exp2();
            if plane_z <= zlo + 1e-12 || plane_z >= zhi - 1e-12 {
                continue; // endpoints must lie strictly on opposite sides
            }
            for c in horosphere_intersections(&geo, &Horosphere { height: plane_z }) {
                out.horizontal.push(c);
            }
        }
    }
    out
}

/// Weighted sum over sided crossings with the vertical level-`l_min` grid:
/// each crossing q counts 1/z(q).
pub fn weighted_crossing_sum(tour: &[HPoint], tree: &ShiftedTree) -> f64 {
    crossing_set(tour, tree).vertical.iter().map(|(_, _, _, w)| w).sum()
}

/// |J|: the number of sided crossings with the horizontal level-`l_min`
/// grid.
pub fn count_horizontal_crossings(tour: &[HPoint], tree: &ShiftedTree) -> usize {
    crossing_set(tour, tree).horizontal.len()
}

/// Crossings with Top facets of non-negative-level cells under this tree's
/// shift: sided crossings with the planes z = 2^k / a_z for k >= 0.
pub fn count_top_crossings(tour: &[HPoint], tree: &ShiftedTree) -> usize {
    let mut count = 0usize;
    for (a, b) in tour_edges(tour) {
        let Ok(geo) = geodesic(&a, &b) else { continue };
        let (zlo, zhi) = (a.z.min(b.z), a.z.max(b.z));
        let k_lo = (zlo * tree.shift.a_z).log2().ceil().max(0.0) as i64;
        let k_hi = (zhi * tree.shift.a_z).log2().floor() as i64;
        for k in k_lo..=k_hi {
            let plane_z = (k as f64).exp2() / tree.shift.a_z;
            if plane_z <= zlo + 1e-12 || plane_z >= zhi - 1e-12 {
                continue;
            }
            count += horosphere_intersections(&geo, &Horosphere { height: plane_z }).len();
        }
    }
    count
}

// ---------------------------------------------------------------------------
// snapping and patching
// ---------------------------------------------------------------------------

/// One sided crossing of an edge with a tree facet, in normalized
/// coordinates, with a parameter for ordering along the edge.
struct EdgeCrossing {
    param: f64,
    facet: usize,
    point: HPoint,
}

/// Sided crossings of the edge (u, v) with every facet of the set
/// (extension regions included). Endpoints on a facet plane do not count:
/// those transits happen at tour vertices.
fn edge_facet_crossings(
    u: &HPoint,
    v: &HPoint,
    fs: &FacetSet,
    shift: &Shift,
) -> Vec<EdgeCrossing> {
    let mut out = Vec::new();
    let Ok(geo) = geodesic(u, v) else { return out };
    for (fi, facet) in fs.facets.iter().enumerate() {
        match facet.axis {
            Some(ax) => {
                let plane = VerticalHyperplane { axis: ax, offset: facet.offset - shift.a_x[ax] };
                let Ok(Some(c)) = crossing(&geo, &plane) else { continue };
                if in_patch(facet, &c, shift, true) {
                    out.push(EdgeCrossing { param: edge_param(&geo, &c), facet: fi, point: c });
                }
            }
            None => {
                let plane_z = facet.offset / shift.a_z;
                if (u.z - plane_z).abs() < 1e-12 || (v.z - plane_z).abs() < 1e-12 {
                    continue;
                }
                if (u.z - plane_z).signum() == (v.z - plane_z).signum() {
                    continue;
                }
                for c in horosphere_intersections(&geo, &Horosphere { height: plane_z }) {
                    if in_patch(facet, &c, shift, true) {
                        out.push(EdgeCrossing { param: edge_param(&geo, &c), facet: fi, point: c });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.param.partial_cmp(&b.param).unwrap());
    out
}

/// Normalized-frame membership in the facet patch.
fn in_patch(f: &Facet, p: &HPoint, shift: &Shift, include_extension: bool) -> bool {
    let tol = 1e-9;
    let z = p.z * shift.a_z;
    let z_top = if include_extension { f.z_hi } else { f.base_z_hi };
    if z < f.z_lo - tol || z > z_top + tol {
        return false;
    }
    for (i, v) in p.x.iter().enumerate() {
        if Some(i) == f.axis {
            continue;
        }
        let std = v + shift.a_x[i];
        if std < f.x_lo[i] - tol || std > f.x_hi[i] + tol {
            return false;
        }
    }
    true
}

/// Parameter of a point along a geodesic edge, for ordering crossings.
fn edge_param(geo: &crate::hgeom::Geodesic, c: &HPoint) -> f64 {
    match &geo.kind {
        GeodesicKind::Vertical => (c.z / geo.p.z).ln().abs(),
        GeodesicKind::Arc { dir, .. } => {
            let mut t = 0.0;
            for (i, dv) in dir.iter().enumerate() {
                t += (c.x[i] - geo.p.x[i]) * dv;
            }
            t
        }
    }
}

/// Snapping and patching report for one shift.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PatchReport {
    pub shift: Shift,
    pub original_length: f64,
    pub snapped_length: f64,
    pub patched_length: f64,
    /// sided crossings per facet before snapping
    pub crossings_before: Vec<usize>,
    /// sided portal transits per facet after patching
    pub crossings_after: Vec<usize>,
    pub weighted_sum: f64,
    pub snap_rounds: usize,
    /// facets still carrying off-portal crossings after the round cap
    pub unresolved: usize,
}

/// Reroute every sided facet crossing of a geometric tour through the
/// nearest portal of that facet, iterating until the rerouted edges are
/// themselves clean, then cut the number of sided transits at every portal
/// to at most two by reversing tour arcs (which keeps the length and the
/// edge set unchanged).
pub fn snap_and_patch(
    tour: &[HPoint],
    tree: &ShiftedTree,
    fs: &FacetSet,
) -> Result<(PatchReport, Tour)> {
    if tour.len() < 2 {
        return Err(Error::Domain("tour needs at least 2 points".into()));
    }
    let shift = &tree.shift;
    let original_length = {
        let mut t = 0.0;
        for i in 0..tour.len() {
            t += hyp_distance_unchecked(&tour[i], &tour[(i + 1) % tour.len()]);
        }
        t
    };
    let mut crossings_before = vec![0usize; fs.facets.len()];
    for i in 0..tour.len() {
        for c in edge_facet_crossings(&tour[i], &tour[(i + 1) % tour.len()], fs, shift) {
            crossings_before[c.facet] += 1;
        }
    }
    let weighted_sum = weighted_crossing_sum(tour, tree);

    // vertices: Input(i) for tour stops, Portal for inserted snaps
    let mut vertices: Vec<TourVertex> =
        (0..tour.len()).map(TourVertex::Input).collect();
    let mut positions: Vec<HPoint> = tour.to_vec();

    let mut snap_rounds = 0;
    let mut unresolved = 0;
    for round in 0..12 {
        snap_rounds = round;
        let mut new_vertices = Vec::new();
        let mut new_positions = Vec::new();
        let mut dirty = false;
        for i in 0..vertices.len() {
            let j = (i + 1) % vertices.len();
            new_vertices.push(vertices[i].clone());
            new_positions.push(positions[i].clone());
            for c in edge_facet_crossings(&positions[i], &positions[j], fs, shift) {
                let Some((idx, _)) = nearest_portal(&fs.portals[c.facet], &c.point) else {
                    continue;
                };
                let portal_pos = fs.portals[c.facet].points[idx].clone();
                // an edge endpoint already at this portal handles the transit
                if portal_pos.approx_eq(&positions[i], 1e-12)
                    || portal_pos.approx_eq(&positions[j], 1e-12)
                {
                    continue;
                }
                dirty = true;
                new_vertices.push(TourVertex::Portal { facet: c.facet, idx });
                new_positions.push(portal_pos);
            }
        }
        vertices = new_vertices;
        positions = new_positions;
        if !dirty {
            break;
        }
        if round == 11 {
            // count what is left for the report
            unresolved = (0..vertices.len())
                .map(|i| {
                    let j = (i + 1) % vertices.len();
                    edge_facet_crossings(&positions[i], &positions[j], fs, shift).len()
                })
                .sum();
        }
    }
    let snapped_length = cycle_length(&positions);

    // patching: reverse arcs between two sided transits of an overloaded
    // portal, converting both into same-side touches at zero cost
    loop {
        let transits = sided_transit_occurrences(&vertices, &positions, fs, shift);
        let Some((_, occs)) = transits.iter().find(|(_, occs)| occs.len() > 2) else {
            break;
        };
        let (i, j) = (occs[0].min(occs[1]), occs[0].max(occs[1]));
        vertices[i + 1..j].reverse();
        positions[i + 1..j].reverse();
    }
    let patched_length = cycle_length(&positions);

    let mut crossings_after = vec![0usize; fs.facets.len()];
    for ((facet, _), occs) in sided_transit_occurrences(&vertices, &positions, fs, shift) {
        crossings_after[facet] += occs.len();
    }

    let report = PatchReport {
        shift: shift.clone(),
        original_length,
        snapped_length,
        patched_length,
        crossings_before,
        crossings_after,
        weighted_sum,
        snap_rounds,
        unresolved,
    };
    let tour = Tour { vertices, positions, length: patched_length };
    Ok((report, tour))
}

fn cycle_length(positions: &[HPoint]) -> f64 {
    let mut t = 0.0;
    for i in 0..positions.len() {
        t += hyp_distance_unchecked(&positions[i], &positions[(i + 1) % positions.len()]);
    }
    t
}

/// Occurrences of each portal at which the tour actually changes sides of
/// the portal's facet (same-side touches do not count).
fn sided_transit_occurrences(
    vertices: &[TourVertex],
    positions: &[HPoint],
    fs: &FacetSet,
    shift: &Shift,
) -> HashMap<(usize, usize), Vec<usize>> {
    let n = vertices.len();
    let mut out: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for i in 0..n {
        let TourVertex::Portal { facet, idx } = &vertices[i] else { continue };
        let f = &fs.facets[*facet];
        let prev = &positions[(i + n - 1) % n];
        let next = &positions[(i + 1) % n];
        if is_sided(f, prev, next, shift) {
            out.entry((*facet, *idx)).or_default().push(i);
        }
    }
    out
}

fn is_sided(f: &Facet, prev: &HPoint, next: &HPoint, shift: &Shift) -> bool {
    match f.axis {
        Some(ax) => {
            let plane = f.offset - shift.a_x[ax];
            let (a, b) = (prev.x[ax] - plane, next.x[ax] - plane);
            a.abs() > 1e-12 && b.abs() > 1e-12 && a.signum() != b.signum()
        }
        None => {
            let plane = f.offset / shift.a_z;
            let (a, b) = (prev.z - plane, next.z - plane);
            a.abs() > 1e-12 && b.abs() > 1e-12 && a.signum() != b.signum()
        }
    }
}

// ---------------------------------------------------------------------------
// r-simple predicates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimpleMode {
    /// The discipline the solver obeys: every sided facet crossing happens
    /// at a vertex that is a portal of that facet, at most twice per portal.
    FixedGrid,
    /// The definition's negative-level alternative: at most one non-corner
    /// crossing, or all crossings on a uniform grid of admissible size g.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub facet: usize,
    pub reason: String,
}

/// Check a portal-annotated tour against an r-simple predicate. Returns all
/// violating facets.
pub fn check_r_simple(
    tour: &Tour,
    tree: &ShiftedTree,
    fs: &FacetSet,
    r: u32,
    mode: SimpleMode,
) -> (bool, Vec<Violation>) {
    let shift = &tree.shift;
    let n = tour.vertices.len();
    let d = tree.d;
    let mut violations = Vec::new();

    // interior (off-vertex) sided crossings per facet
    let mut interior: Vec<Vec<HPoint>> = vec![Vec::new(); fs.facets.len()];
    for i in 0..n {
        let j = (i + 1) % n;
        for c in edge_facet_crossings(&tour.positions[i], &tour.positions[j], fs, shift) {
            interior[c.facet].push(c.point);
        }
    }
    // sided transits at portal vertices
    let transits = sided_transit_occurrences(&tour.vertices, &tour.positions, fs, shift);
    let mut per_facet_portal_transits: Vec<usize> = vec![0; fs.facets.len()];
    for ((facet, _idx), occs) in &transits {
        per_facet_portal_transits[*facet] += occs.len();
        if occs.len() > 2 {
            violations.push(Violation {
                facet: *facet,
                reason: format!("portal used {} times (max 2)", occs.len()),
            });
        }
    }

    for (fi, facet) in fs.facets.iter().enumerate() {
        let inside = &interior[fi];
        match mode {
            SimpleMode::FixedGrid => {
                if !inside.is_empty() {
                    violations.push(Violation {
                        facet: fi,
                        reason: format!("{} off-portal sided crossings", inside.len()),
                    });
                }
            }
            SimpleMode::Adaptive => {
                if facet.level >= 0 {
                    if !inside.is_empty() {
                        violations.push(Violation {
                            facet: fi,
                            reason: format!(
                                "{} off-portal crossings on a non-negative facet",
                                inside.len()
                            ),
                        });
                    }
                    continue;
                }
                // collect every crossing: interior ones plus portal transits
                let mut all: Vec<HPoint> = inside.clone();
                for ((f2, idx), occs) in &transits {
                    if *f2 == fi {
                        for _ in occs {
                            all.push(fs.portals[fi].points[*idx].clone());
                        }
                    }
                }
                let non_corner: Vec<&HPoint> =
                    all.iter().filter(|p| !is_facet_corner(facet, p, shift)).collect();
                if non_corner.len() <= 1 {
                    continue;
                }
                if !admissible_grid_exists(facet, &non_corner, shift, r, d) {
                    violations.push(Violation {
                        facet: fi,
                        reason: format!(
                            "{} non-corner crossings fit no admissible grid",
                            non_corner.len()
                        ),
                    });
                }
            }
        }
    }
    (violations.is_empty(), violations)
}

fn is_facet_corner(f: &Facet, p: &HPoint, shift: &Shift) -> bool {
    let tol = 1e-9;
    let z = p.z * shift.a_z;
    let at_z = (z - f.z_lo).abs() <= tol || (z - f.base_z_hi).abs() <= tol;
    let mut at_all_x = true;
    for (i, v) in p.x.iter().enumerate() {
        if Some(i) == f.axis {
            continue;
        }
        let std = v + shift.a_x[i];
        at_all_x &= (std - f.x_lo[i]).abs() <= tol || (std - f.x_hi[i]).abs() <= tol;
    }
    if f.axis.is_some() {
        at_z && at_all_x
    } else {
        at_all_x
    }
}

/// Is there a uniform grid of size g on the facet, 2^(d-1) <= g <=
/// r^(2(d-1)) / (number of crossings), containing every crossing?
fn admissible_grid_exists(
    facet: &Facet,
    crossings: &[&HPoint],
    shift: &Shift,
    r: u32,
    d: usize,
) -> bool {
    let count = crossings.len() as f64;
    let g_hi = (r as f64).powi(2 * (d as i32 - 1)) / count;
    let g_lo = (1 << (d - 1)) as f64;
    if g_hi < g_lo {
        return false;
    }
    // per-axis point counts j with j^(d-1) in [g_lo, g_hi]
    let j_max = g_hi.powf(1.0 / (d as f64 - 1.0)).floor() as u32;
    let j_min = (g_lo.powf(1.0 / (d as f64 - 1.0)).ceil() as u32).max(2);
    'grid: for j in j_min..=j_max.min(4096) {
        for p in crossings {
            if !on_uniform_grid(facet, p, shift, j) {
                continue 'grid;
            }
        }
        return true;
    }
    false
}

fn on_uniform_grid(facet: &Facet, p: &HPoint, shift: &Shift, j: u32) -> bool {
    let tol = 1e-9;
    let steps = (j - 1) as f64;
    // grid over the unextended facet box, Euclidean spacing side/(j-1)
    for (i, v) in p.x.iter().enumerate() {
        if Some(i) == facet.axis {
            continue;
        }
        let side = facet.x_hi[i] - facet.x_lo[i];
        if side <= 0.0 {
            continue;
        }
        let std = v + shift.a_x[i];
        let t = (std - facet.x_lo[i]) / (side / steps);
        if (t - t.round()).abs() > tol / (side / steps) {
            return false;
        }
    }
    if facet.axis.is_some() {
        let side = facet.base_z_hi - facet.z_lo;
        let z = p.z * shift.a_z;
        let t = (z - facet.z_lo) / (side / steps);
        if (t - t.round()).abs() > tol / (side / steps) {
            return false;
        }
    }
    true
}

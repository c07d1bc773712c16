//! The r-multipath machinery and the portal-respecting TSP solver.
//!
//! A solution inside a cell is a collection of paths pairing up boundary
//! portals (a matching) and covering the cell's points; tables keep, per
//! portal subset B, a representative set of matchings with their optimal
//! costs. The end-to-end solver works over an equivalent route-graph view of
//! the same model: tour vertices are perturbed points and facet portals,
//! hops connect vertices that share a region (a leaf cell, an empty sibling
//! cell, or a compressed carved region), every facet transit happens at a
//! portal vertex, and each portal carries at most two transits.

use std::collections::{BTreeMap, BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::hgeom::{
    crossing, geodesic, horosphere_intersections, hyp_distance_unchecked, HPoint, Horosphere,
    VerticalHyperplane,
};
use crate::hybridtree::{
    build_compressed_tree, cell_children, CellBox, CellKey, NodeId, NodeKind, Prepared, Shift,
    ShiftedTree,
};
use crate::portals::{build_facets, inner_facets, Facet, FacetSet, PortalConfig};

// ---------------------------------------------------------------------------
// matchings and representative sets
// ---------------------------------------------------------------------------

/// A perfect matching on an even-sized, position-indexed portal subset B.
/// Pairs are stored canonically: each (lo, hi) with lo < hi, sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Matching {
    pairs: Vec<(u8, u8)>,
}

impl Matching {
    pub fn new(mut pairs: Vec<(u8, u8)>) -> Matching {
        for p in pairs.iter_mut() {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        pairs.sort_unstable();
        Matching { pairs }
    }

    pub fn empty() -> Matching {
        Matching { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(u8, u8)] {
        &self.pairs
    }

    pub fn size(&self) -> usize {
        2 * self.pairs.len()
    }

    fn is_perfect_on(&self, size: usize) -> bool {
        let mut seen = vec![false; size];
        for &(a, b) in &self.pairs {
            let (a, b) = (a as usize, b as usize);
            if a >= size || b >= size || a == b || seen[a] || seen[b] {
                return false;
            }
            seen[a] = true;
            seen[b] = true;
        }
        seen.iter().all(|&s| s)
    }
}

/// All perfect matchings on positions 0..size ((size-1)!! of them).
pub fn all_matchings(size: usize) -> Vec<Matching> {
    assert!(size % 2 == 0 && size <= 16);
    let mut out = Vec::new();
    let mut pairs = Vec::new();
    let mut used = vec![false; size];
    fn rec(used: &mut [bool], pairs: &mut Vec<(u8, u8)>, out: &mut Vec<Matching>) {
        let Some(first) = used.iter().position(|&u| !u) else {
            out.push(Matching::new(pairs.clone()));
            return;
        };
        used[first] = true;
        for second in first + 1..used.len() {
            if !used[second] {
                used[second] = true;
                pairs.push((first as u8, second as u8));
                rec(used, pairs, out);
                pairs.pop();
                used[second] = false;
            }
        }
        used[first] = false;
    }
    rec(&mut used, &mut pairs, &mut out);
    out
}

/// Do two matchings on the same B fit, i.e. is their union a single
/// Hamiltonian cycle on B? The empty pair fits trivially; |B| = 2 doubles
/// the edge into a 2-cycle.
pub fn fits(m1: &Matching, m2: &Matching, size: usize) -> Result<bool> {
    if !m1.is_perfect_on(size) || !m2.is_perfect_on(size) {
        return Err(Error::Domain("matchings must be perfect on the same B".into()));
    }
    if size == 0 {
        return Ok(true);
    }
    let mut p1 = vec![0usize; size];
    let mut p2 = vec![0usize; size];
    for &(a, b) in &m1.pairs {
        p1[a as usize] = b as usize;
        p1[b as usize] = a as usize;
    }
    for &(a, b) in &m2.pairs {
        p2[a as usize] = b as usize;
        p2[b as usize] = a as usize;
    }
    // alternate m1/m2 edges from vertex 0; a single cycle visits everyone
    let mut visited = 0usize;
    let mut v = 0usize;
    loop {
        visited += 2;
        let u = p1[v];
        v = p2[u];
        if v == 0 {
            break;
        }
    }
    Ok(visited >= size)
}

#[derive(Debug, Clone)]
pub struct RepEntry {
    pub matching: Matching,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    /// Keep, for every complement matching, one cheapest fitting partner.
    CheapestPartner,
    /// Rank-based reduction over the GF(2) fitting matrix.
    RankBased,
}

/// Shrink a candidate set while preserving `opt(M, .)` for every matching M.
pub fn reduce_representative(entries: &[RepEntry], size: usize, mode: ReduceMode) -> Vec<RepEntry> {
    if entries.is_empty() {
        return Vec::new();
    }
    // drop duplicate matchings, keeping the cheaper copy
    let mut dedup: BTreeMap<Matching, f64> = BTreeMap::new();
    for e in entries {
        let slot = dedup.entry(e.matching.clone()).or_insert(f64::INFINITY);
        if e.cost < *slot {
            *slot = e.cost;
        }
    }
    let mut sorted: Vec<RepEntry> =
        dedup.into_iter().map(|(matching, cost)| RepEntry { matching, cost }).collect();
    // ties broken by the lexicographic matching order for determinism
    sorted.sort_by(|a, b| {
        a.cost.partial_cmp(&b.cost).unwrap().then_with(|| a.matching.cmp(&b.matching))
    });

    let complements = all_matchings(size);
    match mode {
        ReduceMode::CheapestPartner => {
            let mut keep = vec![false; sorted.len()];
            for m in &complements {
                if let Some(best) = (0..sorted.len())
                    .find(|&i| fits(&sorted[i].matching, m, size).unwrap_or(false))
                {
                    keep[best] = true;
                }
            }
            sorted
                .into_iter()
                .zip(keep)
                .filter_map(|(e, k)| k.then_some(e))
                .collect()
        }
        ReduceMode::RankBased => {
            // row(M') = fitting indicator over all complements; keep a
            // cost-ordered GF(2) basis of the row space
            let words = complements.len().div_ceil(64);
            let mut basis: Vec<(Vec<u64>, usize)> = Vec::new(); // (reduced row, pivot)
            let mut out = Vec::new();
            for e in sorted {
                let mut row = vec![0u64; words];
                for (j, m) in complements.iter().enumerate() {
                    if fits(&e.matching, m, size).unwrap_or(false) {
                        row[j / 64] |= 1u64 << (j % 64);
                    }
                }
                for (b, pivot) in &basis {
                    if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                        for (rw, bw) in row.iter_mut().zip(b) {
                            *rw ^= bw;
                        }
                    }
                }
                if let Some(pivot) = (0..complements.len()).find(|j| row[j / 64] >> (j % 64) & 1 == 1)
                {
                    basis.push((row, pivot));
                    out.push(e);
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// leaf solving
// ---------------------------------------------------------------------------

/// Minimum total length of |M| paths pairing up the boundary points per the
/// matching and covering every cell point, by brute force over assignments
/// and visit orders. Returns the ordered point indices of each path.
/// `None` when the demand is infeasible (points present but no paths).
pub fn solve_leaf(
    boundary: &[HPoint],
    m: &Matching,
    points: &[HPoint],
) -> Option<(f64, Vec<Vec<usize>>)> {
    if !m.is_perfect_on(boundary.len()) {
        return None;
    }
    let k = m.pairs.len();
    if k == 0 {
        return points.is_empty().then(|| (0.0, Vec::new()));
    }
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    let mut assign = vec![0usize; points.len()];
    loop {
        let mut total = 0.0;
        let mut orders: Vec<Vec<usize>> = Vec::with_capacity(k);
        for (pi, &(a, b)) in m.pairs.iter().enumerate() {
            let mine: Vec<usize> =
                (0..points.len()).filter(|&i| assign[i] == pi).collect();
            let (cost, order) =
                best_path_order(&boundary[a as usize], &boundary[b as usize], points, &mine);
            total += cost;
            orders.push(order);
        }
        if best.as_ref().map_or(true, |(c, _)| total < *c) {
            best = Some((total, orders));
        }
        // next assignment
        let mut i = 0;
        loop {
            if i == assign.len() {
                return best;
            }
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

fn best_path_order(
    from: &HPoint,
    to: &HPoint,
    points: &[HPoint],
    subset: &[usize],
) -> (f64, Vec<usize>) {
    if subset.is_empty() {
        return (hyp_distance_unchecked(from, to), Vec::new());
    }
    let mut order: Vec<usize> = subset.to_vec();
    let mut best = (f64::INFINITY, subset.to_vec());
    permute(&mut order, 0, &mut |perm| {
        let mut cost = hyp_distance_unchecked(from, &points[perm[0]]);
        for w in perm.windows(2) {
            cost += hyp_distance_unchecked(&points[w[0]], &points[w[1]]);
        }
        cost += hyp_distance_unchecked(&points[*perm.last().unwrap()], to);
        if cost < best.0 {
            best = (cost, perm.to_vec());
        }
    });
    best
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

// ---------------------------------------------------------------------------
// tables and combination
// ---------------------------------------------------------------------------

/// Representative table of one cell: per boundary subset B (a sorted portal
/// multiset), the representative matchings with optimal costs.
#[derive(Debug, Clone, Default)]
pub struct RepTable {
    pub entries: BTreeMap<Vec<u32>, Vec<RepEntry>>,
}

impl RepTable {
    pub fn insert(&mut self, b: Vec<u32>, matching: Matching, cost: f64) {
        self.entries.entry(b).or_default().push(RepEntry { matching, cost });
    }

    pub fn reduce(&mut self, mode: ReduceMode) {
        for (b, list) in self.entries.iter_mut() {
            *list = reduce_representative(list, b.len(), mode);
        }
    }

    pub fn total_entries(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }
}

/// One child's table for combination: entries of (sorted boundary portal
/// multiset, matching on its positions, cost).
#[derive(Debug, Clone)]
pub struct ChildTable {
    pub entries: Vec<(Vec<u32>, Matching, f64)>,
}

/// Glue child solutions across internal portals: every endpoint at an
/// internal portal pairs with one from a different child (a crossing, at
/// most two per portal), closed cycles are rejected, and surviving open
/// chains induce the parent matching on the external boundary.
pub fn combine(children: &[ChildTable], is_internal: impl Fn(u32) -> bool) -> Result<RepTable> {
    let mut table = RepTable::default();
    let mut pick = vec![0usize; children.len()];
    if children.iter().any(|c| c.entries.is_empty()) {
        return Err(Error::Internal("combine requires a table per child".into()));
    }
    loop {
        glue_choice(children, &pick, &is_internal, &mut table)?;
        let mut i = 0;
        loop {
            if i == children.len() {
                table.reduce(ReduceMode::CheapestPartner);
                return Ok(table);
            }
            pick[i] += 1;
            if pick[i] < children[i].entries.len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EndRef {
    child: usize,
    path: usize,
    end: usize, // 0 or 1
}

fn glue_choice(
    children: &[ChildTable],
    pick: &[usize],
    is_internal: &impl Fn(u32) -> bool,
    out: &mut RepTable,
) -> Result<()> {
    // endpoints of every child path, grouped by portal
    let mut cost = 0.0;
    let mut ends: Vec<(u32, EndRef)> = Vec::new();
    let mut n_paths: Vec<usize> = Vec::new();
    for (ci, child) in children.iter().enumerate() {
        let (b, m, c) = &child.entries[pick[ci]];
        if !m.is_perfect_on(b.len()) {
            return Err(Error::Domain("child matching does not match its B".into()));
        }
        cost += c;
        n_paths.push(m.pairs.len());
        for (pi, &(a, bb)) in m.pairs.iter().enumerate() {
            ends.push((b[a as usize], EndRef { child: ci, path: pi, end: 0 }));
            ends.push((b[bb as usize], EndRef { child: ci, path: pi, end: 1 }));
        }
    }
    let mut internal: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, (portal, _)) in ends.iter().enumerate() {
        if is_internal(*portal) {
            internal.entry(*portal).or_default().push(i);
        }
    }
    // at most two crossings per portal
    for group in internal.values() {
        if group.len() % 2 != 0 || group.len() > 4 {
            return Ok(());
        }
    }
    let groups: Vec<Vec<usize>> = internal.into_values().collect();
    let mut pairing: Vec<(usize, usize)> = Vec::new();
    enumerate_pairings(&groups, 0, &mut pairing, &mut |glues| {
        record_glued(children, pick, &ends, glues, cost, out);
    });
    Ok(())
}

fn enumerate_pairings(
    groups: &[Vec<usize>],
    gi: usize,
    acc: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if gi == groups.len() {
        visit(acc);
        return;
    }
    let group = &groups[gi];
    fn pair_up(
        rest: &[usize],
        groups: &[Vec<usize>],
        gi: usize,
        acc: &mut Vec<(usize, usize)>,
        visit: &mut impl FnMut(&[(usize, usize)]),
    ) {
        if rest.is_empty() {
            enumerate_pairings(groups, gi + 1, acc, visit);
            return;
        }
        let first = rest[0];
        for j in 1..rest.len() {
            acc.push((first, rest[j]));
            let remaining: Vec<usize> =
                rest[1..].iter().enumerate().filter(|(k, _)| *k != j - 1).map(|(_, &v)| v).collect();
            pair_up(&remaining, groups, gi, acc, visit);
            acc.pop();
        }
    }
    pair_up(group, groups, gi, acc, visit);
}

fn record_glued(
    children: &[ChildTable],
    pick: &[usize],
    ends: &[(u32, EndRef)],
    glues: &[(usize, usize)],
    cost: f64,
    out: &mut RepTable,
) {
    // crossings pair endpoints from different children
    for &(a, b) in glues {
        if ends[a].1.child == ends[b].1.child {
            return;
        }
    }
    // walk chains: endpoint graph has path edges (the two ends of one child
    // path) and glue edges; cycles are closed subtours and get rejected
    let mut glue_partner: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in glues {
        glue_partner.insert(a, b);
        glue_partner.insert(b, a);
    }
    let other_end: HashMap<(usize, usize, usize), usize> = ends
        .iter()
        .enumerate()
        .map(|(i, (_, e))| ((e.child, e.path, 1 - e.end), i))
        .collect();
    let mut seen = vec![false; ends.len()];
    let mut open: Vec<(usize, usize)> = Vec::new(); // (free end, free end)
    for start in 0..ends.len() {
        if seen[start] || glue_partner.contains_key(&start) {
            continue;
        }
        // follow the chain from a free end
        let mut cur = start;
        seen[cur] = true;
        loop {
            let e = ends[cur].1;
            let far = other_end[&(e.child, e.path, e.end)];
            seen[far] = true;
            match glue_partner.get(&far) {
                Some(&next) => {
                    seen[next] = true;
                    cur = next;
                }
                None => {
                    open.push((start, far));
                    break;
                }
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        return; // an unreached component is a closed cycle
    }
    let _ = (children, pick);
    // build the parent entry: external slots sorted, matching on positions
    let mut slots: Vec<(u32, usize)> = Vec::new(); // (portal, end index)
    for &(a, b) in &open {
        slots.push((ends[a].0, a));
        slots.push((ends[b].0, b));
    }
    slots.sort();
    let pos_of: HashMap<usize, u8> =
        slots.iter().enumerate().map(|(i, &(_, e))| (e, i as u8)).collect();
    let b_out: Vec<u32> = slots.iter().map(|&(p, _)| p).collect();
    let matching =
        Matching::new(open.iter().map(|&(a, b)| (pos_of[&a], pos_of[&b])).collect());
    out.insert(b_out, matching, cost);
}

// ---------------------------------------------------------------------------
// route graph and the end-to-end solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Cap on tour crossings of any single cell boundary; demands beyond it
    /// are rejected with a resource-cap error.
    pub b_max: usize,
    /// Per-axis dyadic cap on the portal vocabulary the solver works with.
    pub axis_cap: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { b_max: 10, axis_cap: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TourVertex {
    Input(usize),
    Portal { facet: usize, idx: usize },
}

/// A closed portal-respecting tour: input points and portal transits in
/// visiting order. Every `Portal` vertex is one crossing of its facet.
#[derive(Debug, Clone)]
pub struct Tour {
    pub vertices: Vec<TourVertex>,
    pub positions: Vec<HPoint>,
    pub length: f64,
}

impl Tour {
    pub fn portal_usage(&self) -> HashMap<(usize, usize), usize> {
        let mut usage = HashMap::new();
        for v in &self.vertices {
            if let TourVertex::Portal { facet, idx } = v {
                *usage.entry((*facet, *idx)).or_insert(0) += 1;
            }
        }
        usage
    }

    /// Closed, visits every input exactly once, and respects the two-transit
    /// portal budget.
    pub fn is_feasible(&self, n_inputs: usize) -> bool {
        let mut seen = vec![false; n_inputs];
        for v in &self.vertices {
            if let TourVertex::Input(i) = v {
                if *i >= n_inputs || seen[*i] {
                    return false;
                }
                seen[*i] = true;
            }
        }
        seen.iter().all(|&s| s) && self.portal_usage().values().all(|&u| u <= 2)
    }

    /// Recompute the geodesic length of the vertex cycle.
    pub fn recompute_length(&self) -> f64 {
        if self.positions.len() < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for w in self.positions.windows(2) {
            total += hyp_distance_unchecked(&w[0], &w[1]);
        }
        total + hyp_distance_unchecked(self.positions.last().unwrap(), &self.positions[0])
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TableStats {
    pub nodes: usize,
    pub leaves: usize,
    pub facets: usize,
    pub portals: usize,
    pub graph_vertices: usize,
    pub graph_edges: usize,
    pub repair_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct TspRun {
    pub tour: Tour,
    pub stats: TableStats,
    /// Whether the returned length is the exact optimum of the route model
    /// (no budget repair was necessary and the order search was exact).
    pub exact: bool,
}

/// Hop regions of the route graph: vertices sharing a region connect by a
/// geodesic hop.
#[derive(Debug, Clone)]
enum HopRegion {
    Leaf(NodeId),
    Compressed(NodeId),
    Empty(CellKey),
}

pub(crate) struct RouteGraph {
    pub positions: Vec<HPoint>,
    pub vertex_portal: Vec<Option<(usize, usize)>>,
    pub n_sites: usize,
    pub site_inputs: Vec<Vec<usize>>,
    pub adj: Vec<Vec<(u32, f64)>>,
    pub n_edges: usize,
    /// Per occupied leaf: the vertices on it (sites and boundary portals).
    pub leaf_members: Vec<(NodeId, Vec<u32>)>,
}

fn on_box_face(bx: &CellBox, p: &HPoint, tol: f64) -> bool {
    if !bx.contains(p, tol) {
        return false;
    }
    let mut at_face = (p.z - bx.z_lo).abs() <= tol || (p.z - bx.z_hi).abs() <= tol;
    for i in 0..p.x.len() {
        at_face |= (p.x[i] - bx.x_lo[i]).abs() <= tol || (p.x[i] - bx.x_hi[i]).abs() <= tol;
    }
    at_face
}

/// Legality of a hop inside a compressed region: the geodesic may not cross
/// an interior face of the carved inner cell except at its own endpoints.
fn region_hop_legal(u: &HPoint, v: &HPoint, inner_faces: &[Facet], shift: &Shift) -> bool {
    let Ok(geo) = geodesic(u, v) else { return true };
    for f in inner_faces {
        match f.axis {
            Some(ax) => {
                let plane =
                    VerticalHyperplane { axis: ax, offset: f.offset - shift.a_x[ax] };
                match crossing(&geo, &plane) {
                    Err(_) => continue, // endpoint on the plane: crossing at the portal itself
                    Ok(None) => continue,
                    Ok(Some(c)) => {
                        if inside_facet_patch(f, &c, shift) {
                            return false;
                        }
                    }
                }
            }
            None => {
                let plane_z = f.offset / shift.a_z;
                if (u.z - plane_z).abs() < 1e-9 || (v.z - plane_z).abs() < 1e-9 {
                    continue;
                }
                if (u.z - plane_z).signum() == (v.z - plane_z).signum() {
                    continue;
                }
                for c in horosphere_intersections(&geo, &Horosphere { height: plane_z }) {
                    if inside_facet_patch(f, &c, shift) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Is a normalized-frame point inside the facet's patch (extension not
/// counted)?
fn inside_facet_patch(f: &Facet, p: &HPoint, shift: &Shift) -> bool {
    let tol = 1e-9;
    let z = p.z * shift.a_z;
    if z < f.z_lo - tol || z > f.base_z_hi + tol {
        return false;
    }
    for (i, v) in p.x.iter().enumerate() {
        let std = v + shift.a_x[i];
        if Some(i) == f.axis {
            continue;
        }
        if std < f.x_lo[i] - tol || std > f.x_hi[i] + tol {
            return false;
        }
    }
    true
}

pub(crate) fn build_route_graph(tree: &ShiftedTree, fs: &FacetSet) -> RouteGraph {
    let d = tree.d;
    // distinct perturbed sites
    let mut site_inputs: Vec<Vec<usize>> = Vec::new();
    let mut site_pos: Vec<HPoint> = Vec::new();
    let mut site_leaf: Vec<NodeId> = Vec::new();
    for (i, p) in tree.points.iter().enumerate() {
        match site_pos.iter().position(|q| q.approx_eq(p, 1e-12)) {
            Some(s) => site_inputs[s].push(i),
            None => {
                site_pos.push(p.clone());
                site_inputs.push(vec![i]);
                site_leaf.push(tree.point_leaf[i]);
            }
        }
    }
    let n_sites = site_pos.len();

    let mut positions = site_pos;
    let mut vertex_portal: Vec<Option<(usize, usize)>> = vec![None; n_sites];
    let mut portal_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut positions_std: Vec<HPoint> =
        (0..n_sites).map(|s| tree.points_tree[site_inputs[s][0]].clone()).collect();
    for (fi, pset) in fs.portals.iter().enumerate() {
        let facet = &fs.facets[fi];
        for (k, p_std) in pset.points_std.iter().enumerate() {
            // extension portals stay out of the solver's vocabulary
            if p_std.z > facet.base_z_hi + 1e-9 {
                continue;
            }
            let v = positions.len() as u32;
            portal_vertex.insert((fi, k), v);
            positions.push(pset.points[k].clone());
            positions_std.push(p_std.clone());
            vertex_portal.push(Some((fi, k)));
        }
    }

    // hop regions
    let mut regions: Vec<HopRegion> = Vec::new();
    for (id, node) in tree.nodes.iter().enumerate() {
        match &node.kind {
            NodeKind::Leaf { .. } => regions.push(HopRegion::Leaf(id)),
            NodeKind::Compressed { .. } => regions.push(HopRegion::Compressed(id)),
            NodeKind::Branch { children } => {
                let present: Vec<&CellKey> =
                    children.iter().map(|&c| &tree.nodes[c].cell).collect();
                for cell in cell_children(&node.cell, d, tree.l_min) {
                    if !present.contains(&&cell) {
                        regions.push(HopRegion::Empty(cell));
                    }
                }
            }
        }
    }

    // membership and edges
    let mut edges: HashMap<(u32, u32), f64> = HashMap::new();
    let mut leaf_members: Vec<(NodeId, Vec<u32>)> = Vec::new();
    let tol = 1e-9;
    for region in &regions {
        let mut members: Vec<u32> = Vec::new();
        let (outer_box, inner): (CellBox, Option<(CellBox, Vec<Facet>)>) = match region {
            HopRegion::Leaf(id) => (tree.nodes[*id].cell.boxed(d), None),
            HopRegion::Empty(cell) => (cell.boxed(d), None),
            HopRegion::Compressed(id) => {
                let NodeKind::Compressed { inner, .. } = &tree.nodes[*id].kind else {
                    unreachable!()
                };
                let faces = inner_facets(&tree.nodes[*id].cell, inner, d);
                (tree.nodes[*id].cell.boxed(d), Some((inner.boxed(d), faces)))
            }
        };
        match region {
            HopRegion::Leaf(id) => {
                for s in 0..n_sites {
                    if site_leaf[s] == *id {
                        members.push(s as u32);
                    }
                }
            }
            _ => {}
        }
        for v in n_sites..positions.len() {
            let p_std = &positions_std[v];
            let on = match &inner {
                None => on_box_face(&outer_box, p_std, tol),
                Some((ib, _)) => {
                    let on_outer = on_box_face(&outer_box, p_std, tol);
                    let on_inner = on_box_face(ib, p_std, tol);
                    (on_outer || on_inner) && outer_box.contains(p_std, tol)
                }
            };
            if on {
                members.push(v as u32);
            }
        }
        if let HopRegion::Leaf(id) = region {
            leaf_members.push((*id, members.clone()));
        }
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (a, b) = (members[i], members[j]);
                let (pa, pb) = (&positions[a as usize], &positions[b as usize]);
                if let Some((_, faces)) = &inner {
                    if !region_hop_legal(pa, pb, faces, &tree.shift) {
                        continue;
                    }
                }
                let wgt = hyp_distance_unchecked(pa, pb);
                let key = if a < b { (a, b) } else { (b, a) };
                let e = edges.entry(key).or_insert(f64::INFINITY);
                if wgt < *e {
                    *e = wgt;
                }
            }
        }
    }

    let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); positions.len()];
    for (&(a, b), &wgt) in &edges {
        adj[a as usize].push((b, wgt));
        adj[b as usize].push((a, wgt));
    }
    RouteGraph {
        positions,
        vertex_portal,
        n_sites,
        site_inputs,
        n_edges: edges.len(),
        adj,
        leaf_members,
    }
}

struct HeapItem(f64, u32);
impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0 && self.1 == other.1
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on cost
        other.0.partial_cmp(&self.0).unwrap().then(other.1.cmp(&self.1))
    }
}

impl RouteGraph {
    /// Dijkstra from a source, optionally banning some vertices.
    fn shortest_from(&self, src: u32, banned: &[bool]) -> (Vec<f64>, Vec<u32>) {
        let n = self.positions.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![u32::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[src as usize] = 0.0;
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(cost, v)) = heap.pop() {
            if cost > dist[v as usize] {
                continue;
            }
            for &(u, wgt) in &self.adj[v as usize] {
                if banned[u as usize] {
                    continue;
                }
                let next = cost + wgt;
                if next < dist[u as usize] - 1e-15 {
                    dist[u as usize] = next;
                    prev[u as usize] = v;
                    heap.push(HeapItem(next, u));
                }
            }
        }
        (dist, prev)
    }

    fn route(&self, prev: &[u32], src: u32, dst: u32) -> Option<Vec<u32>> {
        let mut path = vec![dst];
        let mut cur = dst;
        while cur != src {
            cur = prev[cur as usize];
            if cur == u32::MAX {
                return None;
            }
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

fn held_karp_order(dist: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = dist.len();
    if n == 1 {
        return (0.0, vec![0]);
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut par = vec![usize::MAX; full * n];
    dp[(1 << 0) * n] = 0.0; // mask {0}, at 0
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
    let mut best = (f64::INFINITY, 0usize);
    for last in 1..n {
        let total = dp[(full - 1) * n + last] + dist[last][0];
        if total < best.0 {
            best = (total, last);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full - 1;
    let mut last = best.1;
    while last != usize::MAX {
        order.push(last);
        let p = par[mask * n + last];
        mask &= !(1 << last);
        last = p;
    }
    order.reverse();
    (best.0, order)
}

fn nn_two_opt_order(dist: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = dist.len();
    let mut order = vec![0usize];
    let mut used = vec![false; n];
    used[0] = true;
    while order.len() < n {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| dist[last][a].partial_cmp(&dist[last][b]).unwrap())
            .unwrap();
        used[next] = true;
        order.push(next);
    }
    let tour_len = |ord: &[usize]| -> f64 {
        let mut t = 0.0;
        for i in 0..ord.len() {
            t += dist[ord[i]][ord[(i + 1) % ord.len()]];
        }
        t
    };
    let mut improved = true;
    while improved {
        improved = false;
        for i in 1..n - 1 {
            for j in i + 1..n {
                let mut cand = order.clone();
                cand[i..=j].reverse();
                if tour_len(&cand) + 1e-12 < tour_len(&order) {
                    order = cand;
                    improved = true;
                }
            }
        }
    }
    (tour_len(&order), order)
}

/// Portal-respecting TSP for one shift: builds the shifted compressed tree
/// and its (capped) portal vocabulary, finds optimal portal routes between
/// perturbed sites, and closes them into a tour with Held-Karp (exact up to
/// 16 distinct sites, local search beyond). If shortest routes collide on a
/// portal beyond its two-transit budget, legs are rerouted; the run is
/// flagged exact only when no repair was needed.
pub fn run_tsp(prep: &Prepared, shift: &Shift, cfg: &SolverConfig) -> Result<TspRun> {
    if prep.perturbed.points.len() < 2 {
        return Err(Error::Domain("TSP needs at least 2 points".into()));
    }
    let tree = build_compressed_tree(
        &prep.perturbed.points,
        prep.d,
        prep.l_min,
        prep.l_max,
        shift,
    )?;
    let pc = PortalConfig::capped(prep.r, prep.l_min, cfg.axis_cap);
    let fs = build_facets(&tree, &pc)?;
    let graph = build_route_graph(&tree, &fs);
    let mut stats = TableStats {
        nodes: tree.nodes.len(),
        leaves: tree.leaves().len(),
        facets: fs.facets.len(),
        portals: fs.total_portals(),
        graph_vertices: graph.positions.len(),
        graph_edges: graph.n_edges,
        repair_rounds: 0,
    };

    let ns = graph.n_sites;
    if ns == 1 {
        // all inputs coincide: the degenerate closed tour
        let tour = Tour {
            vertices: graph.site_inputs[0].iter().map(|&i| TourVertex::Input(i)).collect(),
            positions: vec![graph.positions[0].clone(); graph.site_inputs[0].len()],
            length: 0.0,
        };
        return Ok(TspRun { tour, stats, exact: true });
    }

    let banned = vec![false; graph.positions.len()];
    let mut dist = vec![vec![f64::INFINITY; ns]; ns];
    let mut routes: Vec<Vec<Vec<u32>>> = vec![vec![Vec::new(); ns]; ns];
    for s in 0..ns {
        let (dv, prev) = graph.shortest_from(s as u32, &banned);
        for t in 0..ns {
            if t == s {
                dist[s][t] = 0.0;
                continue;
            }
            dist[s][t] = dv[t];
            routes[s][t] = graph.route(&prev, s as u32, t as u32).ok_or_else(|| {
                Error::Internal("route graph is disconnected between sites".into())
            })?;
        }
    }

    let (order, mut exact) = if ns <= 16 {
        let (_, order) = held_karp_order(&dist);
        (order, true)
    } else {
        let (_, order) = nn_two_opt_order(&dist);
        (order, false)
    };

    // legs in visiting order, then repair portal over-use
    let mut legs: Vec<Vec<u32>> = (0..ns)
        .map(|i| routes[order[i]][order[(i + 1) % ns]].clone())
        .collect();
    for _round in 0..64 {
        let mut usage: HashMap<u32, usize> = HashMap::new();
        for leg in &legs {
            for &v in &leg[1..leg.len() - 1] {
                *usage.entry(v).or_insert(0) += 1;
            }
        }
        let Some((&worst, _)) = usage.iter().filter(|(_, &u)| u > 2).max_by_key(|(_, &u)| u)
        else {
            break;
        };
        exact = false;
        stats.repair_rounds += 1;
        // reroute the cheapest-to-fix leg around the overloaded portal
        let mut best: Option<(usize, Vec<u32>, f64)> = None;
        for (li, leg) in legs.iter().enumerate() {
            if !leg[1..leg.len() - 1].contains(&worst) {
                continue;
            }
            let mut ban = vec![false; graph.positions.len()];
            ban[worst as usize] = true;
            let src = leg[0];
            let dst = *leg.last().unwrap();
            let (dv, prev) = graph.shortest_from(src, &ban);
            if !dv[dst as usize].is_finite() {
                continue;
            }
            let old: f64 = leg
                .windows(2)
                .map(|w| {
                    hyp_distance_unchecked(
                        &graph.positions[w[0] as usize],
                        &graph.positions[w[1] as usize],
                    )
                })
                .sum();
            let increase = dv[dst as usize] - old;
            if best.as_ref().map_or(true, |(_, _, inc)| increase < *inc) {
                best = Some((li, graph.route(&prev, src, dst).unwrap(), increase));
            }
        }
        match best {
            Some((li, new_leg, _)) => legs[li] = new_leg,
            None => {
                return Err(Error::ResourceCap(
                    "portal budget repair failed; raise the portal caps".into(),
                ))
            }
        }
    }

    // assemble the closed tour
    let mut vertices = Vec::new();
    let mut positions = Vec::new();
    for (i, leg) in legs.iter().enumerate() {
        let site = order[i];
        for &input in &graph.site_inputs[site] {
            vertices.push(TourVertex::Input(input));
            positions.push(graph.positions[site].clone());
        }
        for &v in &leg[1..leg.len() - 1] {
            let (facet, idx) = graph.vertex_portal[v as usize].unwrap();
            vertices.push(TourVertex::Portal { facet, idx });
            positions.push(graph.positions[v as usize].clone());
        }
    }
    let mut tour = Tour { vertices, positions, length: 0.0 };
    tour.length = tour.recompute_length();

    if !tour.is_feasible(prep.perturbed.points.len()) {
        return Err(Error::Internal("assembled tour is infeasible".into()));
    }
    enforce_boundary_budget(&tour, &tree, &fs, cfg.b_max)?;
    Ok(TspRun { tour, stats, exact })
}

/// The table-DP budget |B| <= b_max translates to: the tour crosses any
/// single cell boundary at most b_max times.
fn enforce_boundary_budget(
    tour: &Tour,
    tree: &ShiftedTree,
    fs: &FacetSet,
    b_max: usize,
) -> Result<()> {
    let tol = 1e-9;
    for node in &tree.nodes {
        let bx = node.cell.boxed(tree.d);
        let mut crossings = 0usize;
        for v in &tour.vertices {
            if let TourVertex::Portal { facet, idx } = v {
                let p_std = &fs.portals[*facet].points_std[*idx];
                if on_box_face(&bx, p_std, tol) {
                    crossings += 1;
                }
            }
        }
        if crossings > b_max {
            return Err(Error::ResourceCap(format!(
                "tour needs {crossings} boundary portals on one cell (bmax {b_max}); raise --bmax"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridtree::{prepare, Instance, Shift};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, z: f64) -> HPoint {
        HPoint { x: vec![x], z }
    }

    #[test]
    fn fits_examples() {
        // B = {0,1,2,3}: {(0,1),(2,3)} with {(1,2),(3,0)} forms a 4-cycle
        let m1 = Matching::new(vec![(0, 1), (2, 3)]);
        let m2 = Matching::new(vec![(1, 2), (3, 0)]);
        assert!(fits(&m1, &m2, 4).unwrap());
        // two 2-cycles do not fit
        assert!(!fits(&m1, &m1, 4).unwrap());
        // |B| = 2: the doubled edge is the 2-cycle
        let m = Matching::new(vec![(0, 1)]);
        assert!(fits(&m, &m, 2).unwrap());
        // mismatched B errors
        assert!(fits(&m, &m1, 4).is_err());
    }

    #[test]
    fn solve_leaf_examples() {
        let a = pt(0.0, 1.0);
        let b = pt(1.0, 1.0);
        let m = Matching::new(vec![(0, 1)]);
        let boundary = [a.clone(), b.clone()];

        // no points: cost is the geodesic between the pair
        let (cost, _) = solve_leaf(&boundary, &m, &[]).unwrap();
        assert!((cost - hyp_distance_unchecked(&a, &b)).abs() < 1e-12);

        // one point: the single path a -> v -> b
        let v = pt(0.5, 1.2);
        let (cost, orders) = solve_leaf(&boundary, &m, &[v.clone()]).unwrap();
        let expect = hyp_distance_unchecked(&a, &v) + hyp_distance_unchecked(&v, &b);
        assert!((cost - expect).abs() < 1e-12);
        assert_eq!(orders, vec![vec![0]]);

        // two points, one pair: both orders enumerated explicitly
        let u = pt(0.2, 1.4);
        let o1 = hyp_distance_unchecked(&a, &v)
            + hyp_distance_unchecked(&v, &u)
            + hyp_distance_unchecked(&u, &b);
        let o2 = hyp_distance_unchecked(&a, &u)
            + hyp_distance_unchecked(&u, &v)
            + hyp_distance_unchecked(&v, &b);
        let (cost, _) = solve_leaf(&boundary, &m, &[v, u]).unwrap();
        assert!((cost - o1.min(o2)).abs() < 1e-12);

        // empty matching with points present is infeasible
        assert!(solve_leaf(&[], &Matching::empty(), &[a]).is_none());
    }

    #[test]
    fn reduce_representative_examples() {
        // |B| = 2 keeps exactly one matching
        let entries = vec![
            RepEntry { matching: Matching::new(vec![(0, 1)]), cost: 2.0 },
            RepEntry { matching: Matching::new(vec![(0, 1)]), cost: 1.0 },
        ];
        let red = reduce_representative(&entries, 2, ReduceMode::CheapestPartner);
        assert_eq!(red.len(), 1);
        assert_eq!(red[0].cost, 1.0); // duplicate keeps the cheaper copy

        // representativeness brute-checked on all |B| <= 6
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for size in [2usize, 4, 6] {
            let all = all_matchings(size);
            for _ in 0..20 {
                let mut entries: Vec<RepEntry> = Vec::new();
                for m in &all {
                    if rng.gen_bool(0.7) {
                        entries.push(RepEntry {
                            matching: m.clone(),
                            cost: rng.gen_range(0.0..10.0),
                        });
                    }
                }
                if entries.is_empty() {
                    continue;
                }
                for mode in [ReduceMode::CheapestPartner, ReduceMode::RankBased] {
                    let red = reduce_representative(&entries, size, mode);
                    assert!(red.len() <= entries.len());
                    if mode == ReduceMode::RankBased {
                        assert!(red.len() <= 1 << (size.max(1) - 1));
                    }
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
                            "opt(M, .) not preserved: {full} vs {kept} ({mode:?})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn combine_examples() {
        // single child, no internal portals: the table passes through with
        // its boundary intact
        let child = ChildTable {
            entries: vec![(vec![7, 9], Matching::new(vec![(0, 1)]), 1.5)],
        };
        let table = combine(&[child], |_| false).unwrap();
        let entry = table.entries.get(&vec![7, 9]).unwrap();
        assert_eq!(entry.len(), 1);
        assert!((entry[0].cost - 1.5).abs() < 1e-12);

        // two children sharing portal 5 used once: glue two paths into one
        let c1 = ChildTable { entries: vec![(vec![1, 5], Matching::new(vec![(0, 1)]), 2.0)] };
        let c2 = ChildTable { entries: vec![(vec![5, 9], Matching::new(vec![(0, 1)]), 3.0)] };
        let table = combine(&[c1, c2], |p| p == 5).unwrap();
        let entry = table.entries.get(&vec![1, 9]).unwrap();
        // glued cost is the sum of the children
        assert!((entry[0].cost - 5.0).abs() < 1e-12);

        // gluing both ends of the same pair of paths would close a cycle;
        // those combos are rejected, leaving no boundary-free entry
        let c1 = ChildTable { entries: vec![(vec![5, 6], Matching::new(vec![(0, 1)]), 2.0)] };
        let c2 = ChildTable { entries: vec![(vec![5, 6], Matching::new(vec![(0, 1)]), 3.0)] };
        let table = combine(&[c1, c2], |p| p == 5 || p == 6).unwrap();
        assert!(table.entries.is_empty());
    }

    fn p4_instance() -> Instance {
        Instance {
            d: 2,
            points: vec![pt(0.0, 1.3), pt(0.4, 1.1), pt(0.9, 1.7), pt(0.2, 2.6)],
            eps: 0.5,
            r: Some(4),
        }
    }

    #[test]
    fn run_tsp_n2_doubles_the_geodesic() {
        let inst = Instance { d: 2, points: vec![pt(0.0, 1.0), pt(0.7, 1.4)], eps: 0.5, r: Some(4) };
        let prep = prepare(&inst).unwrap();
        let run = run_tsp(&prep, &Shift::identity(2), &SolverConfig::default()).unwrap();
        assert!(run.tour.is_feasible(2));
        let direct = hyp_distance_unchecked(&prep.perturbed.points[0], &prep.perturbed.points[1]);
        assert!(run.tour.length >= 2.0 * direct - 1e-9);
        // the portal detour is second-order; five percent is generous
        assert!(run.tour.length <= 2.0 * direct * 1.05, "{} vs {}", run.tour.length, 2.0 * direct);
    }

    #[test]
    fn run_tsp_n3_at_least_perimeter() {
        let inst = Instance {
            d: 2,
            points: vec![pt(0.0, 1.0), pt(0.8, 1.2), pt(0.3, 2.0)],
            eps: 0.5,
            r: Some(4),
        };
        let prep = prepare(&inst).unwrap();
        let run = run_tsp(&prep, &Shift::identity(2), &SolverConfig::default()).unwrap();
        let p = &prep.perturbed.points;
        let perimeter = hyp_distance_unchecked(&p[0], &p[1])
            + hyp_distance_unchecked(&p[1], &p[2])
            + hyp_distance_unchecked(&p[2], &p[0]);
        assert!(run.tour.length >= perimeter - 1e-9);
    }

    #[test]
    fn run_tsp_p4_at_least_bruteforce() {
        let prep = prepare(&p4_instance()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..4 {
            let shift = prep.shift_spec.sample(&mut rng);
            let run = run_tsp(&prep, &shift, &SolverConfig::default()).unwrap();
            assert!(run.tour.is_feasible(4));
            // brute force over the 3 distinct cyclic orders of 4 points
            let p = &prep.perturbed.points;
            let orders = [[0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3]];
            let opt = orders
                .iter()
                .map(|o| {
                    (0..4)
                        .map(|i| hyp_distance_unchecked(&p[o[i]], &p[o[(i + 1) % 4]]))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(run.tour.length >= opt - 1e-9, "{} < {opt}", run.tour.length);
        }
    }

    #[test]
    fn run_tsp_monotone_in_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<HPoint> =
            (0..6).map(|_| pt(rng.gen_range(-1.0..1.0), rng.gen_range(0.8..2.4))).collect();
        let mut prev = f64::INFINITY;
        let mut shift: Option<Shift> = None;
        for r in [2u32, 4, 8, 16] {
            let inst = Instance { d: 2, points: points.clone(), eps: 0.5, r: Some(r) };
            let prep = prepare(&inst).unwrap();
            let s = shift.get_or_insert_with(|| prep.shift_spec.sample(&mut rng)).clone();
            let run = run_tsp(&prep, &s, &SolverConfig::default()).unwrap();
            assert!(run.tour.length <= prev + 1e-9, "r={r}: {} > {prev}", run.tour.length);
            prev = run.tour.length;
        }
    }

    #[test]
    fn run_tsp_same_leaf_edge_cases() {
        // two coincident points: zero-length degenerate tour
        let inst =
            Instance { d: 2, points: vec![pt(0.3, 1.2), pt(0.3, 1.2)], eps: 0.5, r: Some(2) };
        let prep = prepare(&inst).unwrap();
        let run = run_tsp(&prep, &Shift::identity(2), &SolverConfig::default()).unwrap();
        assert!(run.tour.is_feasible(2));
        assert!(run.tour.length < 1e-9);
    }
}

//! Hyperbolic banyan construction and the Steiner machinery: Klein-model
//! hulls, candidate Steiner point placement, a Dreyfus-Wagner solver, the
//! partition bookkeeping of the Steiner-forest tables, and the end-to-end
//! portal-respecting Steiner tree solver.

use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::hgeom::{
    from_klein, geodesic, geodesic_midpoint, hyp_distance_unchecked, to_klein, HPoint,
};
use crate::hybridtree::{
    build_compressed_tree, cell_at_level_in, cell_diameter, to_tree_frame, CellKey,
    Prepared, Shift,
};
use crate::dyntsp::{build_route_graph, SolverConfig, TableStats};
use crate::portals::{build_facets, PortalConfig};

// ---------------------------------------------------------------------------
// partitions
// ---------------------------------------------------------------------------

/// A partition of a position-indexed portal subset into connectivity
/// classes, stored canonically (classes sorted, smallest member first).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partition {
    classes: Vec<Vec<u8>>,
}

impl Partition {
    pub fn new(mut classes: Vec<Vec<u8>>) -> Partition {
        for c in classes.iter_mut() {
            c.sort_unstable();
        }
        classes.retain(|c| !c.is_empty());
        classes.sort();
        Partition { classes }
    }

    pub fn classes(&self) -> &[Vec<u8>] {
        &self.classes
    }

    pub fn ground_size(&self) -> usize {
        self.classes.iter().map(|c| c.len()).sum()
    }

    fn is_partition_of(&self, size: usize) -> bool {
        let mut seen = vec![false; size];
        for c in &self.classes {
            for &v in c {
                if v as usize >= size || seen[v as usize] {
                    return false;
                }
                seen[v as usize] = true;
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// All partitions of 0..size (Bell numbers; capped at 10 elements).
pub fn partitions_of(size: usize) -> Vec<Partition> {
    assert!(size <= 10);
    let mut out = Vec::new();
    let mut classes: Vec<Vec<u8>> = Vec::new();
    fn rec(next: u8, size: u8, classes: &mut Vec<Vec<u8>>, out: &mut Vec<Partition>) {
        if next == size {
            out.push(Partition::new(classes.clone()));
            return;
        }
        for i in 0..classes.len() {
            classes[i].push(next);
            rec(next + 1, size, classes, out);
            classes[i].pop();
        }
        classes.push(vec![next]);
        rec(next + 1, size, classes, out);
        classes.pop();
    }
    rec(0, size as u8, &mut classes, &mut out);
    out
}

/// Do two partitions of the same B complete each other: does the union of a
/// forest realizing `p1` with one realizing `p2` connect all of B into a
/// single tree?
pub fn completes(p1: &Partition, p2: &Partition, size: usize) -> Result<bool> {
    if !p1.is_partition_of(size) || !p2.is_partition_of(size) {
        return Err(Error::Domain("partitions must cover the same B".into()));
    }
    if size == 0 {
        return Ok(true);
    }
    let mut dsu = Dsu::new(size);
    for c in p1.classes().iter().chain(p2.classes()) {
        for w in c.windows(2) {
            dsu.union(w[0] as usize, w[1] as usize);
        }
    }
    let root = dsu.find(0);
    Ok((1..size).all(|v| dsu.find(v) == root))
}

/// Merge two partitions over a shared ground set: the connectivity closure
/// of gluing forests that realize them.
pub fn merge_partitions(p1: &Partition, p2: &Partition, size: usize) -> Result<Partition> {
    if !p1.is_partition_of(size) || !p2.is_partition_of(size) {
        return Err(Error::Domain("partitions must cover the same B".into()));
    }
    let mut dsu = Dsu::new(size);
    for c in p1.classes().iter().chain(p2.classes()) {
        for w in c.windows(2) {
            dsu.union(w[0] as usize, w[1] as usize);
        }
    }
    let mut groups: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    for v in 0..size {
        groups.entry(dsu.find(v)).or_default().push(v as u8);
    }
    Ok(Partition::new(groups.into_values().collect()))
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu { parent: (0..n).collect() }
    }
    fn find(&mut self, v: usize) -> usize {
        if self.parent[v] != v {
            let r = self.find(self.parent[v]);
            self.parent[v] = r;
        }
        self.parent[v]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Representative table for the Steiner-forest problem: per boundary subset,
/// partitions realized by some forest together with their optimal costs.
/// The default retention is exhaustive (one cheapest forest per realizable
/// partition), which is representative by construction.
#[derive(Debug, Clone, Default)]
pub struct SteinerRepTable {
    pub entries: BTreeMap<Vec<u32>, Vec<(Partition, f64)>>,
}

impl SteinerRepTable {
    pub fn insert(&mut self, b: Vec<u32>, partition: Partition, cost: f64) {
        let list = self.entries.entry(b).or_default();
        match list.iter_mut().find(|(p, _)| *p == partition) {
            Some((_, c)) => {
                if cost < *c {
                    *c = cost;
                }
            }
            None => list.push((partition, cost)),
        }
    }
}

// ---------------------------------------------------------------------------
// Klein-model hulls
// ---------------------------------------------------------------------------

/// Convex hull of a point set in the Klein model, where hyperbolic convexity
/// coincides with Euclidean convexity. Holds the hull vertices and the
/// affine rank (degenerate hulls fall back to the affine hull's dimension).
#[derive(Debug, Clone)]
pub struct KleinHull {
    pub vertices: Vec<Vec<f64>>,
    pub rank: usize,
}

/// Does the simplex spanned by `verts` contain `p` (barycentric solve with
/// tolerance)?
fn simplex_contains(verts: &[&Vec<f64>], p: &[f64], tol: f64) -> bool {
    let k = verts.len() - 1;
    let dim = p.len();
    // solve sum_i l_i (v_i - v_0) = p - v_0 by least squares on the k columns
    let mut a = vec![vec![0.0; k]; dim];
    let mut b = vec![0.0; dim];
    for r in 0..dim {
        for c in 0..k {
            a[r][c] = verts[c + 1][r] - verts[0][r];
        }
        b[r] = p[r] - verts[0][r];
    }
    // normal equations (k <= 3)
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            ata[i][j] = (0..dim).map(|r| a[r][i] * a[r][j]).sum();
        }
        atb[i] = (0..dim).map(|r| a[r][i] * b[r]).sum();
    }
    let Some(lambda) = solve_small(&mut ata, &mut atb) else { return false };
    // residual must vanish (point in the affine span)
    for r in 0..dim {
        let mut recon = verts[0][r];
        for c in 0..k {
            recon += lambda[c] * (verts[c + 1][r] - verts[0][r]);
        }
        if (recon - p[r]).abs() > tol {
            return false;
        }
    }
    let l0 = 1.0 - lambda.iter().sum::<f64>();
    lambda.iter().all(|&l| l >= -tol) && l0 >= -tol
}

fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for c2 in col..n {
                a[row][c2] -= f * a[col][c2];
            }
            b[row] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

impl KleinHull {
    /// Hull of half-space points, built in the Klein model. The vertex set
    /// is extracted exactly (a point is a vertex iff it lies outside the
    /// hull of the others, by Caratheodory membership tests); the rank is
    /// the affine dimension.
    pub fn of(points: &[HPoint]) -> Result<KleinHull> {
        let klein: Vec<Vec<f64>> = points.iter().map(to_klein).collect::<Result<_>>()?;
        Ok(Self::of_klein(klein))
    }

    pub fn of_klein(mut klein: Vec<Vec<f64>>) -> KleinHull {
        // dedupe
        let mut uniq: Vec<Vec<f64>> = Vec::new();
        for p in klein.drain(..) {
            if !uniq.iter().any(|q| close(q, &p, 1e-12)) {
                uniq.push(p);
            }
        }
        let rank = affine_rank(&uniq);
        let mut vertices = Vec::new();
        for i in 0..uniq.len() {
            let others: Vec<&Vec<f64>> =
                uniq.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p).collect();
            if !in_hull_of(&others, &uniq[i], rank) {
                vertices.push(uniq[i].clone());
            }
        }
        if vertices.is_empty() {
            vertices = uniq;
        }
        KleinHull { vertices, rank }
    }

    pub fn contains_klein(&self, p: &[f64]) -> bool {
        let refs: Vec<&Vec<f64>> = self.vertices.iter().collect();
        in_hull_of(&refs, p, self.rank)
    }

    /// Sample the hull (vertices, edges, and simplex interiors) at Klein
    /// step `step`, scaled down locally by the metric distortion so the
    /// hyperbolic spacing stays below the requested value.
    pub fn sample(&self, hyp_step: f64) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        let m = self.vertices.len();
        let k = self.rank.min(3);
        // every point of the hull is a convex combination of <= rank+1
        // vertices, so sampling the (rank+1)-subsets' simplices covers it
        let subsets = subsets_of_size(m, k + 1);
        for sub in subsets {
            let verts: Vec<&Vec<f64>> = sub.iter().map(|&i| &self.vertices[i]).collect();
            sample_simplex(&verts, hyp_step, &mut out);
        }
        if m == 1 {
            out.push(self.vertices[0].clone());
        }
        out
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn affine_rank(points: &[Vec<f64>]) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let dim = points[0].len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in &points[1..] {
        let mut v: Vec<f64> = p.iter().zip(&points[0]).map(|(a, b)| a - b).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
            if basis.len() == dim {
                break;
            }
        }
    }
    basis.len()
}

/// Caratheodory membership: p lies in the hull of `points` iff some
/// (rank+1)-subset's simplex contains it.
fn in_hull_of(points: &[&Vec<f64>], p: &[f64], rank: usize) -> bool {
    let m = points.len();
    if m == 0 {
        return false;
    }
    let k = rank.min(3);
    for sub in subsets_of_size(m, (k + 1).min(m)) {
        let verts: Vec<&Vec<f64>> = sub.iter().map(|&i| points[i]).collect();
        if simplex_contains(&verts, p, 1e-9) {
            return true;
        }
    }
    false
}

fn subsets_of_size(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k.min(m), &mut cur, &mut out);
    out
}

/// Barycentric grid over a Klein simplex, with resolution driven by the
/// worst-case hyperbolic stretch 1/(1-|x|^2) over its vertices.
fn sample_simplex(verts: &[&Vec<f64>], hyp_step: f64, out: &mut Vec<Vec<f64>>) {
    let mut max_edge = 0.0f64;
    let mut stretch = 1.0f64;
    for v in verts {
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        stretch = stretch.max(2.0 / (1.0 - norm_sq.min(0.999999)));
        for u in verts {
            let e: f64 = v.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            max_edge = max_edge.max(e);
        }
    }
    let k = ((max_edge * stretch / hyp_step).ceil() as usize).clamp(1, 512);
    let n = verts.len();
    // lattice of barycentric weights summing to k
    let mut weights = vec![0usize; n];
    fn rec(
        slot: usize,
        left: usize,
        k: usize,
        weights: &mut Vec<usize>,
        verts: &[&Vec<f64>],
        out: &mut Vec<Vec<f64>>,
    ) {
        if slot == weights.len() - 1 {
            weights[slot] = left;
            let dim = verts[0].len();
            let mut p = vec![0.0; dim];
            for (w, v) in weights.iter().zip(verts) {
                for (pi, vi) in p.iter_mut().zip(v.iter()) {
                    *pi += (*w as f64 / k as f64) * vi;
                }
            }
            out.push(p);
            return;
        }
        for w in 0..=left {
            weights[slot] = w;
            rec(slot + 1, left - w, k, weights, verts, out);
        }
    }
    rec(0, k, k, &mut weights, verts, out);
}

// ---------------------------------------------------------------------------
// banyan
// ---------------------------------------------------------------------------

/// Per-pair placement metadata of the banyan.
#[derive(Debug, Clone)]
pub struct PairMeta {
    pub a: usize,
    pub b: usize,
    pub mu: f64,
    pub ball_center: HPoint,
    pub ball_radius: f64,
    /// true: points sampled along hull-edge geodesics (large spacing);
    /// false: centers of tiling cells covering the hull (small spacing)
    pub edge_branch: bool,
    pub q_count: usize,
}

/// A (1+eps)-banyan: the complete geometric graph on `Y ∪ Q` with hyperbolic
/// edge weights, where Q unions a mu_{a,b}-cover of each pair's hull region.
#[derive(Debug, Clone)]
pub struct Banyan {
    pub vertices: Vec<HPoint>,
    pub n_terminals: usize,
    pub pairs: Vec<PairMeta>,
}

impl Banyan {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        hyp_distance_unchecked(&self.vertices[i], &self.vertices[j])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Candidate Steiner points for terminal set `Y`: for every pair (a, b),
/// a mu-cover (mu = eps * dist / (2|Y|)) of the Klein hull of the points of
/// Y inside the ball of radius (3/2) dist around the midpoint; sampled along
/// hull edges when mu >= 1, via tiling-cell centers otherwise.
pub fn build_banyan(y: &[HPoint], eps: f64, d: usize) -> Result<Banyan> {
    if y.len() < 2 {
        return Err(Error::Domain("banyan needs at least 2 terminals".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    let n = y.len();
    let mut vertices: Vec<HPoint> = y.to_vec();
    let mut pairs = Vec::new();
    let mut cell_seen: HashSet<CellKey> = HashSet::new();
    for a in 0..n {
        for b in a + 1..n {
            let dist = hyp_distance_unchecked(&y[a], &y[b]);
            if dist < 1e-12 {
                continue;
            }
            let mu = eps * dist / (2.0 * n as f64);
            let center = geodesic_midpoint(&y[a], &y[b])?;
            let radius = 1.5 * dist;
            let members: Vec<HPoint> = y
                .iter()
                .filter(|p| hyp_distance_unchecked(p, &center) <= radius + 1e-12)
                .cloned()
                .collect();
            let hull = KleinHull::of(&members)?;
            let before = vertices.len();
            // the simplex-edge constant is O_d(1); spacing 1 is the branch
            // threshold standing in for it
            let edge_branch = mu >= 1.0;
            if edge_branch {
                for i in 0..hull.vertices.len() {
                    for j in i + 1..hull.vertices.len() {
                        let u = from_klein(&hull.vertices[i])?;
                        let v = from_klein(&hull.vertices[j])?;
                        let Ok(geo) = geodesic(&u, &v) else { continue };
                        let len = geo.length();
                        let steps = (len / mu).ceil() as usize;
                        for s in 0..=steps {
                            vertices.push(geo.point_at_arclength(len * s as f64 / steps as f64));
                        }
                    }
                }
            } else {
                for cell in tiling_cover_cells(&hull, d, mu)? {
                    if cell_seen.insert(cell.clone()) {
                        vertices.push(cell.boxed(d).center());
                    }
                }
            }
            pairs.push(PairMeta {
                a,
                b,
                mu,
                ball_center: center,
                ball_radius: radius,
                edge_branch,
                q_count: vertices.len() - before,
            });
        }
    }
    Ok(Banyan { vertices, n_terminals: n, pairs })
}

/// Cells of the tiling (largest level with diameter at most 0.8 mu) that
/// meet the hull: seeded along the hull's boundary simplices, then interior
/// cells flood-filled through lattice neighbors with centers in the hull.
/// Their centers form a mu-cover of the hull.
pub(crate) fn tiling_cover_cells(hull: &KleinHull, d: usize, mu: f64) -> Result<Vec<CellKey>> {
    let mut level = 0;
    while cell_diameter(d, level) > 0.8 * mu {
        level -= 1;
        if level < -40 {
            return Err(Error::ResourceCap("banyan spacing too fine".into()));
        }
    }
    let mut seen: HashSet<CellKey> = HashSet::new();
    let mut queue: Vec<CellKey> = Vec::new();
    let push = |cell: CellKey, seen: &mut HashSet<CellKey>, queue: &mut Vec<CellKey>| {
        if seen.insert(cell.clone()) {
            queue.push(cell);
        }
    };
    // seeds: hull vertices and samples along every boundary simplex edge
    for v in &hull.vertices {
        let p = from_klein(v)?;
        push(cell_at_level_in(&p, d, level, false)?, &mut seen, &mut queue);
    }
    let step = 0.2 * mu;
    for i in 0..hull.vertices.len() {
        for j in i + 1..hull.vertices.len() {
            let u = from_klein(&hull.vertices[i])?;
            let v = from_klein(&hull.vertices[j])?;
            let Ok(geo) = geodesic(&u, &v) else { continue };
            let len = geo.length();
            let steps = (len / step).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let p = geo.point_at_arclength(len * s as f64 / steps as f64);
                push(cell_at_level_in(&p, d, level, false)?, &mut seen, &mut queue);
            }
        }
    }
    // flood interior cells whose center lies in the hull
    let mut head = 0;
    while head < queue.len() {
        let cell = queue[head].clone();
        head += 1;
        let bx = cell.boxed(d);
        let c = bx.center();
        let mut probes: Vec<HPoint> = Vec::new();
        for i in 0..d - 1 {
            let side = bx.x_hi[i] - bx.x_lo[i];
            for sgn in [-1.0, 1.0] {
                let mut p = c.clone();
                p.x[i] += sgn * side;
                probes.push(p);
            }
        }
        let ratio = bx.z_hi / bx.z_lo;
        for f in [1.0 / ratio, ratio] {
            let mut p = c.clone();
            p.z *= f;
            probes.push(p);
        }
        for p in probes {
            if p.z <= 0.0 {
                continue;
            }
            let neighbor = cell_at_level_in(&p, d, level, false)?;
            if seen.contains(&neighbor) {
                continue;
            }
            let center = neighbor.boxed(d).center();
            let Ok(k) = to_klein(&center) else { continue };
            if hull.contains_klein(&k) {
                push(neighbor, &mut seen, &mut queue);
            }
        }
        if queue.len() > 200_000 {
            return Err(Error::ResourceCap("banyan cover exceeded 200k cells".into()));
        }
    }
    Ok(queue)
}

// ---------------------------------------------------------------------------
// Dreyfus-Wagner
// ---------------------------------------------------------------------------

/// Exact minimum Steiner tree in a weighted graph given as a dense matrix
/// (f64::INFINITY for absent edges). Up to 12 terminals. Returns the weight
/// and the tree's edges in the original graph.
pub fn dreyfus_wagner(
    weights: &[Vec<f64>],
    terminals: &[usize],
) -> Result<(f64, Vec<(usize, usize)>)> {
    let v = weights.len();
    let k = terminals.len();
    if k == 0 || terminals.iter().any(|&t| t >= v) {
        return Err(Error::Domain("terminals must be nonempty graph vertices".into()));
    }
    if k > 12 {
        return Err(Error::ResourceCap(format!("Dreyfus-Wagner capped at 12 terminals, got {k}")));
    }
    if k == 1 {
        return Ok((0.0, Vec::new()));
    }
    // all-pairs shortest paths with successor reconstruction
    let mut dist: Vec<Vec<f64>> = weights.to_vec();
    let mut nxt: Vec<Vec<usize>> = (0..v).map(|_| vec![usize::MAX; v]).collect();
    #[allow(clippy::needless_range_loop)]
    for i in 0..v {
        dist[i][i] = 0.0;
        for j in 0..v {
            if dist[i][j].is_finite() && i != j {
                nxt[i][j] = j;
            }
        }
    }
    for m in 0..v {
        for i in 0..v {
            if !dist[i][m].is_finite() {
                continue;
            }
            for j in 0..v {
                let cand = dist[i][m] + dist[m][j];
                if cand < dist[i][j] - 1e-15 {
                    dist[i][j] = cand;
                    nxt[i][j] = nxt[i][m];
                }
            }
        }
    }

    // dp over subsets of terminals[1..] rooted anywhere
    let tk = k - 1;
    let full = 1usize << tk;
    let mut dp = vec![f64::INFINITY; full * v];
    let mut choice: Vec<Choice> = vec![Choice::None; full * v];
    for (ti, &t) in terminals[1..].iter().enumerate() {
        for x in 0..v {
            dp[(1 << ti) * v + x] = dist[t][x];
            choice[(1 << ti) * v + x] = Choice::Base(t);
        }
    }
    for s in 1..full {
        if s.count_ones() >= 2 {
            // splits: force the lowest bit into t to halve the work
            let low = s & s.wrapping_neg();
            let rest = s ^ low;
            for x in 0..v {
                let mut sub = rest;
                loop {
                    let t_part = sub | low;
                    let o_part = s ^ t_part;
                    if o_part != 0 {
                        let cand = dp[t_part * v + x] + dp[o_part * v + x];
                        if cand < dp[s * v + x] {
                            dp[s * v + x] = cand;
                            choice[s * v + x] = Choice::Split(t_part);
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
            }
        }
        // connect through the metric closure
        let base: Vec<f64> = (0..v).map(|x| dp[s * v + x]).collect();
        for x in 0..v {
            for y in 0..v {
                let cand = base[y] + dist[y][x];
                if cand < dp[s * v + x] - 1e-15 {
                    dp[s * v + x] = cand;
                    choice[s * v + x] = Choice::Via(y);
                }
            }
        }
    }

    let root = terminals[0];
    let best = dp[(full - 1) * v + root];
    if !best.is_finite() {
        return Err(Error::Internal("terminals are disconnected in the graph".into()));
    }
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    reconstruct(full - 1, root, v, &dp, &choice, &nxt, &mut edges);
    let weight = edges
        .iter()
        .map(|&(a, b)| weights[a][b])
        .sum::<f64>();
    debug_assert!(weight <= best + 1e-6);
    Ok((best, edges.into_iter().collect()))
}

#[derive(Clone, Copy, PartialEq)]
enum Choice {
    None,
    Base(usize),
    Split(usize),
    Via(usize),
}

fn reconstruct(
    s: usize,
    x: usize,
    v: usize,
    dp: &[f64],
    choice: &[Choice],
    nxt: &[Vec<usize>],
    edges: &mut HashSet<(usize, usize)>,
) {
    match choice[s * v + x] {
        Choice::None => {}
        Choice::Base(t) => add_path(t, x, nxt, edges),
        Choice::Via(y) => {
            add_path(y, x, nxt, edges);
            reconstruct(s, y, v, dp, choice, nxt, edges);
        }
        Choice::Split(t_part) => {
            reconstruct(t_part, x, v, dp, choice, nxt, edges);
            reconstruct(s ^ t_part, x, v, dp, choice, nxt, edges);
        }
    }
}

fn add_path(from: usize, to: usize, nxt: &[Vec<usize>], edges: &mut HashSet<(usize, usize)>) {
    let mut cur = from;
    while cur != to {
        let step = nxt[cur][to];
        if step == usize::MAX {
            return;
        }
        edges.insert((cur.min(step), cur.max(step)));
        cur = step;
    }
}

/// Dreyfus-Wagner over an adjacency-list graph with Dijkstra relaxation;
/// memory-lean for large sparse candidate sets.
pub fn dreyfus_wagner_sparse(
    adj: &[Vec<(u32, f64)>],
    terminals: &[usize],
) -> Result<(f64, Vec<(usize, usize)>)> {
    let v = adj.len();
    let k = terminals.len();
    if k == 0 || terminals.iter().any(|&t| t >= v) {
        return Err(Error::Domain("terminals must be nonempty graph vertices".into()));
    }
    if k > 12 {
        return Err(Error::ResourceCap(format!("Dreyfus-Wagner capped at 12 terminals, got {k}")));
    }
    if k == 1 {
        return Ok((0.0, Vec::new()));
    }
    let tk = k - 1;
    let full = 1usize << tk;
    let mut dp = vec![f64::INFINITY; full * v];
    let mut par: Vec<SparseChoice> = vec![SparseChoice::None; full * v];
    for s in 1..full {
        if s.count_ones() == 1 {
            let ti = s.trailing_zeros() as usize;
            dp[s * v + terminals[1 + ti]] = 0.0;
            par[s * v + terminals[1 + ti]] = SparseChoice::Root;
        } else {
            let low = s & s.wrapping_neg();
            let rest = s ^ low;
            for x in 0..v {
                let mut sub = rest;
                loop {
                    let t_part = sub | low;
                    let o_part = s ^ t_part;
                    if o_part != 0 {
                        let cand = dp[t_part * v + x] + dp[o_part * v + x];
                        if cand < dp[s * v + x] {
                            dp[s * v + x] = cand;
                            par[s * v + x] = SparseChoice::Split(t_part);
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
            }
        }
        // Dijkstra pass over dp[s]
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::new();
        for x in 0..v {
            if dp[s * v + x].is_finite() {
                heap.push(HeapItem(dp[s * v + x], x as u32));
            }
        }
        while let Some(HeapItem(cost, x)) = heap.pop() {
            if cost > dp[s * v + x as usize] + 1e-15 {
                continue;
            }
            for &(u, w) in &adj[x as usize] {
                let cand = cost + w;
                if cand < dp[s * v + u as usize] - 1e-15 {
                    dp[s * v + u as usize] = cand;
                    par[s * v + u as usize] = SparseChoice::Edge(x);
                    heap.push(HeapItem(cand, u));
                }
            }
        }
    }
    let root = terminals[0];
    let best = dp[(full - 1) * v + root];
    if !best.is_finite() {
        return Err(Error::Internal("terminals are disconnected in the graph".into()));
    }
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    let mut stack = vec![(full - 1, root)];
    while let Some((s, x)) = stack.pop() {
        match par[s * v + x] {
            SparseChoice::None | SparseChoice::Root => {}
            SparseChoice::Edge(y) => {
                edges.insert(((y as usize).min(x), (y as usize).max(x)));
                stack.push((s, y as usize));
            }
            SparseChoice::Split(t_part) => {
                stack.push((t_part, x));
                stack.push((s ^ t_part, x));
            }
        }
    }
    Ok((best, edges.into_iter().collect()))
}

#[derive(Clone, Copy, PartialEq)]
enum SparseChoice {
    None,
    Root,
    Edge(u32),
    Split(usize),
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
        other.0.partial_cmp(&self.0).unwrap().then(other.1.cmp(&self.1))
    }
}

// ---------------------------------------------------------------------------
// leaf solving and the end-to-end solver
// ---------------------------------------------------------------------------

/// Minimum forest realizing the partition `m` on the boundary points and
/// covering the cell's points: a banyan on Y = B ∪ points, Dreyfus-Wagner
/// per class (classes are independent trees), minimized over assignments of
/// the points to classes. Vertex indices in the returned edges refer to the
/// banyan built on Y.
pub fn solve_leaf_steiner(
    boundary: &[HPoint],
    m: &Partition,
    points: &[HPoint],
    eps: f64,
    d: usize,
) -> Result<Option<(f64, Banyan, Vec<(usize, usize)>)>> {
    if !m.is_partition_of(boundary.len()) {
        return Err(Error::Domain("partition does not cover the boundary set".into()));
    }
    let classes = m.classes();
    if classes.is_empty() {
        // no boundary structure: a single tree over the points, or nothing
        if points.is_empty() {
            let banyan =
                Banyan { vertices: Vec::new(), n_terminals: 0, pairs: Vec::new() };
            return Ok(Some((0.0, banyan, Vec::new())));
        }
        if points.len() == 1 {
            let banyan =
                Banyan { vertices: points.to_vec(), n_terminals: 1, pairs: Vec::new() };
            return Ok(Some((0.0, banyan, Vec::new())));
        }
        let y: Vec<HPoint> = points.to_vec();
        let banyan = build_banyan(&y, eps, d)?;
        let weights = dense_weights(&banyan);
        let terminals: Vec<usize> = (0..points.len()).collect();
        let (cost, edges) = dreyfus_wagner(&weights, &terminals)?;
        return Ok(Some((cost, banyan, edges)));
    }
    let mut y: Vec<HPoint> = boundary.to_vec();
    y.extend(points.iter().cloned());
    let banyan = if y.len() >= 2 {
        build_banyan(&y, eps, d)?
    } else {
        Banyan { vertices: y.clone(), n_terminals: y.len(), pairs: Vec::new() }
    };
    let weights = dense_weights(&banyan);

    let nc = classes.len();
    let np = points.len();
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut assign = vec![0usize; np];
    loop {
        let mut total = 0.0;
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut ok = true;
        for (ci, class) in classes.iter().enumerate() {
            let mut terminals: Vec<usize> = class.iter().map(|&p| p as usize).collect();
            for (pi, &a) in assign.iter().enumerate() {
                if a == ci {
                    terminals.push(boundary.len() + pi);
                }
            }
            if terminals.len() <= 1 {
                continue;
            }
            match dreyfus_wagner(&weights, &terminals) {
                Ok((cost, e)) => {
                    total += cost;
                    edges.extend(e);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && best.as_ref().map_or(true, |(c, _)| total < *c) {
            best = Some((total, edges));
        }
        let mut i = 0;
        loop {
            if i == assign.len() {
                return Ok(best.map(|(c, e)| (c, banyan, e)));
            }
            assign[i] += 1;
            if assign[i] < nc {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

fn dense_weights(banyan: &Banyan) -> Vec<Vec<f64>> {
    let v = banyan.len();
    let mut weights = vec![vec![0.0; v]; v];
    for i in 0..v {
        for j in i + 1..v {
            let w = banyan.weight(i, j);
            weights[i][j] = w;
            weights[j][i] = w;
        }
    }
    weights
}

#[derive(Debug, Clone, PartialEq)]
pub enum SteinerVertexKind {
    /// A terminal location; carries the input point indices that sit there.
    Terminal(Vec<usize>),
    Portal { facet: usize, idx: usize },
    /// A banyan candidate Steiner point inside a leaf cell.
    Candidate,
}

/// Output of the Steiner solver: a connected geometric graph spanning the
/// input points, with terminals, portal transits, and candidate Steiner
/// points distinguished.
#[derive(Debug, Clone)]
pub struct SteinerTree {
    pub positions: Vec<HPoint>,
    pub kinds: Vec<SteinerVertexKind>,
    pub edges: Vec<(usize, usize)>,
    pub length: f64,
}

impl SteinerTree {
    /// Connected and spanning: every input appears at a terminal vertex and
    /// all vertices hang together.
    pub fn is_connected_spanning(&self, n_inputs: usize) -> bool {
        let mut covered = vec![false; n_inputs];
        for kind in &self.kinds {
            if let SteinerVertexKind::Terminal(inputs) = kind {
                for &i in inputs {
                    if i >= n_inputs {
                        return false;
                    }
                    covered[i] = true;
                }
            }
        }
        if !covered.iter().all(|&c| c) {
            return false;
        }
        if self.positions.is_empty() {
            return false;
        }
        let mut dsu = Dsu::new(self.positions.len());
        for &(a, b) in &self.edges {
            dsu.union(a, b);
        }
        let root = dsu.find(0);
        (1..self.positions.len()).all(|v| dsu.find(v) == root)
    }
}

#[derive(Debug, Clone)]
pub struct SteinerRun {
    pub tree: SteinerTree,
    pub stats: TableStats,
}

/// Portal-respecting Steiner tree for one shift: the TSP route graph plus
/// banyan Steiner candidates inside each occupied leaf cell, solved exactly
/// with Dreyfus-Wagner over the graph (terminals are the perturbed sites).
pub fn run_steiner(prep: &Prepared, shift: &Shift, cfg: &SolverConfig) -> Result<SteinerRun> {
    if prep.perturbed.points.len() < 2 {
        return Err(Error::Domain("Steiner needs at least 2 points".into()));
    }
    let tree =
        build_compressed_tree(&prep.perturbed.points, prep.d, prep.l_min, prep.l_max, shift)?;
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
    if graph.n_sites > 12 {
        return Err(Error::ResourceCap(format!(
            "Steiner solver capped at 12 distinct sites, got {}",
            graph.n_sites
        )));
    }

    // augment with banyan candidates inside occupied leaves
    let mut positions = graph.positions.clone();
    let mut kinds: Vec<SteinerVertexKind> = Vec::with_capacity(positions.len());
    for s in 0..graph.n_sites {
        kinds.push(SteinerVertexKind::Terminal(graph.site_inputs[s].clone()));
    }
    for v in graph.n_sites..positions.len() {
        let (facet, idx) = graph.vertex_portal[v].unwrap();
        kinds.push(SteinerVertexKind::Portal { facet, idx });
    }
    let mut adj: Vec<Vec<(u32, f64)>> = graph.adj.clone();
    for (leaf, members) in &graph.leaf_members {
        let leaf_box = tree.nodes[*leaf].cell.boxed(prep.d);
        // Y: the leaf's sites plus its nearest boundary portals
        let sites: Vec<u32> =
            members.iter().cloned().filter(|&v| (v as usize) < graph.n_sites).collect();
        if sites.is_empty() {
            continue;
        }
        let centroid = positions[sites[0] as usize].clone();
        let mut portals: Vec<u32> =
            members.iter().cloned().filter(|&v| (v as usize) >= graph.n_sites).collect();
        portals.sort_by(|&a, &b| {
            hyp_distance_unchecked(&positions[a as usize], &centroid)
                .partial_cmp(&hyp_distance_unchecked(&positions[b as usize], &centroid))
                .unwrap()
        });
        // a small terminal set keeps the per-leaf banyan desk-sized; the
        // remaining portals still connect through the leaf's complete edges
        portals.truncate(2);
        let mut y: Vec<HPoint> = Vec::new();
        let mut y_vertices: Vec<u32> = Vec::new();
        for &v in sites.iter().chain(&portals) {
            y.push(positions[v as usize].clone());
            y_vertices.push(v);
        }
        if y.len() < 2 {
            continue;
        }
        let banyan = build_banyan(&y, prep.eps, prep.d)?;
        let mut added: Vec<u32> = Vec::new();
        for q in &banyan.vertices[y.len()..] {
            // only candidates inside this leaf cell participate
            if !leaf_box.contains(&to_tree_frame(q, shift), 1e-9) {
                continue;
            }
            let v = positions.len() as u32;
            positions.push(q.clone());
            kinds.push(SteinerVertexKind::Candidate);
            adj.push(Vec::new());
            added.push(v);
        }
        // complete connections within the leaf
        let mut all: Vec<u32> = members.clone();
        all.extend(added.iter());
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let (a, b) = (all[i] as usize, all[j] as usize);
                if a < graph.adj.len() && b < graph.adj.len() {
                    continue; // already connected by the route graph
                }
                let w = hyp_distance_unchecked(&positions[a], &positions[b]);
                adj[a].push((b as u32, w));
                adj[b].push((a as u32, w));
            }
        }
    }
    stats.graph_vertices = positions.len();
    stats.graph_edges = adj.iter().map(|a| a.len()).sum::<usize>() / 2;

    let terminals: Vec<usize> = (0..graph.n_sites).collect();
    let (_, edges) = if graph.n_sites == 1 {
        (0.0, Vec::new())
    } else {
        dreyfus_wagner_sparse(&adj, &terminals)?
    };

    // compact the output to the used vertices
    let mut used: Vec<usize> = terminals.clone();
    for &(a, b) in &edges {
        used.push(a);
        used.push(b);
    }
    used.sort_unstable();
    used.dedup();
    let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let out_edges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (remap[&a], remap[&b])).collect();
    let out_positions: Vec<HPoint> = used.iter().map(|&v| positions[v].clone()).collect();
    let out_kinds: Vec<SteinerVertexKind> = used.iter().map(|&v| kinds[v].clone()).collect();
    let length: f64 = out_edges
        .iter()
        .map(|&(a, b)| hyp_distance_unchecked(&out_positions[a], &out_positions[b]))
        .sum();

    let tree_out = SteinerTree {
        positions: out_positions,
        kinds: out_kinds,
        edges: out_edges,
        length,
    };
    if !tree_out.is_connected_spanning(prep.perturbed.points.len()) {
        return Err(Error::Internal("Steiner output is not connected/spanning".into()));
    }
    // portal discipline: at most two side-changing transits per portal
    for (v, kind) in tree_out.kinds.iter().enumerate() {
        let SteinerVertexKind::Portal { facet, .. } = kind else { continue };
        let f = &fs.facets[*facet];
        let mut side_a = 0usize;
        let mut side_b = 0usize;
        for &(x, y) in &tree_out.edges {
            let other = if x == v {
                y
            } else if y == v {
                x
            } else {
                continue;
            };
            let p = &tree_out.positions[other];
            let sgn = match f.axis {
                Some(ax) => p.x[ax] - (f.offset - shift.a_x[ax]),
                None => p.z - f.offset / shift.a_z,
            };
            if sgn > 1e-12 {
                side_b += 1;
            } else if sgn < -1e-12 {
                side_a += 1;
            }
        }
        if side_a.min(side_b) > 2 {
            return Err(Error::ResourceCap(
                "Steiner tree crosses a portal more than twice; raise the portal caps".into(),
            ));
        }
    }
    Ok(SteinerRun { tree: tree_out, stats })
}

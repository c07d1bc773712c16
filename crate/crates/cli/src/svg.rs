//! Half-plane SVG rendering for d = 2: tiling cells as rectangles,
//! geodesics as circular arcs, portals as circles, the tour highlighted.

use hyptsp::dyntsp::Tour;
use hyptsp::error::{Error, Result};
use hyptsp::hgeom::HPoint;
use hyptsp::hybridtree::{NodeKind, ShiftedTree};
use hyptsp::portals::FacetSet;

pub const WIDTH: f64 = 1000.0;

struct View {
    x0: f64,
    z1: f64,
    scale: f64,
    height: f64,
}

impl View {
    fn map(&self, p: &HPoint) -> (f64, f64) {
        ((p.x[0] - self.x0) * self.scale, (self.z1 - p.z) * self.scale)
    }
}

fn view_of(points: &[HPoint]) -> View {
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    for p in points {
        x_lo = x_lo.min(p.x[0]);
        x_hi = x_hi.max(p.x[0]);
        z_lo = z_lo.min(p.z);
        z_hi = z_hi.max(p.z);
    }
    let pad = 0.1 * (x_hi - x_lo).max(z_hi - z_lo).max(0.5);
    let (x_lo, x_hi) = (x_lo - pad, x_hi + pad);
    let (z_lo, z_hi) = ((z_lo - pad).max(0.01), z_hi + pad);
    let scale = WIDTH / (x_hi - x_lo);
    View { x0: x_lo, z1: z_hi, scale, height: (z_hi - z_lo) * scale }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Path data for the geodesic from p to q: a line for vertical segments,
/// otherwise the circular arc orthogonal to the boundary.
fn geodesic_path(view: &View, p: &HPoint, q: &HPoint) -> String {
    let (px, py) = view.map(p);
    let (qx, qy) = view.map(q);
    let dx = q.x[0] - p.x[0];
    if dx.abs() < 1e-12 {
        return format!("M {} {} L {} {}", fmt(px), fmt(py), fmt(qx), fmt(qy));
    }
    // circle center on z = 0 through both points
    let c = (q.x[0] * q.x[0] + q.z * q.z - p.x[0] * p.x[0] - p.z * p.z) / (2.0 * dx);
    let radius = ((p.x[0] - c) * (p.x[0] - c) + p.z * p.z).sqrt() * view.scale;
    // the upper arc runs clockwise on screen when moving rightwards
    let sweep = if dx > 0.0 { 1 } else { 0 };
    format!(
        "M {} {} A {} {} 0 0 {sweep} {} {}",
        fmt(px),
        fmt(py),
        fmt(radius),
        fmt(radius),
        fmt(qx),
        fmt(qy)
    )
}

/// Render the decomposition (cells and portals) and an optional tour into a
/// standalone SVG document. Only the half-plane (d = 2) is drawable.
pub fn render_svg(tree: &ShiftedTree, fs: &FacetSet, tour: Option<&Tour>) -> Result<String> {
    if tree.d != 2 {
        return Err(Error::Domain("SVG rendering is for d = 2 only".into()));
    }
    let mut extent: Vec<HPoint> = tree.points.clone();
    if let Some(t) = tour {
        extent.extend(t.positions.iter().cloned());
    }
    let view = view_of(&extent);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        WIDTH,
        fmt(view.height),
        WIDTH,
        fmt(view.height)
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // cells
    for node in &tree.nodes {
        let boxes: Vec<_> = match &node.kind {
            NodeKind::Compressed { inner, .. } => {
                vec![(node.cell.boxed(2), "4 3"), (inner.boxed(2), "")]
            }
            _ => vec![(node.cell.boxed(2), "")],
        };
        for (bx, dash) in boxes {
            let sb = bx.shifted(&tree.shift);
            let (x, y) = view.map(&HPoint { x: vec![sb.x_lo[0]], z: sb.z_hi });
            let w = (sb.x_hi[0] - sb.x_lo[0]) * view.scale;
            let h = (sb.z_hi - sb.z_lo) * view.scale;
            let dash_attr =
                if dash.is_empty() { String::new() } else { format!(" stroke-dasharray=\"{dash}\"") };
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#b0b0b0\" stroke-width=\"0.6\"{}/>\n",
                fmt(x), fmt(y), fmt(w), fmt(h), dash_attr
            ));
        }
    }

    // portals
    for pset in &fs.portals {
        for p in &pset.points {
            let (x, y) = view.map(p);
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"1.6\" fill=\"none\" stroke=\"#e08020\" stroke-width=\"0.7\"/>\n",
                fmt(x), fmt(y)
            ));
        }
    }

    // tour as geodesic arcs
    if let Some(t) = tour {
        let n = t.positions.len();
        for i in 0..n {
            let p = &t.positions[i];
            let q = &t.positions[(i + 1) % n];
            if p.approx_eq(q, 1e-12) {
                continue;
            }
            out.push_str(&format!(
                "<path d=\"{}\" fill=\"none\" stroke=\"#c02020\" stroke-width=\"1.4\"/>\n",
                geodesic_path(&view, p, q)
            ));
        }
    }

    // input points on top
    for p in &tree.points {
        let (x, y) = view.map(p);
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#202020\"/>\n",
            fmt(x),
            fmt(y)
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

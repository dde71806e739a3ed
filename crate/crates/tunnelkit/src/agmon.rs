//! Agmon distances, minimal geodesics and well-pair geometry.
//!
//! The Agmon metric is `V g`; its distance from a well solves the eikonal
//! equation `|dd|^2 = V`. Distances are computed by first-order anisotropic
//! fast marching on the axis stencils of the graph. Since `sqrt(V)` vanishes
//! at the well, nodes within [`SEED_CELLS`] hops of it are initialized from
//! the quadratic model `d = <X, A X> / 2` with `A = (Hess V / 2)^{1/2}`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{gradient_of, DomainGraph, NodeField};
use crate::potential::{hop_ball, WellInfo};

/// Hop radius of the quadratic-model seed region.
pub const SEED_CELLS: usize = 5;

/// Constant in the fast-marching tolerance `C h^{1/2} max sqrt(V)`.
pub const TAU_FM_CONSTANT: f64 = 4.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgmonField {
    /// Agmon distance per node.
    pub d: Vec<f64>,
    /// Index of the source well in the caller's well list.
    pub source: usize,
    pub well: WellInfo,
    /// Node acceptance order of the marching front.
    pub accepted_order: Vec<usize>,
    /// One-sided upwind covector per node (pole nodes: local normal frame).
    pub upwind_grad: Vec<[f64; 2]>,
    /// sqrt(V) per node.
    pub speed: Vec<f64>,
    /// Nodes initialized from the quadratic model.
    pub seeded: Vec<bool>,
    /// Metric radius of the seed region.
    pub model_radius: f64,
    /// Fast-marching tolerance for this field.
    pub tau_fm: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    d: f64,
    node: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Quadratic model `<X, A X> / 2` of the distance near `well`.
pub fn model_distance(graph: &DomainGraph, well: &WellInfo, p: [f64; 2]) -> f64 {
    let a = well.sqrt_half_hessian();
    let x = graph.local_coords(well.coords, p);
    match well.dim() {
        1 => 0.5 * a[0] * x[0] * x[0],
        _ => 0.5 * (a[0] * x[0] * x[0] + 2.0 * a[1] * x[0] * x[1] + a[3] * x[1] * x[1]),
    }
}

/// Fast-marching tolerance `C h^{1/2} max sqrt(V)`.
pub fn tau_fm(graph: &DomainGraph, v: &[f64]) -> f64 {
    let vmax = v.iter().copied().fold(0.0, f64::max);
    TAU_FM_CONSTANT * graph.mesh_width().sqrt() * vmax.sqrt()
}

pub fn fast_march(
    graph: &DomainGraph,
    v: &NodeField,
    well: &WellInfo,
    source: usize,
) -> Result<AgmonField> {
    v.require_scalar()?;
    let n = graph.node_count();
    if v.node_count() != n {
        return Err(Error::DimensionMismatch("V and graph sizes differ".into()));
    }
    let vmax = v.values.iter().copied().fold(0.0, f64::max);
    if let Some((node, &value)) = v
        .values
        .iter()
        .enumerate()
        .find(|(_, &x)| x < -1e-12 * vmax.max(1.0))
    {
        return Err(Error::NegativePotential { node, value });
    }
    let speed: Vec<f64> = v.values.iter().map(|&x| x.max(0.0).sqrt()).collect();

    let mut seeded = vec![false; n];
    let mut seeds: Vec<(usize, f64)> = hop_ball(graph, well.node, SEED_CELLS)
        .into_iter()
        .map(|i| (i, model_distance(graph, well, graph.coords(i))))
        .collect();
    seeds.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for &(i, _) in &seeds {
        seeded[i] = true;
    }
    // Radius of the largest metric ball inside the seed region.
    let mut model_radius = f64::INFINITY;
    for i in 0..n {
        if !seeded[i] && graph.neighbors(i).iter().any(|&(j, _)| seeded[j]) {
            let x = graph.local_coords(well.coords, graph.coords(i));
            model_radius = model_radius.min(x[0].hypot(x[1]));
        }
    }
    if !model_radius.is_finite() {
        model_radius = 0.0;
    }
    let (d, order) = march(graph, &speed, &seeds)?;
    let upwind_grad = upwind_gradient(graph, &d);
    Ok(AgmonField {
        d,
        source,
        well: well.clone(),
        accepted_order: order,
        upwind_grad,
        speed,
        seeded,
        model_radius,
        tau_fm: tau_fm(graph, &v.values),
    })
}

/// Fast marching from fixed initial values at `seeds`. Seeds share the heap
/// with trial nodes so acceptance is in nondecreasing order of `d`.
pub fn march(
    graph: &DomainGraph,
    speed: &[f64],
    seeds: &[(usize, f64)],
) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = graph.node_count();
    let mut d = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut frozen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    for &(i, di) in seeds {
        d[i] = di;
        frozen[i] = true;
        heap.push(Trial { d: di, node: i });
    }
    while let Some(Trial { d: di, node: i }) = heap.pop() {
        if accepted[i] || di > d[i] {
            continue;
        }
        accepted[i] = true;
        order.push(i);
        for &(j, _) in graph.neighbors(i) {
            if accepted[j] || frozen[j] {
                continue;
            }
            let t = update(graph, &d, &accepted, speed, j);
            if t < d[j] {
                d[j] = t;
                heap.push(Trial { d: t, node: j });
            }
        }
    }
    let unreached = accepted.iter().filter(|&&a| !a).count();
    if unreached > 0 {
        return Err(Error::Disconnected { unreached });
    }
    Ok((d, order))
}

/// Upwind eikonal update at `i` from its accepted neighbors.
fn update(graph: &DomainGraph, d: &[f64], accepted: &[bool], speed: &[f64], i: usize) -> f64 {
    // (value, weight = 1 / (h^2 g), upwind speed) per axis
    let mut cand: Vec<(f64, f64, f64)> = Vec::with_capacity(2);
    for st in graph.axis_stencils(i) {
        let best = st
            .neighbors
            .iter()
            .filter(|&&j| accepted[j])
            .min_by(|&&a, &&b| d[a].total_cmp(&d[b]));
        if let Some(&j) = best {
            cand.push((d[j], 1.0 / (st.spacing * st.spacing * st.metric), speed[j]));
        }
    }
    if cand.is_empty() {
        return f64::INFINITY;
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for m in (1..=cand.len()).rev() {
        let used = &cand[..m];
        let f = 0.5 * (speed[i] + used.iter().map(|c| c.2).sum::<f64>() / m as f64);
        let sw: f64 = used.iter().map(|c| c.1).sum();
        let swa: f64 = used.iter().map(|c| c.1 * c.0).sum();
        let swaa: f64 = used.iter().map(|c| c.1 * c.0 * c.0).sum();
        let disc = swa * swa - sw * (swaa - f * f);
        if disc < 0.0 {
            continue;
        }
        let t = (swa + disc.sqrt()) / sw;
        if t >= used[m - 1].0 {
            best = t;
            break;
        }
    }
    if !best.is_finite() {
        let (a, w, s) = cand[0];
        best = a + 0.5 * (speed[i] + s) / w.sqrt();
    }
    best
}

fn upwind_gradient(graph: &DomainGraph, d: &[f64]) -> Vec<[f64; 2]> {
    (0..graph.node_count())
        .map(|i| {
            let mut out = [0.0; 2];
            let stencils = graph.axis_stencils(i);
            let pole = graph.is_pole(i);
            for (axis, st) in stencils.iter().enumerate() {
                let Some(&j) = st
                    .neighbors
                    .iter()
                    .min_by(|&&a, &&b| d[a].total_cmp(&d[b]))
                else {
                    continue;
                };
                if d[j] >= d[i] {
                    continue;
                }
                let slope = (d[i] - d[j]) / st.spacing;
                out[axis] = if pole {
                    // local normal frame: metric length per unit spacing
                    slope / st.metric.sqrt()
                } else if st.neighbors.first() == Some(&j) {
                    slope
                } else {
                    -slope
                };
            }
            out
        })
        .collect()
}

impl AgmonField {
    pub fn as_field(&self) -> NodeField {
        NodeField::scalar(self.d.clone())
    }

    /// Interpolated distance; inside the seed region the quadratic model is used.
    pub fn distance_at(&self, graph: &DomainGraph, p: [f64; 2]) -> f64 {
        let x = graph.local_coords(self.well.coords, p);
        if x[0].hypot(x[1]) < self.model_radius {
            return model_distance(graph, &self.well, p);
        }
        graph.interpolate(&self.d, p).unwrap_or(f64::INFINITY)
    }

    /// Max violation of `|upwind grad|^2 <= V + tau` over all nodes.
    pub fn eikonal_excess(&self, graph: &DomainGraph) -> f64 {
        (0..graph.node_count())
            .map(|i| {
                let g2 = graph.covector_norm_sq(i, self.upwind_grad[i]);
                g2 - self.speed[i] * self.speed[i]
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nodes whose metric-normalized second differences of d stay below
    /// `bound` along every axis.
    pub fn smooth_nodes(&self, graph: &DomainGraph, bound: f64) -> Vec<bool> {
        (0..graph.node_count())
            .map(|i| {
                if self.seeded[i] {
                    return true;
                }
                graph.axis_stencils(i).iter().all(|st| {
                    if st.neighbors.len() != 2 {
                        return true;
                    }
                    let (a, b) = (st.neighbors[0], st.neighbors[1]);
                    let dd = (self.d[a] - 2.0 * self.d[i] + self.d[b])
                        / (st.spacing * st.spacing * st.metric);
                    dd.abs() <= bound
                })
            })
            .collect()
    }
}

/// A traced minimal geodesic from `start` back to the source well.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Geodesic {
    /// Points from the start toward the well.
    pub points: Vec<[f64; 2]>,
    /// Agmon length of the polyline plus the model distance at its end.
    pub agmon_length: f64,
    /// Distance value at the start point.
    pub start_distance: f64,
}

impl Geodesic {
    pub fn relative_length_error(&self) -> f64 {
        (self.agmon_length - self.start_distance).abs() / self.start_distance.max(f64::MIN_POSITIVE)
    }
}

/// Steepest-descent backtrace `x' = -g^{-1} dd / |dd|` with Heun steps of h/2.
pub fn trace_geodesic(graph: &DomainGraph, field: &AgmonField, start: [f64; 2]) -> Result<Geodesic> {
    let d0 = field.distance_at(graph, start);
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::CutLocus {
            at: start,
            distance: d0,
        });
    }
    let ds = 0.5 * graph.mesh_width();
    let eps = 0.5 * graph.mesh_width();
    let grad_scale = field.speed.iter().copied().fold(0.0, f64::max).max(1e-300);
    let sqrt_v = |p: [f64; 2]| graph.interpolate(&field.speed, p).unwrap_or(0.0);
    // Gradient of d in the chart of `center`, at local point x.
    let grad = |center: [f64; 2], x: [f64; 2]| -> Option<[f64; 2]> {
        let mut gr = [0.0; 2];
        for (k, gk) in gr.iter_mut().enumerate().take(graph.dim()) {
            let mut xp = x;
            let mut xm = x;
            xp[k] += eps;
            xm[k] -= eps;
            let fp = graph.interpolate(&field.d, graph.from_local_coords(center, xp))?;
            let fm = graph.interpolate(&field.d, graph.from_local_coords(center, xm))?;
            *gk = (fp - fm) / (2.0 * eps);
        }
        Some(gr)
    };
    let unit = |g: [f64; 2]| -> Option<[f64; 2]> {
        let norm = g[0].hypot(g[1]);
        if norm < 1e-6 * grad_scale {
            None
        } else {
            Some([-g[0] / norm, -g[1] / norm])
        }
    };

    let mut points = vec![start];
    let mut p = start;
    let mut length = 0.0;
    let mut last_d = d0;
    let max_steps = (20.0 * d0 / (ds * grad_scale.max(1e-3)) + 4.0 * graph.node_count() as f64)
        .min(2e6) as usize;
    for _ in 0..max_steps {
        let x_well = graph.local_coords(field.well.coords, p);
        if x_well[0].hypot(x_well[1]) < field.model_radius {
            let total = length + model_distance(graph, &field.well, p);
            return Ok(Geodesic {
                points,
                agmon_length: total,
                start_distance: d0,
            });
        }
        let stall = || Error::CutLocus {
            at: p,
            distance: last_d,
        };
        let k1 = grad([p[0], p[1]], [0.0, 0.0]).and_then(unit).ok_or_else(stall)?;
        let xp = [ds * k1[0], ds * k1[1]];
        let k2 = grad(p, xp).and_then(unit).unwrap_or(k1);
        let step = [0.5 * ds * (k1[0] + k2[0]), 0.5 * ds * (k1[1] + k2[1])];
        let next = graph.from_local_coords(p, step);
        let dn = field.distance_at(graph, next);
        if !(dn < last_d + 1e-12 * d0) {
            return Err(stall());
        }
        let mid = graph.from_local_coords(p, [0.5 * step[0], 0.5 * step[1]]);
        let seg = step[0].hypot(step[1]);
        length += seg * (sqrt_v(p) + 4.0 * sqrt_v(mid) + sqrt_v(next)) / 6.0;
        points.push(next);
        p = next;
        last_d = dn;
    }
    Err(Error::CutLocus {
        at: p,
        distance: last_d,
    })
}

/// Geometry of a well pair: separating surface, its minimal set and normals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WellPairGeometry {
    pub j: usize,
    pub k: usize,
    /// Average of both marching directions.
    pub s_jk: f64,
    pub s_forward: f64,
    pub s_backward: f64,
    /// Reference distance S_0 for the region G.
    pub s0: f64,
    pub margin: f64,
    /// Level-set offset t: the surface is {d^j - d^k = 2 t}.
    pub translation: f64,
    /// Nodes of G = {d^j + d^k <= S_0 + a}.
    pub g_nodes: Vec<bool>,
    pub sigma: Vec<SurfacePoint>,
    /// Graph edges crossing the surface inside G: (edge, node on j side, node on k side).
    pub crossing_edges: Vec<(usize, usize, usize)>,
    /// Indices into `sigma` of the near-minimal set H.
    pub h_points: Vec<usize>,
    pub tau_h: f64,
    pub ell: usize,
    /// Transverse Hessian per H point, row-major (n - ell - 1)^2 entries.
    pub transverse_hessian: Vec<Vec<f64>>,
    /// Case I: index into `sigma` of the minimizing point.
    pub m0: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub coords: [f64; 2],
    /// Induced surface measure (g-length in 2D, counting measure in 1D).
    pub weight: f64,
    /// Unit normal (coordinate components), pointing from well j to well k.
    pub normal: [f64; 2],
    /// d^j + d^k at the point.
    pub dsum: f64,
    /// d(d^k - d^j)(N).
    pub ddiff_normal: f64,
}

#[derive(Clone, Debug)]
pub struct PairOptions {
    /// S_0; defaults to S_jk.
    pub s0: Option<f64>,
    /// Margin a; defaults to 0.1 S_0.
    pub margin: Option<f64>,
    pub translation: f64,
    pub ell_override: Option<usize>,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            s0: None,
            margin: None,
            translation: 0.0,
            ell_override: None,
        }
    }
}

/// Pair geometry with default options.
pub fn pair_geometry(
    graph: &DomainGraph,
    fj: &AgmonField,
    fk: &AgmonField,
    margin: f64,
) -> Result<WellPairGeometry> {
    pair_geometry_with(
        graph,
        fj,
        fk,
        &PairOptions {
            margin: Some(margin),
            ..Default::default()
        },
    )
}

pub fn pair_geometry_with(
    graph: &DomainGraph,
    fj: &AgmonField,
    fk: &AgmonField,
    opts: &PairOptions,
) -> Result<WellPairGeometry> {
    if fj.d.len() != graph.node_count() || fk.d.len() != graph.node_count() {
        return Err(Error::DimensionMismatch("fields and graph sizes differ".into()));
    }
    let s_forward = fj.distance_at(graph, fk.well.coords);
    let s_backward = fk.distance_at(graph, fj.well.coords);
    let s_jk = 0.5 * (s_forward + s_backward);
    let s0 = opts.s0.unwrap_or(s_jk);
    let margin = opts.margin.unwrap_or(0.1 * s0);
    let t = opts.translation;
    let level = s0 + margin;
    let n = graph.node_count();
    let dsum: Vec<f64> = (0..n).map(|i| fj.d[i] + fk.d[i]).collect();
    let f: Vec<f64> = (0..n).map(|i| fj.d[i] - fk.d[i] - 2.0 * t).collect();
    let g_nodes: Vec<bool> = dsum.iter().map(|&s| s <= level).collect();

    let gj = gradient_of(graph, &fj.d);
    let gk = gradient_of(graph, &fk.d);
    let surface_point = |p: [f64; 2], weight: f64| -> Option<SurfacePoint> {
        let w = graph.interp_weights(p)?;
        let mut df = [0.0; 2];
        let mut s = 0.0;
        for &(i, c) in &w {
            df[0] += c * (gj[i][0] - gk[i][0]);
            df[1] += c * (gj[i][1] - gk[i][1]);
            s += c * dsum[i];
        }
        let g = graph.metric_at(p);
        let norm = if graph.dim() == 1 {
            df[0].abs() / g[0].sqrt()
        } else {
            (df[0] * df[0] / g[0] + df[1] * df[1] / g[1]).sqrt()
        };
        if !(norm > 0.0) {
            return None;
        }
        let normal = [df[0] / (g[0] * norm), df[1] / (g[1] * norm)];
        Some(SurfacePoint {
            coords: p,
            weight,
            normal,
            dsum: s,
            ddiff_normal: -norm,
        })
    };

    let mut sigma = Vec::new();
    if graph.dim() == 1 {
        for e in graph.edges() {
            let (fa, fb) = (f[e.a], f[e.b]);
            if (fa < 0.0) == (fb < 0.0) || !(g_nodes[e.a] || g_nodes[e.b]) {
                continue;
            }
            let s = fa / (fa - fb);
            let pa = graph.coords(e.a);
            let x = pa[0] + s * graph.local_coords(pa, graph.coords(e.b))[0];
            if let Some(sp) = surface_point(graph.wrap([x, 0.0]), 1.0) {
                sigma.push(sp);
            }
        }
    } else {
        for cell in graph.cells() {
            for tri in [[0usize, 1, 2], [0, 2, 3]] {
                let c: Vec<[f64; 2]> = tri.iter().map(|&q| cell.coords[q]).collect();
                let v: Vec<f64> = tri.iter().map(|&q| f[cell.nodes[q]]).collect();
                let mut cuts = Vec::with_capacity(2);
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    if (v[a] < 0.0) != (v[b] < 0.0) {
                        let s = v[a] / (v[a] - v[b]);
                        cuts.push([
                            c[a][0] + s * (c[b][0] - c[a][0]),
                            c[a][1] + s * (c[b][1] - c[a][1]),
                        ]);
                    }
                }
                if cuts.len() != 2 {
                    continue;
                }
                let mid = [0.5 * (cuts[0][0] + cuts[1][0]), 0.5 * (cuts[0][1] + cuts[1][1])];
                let g = graph.metric_at(mid);
                let dx = [cuts[1][0] - cuts[0][0], cuts[1][1] - cuts[0][1]];
                let len = (g[0] * dx[0] * dx[0] + g[1] * dx[1] * dx[1]).sqrt();
                if len == 0.0 {
                    continue;
                }
                if let Some(sp) = surface_point(graph.wrap(mid), len) {
                    if sp.dsum <= level {
                        sigma.push(sp);
                    }
                }
            }
        }
    }
    if sigma.is_empty() {
        return Err(Error::EmptySurface);
    }

    let mut crossing_edges = Vec::new();
    for (ei, e) in graph.edges().iter().enumerate() {
        let (fa, fb) = (f[e.a], f[e.b]);
        if (fa < 0.0) == (fb < 0.0) || !(g_nodes[e.a] || g_nodes[e.b]) {
            continue;
        }
        if fa < 0.0 {
            crossing_edges.push((ei, e.a, e.b));
        } else {
            crossing_edges.push((ei, e.b, e.a));
        }
    }

    let h = graph.mesh_width();
    let tau_h = 4.0 * ((s_forward - s_backward).abs() + h * h * s_jk);
    let smin = sigma.iter().map(|p| p.dsum).fold(f64::INFINITY, f64::min);
    let h_points: Vec<usize> = (0..sigma.len())
        .filter(|&i| sigma[i].dsum - smin <= tau_h)
        .collect();

    let n_dim = graph.dim();
    let ell = match opts.ell_override {
        Some(l) if l < n_dim => l,
        Some(l) => {
            return Err(Error::AmbiguousEll(format!(
                "override {l} exceeds dimension {n_dim}"
            )))
        }
        None => detect_ell(graph, &sigma, &h_points)?,
    };

    let mut m0 = None;
    let transverse_hessian: Vec<Vec<f64>>;
    let tdim = n_dim - ell - 1;
    if ell == 0 {
        let best = *h_points
            .iter()
            .min_by(|&&a, &&b| sigma[a].dsum.total_cmp(&sigma[b].dsum))
            .expect("H nonempty");
        m0 = Some(best);
        if tdim == 1 {
            let d2 = transverse_curvature(graph, &sigma, best, fj, fk)?;
            if !(d2 > 0.0) {
                return Err(Error::IndefiniteHessian { min_eigenvalue: d2 });
            }
            transverse_hessian = h_points.iter().map(|_| vec![d2]).collect();
        } else {
            transverse_hessian = h_points.iter().map(|_| Vec::new()).collect();
        }
    } else {
        transverse_hessian = h_points.iter().map(|_| Vec::new()).collect();
    }

    Ok(WellPairGeometry {
        j: fj.source,
        k: fk.source,
        s_jk,
        s_forward,
        s_backward,
        s0,
        margin,
        translation: t,
        g_nodes,
        sigma,
        crossing_edges,
        h_points,
        tau_h,
        ell,
        transverse_hessian,
        m0,
    })
}

/// Clusters H by proximity and classifies its dimension.
fn detect_ell(graph: &DomainGraph, sigma: &[SurfacePoint], h_points: &[usize]) -> Result<usize> {
    if graph.dim() == 1 {
        return Ok(0);
    }
    let link = 3.0 * graph.max_spacing();
    let mut cluster = vec![usize::MAX; h_points.len()];
    let mut nclusters = 0;
    for s in 0..h_points.len() {
        if cluster[s] != usize::MAX {
            continue;
        }
        cluster[s] = nclusters;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..h_points.len() {
                if cluster[b] == usize::MAX {
                    let x = graph.local_coords(sigma[h_points[a]].coords, sigma[h_points[b]].coords);
                    if x[0].hypot(x[1]) <= link {
                        cluster[b] = nclusters;
                        stack.push(b);
                    }
                }
            }
        }
        nclusters += 1;
    }
    let total: f64 = sigma.iter().map(|p| p.weight).sum();
    let in_h: f64 = h_points.iter().map(|&i| sigma[i].weight).sum();
    let frac = in_h / total;
    if nclusters == 1 && frac < 0.25 {
        Ok(0)
    } else if frac >= 0.5 {
        Ok(1)
    } else {
        Err(Error::AmbiguousEll(format!(
            "{nclusters} clusters covering {:.1}% of the surface",
            100.0 * frac
        )))
    }
}

/// Second derivative of d^j + d^k along the surface at `center`, from a
/// quadratic fit in surface arc length over nearby surface points.
fn transverse_curvature(
    graph: &DomainGraph,
    sigma: &[SurfacePoint],
    center: usize,
    fj: &AgmonField,
    fk: &AgmonField,
) -> Result<f64> {
    let c = sigma[center].coords;
    let nrm = sigma[center].normal;
    let g = graph.metric_at(c);
    // unit tangent in local normal coordinates
    let nloc = [nrm[0] * g[0].sqrt(), nrm[1] * g[1].sqrt()];
    let tangent = [-nloc[1], nloc[0]];
    let h = graph.mesh_width();
    let radius = 8.0 * h;
    let mut rows = Vec::new();
    for p in sigma {
        let x = graph.local_coords(c, p.coords);
        if x[0].hypot(x[1]) <= radius {
            let s = x[0] * tangent[0] + x[1] * tangent[1];
            rows.push((s, p.dsum));
        }
    }
    if rows.len() < 5 {
        // sample the sum directly along the tangent line
        rows.clear();
        for i in -8i32..=8 {
            let s = i as f64 * h;
            let p = graph.from_local_coords(c, [s * tangent[0], s * tangent[1]]);
            rows.push((s, fj.distance_at(graph, p) + fk.distance_at(graph, p)));
        }
    }
    let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, k| rows[i].0.powi(k as i32));
    let b = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::IndefiniteHessian {
            min_eigenvalue: f64::NAN,
        }
        .context(e))?;
    Ok(2.0 * coef[2])
}

/// Agmon distance fields exported as CSV rows `node,coord...,d`.
pub fn field_csv(graph: &DomainGraph, field: &AgmonField) -> String {
    let mut s = String::from("node");
    for name in graph.coordinate_names() {
        s.push(',');
        s.push_str(name);
    }
    s.push_str(",d\n");
    for i in 0..graph.node_count() {
        let p = graph.coords(i);
        s.push_str(&i.to_string());
        for c in p.iter().take(graph.dim()) {
            s.push_str(&format!(",{c:e}"));
        }
        s.push_str(&format!(",{:e}\n", field.d[i]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_domain, Boundary, DomainSpec};
    use crate::potential::{field_from_fn, find_wells};

    fn line_field(n: usize) -> (DomainGraph, Vec<WellInfo>, NodeField) {
        let g = build_domain(&DomainSpec::interval(-2.0, 2.0, n, Boundary::DirichletOuter)).unwrap();
        let v = field_from_fn(&g, |p| (1.0 - p[0] * p[0]).powi(2));
        let wells = find_wells(&v, &g).unwrap();
        (g, wells, v)
    }

    #[test]
    fn double_well_distance() {
        let (g, wells, v) = line_field(2001);
        let f = fast_march(&g, &v, &wells[0], 0).unwrap();
        assert_eq!(f.d[wells[0].node], 0.0);
        assert!(f.d.iter().all(|&x| x >= 0.0));
        let s = f.distance_at(&g, wells[1].coords);
        assert!((s - 4.0 / 3.0).abs() < 0.01 * 4.0 / 3.0, "S = {s}");
        for w in f.accepted_order.windows(2) {
            if !f.seeded[w[1]] {
                assert!(f.d[w[0]] <= f.d[w[1]] + 1e-15);
            }
        }
    }

    #[test]
    fn flat_unit_speed_is_euclidean() {
        let g = build_domain(&DomainSpec::rectangle([-1.0, 1.0], [-1.0, 1.0], 41, 41)).unwrap();
        let speed = vec![1.0; g.node_count()];
        let center = 20 * 41 + 20;
        let (d, _) = march(&g, &speed, &[(center, 0.0)]).unwrap();
        let tau = tau_fm(&g, &speed);
        for i in 0..g.node_count() {
            let p = g.coords(i);
            assert!((d[i] - p[0].hypot(p[1])).abs() <= tau);
        }
        // axis-aligned nodes are exact
        assert!((d[center + 20] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_trace_covers_interval() {
        let (g, wells, v) = line_field(801);
        let f = fast_march(&g, &v, &wells[0], 0).unwrap();
        let geo = trace_geodesic(&g, &f, wells[1].coords).unwrap();
        assert!(geo.relative_length_error() < 0.02);
        let xs: Vec<f64> = geo.points.iter().map(|p| p[0]).collect();
        assert!(xs.windows(2).all(|w| w[1] < w[0]));
        assert!((xs[0] - 1.0).abs() < 1e-9);
        assert!(*xs.last().unwrap() < -1.0 + 6.0 * g.mesh_width());
    }

    #[test]
    fn pair_geometry_1d() {
        let (g, wells, v) = line_field(801);
        let fj = fast_march(&g, &v, &wells[0], 0).unwrap();
        let fk = fast_march(&g, &v, &wells[1], 1).unwrap();
        let pg = pair_geometry(&g, &fj, &fk, 0.1 * 4.0 / 3.0).unwrap();
        assert_eq!(pg.sigma.len(), 1);
        assert!(pg.sigma[0].coords[0].abs() < 1e-9);
        assert_eq!(pg.ell, 0);
        assert_eq!(pg.h_points, vec![0]);
        assert!(pg.transverse_hessian[0].is_empty());
        assert!((pg.sigma[0].normal[0] - 1.0).abs() < 1e-12);
        assert!((pg.s_forward - pg.s_backward).abs() <= fj.tau_fm);
    }
}

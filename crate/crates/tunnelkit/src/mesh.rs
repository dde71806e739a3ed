//! Discrete geometry substrate.
//!
//! Every domain (interval, rectangle, flat torus, latitude-longitude sphere)
//! is represented as a weighted graph: nodes carry a volume weight and a
//! diagonal metric, edges carry a conductance so that the divergence-form
//! Laplace-Beltrami operator reads
//!
//! ```text
//! (L u)_a = 1/vol_a * sum_b c_ab (u_a - u_b)
//! ```
//!
//! The structured layout behind each graph is kept as well, since fast
//! marching, interpolation and level-set extraction need axis information.
//!
//! Sphere layout: `nrings` latitude rings at `theta_r = (r + 1) * dtheta`
//! with `dtheta = pi / (nrings + 1)`, so ring cells are bounded at half-cell
//! offsets, plus one node per pole whose cell is the polar cap of angular
//! radius `dtheta / 2`. Pole covectors are expressed in local normal
//! coordinates (unit metric).

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes per axis.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Rectangle,
    Torus2d,
    SphereLatlong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    DirichletOuter,
    Periodic,
    ClosedSurface,
}

/// Description of a domain and its discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    /// Per-axis coordinate bounds (empty for the sphere).
    pub extents: Vec<[f64; 2]>,
    /// Sphere radius (ignored for flat domains).
    pub radius: f64,
    /// Nodes per axis. For the sphere: `[rings, longitudes]`.
    pub resolution: Vec<usize>,
    pub boundary: Boundary,
}

impl DomainSpec {
    pub fn interval(a: f64, b: f64, nodes: usize, boundary: Boundary) -> Self {
        DomainSpec {
            kind: DomainKind::Interval,
            extents: vec![[a, b]],
            radius: 0.0,
            resolution: vec![nodes],
            boundary,
        }
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Rectangle,
            extents: vec![x, y],
            radius: 0.0,
            resolution: vec![nx, ny],
            boundary: Boundary::DirichletOuter,
        }
    }

    pub fn torus(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Torus2d,
            extents: vec![x, y],
            radius: 0.0,
            resolution: vec![nx, ny],
            boundary: Boundary::Periodic,
        }
    }

    pub fn sphere(radius: f64, rings: usize, longitudes: usize) -> Self {
        DomainSpec {
            kind: DomainKind::SphereLatlong,
            extents: Vec::new(),
            radius,
            resolution: vec![rings, longitudes],
            boundary: Boundary::ClosedSurface,
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            DomainKind::Interval => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.resolution.len() != dim {
            return Err(Error::InvalidDomain(format!(
                "{:?} needs {dim} resolution entries, got {}",
                self.kind,
                self.resolution.len()
            )));
        }
        if let Some(&n) = self.resolution.iter().find(|&&n| n < MIN_RESOLUTION) {
            return Err(Error::InvalidDomain(format!(
                "resolution {n} below minimum {MIN_RESOLUTION}"
            )));
        }
        let consistent = matches!(
            (self.kind, self.boundary),
            (DomainKind::Interval, Boundary::DirichletOuter | Boundary::Periodic)
                | (DomainKind::Rectangle, Boundary::DirichletOuter)
                | (DomainKind::Torus2d, Boundary::Periodic)
                | (DomainKind::SphereLatlong, Boundary::ClosedSurface)
        );
        if !consistent {
            return Err(Error::InvalidDomain(format!(
                "boundary {:?} is inconsistent with kind {:?}",
                self.boundary, self.kind
            )));
        }
        if self.kind == DomainKind::SphereLatlong {
            if !(self.radius > 0.0 && self.radius.is_finite()) {
                return Err(Error::InvalidDomain("sphere radius must be positive".into()));
            }
        } else {
            if self.extents.len() != dim {
                return Err(Error::InvalidDomain(format!(
                    "{:?} needs {dim} extents, got {}",
                    self.kind,
                    self.extents.len()
                )));
            }
            for e in &self.extents {
                if !(e[1] > e[0]) || !e[0].is_finite() || !e[1].is_finite() {
                    return Err(Error::InvalidDomain(format!("empty extent {e:?}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Coordinate axis the edge runs along.
    pub axis: usize,
    /// Metric coefficient g_axis at the edge midpoint.
    pub metric: f64,
    /// Geometric (metric) length of the edge.
    pub length: f64,
    /// Finite-volume conductance: sqrt|g| g^{axis axis} * dual face / spacing.
    pub conductance: f64,
}

/// Structured layout behind a graph.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layout {
    Line {
        n: usize,
        origin: f64,
        h: f64,
        periodic: bool,
    },
    Plane {
        nx: usize,
        ny: usize,
        origin: [f64; 2],
        h: [f64; 2],
        periodic: bool,
    },
    Sphere {
        rings: usize,
        nphi: usize,
        dtheta: f64,
        dphi: f64,
        radius: f64,
    },
}

/// One axis of an upwind stencil: candidate neighbors at a common spacing.
#[derive(Clone, Debug)]
pub struct AxisStencil {
    pub neighbors: Vec<usize>,
    /// Coordinate spacing.
    pub spacing: f64,
    /// Metric coefficient along the axis.
    pub metric: f64,
}

/// A grid cell (quad) with corner coordinates unwrapped across periodic seams.
#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub nodes: [usize; 4],
    pub coords: [[f64; 2]; 4],
}

/// Weighted-graph discretization of a domain. Immutable after construction.
#[derive(Clone, Debug)]
pub struct DomainGraph {
    spec: DomainSpec,
    coords: Vec<[f64; 2]>,
    volumes: Vec<f64>,
    on_boundary: Vec<bool>,
    metric: Vec<[f64; 2]>,
    edges: Vec<Edge>,
    adj_start: Vec<usize>,
    adj: Vec<(usize, usize)>,
    pole_nodes: Option<[usize; 2]>,
    layout: Layout,
}

/// Per-node field with `rank` components per node (rank 1 = scalar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    pub values: Vec<f64>,
    pub rank: usize,
}

impl NodeField {
    pub fn scalar(values: Vec<f64>) -> Self {
        NodeField { values, rank: 1 }
    }

    pub fn zeros(nodes: usize, rank: usize) -> Self {
        NodeField {
            values: vec![0.0; nodes * rank],
            rank,
        }
    }

    pub fn from_components(values: Vec<f64>, rank: usize) -> Result<Self> {
        if rank == 0 || !values.len().is_multiple_of(rank) {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form rank-{rank} sections",
                values.len()
            )));
        }
        Ok(NodeField { values, rank })
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.rank
    }

    #[inline]
    pub fn at(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.rank + comp]
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.values[node * self.rank..(node + 1) * self.rank]
    }

    /// Component `comp` as a scalar field.
    pub fn component(&self, comp: usize) -> NodeField {
        NodeField::scalar(
            (0..self.node_count())
                .map(|i| self.at(i, comp))
                .collect(),
        )
    }

    pub fn require_scalar(&self) -> Result<()> {
        if self.rank != 1 {
            return Err(Error::RankMismatch {
                expected: 1,
                found: self.rank,
            });
        }
        Ok(())
    }
}

/// Builds the weighted graph for `spec`.
pub fn build_domain(spec: &DomainSpec) -> Result<DomainGraph> {
    spec.validate()?;
    let graph = match spec.kind {
        DomainKind::Interval => build_line(spec),
        DomainKind::Rectangle | DomainKind::Torus2d => build_plane(spec),
        DomainKind::SphereLatlong => build_sphere(spec),
    };
    if !graph.is_connected() {
        return Err(Error::InvalidDomain("graph is not connected".into()));
    }
    Ok(graph)
}

fn build_line(spec: &DomainSpec) -> DomainGraph {
    let n = spec.resolution[0];
    let [a, b] = spec.extents[0];
    let periodic = spec.boundary == Boundary::Periodic;
    let h = if periodic {
        (b - a) / n as f64
    } else {
        (b - a) / (n - 1) as f64
    };
    let mut coords = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    let mut on_boundary = vec![false; n];
    for i in 0..n {
        coords.push([a + i as f64 * h, 0.0]);
        let end = !periodic && (i == 0 || i == n - 1);
        volumes.push(if end { 0.5 * h } else { h });
        on_boundary[i] = end;
    }
    let mut edges = Vec::new();
    let edge = |a, b| Edge {
        a,
        b,
        axis: 0,
        metric: 1.0,
        length: h,
        conductance: 1.0 / h,
    };
    for i in 0..n - 1 {
        edges.push(edge(i, i + 1));
    }
    if periodic {
        edges.push(edge(n - 1, 0));
    }
    DomainGraph::assemble(
        spec.clone(),
        coords,
        volumes,
        on_boundary,
        vec![[1.0, 1.0]; n],
        edges,
        None,
        Layout::Line {
            n,
            origin: a,
            h,
            periodic,
        },
    )
}

fn build_plane(spec: &DomainSpec) -> DomainGraph {
    let (nx, ny) = (spec.resolution[0], spec.resolution[1]);
    let periodic = spec.boundary == Boundary::Periodic;
    let [x0, x1] = spec.extents[0];
    let [y0, y1] = spec.extents[1];
    let (hx, hy) = if periodic {
        ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64)
    } else {
        ((x1 - x0) / (nx - 1) as f64, (y1 - y0) / (ny - 1) as f64)
    };
    let idx = |i: usize, j: usize| j * nx + i;
    let n = nx * ny;
    let mut coords = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    let mut on_boundary = vec![false; n];
    for j in 0..ny {
        for i in 0..nx {
            coords.push([x0 + i as f64 * hx, y0 + j as f64 * hy]);
            let bx = !periodic && (i == 0 || i == nx - 1);
            let by = !periodic && (j == 0 || j == ny - 1);
            let mut v = hx * hy;
            if bx {
                v *= 0.5;
            }
            if by {
                v *= 0.5;
            }
            volumes.push(v);
            on_boundary[idx(i, j)] = bx || by;
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            // x-direction
            if i + 1 < nx || periodic {
                let i2 = (i + 1) % nx;
                let half = !periodic && (j == 0 || j == ny - 1);
                let face = if half { 0.5 * hy } else { hy };
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i2, j),
                    axis: 0,
                    metric: 1.0,
                    length: hx,
                    conductance: face / hx,
                });
            }
            if j + 1 < ny || periodic {
                let j2 = (j + 1) % ny;
                let half = !periodic && (i == 0 || i == nx - 1);
                let face = if half { 0.5 * hx } else { hx };
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i, j2),
                    axis: 1,
                    metric: 1.0,
                    length: hy,
                    conductance: face / hy,
                });
            }
        }
    }
    DomainGraph::assemble(
        spec.clone(),
        coords,
        volumes,
        on_boundary,
        vec![[1.0, 1.0]; n],
        edges,
        None,
        Layout::Plane {
            nx,
            ny,
            origin: [x0, y0],
            h: [hx, hy],
            periodic,
        },
    )
}

fn build_sphere(spec: &DomainSpec) -> DomainGraph {
    let (rings, nphi) = (spec.resolution[0], spec.resolution[1]);
    let r = spec.radius;
    let dtheta = PI / (rings + 1) as f64;
    let dphi = 2.0 * PI / nphi as f64;
    let n = rings * nphi + 2;
    let south = n - 1;
    let ring_node = |ring: usize, k: usize| 1 + ring * nphi + k;

    let cap = 2.0 * PI * r * r * (1.0 - (0.5 * dtheta).cos());
    let mut coords = vec![[0.0, 0.0]; n];
    let mut volumes = vec![cap; n];
    let mut metric = vec![[1.0, 1.0]; n];
    coords[south] = [PI, 0.0];
    for ring in 0..rings {
        let theta = (ring + 1) as f64 * dtheta;
        let s = theta.sin();
        for k in 0..nphi {
            let id = ring_node(ring, k);
            coords[id] = [theta, k as f64 * dphi];
            volumes[id] = r * r * s * dtheta * dphi;
            metric[id] = [r * r, r * r * s * s];
        }
    }

    let mut edges = Vec::new();
    let theta_edge = |a: usize, b: usize, theta_mid: f64| Edge {
        a,
        b,
        axis: 0,
        metric: r * r,
        length: r * dtheta,
        conductance: theta_mid.sin() * dphi / dtheta,
    };
    for k in 0..nphi {
        edges.push(theta_edge(0, ring_node(0, k), 0.5 * dtheta));
    }
    for ring in 0..rings {
        let theta = (ring + 1) as f64 * dtheta;
        let s = theta.sin();
        for k in 0..nphi {
            let a = ring_node(ring, k);
            edges.push(Edge {
                a,
                b: ring_node(ring, (k + 1) % nphi),
                axis: 1,
                metric: r * r * s * s,
                length: r * s * dphi,
                conductance: dtheta / (s * dphi),
            });
            if ring + 1 < rings {
                edges.push(theta_edge(a, ring_node(ring + 1, k), theta + 0.5 * dtheta));
            }
        }
    }
    for k in 0..nphi {
        edges.push(theta_edge(ring_node(rings - 1, k), south, PI - 0.5 * dtheta));
    }

    DomainGraph::assemble(
        spec.clone(),
        coords,
        volumes,
        vec![false; n],
        metric,
        edges,
        Some([0, south]),
        Layout::Sphere {
            rings,
            nphi,
            dtheta,
            dphi,
            radius: r,
        },
    )
}

impl DomainGraph {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: DomainSpec,
        coords: Vec<[f64; 2]>,
        volumes: Vec<f64>,
        on_boundary: Vec<bool>,
        metric: Vec<[f64; 2]>,
        edges: Vec<Edge>,
        pole_nodes: Option<[usize; 2]>,
        layout: Layout,
    ) -> Self {
        let n = coords.len();
        let mut degree = vec![0usize; n];
        for e in &edges {
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        let mut adj_start = vec![0usize; n + 1];
        for i in 0..n {
            adj_start[i + 1] = adj_start[i] + degree[i];
        }
        let mut fill = adj_start.clone();
        let mut adj = vec![(0usize, 0usize); adj_start[n]];
        for (ei, e) in edges.iter().enumerate() {
            adj[fill[e.a]] = (e.b, ei);
            fill[e.a] += 1;
            adj[fill[e.b]] = (e.a, ei);
            fill[e.b] += 1;
        }
        DomainGraph {
            spec,
            coords,
            volumes,
            on_boundary,
            metric,
            edges,
            adj_start,
            adj,
            pole_nodes,
            layout,
        }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn kind(&self) -> DomainKind {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        self.coords[node]
    }

    pub fn all_coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn volume(&self, node: usize) -> f64 {
        self.volumes[node]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// True for nodes on an outer Dirichlet boundary (pinned to zero).
    pub fn is_boundary(&self, node: usize) -> bool {
        self.on_boundary[node]
    }

    pub fn metric(&self, node: usize) -> [f64; 2] {
        self.metric[node]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pole_nodes(&self) -> Option<[usize; 2]> {
        self.pole_nodes
    }

    pub fn is_pole(&self, node: usize) -> bool {
        matches!(self.pole_nodes, Some([n, s]) if node == n || node == s)
    }

    /// Neighbors of `node` with the index of the connecting edge.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adj[self.adj_start[node]..self.adj_start[node + 1]]
    }

    pub fn coordinate_names(&self) -> &'static [&'static str] {
        match self.spec.kind {
            DomainKind::Interval => &["x"],
            DomainKind::Rectangle | DomainKind::Torus2d => &["x", "y"],
            DomainKind::SphereLatlong => &["theta", "phi"],
        }
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Smallest geometric edge length; the mesh width `h` used in tolerances.
    pub fn min_spacing(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.length)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest geometric edge length.
    pub fn max_spacing(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    /// Characteristic mesh width along coordinate axes (metric length).
    pub fn mesh_width(&self) -> f64 {
        match self.layout {
            Layout::Line { h, .. } => h,
            Layout::Plane { h, .. } => h[0].max(h[1]),
            Layout::Sphere { dtheta, radius, .. } => dtheta * radius,
        }
    }

    fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    /// Upwind stencil of `node` for eikonal updates.
    pub fn axis_stencils(&self, node: usize) -> Vec<AxisStencil> {
        match self.layout {
            Layout::Line { n, h, periodic, .. } => {
                let mut nb = Vec::with_capacity(2);
                if node > 0 {
                    nb.push(node - 1);
                } else if periodic {
                    nb.push(n - 1);
                }
                if node + 1 < n {
                    nb.push(node + 1);
                } else if periodic {
                    nb.push(0);
                }
                vec![AxisStencil {
                    neighbors: nb,
                    spacing: h,
                    metric: 1.0,
                }]
            }
            Layout::Plane {
                nx, ny, h, periodic, ..
            } => {
                let (i, j) = (node % nx, node / nx);
                let mut out = Vec::with_capacity(2);
                for axis in 0..2 {
                    let (pos, len) = if axis == 0 { (i, nx) } else { (j, ny) };
                    let at = |p: usize| if axis == 0 { j * nx + p } else { p * nx + i };
                    let mut nb = Vec::with_capacity(2);
                    if pos > 0 {
                        nb.push(at(pos - 1));
                    } else if periodic {
                        nb.push(at(len - 1));
                    }
                    if pos + 1 < len {
                        nb.push(at(pos + 1));
                    } else if periodic {
                        nb.push(at(0));
                    }
                    out.push(AxisStencil {
                        neighbors: nb,
                        spacing: h[axis],
                        metric: 1.0,
                    });
                }
                out
            }
            Layout::Sphere {
                rings,
                nphi,
                dtheta,
                dphi,
                radius,
            } => {
                let r2 = radius * radius;
                let south = self.node_count() - 1;
                if node == 0 || node == south {
                    let ring = if node == 0 { 0 } else { rings - 1 };
                    return vec![AxisStencil {
                        neighbors: (0..nphi).map(|k| 1 + ring * nphi + k).collect(),
                        spacing: dtheta,
                        metric: r2,
                    }];
                }
                let ring = (node - 1) / nphi;
                let k = (node - 1) % nphi;
                let up = if ring == 0 { 0 } else { node - nphi };
                let down = if ring + 1 == rings { south } else { node + nphi };
                let s = self.coords[node][0].sin();
                let left = 1 + ring * nphi + (k + nphi - 1) % nphi;
                let right = 1 + ring * nphi + (k + 1) % nphi;
                vec![
                    AxisStencil {
                        neighbors: vec![up, down],
                        spacing: dtheta,
                        metric: r2,
                    },
                    AxisStencil {
                        neighbors: vec![left, right],
                        spacing: dphi,
                        metric: r2 * s * s,
                    },
                ]
            }
        }
    }

    /// Maps a point back into the fundamental coordinate domain.
    pub fn wrap(&self, p: [f64; 2]) -> [f64; 2] {
        match self.layout {
            Layout::Line {
                n,
                origin,
                h,
                periodic: true,
            } => [origin + (p[0] - origin).rem_euclid(n as f64 * h), 0.0],
            Layout::Plane {
                nx,
                ny,
                origin,
                h,
                periodic: true,
            } => [
                origin[0] + (p[0] - origin[0]).rem_euclid(nx as f64 * h[0]),
                origin[1] + (p[1] - origin[1]).rem_euclid(ny as f64 * h[1]),
            ],
            Layout::Sphere { .. } => {
                let mut theta = p[0];
                let mut phi = p[1];
                if theta < 0.0 {
                    theta = -theta;
                    phi += PI;
                }
                if theta > PI {
                    theta = 2.0 * PI - theta;
                    phi += PI;
                }
                [theta, phi.rem_euclid(2.0 * PI)]
            }
            _ => p,
        }
    }

    /// Metric coefficients at an arbitrary point (coordinate basis).
    pub fn metric_at(&self, p: [f64; 2]) -> [f64; 2] {
        match self.layout {
            Layout::Sphere { radius, .. } => {
                let s = p[0].sin();
                [radius * radius, radius * radius * s * s]
            }
            _ => [1.0, 1.0],
        }
    }

    /// Local normal coordinates of `p` relative to `center` (metric length
    /// units, minimum-image across periodic seams).
    pub fn local_coords(&self, center: [f64; 2], p: [f64; 2]) -> [f64; 2] {
        let min_image = |d: f64, period: f64| d - period * (d / period).round();
        match self.layout {
            Layout::Line {
                n, h, periodic, ..
            } => {
                let d = p[0] - center[0];
                [if periodic { min_image(d, n as f64 * h) } else { d }, 0.0]
            }
            Layout::Plane {
                nx,
                ny,
                h,
                periodic,
                ..
            } => {
                let mut d = [p[0] - center[0], p[1] - center[1]];
                if periodic {
                    d[0] = min_image(d[0], nx as f64 * h[0]);
                    d[1] = min_image(d[1], ny as f64 * h[1]);
                }
                d
            }
            Layout::Sphere { radius, .. } => {
                if center[0] < 1e-12 {
                    let rho = radius * p[0];
                    [rho * p[1].cos(), rho * p[1].sin()]
                } else if center[0] > PI - 1e-12 {
                    let rho = radius * (PI - p[0]);
                    [rho * p[1].cos(), rho * p[1].sin()]
                } else {
                    let dphi = min_image(p[1] - center[1], 2.0 * PI);
                    [radius * (p[0] - center[0]), radius * center[0].sin() * dphi]
                }
            }
        }
    }

    /// Inverse of [`local_coords`](Self::local_coords).
    pub fn from_local_coords(&self, center: [f64; 2], x: [f64; 2]) -> [f64; 2] {
        match self.layout {
            Layout::Line { .. } => self.wrap([center[0] + x[0], 0.0]),
            Layout::Plane { .. } => self.wrap([center[0] + x[0], center[1] + x[1]]),
            Layout::Sphere { radius, .. } => {
                if center[0] < 1e-12 {
                    let rho = (x[0] * x[0] + x[1] * x[1]).sqrt() / radius;
                    self.wrap([rho, x[1].atan2(x[0])])
                } else if center[0] > PI - 1e-12 {
                    let rho = (x[0] * x[0] + x[1] * x[1]).sqrt() / radius;
                    self.wrap([PI - rho, x[1].atan2(x[0])])
                } else {
                    self.wrap([
                        center[0] + x[0] / radius,
                        center[1] + x[1] / (radius * center[0].sin()),
                    ])
                }
            }
        }
    }

    /// Interpolation stencil (node, weight) at `p`: linear in 1D, bilinear on
    /// planar cells and ring cells, pole-to-ring linear inside polar caps.
    /// Returns `None` outside the domain.
    pub fn interp_weights(&self, p: [f64; 2]) -> Option<Vec<(usize, f64)>> {
        let p = self.wrap(p);
        match self.layout {
            Layout::Line {
                n,
                origin,
                h,
                periodic,
            } => {
                let s = (p[0] - origin) / h;
                let (i0, t) = cell_of(s, n, periodic)?;
                let i1 = (i0 + 1) % n;
                Some(vec![(i0, 1.0 - t), (i1, t)])
            }
            Layout::Plane {
                nx,
                ny,
                origin,
                h,
                periodic,
            } => {
                let (i0, tx) = cell_of((p[0] - origin[0]) / h[0], nx, periodic)?;
                let (j0, ty) = cell_of((p[1] - origin[1]) / h[1], ny, periodic)?;
                let (i1, j1) = ((i0 + 1) % nx, (j0 + 1) % ny);
                Some(vec![
                    (j0 * nx + i0, (1.0 - tx) * (1.0 - ty)),
                    (j0 * nx + i1, tx * (1.0 - ty)),
                    (j1 * nx + i0, (1.0 - tx) * ty),
                    (j1 * nx + i1, tx * ty),
                ])
            }
            Layout::Sphere {
                rings,
                nphi,
                dtheta,
                dphi,
                ..
            } => {
                let s = p[1] / dphi;
                let k0 = (s.floor() as usize) % nphi;
                let tp = s - s.floor();
                let k1 = (k0 + 1) % nphi;
                let ring_pair = |ring: usize, w: f64| {
                    [
                        (1 + ring * nphi + k0, w * (1.0 - tp)),
                        (1 + ring * nphi + k1, w * tp),
                    ]
                };
                let u = p[0] / dtheta;
                let south = self.node_count() - 1;
                if u <= 1.0 {
                    let [a, b] = ring_pair(0, u);
                    Some(vec![(0, 1.0 - u), a, b])
                } else if u >= rings as f64 {
                    let t = (u - rings as f64).min(1.0);
                    let [a, b] = ring_pair(rings - 1, 1.0 - t);
                    Some(vec![a, b, (south, t)])
                } else {
                    let r0 = (u.floor() as usize - 1).min(rings - 2);
                    let t = u - (r0 + 1) as f64;
                    let [a, b] = ring_pair(r0, 1.0 - t);
                    let [c, d] = ring_pair(r0 + 1, t);
                    Some(vec![a, b, c, d])
                }
            }
        }
    }

    /// Interpolates a scalar node array at `p`.
    pub fn interpolate(&self, values: &[f64], p: [f64; 2]) -> Option<f64> {
        self.interp_weights(p)
            .map(|w| w.iter().map(|&(i, t)| t * values[i]).sum())
    }

    /// Node nearest to `p` in local metric coordinates.
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        if let Some(w) = self.interp_weights(p) {
            for &(i, _) in &w {
                let x = self.local_coords(p, self.coords[i]);
                let d = x[0] * x[0] + x[1] * x[1];
                if d < best.0 {
                    best = (d, i);
                }
            }
            return best.1;
        }
        for (i, &c) in self.coords.iter().enumerate() {
            let x = self.local_coords(p, c);
            let d = x[0] * x[0] + x[1] * x[1];
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Grid cells (quads) for level-set extraction. Cells touching a pole are
    /// omitted.
    pub fn cells(&self) -> Vec<Cell> {
        match self.layout {
            Layout::Line { .. } => Vec::new(),
            Layout::Plane {
                nx,
                ny,
                origin,
                h,
                periodic,
            } => {
                let (cx, cy) = if periodic { (nx, ny) } else { (nx - 1, ny - 1) };
                let mut out = Vec::with_capacity(cx * cy);
                for j in 0..cy {
                    for i in 0..cx {
                        let (i1, j1) = ((i + 1) % nx, (j + 1) % ny);
                        let x0 = origin[0] + i as f64 * h[0];
                        let y0 = origin[1] + j as f64 * h[1];
                        let (x1, y1) = (x0 + h[0], y0 + h[1]);
                        out.push(Cell {
                            nodes: [j * nx + i, j * nx + i1, j1 * nx + i1, j1 * nx + i],
                            coords: [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
                        });
                    }
                }
                out
            }
            Layout::Sphere {
                rings,
                nphi,
                dtheta,
                dphi,
                ..
            } => {
                let mut out = Vec::with_capacity((rings - 1) * nphi);
                for ring in 0..rings - 1 {
                    let t0 = (ring + 1) as f64 * dtheta;
                    let t1 = t0 + dtheta;
                    for k in 0..nphi {
                        let k1 = (k + 1) % nphi;
                        let p0 = k as f64 * dphi;
                        let p1 = p0 + dphi;
                        let a = 1 + ring * nphi;
                        let b = a + nphi;
                        out.push(Cell {
                            nodes: [a + k, a + k1, b + k1, b + k],
                            coords: [[t0, p0], [t0, p1], [t1, p1], [t1, p0]],
                        });
                    }
                }
                out
            }
        }
    }

    /// Squared metric norm of a covector at `node`: sum_i w_i^2 / g_i.
    pub fn covector_norm_sq(&self, node: usize, w: [f64; 2]) -> f64 {
        let g = self.metric[node];
        let mut s = w[0] * w[0] / g[0];
        if self.dim() == 2 {
            s += w[1] * w[1] / g[1];
        }
        s
    }
}

fn cell_of(s: f64, n: usize, periodic: bool) -> Option<(usize, f64)> {
    if periodic {
        let s = s.rem_euclid(n as f64);
        let i = (s.floor() as usize).min(n - 1);
        Some((i, s - i as f64))
    } else {
        let eps = 1e-9;
        if s < -eps || s > (n - 1) as f64 + eps {
            return None;
        }
        let s = s.clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        Some((i, s - i as f64))
    }
}

/// Per-node covector components of `df`.
///
/// Centered differences in the interior, one-sided at Dirichlet boundaries,
/// wrapped across periodic seams. Pole nodes use a least-squares plane
/// through the adjacent ring, in local normal coordinates.
pub fn discrete_gradient(graph: &DomainGraph, f: &NodeField) -> Result<Vec<[f64; 2]>> {
    f.require_scalar()?;
    if f.node_count() != graph.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} nodes, graph has {}",
            f.node_count(),
            graph.node_count()
        )));
    }
    Ok(gradient_of(graph, &f.values))
}

pub(crate) fn gradient_of(graph: &DomainGraph, f: &[f64]) -> Vec<[f64; 2]> {
    let n = graph.node_count();
    let mut out = vec![[0.0; 2]; n];
    match *graph.layout() {
        Layout::Line { n, h, periodic, .. } => {
            for i in 0..n {
                out[i][0] = axis_diff(f, i, n, h, periodic, |p| p);
            }
        }
        Layout::Plane {
            nx,
            ny,
            h,
            periodic,
            ..
        } => {
            for j in 0..ny {
                for i in 0..nx {
                    let gx = axis_diff(f, i, nx, h[0], periodic, |p| j * nx + p);
                    let gy = axis_diff(f, j, ny, h[1], periodic, |p| p * nx + i);
                    out[j * nx + i] = [gx, gy];
                }
            }
        }
        Layout::Sphere {
            rings,
            nphi,
            dtheta,
            dphi,
            radius,
        } => {
            let south = n - 1;
            for ring in 0..rings {
                for k in 0..nphi {
                    let id = 1 + ring * nphi + k;
                    let up = if ring == 0 { 0 } else { id - nphi };
                    let down = if ring + 1 == rings { south } else { id + nphi };
                    let gt = (f[down] - f[up]) / (2.0 * dtheta);
                    let l = 1 + ring * nphi + (k + nphi - 1) % nphi;
                    let r = 1 + ring * nphi + (k + 1) % nphi;
                    let gp = (f[r] - f[l]) / (2.0 * dphi);
                    out[id] = [gt, gp];
                }
            }
            for (pole, ring) in [(0usize, 0usize), (south, rings - 1)] {
                let rho = radius * dtheta;
                let (mut sx, mut sy, mut sxx) = (0.0, 0.0, 0.0);
                for k in 0..nphi {
                    let phi = k as f64 * dphi;
                    let (x, y) = (rho * phi.cos(), rho * phi.sin());
                    let df = f[1 + ring * nphi + k] - f[pole];
                    sx += df * x;
                    sy += df * y;
                    sxx += x * x;
                }
                out[pole] = [sx / sxx, sy / sxx];
            }
        }
    }
    out
}

fn axis_diff(
    f: &[f64],
    pos: usize,
    len: usize,
    h: f64,
    periodic: bool,
    at: impl Fn(usize) -> usize,
) -> f64 {
    if periodic {
        let l = at((pos + len - 1) % len);
        let r = at((pos + 1) % len);
        (f[r] - f[l]) / (2.0 * h)
    } else if pos == 0 {
        (f[at(1)] - f[at(0)]) / h
    } else if pos + 1 == len {
        (f[at(pos)] - f[at(pos - 1)]) / h
    } else {
        (f[at(pos + 1)] - f[at(pos - 1)]) / (2.0 * h)
    }
}

/// Metric norm |df|^2 at every node.
pub fn gradient_norm_sq(graph: &DomainGraph, grad: &[[f64; 2]]) -> Vec<f64> {
    grad.iter()
        .enumerate()
        .map(|(i, &w)| graph.covector_norm_sq(i, w))
        .collect()
}

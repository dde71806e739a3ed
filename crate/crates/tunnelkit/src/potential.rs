//! Potentials, endomorphism fields and well detection.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::mesh::{DomainGraph, DomainKind, NodeField};

/// Stencil radius (in cells) of the local quadratic fit.
pub const FIT_RADIUS: usize = 3;

/// A non-degenerate zero minimum of V.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellInfo {
    /// Grid node nearest to the refined minimum.
    pub node: usize,
    /// Refined coordinates of the minimum.
    pub coords: [f64; 2],
    /// Fitted value of V at the refined minimum.
    pub value: f64,
    /// Hessian of V at the minimum in local normal coordinates (row-major n x n).
    pub hessian: Vec<f64>,
    /// Eigenvalues h_k of the Hessian, ascending.
    pub hessian_eigs: Vec<f64>,
    /// Harmonic frequencies lambda_k = sqrt(h_k / 2), ascending.
    pub lambda: Vec<f64>,
    /// Eigenvalues of W at the minimum, ascending.
    pub w_eigs: Vec<f64>,
}

impl WellInfo {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// A = (Hess / 2)^{1/2}, row-major.
    pub fn sqrt_half_hessian(&self) -> Vec<f64> {
        let n = self.dim();
        let h = DMatrix::from_row_slice(n, n, &self.hessian);
        let eig = SymmetricEigen::new(h);
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| (0.5 * v.max(0.0)).sqrt()));
        let a = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        out
    }

    /// Lowest harmonic level e_0 = min mu + sum lambda_k.
    pub fn ground_level(&self) -> f64 {
        self.w_eigs.first().copied().unwrap_or(0.0) + self.lambda.iter().sum::<f64>()
    }
}

/// Symmetric r x r endomorphism per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndoField {
    pub rank: usize,
    /// Node-major, row-major r x r blocks.
    pub values: Vec<f64>,
}

impl EndoField {
    pub fn zero(nodes: usize, rank: usize) -> Self {
        EndoField {
            rank,
            values: vec![0.0; nodes * rank * rank],
        }
    }

    pub fn constant(nodes: usize, matrix: &[f64], rank: usize) -> Result<Self> {
        if matrix.len() != rank * rank {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rank}x{rank} endomorphism",
                matrix.len()
            )));
        }
        let f = EndoField {
            rank,
            values: matrix.repeat(nodes),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / (self.rank * self.rank)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let s = self.rank * self.rank;
        &self.values[node * s..(node + 1) * s]
    }

    /// Rejects non-symmetric blocks; symmetry is checked, never imposed.
    pub fn validate(&self) -> Result<()> {
        let r = self.rank;
        for node in 0..self.node_count() {
            let m = self.at(node);
            for i in 0..r {
                for j in 0..i {
                    let (a, b) = (m[i * r + j], m[j * r + i]);
                    if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                        return Err(Error::NotSymmetric { node });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// max over nodes of the spectral norm of W.
    pub fn max_norm(&self) -> f64 {
        (0..self.node_count())
            .map(|i| {
                let m = DMatrix::from_row_slice(self.rank, self.rank, self.at(i));
                m.symmetric_eigenvalues().amax()
            })
            .fold(0.0, f64::max)
    }

    /// Eigenvalues of the interpolated block at `p`, ascending.
    pub fn eigenvalues_at(&self, graph: &DomainGraph, p: [f64; 2]) -> Vec<f64> {
        let r = self.rank;
        let mut m = DMatrix::zeros(r, r);
        let weights = graph
            .interp_weights(p)
            .unwrap_or_else(|| vec![(graph.nearest_node(p), 1.0)]);
        for (node, w) in weights {
            m += DMatrix::from_row_slice(r, r, self.at(node)) * w;
        }
        let m = (&m + m.transpose()) * 0.5;
        let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

fn bindings(graph: &DomainGraph, p: [f64; 2]) -> Bindings {
    match graph.kind() {
        DomainKind::SphereLatlong => Bindings {
            theta: p[0],
            phi: p[1],
            ..Default::default()
        },
        _ => Bindings {
            x: p[0],
            y: p[1],
            ..Default::default()
        },
    }
}

fn check_variables(e: &Expr, graph: &DomainGraph) -> Result<()> {
    let allowed = graph.coordinate_names();
    for v in e.variables() {
        if !allowed.contains(&v.name()) {
            return Err(Error::DimensionMismatch(format!(
                "variable `{}` is not a coordinate of {:?} (expected {allowed:?})",
                v.name(),
                graph.kind()
            )));
        }
    }
    Ok(())
}

/// Evaluates `e` at every node.
pub fn evaluate_field(e: &Expr, graph: &DomainGraph) -> Result<NodeField> {
    check_variables(e, graph)?;
    let mut values = Vec::with_capacity(graph.node_count());
    for node in 0..graph.node_count() {
        let p = graph.coords(node);
        let v = e.eval(&bindings(graph, p)).map_err(|message| Error::Evaluation {
            node,
            coords: p,
            message,
        })?;
        values.push(v);
    }
    Ok(NodeField::scalar(values))
}

/// Evaluates a symmetric matrix of entry expressions (row-major) at every node.
pub fn evaluate_endo(entries: &[Expr], rank: usize, graph: &DomainGraph) -> Result<EndoField> {
    if entries.len() != rank * rank {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {rank}x{rank} endomorphism",
            entries.len()
        )));
    }
    let cols: Vec<NodeField> = entries
        .iter()
        .map(|e| evaluate_field(e, graph))
        .collect::<Result<_>>()?;
    let n = graph.node_count();
    let mut values = Vec::with_capacity(n * rank * rank);
    for node in 0..n {
        values.extend(cols.iter().map(|c| c.values[node]));
    }
    let f = EndoField { rank, values };
    f.validate()?;
    Ok(f)
}

/// Finds the wells of V with W = 0.
pub fn find_wells(v: &NodeField, graph: &DomainGraph) -> Result<Vec<WellInfo>> {
    find_wells_endo(v, &EndoField::zero(graph.node_count(), 1), graph)
}

/// Finds the non-degenerate zero minima of V and attaches the eigenvalues of W.
pub fn find_wells_endo(v: &NodeField, w: &EndoField, graph: &DomainGraph) -> Result<Vec<WellInfo>> {
    v.require_scalar()?;
    let n = graph.node_count();
    if v.node_count() != n || w.node_count() != n {
        return Err(Error::DimensionMismatch(
            "potential and graph sizes differ".into(),
        ));
    }
    let vmax = v.values.iter().copied().fold(0.0, f64::max);
    for (node, &val) in v.values.iter().enumerate() {
        if val < -1e-12 * vmax.max(1.0) {
            return Err(Error::NegativePotential { node, value: val });
        }
    }

    let h = graph.mesh_width();
    let mut wells: Vec<WellInfo> = Vec::new();
    for a in 0..n {
        let va = v.values[a];
        let mut is_min = true;
        for &(b, _) in graph.neighbors(a) {
            let vb = v.values[b];
            // plateau ties resolved toward the lowest index
            if vb < va || (vb == va && b < a) {
                is_min = false;
                break;
            }
        }
        if !is_min {
            continue;
        }
        let fit = quadratic_fit(graph, &v.values, a, FIT_RADIUS)?;
        let hmax = fit.eigs.last().copied().unwrap_or(0.0).max(0.0);
        let zero_tol = 1e-8 * vmax + 0.5 * h * h * hmax;
        if va > zero_tol {
            continue;
        }
        let coarse = quadratic_fit(graph, &v.values, a, FIT_RADIUS - 1)?;
        let hmin = fit.eigs[0];
        let drift = fit
            .eigs
            .iter()
            .zip(&coarse.eigs)
            .map(|(f, c)| (f - c).abs() / f.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if hmin <= 1e-10 * vmax.max(1.0) || drift > 0.25 {
            return Err(Error::DegenerateWell {
                coords: graph.coords(a),
                message: format!(
                    "fitted Hessian eigenvalues {:?} (stencil drift {:.2})",
                    fit.eigs, drift
                ),
            });
        }
        let coords = graph.from_local_coords(graph.coords(a), fit.argmin);
        if wells.iter().any(|w| {
            let d = graph.local_coords(w.coords, coords);
            d[0].hypot(d[1]) < 1.5 * h
        }) {
            continue;
        }
        let lambda: Vec<f64> = fit.eigs.iter().map(|&e| (0.5 * e).sqrt()).collect();
        let node = graph.nearest_node(coords);
        let offset = graph.local_coords(graph.coords(node), coords);
        // The fitted constant carries O(h^4) quartic pollution; prefer the
        // sampled value when the minimum sits on a node.
        let value = if offset[0].hypot(offset[1]) < 1e-6 * h {
            v.values[node]
        } else {
            fit.min_value
        };
        wells.push(WellInfo {
            node,
            coords,
            value,
            hessian: fit.hessian,
            hessian_eigs: fit.eigs,
            lambda,
            w_eigs: w.eigenvalues_at(graph, coords),
        });
    }
    if wells.is_empty() {
        return Err(Error::NoWells);
    }
    wells.sort_by(|a, b| {
        a.coords[0]
            .total_cmp(&b.coords[0])
            .then(a.coords[1].total_cmp(&b.coords[1]))
    });
    Ok(wells)
}

struct QuadFit {
    hessian: Vec<f64>,
    eigs: Vec<f64>,
    argmin: [f64; 2],
    min_value: f64,
}

/// Nodes within `radius` graph hops of `center`.
pub(crate) fn hop_ball(graph: &DomainGraph, center: usize, radius: usize) -> Vec<usize> {
    let mut dist = std::collections::HashMap::new();
    dist.insert(center, 0usize);
    let mut queue = VecDeque::from([center]);
    let mut out = vec![center];
    while let Some(i) = queue.pop_front() {
        let di = dist[&i];
        if di == radius {
            continue;
        }
        for &(j, _) in graph.neighbors(i) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(j) {
                e.insert(di + 1);
                out.push(j);
                queue.push_back(j);
            }
        }
    }
    out
}

/// Least-squares fit V ~ c + b.X + X^T H X / 2 + cubic in local normal coordinates.
fn quadratic_fit(graph: &DomainGraph, v: &[f64], center: usize, radius: usize) -> Result<QuadFit> {
    let dim = graph.dim();
    let pts = hop_ball(graph, center, radius);
    let c0 = graph.coords(center);
    // Cubic terms keep odd anharmonicity out of the fitted gradient.
    let ncols = if dim == 1 { 4 } else { 10 };
    let mut a = DMatrix::zeros(pts.len(), ncols);
    let mut rhs = DVector::zeros(pts.len());
    let scale = graph.mesh_width();
    for (row, &p) in pts.iter().enumerate() {
        let x = graph.local_coords(c0, graph.coords(p));
        let (u, w) = (x[0] / scale, x[1] / scale);
        if dim == 1 {
            a.row_mut(row).copy_from_slice(&[1.0, u, 0.5 * u * u, u * u * u]);
        } else {
            a.row_mut(row).copy_from_slice(&[
                1.0,
                u,
                w,
                0.5 * u * u,
                u * w,
                0.5 * w * w,
                u * u * u,
                u * u * w,
                u * w * w,
                w * w * w,
            ]);
        }
        rhs[row] = v[p];
    }
    let svd = a.svd(true, true);
    let coef = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::DegenerateWell {
            coords: c0,
            message: format!("quadratic fit failed: {e}"),
        })?;
    let s2 = scale * scale;
    let (hess, grad) = if dim == 1 {
        (DMatrix::from_element(1, 1, coef[2] / s2), DVector::from_element(1, coef[1] / scale))
    } else {
        (
            DMatrix::from_row_slice(2, 2, &[coef[3], coef[4], coef[4], coef[5]]) / s2,
            DVector::from_row_slice(&[coef[1], coef[2]]) / scale,
        )
    };
    let eig = SymmetricEigen::new(hess.clone());
    let mut eigs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    let mut argmin = [0.0; 2];
    let mut min_value = coef[0];
    if eigs[0] > 0.0 {
        if let Some(inv) = hess.clone().try_inverse() {
            let x = -(&inv * &grad);
            for (i, xi) in x.iter().enumerate() {
                argmin[i] = *xi;
            }
            min_value = coef[0] + 0.5 * grad.dot(&x);
        }
    }
    // Guard against fits pulled far outside the stencil.
    let lim = radius as f64 * scale;
    if argmin[0].hypot(argmin[1]) > lim {
        argmin = [0.0; 2];
        min_value = coef[0];
    }
    Ok(QuadFit {
        hessian: hess.iter().copied().collect::<Vec<_>>(),
        eigs,
        argmin,
        min_value,
    })
}

/// Helper for building fields directly from closures in tests and examples.
pub fn field_from_fn(graph: &DomainGraph, f: impl Fn([f64; 2]) -> f64) -> NodeField {
    NodeField::scalar(graph.all_coords().iter().map(|&p| f(p)).collect())
}

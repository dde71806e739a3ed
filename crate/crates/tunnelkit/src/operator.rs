//! Discrete Schrodinger operators `hbar^2 L + hbar W + V`.
//!
//! Matrices act on mass-symmetrized coordinates `y = M^{1/2} u`, where `M` is
//! the diagonal of node volumes, so the volume-weighted inner product of
//! sections becomes the Euclidean one and the operator is a symmetric matrix:
//!
//! ```text
//! A_ab = -hbar^2 c_ab / sqrt(vol_a vol_b)             (a != b, same component)
//! A_aa = hbar^2 sum_b c_ab / vol_a + V_a + hbar W_a
//! ```
//!
//! Outer-boundary nodes and nodes outside a Dirichlet region are not degrees
//! of freedom; their edges still contribute to the diagonal, which realizes
//! the zero boundary condition.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agmon::AgmonField;
use crate::ddouble::Dd;
use crate::error::{Error, Result};
use crate::mesh::{gradient_norm_sq, gradient_of, DomainGraph, NodeField};
use crate::potential::{hop_ball, EndoField, WellInfo};
use crate::sparse::CsrMatrix;

/// Exponent clamp for conjugation weights.
pub const EXP_CLAMP: f64 = 700.0;
/// Weighted diagnostics only use nodes with phi / hbar at most this.
pub const WEIGHT_GUARD: f64 = 650.0;

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    graph: Arc<DomainGraph>,
    v: Arc<Vec<f64>>,
    w: Arc<EndoField>,
    hbar: f64,
    rank: usize,
    dofs: Vec<usize>,
    node_dof: Vec<usize>,
    matrix: CsrMatrix,
    restricted: bool,
}

const NO_DOF: usize = usize::MAX;

/// Assembles `hbar^2 L + hbar W + V` on the interior nodes of `graph`.
pub fn assemble(
    graph: &Arc<DomainGraph>,
    v: &NodeField,
    w: &EndoField,
    hbar: f64,
) -> Result<DiscreteOperator> {
    v.require_scalar()?;
    let n = graph.node_count();
    if v.node_count() != n || w.node_count() != n {
        return Err(Error::DimensionMismatch(format!(
            "graph has {n} nodes, V has {}, W has {}",
            v.node_count(),
            w.node_count()
        )));
    }
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(Error::DimensionMismatch(format!("hbar must be positive, got {hbar}")));
    }
    w.validate()?;
    let vmax = v.values.iter().copied().fold(0.0, f64::max);
    if let Some((node, &value)) = v
        .values
        .iter()
        .enumerate()
        .find(|(_, &x)| x < -1e-12 * vmax.max(1.0))
    {
        return Err(Error::NegativePotential { node, value });
    }
    let dofs: Vec<usize> = (0..n).filter(|&i| !graph.is_boundary(i)).collect();
    Ok(DiscreteOperator::build(
        graph.clone(),
        Arc::new(v.values.clone()),
        Arc::new(w.clone()),
        hbar,
        dofs,
    ))
}

impl DiscreteOperator {
    fn build(
        graph: Arc<DomainGraph>,
        v: Arc<Vec<f64>>,
        w: Arc<EndoField>,
        hbar: f64,
        dofs: Vec<usize>,
    ) -> Self {
        let n = graph.node_count();
        let rank = w.rank;
        let mut node_dof = vec![NO_DOF; n];
        for (k, &node) in dofs.iter().enumerate() {
            node_dof[node] = k;
        }
        let h2 = hbar * hbar;
        let mut trip = Vec::with_capacity(dofs.len() * rank * (5 + rank));
        let mut diag_l = vec![0.0; dofs.len()];
        for e in graph.edges() {
            let (da, db) = (node_dof[e.a], node_dof[e.b]);
            if da != NO_DOF {
                diag_l[da] += e.conductance;
            }
            if db != NO_DOF {
                diag_l[db] += e.conductance;
            }
            if da != NO_DOF && db != NO_DOF {
                let off = -h2 * e.conductance / (graph.volume(e.a) * graph.volume(e.b)).sqrt();
                for c in 0..rank {
                    trip.push((da * rank + c, db * rank + c, off));
                    trip.push((db * rank + c, da * rank + c, off));
                }
            }
        }
        for (k, &node) in dofs.iter().enumerate() {
            let wm = w.at(node);
            for i in 0..rank {
                let d = h2 * diag_l[k] / graph.volume(node) + v[node] + hbar * wm[i * rank + i];
                trip.push((k * rank + i, k * rank + i, d));
                for j in i + 1..rank {
                    let x = hbar * wm[i * rank + j];
                    trip.push((k * rank + i, k * rank + j, x));
                    trip.push((k * rank + j, k * rank + i, x));
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(dofs.len() * rank, trip);
        DiscreteOperator {
            graph,
            v,
            w,
            hbar,
            rank,
            dofs,
            node_dof,
            matrix,
            restricted: false,
        }
    }

    pub fn graph(&self) -> &Arc<DomainGraph> {
        &self.graph
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    pub fn endomorphism(&self) -> &EndoField {
        &self.w
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Matrix dimension (degrees of freedom times rank).
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Graph nodes carrying degrees of freedom, in matrix order.
    pub fn dof_nodes(&self) -> &[usize] {
        &self.dofs
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        match self.node_dof[node] {
            NO_DOF => None,
            k => Some(k),
        }
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.mul(y)
    }

    /// Gershgorin estimate of the operator norm.
    pub fn norm_estimate(&self) -> f64 {
        self.matrix.gershgorin_norm()
    }

    /// Guaranteed lower bound: -hbar * max |W|.
    pub fn lower_bound(&self) -> f64 {
        -self.hbar * self.w.max_norm()
    }

    /// Converts matrix coordinates to a section (zero off the dofs).
    pub fn to_section(&self, y: &[f64]) -> NodeField {
        let mut f = NodeField::zeros(self.graph.node_count(), self.rank);
        for (k, &node) in self.dofs.iter().enumerate() {
            let s = self.graph.volume(node).sqrt();
            for c in 0..self.rank {
                f.values[node * self.rank + c] = y[k * self.rank + c] / s;
            }
        }
        f
    }

    /// Converts a section to matrix coordinates (values off the dofs dropped).
    pub fn from_section(&self, f: &NodeField) -> Result<Vec<f64>> {
        if f.rank != self.rank || f.node_count() != self.graph.node_count() {
            return Err(Error::RankMismatch {
                expected: self.rank,
                found: f.rank,
            });
        }
        let mut y = vec![0.0; self.dim()];
        for (k, &node) in self.dofs.iter().enumerate() {
            let s = self.graph.volume(node).sqrt();
            for c in 0..self.rank {
                y[k * self.rank + c] = f.values[node * self.rank + c] * s;
            }
        }
        Ok(y)
    }

    /// Quadratic form `<x, H z>` evaluated edge-wise with compensated sums.
    ///
    /// Avoids the cancellation between the large diagonal and off-diagonal
    /// matrix entries, so near-degenerate Rayleigh quotients stay resolved to
    /// a few ulps of the eigenvalue rather than of the matrix norm.
    pub fn energy_form(&self, x: &[f64], z: &[f64]) -> f64 {
        let r = self.rank;
        let g = &*self.graph;
        let u = |y: &[f64], node: usize, c: usize| -> f64 {
            match self.node_dof[node] {
                NO_DOF => 0.0,
                k => y[k * r + c] / g.volume(node).sqrt(),
            }
        };
        let mut kin = Neumaier::default();
        for e in g.edges() {
            if self.node_dof[e.a] == NO_DOF && self.node_dof[e.b] == NO_DOF {
                continue;
            }
            for c in 0..r {
                let dx = u(x, e.a, c) - u(x, e.b, c);
                let dz = u(z, e.a, c) - u(z, e.b, c);
                kin.add(e.conductance * dx * dz);
            }
        }
        let mut pot = Neumaier::default();
        for (k, &node) in self.dofs.iter().enumerate() {
            let wm = self.w.at(node);
            for i in 0..r {
                let xi = x[k * r + i];
                pot.add(self.v[node] * xi * z[k * r + i]);
                for j in 0..r {
                    let wij = wm[i.min(j) * r + i.max(j)];
                    if wij != 0.0 {
                        pot.add(self.hbar * wij * xi * z[k * r + j]);
                    }
                }
            }
        }
        self.hbar * self.hbar * kin.sum() + pot.sum()
    }

    /// `<x, (H - shift) z>` accumulated in double-double arithmetic.
    ///
    /// For vectors spanning a tight cluster around `shift` the result is a
    /// small number carrying full relative precision, which is what resolves
    /// splittings far below the ulp of the eigenvalues themselves.
    pub fn shifted_form(&self, x: &[f64], z: &[f64], shift: f64) -> f64 {
        let r = self.rank;
        let g = &*self.graph;
        let scale: Vec<f64> = g.volumes().iter().map(|v| 1.0 / v.sqrt()).collect();
        let u = |y: &[f64], node: usize, c: usize| -> Dd {
            match self.node_dof[node] {
                NO_DOF => Dd::ZERO,
                k => Dd::prod(y[k * r + c], scale[node]),
            }
        };
        let mut kin = Dd::ZERO;
        for e in g.edges() {
            if self.node_dof[e.a] == NO_DOF && self.node_dof[e.b] == NO_DOF {
                continue;
            }
            for c in 0..r {
                let dx = u(x, e.a, c) - u(x, e.b, c);
                let dz = u(z, e.a, c) - u(z, e.b, c);
                kin = kin + dx * dz * e.conductance;
            }
        }
        let mut pot = Dd::ZERO;
        for (k, &node) in self.dofs.iter().enumerate() {
            let wm = self.w.at(node);
            let vs = Dd::sum(self.v[node], -shift);
            for i in 0..r {
                let xi = x[k * r + i];
                pot = pot + vs * Dd::prod(xi, z[k * r + i]);
                for j in 0..r {
                    let wij = wm[i.min(j) * r + i.max(j)];
                    if wij != 0.0 {
                        pot = pot + Dd::prod(self.hbar, wij) * Dd::prod(xi, z[k * r + j]);
                    }
                }
            }
        }
        (Dd::prod(self.hbar, self.hbar) * kin + pot).to_f64()
    }

    /// Matrix Market export of the assembled matrix.
    pub fn to_coo_text(&self) -> String {
        self.matrix.to_coo_text()
    }
}

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Dot product accumulated in double-double arithmetic.
pub fn dd_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(Dd::ZERO, |s, (x, y)| s + Dd::prod(*x, *y))
        .to_f64()
}

pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    for (x, y) in a.iter().zip(b) {
        s.add(x * y);
    }
    s.sum()
}

/// Number of graph hops within which a well counts as touching the outer boundary.
pub const BOUNDARY_CLEARANCE: usize = 5;

/// Principal submatrix on the interior nodes of `region` (a per-node mask).
pub fn dirichlet_restrict(
    op: &DiscreteOperator,
    region: &[bool],
    wells: &[WellInfo],
) -> Result<DiscreteOperator> {
    let g = &op.graph;
    if region.len() != g.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "region mask has {} entries for {} nodes",
            region.len(),
            g.node_count()
        )));
    }
    let inside: Vec<&WellInfo> = wells.iter().filter(|w| region[w.node]).collect();
    if inside.len() != 1 {
        return Err(Error::InvalidRegion(format!(
            "region must contain exactly one well, found {}",
            inside.len()
        )));
    }
    let well = inside[0];
    if hop_ball(g, well.node, BOUNDARY_CLEARANCE)
        .iter()
        .any(|&i| !region[i] || g.is_boundary(i))
    {
        return Err(Error::InvalidRegion(format!(
            "well at {:?} lies within {BOUNDARY_CLEARANCE} cells of the region or outer boundary",
            well.coords
        )));
    }
    let keep_dofs: Vec<usize> = op
        .dofs
        .iter()
        .enumerate()
        .filter(|(_, &node)| region[node])
        .map(|(k, _)| k)
        .collect();
    if keep_dofs.is_empty() {
        return Err(Error::InvalidRegion("region has no interior nodes".into()));
    }
    let r = op.rank;
    let rows: Vec<usize> = keep_dofs
        .iter()
        .flat_map(|&k| (0..r).map(move |c| k * r + c))
        .collect();
    let dofs: Vec<usize> = keep_dofs.iter().map(|&k| op.dofs[k]).collect();
    let mut node_dof = vec![NO_DOF; g.node_count()];
    for (k, &node) in dofs.iter().enumerate() {
        node_dof[node] = k;
    }
    Ok(DiscreteOperator {
        graph: op.graph.clone(),
        v: op.v.clone(),
        w: op.w.clone(),
        hbar: op.hbar,
        rank: r,
        dofs,
        node_dof,
        matrix: op.matrix.principal_submatrix(&rows),
        restricted: true,
    })
}

/// Similarity transform `e^{phi/hbar} A e^{-phi/hbar}` (nonsymmetric).
#[derive(Clone, Debug)]
pub struct ConjugatedOperator {
    pub matrix: CsrMatrix,
    /// Nodes whose exponent hit the clamp.
    pub saturated: usize,
}

pub fn conjugate(op: &DiscreteOperator, phi: &NodeField) -> Result<ConjugatedOperator> {
    phi.require_scalar()?;
    if phi.node_count() != op.graph.node_count() {
        return Err(Error::DimensionMismatch("phi and graph sizes differ".into()));
    }
    let r = op.rank;
    let mut saturated = 0;
    let expo: Vec<f64> = op
        .dofs
        .iter()
        .map(|&node| {
            let p = phi.values[node];
            if !p.is_finite() {
                return f64::NAN;
            }
            let e = p / op.hbar;
            if e.abs() > EXP_CLAMP {
                saturated += 1;
            }
            e.clamp(-EXP_CLAMP, EXP_CLAMP)
        })
        .collect();
    let mut trip = Vec::with_capacity(op.matrix.nnz());
    for i in 0..op.dim() {
        for (j, v) in op.matrix.row(i) {
            // factors combined in the exponent: e^{a} e^{-b} = e^{a - b}
            let x = v * (expo[i / r] - expo[j / r]).exp();
            if !x.is_finite() {
                return Err(Error::Overflow(format!(
                    "entry ({i}, {j}) overflows after clamping"
                )));
            }
            trip.push((i, j, x));
        }
    }
    Ok(ConjugatedOperator {
        matrix: CsrMatrix::from_triplets(op.dim(), trip),
        saturated,
    })
}

/// |lhs - rhs| of the weighted energy identity
///
/// ```text
/// <v, e^{phi/h}(H - E)e^{-phi/h} v> = h^2 |dv|^2 + <v, (hW + V - |dphi|^2 - E) v>
/// ```
///
/// with the left side from the conjugated matrix and the right side from the
/// edge Dirichlet form and node-wise potential terms.
pub fn weighted_identity_residual(
    op: &DiscreteOperator,
    phi: &NodeField,
    energy: f64,
    v: &NodeField,
) -> Result<f64> {
    let conj = conjugate(op, phi)?;
    if conj.saturated > 0 {
        return Err(Error::Overflow(format!(
            "{} nodes saturated the exponent clamp",
            conj.saturated
        )));
    }
    let y = op.from_section(v)?;
    let by = conj.matrix.mul(&y);
    let lhs = compensated_dot(&y, &by) - energy * compensated_dot(&y, &y);

    let g = &*op.graph;
    let r = op.rank;
    let mut dirichlet = Neumaier::default();
    for e in g.edges() {
        if op.node_dof[e.a] == NO_DOF && op.node_dof[e.b] == NO_DOF {
            continue;
        }
        for c in 0..r {
            let val = |n: usize| {
                if op.node_dof[n] == NO_DOF {
                    0.0
                } else {
                    v.values[n * r + c]
                }
            };
            let d = val(e.a) - val(e.b);
            dirichlet.add(e.conductance * d * d);
        }
    }
    let dphi = gradient_norm_sq(g, &gradient_of(g, &phi.values));
    let mut pot = Neumaier::default();
    for &node in &op.dofs {
        let wm = op.w.at(node);
        let vol = g.volume(node);
        let s = op.v[node] - dphi[node] - energy;
        for i in 0..r {
            let vi = v.values[node * r + i];
            pot.add(vol * s * vi * vi);
            for j in 0..r {
                pot.add(vol * op.hbar * wm[i.min(j) * r + i.max(j)] * vi * v.values[node * r + j]);
            }
        }
    }
    let rhs = op.hbar * op.hbar * dirichlet.sum() + pot.sum();
    Ok((lhs - rhs).abs())
}

/// Smooth cutoff chi around one well.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffField {
    pub chi: Vec<f64>,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

/// C^2 bump profile: 1 at t <= 0, 0 at t >= 1.
pub fn profile(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// chi = profile((d - inner) / (outer - inner)); `s_min` is the distance to
/// the nearest other well (infinite for a single well).
pub fn make_cutoff(field: &AgmonField, inner: f64, outer: f64, s_min: f64) -> Result<CutoffField> {
    if !(0.0 < inner && inner < outer && outer < s_min) {
        return Err(Error::CutoffRadii(format!(
            "need 0 < inner ({inner}) < outer ({outer}) < S ({s_min})"
        )));
    }
    Ok(CutoffField {
        chi: field
            .d
            .iter()
            .map(|&d| profile((d - inner) / (outer - inner)))
            .collect(),
        inner_radius: inner,
        outer_radius: outer,
    })
}

/// Quadratic partition of unity from well cutoffs plus their complement:
/// `chi_k = eta_k / sqrt(sum eta^2)` with `eta_0 = prod (1 - eta_k)`.
pub fn quadratic_partition(cutoffs: &[CutoffField]) -> Vec<CutoffField> {
    let n = cutoffs.first().map_or(0, |c| c.chi.len());
    let comp: Vec<f64> = (0..n)
        .map(|i| cutoffs.iter().map(|c| 1.0 - c.chi[i]).product())
        .collect();
    let mut etas: Vec<&[f64]> = cutoffs.iter().map(|c| c.chi.as_slice()).collect();
    etas.push(&comp);
    let norm: Vec<f64> = (0..n)
        .map(|i| etas.iter().map(|e| e[i] * e[i]).sum::<f64>().sqrt())
        .collect();
    let mut out: Vec<CutoffField> = etas
        .iter()
        .enumerate()
        .map(|(k, e)| CutoffField {
            chi: (0..n).map(|i| e[i] / norm[i]).collect(),
            inner_radius: cutoffs.get(k).map_or(0.0, |c| c.inner_radius),
            outer_radius: cutoffs.get(k).map_or(0.0, |c| c.outer_radius),
        })
        .collect();
    out.shrink_to_fit();
    out
}

/// Residual of the IMS localization formula
/// `H = sum chi H chi - hbar^2 sum |dchi|^2`.
///
/// The residual operator `R = H - sum chi H chi + hbar^2 sum |dchi|^2` has
/// off-diagonal entries `A_ab * sum_k (chi_k(a) - chi_k(b))^2 / 2`, which are
/// O(1) relative to the stencil; its consistency error shows only after
/// lumping each row onto the diagonal. Returns the max-norm of `R 1` in
/// physical coordinates.
pub fn ims_residual(op: &DiscreteOperator, cutoffs: &[CutoffField]) -> Result<f64> {
    let g = &*op.graph;
    let n = g.node_count();
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        let s: f64 = cutoffs.iter().map(|c| c.chi[i] * c.chi[i]).sum();
        deviation = deviation.max((s - 1.0).abs());
    }
    if deviation > 1e-10 {
        return Err(Error::PartitionOfUnity { deviation });
    }
    let dchi: Vec<Vec<f64>> = cutoffs
        .iter()
        .map(|c| gradient_norm_sq(g, &gradient_of(g, &c.chi)))
        .collect();
    let h2 = op.hbar * op.hbar;
    let mut worst: f64 = 0.0;
    for &a in &op.dofs {
        let mut row = 0.0;
        for &(b, e) in g.neighbors(a) {
            if op.node_dof[b] == NO_DOF {
                continue;
            }
            let jump: f64 = cutoffs
                .iter()
                .map(|c| (c.chi[a] - c.chi[b]).powi(2))
                .sum();
            row -= h2 * g.edges()[e].conductance / g.volume(a) * 0.5 * jump;
        }
        row += h2 * dchi.iter().map(|d| d[a]).sum::<f64>();
        worst = worst.max(row.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_domain, Boundary, DomainSpec};
    use crate::potential::field_from_fn;

    fn graph(spec: DomainSpec) -> Arc<DomainGraph> {
        Arc::new(build_domain(&spec).unwrap())
    }

    #[test]
    fn symmetric_bit_for_bit() {
        let g = graph(DomainSpec::sphere(1.0, 12, 24));
        let v = field_from_fn(&g, |p| p[0].sin().powi(2));
        let w = EndoField::constant(g.node_count(), &[-0.3, 0.1, 0.1, 0.3], 2).unwrap();
        let op = assemble(&g, &v, &w, 0.3).unwrap();
        assert!(op.matrix().is_symmetric_exact());
    }

    #[test]
    fn energy_form_matches_matrix() {
        let g = graph(DomainSpec::rectangle([-1.0, 1.0], [-1.0, 1.0], 9, 11));
        let v = field_from_fn(&g, |p| p[0] * p[0] + 2.0 * p[1] * p[1]);
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), 0.7).unwrap();
        let x: Vec<f64> = (0..op.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = (0..op.dim()).map(|i| (i as f64 * 0.11).cos()).collect();
        let a = compensated_dot(&x, &op.apply(&z));
        let b = op.energy_form(&x, &z);
        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn profile_values() {
        assert_eq!(profile(-1.0), 1.0);
        assert_eq!(profile(2.0), 0.0);
        assert!((profile(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conjugate_with_zero_phi_is_identity() {
        let g = graph(DomainSpec::interval(-1.0, 1.0, 21, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| p[0] * p[0]);
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), 0.2).unwrap();
        let c = conjugate(&op, &NodeField::zeros(g.node_count(), 1)).unwrap();
        assert_eq!(&c.matrix, op.matrix());
        assert_eq!(c.saturated, 0);
    }

    #[test]
    fn single_cutoff_ims_is_zero() {
        let g = graph(DomainSpec::interval(-1.0, 1.0, 41, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| p[0] * p[0]);
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), 0.2).unwrap();
        let one = CutoffField {
            chi: vec![1.0; g.node_count()],
            inner_radius: 0.0,
            outer_radius: 0.0,
        };
        assert_eq!(ims_residual(&op, &[one]).unwrap(), 0.0);
        let half = CutoffField {
            chi: vec![0.5; g.node_count()],
            inner_radius: 0.0,
            outer_radius: 0.0,
        };
        assert!(matches!(
            ims_residual(&op, &[half]),
            Err(Error::PartitionOfUnity { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = graph(DomainSpec::interval(-1.0, 1.0, 21, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| p[0] * p[0] - 0.5);
        let w = EndoField::zero(g.node_count(), 1);
        assert!(matches!(
            assemble(&g, &v, &w, 0.1),
            Err(Error::NegativePotential { .. })
        ));
        let v = field_from_fn(&g, |p| p[0] * p[0]);
        let w = EndoField {
            rank: 2,
            values: [0.0, 1.0, 0.0, 0.0].repeat(g.node_count()),
        };
        assert!(matches!(assemble(&g, &v, &w, 0.1), Err(Error::NotSymmetric { .. })));
    }
}

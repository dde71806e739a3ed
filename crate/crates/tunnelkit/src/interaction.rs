//! Interaction matrices between Dirichlet modes of different wells.
//!
//! Each well `j` gets a Dirichlet region `M_j`, a cutoff `chi_j` and a few
//! low Dirichlet eigenpairs `(mu_a, v_a)`. The interaction entries are
//!
//! ```text
//! w_ab = hbar^2 ( <chi_j grad v_a, dchi_k v_b> - <chi_j dchi_k v_a, grad v_b> )
//! ```
//!
//! or, when the pair is separated by a surface inside the "ellipse"
//! `d^j + d^k <= S_0 + a`, the flux of `v_b grad v_a - v_a grad v_b` across
//! that surface. The discrete flux is taken over the dual faces of the graph
//! edges cut by the surface, which makes it exactly surface independent when
//! `mu_a = mu_b`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agmon::{fast_march, pair_geometry_with, AgmonField, PairOptions, WellPairGeometry};
use crate::eig::{low_spectrum_with, spectral_clusters, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::mesh::{gradient_of, DomainGraph, NodeField};
use crate::operator::{assemble, dirichlet_restrict, make_cutoff, CutoffField, Neumaier};
use crate::potential::{EndoField, WellInfo};

/// Dirichlet regions `M_j = {d^j < min_k d^k + REGION_MARGIN * S_0}`.
pub const REGION_MARGIN: f64 = 0.8;
pub const INNER_CUTOFF: f64 = 0.55;
pub const OUTER_CUTOFF: f64 = 0.8;
/// Margin `a` of the ellipse as a fraction of `S_0`.
pub const ELLIPSE_MARGIN: f64 = 0.1;
/// Minimum surface quadrature size in 2D.
pub const MIN_SURFACE_POINTS: usize = 8;

#[derive(Clone, Debug)]
pub struct SystemOptions {
    pub margin_fraction: f64,
    /// Surface offset as a fraction of S_jk (applied to every pair).
    pub translation_fraction: f64,
    /// Per-pair override of the geodesic-manifold dimension.
    pub ell_overrides: Vec<((usize, usize), usize)>,
    pub inner: f64,
    pub outer: f64,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            margin_fraction: ELLIPSE_MARGIN,
            translation_fraction: 0.0,
            ell_overrides: Vec::new(),
            inner: INNER_CUTOFF,
            outer: OUTER_CUTOFF,
        }
    }
}

/// hbar-independent data of a multi-well problem.
#[derive(Clone, Debug)]
pub struct WellSystem {
    pub graph: Arc<DomainGraph>,
    pub v: NodeField,
    pub w: EndoField,
    pub wells: Vec<WellInfo>,
    pub fields: Vec<AgmonField>,
    /// Symmetrized Agmon distances between wells.
    pub distances: Vec<Vec<f64>>,
    /// Smallest inter-well distance.
    pub s0: f64,
    pub regions: Vec<Vec<bool>>,
    pub cutoffs: Vec<CutoffField>,
    /// Geometry of every pair with `S_jk < S_0 + a`, ordered `j < k`.
    pub pairs: Vec<WellPairGeometry>,
    pub options: SystemOptions,
}

pub fn well_system(
    graph: &Arc<DomainGraph>,
    v: &NodeField,
    w: &EndoField,
    wells: &[WellInfo],
    opts: &SystemOptions,
) -> Result<WellSystem> {
    if wells.is_empty() {
        return Err(Error::NoWells);
    }
    let fields: Vec<AgmonField> = wells
        .par_iter()
        .enumerate()
        .map(|(j, well)| fast_march(graph, v, well, j))
        .collect::<Result<_>>()?;
    let m = wells.len();
    let mut distances = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in 0..m {
            if j != k {
                let fwd = fields[j].distance_at(graph, wells[k].coords);
                let bwd = fields[k].distance_at(graph, wells[j].coords);
                distances[j][k] = 0.5 * (fwd + bwd);
            }
        }
    }
    let s0 = if m > 1 {
        (0..m)
            .flat_map(|j| (0..m).filter(move |&k| k != j).map(move |k| (j, k)))
            .map(|(j, k)| distances[j][k])
            .fold(f64::INFINITY, f64::min)
    } else {
        f64::INFINITY
    };
    let n = graph.node_count();
    let regions: Vec<Vec<bool>> = (0..m)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let other = (0..m)
                        .filter(|&k| k != j)
                        .map(|k| fields[k].d[i])
                        .fold(f64::INFINITY, f64::min);
                    fields[j].d[i] < other + REGION_MARGIN * s0
                })
                .collect()
        })
        .collect();
    let cutoffs: Vec<CutoffField> = (0..m)
        .map(|j| {
            let s_min = (0..m)
                .filter(|&k| k != j)
                .map(|k| distances[j][k])
                .fold(f64::INFINITY, f64::min);
            let scale = if s_min.is_finite() {
                s_min
            } else {
                fields[j].d.iter().copied().fold(0.0, f64::max)
            };
            make_cutoff(&fields[j], opts.inner * scale, opts.outer * scale, s_min)
        })
        .collect::<Result<_>>()?;
    let margin = opts.margin_fraction * s0;
    let candidates: Vec<(usize, usize)> = (0..m)
        .flat_map(|j| (j + 1..m).map(move |k| (j, k)))
        .filter(|&(j, k)| distances[j][k] < s0 + margin)
        .collect();
    let pairs: Vec<WellPairGeometry> = candidates
        .par_iter()
        .map(|&(j, k)| {
            let ell_override = opts
                .ell_overrides
                .iter()
                .find(|(p, _)| *p == (j, k) || *p == (k, j))
                .map(|&(_, l)| l);
            pair_geometry_with(
                graph,
                &fields[j],
                &fields[k],
                &PairOptions {
                    s0: Some(s0),
                    margin: Some(margin),
                    translation: opts.translation_fraction * distances[j][k],
                    ell_override,
                },
            )
            .map_err(|e| e.context(format!("pair ({j}, {k})")))
        })
        .collect::<Result<_>>()?;
    Ok(WellSystem {
        graph: graph.clone(),
        v: v.clone(),
        w: w.clone(),
        wells: wells.to_vec(),
        fields,
        distances,
        s0,
        regions,
        cutoffs,
        pairs,
        options: opts.clone(),
    })
}

impl WellSystem {
    pub fn pair(&self, j: usize, k: usize) -> Option<&WellPairGeometry> {
        self.pairs
            .iter()
            .find(|p| (p.j, p.k) == (j, k) || (p.j, p.k) == (k, j))
    }

    /// Pair geometry with the surface shifted by `fraction * S_jk` toward well k.
    pub fn translated_pair(&self, j: usize, k: usize, fraction: f64) -> Result<WellPairGeometry> {
        let base = self.pair(j, k).ok_or(Error::MissingPair(j, k))?;
        pair_geometry_with(
            &self.graph,
            &self.fields[base.j],
            &self.fields[base.k],
            &PairOptions {
                s0: Some(base.s0),
                margin: Some(base.margin),
                translation: fraction * self.distances[j][k],
                ell_override: Some(base.ell),
            },
        )
    }
}

/// How many spectral clusters of each Dirichlet operator enter the window.
#[derive(Clone, Debug)]
pub struct WindowPolicy {
    pub clusters: usize,
    /// Eigenvalues computed per well to certify the gaps.
    pub probe: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            clusters: 1,
            probe: 4,
        }
    }
}

/// Dirichlet modes of one well inside the spectral window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WellModes {
    pub well: usize,
    pub pairs: Vec<EigenPair>,
    /// Eigenvalues computed to certify the window (includes the ones above it).
    pub probe_values: Vec<f64>,
}

pub fn dirichlet_modes(
    sys: &WellSystem,
    hbar: f64,
    policy: &WindowPolicy,
    opts: &SolverOptions,
) -> Result<Vec<WellModes>> {
    let op = assemble(&sys.graph, &sys.v, &sys.w, hbar)?;
    (0..sys.wells.len())
        .into_par_iter()
        .map(|j| {
            let dop = dirichlet_restrict(&op, &sys.regions[j], &sys.wells)?;
            let probe = policy.probe.max(policy.clusters + 1);
            let (mut pairs, _) = low_spectrum_with(&dop, probe, None, opts)?;
            let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
            let clusters = spectral_clusters(&values, hbar);
            if clusters.len() < policy.clusters {
                return Err(Error::Window(format!(
                    "well {j}: only {} of {} clusters separated by a gap in {values:?}",
                    clusters.len(),
                    policy.clusters
                )));
            }
            let end = clusters[policy.clusters - 1].end;
            pairs.truncate(end);
            for p in &mut pairs {
                fix_gauge(&mut p.vector, &sys.fields[j].seeded);
            }
            Ok(WellModes {
                well: j,
                pairs,
                probe_values: values,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(format!("Dirichlet modes at hbar = {hbar}")))
}

/// Makes the largest-magnitude component inside `center` positive.
pub fn fix_gauge(v: &mut NodeField, center: &[bool]) {
    let r = v.rank;
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for (node, &inside) in center.iter().enumerate() {
        if !inside {
            continue;
        }
        for c in 0..r {
            let x = v.values[node * r + c];
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
    }
    if sign < 0.0 {
        v.values.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Commutator form of `w_ab`; `chi_a` belongs to the well of `v_a`, `chi_b` to that of `v_b`.
pub fn w_commutator(
    graph: &DomainGraph,
    hbar: f64,
    v_alpha: &NodeField,
    v_beta: &NodeField,
    chi_alpha: &CutoffField,
    chi_beta: &CutoffField,
) -> Result<f64> {
    let n = graph.node_count();
    if v_alpha.rank != v_beta.rank {
        return Err(Error::RankMismatch {
            expected: v_alpha.rank,
            found: v_beta.rank,
        });
    }
    if v_alpha.node_count() != n || v_beta.node_count() != n || chi_beta.chi.len() != n {
        return Err(Error::DimensionMismatch("fields and graph sizes differ".into()));
    }
    if !(chi_beta.inner_radius < chi_beta.outer_radius) {
        return Err(Error::CutoffRadii("cutoff shell is empty".into()));
    }
    let r = v_alpha.rank;
    let dchi = gradient_of(graph, &chi_beta.chi);
    let mut sum = Neumaier::default();
    for c in 0..r {
        let a = v_alpha.component(c).values;
        let b = v_beta.component(c).values;
        let ga = gradient_of(graph, &a);
        let gb = gradient_of(graph, &b);
        for i in 0..n {
            if dchi[i] == [0.0, 0.0] || chi_alpha.chi[i] == 0.0 {
                continue;
            }
            let term = pairing(graph, i, ga[i], dchi[i]) * b[i] - a[i] * pairing(graph, i, dchi[i], gb[i]);
            sum.add(graph.volume(i) * chi_alpha.chi[i] * term);
        }
    }
    Ok(hbar * hbar * sum.sum())
}

/// g^{-1}(p, q) at a node.
fn pairing(graph: &DomainGraph, node: usize, p: [f64; 2], q: [f64; 2]) -> f64 {
    let plus = graph.covector_norm_sq(node, [p[0] + q[0], p[1] + q[1]]);
    let minus = graph.covector_norm_sq(node, [p[0] - q[0], p[1] - q[1]]);
    0.25 * (plus - minus)
}

/// Surface form of `w_ab`, where `well_alpha` is the well of `v_alpha`.
///
/// `hbar^2 sum c_ab (v_a(q) v_b(p) - v_a(p) v_b(q))` over edges `(p, q)` cut
/// by the surface, `p` on the side of `well_alpha`.
pub fn w_surface(
    pair: &WellPairGeometry,
    well_alpha: usize,
    v_alpha: &NodeField,
    v_beta: &NodeField,
    graph: &DomainGraph,
    hbar: f64,
) -> Result<f64> {
    if v_alpha.rank != v_beta.rank {
        return Err(Error::RankMismatch {
            expected: v_alpha.rank,
            found: v_beta.rank,
        });
    }
    if graph.dim() == 2 && pair.sigma.len() < MIN_SURFACE_POINTS {
        return Err(Error::Underresolved {
            nodes: pair.sigma.len(),
        });
    }
    let flip = if well_alpha == pair.j {
        false
    } else if well_alpha == pair.k {
        true
    } else {
        return Err(Error::MissingPair(well_alpha, pair.j));
    };
    let r = v_alpha.rank;
    let mut sum = Neumaier::default();
    for &(e, jn, kn) in &pair.crossing_edges {
        let (p, q) = if flip { (kn, jn) } else { (jn, kn) };
        let c = graph.edges()[e].conductance;
        for comp in 0..r {
            let a = |i: usize| v_alpha.values[i * r + comp];
            let b = |i: usize| v_beta.values[i * r + comp];
            sum.add(c * a(q) * b(p));
            sum.add(-c * a(p) * b(q));
        }
    }
    Ok(hbar * hbar * sum.sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeIndex {
    pub well: usize,
    pub local: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WForm {
    Surface,
    Commutator,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub hbar: f64,
    pub index: Vec<ModeIndex>,
    pub mu: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    /// Commutator form of every entry, kept for cross-form diagnostics.
    pub w_commutator: Vec<Vec<f64>>,
    pub forms: Vec<Vec<WForm>>,
    pub m_tilde: Vec<Vec<f64>>,
    pub gram: Vec<Vec<f64>>,
    /// max |gram - I|.
    pub gram_deviation: f64,
    /// hbar^{-2} e^{-S_0 / hbar}, the envelope the Gram deviation is compared with.
    pub gram_envelope: f64,
}

/// Assembles w, the symmetrized matrix and the Gram matrix of `chi v`.
pub fn build_interaction(
    sys: &WellSystem,
    modes: &[WellModes],
    hbar: f64,
) -> Result<InteractionMatrix> {
    let mut index = Vec::new();
    let mut mu = Vec::new();
    let mut vecs: Vec<&NodeField> = Vec::new();
    for wm in modes {
        for (l, p) in wm.pairs.iter().enumerate() {
            index.push(ModeIndex {
                well: wm.well,
                local: l,
            });
            mu.push(p.value);
            vecs.push(&p.vector);
        }
    }
    let m = index.len();
    if m == 0 {
        return Err(Error::Window("no Dirichlet modes in the window".into()));
    }
    let g = &*sys.graph;
    let entries: Vec<(f64, f64, WForm)> = (0..m * m)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / m, ab % m);
            let (ja, jb) = (index[a].well, index[b].well);
            let comm = w_commutator(
                g,
                hbar,
                vecs[a],
                vecs[b],
                &sys.cutoffs[ja],
                &sys.cutoffs[jb],
            )?;
            let regime = ja != jb && (mu[a] - mu[b]).abs() <= 1e-3 * hbar;
            match sys.pair(ja, jb) {
                Some(pair) if regime => {
                    let surf = w_surface(pair, ja, vecs[a], vecs[b], g, hbar)?;
                    Ok((surf, comm, WForm::Surface))
                }
                _ => Ok((comm, comm, WForm::Commutator)),
            }
        })
        .collect::<Result<_>>()?;
    let mut w = vec![vec![0.0; m]; m];
    let mut wc = vec![vec![0.0; m]; m];
    let mut forms = vec![vec![WForm::Commutator; m]; m];
    for (ab, (x, c, f)) in entries.into_iter().enumerate() {
        w[ab / m][ab % m] = x;
        wc[ab / m][ab % m] = c;
        forms[ab / m][ab % m] = f;
    }
    let mut m_tilde = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let s = 0.5 * (w[a][b] + w[b][a]);
            let d = if a == b { mu[a] } else { 0.0 };
            m_tilde[a][b] = d + s;
            m_tilde[b][a] = d + s;
        }
    }
    let psi: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            let chi = &sys.cutoffs[index[a].well].chi;
            let r = vecs[a].rank;
            vecs[a]
                .values
                .iter()
                .enumerate()
                .map(|(i, x)| x * chi[i / r])
                .collect()
        })
        .collect();
    let mut gram = vec![vec![0.0; m]; m];
    let mut gram_deviation: f64 = 0.0;
    for a in 0..m {
        for b in a..m {
            let r = vecs[a].rank;
            let mut s = Neumaier::default();
            for (i, (x, y)) in psi[a].iter().zip(&psi[b]).enumerate() {
                s.add(g.volume(i / r) * x * y);
            }
            let v = s.sum();
            gram[a][b] = v;
            gram[b][a] = v;
            let target = if a == b { 1.0 } else { 0.0 };
            gram_deviation = gram_deviation.max((v - target).abs());
        }
    }
    Ok(InteractionMatrix {
        hbar,
        index,
        mu,
        w,
        w_commutator: wc,
        forms,
        m_tilde,
        gram,
        gram_deviation,
        gram_envelope: (-sys.s0 / hbar).exp() / (hbar * hbar),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictedSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Two-mode closed form `(lambda_-, lambda_+)`.
    pub closed_form: Option<(f64, f64)>,
    pub splitting: Option<f64>,
}

pub fn predicted_spectrum(im: &InteractionMatrix) -> PredictedSpectrum {
    let m = im.mu.len();
    let mat = DMatrix::from_fn(m, m, |a, b| im.m_tilde[a][b]);
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let (closed_form, splitting) = if m == 2 {
        let (lo, hi, split) = two_level(im.mu[0], im.mu[1], im.m_tilde[0][1]);
        (Some((lo, hi)), Some(split))
    } else {
        (None, None)
    };
    PredictedSpectrum {
        eigenvalues,
        closed_form,
        splitting,
    }
}

/// Eigenvalues and splitting of `[[ma, w], [w, mb]]`.
pub fn two_level(ma: f64, mb: f64, w: f64) -> (f64, f64, f64) {
    let half = 0.5 * (ma - mb);
    let root = half.hypot(w);
    let mean = 0.5 * (ma + mb);
    (mean - root, mean + root, 2.0 * root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_domain, Boundary, DomainSpec};
    use crate::potential::{field_from_fn, find_wells};

    fn double_well(n: usize) -> WellSystem {
        let g = Arc::new(
            build_domain(&DomainSpec::interval(-2.0, 2.0, n, Boundary::DirichletOuter)).unwrap(),
        );
        let v = field_from_fn(&g, |p| (1.0 - p[0] * p[0]).powi(2));
        let wells = find_wells(&v, &g).unwrap();
        let w = EndoField::zero(g.node_count(), 1);
        well_system(&g, &v, &w, &wells, &SystemOptions::default()).unwrap()
    }

    #[test]
    fn two_level_closed_form() {
        let (lo, hi, s) = two_level(1.0, 1.0, 0.25);
        assert_eq!((lo, hi, s), (0.75, 1.25, 0.5));
        let (lo, hi, _) = two_level(1.0, 1.0001, 1e-6);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 1e-6, 1.0001]);
        let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - lo).abs() < 1e-12 && (e[1] - hi).abs() < 1e-12);
    }

    #[test]
    fn commutator_vanishes_on_diagonal() {
        let sys = double_well(801);
        let modes = dirichlet_modes(&sys, 0.1, &WindowPolicy::default(), &SolverOptions::default()).unwrap();
        let v = &modes[0].pairs[0].vector;
        let c = &sys.cutoffs[0];
        let x = w_commutator(&sys.graph, 0.1, v, v, c, c).unwrap();
        assert!(x.abs() < 1e-12, "{x}");
    }

    #[test]
    fn surface_swap_is_antisymmetric_conjugate() {
        let sys = double_well(801);
        let modes = dirichlet_modes(&sys, 0.1, &WindowPolicy::default(), &SolverOptions::default()).unwrap();
        let pair = sys.pair(0, 1).unwrap();
        let (va, vb) = (&modes[0].pairs[0].vector, &modes[1].pairs[0].vector);
        let ab = w_surface(pair, 0, va, vb, &sys.graph, 0.1).unwrap();
        let ba = w_surface(pair, 1, vb, va, &sys.graph, 0.1).unwrap();
        assert!((ab - ba).abs() <= 1e-10 * ab.abs());
    }

    #[test]
    fn symmetric_double_well_ground_pair() {
        let sys = double_well(801);
        let hbar = 0.1;
        let modes = dirichlet_modes(&sys, hbar, &WindowPolicy::default(), &SolverOptions::default()).unwrap();
        let im = build_interaction(&sys, &modes, hbar).unwrap();
        assert_eq!(im.mu.len(), 2);
        assert_eq!(im.m_tilde[0][1], im.m_tilde[1][0]);
        assert_eq!(im.forms[0][1], WForm::Surface);
        let rel = (im.w[0][1] - im.w_commutator[0][1]).abs() / im.w[0][1].abs();
        assert!(rel < 0.02, "cross-form {rel}");
        assert!(im.gram_deviation < 1e-3);
        let pred = predicted_spectrum(&im);
        assert!(pred.splitting.unwrap() > 0.0);
    }
}

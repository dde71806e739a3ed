//! Leading-order WKB amplitudes, the stationary-phase prefactor `I_0` and
//! log-linear fits of splitting sweeps.
//!
//! The ground-state quasimode of well `j` is `hbar^{-n/4} e^{-d/hbar} a`. Its
//! amplitude solves the transport equation `(2 grad d . grad + Lap d + W - E_0) a = 0`,
//! which along a minimal geodesic with unit speed reads
//!
//! ```text
//! d ln a / ds = (E_0 - Lap d - <e, W e>) / (2 sqrt V)
//! ```
//!
//! with `a(m) = pi^{-n/4} det(A)^{1/4}` and `e` the branch eigenvector of `W(m)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::agmon::{trace_geodesic, AgmonField, WellPairGeometry};
use crate::error::{Error, Result};
use crate::mesh::{DomainGraph, NodeField};
use crate::operator::WEIGHT_GUARD;
use crate::potential::{EndoField, WellInfo};

/// Smoothness bound factor for the eikonal region: `10 max(1, lambda_max)`.
pub const SMOOTHNESS_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WkbData {
    pub well: WellInfo,
    /// Branch of `W(m)` the amplitude lives in.
    pub branch: usize,
    /// Unit branch vector of `W(m)`.
    pub direction: Vec<f64>,
    /// Ground level over hbar.
    pub e0: f64,
    /// Scalar amplitude per node (zero outside the computed region).
    pub a0: NodeField,
    /// Nodes where the eikonal field passed the smoothness check.
    pub omega_region: Vec<bool>,
    /// Amplitude at the well.
    pub a_center: f64,
    /// Discrete Laplacian of d (model value inside the seed region).
    lap_d: Vec<f64>,
    /// `<e, W e>` per node.
    w_branch: Vec<f64>,
}

impl WkbData {
    /// Amplitude at an arbitrary point, integrated along its own geodesic.
    pub fn amplitude_at(&self, graph: &DomainGraph, field: &AgmonField, p: [f64; 2]) -> Result<f64> {
        let x = graph.local_coords(self.well.coords, p);
        if x[0].hypot(x[1]) < field.model_radius {
            return Ok(self.a_center);
        }
        let geo = trace_geodesic(graph, field, p)?;
        Ok(self.a_center * self.ln_profile(graph, field, &geo.points)[0].exp())
    }

    fn integrand(&self, graph: &DomainGraph, field: &AgmonField, p: [f64; 2]) -> f64 {
        let lap = graph.interpolate(&self.lap_d, p).unwrap_or(0.0);
        let wb = graph.interpolate(&self.w_branch, p).unwrap_or(0.0);
        let sv = graph.interpolate(&field.speed, p).unwrap_or(0.0);
        if sv <= 0.0 {
            return 0.0;
        }
        (self.e0 - lap - wb) / (2.0 * sv)
    }

    /// `ln a - ln a(m)` at every point of a polyline running toward the well.
    ///
    /// Inside the seed region `d` is the bare quadratic model, for which the
    /// integrand vanishes identically although its true limit at the well does
    /// not; there the integrand is extrapolated linearly from outside.
    fn ln_profile(&self, graph: &DomainGraph, field: &AgmonField, points: &[[f64; 2]]) -> Vec<f64> {
        let rc = field.model_radius + 2.0 * graph.mesh_width();
        let radius = |p: [f64; 2]| {
            let x = graph.local_coords(self.well.coords, p);
            x[0].hypot(x[1])
        };
        let mut out = vec![0.0; points.len()];
        let Some(m) = points.iter().rposition(|&p| radius(p) >= rc) else {
            return out;
        };
        let f_m = self.integrand(graph, field, points[m]);
        let back = m.min(4);
        let slope = if back > 0 {
            let far = points[m - back];
            let dl = radius(far) - radius(points[m]);
            if dl > 0.0 {
                (self.integrand(graph, field, far) - f_m) / dl
            } else {
                0.0
            }
        } else {
            0.0
        };
        let l_m = radius(points[m]);
        // linear model f(s) = f_m + slope (s - l_m) integrated from the well
        let tail = |l: f64| l * (f_m - slope * l_m) + 0.5 * slope * l * l;
        for (k, p) in points.iter().enumerate().skip(m) {
            out[k] = tail(radius(*p));
        }
        for k in (0..m).rev() {
            let (a, b) = (points[k], points[k + 1]);
            let step = graph.local_coords(a, b);
            let len = step[0].hypot(step[1]);
            let mid = graph.from_local_coords(a, [0.5 * step[0], 0.5 * step[1]]);
            let fa = self.integrand(graph, field, a);
            let fb = self.integrand(graph, field, b);
            let fc = self.integrand(graph, field, mid);
            out[k] = out[k + 1] + len * (fa + 4.0 * fc + fb) / 6.0;
        }
        out
    }
}

/// Leading transport amplitude of the ground state of `field`'s well.
///
/// Geodesics are traced from every node of the smooth region with
/// `d <= reach` that has no neighbour farther out in the same region, and the
/// integrated amplitude is scattered to nodes by inverse-distance weights.
/// Nodes missed by every trace get a trace of their own.
pub fn transport_amplitude(
    graph: &DomainGraph,
    field: &AgmonField,
    w: &EndoField,
    branch: usize,
    reach: f64,
) -> Result<WkbData> {
    let well = &field.well;
    let n = graph.node_count();
    let r = w.rank;
    let dim = well.dim();
    let mu: Vec<f64> = if well.w_eigs.is_empty() {
        vec![0.0; r]
    } else {
        well.w_eigs.clone()
    };
    if branch >= mu.len() {
        return Err(Error::Unsupported(format!("branch {branch} of a rank-{r} bundle")));
    }
    let wm = DMatrix::from_row_slice(r, r, w.at(well.node));
    let eig = SymmetricEigen::new(wm);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let col = order[branch];
    let mu_b = eig.eigenvalues[col];
    let tol = 1e-9 * (1.0 + eig.eigenvalues.amax());
    if order
        .iter()
        .any(|&c| c != col && (eig.eigenvalues[c] - mu_b).abs() <= tol)
    {
        return Err(Error::Unsupported(format!(
            "ground level of branch {branch} is not simple"
        )));
    }
    let direction: Vec<f64> = (0..r).map(|i| eig.eigenvectors[(i, col)]).collect();
    let w_branch: Vec<f64> = (0..n)
        .map(|i| {
            let m = w.at(i);
            let mut s = 0.0;
            for a in 0..r {
                for b in 0..r {
                    s += direction[a] * m[a * r + b] * direction[b];
                }
            }
            s
        })
        .collect();
    let trace_a: f64 = well.lambda.iter().sum();
    let e0 = trace_a + mu_b;
    let det: f64 = well.lambda.iter().product();
    let a_center = std::f64::consts::PI.powf(-(dim as f64) / 4.0) * det.powf(0.25);

    let lap_d: Vec<f64> = (0..n)
        .map(|i| {
            if field.seeded[i] {
                return trace_a;
            }
            let s: f64 = graph
                .neighbors(i)
                .iter()
                .map(|&(j, e)| graph.edges()[e].conductance * (field.d[j] - field.d[i]))
                .sum();
            s / graph.volume(i)
        })
        .collect();
    let lmax = well.lambda.iter().copied().fold(1.0, f64::max);
    let smooth = field.smooth_nodes(graph, SMOOTHNESS_FACTOR * lmax);
    let omega_region: Vec<bool> = (0..n)
        .map(|i| smooth[i] && field.d[i] <= reach && !graph.is_boundary(i))
        .collect();
    let mut data = WkbData {
        well: well.clone(),
        branch,
        direction,
        e0,
        a0: NodeField::zeros(n, 1),
        omega_region,
        a_center,
        lap_d,
        w_branch,
    };

    // outer shell of the region
    let starts: Vec<usize> = (0..n)
        .filter(|&i| {
            data.omega_region[i]
                && !field.seeded[i]
                && graph
                    .neighbors(i)
                    .iter()
                    .all(|&(j, _)| !data.omega_region[j] || field.d[j] <= field.d[i])
        })
        .collect();
    let mut acc = vec![(0.0f64, 0.0f64); n];
    let h = graph.mesh_width();
    for &s in &starts {
        let Ok(geo) = trace_geodesic(graph, field, graph.coords(s)) else {
            continue;
        };
        let pts = &geo.points;
        let ln_a = data.ln_profile(graph, field, pts);
        for (p, la) in pts.iter().zip(&ln_a) {
            let node = graph.nearest_node(*p);
            let x = graph.local_coords(graph.coords(node), *p);
            let dist = x[0].hypot(x[1]);
            let wgt = 1.0 / (dist + 1e-3 * h).powi(2);
            acc[node].0 += wgt * la;
            acc[node].1 += wgt;
        }
    }
    for i in 0..n {
        if !data.omega_region[i] {
            continue;
        }
        let x = graph.local_coords(well.coords, graph.coords(i));
        data.a0.values[i] = if field.seeded[i] || x[0].hypot(x[1]) < field.model_radius {
            a_center
        } else if acc[i].1 > 0.0 {
            a_center * (acc[i].0 / acc[i].1).exp()
        } else {
            data.amplitude_at(graph, field, graph.coords(i))
                .map_err(|e| e.context(format!("transport to node {i}")))?
        };
    }
    Ok(data)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeadingOrder {
    pub i0: f64,
    pub ell: usize,
    /// Quadrature points of H used.
    pub points: usize,
    pub s_jk: f64,
    /// Power of hbar in the prefactor, `(1 - ell) / 2`.
    pub power: f64,
}

impl LeadingOrder {
    /// `2 hbar^{(1-ell)/2} e^{-S/hbar} |I_0|`.
    pub fn splitting(&self, hbar: f64) -> f64 {
        2.0 * hbar.powf(self.power) * (-self.s_jk / hbar).exp() * self.i0.abs()
    }
}

/// Stationary-phase leading term of the interaction of two ground states.
pub fn leading_i0(
    graph: &DomainGraph,
    pair: &WellPairGeometry,
    fj: &AgmonField,
    fk: &AgmonField,
    wkb_j: &WkbData,
    wkb_k: &WkbData,
) -> Result<LeadingOrder> {
    if wkb_j.well.node != fj.well.node || wkb_k.well.node != fk.well.node {
        return Err(Error::Unsupported("amplitudes do not match the fields".into()));
    }
    let n = graph.dim();
    let ell = pair.ell;
    let tdim = n - ell - 1;
    let fibre: f64 = wkb_j
        .direction
        .iter()
        .zip(&wkb_k.direction)
        .map(|(a, b)| a * b)
        .sum();
    let det_of = |hess: &[f64]| -> Result<f64> {
        match tdim {
            0 => Ok(1.0),
            1 => {
                if hess.is_empty() || !(hess[0] > 0.0) {
                    Err(Error::IndefiniteHessian {
                        min_eigenvalue: hess.first().copied().unwrap_or(f64::NAN),
                    })
                } else {
                    Ok(hess[0])
                }
            }
            _ => Err(Error::Unsupported("transverse dimension above one".into())),
        }
    };
    let c = (2.0 * std::f64::consts::PI).powf(tdim as f64 / 2.0);
    let term = |idx: usize, hess: &[f64]| -> Result<f64> {
        let sp = &pair.sigma[idx];
        let aj = wkb_j.amplitude_at(graph, fj, sp.coords)?;
        let ak = wkb_k.amplitude_at(graph, fk, sp.coords)?;
        Ok(det_of(hess)?.powf(-0.5) * sp.ddiff_normal * aj * ak * fibre)
    };
    let (i0, points) = if ell == 0 {
        let m0 = pair.m0.ok_or(Error::AmbiguousEll("no minimizing point".into()))?;
        let pos = pair.h_points.iter().position(|&i| i == m0).unwrap_or(0);
        let hess = pair.transverse_hessian.get(pos).cloned().unwrap_or_default();
        (c * term(m0, &hess)?, 1)
    } else {
        let mut s = 0.0;
        for (pos, &idx) in pair.h_points.iter().enumerate() {
            let hess = pair.transverse_hessian.get(pos).cloned().unwrap_or_default();
            s += pair.sigma[idx].weight * term(idx, &hess)?;
        }
        (c * s, pair.h_points.len())
    };
    Ok(LeadingOrder {
        i0,
        ell,
        points,
        s_jk: pair.s_jk,
        power: (1.0 - ell as f64) / 2.0,
    })
}

/// Fit of `ln Delta = -S / hbar + p ln hbar + c`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFit {
    pub s: f64,
    pub p: f64,
    pub c: f64,
    /// Standard errors of (S, p, c).
    pub stderr: [f64; 3],
    pub residuals: Vec<f64>,
    /// 2-norm condition number of the design matrix.
    pub condition: f64,
}

pub fn fit_sweep(hbar: &[f64], delta: &[f64]) -> Result<SweepFit> {
    if hbar.len() != delta.len() {
        return Err(Error::Fit("hbar and splitting lists differ in length".into()));
    }
    if hbar.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", hbar.len())));
    }
    if let Some(d) = delta.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::Fit(format!("non-positive splitting {d}")));
    }
    let m = hbar.len();
    let x = DMatrix::from_fn(m, 3, |i, k| match k {
        0 => -1.0 / hbar[i],
        1 => hbar[i].ln(),
        _ => 1.0,
    });
    let y = DVector::from_iterator(m, delta.iter().map(|d| d.ln()));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin;
    if !(smin > 1e-12 * smax) {
        return Err(Error::Fit(format!("rank-deficient design (condition {condition:e})")));
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = &y - &x * &beta;
    let dof = (m - 3).max(1) as f64;
    let sigma2 = res.norm_squared() / dof;
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix".into()))?;
    let stderr = [
        (sigma2 * xtx_inv[(0, 0)]).sqrt(),
        (sigma2 * xtx_inv[(1, 1)]).sqrt(),
        (sigma2 * xtx_inv[(2, 2)]).sqrt(),
    ];
    Ok(SweepFit {
        s: beta[0],
        p: beta[1],
        c: beta[2],
        stderr,
        residuals: res.iter().copied().collect(),
        condition,
    })
}

/// One row of a splitting sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub hbar: f64,
    pub delta_direct: f64,
    /// Splitting of the symmetrized interaction matrix.
    pub delta_predicted: f64,
    pub w_tilde: f64,
    /// Leading-order splitting `2 hbar^{(1-ell)/2} e^{-S/hbar} |I_0|`.
    pub i0_leading: f64,
    pub noise_floor: f64,
    /// Inside the trust window: `e^{-S/hbar} <= 1e-3` and `Delta >= 1e3 * floor`.
    pub trusted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub points: Vec<SweepPoint>,
    pub fit: Option<SweepFit>,
    /// `Delta / leading order` per point.
    pub ratio: Vec<f64>,
}

pub const TRUST_EXPONENT: f64 = 1e-3;
pub const TRUST_FLOOR_FACTOR: f64 = 1e3;

pub fn in_trust_window(s: f64, hbar: f64, delta: f64, floor: f64) -> bool {
    (-s / hbar).exp() <= TRUST_EXPONENT && delta >= TRUST_FLOOR_FACTOR * floor
}

impl SweepRecord {
    /// Fits the trusted points (all points when fewer than four are trusted).
    pub fn new(mut points: Vec<SweepPoint>) -> Result<Self> {
        points.sort_by(|a, b| b.hbar.total_cmp(&a.hbar));
        let trusted: Vec<&SweepPoint> = points.iter().filter(|p| p.trusted).collect();
        let fit = if trusted.len() >= 4 {
            let h: Vec<f64> = trusted.iter().map(|p| p.hbar).collect();
            let d: Vec<f64> = trusted.iter().map(|p| p.delta_direct).collect();
            Some(fit_sweep(&h, &d)?)
        } else {
            None
        };
        let ratio = points
            .iter()
            .map(|p| p.delta_direct / p.i0_leading)
            .collect();
        Ok(SweepRecord { points, fit, ratio })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hbar,delta_direct,delta_predicted,w_tilde,i0_leading\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                p.hbar, p.delta_direct, p.delta_predicted, p.w_tilde, p.i0_leading
            ));
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayRow {
    pub hbar: f64,
    pub weighted_norm: f64,
    /// Nodes dropped by the overflow guard.
    pub excluded: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Slope of ln(norm) against ln(1/hbar): the empirical N_0.
    pub slope: f64,
    /// Slopes between consecutive rows.
    pub local_slopes: Vec<f64>,
    pub epsilon: f64,
}

/// Weighted norms `||e^{(1-eps) d/hbar} v||` over a sweep of modes.
pub fn agmon_decay_check(
    graph: &DomainGraph,
    field: &AgmonField,
    modes: &[(f64, NodeField)],
    epsilon: f64,
) -> Result<DecayTable> {
    let n = graph.node_count();
    let mut rows = Vec::with_capacity(modes.len());
    for (hbar, v) in modes {
        let r = v.rank;
        let support: Vec<usize> = (0..n)
            .filter(|&i| (0..r).any(|c| v.values[i * r + c] != 0.0))
            .collect();
        let mut excluded = 0;
        let mut sum = 0.0;
        for &i in &support {
            let e = (1.0 - epsilon) * field.d[i] / hbar;
            if e > WEIGHT_GUARD {
                excluded += 1;
                continue;
            }
            let m2: f64 = (0..r).map(|c| v.values[i * r + c].powi(2)).sum();
            sum += graph.volume(i) * (2.0 * e).exp() * m2;
        }
        if 2 * excluded > support.len() {
            return Err(Error::Overflow(format!(
                "guard excluded {excluded} of {} support nodes at hbar = {hbar}",
                support.len()
            )));
        }
        rows.push(DecayRow {
            hbar: *hbar,
            weighted_norm: sum.sqrt(),
            excluded,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((1.0 / r.hbar).ln(), r.weighted_norm.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        crate::eig::slope(&pts)
    } else {
        0.0
    };
    let local_slopes = pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    Ok(DecayTable {
        rows,
        slope,
        local_slopes,
        epsilon,
    })
}

//! Config-driven pipeline and the JSON report.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::agmon::{field_csv, WellPairGeometry};
use crate::asymptotics::{
    agmon_decay_check, in_trust_window, leading_i0, transport_amplitude, DecayTable, LeadingOrder,
    SweepPoint, SweepRecord,
};
use crate::config::{ProblemConfig, SCHEMA_VERSION};
use crate::eig::{
    harmonic_check, harmonic_levels, low_spectrum_with, pooled_levels, spectral_clusters, splitting,
    EigenPair, HarmonicLevel, HarmonicTable, SolverOptions, SpectrumInfo,
};
use crate::error::{Error, Result, ResultExt};
use crate::interaction::{
    build_interaction, dirichlet_modes, predicted_spectrum, w_surface, well_system, InteractionMatrix,
    ModeIndex, WForm, WellModes, WellSystem,
};
use crate::mesh::{build_domain, DomainGraph, DomainKind, NodeField};
use crate::operator::{
    assemble, dirichlet_restrict, ims_residual, quadratic_partition, weighted_identity_residual,
    DiscreteOperator,
};
use crate::potential::{evaluate_endo, evaluate_field, find_wells_endo, EndoField, WellInfo};

/// Everything derived from a config before any hbar is chosen.
pub struct Problem {
    pub config: ProblemConfig,
    pub graph: Arc<DomainGraph>,
    pub v: NodeField,
    pub w: EndoField,
    pub wells: Vec<WellInfo>,
    pub solver: SolverOptions,
}

impl Problem {
    pub fn new(config: ProblemConfig, seed: u64) -> Result<Self> {
        let graph = Arc::new(build_domain(&config.domain)?);
        let v = evaluate_field(&config.potential_expr()?, &graph).context("potential V")?;
        let w = if config.endomorphism.is_empty() {
            EndoField::zero(graph.node_count(), config.rank)
        } else {
            evaluate_endo(&config.endomorphism_exprs()?, config.rank, &graph)
                .context("endomorphism W")?
        };
        let found = find_wells_endo(&v, &w, &graph)?;
        let wells = select_wells(&graph, found, &config.wells.locations)?;
        Ok(Problem {
            config,
            graph,
            v,
            w,
            wells,
            solver: SolverOptions {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn hbars(&self) -> Vec<f64> {
        self.config.hbar.values()
    }

    pub fn system(&self) -> Result<WellSystem> {
        if self.wells.len() < 2 {
            return Err(Error::Unsupported(format!(
                "interaction needs at least two wells, found {}",
                self.wells.len()
            )));
        }
        well_system(&self.graph, &self.v, &self.w, &self.wells, &self.config.system_options())
            .context("well system")
    }

    pub fn operator(&self, hbar: f64) -> Result<DiscreteOperator> {
        assemble(&self.graph, &self.v, &self.w, hbar)
    }
}

fn select_wells(graph: &DomainGraph, found: Vec<WellInfo>, locations: &[[f64; 2]]) -> Result<Vec<WellInfo>> {
    if locations.is_empty() {
        return Ok(found);
    }
    let mut picked: Vec<usize> = Vec::new();
    for p in locations {
        let dist = |w: &WellInfo| {
            let x = graph.local_coords(*p, w.coords);
            x[0].hypot(x[1])
        };
        let best = (0..found.len())
            .min_by(|&a, &b| dist(&found[a]).total_cmp(&dist(&found[b])))
            .ok_or(Error::NoWells)?;
        if picked.contains(&best) {
            return Err(Error::Config {
                line: 0,
                message: format!("well location {p:?} selects an already selected well"),
            });
        }
        picked.push(best);
    }
    Ok(picked.into_iter().map(|i| found[i].clone()).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerance {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshInfo {
    pub kind: DomainKind,
    pub nodes: usize,
    pub edges: usize,
    pub min_spacing: f64,
    pub max_spacing: f64,
    pub total_volume: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WellsSection {
    pub wells: Vec<WellInfo>,
    /// Lowest harmonic levels of each well.
    pub levels: Vec<Vec<HarmonicLevel>>,
    /// Lowest levels pooled over all wells.
    pub pooled: Vec<HarmonicLevel>,
}

pub fn cmd_wells(p: &Problem) -> Result<WellsSection> {
    let m = p.config.windows.levels;
    Ok(WellsSection {
        wells: p.wells.clone(),
        levels: p.wells.iter().map(|w| harmonic_levels(w, m)).collect(),
        pooled: pooled_levels(&p.wells, m),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterRow {
    pub start: usize,
    pub end: usize,
    pub mean: f64,
    pub harmonic_mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumAtHbar {
    pub hbar: f64,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub info: SpectrumInfo,
    /// Certified clusters of the full spectrum against pooled harmonic levels.
    pub clusters: Vec<ClusterRow>,
    /// Spacing of consecutive clusters over the harmonic spacing.
    pub cluster_gap_ratios: Vec<f64>,
    /// Per well: eigenvalues of the Dirichlet operator on its region.
    pub dirichlet: Vec<Vec<f64>>,
    /// Whether every Dirichlet eigenvalue dominates the matching full one.
    pub interlacing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Identities {
    pub hbar: f64,
    pub symmetric: bool,
    /// Weighted energy identity with `phi = (1 - eps) d` for well 0.
    pub weighted_energy: f64,
    pub ims: Option<f64>,
    pub mesh_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSection {
    pub per_hbar: Vec<SpectrumAtHbar>,
    pub harmonic: HarmonicTable,
    pub identities: Identities,
}

pub fn cmd_spectrum(p: &Problem) -> Result<SpectrumSection> {
    let hbars = p.hbars();
    let count = p.config.windows.count;
    let sys = if p.wells.len() >= 2 { Some(p.system()?) } else { None };
    let regions: Vec<Vec<bool>> = match &sys {
        Some(s) => s.regions.clone(),
        None => Vec::new(),
    };
    let pooled = pooled_levels(&p.wells, count);
    let per_hbar = hbars
        .par_iter()
        .map(|&hbar| -> Result<SpectrumAtHbar> {
            let op = p.operator(hbar)?;
            let (pairs, info) = low_spectrum_with(&op, count, None, &p.solver)?;
            let values: Vec<f64> = pairs.iter().map(|e| e.value).collect();
            let mut clusters = Vec::new();
            for r in spectral_clusters(&values, hbar) {
                let len = r.len() as f64;
                let mean = values[r.clone()].iter().sum::<f64>() / len;
                let harmonic_mean = pooled[r.clone()].iter().map(|l| l.energy_over_hbar).sum::<f64>() * hbar / len;
                clusters.push(ClusterRow {
                    start: r.start,
                    end: r.end,
                    mean,
                    harmonic_mean,
                });
            }
            let cluster_gap_ratios = clusters
                .windows(2)
                .map(|c| (c[1].mean - c[0].mean) / (c[1].harmonic_mean - c[0].harmonic_mean))
                .collect();
            let mut dirichlet = Vec::new();
            let mut interlacing = true;
            for region in &regions {
                let dop = dirichlet_restrict(&op, region, &p.wells)?;
                let k = count.min(dop.dim());
                let (dp, _) = low_spectrum_with(&dop, k, None, &p.solver)?;
                let dv: Vec<f64> = dp.iter().map(|e| e.value).collect();
                interlacing &= dv.iter().zip(&values).all(|(d, f)| d >= f);
                dirichlet.push(dv);
            }
            Ok(SpectrumAtHbar {
                hbar,
                residuals: pairs.iter().map(|e| e.residual).collect(),
                values,
                info,
                clusters,
                cluster_gap_ratios,
                dirichlet,
                interlacing,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let harmonic = harmonic_check(
        &p.graph,
        &p.v,
        &p.w,
        &p.wells,
        &hbars,
        p.config.windows.levels,
        &p.solver,
    )
    .context("harmonic check")?;
    let identities = identities(p, sys.as_ref(), hbars[hbars.len() - 1])?;
    Ok(SpectrumSection {
        per_hbar,
        harmonic,
        identities,
    })
}

/// Structural identities at one hbar.
pub fn identities(p: &Problem, sys: Option<&WellSystem>, hbar: f64) -> Result<Identities> {
    let op = p.operator(hbar)?;
    let symmetric = op.matrix().is_symmetric_exact();
    let field = match sys {
        Some(s) => s.fields[0].clone(),
        None => crate::agmon::fast_march(&p.graph, &p.v, &p.wells[0], 0)?,
    };
    let eps = p.config.windows.decay_epsilon;
    // restrict to the well's region so that the weight stays bounded
    let (dop, phi) = match sys {
        Some(s) => (dirichlet_restrict(&op, &s.regions[0], &p.wells)?, &field.d),
        None => (op.clone(), &field.d),
    };
    let (pairs, _) = low_spectrum_with(&dop, 1, None, &p.solver)?;
    let phi = NodeField::scalar(phi.iter().map(|d| (1.0 - eps) * d).collect());
    let weighted_energy = weighted_identity_residual(&dop, &phi, pairs[0].value, &pairs[0].vector)?;
    let ims = match sys {
        Some(s) => Some(ims_residual(&op, &quadratic_partition(&s.cutoffs))?),
        None => None,
    };
    Ok(Identities {
        hbar,
        symmetric,
        weighted_energy,
        ims,
        mesh_width: p.graph.mesh_width(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PairSummary {
    pub j: usize,
    pub k: usize,
    pub s_jk: f64,
    pub s_forward: f64,
    pub s_backward: f64,
    pub ell: usize,
    pub surface_points: usize,
    pub h_points: usize,
    pub tau_h: f64,
    pub margin: f64,
}

impl PairSummary {
    fn of(pair: &WellPairGeometry) -> Self {
        PairSummary {
            j: pair.j,
            k: pair.k,
            s_jk: pair.s_jk,
            s_forward: pair.s_forward,
            s_backward: pair.s_backward,
            ell: pair.ell,
            surface_points: pair.sigma.len(),
            h_points: pair.h_points.len(),
            tau_h: pair.tau_h,
            margin: pair.margin,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AgmonSection {
    pub distances: Vec<Vec<f64>>,
    pub s0: f64,
    pub pairs: Vec<PairSummary>,
    /// Max of `|dd|^2 - V` over smooth nodes, per well.
    pub eikonal_excess: Vec<f64>,
    pub tau_fm: Vec<f64>,
}

pub fn agmon_section(sys: &WellSystem) -> AgmonSection {
    AgmonSection {
        distances: sys.distances.clone(),
        s0: sys.s0,
        pairs: sys.pairs.iter().map(PairSummary::of).collect(),
        eikonal_excess: sys.fields.iter().map(|f| f.eikonal_excess(&sys.graph)).collect(),
        tau_fm: sys.fields.iter().map(|f| f.tau_fm).collect(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OffsetRow {
    pub j: usize,
    pub k: usize,
    pub fraction: f64,
    pub w_surface: f64,
    /// Relative change against the unshifted surface.
    pub relative_change: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FormAgreement {
    pub a: ModeIndex,
    pub b: ModeIndex,
    pub w_surface: f64,
    pub w_commutator: f64,
    pub relative_difference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InteractionAtHbar {
    pub hbar: f64,
    pub matrix: InteractionMatrix,
    pub direct: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Consecutive differences of the direct spectrum.
    pub direct_gaps: Vec<f64>,
    pub predicted_gaps: Vec<f64>,
    pub gap_relative_error: Vec<f64>,
    /// Off-diagonal entries evaluated both ways (surface-valid entries only).
    pub forms: Vec<FormAgreement>,
    pub offsets: Vec<OffsetRow>,
    pub noise_floor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InteractionSection {
    pub agmon: AgmonSection,
    pub per_hbar: Vec<InteractionAtHbar>,
}

/// Gaps between consecutive eigenpairs, resolving cluster offsets.
pub fn pair_gaps(pairs: &[EigenPair]) -> Vec<f64> {
    pairs.windows(2).map(|w| splitting(&w[0], &w[1])).collect()
}

/// Gaps of a small symmetric matrix; 2x2 blocks use the closed form.
fn matrix_gaps(im: &InteractionMatrix, predicted: &[f64]) -> Vec<f64> {
    match predicted_spectrum(im).splitting {
        Some(s) => vec![s],
        None => predicted.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

pub fn interaction_at(p: &Problem, sys: &WellSystem, hbar: f64) -> Result<(InteractionAtHbar, Vec<WellModes>)> {
    let modes = dirichlet_modes(sys, hbar, &p.config.window_policy(), &p.solver)?;
    let im = build_interaction(sys, &modes, hbar)?;
    let m = im.mu.len();
    let op = p.operator(hbar)?;
    let (pairs, info) = low_spectrum_with(&op, m, None, &p.solver)?;
    if pairs.len() < m {
        return Err(Error::InsufficientEigenvalues(format!(
            "{} of {m} eigenvalues at hbar = {hbar}",
            pairs.len()
        )));
    }
    let direct: Vec<f64> = pairs.iter().map(|e| e.value).collect();
    let predicted = predicted_spectrum(&im).eigenvalues;
    let direct_gaps = pair_gaps(&pairs);
    let predicted_gaps = matrix_gaps(&im, &predicted);
    let gap_relative_error = direct_gaps
        .iter()
        .zip(&predicted_gaps)
        .map(|(d, q)| (q - d).abs() / d.abs())
        .collect();
    let mut forms = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if im.forms[a][b] == WForm::Surface {
                let (ws, wc) = (im.w[a][b], im.w_commutator[a][b]);
                forms.push(FormAgreement {
                    a: im.index[a],
                    b: im.index[b],
                    w_surface: ws,
                    w_commutator: wc,
                    relative_difference: (ws - wc).abs() / ws.abs(),
                });
            }
        }
    }
    let mut offsets = Vec::new();
    for &fraction in &p.config.surfaces.offsets {
        for pair in &sys.pairs {
            let shifted = sys.translated_pair(pair.j, pair.k, fraction)?;
            let va = &modes[pair.j].pairs[0].vector;
            let vb = &modes[pair.k].pairs[0].vector;
            let base = w_surface(pair, pair.j, va, vb, &sys.graph, hbar)?;
            let ws = w_surface(&shifted, pair.j, va, vb, &sys.graph, hbar)?;
            offsets.push(OffsetRow {
                j: pair.j,
                k: pair.k,
                fraction,
                w_surface: ws,
                relative_change: (ws - base).abs() / base.abs(),
            });
        }
    }
    Ok((
        InteractionAtHbar {
            hbar,
            matrix: im,
            direct,
            predicted,
            direct_gaps,
            predicted_gaps,
            gap_relative_error,
            forms,
            offsets,
            noise_floor: info.noise_floor,
        },
        modes,
    ))
}

pub fn cmd_interaction(p: &Problem) -> Result<InteractionSection> {
    let sys = p.system()?;
    let per_hbar = p
        .hbars()
        .par_iter()
        .map(|&h| interaction_at(p, &sys, h).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(InteractionSection {
        agmon: agmon_section(&sys),
        per_hbar,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSection {
    pub pair: PairSummary,
    pub leading: Option<LeadingOrder>,
    pub leading_error: Option<String>,
    pub record: SweepRecord,
    /// Ground-mode decay check per well.
    pub decay: Vec<DecayTable>,
    /// Smallest trusted hbar and its leading-order ratio.
    pub tail_ratio: Option<(f64, f64)>,
}

pub fn cmd_sweep(p: &Problem) -> Result<SweepSection> {
    let sys = p.system()?;
    let pair = sys
        .pairs
        .iter()
        .min_by(|a, b| a.s_jk.total_cmp(&b.s_jk))
        .ok_or(Error::MissingPair(0, 1))?;
    let (j, k) = (pair.j, pair.k);
    // amplitudes are needed up to the separating surface and its shifts
    let reach = 0.5 * pair.s_jk + pair.margin;
    let (leading, leading_error) = match (|| -> Result<LeadingOrder> {
        let wj = transport_amplitude(&sys.graph, &sys.fields[j], &sys.w, 0, reach)?;
        let wk = transport_amplitude(&sys.graph, &sys.fields[k], &sys.w, 0, reach)?;
        leading_i0(&sys.graph, pair, &sys.fields[j], &sys.fields[k], &wj, &wk)
    })() {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let hbars = p.hbars();
    let results = hbars
        .par_iter()
        .map(|&hbar| -> Result<(SweepPoint, Vec<WellModes>)> {
            let (row, modes) = interaction_at(p, &sys, hbar)?;
            let im = &row.matrix;
            let a = im.index.iter().position(|x| x.well == j && x.local == 0).unwrap();
            let b = im.index.iter().position(|x| x.well == k && x.local == 0).unwrap();
            let (a, b) = (a.min(b), a.max(b));
            // gap between the two lowest states of the pair's ground cluster
            let delta_direct = row.direct_gaps[0];
            let delta_predicted = row.predicted_gaps[0];
            Ok((
                SweepPoint {
                    hbar,
                    delta_direct,
                    delta_predicted,
                    w_tilde: im.m_tilde[a][b],
                    i0_leading: leading.as_ref().map_or(f64::NAN, |l| l.splitting(hbar)),
                    noise_floor: row.noise_floor,
                    trusted: in_trust_window(pair.s_jk, hbar, delta_direct, row.noise_floor),
                },
                modes,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut decay = Vec::new();
    for w in 0..sys.wells.len() {
        let modes: Vec<(f64, NodeField)> = results
            .iter()
            .map(|(pt, m)| (pt.hbar, m[w].pairs[0].vector.clone()))
            .collect();
        decay.push(agmon_decay_check(&sys.graph, &sys.fields[w], &modes, p.config.windows.decay_epsilon)?);
    }
    let record = SweepRecord::new(results.into_iter().map(|r| r.0).collect())?;
    let tail_ratio = record
        .points
        .iter()
        .zip(&record.ratio)
        .rfind(|(pt, _)| pt.trusted)
        .map(|(pt, r)| (pt.hbar, *r));
    Ok(SweepSection {
        pair: PairSummary::of(pair),
        leading,
        leading_error,
        record,
        decay,
        tail_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Wells,
    Spectrum,
    Interaction,
    Sweep,
    Report,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub version: &'static str,
    pub command: Command,
    pub seed: u64,
    pub config: ProblemConfig,
    pub mesh: MeshInfo,
    pub tolerances: Vec<Tolerance>,
    pub wells: Option<WellsSection>,
    pub spectrum: Option<SpectrumSection>,
    pub interaction: Option<InteractionSection>,
    pub sweep: Option<SweepSection>,
}

fn tolerances() -> Vec<Tolerance> {
    use crate::{agmon, asymptotics, eig, interaction, operator, potential};
    vec![
        Tolerance { name: "eig.cluster_tol", value: eig::CLUSTER_TOL },
        Tolerance { name: "eig.dense_threshold", value: eig::DENSE_THRESHOLD as f64 },
        Tolerance { name: "eig.dense_general_threshold", value: eig::DENSE_GENERAL_THRESHOLD as f64 },
        Tolerance { name: "eig.max_iterations", value: eig::MAX_ITERATIONS as f64 },
        Tolerance { name: "agmon.seed_cells", value: agmon::SEED_CELLS as f64 },
        Tolerance { name: "agmon.tau_fm_constant", value: agmon::TAU_FM_CONSTANT },
        Tolerance { name: "potential.fit_radius", value: potential::FIT_RADIUS as f64 },
        Tolerance { name: "operator.weight_guard", value: operator::WEIGHT_GUARD },
        Tolerance { name: "operator.exp_clamp", value: operator::EXP_CLAMP },
        Tolerance { name: "operator.boundary_clearance", value: operator::BOUNDARY_CLEARANCE as f64 },
        Tolerance { name: "interaction.region_margin", value: interaction::REGION_MARGIN },
        Tolerance { name: "interaction.min_surface_points", value: interaction::MIN_SURFACE_POINTS as f64 },
        Tolerance { name: "asymptotics.trust_exponent", value: asymptotics::TRUST_EXPONENT },
        Tolerance { name: "asymptotics.trust_floor_factor", value: asymptotics::TRUST_FLOOR_FACTOR },
        Tolerance { name: "asymptotics.smoothness_factor", value: asymptotics::SMOOTHNESS_FACTOR },
    ]
}

pub fn run(p: &Problem, command: Command) -> Result<Report> {
    let g = &p.graph;
    let all = command == Command::Report;
    let wells = if all || command == Command::Wells {
        Some(cmd_wells(p).context("wells")?)
    } else {
        None
    };
    let spectrum = if all || command == Command::Spectrum {
        Some(cmd_spectrum(p).context("spectrum")?)
    } else {
        None
    };
    let interaction = if all || command == Command::Interaction {
        Some(cmd_interaction(p).context("interaction")?)
    } else {
        None
    };
    let sweep = if all || command == Command::Sweep {
        Some(cmd_sweep(p).context("sweep")?)
    } else {
        None
    };
    Ok(Report {
        schema: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: p.solver.seed,
        config: p.config.clone(),
        mesh: MeshInfo {
            kind: g.kind(),
            nodes: g.node_count(),
            edges: g.edges().len(),
            min_spacing: g.min_spacing(),
            max_spacing: g.max_spacing(),
            total_volume: g.total_volume(),
        },
        tolerances: tolerances(),
        wells,
        spectrum,
        interaction,
        sweep,
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Writes `report.json`, `sweep.csv`, the Agmon fields and the operator.
pub fn write_outputs(p: &Problem, report: &Report, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, body)?;
        written.push(name.to_string());
        Ok(())
    };
    put("report.json", &report.to_json()?)?;
    if let Some(s) = &report.sweep {
        put("sweep.csv", &s.record.to_csv())?;
    }
    if p.config.output.fields && p.wells.len() >= 2 && (report.interaction.is_some() || report.sweep.is_some()) {
        let sys = p.system()?;
        for (j, f) in sys.fields.iter().enumerate() {
            put(&format!("fields/agmon_{j}.csv"), &field_csv(&sys.graph, f))?;
        }
    }
    if p.config.output.coo {
        let h = p.hbars()[0];
        put("operator.coo", &p.operator(h)?.to_coo_text())?;
    }
    Ok(written)
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`. Every number compared
//! here is read from a report section produced by the pipeline; the test only
//! supplies the oracles and the thresholds.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use tunnelkit::config::{self, parse, ProblemConfig};
use tunnelkit::eig::slope;
use tunnelkit::pipeline::{
    agmon_section, cmd_interaction, cmd_spectrum, cmd_sweep, cmd_wells, identities, Problem,
};

const SEED: u64 = 0x5eed;

type Outcome = Result<String, String>;

fn problem_file(name: &str) -> ProblemConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("problems").join(name);
    config::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn problem(cfg: ProblemConfig) -> Result<Problem, String> {
    Problem::new(cfg, SEED).map_err(|e| e.to_string())
}

fn interval(nodes: usize, v: &str, hbar: &str, extra: &str) -> ProblemConfig {
    parse(&format!(
        "schema = 1\n[domain]\nkind = interval\nextents = -2, 2\nresolution = {nodes}\n\
         [potential]\nV = {v}\n[hbar]\n{hbar}\n{extra}"
    ))
    .unwrap()
}

fn sphere(rings: usize, longitudes: usize, hbar: &str, extra: &str) -> ProblemConfig {
    parse(&format!(
        "schema = 1\n[domain]\nkind = sphere_latlong\nresolution = {rings}, {longitudes}\n\
         [potential]\nV = sin(theta)^2\n[hbar]\n{hbar}\n{extra}"
    ))
    .unwrap()
}

/// Composite Simpson rule on `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_harmonic() -> Outcome {
    let cfg = interval(2001, "(1 - x^2)^2", "sweep = 0.2, 0.15, 0.1, 0.07, 0.05", "[windows]\nlevels = 4\ncount = 4\n");
    let p = problem(cfg)?;
    let wells = cmd_wells(&p).map_err(|e| e.to_string())?;
    // V'' = 8 at both minima, so lambda = sqrt(8 / 2)
    let lambda_ok = wells.wells.len() == 2 && wells.wells.iter().all(|w| (w.lambda[0] - 2.0).abs() <= 1e-3);
    // oscillator oracle: -hbar^2 u'' + x^2 u has E_k = hbar (2k + 1)
    let osc = problem(interval(2001, "x^2", "value = 0.1", "[windows]\nlevels = 3\ncount = 3\n"))?;
    let spec = cmd_spectrum(&osc).map_err(|e| e.to_string())?;
    let osc_err = spec.per_hbar[0]
        .values
        .iter()
        .enumerate()
        .map(|(k, e)| (e - 0.1 * (2 * k + 1) as f64).abs() / e)
        .fold(0.0, f64::max);
    let spec = cmd_spectrum(&p).map_err(|e| e.to_string())?;
    let ex = &spec.harmonic.exponents;
    let min = ex.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        lambda_ok && osc_err <= 1e-4 && ex.len() == 4 && min >= 1.15,
        format!(
            "exponents {ex:.3?} (min {min:.3} >= 1.15), lambda {:.5}, oscillator rel err {osc_err:.1e}",
            wells.wells[0].lambda[0]
        ),
    )
}

fn c2_agmon() -> Outcome {
    let exact_1d = simpson(|x| 1.0 - x * x, -1.0, 1.0, 64);
    let exact_sphere = simpson(f64::sin, 0.0, std::f64::consts::PI, 512);
    let mut notes = Vec::new();
    let mut ok = true;

    let p = problem(interval(2001, "(1 - x^2)^2", "value = 0.1", ""))?;
    let sec = agmon_section(&p.system().map_err(|e| e.to_string())?);
    let s = sec.distances[0][1];
    let e1 = (s - exact_1d).abs() / exact_1d;
    ok &= e1 <= 0.01;
    notes.push(format!("1D S = {s:.5} (rel {e1:.1e})"));
    ok &= sec.pairs.iter().all(|q| (q.s_forward - q.s_backward).abs() <= sec.tau_fm[q.j].min(sec.tau_fm[q.k]));

    let p = problem(sphere(64, 128, "value = 0.1", ""))?;
    let sec = agmon_section(&p.system().map_err(|e| e.to_string())?);
    let s = sec.distances[0][1];
    let e2 = (s - exact_sphere).abs() / exact_sphere;
    ok &= e2 <= 0.02;
    notes.push(format!("sphere S = {s:.5} (rel {e2:.1e})"));
    ok &= sec.pairs.iter().all(|q| (q.s_forward - q.s_backward).abs() <= sec.tau_fm[q.j].min(sec.tau_fm[q.k]));

    // triangle inequality needs at least three wells
    let p = problem(interval(2001, "x^2 * (1 - x^2)^2", "value = 0.1", ""))?;
    let sys = p.system().map_err(|e| e.to_string())?;
    let sec = agmon_section(&sys);
    let m = sec.distances.len();
    let tau = sec.tau_fm.iter().copied().fold(0.0, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let d = &sec.distances;
                worst = worst.max(d[i][k] - d[i][j] - d[j][k] - 2.0 * tau);
            }
        }
    }
    let sym = (0..m).all(|i| (0..m).all(|j| sec.distances[i][j] == sec.distances[j][i]));
    ok &= m == 3 && worst <= 0.0 && sym;
    notes.push(format!("triple well: {m} wells, max triangle excess {worst:.2e}, symmetric {sym}"));
    check(ok, notes.join("; "))
}

fn c3_interaction() -> Outcome {
    let p = problem(interval(1601, "(1 - x^2)^2", "sweep = 0.14, 0.12, 0.10, 0.08, 0.06", ""))?;
    let sec = cmd_interaction(&p).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = sec.per_hbar.iter().map(|r| r.gap_relative_error[0]).collect();
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    let last = errs[errs.len() - 1];
    let tail = &errs[errs.len() - 3..];
    let monotone = tail.windows(2).all(|w| w[1] < w[0]);
    check(
        last <= 0.05 && monotone,
        format!("relative errors over hbar 0.14..0.06: {}; tail monotone {monotone}", shown.join(", ")),
    )
}

fn c4_surface() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut cfg = interval(1601, "(1 - x^2)^2", "value = 0.08", "[surfaces]\noffsets = -0.1, 0.1\n");
    cfg.surfaces.offsets = vec![-0.1, 0.1];
    let mut sph = problem_file("sphere.tk");
    sph.hbar = config::HbarSpec::Single(0.08);
    for (name, cfg) in [("1D", cfg), ("sphere", sph)] {
        let p = problem(cfg)?;
        let sec = cmd_interaction(&p).map_err(|e| e.to_string())?;
        let rows = &sec.per_hbar[0].offsets;
        let worst = rows.iter().map(|r| r.relative_change).fold(0.0, f64::max);
        ok &= rows.len() == 2 && worst <= 0.01;
        notes.push(format!("{name}: max change {worst:.2e} over {} offsets", rows.len()));
    }
    check(ok, notes.join("; "))
}

fn c5_forms() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["double_well.tk", "sphere.tk", "bundle.tk"] {
        let p = problem(problem_file(name))?;
        let sec = cmd_interaction(&p).map_err(|e| e.to_string())?;
        let n: usize = sec.per_hbar.iter().map(|r| r.forms.len()).sum();
        let worst = sec
            .per_hbar
            .iter()
            .flat_map(|r| r.forms.iter().map(|f| f.relative_difference))
            .fold(0.0, f64::max);
        ok &= n > 0 && worst <= 0.02;
        notes.push(format!("{name}: {n} entries, max rel diff {worst:.2e}"));
    }
    check(ok, notes.join("; "))
}

struct Sweeps {
    line: tunnelkit::pipeline::SweepSection,
    sphere: tunnelkit::pipeline::SweepSection,
}

fn sweeps() -> Result<Sweeps, String> {
    let line = cmd_sweep(&problem(problem_file("double_well.tk"))?).map_err(|e| e.to_string())?;
    let sphere = cmd_sweep(&problem(problem_file("sphere.tk"))?).map_err(|e| e.to_string())?;
    Ok(Sweeps { line, sphere })
}

fn c6_prefactor(s: &Sweeps) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, sec, s_exp, p_exp) in [("1D", &s.line, 4.0 / 3.0, 0.5), ("sphere", &s.sphere, 2.0, 0.0)] {
        match &sec.record.fit {
            Some(f) => {
                let good = (f.s - s_exp).abs() <= 0.02 * s_exp && (f.p - p_exp).abs() <= 0.15;
                ok &= good;
                notes.push(format!(
                    "{name}: S = {:.4} +- {:.1e}, p = {:.3} +- {:.1e} (ell = {})",
                    f.s, f.stderr[0], f.p, f.stderr[1], sec.pair.ell
                ));
            }
            None => {
                ok = false;
                notes.push(format!("{name}: fewer than four trusted points"));
            }
        }
    }
    check(ok, notes.join("; "))
}

fn c7_ratio(s: &Sweeps) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, sec) in [("1D", &s.line), ("sphere", &s.sphere)] {
        let dev: Vec<f64> = sec
            .record
            .points
            .iter()
            .zip(&sec.record.ratio)
            .filter(|(pt, _)| pt.trusted)
            .map(|(_, r)| (r - 1.0).abs())
            .collect();
        let Some((h, r)) = sec.tail_ratio else {
            ok = false;
            notes.push(format!("{name}: no trusted point ({:?})", sec.leading_error));
            continue;
        };
        let tail = &dev[dev.len().saturating_sub(3)..];
        let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
        ok &= (r - 1.0).abs() <= 0.25 && decreasing;
        notes.push(format!("{name}: R({h}) = {r:.4}, tail |R-1| {tail:.3?}"));
    }
    check(ok, notes.join("; "))
}

fn order(h: &[f64], r: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h.iter().zip(r).map(|(h, r)| (h.ln(), r.ln())).collect();
    slope(&pts)
}

fn c8_identities() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let ladders: [(&str, Vec<ProblemConfig>, f64); 2] = [
        (
            "1D",
            [801, 1601, 3201]
                .iter()
                .map(|&n| interval(n, "(1 - x^2)^2", "value = 0.1", "[windows]\ncount = 4\n"))
                .collect(),
            0.1,
        ),
        (
            "sphere",
            [(64, 32), (128, 64), (256, 128)]
                .iter()
                .map(|&(r, l)| sphere(r, l, "value = 0.2", "[windows]\ncount = 4\n"))
                .collect(),
            0.2,
        ),
    ];
    for (name, cfgs, hbar) in ladders {
        let (mut h, mut we, mut ims) = (Vec::new(), Vec::new(), Vec::new());
        for cfg in cfgs {
            let p = problem(cfg)?;
            let sys = p.system().map_err(|e| e.to_string())?;
            let id = identities(&p, Some(&sys), hbar).map_err(|e| e.to_string())?;
            ok &= id.symmetric;
            h.push(id.mesh_width);
            we.push(id.weighted_energy);
            ims.push(id.ims.unwrap_or(f64::NAN));
        }
        let (o1, o2) = (order(&h, &we), order(&h, &ims));
        ok &= o1 >= 1.8 && o2 >= 1.8;
        notes.push(format!("{name}: weighted-energy order {o1:.2}, IMS order {o2:.2}"));
    }
    // interlacing on the shipped problems
    for name in ["double_well.tk", "sphere.tk"] {
        let p = problem(problem_file(name))?;
        let spec = cmd_spectrum(&p).map_err(|e| e.to_string())?;
        let inter = spec.per_hbar.iter().all(|r| r.interlacing && !r.dirichlet.is_empty());
        ok &= inter && spec.identities.symmetric;
        notes.push(format!("{name}: symmetric {}, interlacing {inter}", spec.identities.symmetric));
    }
    check(ok, notes.join("; "))
}

fn c9_decay(s: &Sweeps) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, sec) in [("1D", &s.line), ("sphere", &s.sphere)] {
        for (w, t) in sec.decay.iter().enumerate() {
            let local_max = t.local_slopes.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let good = t.slope.is_finite() && t.slope.abs() <= 6.0 && local_max.is_finite() && local_max <= 6.0;
            ok &= good;
            notes.push(format!("{name} well {w}: N0 = {:.3}, max local |slope| {local_max:.3}", t.slope));
        }
    }
    check(ok, notes.join("; "))
}

fn c10_bundle() -> Outcome {
    let p = problem(problem_file("bundle.tk"))?;
    let wells = cmd_wells(&p).map_err(|e| e.to_string())?;
    let mu_ok = wells
        .wells
        .iter()
        .all(|w| w.w_eigs.len() == 2 && (w.w_eigs[0] + 0.3).abs() < 1e-12 && (w.w_eigs[1] - 0.3).abs() < 1e-12);
    let spec = cmd_spectrum(&p).map_err(|e| e.to_string())?;
    // the first cluster gap is the W-splitting 0.6 hbar of the ground level
    let ratios: Vec<f64> = spec
        .per_hbar
        .iter()
        .map(|r| r.cluster_gap_ratios.first().copied().unwrap_or(f64::NAN))
        .collect();
    let spacing_ok = ratios.iter().all(|r| (r - 1.0).abs() <= 0.02);
    let inter = cmd_interaction(&p).map_err(|e| e.to_string())?;
    let mut hermitian = true;
    let mut worst_block = 0.0f64;
    let mut coupled = true;
    for row in &inter.per_hbar {
        let m = &row.matrix;
        let dim = m.m_tilde.len();
        hermitian &= dim == 4;
        let scale = m.m_tilde.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        for a in 0..dim {
            for b in 0..dim {
                hermitian &= m.m_tilde[a][b] == m.m_tilde[b][a];
                let (ia, ib) = (m.index[a], m.index[b]);
                if ia.local != ib.local {
                    worst_block = worst_block.max(m.m_tilde[a][b].abs() / scale);
                } else if ia.well != ib.well {
                    coupled &= m.m_tilde[a][b] != 0.0;
                }
            }
        }
    }
    let block_ok = worst_block <= 1e-12;
    check(
        mu_ok && spacing_ok && hermitian && block_ok && coupled,
        format!(
            "cluster spacing / 0.6 hbar: {ratios:.4?}; m~ 4x4 symmetric {hermitian}; \
             max cross-branch entry {worst_block:.1e} of max|m~|; same-branch tunneling nonzero {coupled}"
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let tag = if r.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &r {
            Ok(s) | Err(s) => s.clone(),
        };
        println!("{tag} criterion {n:>2} ({name}): {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        results.push((n, name, r));
    };
    run(1, "harmonic approximation", &c1_harmonic);
    run(2, "agmon distance", &c2_agmon);
    run(3, "interaction vs direct splitting", &c3_interaction);
    run(4, "surface independence", &c4_surface);
    run(5, "cross-form consistency", &c5_forms);
    match sweeps() {
        Ok(s) => {
            run(6, "prefactor law", &|| c6_prefactor(&s));
            run(7, "leading-order ratio", &|| c7_ratio(&s));
            run(8, "structural identities", &c8_identities);
            run(9, "agmon decay", &|| c9_decay(&s));
        }
        Err(e) => {
            for (n, name) in [(6, "prefactor law"), (7, "leading-order ratio"), (9, "agmon decay")] {
                run(n, name, &|| Err(format!("sweep failed: {e}")));
            }
            run(8, "structural identities", &c8_identities);
        }
    }
    run(10, "bundle case", &c10_bundle);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Problem files.
//!
//! A problem file is a `schema = N` line followed by `[section]` headers and
//! `key = value` lines. `#` starts a comment. Lists are comma separated;
//! matrix rows and point lists are separated by `;`.
//!
//! ```text
//! schema = 1
//!
//! [domain]
//! kind = interval
//! extents = -2, 2
//! resolution = 2001
//! boundary = dirichlet_outer
//!
//! [potential]
//! V = (1 - x^2)^2
//!
//! [hbar]
//! sweep = 0.08, 0.07, 0.06, 0.055, 0.05
//! ```

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result, ResultExt};
use crate::expr::{parse_expr, Expr};
use crate::interaction::{SystemOptions, WindowPolicy, ELLIPSE_MARGIN, INNER_CUTOFF, OUTER_CUTOFF};
use crate::mesh::{Boundary, DomainKind, DomainSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum HbarSpec {
    Single(f64),
    Sweep(Vec<f64>),
}

impl HbarSpec {
    /// Values in descending order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = match self {
            HbarSpec::Single(h) => vec![*h],
            HbarSpec::Sweep(l) => l.clone(),
        };
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WellOverrides {
    /// Approximate locations; each selects the nearest detected well.
    pub locations: Vec<[f64; 2]>,
    /// Geodesic-manifold dimension per pair `(j, k)`.
    pub ell: Vec<((usize, usize), usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowConfig {
    /// Spectral clusters per Dirichlet operator in the window.
    pub clusters: usize,
    pub probe: usize,
    /// Eigenvalues reported from the full operator.
    pub count: usize,
    /// Levels per hbar in the harmonic table.
    pub levels: usize,
    pub inner: f64,
    pub outer: f64,
    /// Agmon weight reduction in the decay check.
    pub decay_epsilon: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            clusters: 1,
            probe: 4,
            count: 4,
            levels: 4,
            inner: INNER_CUTOFF,
            outer: OUTER_CUTOFF,
            decay_epsilon: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceConfig {
    /// Offsets of the separating surface as fractions of S_jk.
    pub offsets: Vec<f64>,
    /// Margin of G as a fraction of S_0.
    pub margin: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            offsets: Vec::new(),
            margin: ELLIPSE_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: String,
    pub fields: bool,
    pub coo: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            fields: true,
            coo: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub schema: u32,
    pub domain: DomainSpec,
    pub potential: String,
    pub rank: usize,
    /// Row-major entry expressions of W (empty when W = 0).
    pub endomorphism: Vec<String>,
    pub hbar: HbarSpec,
    pub wells: WellOverrides,
    pub windows: WindowConfig,
    pub surfaces: SurfaceConfig,
    pub output: OutputConfig,
}

impl ProblemConfig {
    pub fn potential_expr(&self) -> Result<Expr> {
        parse_expr(&self.potential).context("potential V")
    }

    pub fn endomorphism_exprs(&self) -> Result<Vec<Expr>> {
        self.endomorphism
            .iter()
            .enumerate()
            .map(|(i, s)| parse_expr(s).context(format!("W entry {i}")))
            .collect()
    }

    pub fn system_options(&self) -> SystemOptions {
        SystemOptions {
            margin_fraction: self.surfaces.margin,
            translation_fraction: 0.0,
            ell_overrides: self.wells.ell.clone(),
            inner: self.windows.inner,
            outer: self.windows.outer,
        }
    }

    pub fn window_policy(&self) -> WindowPolicy {
        WindowPolicy {
            clusters: self.windows.clusters,
            probe: self.windows.probe,
        }
    }
}

pub fn load(path: &Path) -> Result<ProblemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["kind", "extents", "radius", "resolution", "boundary"]),
    ("potential", &["V", "W", "rank"]),
    ("hbar", &["value", "sweep"]),
    ("wells", &["locations", "ell"]),
    (
        "windows",
        &["clusters", "probe", "count", "levels", "inner", "outer", "decay_epsilon"],
    ),
    ("surfaces", &["offsets", "margin"]),
    ("output", &["dir", "fields", "coo"]),
];

struct Entry {
    line: usize,
    value: String,
}

pub fn parse(text: &str) -> Result<ProblemConfig> {
    let mut schema: Option<u32> = None;
    let mut section: Option<&'static str> = None;
    let mut entries: Vec<(&'static str, &'static str, Entry)> = Vec::new();
    let mut seen_sections: Vec<&'static str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim();
            let (s, _) = SECTIONS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| err(line, format!("unknown section [{name}]")))?;
            if schema.is_none() {
                return Err(err(line, "`schema` must precede the first section"));
            }
            if seen_sections.contains(s) {
                return Err(err(line, format!("duplicate section [{name}]")));
            }
            seen_sections.push(s);
            section = Some(s);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section else {
            if key != "schema" {
                return Err(err(line, format!("key `{key}` outside any section")));
            }
            if schema.is_some() {
                return Err(err(line, "duplicate `schema`"));
            }
            let v: u32 = value.parse().map_err(|_| err(line, "schema must be an integer"))?;
            if v != SCHEMA_VERSION {
                return Err(err(line, format!("unsupported schema {v} (expected {SCHEMA_VERSION})")));
            }
            schema = Some(v);
            continue;
        };
        let keys = SECTIONS.iter().find(|(s, _)| *s == sec).unwrap().1;
        let k = keys
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| err(line, format!("unknown key `{key}` in [{sec}]")))?;
        if entries.iter().any(|(s, kk, _)| *s == sec && kk == k) {
            return Err(err(line, format!("duplicate key `{key}` in [{sec}]")));
        }
        if value.is_empty() {
            return Err(err(line, format!("empty value for `{key}`")));
        }
        entries.push((
            sec,
            k,
            Entry {
                line,
                value: value.to_string(),
            },
        ));
    }
    if schema.is_none() {
        return Err(err(0, "missing `schema`"));
    }
    let get = |s: &str, k: &str| entries.iter().find(|(a, b, _)| *a == s && *b == k).map(|e| &e.2);

    let domain = parse_domain(&get)?;
    let v = get("potential", "V").ok_or_else(|| err(0, "missing `V` in [potential]"))?;
    let rank = match get("potential", "rank") {
        Some(e) => parse_usize(e)?,
        None => 1,
    };
    if rank == 0 {
        return Err(err(get("potential", "rank").map_or(0, |e| e.line), "rank must be positive"));
    }
    let endomorphism = match get("potential", "W") {
        Some(e) => {
            let rows: Vec<&str> = e.value.split(';').map(str::trim).collect();
            let mut out = Vec::new();
            for row in &rows {
                let cols: Vec<&str> = row.split(',').map(str::trim).collect();
                if cols.len() != rank || rows.len() != rank {
                    return Err(err(e.line, format!("W must be {rank}x{rank}")));
                }
                out.extend(cols.iter().map(|c| c.to_string()));
            }
            out
        }
        None => Vec::new(),
    };
    let hbar = match (get("hbar", "value"), get("hbar", "sweep")) {
        (Some(e), None) => HbarSpec::Single(parse_positive(e, &e.value)?),
        (None, Some(e)) => {
            let l = e
                .value
                .split(',')
                .map(|s| parse_positive(e, s))
                .collect::<Result<Vec<_>>>()?;
            HbarSpec::Sweep(l)
        }
        (Some(e), Some(_)) => return Err(err(e.line, "give either `value` or `sweep` in [hbar]")),
        (None, None) => return Err(err(0, "missing [hbar] value or sweep")),
    };

    let mut wells = WellOverrides::default();
    if let Some(e) = get("wells", "locations") {
        for p in e.value.split(';') {
            let c = parse_floats(e, p, ',')?;
            if c.len() != domain.dim() {
                return Err(err(e.line, format!("location needs {} coordinates", domain.dim())));
            }
            wells.locations.push([c[0], c.get(1).copied().unwrap_or(0.0)]);
        }
    }
    if let Some(e) = get("wells", "ell") {
        // j-k:ell, ...
        for item in e.value.split(',') {
            let (pair, ell) = item
                .split_once(':')
                .ok_or_else(|| err(e.line, "ell entries are `j-k:ell`"))?;
            let (j, k) = pair
                .split_once('-')
                .ok_or_else(|| err(e.line, "ell entries are `j-k:ell`"))?;
            let n = |s: &str| s.trim().parse::<usize>().map_err(|_| err(e.line, format!("bad integer `{}`", s.trim())));
            wells.ell.push(((n(j)?, n(k)?), n(ell)?));
        }
    }

    let mut windows = WindowConfig::default();
    if let Some(e) = get("windows", "clusters") {
        windows.clusters = parse_usize(e)?;
    }
    if let Some(e) = get("windows", "probe") {
        windows.probe = parse_usize(e)?;
    }
    if let Some(e) = get("windows", "count") {
        windows.count = parse_usize(e)?;
    }
    if let Some(e) = get("windows", "levels") {
        windows.levels = parse_usize(e)?;
    }
    if let Some(e) = get("windows", "inner") {
        windows.inner = parse_positive(e, &e.value)?;
    }
    if let Some(e) = get("windows", "outer") {
        windows.outer = parse_positive(e, &e.value)?;
    }
    if let Some(e) = get("windows", "decay_epsilon") {
        windows.decay_epsilon = parse_positive(e, &e.value)?;
        if windows.decay_epsilon >= 1.0 {
            return Err(err(e.line, "decay_epsilon must lie in (0, 1)"));
        }
    }
    if windows.clusters == 0 || windows.count == 0 || windows.probe < windows.clusters {
        return Err(err(0, "[windows] needs clusters >= 1, count >= 1, probe >= clusters"));
    }
    if windows.inner >= windows.outer {
        return Err(err(0, "[windows] inner must be below outer"));
    }

    let mut surfaces = SurfaceConfig::default();
    if let Some(e) = get("surfaces", "offsets") {
        surfaces.offsets = parse_floats(e, &e.value, ',')?;
    }
    if let Some(e) = get("surfaces", "margin") {
        surfaces.margin = parse_positive(e, &e.value)?;
    }

    let mut output = OutputConfig::default();
    if let Some(e) = get("output", "dir") {
        output.dir = e.value.clone();
    }
    if let Some(e) = get("output", "fields") {
        output.fields = parse_bool(e)?;
    }
    if let Some(e) = get("output", "coo") {
        output.coo = parse_bool(e)?;
    }

    let cfg = ProblemConfig {
        schema: SCHEMA_VERSION,
        domain,
        potential: v.value.clone(),
        rank,
        endomorphism,
        hbar,
        wells,
        windows,
        surfaces,
        output,
    };
    cfg.potential_expr().context(format!("line {}", v.line))?;
    cfg.endomorphism_exprs()?;
    Ok(cfg)
}

fn parse_domain<'a>(get: &dyn Fn(&str, &str) -> Option<&'a Entry>) -> Result<DomainSpec> {
    let kind_e = get("domain", "kind").ok_or_else(|| err(0, "missing `kind` in [domain]"))?;
    let kind = match kind_e.value.as_str() {
        "interval" => DomainKind::Interval,
        "rectangle" => DomainKind::Rectangle,
        "torus2d" => DomainKind::Torus2d,
        "sphere_latlong" => DomainKind::SphereLatlong,
        other => return Err(err(kind_e.line, format!("unknown domain kind `{other}`"))),
    };
    let boundary = match get("domain", "boundary") {
        Some(e) => match e.value.as_str() {
            "dirichlet_outer" => Boundary::DirichletOuter,
            "periodic" => Boundary::Periodic,
            "closed_surface" => Boundary::ClosedSurface,
            other => return Err(err(e.line, format!("unknown boundary `{other}`"))),
        },
        None => match kind {
            DomainKind::Interval | DomainKind::Rectangle => Boundary::DirichletOuter,
            DomainKind::Torus2d => Boundary::Periodic,
            DomainKind::SphereLatlong => Boundary::ClosedSurface,
        },
    };
    let res_e = get("domain", "resolution").ok_or_else(|| err(0, "missing `resolution` in [domain]"))?;
    let resolution = res_e
        .value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| err(res_e.line, format!("bad resolution `{}`", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut extents = Vec::new();
    if let Some(e) = get("domain", "extents") {
        let v = parse_floats(e, &e.value, ',')?;
        if v.len() % 2 != 0 {
            return Err(err(e.line, "extents come in (low, high) pairs"));
        }
        extents = v.chunks(2).map(|c| [c[0], c[1]]).collect();
    }
    let radius = match get("domain", "radius") {
        Some(e) => parse_positive(e, &e.value)?,
        None => 1.0,
    };
    let spec = DomainSpec {
        kind,
        extents,
        radius,
        resolution,
        boundary,
    };
    spec.validate().context(format!("[domain] at line {}", kind_e.line))?;
    Ok(spec)
}

fn parse_usize(e: &Entry) -> Result<usize> {
    e.value
        .parse()
        .map_err(|_| err(e.line, format!("expected a non-negative integer, got `{}`", e.value)))
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(e.line, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_floats(e: &Entry, s: &str, sep: char) -> Result<Vec<f64>> {
    s.split(sep)
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(e.line, format!("bad number `{t}`")))
        })
        .collect()
}

fn parse_positive(e: &Entry, s: &str) -> Result<f64> {
    let v = parse_floats(e, s, ',')?;
    match v.as_slice() {
        [x] if *x > 0.0 => Ok(*x),
        _ => Err(err(e.line, format!("expected one positive number, got `{}`", s.trim()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOUBLE_WELL: &str = "schema = 1
[domain]
kind = interval
extents = -2, 2
resolution = 401

[potential]
V = (1 - x^2)^2   # quartic

[hbar]
sweep = 0.1, 0.2
";

    #[test]
    fn parses_minimal_file() {
        let c = parse(DOUBLE_WELL).unwrap();
        assert_eq!(c.domain.resolution, vec![401]);
        assert_eq!(c.domain.boundary, Boundary::DirichletOuter);
        assert_eq!(c.hbar.values(), vec![0.2, 0.1]);
        assert_eq!(c.rank, 1);
        assert!(c.endomorphism.is_empty());
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let e = parse(&DOUBLE_WELL.replace("resolution", "nodes")).unwrap_err();
        assert!(matches!(e, Error::Config { line: 5, .. }), "{e}");
        let e = parse(&format!("{DOUBLE_WELL}[plots]\n")).unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn schema_is_required_and_checked() {
        assert!(parse(&DOUBLE_WELL.replace("schema = 1\n", "")).is_err());
        assert!(parse(&DOUBLE_WELL.replace("schema = 1", "schema = 2")).is_err());
    }

    #[test]
    fn bundle_potential() {
        let text = DOUBLE_WELL.replace(
            "V = (1 - x^2)^2   # quartic",
            "V = (1 - x^2)^2\nrank = 2\nW = -0.3, 0; 0, 0.3",
        );
        let c = parse(&text).unwrap();
        assert_eq!(c.endomorphism, vec!["-0.3", "0", "0", "0.3"]);
        assert!(parse(&text.replace("rank = 2", "rank = 3")).is_err());
    }

    #[test]
    fn sphere_defaults_to_closed_surface() {
        let text = "schema = 1\n[domain]\nkind = sphere_latlong\nresolution = 32, 16\n\
                    [potential]\nV = sin(theta)^2\n[hbar]\nvalue = 0.1\n\
                    [wells]\nell = 0-1:1\nlocations = 0, 0; 3.14, 0\n";
        let c = parse(text).unwrap();
        assert_eq!(c.domain.boundary, Boundary::ClosedSurface);
        assert_eq!(c.wells.ell, vec![((0, 1), 1)]);
        assert_eq!(c.wells.locations.len(), 2);
        assert_eq!(c.hbar, HbarSpec::Single(0.1));
    }

    #[test]
    fn bad_expression_is_reported() {
        assert!(parse(&DOUBLE_WELL.replace("(1 - x^2)^2", "(1 - x^2")).is_err());
    }
}

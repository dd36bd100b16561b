//! Command-line front end for `bec-core`.
//!
//! Every output carries a metadata block with the tool version, the SHA-256
//! of the input, the seed and the tolerances in force. Outputs never depend
//! on the worker thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bec_core::companion::{build_companion, char_poly_residual, decay_rate, duality_check, propagate, sector_of, spectral_split};
use bec_core::deform::full_deformation;
use bec_core::fixtures;
use bec_core::halfspace::{edge_modes, edge_modes_companion, edge_modes_truncated, edge_space_dimension, in_gap_scan};
use bec_core::io::{parse_family_doc, parse_model_doc};
use bec_core::linalg::C64;
use bec_core::spectrum::{certify_gap, chiral_gap_certificate};
use bec_core::tol::DEFAULT_NUM_K;
use bec_core::verify::{verify_all, verify_ensemble, EnsembleSpec, DEFAULT_SCAN_CELLS};
use bec_core::winding::{bulk_winding, winding_phase, winding_roots};
use bec_core::{ChiralModel, Error, ModelParams, Tolerances};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bec", version, about = "Winding numbers, edge indices and homotopy witnesses for chiral lattice models")]
#[command(after_help = "Tolerances are overridden with --tol.<name>=<value>; names: sa, num, sing, rho, cluster, kernel, coeff, fit, cert.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for randomized steps (ensembles, probe points).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Output is identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Model JSON file.
    #[arg(value_name = "MODEL")]
    pub path: Option<PathBuf>,
    /// Model JSON file (same as the positional argument).
    #[arg(long = "model", value_name = "PATH", conflicts_with = "path")]
    pub model: Option<PathBuf>,
    /// Built-in fixture: dimerized-plus, dimerized-minus, dimerized-trivial,
    /// dimerized-all, ssh:<t1>,<t2>, double-root:<theta>.
    #[arg(long, conflicts_with_all = ["path", "model"])]
    pub fixture: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Both,
    Companion,
    Truncated,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bloch bands on a uniform k grid and the certified gap.
    Spectrum {
        #[command(flatten)]
        source: Source,
        /// Number of k samples.
        #[arg(long, default_value_t = DEFAULT_NUM_K)]
        samples: usize,
        /// Energy the reported gap should contain.
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Bulk winding number of det h_{+-}.
    Winding {
        #[command(flatten)]
        source: Source,
        /// Initial phase-unwrapping samples.
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Zero-energy edge kernels of the half-space operator.
    Edge {
        #[command(flatten)]
        source: Source,
        /// Truncation length; default adapts to the decay rate.
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
    },
    /// In-gap eigenvalues of the truncated half-space Hamiltonian.
    Scan {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = DEFAULT_SCAN_CELLS)]
        cells: usize,
        /// Energy window `lo,hi`; default is the certified gap around 0.
        #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
        window: Option<String>,
    },
    /// Companion-matrix eigenvalues, sectors and decaying modes.
    Modes {
        #[command(flatten)]
        source: Source,
        /// Energy `re` or `re,im`.
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        energy: String,
        /// Cells to propagate each decaying mode.
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// Random probe points for the characteristic polynomial identity.
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Certified homotopy from h_{+-} to a diagonal monomial loop.
    Deform {
        #[command(flatten)]
        source: Source,
        /// Also emit the min-singular-value surface of each stage on a
        /// `T`x`K` grid.
        #[arg(long, value_name = "TxK")]
        grid: Option<String>,
    },
    /// Run the correspondence checks on fixtures, a model file or a seeded ensemble.
    Verify {
        #[command(flatten)]
        source: Source,
        /// Verify a random ensemble of this many models instead.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 2)]
        dim_v: usize,
        #[arg(long, default_value_t = 1)]
        range: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.05)]
        gap_floor: f64,
        /// Truncation length of the in-gap scan.
        #[arg(long, default_value_t = DEFAULT_SCAN_CELLS)]
        cells: usize,
    },
    /// Winding and edge index over a two-parameter family.
    PhaseDiagram {
        /// Family JSON file.
        #[arg(value_name = "FAMILY")]
        path: Option<PathBuf>,
        #[arg(long = "model", value_name = "PATH", conflicts_with = "path")]
        model: Option<PathBuf>,
        /// Grid size `N1xN2`.
        #[arg(long, default_value = "32x32")]
        grid: String,
        /// Truncation length for the edge index; default adapts per point.
        #[arg(long)]
        cells: Option<usize>,
    },
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergent(_)
            | Error::AmbiguousKernel { .. }
            | Error::InterpolationResidual { .. }
            | Error::CertificateFailed { .. }
            | Error::WindingNotConstant { .. }
            | Error::SpectrumOnCriticalLine { .. } => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Finished output of a command.
pub struct Output {
    pub bytes: Vec<u8>,
    /// Some verification check failed.
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub input: String,
    pub input_sha256: String,
    pub seed: Option<u64>,
    pub tolerances: Tolerances,
    pub settings: BTreeMap<String, Value>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Splits `--tol.<name>=<value>` and `--tol.<name> <value>` out of the
/// argument list and applies them to the defaults.
pub fn extract_tolerances(args: Vec<OsString>) -> Result<(Vec<OsString>, Tolerances), Failure> {
    let mut tol = Tolerances::default();
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(text) = arg.to_str().and_then(|s| s.strip_prefix("--tol.")) else {
            rest.push(arg);
            continue;
        };
        let (name, value) = match text.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                let v = it.next().and_then(|v| v.into_string().ok()).ok_or_else(|| Failure::input(format!("--tol.{text} needs a value")))?;
                (text.to_string(), v)
            }
        };
        let x: f64 = value.parse().map_err(|_| Failure::input(format!("--tol.{name}: '{value}' is not a number")))?;
        tol.set(&name, x)?;
    }
    Ok((rest, tol))
}

/// A resolved model: file contents or a fixture.
struct Loaded {
    label: String,
    input: String,
    sha: String,
    model: ModelParams,
    chiral: Option<ChiralModel>,
    /// Extra fixture members for `dimerized-all`.
    members: Vec<(String, ChiralModel)>,
}

impl Loaded {
    fn chiral(&self) -> Result<&ChiralModel, Failure> {
        self.chiral.as_ref().ok_or_else(|| Failure::input(format!("{}: no chiral grading found; add \"grading\" to the model file", self.label)))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load(source: &Source, tol: &Tolerances) -> Result<Loaded, Failure> {
    if let Some(name) = &source.fixture {
        let members = fixtures::by_name(name)?;
        let first = members[0].1.clone();
        return Ok(Loaded {
            label: name.clone(),
            input: format!("fixture:{name}"),
            sha: sha256_hex(format!("fixture:{name}").as_bytes()),
            model: first.base.clone(),
            chiral: Some(first),
            members,
        });
    }
    let path = source.path.as_ref().or(source.model.as_ref()).ok_or_else(|| Failure::input("no model given; pass a model file or --fixture"))?;
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Failure::input(format!("{}: not UTF-8", path.display())))?;
    let doc = parse_model_doc(text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let model = doc.to_model(tol).map_err(|e| Failure { message: format!("{}: {e}", path.display()), ..Failure::from(e) })?;
    let chiral = match (&doc.grading, model.self_adjoint) {
        (Some(_), _) => Some(doc.to_chiral(tol)?),
        (None, true) => doc.to_chiral(tol).ok(),
        (None, false) => None,
    };
    let label = path.display().to_string();
    let members = chiral.iter().map(|c| (label.clone(), c.clone())).collect();
    Ok(Loaded { label: label.clone(), input: label, sha: sha256_hex(&bytes), model, chiral, members })
}

fn metadata(command: &'static str, input: String, sha: String, seed: Option<u64>, tol: &Tolerances, settings: &[(&str, Value)]) -> Metadata {
    Metadata {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        input,
        input_sha256: sha,
        seed,
        tolerances: *tol,
        settings: settings.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn json_output(meta: &Metadata, body: Value, failed: bool) -> Result<Output, Failure> {
    let mut obj = serde_json::Map::new();
    obj.insert("metadata".into(), serde_json::to_value(meta).expect("metadata serializes"));
    match body {
        Value::Object(m) => obj.extend(m),
        other => {
            obj.insert("result".into(), other);
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj)).expect("value serializes");
    bytes.push(b'\n');
    Ok(Output { bytes, failed })
}

/// CSV with the metadata as leading `#` comment lines, then a header row.
fn csv_output(meta: &Metadata, header: &[String], rows: &[Vec<String>]) -> Result<Output, Failure> {
    let mut bytes = Vec::new();
    let meta_json = serde_json::to_string(meta).expect("metadata serializes");
    bytes.extend_from_slice(format!("# {meta_json}\n").as_bytes());
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut bytes);
        let io = |e: csv::Error| Failure { code: EXIT_INPUT, message: e.to_string() };
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| Failure::input(e.to_string()))?;
    }
    Ok(Output { bytes, failed: false })
}

/// Shortest round-trip decimal, with an exponent for very small or large
/// magnitudes; non-finite values print as `nan`, `inf`, `-inf`.
fn num(x: f64) -> String {
    match serde_json::Number::from_f64(x) {
        Some(n) => n.to_string(),
        None if x.is_nan() => "nan".into(),
        None => if x > 0.0 { "inf".into() } else { "-inf".into() },
    }
}

fn parse_pair(text: &str, what: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::input(format!("{what}: expected two comma-separated numbers, got '{text}'"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_grid(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::input(format!("--grid: expected `N1xN2`, got '{text}'"));
    let (a, b) = text.split_once('x').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_energy(text: &str) -> Result<C64, Failure> {
    match text.split_once(',') {
        Some(_) => parse_pair(text, "--energy").map(|(a, b)| C64::new(a, b)),
        None => text.trim().parse().map(|x| C64::new(x, 0.0)).map_err(|_| Failure::input(format!("--energy: '{text}' is not a number"))),
    }
}

fn cmd_spectrum(src: &Source, samples: usize, energy: Option<f64>, format: Format, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let l = load(src, tol)?;
    let (bands, gap) = certify_gap(&l.model, energy, samples)?;
    let meta = metadata(
        "spectrum",
        l.input,
        l.sha,
        seed,
        tol,
        &[("samples", json!(samples)), ("energy", json!(energy)), ("format", json!(format!("{format:?}").to_lowercase()))],
    );
    match format {
        Format::Json => json_output(&meta, json!({ "gap": gap, "bands": bands }), false),
        Format::Csv => {
            let mut header = vec!["k".to_string()];
            header.extend((1..=l.model.dim_v).map(|j| format!("E_{j}")));
            let rows: Vec<Vec<String>> = bands
                .samples
                .iter()
                .map(|s| std::iter::once(num(s.k)).chain(s.energies.iter().map(|&e| num(e))).collect())
                .collect();
            let mut out = csv_output(&meta, &header, &rows)?;
            // The gap report follows the metadata as a second comment line.
            let first_nl = out.bytes.iter().position(|&b| b == b'\n').expect("metadata line") + 1;
            let gap_line = format!("# {}\n", json!({ "gap": gap }));
            out.bytes.splice(first_nl..first_nl, gap_line.into_bytes());
            Ok(out)
        }
    }
}

fn cmd_winding(src: &Source, samples: usize, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let l = load(src, tol)?;
    let cm = l.chiral()?;
    let mut w = winding_phase(cm, samples)?;
    let roots = winding_roots(cm, tol)?;
    if roots != w.method_phase {
        return Err(Error::NonConvergent(format!("winding methods disagree: phase {} roots {roots}", w.method_phase)).into());
    }
    w.method_roots = Some(roots);
    let meta = metadata("winding", l.input, l.sha, seed, tol, &[("samples", json!(samples))]);
    json_output(&meta, serde_json::to_value(&w).expect("serializes"), false)
}

fn cmd_edge(src: &Source, cells: Option<usize>, method: Method, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let l = load(src, tol)?;
    let cm = l.chiral()?;
    let report = match method {
        Method::Both => edge_modes(cm, cells, tol)?,
        Method::Companion => edge_modes_companion(cm, tol)?,
        Method::Truncated => edge_modes_truncated(cm, 0.0, cells, tol)?,
    };
    let meta = metadata(
        "edge",
        l.input,
        l.sha,
        seed,
        tol,
        &[("cells", json!(cells)), ("method", json!(format!("{method:?}").to_lowercase()))],
    );
    json_output(&meta, serde_json::to_value(&report).expect("serializes"), false)
}

/// Certified gap around zero, shrunk by 5% of its width and the sampling
/// allowance on each side.
fn default_window(model: &ModelParams) -> Result<(f64, f64), Failure> {
    let (bands, gap) = certify_gap(model, Some(0.0), DEFAULT_NUM_K)?;
    if !gap.gapped {
        return Err(Error::GapNotCertified { margin: gap.certificate_margin }.into());
    }
    let pad = (0.05 * (gap.e_plus - gap.e_minus)).max(1.001 * bands.allowance());
    Ok((gap.e_minus + pad, gap.e_plus - pad))
}

fn cmd_scan(src: &Source, cells: usize, window: Option<&str>, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let l = load(src, tol)?;
    let w = match window {
        Some(t) => parse_pair(t, "--window")?,
        None => default_window(&l.model)?,
    };
    let states = in_gap_scan(&l.model, cells, w)?;
    let meta = metadata("scan", l.input, l.sha, seed, tol, &[("cells", json!(cells)), ("window", json!([w.0, w.1]))]);
    let header: Vec<String> = ["energy", "localization_length", "side", "left_weight"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = states
        .iter()
        .map(|s| {
            let side = serde_json::to_value(s.side).expect("serializes").as_str().unwrap_or_default().to_string();
            vec![num(s.energy), num(s.localization_length), side, num(s.left_weight)]
        })
        .collect();
    csv_output(&meta, &header, &rows)
}

fn cmd_modes(src: &Source, energy: &str, steps: usize, samples: usize, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    use rand::{Rng, SeedableRng};
    let l = load(src, tol)?;
    let e = parse_energy(energy)?;
    let cm = build_companion(&l.model, e, tol)?;
    let split = spectral_split(&cm, tol, false)?;
    let seed_used = seed.unwrap_or(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_used);
    let probes: Vec<C64> = (0..samples)
        .map(|_| C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)))
        .collect();
    let residual = char_poly_residual(&l.model, e, &probes, tol)?;
    let clusters: Vec<Value> = split
        .eigenvalues
        .iter()
        .map(|c| {
            json!({
                "re": c.center.re,
                "im": c.center.im,
                "modulus": c.center.norm(),
                "multiplicity": c.multiplicity,
                "sector": sector_of(c.center, split.unit_circle_tolerance),
            })
        })
        .collect();
    let mut decaying = Vec::new();
    for j in 0..split.basis_down.ncols() {
        let mode = propagate(&cm, &split.basis_down.column(j).into_owned(), steps, tol)?;
        decaying.push(json!({
            "classification": mode.classification,
            "residual": mode.residual,
            "decay_rate": decay_rate(&mode, tol).ok(),
        }));
    }
    let (down, bloch, up) = split.dims();
    let edge_dim = if down + up == split.basis_down.nrows() { edge_space_dimension(&l.model, e, tol).ok() } else { None };
    let meta = metadata(
        "modes",
        l.input,
        l.sha,
        Some(seed_used),
        tol,
        &[("energy", json!([e.re, e.im])), ("steps", json!(steps)), ("samples", json!(samples))],
    );
    let body = json!({
        "eigenvalues": clusters,
        "dims": { "decrease": down, "bloch": bloch, "increase": up },
        "duality": duality_check(&split, tol),
        "char_poly_residual": residual,
        "edge_space_dimension": edge_dim,
        "decaying_modes": decaying,
    });
    json_output(&meta, body, false)
}

fn cmd_deform(src: &Source, grid: Option<&str>, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let l = load(src, tol)?;
    let cm = l.chiral()?;
    let d = full_deformation(cm, tol)?;
    let mut body = serde_json::to_value(&d).expect("serializes");
    body["winding_constant"] = json!(d.path.winding_constant());
    body["min_certificate"] = json!(d.path.min_certificate());
    if let Some(g) = grid {
        let (nt, nk) = parse_grid(g)?;
        let surfaces: Vec<Value> = d
            .path
            .stages
            .iter()
            .map(|s| json!({ "description": s.description, "points": s.surface(nt, nk) }))
            .collect();
        body["surfaces"] = Value::Array(surfaces);
    }
    let meta = metadata("deform", l.input, l.sha, seed, tol, &[("grid", json!(grid))]);
    json_output(&meta, body, false)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    src: &Source,
    count: Option<usize>,
    dim_v: usize,
    range: usize,
    scale: f64,
    gap_floor: f64,
    cells: usize,
    seed: Option<u64>,
    tol: &Tolerances,
) -> Result<Output, Failure> {
    if let Some(count) = count {
        if src.fixture.is_some() || src.path.is_some() || src.model.is_some() {
            return Err(Failure::input("--count selects an ensemble; do not also give a model"));
        }
        let seed = seed.unwrap_or(0);
        let spec = EnsembleSpec { seed, count, dim_v, range, coefficient_scale: scale, gap_floor };
        let spec_json = serde_json::to_string(&spec).expect("serializes");
        let report = verify_ensemble(&spec, cells, tol)?;
        let meta = metadata("verify", format!("ensemble:{spec_json}"), sha256_hex(spec_json.as_bytes()), Some(seed), tol, &[("cells", json!(cells))]);
        let failed = !report.all_passed();
        return json_output(&meta, json!({ "passed": !failed, "ensemble": report }), failed);
    }
    let l = load(src, tol)?;
    if l.members.is_empty() {
        l.chiral()?;
    }
    let cases: Vec<_> = l
        .members
        .par_iter()
        .map(|(label, cm)| verify_all(label, cm, cells, tol))
        .collect::<Result<Vec<_>, Error>>()?;
    let failed = cases.iter().any(|c| !c.passed());
    let meta = metadata("verify", l.input, l.sha, seed, tol, &[("cells", json!(cells))]);
    json_output(&meta, json!({ "passed": !failed, "cases": cases }), failed)
}

fn cmd_phase_diagram(path: Option<&PathBuf>, grid: &str, cells: Option<usize>, seed: Option<u64>, tol: &Tolerances) -> Result<Output, Failure> {
    let path = path.ok_or_else(|| Failure::input("phase-diagram needs a family file"))?;
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Failure::input(format!("{}: not UTF-8", path.display())))?;
    let fam = parse_family_doc(text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let (n1, n2) = parse_grid(grid)?;
    let (p1, p2) = (fam.param1.points(n1), fam.param2.points(n2));
    let points: Vec<(f64, f64)> = p1.iter().flat_map(|&a| p2.iter().map(move |&b| (a, b))).collect();
    let rows = points
        .par_iter()
        .map(|&(a, b)| -> Result<Vec<String>, Failure> {
            let cm = fam.model_at(a, b, tol)?;
            let gap = chiral_gap_certificate(&cm, DEFAULT_NUM_K)?;
            let (w, e) = if gap.certified() {
                let w = bulk_winding(&cm, tol).map(|w| w.winding.to_string()).unwrap_or_default();
                let e = edge_modes(&cm, cells, tol).map(|r| r.edge_index.to_string()).unwrap_or_default();
                (w, e)
            } else {
                (String::new(), String::new())
            };
            Ok(vec![num(a), num(b), w, e, num(gap.sampled_margin)])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let header = vec![fam.param1.name.clone(), fam.param2.name.clone(), "W".into(), "edge_index".into(), "gap_margin".into()];
    let meta = metadata(
        "phase-diagram",
        path.display().to_string(),
        sha256_hex(&bytes),
        seed,
        tol,
        &[("grid", json!([n1, n2])), ("cells", json!(cells))],
    );
    csv_output(&meta, &header, &rows)
}

pub fn execute(cli: &Cli, tol: &Tolerances) -> Result<Output, Failure> {
    let seed = cli.seed;
    match &cli.command {
        Command::Spectrum { source, samples, energy, format } => cmd_spectrum(source, *samples, *energy, *format, seed, tol),
        Command::Winding { source, samples } => cmd_winding(source, *samples, seed, tol),
        Command::Edge { source, cells, method } => cmd_edge(source, *cells, *method, seed, tol),
        Command::Scan { source, cells, window } => cmd_scan(source, *cells, window.as_deref(), seed, tol),
        Command::Modes { source, energy, steps, samples } => cmd_modes(source, energy, *steps, *samples, seed, tol),
        Command::Deform { source, grid } => cmd_deform(source, grid.as_deref(), seed, tol),
        Command::Verify { source, count, dim_v, range, scale, gap_floor, cells } => {
            cmd_verify(source, *count, *dim_v, *range, *scale, *gap_floor, *cells, seed, tol)
        }
        Command::PhaseDiagram { path, model, grid, cells } => cmd_phase_diagram(path.as_ref().or(model.as_ref()), grid, *cells, seed, tol),
    }
}

/// Parses arguments, runs the command inside a pool of the requested size,
/// writes the output and returns the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let (args, tol) = match extract_tolerances(args.into_iter().collect()) {
        Ok(x) => x,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let result = pool.install(|| execute(&cli, &tol));
    match result {
        Ok(out) => {
            let written = match &cli.out {
                Some(p) => std::fs::write(p, &out.bytes).map_err(|e| format!("{}: {e}", p.display())),
                None => {
                    use std::io::Write;
                    std::io::stdout().lock().write_all(&out.bytes).map_err(|e| e.to_string())
                }
            };
            if let Err(msg) = written {
                eprintln!("error: {msg}");
                return EXIT_INPUT;
            }
            if out.failed {
                EXIT_FAILED
            } else {
                EXIT_OK
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

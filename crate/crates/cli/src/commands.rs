use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use spatial_ident::forge::{self, ForgeOptions};
use spatial_ident::graph::{self, ProximityMatrix};
use spatial_ident::identify::{self, Tolerances};
use spatial_ident::io::{atomic_write, matrix_to_csv, read_matrix_csv};
use spatial_ident::mc::{self, Dataset, FitOptions};
use spatial_ident::models::{CarSPParams, ModelSpec};
use spatial_ident::specfun::{self, CovFamily};
use spatial_ident::Error;

use crate::{FitArgs, ModelGraph, SpecfunCommand};

pub struct CliError {
    code: u8,
    kind: String,
    message: String,
}

impl CliError {
    /// Bad input detected before any computation.
    fn input(e: Error) -> Self {
        Self { code: 1, kind: e.kind().into(), message: e.to_string() }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, kind: "usage".into(), message: msg.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.kind, "message": self.message, "exit_code": self.code}).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() { 1 } else { 2 };
        Self { code, kind: e.kind().into(), message: e.to_string() }
    }
}

type Res<T> = std::result::Result<T, CliError>;

fn load_spec(path: &Path) -> Res<ModelSpec> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(Error::Io(format!("{}: {e}", path.display()))))?;
    let spec: ModelSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::input(Error::Parse(format!("{}: {e}", path.display()))))?;
    spec.validate().map_err(CliError::input)?;
    Ok(spec)
}

fn load_graph(path: &Path) -> Res<ProximityMatrix> {
    let w = graph::load_graph(path).map_err(CliError::input)?;
    for warning in w.warnings() {
        log::warn!("{}: {warning}", path.display());
    }
    Ok(w)
}

fn load(io: &ModelGraph) -> Res<(ModelSpec, ProximityMatrix)> {
    Ok((load_spec(&io.model)?, load_graph(&io.graph)?))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Res<()> {
    let path = dir.join(name);
    atomic_write(&path, contents.as_bytes()).map_err(CliError::from)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Prints `body` and, with `--out`, also stores it as `name` there.
fn emit(out: Option<&Path>, name: &str, body: &str) -> Res<()> {
    if let Some(dir) = out {
        write(dir, name, body)?;
    }
    print!("{body}");
    Ok(())
}

pub fn check(io: &ModelGraph, tol_eig: Option<f64>, tol_param: Option<f64>, known: bool, out: Option<&Path>) -> Res<()> {
    let (spec, w) = load(io)?;
    let mut tol = Tolerances::default();
    if let Some(t) = tol_eig {
        tol.eig_rel = t;
    }
    if let Some(t) = tol_param {
        tol.ineq_rel = t;
    }
    for t in [tol.eig_rel, tol.ineq_rel] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::usage(format!("tolerances must be positive, got {t}")));
        }
    }
    let report = identify::check(&spec, &w, known, &tol)?;
    log::info!("\n{report}");
    emit(out, "report.json", &to_json(&report))
}

pub fn forge(io: &ModelGraph, construction: &str, opts: &ForgeOptions, out: Option<&Path>) -> Res<()> {
    if !forge::CONSTRUCTIONS.contains(&construction) {
        return Err(CliError::usage(format!(
            "unknown construction {construction}; expected one of {}",
            forge::CONSTRUCTIONS.join(", ")
        )));
    }
    let (spec, w) = load(io)?;
    let cert = forge::construct(construction, &spec, &w, opts)?;
    emit(out, "certificate.json", &to_json(&cert))?;
    if !cert.valid {
        return Err(Error::InvalidRegion(format!(
            "moment discrepancy {:.3e} exceeds tolerance",
            cert.max_moment_discrepancy
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct Sidecar {
    seed: u64,
    replicates: usize,
    n: usize,
    graph: String,
    model: ModelSpec,
}

pub fn simulate(io: &ModelGraph, replicates: usize, seed: u64, out: &Path) -> Res<()> {
    let (spec, w) = load(io)?;
    if replicates == 0 {
        return Err(CliError::usage("--replicates must be at least 1"));
    }
    let graph_path = fs::canonicalize(&io.graph).unwrap_or_else(|_| io.graph.clone());
    let data = mc::sample(&spec, &w, replicates, seed)?;
    let sidecar = Sidecar {
        seed,
        replicates,
        n: w.n(),
        graph: graph_path.display().to_string(),
        model: spec,
    };
    write(out, "Y.csv", &matrix_to_csv(&data.y))?;
    write(out, "Z.csv", &matrix_to_csv(&data.z))?;
    let body = to_json(&sidecar);
    write(out, "dataset.json", &body)?;
    print!("{body}");
    Ok(())
}

fn load_fit_inputs(args: &FitArgs) -> Res<(ModelSpec, Dataset, ProximityMatrix, FitOptions)> {
    let template = load_spec(&args.model)?;
    let side_path = args.data.join("dataset.json");
    let text = fs::read_to_string(&side_path)
        .map_err(|e| CliError::input(Error::Io(format!("{}: {e}", side_path.display()))))?;
    let side: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::input(Error::Parse(format!("{}: {e}", side_path.display()))))?;
    let graph_path = args.graph.clone().unwrap_or_else(|| PathBuf::from(&side.graph));
    let w = load_graph(&graph_path)?;
    let y = read_matrix_csv(&args.data.join("Y.csv")).map_err(CliError::input)?;
    let z = read_matrix_csv(&args.data.join("Z.csv")).map_err(CliError::input)?;
    let data = Dataset::new(y, z, Some(graph_path.display().to_string()), side.seed).map_err(CliError::input)?;
    if data.n() != w.n() {
        return Err(CliError::input(Error::Precondition(format!(
            "graph has {} locations but the data have {}",
            w.n(),
            data.n()
        ))));
    }
    if args.starts == 0 {
        return Err(CliError::usage("--starts must be at least 1"));
    }
    let opts = FitOptions { n_starts: args.starts, seed: args.seed, fixed: args.fixed.clone(), ..Default::default() };
    Ok((template, data, w, opts))
}

pub fn fit(args: &FitArgs) -> Res<()> {
    let (template, data, w, opts) = load_fit_inputs(args)?;
    let res = mc::fit_mle(&template, &data, &w, &opts)?;
    emit(args.out.as_deref(), "fit.json", &to_json(&res))
}

pub fn parse_grid(s: &str) -> Res<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::usage(format!("--beta-grid expects lo:hi:steps, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || !lo.is_finite() || !hi.is_finite() || (steps > 1 && hi < lo) {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
}

pub fn profile(args: &FitArgs, grid: &str) -> Res<()> {
    let grid = parse_grid(grid)?;
    let (template, data, w, opts) = load_fit_inputs(args)?;
    let points = mc::profile_beta(&template, &data, &w, &grid, &opts)?;
    if let Some(dir) = &args.out {
        let mut csv = String::from("beta,loglik,converged,error\n");
        for p in &points {
            let err = p.error.as_deref().unwrap_or("").replace(['"', ','], " ");
            writeln!(csv, "{:?},{:?},{},{}", p.beta, p.loglik, p.converged, err).expect("string write");
        }
        write(dir, "profile.csv", &csv)?;
    }
    emit(args.out.as_deref(), "profile.json", &to_json(&points))
}

fn parse_family(s: &str) -> Res<CovFamily> {
    let (name, arg) = match s.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    let num = |what: &str| -> Res<f64> {
        arg.and_then(|a| a.parse().ok())
            .ok_or_else(|| CliError::usage(format!("{name} needs a numeric {what}, e.g. {name}:1.0")))
    };
    let fam = match name {
        "exponential" => CovFamily::Exponential,
        "gaussian" => CovFamily::Gaussian,
        "spherical" => CovFamily::Spherical,
        "wave" => CovFamily::Wave,
        "powered_exponential" => CovFamily::PoweredExponential { c: num("exponent")? },
        "matern" => CovFamily::Matern { nu: num("smoothness")? },
        _ => return Err(CliError::usage(format!("unknown covariance family {name}"))),
    };
    fam.validate().map_err(CliError::input)?;
    Ok(fam)
}

pub fn specfun(cmd: &SpecfunCommand) -> Res<()> {
    let eval = |xs: &[f64], f: &dyn Fn(f64) -> spatial_ident::Result<f64>| -> Res<Vec<Value>> {
        xs.iter().map(|&x| Ok(json!({"x": x, "value": f(x)?}))).collect()
    };
    let body = match cmd {
        SpecfunCommand::BesselK { nu, x } => {
            json!({"function": "bessel_k", "nu": nu, "values": eval(x, &|v| specfun::bessel_k(*nu, v))?})
        }
        SpecfunCommand::Matern { phi, nu, x } => {
            json!({"function": "matern", "phi": phi, "nu": nu, "values": eval(x, &|v| specfun::matern(*phi, *nu, v))?})
        }
        SpecfunCommand::LinIndep { family, psi, x, intercept, rank_tol } => {
            let fam = parse_family(family)?;
            let v = specfun::k_linear_independence(fam, psi, x, *intercept, *rank_tol)?;
            json!({"function": "k_linear_independence", "family": fam, "psi": psi, "result": v})
        }
    };
    print!("{}", to_json(&body));
    Ok(())
}

pub fn graph_info(path: &Path, tol_eig: Option<f64>) -> Res<()> {
    let w = load_graph(path)?;
    let tol = tol_eig.unwrap_or(graph::DEFAULT_EIG_TOL);
    let d = graph::degree_matrix(&w);
    let comps = graph::connected_components(&w);
    let lap = graph::laplacian_spectrum(&w);
    let normalized = graph::normalized_spectrum(&w, &d).ok().map(|s| s.eigenvalues);
    let body = json!({
        "n": w.n(),
        "binary": w.is_binary(),
        "complete_binary": w.is_complete_binary(),
        "degrees": d.diag,
        "components": comps.blocks,
        "normalized_spectrum": normalized,
        "normalized_distinct": normalized.as_ref().map(|v| graph::count_distinct(v, tol)),
        "laplacian_spectrum": lap.eigenvalues,
        "laplacian_distinct": graph::count_distinct(&lap.eigenvalues, tol),
        "warnings": w.warnings(),
    });
    print!("{}", to_json(&body));
    Ok(())
}

fn verdict_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// CAR condition table on the example graphs (a)..(d).
pub fn demo_table() -> Res<String> {
    let p = CarSPParams { tau_u: 1.0, tau_z: 1.0, phi_u: 0.5, phi_z: 0.5, rho: 0.3, sigma2_eps: 1.0, beta: 1.0 };
    let tol = Tolerances::default();
    let mut csv = String::from("graph,n,edges,components,condition,measured,satisfied,theorem,verdict\n");
    for label in ['a', 'b', 'c', 'd'] {
        let w = graph::example_graph(label).expect("known label");
        let edges = (0..w.n()).map(|i| (i + 1..w.n()).filter(|&j| w.get(i, j) != 0.0).count()).sum::<usize>();
        let comps = graph::connected_components(&w).blocks.len();
        let r = identify::check_car(&p, &w, &tol)?;
        let c = r.condition("indirect_neighbor_pair").expect("binary CAR routes to the neighbour condition");
        writeln!(
            csv,
            "{label},{},{edges},{comps},{},{},{},{},{}",
            w.n(),
            c.name,
            c.measured,
            c.pass,
            r.theorem,
            verdict_name(&r.verdict)
        )
        .expect("string write");
    }
    Ok(csv)
}

pub fn demo(out: Option<&Path>) -> Res<()> {
    emit(out, "example_graphs.csv", &demo_table()?)
}

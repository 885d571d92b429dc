use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use robinheat::kernel::{Field, SpectralKernel, TruncationPolicy};
use robinheat::mesh::{interval_mesh, read_mesh, rectangle_mesh, write_mesh, Mesh};
use robinheat::oracle::{self, ModeKind};
use robinheat::spectral::{read_spectrum, solve_spectrum, write_spectrum};
use robinheat::verify::{run_all, Config};
use robinheat::{Error, RobinForm};

#[derive(Parser)]
#[command(
    name = "robinheat",
    version,
    about = "Robin heat kernels on intervals and rectangles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mesh file
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Solve for the lowest eigenpairs of a Robin problem
    Eigs(EigsArgs),
    /// Write a kernel slice H(·, y, t)
    Kernel(KernelArgs),
    /// Propagate initial data through the heat semigroup
    Evolve(EvolveArgs),
    /// Run the verification suite
    Verify(VerifyArgs),
    /// Dump exact spectra
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Subcommand)]
enum MeshCommand {
    Interval {
        #[arg(long)]
        length: f64,
        #[arg(long)]
        cells: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Rect {
        #[arg(long)]
        lx: f64,
        #[arg(long)]
        ly: f64,
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EigsArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long)]
    k: usize,
    /// Spectrum file for later kernel/evolve runs
    #[arg(long)]
    out_spec: Option<PathBuf>,
    /// CSV of index, eigenvalue and residual (stdout if neither output is given)
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct KernelSource {
    #[arg(long)]
    spec: PathBuf,
    /// Mesh the spectrum was computed on
    #[arg(long)]
    mesh: PathBuf,
    /// Truncate at a modeled tail below this value instead of using every mode
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    source: KernelSource,
    #[arg(long)]
    t: f64,
    /// Fixed second argument y (one coordinate per dimension)
    #[arg(long, num_args = 1..=2, required = true)]
    fix_y: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("initial").required(true).args(["u0", "u0_const"])))]
struct EvolveArgs {
    #[command(flatten)]
    source: KernelSource,
    /// Nodal initial values, one per line
    #[arg(long)]
    u0: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    u0_const: Option<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["config", "default"])))]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the built-in configuration
    #[arg(long)]
    default: bool,
    /// JSON report path
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the seed from the configuration and environment
    #[arg(long)]
    seed: Option<u64>,
    /// Omit runtimes so reports are byte-identical across runs
    #[arg(long)]
    no_timings: bool,
}

#[derive(Subcommand)]
enum OracleCommand {
    Interval {
        #[arg(long)]
        length: f64,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Rect {
        #[arg(long)]
        lx: f64,
        #[arg(long)]
        ly: f64,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes 2 and 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Failure {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Mesh(cmd) => cmd_mesh(cmd),
        Command::Eigs(args) => cmd_eigs(args),
        Command::Kernel(args) => cmd_kernel(args),
        Command::Evolve(args) => cmd_evolve(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Oracle(cmd) => cmd_oracle(cmd),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn header(extra: &[(&str, String)]) -> String {
    let argv: Vec<String> = std::env::args().collect();
    let mut out = format!(
        "# robinheat {}\n# command: {}\n",
        env!("CARGO_PKG_VERSION"),
        argv.join(" ")
    );
    for (k, v) in extra {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--{name} must be positive, got {v}")))
    }
}

fn cmd_mesh(cmd: MeshCommand) -> CmdResult {
    let (mesh, out) = match cmd {
        MeshCommand::Interval { length, cells, out } => (interval_mesh(length, cells).map_err(Failure::usage)?, out),
        MeshCommand::Rect { lx, ly, nx, ny, out } => (rectangle_mesh(lx, ly, nx, ny).map_err(Failure::usage)?, out),
    };
    write_mesh(&mesh, &out)?;
    eprintln!(
        "wrote {} ({} vertices, {} cells, id {})",
        out.display(),
        mesh.num_vertices(),
        mesh.cells().len(),
        mesh.hash_id()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eigs(args: EigsArgs) -> CmdResult {
    if !args.alpha.is_finite() {
        return Err(Failure::Usage("--alpha must be finite".into()));
    }
    let mesh = read_mesh(&args.mesh)?;
    if args.k == 0 || args.k > mesh.num_vertices() {
        return Err(Failure::Usage(format!(
            "--k must lie in 1..={} (the number of mesh vertices), got {}",
            mesh.num_vertices(),
            args.k
        )));
    }
    let form = RobinForm::assemble(&mesh, args.alpha)?;
    let spectrum = solve_spectrum(&form, args.k)?;
    if let Some(path) = &args.out_spec {
        write_spectrum(&spectrum, path)?;
    }
    if args.out_csv.is_some() || args.out_spec.is_none() {
        let mut csv = header(&[
            ("mesh", spectrum.mesh_ref.clone()),
            ("alpha", args.alpha.to_string()),
            ("k_converged", spectrum.k_converged.to_string()),
        ]);
        csv.push_str("index,lambda,residual\n");
        for (i, p) in spectrum.pairs.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{:e}", i + 1, p.lambda, p.residual);
        }
        emit(args.out_csv.as_deref(), &csv)?;
    }
    if spectrum.k_converged < spectrum.k_requested {
        eprintln!(
            "warning: only {} of {} eigenpairs met the residual tolerance",
            spectrum.k_converged, spectrum.k_requested
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_kernel(source: &KernelSource) -> Result<SpectralKernel, Failure> {
    let policy = match source.eps {
        Some(eps) => {
            positive("eps", eps)?;
            TruncationPolicy::TailBounded(eps)
        }
        None => TruncationPolicy::AllModes,
    };
    let mesh: Mesh = read_mesh(&source.mesh)?;
    let spectrum = read_spectrum(&source.spec)?;
    SpectralKernel::with_policy(spectrum, mesh, policy).map_err(|e| Failure::Runtime(e.to_string()))
}

fn coords_csv(mesh: &Mesh, v: usize) -> String {
    mesh.coords(v)
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn coord_columns(dim: usize) -> &'static str {
    if dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn warn_t_min(kernel: &SpectralKernel, t: f64) -> Option<String> {
    (t < kernel.t_min()).then(|| {
        let msg = format!(
            "t = {t} is below t_min = {:.6e}; the resolved modes do not capture the kernel at this time",
            kernel.t_min()
        );
        eprintln!("warning: {msg}");
        msg
    })
}

fn cmd_kernel(args: KernelArgs) -> CmdResult {
    positive("t", args.t)?;
    let kernel = load_kernel(&args.source)?;
    let dim = kernel.m();
    if args.fix_y.len() != dim {
        return Err(Failure::Usage(format!(
            "--fix-y needs {dim} coordinate(s) for a {dim}D mesh, got {}",
            args.fix_y.len()
        )));
    }
    let warning = warn_t_min(&kernel, args.t);
    let tr = kernel.truncation(args.t)?;
    let values = kernel
        .slice(&args.fix_y, args.t)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!("N = {}, tail bound = {:e}", tr.n, tr.tail);
    let y = args.fix_y.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    let mut meta = vec![
        ("t", args.t.to_string()),
        ("y", y),
        ("N", tr.n.to_string()),
        ("tail_bound", format!("{:e}", tr.tail)),
        ("t_min", format!("{:e}", kernel.t_min())),
    ];
    if tr.flagged {
        meta.push(("tail_flag", "tail target not met with resolved modes".into()));
    }
    if let Some(w) = warning {
        meta.push(("warning", w));
    }
    let mut csv = header(&meta);
    let _ = writeln!(csv, "{},value", coord_columns(dim));
    for (v, h) in values.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", coords_csv(kernel.mesh(), v), h);
    }
    emit(args.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evolve(args: EvolveArgs) -> CmdResult {
    for &t in &args.times {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Failure::Usage(format!("--times must be finite and ≥ 0, got {t}")));
        }
    }
    let kernel = load_kernel(&args.source)?;
    let n = kernel.mesh().num_vertices();
    let u0 = match (&args.u0, args.u0_const) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
            Field::parse(&text).map_err(|e| Failure::Runtime(e.with_path(path).to_string()))?
        }
        (None, Some(c)) => Field::constant(n, c).map_err(Failure::usage)?,
        (None, None) => unreachable!("clap enforces one initial condition"),
    };
    if u0.len() != n {
        return Err(Failure::Runtime(format!(
            "initial data has {} values, mesh has {n} vertices",
            u0.len()
        )));
    }
    let mut meta = Vec::new();
    let mut rows = String::new();
    for &t in &args.times {
        let (n_used, tail) = if t > 0.0 {
            let tr = kernel.truncation(t)?;
            (tr.n, format!("{:e}", tr.tail))
        } else {
            (kernel.num_modes(), "n/a (projection onto resolved modes)".to_string())
        };
        if t > 0.0 {
            if let Some(w) = warn_t_min(&kernel, t) {
                meta.push(("warning", w));
            }
        }
        eprintln!("t = {t}: N = {n_used}, tail bound = {tail}");
        meta.push(("N", format!("{n_used} at t = {t}")));
        meta.push(("tail_bound", format!("{tail} at t = {t}")));
        let u = kernel.propagate(&u0, t)?;
        for (v, val) in u.values.iter().enumerate() {
            let _ = writeln!(rows, "{},{},{}", t, coords_csv(kernel.mesh(), v), val);
        }
    }
    meta.push(("t_min", format!("{:e}", kernel.t_min())));
    let mut csv = header(&meta);
    let _ = writeln!(csv, "t,{},value", coord_columns(kernel.m()));
    csv.push_str(&rows);
    emit(args.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let mut base = Config::default();
    base.apply_env_seed(std::env::var("ROBIN_SEED").ok().as_deref())?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            Config::parse_onto(base, &text)?
        }
        None => base,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_timings {
        cfg.timings = false;
    }
    let report = run_all(&cfg)?;
    print!("{}", report.table());
    if let Some(path) = &args.report {
        fs::write(path, report.to_json())
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// `# key = value` lines written above a CSV table.
type Header = Vec<(&'static str, String)>;

fn cmd_oracle(cmd: OracleCommand) -> CmdResult {
    let (rows, out, meta): (Vec<(f64, ModeKind)>, Option<PathBuf>, Header) = match cmd {
        OracleCommand::Interval { length, alpha, k, out } => {
            validate_oracle(&[("length", length)], alpha, k)?;
            let modes = oracle::interval_spectrum(length, alpha, k)?;
            let rows = modes.iter().map(|m| (m.lambda, m.kind)).collect();
            (
                rows,
                out,
                vec![
                    ("domain", format!("interval L = {length}")),
                    ("alpha", alpha.to_string()),
                ],
            )
        }
        OracleCommand::Rect { lx, ly, alpha, k, out } => {
            validate_oracle(&[("lx", lx), ("ly", ly)], alpha, k)?;
            let modes = oracle::rectangle_spectrum(lx, ly, alpha, k)?;
            let rows = modes.iter().map(|m| (m.lambda, ModeKind::of(m.lambda))).collect();
            (
                rows,
                out,
                vec![
                    ("domain", format!("rectangle {lx} x {ly}")),
                    ("alpha", alpha.to_string()),
                ],
            )
        }
    };
    let mut csv = header(&meta);
    csv.push_str("index,lambda,kind\n");
    for (i, (lambda, kind)) in rows.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", i + 1, lambda, kind);
    }
    emit(out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn validate_oracle(sides: &[(&str, f64)], alpha: f64, k: usize) -> Result<(), Failure> {
    for &(name, v) in sides {
        positive(name, v)?;
    }
    if !alpha.is_finite() {
        return Err(Failure::Usage("--alpha must be finite".into()));
    }
    if k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    Ok(())
}

use clap::{Args, Parser, Subcommand};
use dilab_core::study::{emit_report, fit_orders, run_study, Experiment, StudyConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Convergence studies for diffuse-interface vector Helmholtz problems on a torus.
#[derive(Parser)]
#[command(name = "dilab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Errors of the sampled interface variables and discrete normals.
    E1(StudyArgs),
    /// Solves with analytic interface variables.
    E2(StudyArgs),
    /// Solves with sampled interface variables and discrete normals.
    E3(StudyArgs),
    /// E1, E2 and E3 on shared meshes.
    All(StudyArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Relation exponents, comma separated, or `all`.
    #[arg(long)]
    relation: Option<String>,
    #[arg(long)]
    h_min: Option<String>,
    #[arg(long)]
    h_max: Option<String>,
    /// analytic, A or B; comma separated for several E3 runs.
    #[arg(long)]
    normal_source: Option<String>,
    /// analytic, sampled-analytic or sampled-mesh.
    #[arg(long)]
    variable_source: Option<String>,
    #[arg(long)]
    anchor_h: Option<String>,
    #[arg(long)]
    anchor_eps: Option<String>,
    #[arg(long)]
    cpen: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    /// none, jacobi or block-jacobi.
    #[arg(long)]
    preconditioner: Option<String>,
    /// recovered or element.
    #[arg(long)]
    gradient_mode: Option<String>,
    /// analytic or discrete.
    #[arg(long)]
    rhs_weight: Option<String>,
    /// composed or interpolated.
    #[arg(long)]
    phase_eval: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    /// Flat `key = value` file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Writes VTK files, to `<outdir>/vtk` unless a directory is given.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    export_vtk: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// Writes 0 into the seconds column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

impl StudyArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let flags = [
            ("relation", &self.relation),
            ("h-min", &self.h_min),
            ("h-max", &self.h_max),
            ("normal-source", &self.normal_source),
            ("variable-source", &self.variable_source),
            ("anchor-h", &self.anchor_h),
            ("anchor-eps", &self.anchor_eps),
            ("cpen", &self.cpen),
            ("delta", &self.delta),
            ("tol", &self.tol),
            ("max-iter", &self.max_iter),
            ("preconditioner", &self.preconditioner),
            ("gradient-mode", &self.gradient_mode),
            ("rhs-weight", &self.rhs_weight),
            ("phase-eval", &self.phase_eval),
            ("outdir", &self.outdir),
            ("export-vtk", &self.export_vtk),
            ("threads", &self.threads),
        ];
        let mut set: Vec<(&'static str, String)> =
            flags.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect();
        if self.no_timing {
            set.push(("timing", "false".into()));
        }
        set
    }

    fn config(&self) -> Result<StudyConfig, String> {
        let mut cfg = StudyConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| e.to_string())?;
        }
        let overrides = self.overrides();
        // The output directory decides the default VTK location.
        for (key, value) in overrides.iter().filter(|(k, _)| *k == "outdir") {
            cfg.set(key, value).map_err(|e| e.to_string())?;
        }
        for (key, value) in overrides.iter().filter(|(k, _)| *k != "outdir") {
            cfg.set(key, value).map_err(|e| e.to_string())?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<(), String> {
    let (args, experiments) = match &command {
        Command::E1(a) => (a, vec![Experiment::E1]),
        Command::E2(a) => (a, vec![Experiment::E2]),
        Command::E3(a) => (a, vec![Experiment::E3]),
        Command::All(a) => (a, vec![Experiment::E1, Experiment::E2, Experiment::E3]),
    };
    let cfg = args.config()?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    let records = run_study(&cfg, &experiments).map_err(|e| e.to_string())?;
    let written = emit_report(&records, &cfg.outdir).map_err(|e| e.to_string())?;
    for row in fit_orders(&records) {
        let normal = row.normal_source.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{} p={} {:<2} {:<8} order(eps) = {:.3}  order(h) = {:.3}",
            row.experiment, row.relation_p, normal, row.error, row.order_eps, row.order_h
        );
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("dilab: {message}");
            ExitCode::FAILURE
        }
    }
}

//! Configuration-driven command-line front end.
//!
//! Each subcommand reads one JSON run configuration (schema version 1),
//! executes, and writes machine-readable outputs into one directory:
//! `result.json` (the headline numbers), CSV dumps of fields and plot
//! data, `manifest.json` (name, SHA-256, and size of every produced file),
//! and `metadata.json` (timestamps and provenance — deliberately excluded
//! from the manifest so reruns of the same configuration are
//! byte-identical in every hashed file).
//!
//! Exit codes: 0 on success, 1 on any validation failure (unreadable or
//! malformed config, inadmissible problem, bad field reference), 2 when a
//! solver fails to converge — in which case the outputs are still written,
//! flagged as non-converged.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytic::ScalarSpec;
use crate::derivative::{derivative_report, transported_eigenvalue, DerivativeReport};
use crate::eigen::{
    check_hypotheses, estimate_sobolev_constant, solve_principal, EigenResult, HypothesisReport,
    ProblemData, SobolevExponent, SolverConfig,
};
use crate::flow::{standard_library, DeformationField, FlowConfig};
use crate::io::{write_cell_csv, write_csv_rows, write_json, write_manifest, write_node_csv};
use crate::mesh::Mesh;
use crate::optimizer::{alternate_minimize, OptConfig, OptResult};
use crate::rearrangement::class_of;
use crate::{Error, Result};

/// Eigenvalue tools: solve, optimize over rearrangements, differentiate
/// under deformations, estimate Sobolev constants, check admissibility.
#[derive(Debug, Parser)]
#[command(name = "plapopt", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the principal eigenproblem for the configured (p, q, g, V).
    Solve(RunArgs),
    /// Minimize λ over the rearrangement classes of the configured g, V.
    Optimize(RunArgs),
    /// Evaluate the derivative formulas and finite-difference oracle.
    Derivative(RunArgs),
    /// Estimate a Sobolev embedding constant.
    Sobolev(RunArgs),
    /// Evaluate the admissibility hypotheses and report the margin.
    Check(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the JSON run configuration (schema 1).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Solver seed override (affects randomized initialization only).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    pub fn run(&self) -> Result<()> {
        match &self.command {
            Command::Solve(args) => execute("solve", args),
            Command::Optimize(args) => execute("optimize", args),
            Command::Derivative(args) => execute("derivative", args),
            Command::Sobolev(args) => execute("sobolev", args),
            Command::Check(args) => execute("check", args),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration schema.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must be 1.
    pub schema: u32,
    /// Optional echo of the intended subcommand; rejected when it does not
    /// match the one actually invoked.
    #[serde(default)]
    pub command: Option<String>,
    pub mesh: MeshBlock,
    #[serde(default)]
    pub problem: Option<ProblemBlock>,
    #[serde(default)]
    pub sobolev: Option<SobolevBlock>,
    /// Deformation field for the derivative subcommand: a library name or
    /// an inline field object.
    #[serde(default)]
    pub field: Option<FieldBlock>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub optimizer: OptConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    /// Finite-difference step for the derivative subcommand.
    #[serde(default)]
    pub t_fd: Option<f64>,
    /// λ(t) sweep grid for the derivative subcommand's plot data.
    #[serde(default)]
    pub t_values: Option<Vec<f64>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Solver seed (the `--seed` flag takes precedence).
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub dimension: usize,
    pub extents: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub p: f64,
    pub q: f64,
    pub g: ScalarSpec,
    pub v: ScalarSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevBlock {
    pub p: f64,
    pub r: SobolevExponentSpec,
}

/// `"sup"` or a finite exponent.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SobolevExponentSpec {
    Finite(f64),
    Named(String),
}

impl SobolevExponentSpec {
    fn resolve(&self) -> Result<SobolevExponent> {
        match self {
            SobolevExponentSpec::Finite(r) => Ok(SobolevExponent::Finite(*r)),
            SobolevExponentSpec::Named(name) if name == "sup" => Ok(SobolevExponent::Sup),
            SobolevExponentSpec::Named(name) => Err(Error::Config(format!(
                "unknown Sobolev exponent {name:?} (expected a number or \"sup\")"
            ))),
        }
    }
}

/// A deformation field reference: the name of a library field, or an
/// inline definition.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FieldBlock {
    Library(String),
    Inline(DeformationField),
}

impl FieldBlock {
    fn resolve(&self) -> Result<DeformationField> {
        match self {
            FieldBlock::Library(name) => standard_library()
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, f)| f)
                .ok_or_else(|| {
                    let known: Vec<&str> =
                        standard_library().iter().map(|(n, _)| *n).collect();
                    Error::Config(format!(
                        "unknown field {name:?}; the library provides {known:?}"
                    ))
                }),
            FieldBlock::Inline(field) => {
                field.validate()?;
                Ok(field.clone())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Result summaries (the schemas of result.json).

#[derive(Debug, Serialize)]
struct SolveSummary {
    lambda: f64,
    lambda_epsilon: f64,
    residual: f64,
    normalization_defect: f64,
    iterations: usize,
    epsilon_final: f64,
    converged: bool,
}

impl SolveSummary {
    fn of(eig: &EigenResult) -> Self {
        SolveSummary {
            lambda: eig.lambda,
            lambda_epsilon: eig.lambda_epsilon,
            residual: eig.residual,
            normalization_defect: eig.normalization_defect,
            iterations: eig.iterations,
            epsilon_final: eig.epsilon_final,
            converged: eig.converged,
        }
    }
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    lambda: f64,
    iterations: usize,
    converged: bool,
    comonotonicity_g: f64,
    comonotonicity_v: f64,
    total_changed_cells_g: usize,
    total_changed_cells_v: usize,
    p: f64,
    q: f64,
}

impl OptimizeSummary {
    fn of(result: &OptResult) -> Self {
        OptimizeSummary {
            lambda: result.state.lambda,
            iterations: result.state.iteration,
            converged: result.converged,
            comonotonicity_g: result.comonotonicity_g,
            comonotonicity_v: result.comonotonicity_v,
            total_changed_cells_g: result.state.swap_history.iter().map(|s| s.g).sum(),
            total_changed_cells_v: result.state.swap_history.iter().map(|s| s.v).sum(),
            p: result.p,
            q: result.q,
        }
    }
}

#[derive(Debug, Serialize)]
struct SobolevSummary {
    p: f64,
    r_kind: &'static str,
    r_value: Option<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct CheckSummary {
    #[serde(flatten)]
    report: HypothesisReport,
    passes: bool,
}

#[derive(Debug, Serialize)]
struct Metadata {
    timestamp_unix_seconds: u64,
    command: String,
    config_path: String,
    version: &'static str,
}

// ---------------------------------------------------------------------------
// Execution.

fn execute(command: &str, args: &RunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: RunConfig = serde_json::from_str(&text)?;
    if config.schema != 1 {
        return Err(Error::Config(format!(
            "unsupported schema version {} (this build reads schema 1)",
            config.schema
        )));
    }
    if let Some(declared) = &config.command {
        if declared != command {
            return Err(Error::Config(format!(
                "configuration declares command {declared:?} but {command:?} was invoked"
            )));
        }
    }
    if let Some(seed) = args.seed.or(config.seed) {
        config.solver.seed = seed;
    }
    let mesh = Mesh::build(
        config.mesh.dimension,
        &config.mesh.extents,
        &config.mesh.resolution,
    )?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("plapopt_out"));
    std::fs::create_dir_all(&out_dir)?;

    let mut written: Vec<String> = Vec::new();
    let outcome = match command {
        "solve" => run_solve(&config, &mesh, &out_dir, &mut written),
        "optimize" => run_optimize(&config, &mesh, &out_dir, &mut written),
        "derivative" => run_derivative(&config, &mesh, &out_dir, &mut written),
        "sobolev" => run_sobolev(&config, &mesh, &out_dir, &mut written),
        "check" => run_check(&config, &mesh, &out_dir, &mut written),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    };

    // Write the manifest and metadata even for non-converged runs (their
    // partial outputs are retained and flagged); skip them only when the
    // command failed validation outright.
    match &outcome {
        Ok(()) | Err(Error::NotConverged(_)) => {
            write_manifest(&out_dir, &written)?;
            let metadata = Metadata {
                timestamp_unix_seconds: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                command: command.to_string(),
                config_path: args.config.display().to_string(),
                version: env!("CARGO_PKG_VERSION"),
            };
            write_json(&out_dir.join("metadata.json"), &metadata)?;
        }
        Err(_) => {}
    }
    outcome
}

/// Builds the problem from the configuration's problem block, enforcing
/// the (H1) exponent arithmetic up front so misconfigured runs fail fast
/// with a validation error naming the violated hypothesis.
fn build_problem(config: &RunConfig, mesh: &Mesh) -> Result<ProblemData> {
    let block = config.problem.as_ref().ok_or_else(|| {
        Error::Config("this command requires a \"problem\" block".into())
    })?;
    let problem = ProblemData::new(
        block.p,
        block.q,
        block.g.sample(mesh)?,
        block.v.sample(mesh)?,
    );
    problem.validate(mesh)?;
    if !problem.h1_holds(mesh.dimension) {
        let n = mesh.dimension;
        return Err(Error::HypothesisH1(format!(
            "q = {} is incompatible with p = {} in dimension {n}: (H1) requires q > N/p \
             when p ≤ N and q = 1 when p > N",
            problem.q, problem.p
        )));
    }
    Ok(problem)
}

fn record(written: &mut Vec<String>, name: &str) -> String {
    written.push(name.to_string());
    name.to_string()
}

fn run_solve(
    config: &RunConfig,
    mesh: &Mesh,
    out_dir: &Path,
    written: &mut Vec<String>,
) -> Result<()> {
    let problem = build_problem(config, mesh)?;
    let eig = solve_principal(mesh, &problem, &config.solver)?;
    write_json(&out_dir.join(record(written, "result.json")), &SolveSummary::of(&eig))?;
    write_node_csv(&out_dir.join(record(written, "u.csv")), mesh, &eig.u)?;
    write_cell_csv(&out_dir.join(record(written, "g.csv")), mesh, &problem.g)?;
    write_cell_csv(&out_dir.join(record(written, "v.csv")), mesh, &problem.v)?;
    write_csv_rows(
        &out_dir.join(record(written, "plot.csv")),
        "iter,lambda",
        eig.lambda_history
            .iter()
            .enumerate()
            .map(|(k, lambda)| format!("{},{lambda}", k + 1)),
    )?;
    if !eig.converged {
        return Err(Error::NotConverged(
            "eigensolve hit the iteration cap; outputs were written and flagged".into(),
        ));
    }
    Ok(())
}

fn run_optimize(
    config: &RunConfig,
    mesh: &Mesh,
    out_dir: &Path,
    written: &mut Vec<String>,
) -> Result<()> {
    let problem = build_problem(config, mesh)?;
    let g_class = class_of(mesh, &problem.g)?;
    let v_class = class_of(mesh, &problem.v)?;
    let result = alternate_minimize(
        mesh,
        problem.p,
        problem.q,
        &g_class,
        &v_class,
        &config.solver,
        &config.optimizer,
    )?;
    write_json(
        &out_dir.join(record(written, "result.json")),
        &OptimizeSummary::of(&result),
    )?;
    write_node_csv(&out_dir.join(record(written, "u.csv")), mesh, &result.state.u)?;
    write_cell_csv(&out_dir.join(record(written, "g_final.csv")), mesh, &result.state.g)?;
    write_cell_csv(&out_dir.join(record(written, "v_final.csv")), mesh, &result.state.v)?;
    write_csv_rows(
        &out_dir.join(record(written, "plot.csv")),
        "iteration,lambda,changed_cells_g,changed_cells_v",
        result
            .state
            .lambda_history
            .iter()
            .zip(&result.state.swap_history)
            .enumerate()
            .map(|(k, (lambda, swaps))| format!("{},{lambda},{},{}", k + 1, swaps.g, swaps.v)),
    )?;
    if !result.converged {
        return Err(Error::NotConverged(
            "optimizer hit its iteration cap; outputs were written and flagged".into(),
        ));
    }
    Ok(())
}

fn run_derivative(
    config: &RunConfig,
    mesh: &Mesh,
    out_dir: &Path,
    written: &mut Vec<String>,
) -> Result<()> {
    let problem_block = config.problem.as_ref().ok_or_else(|| {
        Error::Config("the derivative command requires a \"problem\" block".into())
    })?;
    // Fail fast with a clear message before building anything heavier.
    if !problem_block.g.is_smooth() || !problem_block.v.is_smooth() {
        return Err(Error::Config(
            "the derivative command transports coefficients along the flow and therefore \
             requires smooth (constant or radial) g and V specs"
                .into(),
        ));
    }
    let problem = build_problem(config, mesh)?;
    let field = config
        .field
        .as_ref()
        .ok_or_else(|| Error::Config("the derivative command requires a \"field\" block".into()))?
        .resolve()?;
    let t_fd = config.t_fd.unwrap_or(1e-3);
    let (report, base): (DerivativeReport, EigenResult) = derivative_report(
        mesh,
        problem.p,
        problem.q,
        &problem_block.g,
        &problem_block.v,
        &field,
        t_fd,
        &config.solver,
        &config.flow,
    )?;
    write_json(&out_dir.join(record(written, "result.json")), &report)?;
    write_node_csv(&out_dir.join(record(written, "u.csv")), mesh, &base.u)?;

    let default_sweep = vec![-0.1, -0.05, -0.025, 0.0, 0.025, 0.05, 0.1];
    let sweep = config.t_values.clone().unwrap_or(default_sweep);
    let mut rows = Vec::with_capacity(sweep.len());
    for &t in &sweep {
        let lambda = if t == 0.0 {
            base.lambda
        } else {
            transported_eigenvalue(
                mesh,
                problem.p,
                problem.q,
                &problem_block.g,
                &problem_block.v,
                &field,
                t,
                &config.solver,
                &config.flow,
                &base,
            )?
        };
        rows.push(format!("{t},{lambda}"));
    }
    write_csv_rows(&out_dir.join(record(written, "plot.csv")), "t,lambda", rows)?;
    Ok(())
}

fn run_sobolev(
    config: &RunConfig,
    mesh: &Mesh,
    out_dir: &Path,
    written: &mut Vec<String>,
) -> Result<()> {
    let block = config.sobolev.as_ref().ok_or_else(|| {
        Error::Config("the sobolev command requires a \"sobolev\" block".into())
    })?;
    let exponent = block.r.resolve()?;
    let estimate = estimate_sobolev_constant(mesh, block.p, exponent, &config.solver)?;
    let summary = SobolevSummary {
        p: block.p,
        r_kind: match exponent {
            SobolevExponent::Finite(_) => "finite",
            SobolevExponent::Sup => "sup",
        },
        r_value: match exponent {
            SobolevExponent::Finite(r) => Some(r),
            SobolevExponent::Sup => None,
        },
        value: estimate.value,
        iterations: estimate.iterations,
        converged: estimate.converged,
    };
    write_json(&out_dir.join(record(written, "result.json")), &summary)?;
    write_node_csv(&out_dir.join(record(written, "u.csv")), mesh, &estimate.u)?;
    if !estimate.converged {
        return Err(Error::NotConverged(
            "Sobolev minimization hit the iteration cap; outputs were written and flagged".into(),
        ));
    }
    Ok(())
}

fn run_check(
    config: &RunConfig,
    mesh: &Mesh,
    out_dir: &Path,
    written: &mut Vec<String>,
) -> Result<()> {
    let block = config.problem.as_ref().ok_or_else(|| {
        Error::Config("the check command requires a \"problem\" block".into())
    })?;
    // The check command *reports* hypothesis failures instead of erroring,
    // so it builds the problem without the fail-fast (H1) gate.
    let problem = ProblemData::new(
        block.p,
        block.q,
        block.g.sample(mesh)?,
        block.v.sample(mesh)?,
    );
    let report = check_hypotheses(mesh, &problem, &config.solver)?;
    let passes = report.passes();
    write_json(
        &out_dir.join(record(written, "result.json")),
        &CheckSummary { report, passes },
    )?;
    write_cell_csv(&out_dir.join(record(written, "g.csv")), mesh, &problem.g)?;
    write_cell_csv(&out_dir.join(record(written, "v.csv")), mesh, &problem.v)?;
    Ok(())
}

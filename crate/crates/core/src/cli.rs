//! Command-line surface. One command per process; see [`run`].

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::{read_bundle, write_bundle, MatrixManifest};
use crate::debias::{run_debias, BiasSpec, DebiasInputs};
use crate::edit_solvers::{
    ace_edit, sequential_edit, uce_edit, EditMode, EditRequest, EditResult, KnowledgeLedger,
};
use crate::error::EditError;
use crate::harness::{run_sequential_scenario, run_timing_benchmark, ScenarioConfig};
use crate::linalg::{
    gram_projector_capped, null_space_projector, EmbeddingSet, Matrix, NullSpaceProjector,
    ProjectorCheck, WeightKind, WeightMatrix, DEFAULT_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

pub const SEED_ENV: &str = "NULLEDIT_SEED";

#[derive(Debug, Parser)]
#[command(name = "nulledit", version, about = "Null-space constrained concept editing")]
struct Cli {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a null-space projector from a preserve bundle and save it.
    Project(ProjectArgs),
    /// Run one edit and write the delta bundles plus diagnostics.
    Edit(EditArgs),
    /// Two-sided debias edit driven by a proportions file.
    Debias(DebiasArgs),
    /// Sequential editing drift scenario.
    Scenario(ScenarioArgs),
    /// Editing-time benchmark across retain-set sizes.
    Bench(BenchArgs),
    /// Check projector laws and edit preservation on saved bundles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Preserve set bundle (d×n).
    #[arg(long)]
    preserve: PathBuf,
    /// Output bundle stem.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    kept_dim_cap: Option<usize>,
    /// Build from the Gram matrix instead of a direct SVD.
    #[arg(long)]
    gram: bool,
}

#[derive(Debug, Args)]
struct EditArgs {
    /// One of `uce`, `ace`, `sequential`
    #[arg(long, value_parser = parse_mode)]
    mode: EditMode,
    /// Key projection bundle.
    #[arg(long)]
    wk: PathBuf,
    /// Value projection bundle; required for `ace`, optional otherwise.
    #[arg(long)]
    wv: Option<PathBuf>,
    /// Concepts to erase (T₁).
    #[arg(long)]
    erase: PathBuf,
    /// Safe target concepts (S), one per erase column.
    #[arg(long)]
    targets: PathBuf,
    /// Concepts to preserve (T₀).
    #[arg(long)]
    preserve: PathBuf,
    /// Previously edited keys (sequential mode).
    #[arg(long)]
    ledger_keys: Option<PathBuf>,
    /// Values written for `ledger_keys`; defaults to the weight's own outputs.
    #[arg(long)]
    ledger_values: Option<PathBuf>,
    /// Sequential mode: keep written outputs off the ledger values
    #[arg(long)]
    output_projection: bool,
    #[arg(long, default_value_t = EditRequest::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    kept_dim_cap: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DebiasArgs {
    /// Proportions JSON: `{concept, attributes: [{name, desired, measured}]}`.
    #[arg(long)]
    proportions: PathBuf,
    #[arg(long)]
    weight: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "value")]
    kind: WeightKind,
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    retain: PathBuf,
    /// Attribute outputs balanced earlier (V_p).
    #[arg(long)]
    prior_values: PathBuf,
    /// Keys edited earlier (K_p).
    #[arg(long)]
    prior_keys: Option<PathBuf>,
    #[arg(long, default_value_t = EditRequest::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Residual target for the null-space dimension search.
    #[arg(long, requires_all = ["dim_lo", "dim_hi"])]
    epsilon: Option<f64>,
    #[arg(long)]
    dim_lo: Option<usize>,
    #[arg(long)]
    dim_hi: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 64)]
    d_in: usize,
    #[arg(long, default_value_t = 64)]
    d_out: usize,
    #[arg(long, default_value_t = 10)]
    edits: usize,
    #[arg(long, default_value_t = 16)]
    preserve_size: usize,
    #[arg(long, default_value_t = 1)]
    erase_per_edit: usize,
    /// Overridden by the NULLEDIT_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "uce,ace,sequential")]
    strategies: Vec<EditMode>,
    #[arg(long, default_value_t = EditRequest::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Draw erase concepts within this many degrees of the preserve span.
    #[arg(long)]
    conflict_angle: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,50000")]
    retain: Vec<usize>,
    #[arg(long, default_value_t = 320)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Projector bundle written by `project`.
    #[arg(long)]
    projector: Option<PathBuf>,
    /// Set the projector must annihilate.
    #[arg(long, requires = "projector")]
    source: Option<PathBuf>,
    /// Weight, delta and preserve bundles for an input-side preservation check.
    #[arg(long, requires_all = ["delta", "preserve"])]
    weight: Option<PathBuf>,
    #[arg(long)]
    delta: Option<PathBuf>,
    #[arg(long, requires = "delta")]
    preserve: Option<PathBuf>,
    /// Output-side set `V_p` that `Δᵀ` must annihilate.
    #[arg(long, requires = "delta")]
    output_preserve: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    drift_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    output_tol: f64,
}

fn parse_mode(s: &str) -> Result<EditMode, String> {
    s.parse().map_err(|e: EditError| e.to_string())
}

fn parse_kind(s: &str) -> Result<WeightKind, String> {
    match s {
        "key" | "k" => Ok(WeightKind::Key),
        "value" | "v" => Ok(WeightKind::Value),
        other => Err(format!("unknown weight kind `{other}`")),
    }
}

// ── Run configuration ───────────────────────────────────────────────

/// Parameters and file locations of one edit run, echoed into its
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: EditMode,
    pub ridge: f64,
    pub tol: f64,
    pub kept_dim_cap: Option<usize>,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf)>,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn new(mode: EditMode, output: PathBuf) -> Self {
        Self {
            mode,
            ridge: EditRequest::DEFAULT_RIDGE,
            tol: DEFAULT_TOL,
            kept_dim_cap: None,
            seed: None,
            inputs: Vec::new(),
            output,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.output.as_os_str().is_empty() {
            return Err(EditError::InvalidArgument("output path is empty".into()));
        }
        if let Some((name, _)) = self.inputs.iter().find(|(_, p)| p.as_os_str().is_empty()) {
            return Err(EditError::InvalidArgument(format!("input `{name}` has an empty path")));
        }
        Ok(())
    }
}

/// Seed from `NULLEDIT_SEED` when set and parsable, else `fallback`.
pub fn seed_override(fallback: u64) -> crate::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| EditError::InvalidArgument(format!("{SEED_ENV}={v} is not a u64"))),
        Err(_) => Ok(fallback),
    }
}

// ── Dispatch ────────────────────────────────────────────────────────

enum Failure {
    Error(EditError),
    Violation(Value),
}

impl From<EditError> for Failure {
    fn from(e: EditError) -> Self {
        Failure::Error(e)
    }
}

type Outcome = std::result::Result<Value, Failure>;

/// Exit code for a library error.
pub fn exit_code(err: &EditError) -> i32 {
    match err {
        EditError::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn error_kind(err: &EditError) -> &'static str {
    match err {
        EditError::NonFiniteInput(_) => "non_finite_input",
        EditError::CapExceedsDimension { .. } => "cap_exceeds_dimension",
        EditError::SingularSystem { .. } => "singular_system",
        EditError::NoConvergence(_) => "no_convergence",
        EditError::ShapeMismatch(_) => "shape_mismatch",
        EditError::EmptyNullSpace { .. } => "empty_null_space",
        EditError::ZeroDesired => "zero_desired",
        EditError::Infeasible { .. } => "infeasible",
        EditError::InvalidArgument(_) => "invalid_argument",
        EditError::IoFailure { .. } => "io_failure",
        EditError::CorruptHeader { .. } => "corrupt_header",
        EditError::DtypeUnsupported(_) => "dtype_unsupported",
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Project(a) => cmd_project(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Debias(a) => cmd_debias(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(value) => {
            if cli.json {
                println!("{value}");
            } else {
                println!("{}", human_summary(&value));
            }
            EXIT_OK
        }
        Err(Failure::Error(err)) => {
            eprintln!("error: {err}");
            let code = exit_code(&err);
            if cli.json {
                let v = json!({"ok": false, "error": error_kind(&err), "message": err.to_string(), "exit_code": code});
                println!("{v}");
            }
            code
        }
        Err(Failure::Violation(report)) => {
            eprintln!("invariant violation");
            if cli.json {
                println!("{report}");
            } else {
                eprintln!("{}", human_summary(&report));
            }
            EXIT_VIOLATION
        }
    }
}

fn human_summary(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

// ── Helpers ─────────────────────────────────────────────────────────

fn load(path: &Path) -> crate::Result<Matrix> {
    read_bundle(path).map(|(_, m)| m)
}

fn load_set(path: &Path, label: &str) -> crate::Result<EmbeddingSet> {
    EmbeddingSet::new(load(path)?, label)
}

fn load_weight(path: &Path, kind: WeightKind) -> crate::Result<WeightMatrix> {
    WeightMatrix::new(load(path)?, kind)
}

fn save(path: &Path, name: &str, role: &str, m: &Matrix) -> crate::Result<()> {
    write_bundle(path, m, &MatrixManifest::for_matrix(name, role, m))
}

fn ensure_dir(dir: &Path) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| EditError::io(dir, e))
}

fn write_json(path: &Path, value: &Value) -> crate::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text).map_err(|e| EditError::io(path, e))
}

fn create(path: &Path) -> crate::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| EditError::io(path, e))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

// ── Commands ────────────────────────────────────────────────────────

fn cmd_project(a: &ProjectArgs) -> Outcome {
    let preserve = load_set(&a.preserve, "preserve")?;
    let projector = if a.gram {
        gram_projector_capped(&preserve, a.tol, a.kept_dim_cap)?
    } else {
        null_space_projector(&preserve, a.tol, a.kept_dim_cap)?
    };
    save(&a.out, "projector", "projector", projector.data())?;
    let check = projector.check(preserve.data());
    Ok(json!({
        "ok": true,
        "command": "project",
        "output": path_str(&a.out),
        "dim": projector.dim(),
        "kept_dim": projector.kept_dim(),
        "source_rank": projector.source_rank(),
        "check": check,
    }))
}

fn build_ledger(
    a: &EditArgs,
    w: &WeightMatrix,
    values: Option<&EmbeddingSet>,
) -> crate::Result<KnowledgeLedger> {
    let empty = KnowledgeLedger::new(w.d_in(), w.d_out());
    let Some(keys_path) = &a.ledger_keys else {
        return Ok(empty);
    };
    let keys = load_set(keys_path, "ledger keys")?;
    let values = match values {
        Some(v) => v.clone(),
        None => EmbeddingSet::new(w.map(&keys)?, "ledger values")?,
    };
    empty.absorb(&keys, &values)
}

fn cmd_edit(a: &EditArgs) -> Outcome {
    let mut config = RunConfig::new(a.mode, a.out.clone());
    config.ridge = a.ridge;
    config.tol = a.tol;
    config.kept_dim_cap = a.kept_dim_cap;
    config.inputs = [
        ("wk", Some(&a.wk)),
        ("wv", a.wv.as_ref()),
        ("erase", Some(&a.erase)),
        ("targets", Some(&a.targets)),
        ("preserve", Some(&a.preserve)),
        ("ledger_keys", a.ledger_keys.as_ref()),
        ("ledger_values", a.ledger_values.as_ref()),
    ]
    .into_iter()
    .filter_map(|(n, p)| p.map(|p| (n.to_string(), p.clone())))
    .collect();
    config.validate()?;

    let w_k = load_weight(&a.wk, WeightKind::Key)?;
    let w_v = a
        .wv
        .as_ref()
        .map(|p| load_weight(p, WeightKind::Value))
        .transpose()?;
    let request = EditRequest::new(
        a.mode,
        load_set(&a.erase, "erase")?,
        load_set(&a.targets, "targets")?,
        load_set(&a.preserve, "preserve")?,
    )?
    .with_ridge(a.ridge)
    .with_tol(a.tol)
    .with_kept_dim_cap(a.kept_dim_cap)
    .with_output_projection(a.output_projection);
    let ledger_values = a
        .ledger_values
        .as_ref()
        .map(|p| load_set(p, "ledger values"))
        .transpose()?;

    let mut results: Vec<(&str, EditResult)> = Vec::new();
    match a.mode {
        EditMode::Ace => {
            let w_v = w_v.ok_or_else(|| EditError::InvalidArgument("ace needs --wv".into()))?;
            results.push(("kv", ace_edit(&w_k, &w_v, &request)?));
        }
        EditMode::UceBaseline => {
            results.push(("k", uce_edit(&w_k, &request)?));
            if let Some(w_v) = &w_v {
                results.push(("v", uce_edit(w_v, &request)?));
            }
        }
        EditMode::Sequential => {
            let ledger = build_ledger(a, &w_k, ledger_values.as_ref())?;
            results.push(("k", sequential_edit(&w_k, &request, &ledger)?));
            if let Some(w_v) = &w_v {
                let ledger = build_ledger(a, w_v, ledger_values.as_ref())?;
                results.push(("v", sequential_edit(w_v, &request, &ledger)?));
            }
        }
    }

    ensure_dir(&a.out)?;
    let mut outputs = Vec::new();
    let mut diagnostics = serde_json::Map::new();
    for (tag, res) in &results {
        for (name, delta) in [("delta_k", &res.delta_k), ("delta_v", &res.delta_v)] {
            if let Some(d) = delta {
                let stem = a.out.join(name);
                save(&stem, name, "delta", d)?;
                outputs.push(path_str(&stem));
            }
        }
        diagnostics.insert(tag.to_string(), json!(res.diagnostics()));
    }
    let value = json!({
        "ok": true,
        "command": "edit",
        "config": config,
        "outputs": outputs,
        "diagnostics": diagnostics,
    });
    write_json(&a.out.join("diagnostics.json"), &value)?;
    Ok(value)
}

fn cmd_debias(a: &DebiasArgs) -> Outcome {
    let spec = BiasSpec::load(&a.proportions)?;
    let weight = load_weight(&a.weight, a.kind)?;
    let keys = load_set(&a.keys, "keys")?;
    let targets = load(&a.targets)?;
    let retain = load_set(&a.retain, "retain")?;
    let prior_values = load_set(&a.prior_values, "prior values")?;
    let prior_keys = a
        .prior_keys
        .as_ref()
        .map(|p| load_set(p, "prior keys"))
        .transpose()?;
    let search = match (a.epsilon, a.dim_lo, a.dim_hi) {
        (Some(eps), Some(lo), Some(hi)) => Some((eps, lo, hi)),
        _ => None,
    };
    let inputs = DebiasInputs {
        weight: &weight,
        keys: &keys,
        targets: &targets,
        retain: &retain,
        prior_values: &prior_values,
        prior_keys: prior_keys.as_ref(),
        ridge: a.ridge,
        tol: a.tol,
        search,
    };
    let (delta, report) = run_debias(&spec, &inputs)?;
    ensure_dir(&a.out)?;
    let stem = a.out.join("delta");
    save(&stem, "delta", "delta", &delta)?;
    let value = json!({
        "ok": true,
        "command": "debias",
        "output": path_str(&stem),
        "report": report,
    });
    write_json(&a.out.join("debias_report.json"), &value)?;
    Ok(value)
}

fn cmd_scenario(a: &ScenarioArgs) -> Outcome {
    let cfg = ScenarioConfig {
        d_in: a.d_in,
        d_out: a.d_out,
        n_edits: a.edits,
        preserve_size: a.preserve_size,
        erase_per_edit: a.erase_per_edit,
        seed: seed_override(a.seed)?,
        strategies: a.strategies.clone(),
        ridge: a.ridge,
        tol: a.tol,
        conflict_angle_deg: a.conflict_angle,
    };
    let report = run_sequential_scenario(&cfg)?;
    ensure_dir(&a.out)?;
    let csv_path = a.out.join("drift.csv");
    report.write_csv(create(&csv_path)?)?;
    let value = json!({
        "ok": true,
        "command": "scenario",
        "csv": path_str(&csv_path),
        "config": report.config,
        "summary": report.summary,
    });
    write_json(&a.out.join("drift.json"), &json!(report))?;
    Ok(value)
}

fn cmd_bench(a: &BenchArgs) -> Outcome {
    let report = run_timing_benchmark(&a.retain, a.dim, a.repeats)?;
    ensure_dir(&a.out)?;
    let csv_path = a.out.join("timing.csv");
    report.write_csv(create(&csv_path)?)?;
    write_json(&a.out.join("timing.json"), &json!(report))?;
    Ok(json!({
        "ok": true,
        "command": "bench",
        "csv": path_str(&csv_path),
        "rows": report.rows,
        "reference_ratio_sd14": report.reference_ratio("SD v1.4"),
    }))
}

fn cmd_verify(a: &VerifyArgs) -> Outcome {
    let mut checks = Vec::new();
    let mut all_hold = true;

    if let Some(p) = &a.projector {
        let projector = NullSpaceProjector::from_matrix(load(p)?, DEFAULT_TOL)?;
        let source = match &a.source {
            Some(s) => load(s)?,
            None => Matrix::zeros(projector.dim(), 0),
        };
        if source.nrows() != projector.dim() {
            return Err(EditError::shape("source rows do not match projector dimension").into());
        }
        let check: ProjectorCheck = projector.check(&source);
        let holds = check.holds();
        all_hold &= holds;
        checks.push(json!({"check": "projector", "holds": holds, "measures": check, "kept_dim": projector.kept_dim()}));
    }

    if let Some(d) = &a.delta {
        let delta = load(d)?;
        if let Some(t0) = &a.preserve {
            let t0 = load(t0)?;
            if delta.ncols() != t0.nrows() {
                return Err(EditError::shape("delta columns do not match preserve rows").into());
            }
            let change = (&delta * &t0).norm();
            let base = match &a.weight {
                Some(w) => {
                    let w = load(w)?;
                    if w.shape() != delta.shape() {
                        return Err(EditError::shape("weight and delta differ in shape").into());
                    }
                    (w * &t0).norm()
                }
                None => 1.0 + t0.norm(),
            };
            let drift = if base > 0.0 { change / base } else { change };
            let holds = drift <= a.drift_tol;
            all_hold &= holds;
            checks.push(json!({"check": "input_preservation", "holds": holds, "drift": drift, "tol": a.drift_tol}));
        }
        if let Some(vp) = &a.output_preserve {
            let vp = load(vp)?;
            if delta.nrows() != vp.nrows() {
                return Err(EditError::shape("delta rows do not match output preserve rows").into());
            }
            let leak = (delta.transpose() * &vp).norm() / (1.0 + vp.norm());
            let holds = leak <= a.output_tol;
            all_hold &= holds;
            checks.push(json!({"check": "output_preservation", "holds": holds, "leak": leak, "tol": a.output_tol}));
        }
    }

    if checks.is_empty() {
        return Err(EditError::InvalidArgument("nothing to verify; pass --projector or --delta".into()).into());
    }
    let value = json!({"ok": all_hold, "command": "verify", "checks": checks});
    if all_hold {
        Ok(value)
    } else {
        Err(Failure::Violation(value))
    }
}

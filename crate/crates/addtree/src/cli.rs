//! Run orchestration: spec loading, objective wiring (built-in or external
//! subprocess), experiment execution and artifact emission.
//!
//! External objectives speak a line protocol on stdin/stdout, one
//! request/response pair per evaluation, strictly sequential:
//!
//! ```text
//! -> {"path":["0","0"],"params":{"r8":0.0,"x4":0.0}}
//! <- {"y":0.1}
//! ```
//!
//! Requests carry the point's categorical labels in path order and its
//! named parameter values; black boxes never see the flat tag-slot
//! encoding. Each repetition owns its subprocess. Timeouts, malformed
//! responses and process exits are distinct errors carrying the offending
//! payload.
//!
//! Every run writes per-repetition trace CSVs, a summary CSV, a convergence
//! SVG and a manifest recording the config, seeds, spec hash, fitted
//! hyperparameters and software version; re-running a manifest's config
//! reproduces the CSVs byte for byte. Set `ADDTREE_LOG=info` (or `debug`)
//! for progress lines on stderr.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{StrategyKind, StrategyOptions};
use crate::bench::{
    self, run_bo_experiment, BlackBox, BoExperimentConfig, BuiltinObjective, CurveSeries,
    Evaluator, ExperimentSummary, ObjectiveError,
};
use crate::kernel::all_interaction_pairs;
use crate::tree_space::{parse_spec, StructuredPoint, TreeSpec};

/// Observation noise applied when the noise toggle is on.
pub const NOISE_STD: f64 = 0.01;
pub const DEFAULT_TIMEOUT_SECS: u64 = 600;

/// Errors from a run, mapped to process exit codes by the binary: bad spec
/// or config 2, objective failure 3, write failure 4.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad spec or configuration: {0}")]
    Config(String),
    #[error("objective failure: {0}")]
    Objective(String),
    #[error("write failure on {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Objective(_) => 3,
            CliError::Write { .. } => 4,
        }
    }
}

/// How the objective is evaluated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ObjectiveSelector {
    /// A built-in objective by name (`jenatton`, `example`).
    Builtin(String),
    /// A shell command implementing the line protocol.
    External(String),
}

impl ObjectiveSelector {
    /// Parse `builtin:<name>` or `external:<command>`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if let Some(name) = s.strip_prefix("builtin:") {
            Ok(ObjectiveSelector::Builtin(name.to_string()))
        } else if let Some(cmd) = s.strip_prefix("external:") {
            Ok(ObjectiveSelector::External(cmd.to_string()))
        } else {
            Err(CliError::Config(format!(
                "objective selector {s:?} must start with builtin: or external:"
            )))
        }
    }
}

/// Full configuration of one `run` invocation; serialized into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec_path: PathBuf,
    pub objective: ObjectiveSelector,
    /// One of `addtree`, `independent`, `random`, `onehot`.
    pub algo: String,
    pub iters: usize,
    pub reps: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Add Gaussian observation noise (standard deviation [`NOISE_STD`]).
    pub noise: bool,
    /// Extend the tree kernel with every ancestor-descendant interaction term.
    pub interactions: bool,
    pub timeout_secs: u64,
}

impl RunConfig {
    fn validate(&self) -> Result<StrategyKind, CliError> {
        if self.iters < 1 {
            return Err(CliError::Config("iterations must be >= 1".into()));
        }
        if self.reps < 1 {
            return Err(CliError::Config("repetitions must be >= 1".into()));
        }
        StrategyKind::parse(&self.algo).ok_or_else(|| {
            CliError::Config(format!(
                "unknown algorithm {:?}; valid: addtree, independent, random, onehot",
                self.algo
            ))
        })
    }
}

/// Manifest written next to the run outputs; a run is reproducible from its
/// config, seed list and spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub version: String,
    pub config: RunConfig,
    pub spec_sha256: String,
    pub seeds: Vec<u64>,
    /// Final fitted hyperparameters per seed (model-based strategies).
    pub fitted_hyperparameters: BTreeMap<u64, BTreeMap<String, f64>>,
    pub outputs: Vec<String>,
}

/// Load a previously written manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse manifest {}: {e}", path.display())))
}

fn log_enabled() -> bool {
    matches!(
        std::env::var("ADDTREE_LOG").as_deref(),
        Ok("info") | Ok("debug") | Ok("trace")
    )
}

/// Execute a run end to end: load and validate the spec, wire the
/// objective, run the experiment and write all artifacts. Returns the list
/// of files written.
pub fn run_command(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let kind = cfg.validate()?;
    let spec_source = std::fs::read_to_string(&cfg.spec_path).map_err(|e| {
        CliError::Config(format!("cannot read spec {}: {e}", cfg.spec_path.display()))
    })?;
    let spec = parse_spec(&spec_source)
        .map_err(|e| CliError::Config(format!("invalid spec: {e}")))?
        .into_shared();

    let builtin;
    let external;
    let objective: &dyn BlackBox = match &cfg.objective {
        ObjectiveSelector::Builtin(name) => {
            let b = BuiltinObjective::parse(name).map_err(|e| CliError::Config(e.to_string()))?;
            if b.spec() != *spec {
                return Err(CliError::Config(format!(
                    "spec {} does not match builtin objective {name:?}; use the shipped spec file",
                    cfg.spec_path.display()
                )));
            }
            builtin = b;
            &builtin
        }
        ObjectiveSelector::External(command) => {
            external = ExternalCommand {
                command: command.clone(),
                spec: spec.clone(),
                timeout: Duration::from_secs(cfg.timeout_secs),
            };
            &external
        }
    };

    let mut options = StrategyOptions::default();
    if cfg.interactions {
        options.interactions = all_interaction_pairs(&spec);
    }
    let experiment = BoExperimentConfig {
        strategy: kind,
        iters: cfg.iters,
        repetitions: cfg.reps,
        base_seed: cfg.seed,
        options,
        noise_std: cfg.noise.then_some(NOISE_STD),
        known_minimum: None,
    };

    if log_enabled() {
        eprintln!(
            "addtree: running {} x {} iterations of {} on {}",
            cfg.reps,
            cfg.iters,
            kind.name(),
            cfg.spec_path.display()
        );
    }

    match run_bo_experiment(objective, &spec, &experiment) {
        Ok((traces, summary)) => {
            emit_outputs(&traces, &summary, cfg, &spec_source, &cfg.out_dir)
        }
        Err(bench::BenchError::ObjectiveFailure {
            iter,
            seed,
            source,
            partial,
            completed,
            ..
        }) => {
            // Persist what we have, then report the failure.
            let mut traces = completed;
            traces.push(*partial);
            let summary = bench::summarize(&traces, None);
            emit_outputs(&traces, &summary, cfg, &spec_source, &cfg.out_dir)?;
            Err(CliError::Objective(format!(
                "evaluation failed at iteration {iter} of seed {seed}: {source} \
                 (partial traces written to {})",
                cfg.out_dir.display()
            )))
        }
        Err(other) => Err(CliError::Objective(other.to_string())),
    }
}

/// Write trace CSVs, the summary CSV, the convergence plot and the manifest.
pub fn emit_outputs(
    traces: &[bench::BOTrace],
    summary: &ExperimentSummary,
    cfg: &RunConfig,
    spec_source: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let write_err = |path: &Path| {
        let p = path.to_path_buf();
        move |source: std::io::Error| CliError::Write { path: p, source }
    };
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;

    let mut files = Vec::new();
    let mut fitted = BTreeMap::new();
    for trace in traces {
        let path = out_dir.join(format!("trace_{}_{}.csv", trace.strategy.name(), trace.seed));
        std::fs::write(&path, bench::trace_csv(trace)).map_err(write_err(&path))?;
        files.push(path);
        if let Some(params) = &trace.final_params {
            fitted.insert(trace.seed, params.clone());
        }
    }

    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, bench::summary_csv(summary)).map_err(write_err(&summary_path))?;
    files.push(summary_path);

    let plot_path = out_dir.join("convergence.svg");
    let series = CurveSeries {
        label: cfg.algo.clone(),
        mean: summary.mean_log10_regret.clone(),
        band: summary.two_std.clone(),
    };
    bench::write_convergence_svg(
        &plot_path,
        std::slice::from_ref(&series),
        "convergence",
        "mean log10 regret",
    )
    .map_err(write_err(&plot_path))?;
    files.push(plot_path);

    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        spec_sha256: hex_digest(spec_source),
        seeds: traces.iter().map(|t| t.seed).collect(),
        fitted_hyperparameters: fitted,
        outputs: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .expect("manifest serializes");
    std::fs::write(&manifest_path, body).map_err(write_err(&manifest_path))?;
    files.push(manifest_path);
    Ok(files)
}

fn hex_digest(s: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

// --- external objective protocol -------------------------------------------

/// A shell command evaluated through the line protocol; spawns one process
/// per repetition.
#[derive(Debug, Clone)]
pub struct ExternalCommand {
    pub command: String,
    pub spec: Arc<TreeSpec>,
    pub timeout: Duration,
}

impl BlackBox for ExternalCommand {
    fn spawn(&self) -> Result<Box<dyn Evaluator>, ObjectiveError> {
        Ok(Box::new(ExternalObjective::spawn(
            &self.command,
            self.spec.clone(),
            self.timeout,
        )?))
    }

    fn minimum(&self) -> Option<f64> {
        None
    }
}

/// A live objective subprocess. Requests are written one per line to its
/// stdin; responses are read one per line from its stdout.
pub struct ExternalObjective {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: mpsc::Receiver<std::io::Result<String>>,
    spec: Arc<TreeSpec>,
    timeout: Duration,
}

impl ExternalObjective {
    pub fn spawn(
        command: &str,
        spec: Arc<TreeSpec>,
        timeout: Duration,
    ) -> Result<Self, ObjectiveError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ObjectiveError::Spawn(format!("{command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin: Some(stdin),
            lines: rx,
            spec,
            timeout,
        })
    }

    fn exit_error(&mut self) -> ObjectiveError {
        let status = self
            .child
            .wait()
            .map(|s| s.code().unwrap_or(-1))
            .unwrap_or(-1);
        let stderr = self
            .child
            .stderr
            .take()
            .map(|mut s| {
                let mut buf = String::new();
                use std::io::Read;
                let _ = s.read_to_string(&mut buf);
                buf.trim().to_string()
            })
            .unwrap_or_default();
        ObjectiveError::ProcessExit { status, stderr }
    }
}

impl Evaluator for ExternalObjective {
    fn eval(&mut self, point: &StructuredPoint) -> Result<f64, ObjectiveError> {
        let stdin = self.stdin.as_mut().expect("stdin open");
        let request = request_line(&self.spec, point);
        if stdin.write_all(request.as_bytes()).is_err() || stdin.flush().is_err() {
            return Err(self.exit_error());
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => parse_response(&line),
            Ok(Err(e)) => Err(ObjectiveError::Io(e)),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                Err(ObjectiveError::Timeout(self.timeout))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(self.exit_error()),
        }
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved process exit on EOF.
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Serialize one evaluation request: categorical labels in path order plus
/// the on-path named parameter values. BFS vertex ids increase along a
/// path, so iterating the point's maps in key order yields path order.
fn request_line(spec: &TreeSpec, point: &StructuredPoint) -> String {
    let path: Vec<serde_json::Value> = point
        .choices()
        .values()
        .map(|label| serde_json::Value::String(label.clone()))
        .collect();
    let mut params = serde_json::Map::new();
    for (&v, vals) in point.values() {
        let names = spec.vertex(v).block().names();
        for (d, &x) in vals.iter().enumerate() {
            params.insert(names[d].clone(), serde_json::json!(x));
        }
    }
    serde_json::to_string(&serde_json::json!({
        "path": path,
        "params": params,
    }))
    .expect("request serializes")
        + "\n"
}

fn parse_response(line: &str) -> Result<f64, ObjectiveError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Response {
        y: f64,
    }
    match serde_json::from_str::<Response>(line) {
        Ok(r) if r.y.is_finite() => Ok(r.y),
        _ => Err(ObjectiveError::MalformedResponse(line.to_string())),
    }
}

/// One-shot external evaluation: spawn the command, evaluate a single
/// point, and shut the process down.
pub fn external_eval(
    command: &str,
    spec: Arc<TreeSpec>,
    point: &StructuredPoint,
    timeout: Duration,
) -> Result<f64, ObjectiveError> {
    let mut objective = ExternalObjective::spawn(command, spec, timeout)?;
    objective.eval(point)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_parsing() {
        assert_eq!(
            ObjectiveSelector::parse("builtin:jenatton").unwrap(),
            ObjectiveSelector::Builtin("jenatton".into())
        );
        assert_eq!(
            ObjectiveSelector::parse("external:python3 obj.py").unwrap(),
            ObjectiveSelector::External("python3 obj.py".into())
        );
        assert!(ObjectiveSelector::parse("jenatton").is_err());
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"y": 0.25}"#).unwrap(), 0.25);
        assert!(matches!(
            parse_response(r#"{"y": "nan-text"}"#),
            Err(ObjectiveError::MalformedResponse(_))
        ));
        assert!(parse_response("not json").is_err());
    }
}

//! Coverage refinement loop.
//!
//! Each iteration picks open coverage items, traces and patches a Filtered
//! DUT for each, asks every model for a sequence or a waiver, runs the
//! sequences through a simulator runner and merges the coverage they add.

use crate::coverage::{compute_score, seed_signals, CoverageItem, CoverageReport, Status};
use crate::llm::{LlmClient, LlmParams};
use crate::patcher::{patch, FilteredDut, TemplateLibrary};
use crate::tracker::{trace_cross_file, DependencySlice};
use crate::verilog::{DesignModel, StatementKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("context budget of {budget} tokens cannot hold the item's module ({needed} needed)")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("simulator unavailable: {0}")]
    SimulatorUnavailable(String),
    #[error("no results to score")]
    EmptyResults,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Prompt size limit in estimated tokens.
    pub context_budget: usize,
    pub points_per_iter: usize,
    pub repair_attempts: usize,
    pub waiver_quorum: usize,
    pub target_score: f64,
    pub max_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            context_budget: 8000,
            points_per_iter: 4,
            repair_attempts: 1,
            waiver_quorum: 2,
            target_score: 90.0,
            max_iters: 20,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::InvalidConfig(m.to_string()));
        if self.context_budget == 0
            || self.points_per_iter == 0
            || self.repair_attempts == 0
            || self.waiver_quorum == 0
            || self.max_iters == 0
        {
            return bad("counts must be at least 1");
        }
        if !(self.target_score > 0.0 && self.target_score <= 100.0) {
            return bad("target score must be in (0, 100]");
        }
        if self.waiver_quorum > 3 {
            return bad("waiver quorum cannot exceed 3");
        }
        Ok(())
    }
}

/// Rough token count: four characters per token, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub const TASK_DIRECTIVE: &str = "\
Either write a UVM sequence that drives the entry ports so the coverage item above is hit, \
or argue that the item cannot be reached from the entry ports.
Reply with one fenced code block. Its first line must be SEQUENCE or WAIVER.
For SEQUENCE, the rest of the block is the sequence code.
For WAIVER, the rest of the block is the unreachability argument.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub uncovered_item: CoverageItem,
    /// Modules included, in prompt order.
    pub modules: Vec<String>,
    /// Module cut short to respect the budget, if any.
    pub truncated: Option<String>,
    pub filtered_dut: String,
    pub entry_ports: Vec<String>,
    pub task_directive: String,
    pub token_estimate: usize,
}

fn render_prompt(item: &CoverageItem, ports: &[String], dut: &str, directive: &str) -> String {
    format!(
        "## Coverage item\n{}\n\n## Entry ports\n{}\n\n## Filtered design\n{}\n## Task\n{}\n",
        item.render(),
        if ports.is_empty() {
            "(none)".to_string()
        } else {
            ports.join(", ")
        },
        dut,
        directive
    )
}

impl PromptBundle {
    pub fn render(&self) -> String {
        render_prompt(
            &self.uncovered_item,
            &self.entry_ports,
            &self.filtered_dut,
            &self.task_directive,
        )
    }
}

fn module_block(path: &Path, text: &str) -> String {
    format!("// file: {}\n{}", path.display(), text)
}

/// Modules of the Filtered DUT ordered by instance distance from `start`.
fn dependency_order(fdut: &FilteredDut, model: &DesignModel, start: &str) -> Vec<String> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for m in model.modules.iter() {
        for i in &m.instances {
            adj.entry(&m.name).or_default().insert(&i.module);
            adj.entry(&i.module).or_default().insert(&m.name);
        }
    }
    let present: Vec<&str> = fdut.files.iter().map(|f| f.module.as_str()).collect();
    let rank = |m: &str| present.iter().position(|p| *p == m).unwrap_or(usize::MAX);
    let mut order = vec![start.to_string()];
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(m) = queue.pop_front() {
        let mut next: Vec<&str> = adj
            .get(m)
            .into_iter()
            .flatten()
            .copied()
            .filter(|n| !seen.contains(n))
            .collect();
        next.sort_by_key(|n| rank(n));
        for n in next {
            seen.insert(n);
            queue.push_back(n);
            if present.contains(&n) {
                order.push(n.to_string());
            }
        }
    }
    order.extend(
        present
            .iter()
            .filter(|p| !seen.contains(*p))
            .map(|p| p.to_string()),
    );
    order
}

/// Prefixes of a module's text that stop just before a module item, longest
/// first, each closed with `endmodule`. Only prefixes that still parse are
/// returned, which rules out cuts inside the port list.
fn truncations(model: &DesignModel, module: &str, text: &str) -> Vec<String> {
    let Some(m) = model.module(module) else {
        return Vec::new();
    };
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let offset = m.line_start.saturating_sub(1);
    let mut starts: BTreeSet<usize> = m
        .items
        .iter()
        .map(|&id| &model.statements[id])
        .filter(|s| s.kind != StatementKind::InstanceConnection)
        .map(|s| s.span.line_start)
        .collect();
    starts.extend(m.instances.iter().map(|i| i.line));
    starts.insert(m.line_end);
    starts
        .into_iter()
        .rev()
        .filter_map(|l| l.checked_sub(offset + 1))
        .filter(|&c| c > 0 && c < lines.len())
        .map(|c| {
            let mut s: String = lines[..c].concat();
            s.push_str("  // remaining items omitted\nendmodule\n");
            s
        })
        .filter(|s| {
            DesignModel::from_sources_any_top(vec![(PathBuf::from("cut.v"), s.clone())]).is_ok()
        })
        .collect()
}

/// Builds the prompt for one uncovered item.
///
/// The whole Filtered DUT is used when it fits. Otherwise the item's module
/// comes first, then neighbours by instance distance; the first neighbour
/// that does not fit is cut at a statement boundary and the rest dropped.
pub fn assemble_prompt(
    item: &CoverageItem,
    slice: &DependencySlice,
    fdut: &FilteredDut,
    budget: usize,
) -> Result<PromptBundle, RefineError> {
    let entry_ports: Vec<String> = slice.entry_ports.iter().cloned().collect();
    let fmodel = fdut.parse().ok();
    let make = |modules: Vec<String>, truncated: Option<String>, dut: String| {
        let text = render_prompt(item, &entry_ports, &dut, TASK_DIRECTIVE);
        PromptBundle {
            uncovered_item: item.clone(),
            modules,
            truncated,
            filtered_dut: dut,
            entry_ports: entry_ports.clone(),
            task_directive: TASK_DIRECTIVE.to_string(),
            token_estimate: estimate_tokens(&text),
        }
    };
    let whole = make(
        fdut.files.iter().map(|f| f.module.clone()).collect(),
        None,
        fdut.combined_text(),
    );
    if whole.token_estimate <= budget {
        return Ok(whole);
    }
    let item_module = fmodel
        .as_ref()
        .and_then(|m| m.resolve_scope(&item.hierarchical_name))
        .map(|m| m.name.clone())
        .filter(|n| fdut.file(n).is_some())
        .or_else(|| fdut.files.first().map(|f| f.module.clone()))
        .unwrap_or_default();
    let order = match &fmodel {
        Some(m) => dependency_order(fdut, m, &item_module),
        None => std::iter::once(item_module.clone())
            .chain(
                fdut.files
                    .iter()
                    .map(|f| f.module.clone())
                    .filter(|m| *m != item_module),
            )
            .collect(),
    };
    let mut modules = Vec::new();
    let mut dut = String::new();
    let mut truncated = None;
    for name in order {
        let Some(f) = fdut.file(&name) else { continue };
        let block = module_block(&f.path, &f.text);
        let candidate = make(Vec::new(), None, format!("{dut}{block}"));
        if candidate.token_estimate <= budget {
            dut.push_str(&block);
            modules.push(name);
            continue;
        }
        if modules.is_empty() {
            return Err(RefineError::BudgetTooSmall {
                needed: candidate.token_estimate,
                budget,
            });
        }
        if let Some(fm) = &fmodel {
            for cut in truncations(fm, &name, &f.text) {
                let block = module_block(&f.path, &cut);
                if make(Vec::new(), None, format!("{dut}{block}")).token_estimate <= budget {
                    dut.push_str(&block);
                    modules.push(name.clone());
                    truncated = Some(name.clone());
                    break;
                }
            }
        }
        break;
    }
    Ok(make(modules, truncated, dut))
}

/// A reply in the `SEQUENCE` / `WAIVER` envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Sequence(String),
    Waiver(String),
}

/// Parses a model reply. The keyword may sit on the first line inside the
/// fenced block or on the first line of the reply before it.
pub fn parse_reply(text: &str) -> Result<Reply, String> {
    let lines: Vec<&str> = text.lines().collect();
    let open = lines
        .iter()
        .position(|l| l.trim_start().starts_with("```"))
        .ok_or("reply has no fenced code block")?;
    let close = lines[open + 1..]
        .iter()
        .position(|l| l.trim_start().starts_with("```"))
        .map(|p| p + open + 1)
        .ok_or("fenced code block is not closed")?;
    let block = &lines[open + 1..close];
    let keyword = |l: &str| -> Option<(bool, String)> {
        let t = l.trim();
        let (word, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
        let word = word.trim_end_matches(':');
        let rest = rest.trim().to_string();
        match word {
            "SEQUENCE" => Some((true, rest)),
            "WAIVER" => Some((false, rest)),
            _ => None,
        }
    };
    let first_inside = block.iter().position(|l| !l.trim().is_empty());
    let before = lines[..open].iter().find(|l| !l.trim().is_empty());
    let (is_seq, head, body_lines) =
        match first_inside.and_then(|i| keyword(block[i]).map(|k| (k, i))) {
            Some(((s, h), i)) => (s, h, &block[i + 1..]),
            None => match before.and_then(|l| keyword(l)) {
                Some((s, h)) => (s, h, block),
                None => return Err("first line must declare SEQUENCE or WAIVER".into()),
            },
        };
    let mut body = String::new();
    if !head.is_empty() {
        body.push_str(&head);
        body.push('\n');
    }
    for l in body_lines {
        body.push_str(l);
        body.push('\n');
    }
    if body.trim().is_empty() {
        return Err(format!(
            "{} block is empty",
            if is_seq { "SEQUENCE" } else { "WAIVER" }
        ));
    }
    Ok(if is_seq {
        Reply::Sequence(body)
    } else {
        Reply::Waiver(body)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateStatus {
    Proposed,
    CompileFailed,
    SimFailed,
    Ran,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCandidate {
    pub id: String,
    pub source_model: String,
    pub target_items: Vec<usize>,
    pub iteration: usize,
    pub body: String,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_log: Option<String>,
    /// Candidate this one repairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_of: Option<String>,
    /// Items its run turned to covered.
    #[serde(default)]
    pub covered: Vec<usize>,
    #[serde(default)]
    pub checkers_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaiverCandidate {
    pub target_item: usize,
    pub justification: String,
    pub proposing_models: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLog {
    pub iteration: usize,
    pub item: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_label: String,
    pub report: CoverageReport,
    /// Score with waived items left out of the denominator.
    pub effective_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    NothingOpen,
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub runs: Vec<RunRecord>,
    pub error_logs: Vec<ErrorLog>,
    pub candidates: Vec<SequenceCandidate>,
    pub waivers: Vec<WaiverCandidate>,
    pub final_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srg: Option<f64>,
    pub iterations: usize,
    pub llm_calls: usize,
    pub stop_reason: StopReason,
}

impl VerificationReport {
    pub fn final_run(&self) -> &CoverageReport {
        &self.runs.last().expect("at least the initial run").report
    }

    pub fn score_history(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.effective_score).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    /// Plain-text summary.
    pub fn render_text(&self) -> String {
        let covered = self
            .candidates
            .iter()
            .flat_map(|c| c.covered.iter())
            .collect::<BTreeSet<_>>()
            .len();
        let mut s = format!(
            "stopped: {:?} after {} iteration(s), {} model call(s)\nfinal score {:.2}\nnewly covered {} item(s), waived {}\n",
            self.stop_reason,
            self.iterations,
            self.llm_calls,
            self.final_score,
            covered,
            self.waivers.len()
        );
        if let Some(srg) = self.srg {
            s.push_str(&format!("SRG {srg:.2}\n"));
        }
        for r in &self.runs {
            s.push_str(&format!("  {}: {:.2}\n", r.run_label, r.effective_score));
        }
        for w in &self.waivers {
            let models: Vec<_> = w.proposing_models.iter().cloned().collect();
            s.push_str(&format!(
                "waiver item {} ({})\n",
                w.target_item,
                models.join(", ")
            ));
        }
        for e in &self.error_logs {
            s.push_str(&format!(
                "error iter {} item {} {}{}: {}\n",
                e.iteration,
                e.item,
                e.stage,
                e.model
                    .as_deref()
                    .map(|m| format!(" [{m}]"))
                    .unwrap_or_default(),
                e.message
            ));
        }
        s
    }
}

/// Score over items that are not waived. A denominator emptied by waivers
/// scores 100.
pub fn effective_score(report: &CoverageReport, waived: &BTreeSet<usize>) -> f64 {
    let kept: Vec<CoverageItem> = report
        .items
        .iter()
        .filter(|i| !waived.contains(&i.id))
        .cloned()
        .collect();
    compute_score(&kept).map_or(100.0, |(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrgEntry {
    pub compiled: bool,
    pub simulated: bool,
    pub checkers_passed: bool,
}

/// Percentage of entries that compiled, simulated and passed every checker,
/// rounded to two decimals.
pub fn compute_srg(results: &[SrgEntry]) -> Result<f64, RefineError> {
    if results.is_empty() {
        return Err(RefineError::EmptyResults);
    }
    let ok = results
        .iter()
        .filter(|r| r.compiled && r.simulated && r.checkers_passed)
        .count();
    Ok((ok as f64 * 10000.0 / results.len() as f64).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutcome {
    pub compiled: bool,
    pub simulated: bool,
    pub checkers_passed: bool,
    pub error_text: Option<String>,
    /// Coverage reached by this run alone.
    pub coverage: Option<CoverageReport>,
}

pub trait SimRunner {
    fn run(&mut self, body: &str, run_label: &str) -> Result<SimOutcome, RefineError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRule {
    /// Substring of the sequence body selecting this rule.
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default = "yes")]
    pub compile: bool,
    #[serde(default = "yes")]
    pub sim: bool,
    #[serde(default = "yes")]
    pub checkers: bool,
    /// Ids of base-report items the run covers.
    #[serde(default)]
    pub covers: Vec<usize>,
    #[serde(default)]
    pub error: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScript {
    pub rules: Vec<SimRule>,
}

/// Replays scripted outcomes: the first rule whose pattern occurs in the
/// sequence body decides; no match means a clean run that covers nothing.
#[derive(Debug, Clone)]
pub struct MockSim {
    script: SimScript,
    base: CoverageReport,
}

impl MockSim {
    pub fn new(script: SimScript, base: CoverageReport) -> Self {
        Self { script, base }
    }

    pub fn from_file(path: &Path, base: CoverageReport) -> Result<Self, RefineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RefineError::SimulatorUnavailable(format!("{}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| RefineError::SimulatorUnavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script, base))
    }
}

impl SimRunner for MockSim {
    fn run(&mut self, body: &str, run_label: &str) -> Result<SimOutcome, RefineError> {
        let Some(rule) = self.script.rules.iter().find(|r| body.contains(&r.pattern)) else {
            return Ok(SimOutcome {
                compiled: true,
                simulated: true,
                checkers_passed: true,
                error_text: None,
                coverage: Some(CoverageReport::from_items(run_label, Vec::new())),
            });
        };
        let ran = rule.compile && rule.sim;
        let items = self
            .base
            .items
            .iter()
            .filter(|i| rule.covers.contains(&i.id))
            .map(|i| CoverageItem {
                status: Status::Covered,
                ..i.clone()
            })
            .collect();
        let error_text = rule.error.clone().or_else(|| {
            (!ran).then(|| {
                if rule.compile {
                    "simulation failed"
                } else {
                    "compilation failed"
                }
                .to_string()
            })
        });
        Ok(SimOutcome {
            compiled: rule.compile,
            simulated: ran,
            checkers_passed: ran && rule.checkers,
            error_text,
            coverage: ran.then(|| CoverageReport::from_items(run_label, items)),
        })
    }
}

/// Runs `sh -c '<command> "$@"' sh <sequence file> <run label> <coverage file>`.
///
/// Exit status 0 is a clean run, 3 a compile failure and anything else a
/// simulation failure. Stderr becomes the error text and the coverage file,
/// when written, is read as a coverage report.
#[derive(Debug, Clone)]
pub struct ExecSim {
    pub command: String,
    work: PathBuf,
    runs: usize,
}

impl ExecSim {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            work: std::env::temp_dir().join(format!("covslice-sim-{}", std::process::id())),
            runs: 0,
        }
    }
}

impl SimRunner for ExecSim {
    fn run(&mut self, body: &str, run_label: &str) -> Result<SimOutcome, RefineError> {
        let unavailable = |e: std::io::Error| RefineError::SimulatorUnavailable(e.to_string());
        self.runs += 1;
        std::fs::create_dir_all(&self.work).map_err(unavailable)?;
        let seq = self.work.join(format!("seq{}.sv", self.runs));
        let cov = self.work.join(format!("cov{}.txt", self.runs));
        std::fs::write(&seq, body).map_err(unavailable)?;
        let _ = std::fs::remove_file(&cov);
        let out = std::process::Command::new("sh")
            .arg("-c")
            .arg(format!("{} \"$@\"", self.command))
            .arg("sh")
            .arg(&seq)
            .arg(run_label)
            .arg(&cov)
            .output()
            .map_err(unavailable)?;
        let code = out.status.code().unwrap_or(-1);
        if code == 127 {
            return Err(RefineError::SimulatorUnavailable(
                String::from_utf8_lossy(&out.stderr).trim().to_string(),
            ));
        }
        let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
        let coverage = if code == 0 && cov.exists() {
            Some(crate::coverage::read_report(&cov).map_err(|e| {
                RefineError::SimulatorUnavailable(format!("unreadable coverage: {e}"))
            })?)
        } else {
            None
        };
        Ok(SimOutcome {
            compiled: code != 3,
            simulated: code == 0,
            checkers_passed: code == 0,
            error_text: (code != 0).then(|| {
                if stderr.is_empty() {
                    format!("exit status {code}")
                } else {
                    stderr
                }
            }),
            coverage,
        })
    }
}

/// `mock:<script.json>` or `exec:<command>`.
pub fn sim_from_spec(spec: &str, base: &CoverageReport) -> Result<Box<dyn SimRunner>, RefineError> {
    if let Some(p) = spec.strip_prefix("mock:") {
        return Ok(Box::new(MockSim::from_file(Path::new(p), base.clone())?));
    }
    if let Some(c) = spec.strip_prefix("exec:") {
        return Ok(Box::new(ExecSim::new(c)));
    }
    Err(RefineError::SimulatorUnavailable(format!(
        "unknown simulator `{spec}` (expected mock:<file> or exec:<command>)"
    )))
}

/// A model with the label used in transcript keys and reports.
pub struct LabeledClient<'a> {
    pub label: String,
    pub client: &'a dyn LlmClient,
}

impl<'a> LabeledClient<'a> {
    pub fn new(label: impl Into<String>, client: &'a dyn LlmClient) -> Self {
        Self {
            label: label.into(),
            client,
        }
    }
}

fn repair_prompt(prompt: &str, reply: &str, error: &str) -> String {
    format!(
        "{prompt}\n## Previous reply\n{reply}\n## Error\n{error}\nFix the problem and answer again in the same format.\n"
    )
}

struct Loop<'a, 'c> {
    model: &'a DesignModel,
    clients: &'a [LabeledClient<'c>],
    sim: &'a mut dyn SimRunner,
    config: &'a RefineConfig,
    templates: TemplateLibrary,
    current: CoverageReport,
    waived: BTreeMap<usize, WaiverCandidate>,
    attempts: BTreeMap<usize, usize>,
    candidates: Vec<SequenceCandidate>,
    errors: Vec<ErrorLog>,
    llm_calls: usize,
}

#[derive(Default)]
struct ItemResult {
    covered: Vec<usize>,
    waived: bool,
}

impl Loop<'_, '_> {
    fn log(
        &mut self,
        iteration: usize,
        item: usize,
        model: Option<&str>,
        stage: &str,
        message: String,
    ) {
        log::warn!("iteration {iteration} item {item} {stage}: {message}");
        self.errors.push(ErrorLog {
            iteration,
            item,
            model: model.map(str::to_string),
            stage: stage.to_string(),
            message,
        });
    }

    fn waived_ids(&self) -> BTreeSet<usize> {
        self.waived.keys().copied().collect()
    }

    fn effective(&self) -> f64 {
        effective_score(&self.current, &self.waived_ids())
    }

    /// Open, unwaived items: least attempted first, then by size of their
    /// module cluster, then by source position.
    fn schedule(&self) -> Vec<CoverageItem> {
        let mut cluster: BTreeMap<&str, usize> = BTreeMap::new();
        let pending: Vec<&CoverageItem> = self
            .current
            .open_items()
            .filter(|i| i.category.is_scored() && !self.waived.contains_key(&i.id))
            .collect();
        for i in &pending {
            *cluster.entry(&i.hierarchical_name).or_default() += 1;
        }
        let mut pending = pending;
        pending.sort_by(|a, b| {
            let key = |i: &CoverageItem| {
                (
                    self.attempts.get(&i.id).copied().unwrap_or(0),
                    std::cmp::Reverse(cluster[i.hierarchical_name.as_str()]),
                    i.hierarchical_name.clone(),
                    i.source.clone(),
                    i.id,
                )
            };
            key(a).cmp(&key(b))
        });
        pending.into_iter().cloned().collect()
    }

    fn call(
        &mut self,
        client: &LabeledClient<'_>,
        prompt: &str,
        key: String,
    ) -> Result<String, String> {
        self.llm_calls += 1;
        client
            .client
            .complete(prompt, &LlmParams::keyed(key))
            .map_err(|e| e.to_string())
    }

    fn process_item(
        &mut self,
        iteration: usize,
        item: &CoverageItem,
    ) -> Result<ItemResult, RefineError> {
        let id = item.id;
        *self.attempts.entry(id).or_default() += 1;
        let mut result = ItemResult::default();
        let seeds = match seed_signals(item, Some(self.model)) {
            Ok(s) => s,
            Err(e) => {
                self.log(iteration, id, None, "seed", e.to_string());
                return Ok(result);
            }
        };
        let slice = match trace_cross_file(&seeds, self.model) {
            Ok(s) => s,
            Err(e) => {
                self.log(iteration, id, None, "trace", e.to_string());
                return Ok(result);
            }
        };
        let fdut = match patch(&slice, self.model, &self.templates) {
            Ok(f) => f,
            Err(e) => {
                self.log(iteration, id, None, "patch", e.to_string());
                return Ok(result);
            }
        };
        let bundle = match assemble_prompt(item, &slice, &fdut, self.config.context_budget) {
            Ok(b) => b,
            Err(e) => {
                self.log(iteration, id, None, "prompt", e.to_string());
                return Ok(result);
            }
        };
        let prompt = bundle.render();
        let mut waivers: BTreeMap<String, String> = BTreeMap::new();
        let mut failed_models = 0;
        let clients = self.clients;
        for c in clients {
            let label = c.label.as_str();
            let mut reply = match self.call(c, &prompt, format!("seq/{id}/{label}")) {
                Ok(r) => r,
                Err(e) => {
                    failed_models += 1;
                    self.log(iteration, id, Some(label), "llm", e);
                    continue;
                }
            };
            let mut repairs = 0;
            let mut previous: Option<String> = None;
            loop {
                let error = match parse_reply(&reply) {
                    Err(msg) => {
                        self.log(iteration, id, Some(label), "parse", msg.clone());
                        msg
                    }
                    Ok(Reply::Waiver(j)) => {
                        waivers.insert(label.to_string(), j);
                        break;
                    }
                    Ok(Reply::Sequence(body)) => {
                        let cid = format!("c{}", self.candidates.len() + 1);
                        let mut run_label = format!("iter{iteration}/item{id}/{label}");
                        if repairs > 0 {
                            run_label.push_str(&format!("/repair{repairs}"));
                        }
                        let outcome = self.sim.run(&body, &run_label)?;
                        let status = if !outcome.compiled {
                            CandidateStatus::CompileFailed
                        } else if !outcome.simulated {
                            CandidateStatus::SimFailed
                        } else {
                            CandidateStatus::Ran
                        };
                        let mut covered = Vec::new();
                        if status == CandidateStatus::Ran {
                            if let Some(cov) = &outcome.coverage {
                                covered = self.current.merge(cov);
                            }
                            for c in &covered {
                                self.waived.remove(c);
                            }
                            result.covered.extend(covered.iter().copied());
                        }
                        let error_text = outcome.error_text.clone();
                        self.candidates.push(SequenceCandidate {
                            id: cid.clone(),
                            source_model: label.to_string(),
                            target_items: vec![id],
                            iteration,
                            body,
                            status,
                            error_log: error_text.clone(),
                            repair_of: previous.take(),
                            covered,
                            checkers_passed: outcome.checkers_passed,
                        });
                        if status == CandidateStatus::Ran {
                            break;
                        }
                        let msg = error_text.unwrap_or_else(|| format!("{status:?}"));
                        self.log(iteration, id, Some(label), "sim", format!("{cid}: {msg}"));
                        previous = Some(cid);
                        msg
                    }
                };
                if repairs >= self.config.repair_attempts {
                    break;
                }
                repairs += 1;
                let p = repair_prompt(&prompt, &reply, &error);
                reply = match self.call(c, &p, format!("repair/{id}/{label}/{repairs}")) {
                    Ok(r) => r,
                    Err(e) => {
                        self.log(iteration, id, Some(label), "llm", e);
                        break;
                    }
                };
            }
        }
        if failed_models == clients.len() {
            self.log(
                iteration,
                id,
                None,
                "llm",
                "every model failed; item deferred".into(),
            );
        }
        let still_open = self.current.item(id).is_some_and(CoverageItem::is_open);
        if still_open && waivers.len() >= self.config.waiver_quorum {
            let justification = waivers
                .iter()
                .map(|(m, j)| format!("[{m}] {}", j.trim_end()))
                .collect::<Vec<_>>()
                .join("\n");
            self.waived.insert(
                id,
                WaiverCandidate {
                    target_item: id,
                    justification,
                    proposing_models: waivers.keys().cloned().collect(),
                },
            );
            result.waived = true;
        } else if still_open && !waivers.is_empty() {
            self.log(
                iteration,
                id,
                None,
                "waiver",
                format!(
                    "{} of {} models proposed a waiver; quorum is {}",
                    waivers.len(),
                    clients.len(),
                    self.config.waiver_quorum
                ),
            );
        }
        Ok(result)
    }
}

/// Runs the refinement loop until the target score, a stall, or the
/// iteration cap.
pub fn refine(
    model: &DesignModel,
    report: &CoverageReport,
    clients: &[LabeledClient<'_>],
    sim: &mut dyn SimRunner,
    config: &RefineConfig,
) -> Result<VerificationReport, RefineError> {
    config.validate()?;
    if clients.len() < config.waiver_quorum {
        return Err(RefineError::InvalidConfig(format!(
            "{} model(s) cannot reach a waiver quorum of {}",
            clients.len(),
            config.waiver_quorum
        )));
    }
    let mut lp = Loop {
        model,
        clients,
        sim,
        config,
        templates: TemplateLibrary::builtin(),
        current: report.clone(),
        waived: BTreeMap::new(),
        attempts: BTreeMap::new(),
        candidates: Vec::new(),
        errors: Vec::new(),
        llm_calls: 0,
    };
    let initial_label = if report.run_label.is_empty() {
        "initial".to_string()
    } else {
        report.run_label.clone()
    };
    let mut runs = vec![RunRecord {
        run_label: initial_label,
        report: lp.current.clone(),
        effective_score: lp.effective(),
    }];
    let mut iteration = 0;
    let stop_reason = loop {
        if lp.effective() >= config.target_score {
            break StopReason::TargetReached;
        }
        let batch: Vec<CoverageItem> = lp
            .schedule()
            .into_iter()
            .take(config.points_per_iter)
            .collect();
        if batch.is_empty() {
            break StopReason::NothingOpen;
        }
        if iteration == config.max_iters {
            break StopReason::MaxIterations;
        }
        iteration += 1;
        let mut improved = false;
        for item in &batch {
            let r = lp.process_item(iteration, item)?;
            improved |= !r.covered.is_empty() || r.waived;
        }
        let mut snapshot = lp.current.clone();
        snapshot.run_label = format!("iter{iteration}");
        runs.push(RunRecord {
            run_label: snapshot.run_label.clone(),
            report: snapshot,
            effective_score: lp.effective(),
        });
        if !improved {
            break StopReason::NoImprovement;
        }
    };
    let srg_entries: Vec<SrgEntry> = lp
        .candidates
        .iter()
        .map(|c| SrgEntry {
            compiled: c.status != CandidateStatus::CompileFailed,
            simulated: c.status == CandidateStatus::Ran,
            checkers_passed: c.checkers_passed,
        })
        .collect();
    Ok(VerificationReport {
        final_score: lp.effective(),
        runs,
        error_logs: lp.errors,
        candidates: lp.candidates,
        waivers: lp.waived.into_values().collect(),
        srg: compute_srg(&srg_entries).ok(),
        iterations: iteration,
        llm_calls: lp.llm_calls,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn srg(flags: &[(bool, bool, bool)]) -> Result<f64, RefineError> {
        let v: Vec<_> = flags
            .iter()
            .map(|&(compiled, simulated, checkers_passed)| SrgEntry {
                compiled,
                simulated,
                checkers_passed,
            })
            .collect();
        compute_srg(&v)
    }

    #[test]
    fn srg_counts_fully_passing_entries() {
        let mut v = vec![(true, true, true); 14];
        v.push((true, true, false));
        assert_eq!(srg(&v).unwrap(), 93.33);
        assert_eq!(srg(&[(false, false, false); 4]).unwrap(), 0.0);
        assert_eq!(
            srg(&[
                (true, true, false),
                (true, true, true),
                (false, false, false)
            ])
            .unwrap(),
            33.33
        );
        assert!(matches!(srg(&[]), Err(RefineError::EmptyResults)));
    }

    #[test]
    fn envelope_variants() {
        assert_eq!(
            parse_reply("```systemverilog\nSEQUENCE\nclass s; endclass\n```").unwrap(),
            Reply::Sequence("class s; endclass\n".into())
        );
        assert_eq!(
            parse_reply("WAIVER\n```\nreset holds it low\n```\n").unwrap(),
            Reply::Waiver("reset holds it low\n".into())
        );
        assert_eq!(
            parse_reply("```\nWAIVER: tied off\n```").unwrap(),
            Reply::Waiver("tied off\n".into())
        );
        assert!(parse_reply("SEQUENCE\nclass s; endclass").is_err());
        assert!(parse_reply("```\nclass s; endclass\n```").is_err());
        assert!(parse_reply("```\nSEQUENCE\n```").is_err());
        assert!(parse_reply("```\nSEQUENCE\nx").is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(RefineConfig::default().validate().is_ok());
        for c in [
            RefineConfig {
                target_score: 0.0,
                ..Default::default()
            },
            RefineConfig {
                target_score: 100.5,
                ..Default::default()
            },
            RefineConfig {
                waiver_quorum: 4,
                ..Default::default()
            },
            RefineConfig {
                max_iters: 0,
                ..Default::default()
            },
            RefineConfig {
                points_per_iter: 0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}

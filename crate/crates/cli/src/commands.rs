//! Subcommand implementations.

use clap::error::ErrorKind;
use clap::CommandFactory;
use covslice::coverage::{extract_uncovered, read_report, seed_signals, unresolved_hierarchy};
use covslice::ir::{has_errors, read_ir, validate_ir, Finding, Severity};
use covslice::llm::{client_from_spec, LlmClient, LlmParams};
use covslice::patcher::{patch, TemplateLibrary};
use covslice::protocols::{select_skeletons, specialize, ProtocolLibrary, SpecializeOptions};
use covslice::refine::{refine, sim_from_spec, LabeledClient, VerificationReport};
use covslice::tracker::{render_text, trace_cross_file, DependencySlice, SeedSet};
use covslice::verilog::{parse_design, DesignModel};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{ConfigFile, PipelineConfig, RefineFlags};
use crate::{Cli, Command, DesignArgs, IrCommand};

/// Items listed per group by `analyze` unless configured otherwise.
pub const DEFAULT_ANALYZE_BUDGET: usize = 20;

#[derive(Debug)]
pub enum Failure {
    Usage(clap::Error),
    Domain(crate::CliError),
}

impl<E: Into<crate::CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(path: &[&str], message: impl std::fmt::Display) -> Failure {
    let mut cmd = Cli::command();
    cmd.build();
    let mut sub = &mut cmd;
    for p in path {
        sub = sub.find_subcommand_mut(p).expect("known subcommand");
    }
    Failure::Usage(sub.error(ErrorKind::MissingRequiredArgument, message))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> crate::CliError + '_ {
    move |source| crate::CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::Domain(crate::CliError::BadInput {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

/// Files as given, with directories replaced by their `.v`/`.sv` files.
pub fn expand_design(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "v" || x == "sv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_design(paths: &[PathBuf], top: &str) -> Result<DesignModel> {
    let files = expand_design(paths)?;
    log::info!("parsing {} file(s), top {top}", files.len());
    Ok(parse_design(&files, top)?)
}

fn load(d: &DesignArgs) -> Result<DesignModel> {
    load_design(&d.design, &d.top)
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::DumpModel(a) => dump_model(a, out),
        Command::Trace(a) => trace(a, out),
        Command::Patch(a) => patch_cmd(a, out),
        Command::Analyze(a) => analyze(cli, a, out),
        Command::Ir(IrCommand::Validate(a)) => ir_validate(a, out),
        Command::Specialize(a) => specialize_cmd(a, out),
        Command::Refine(a) => refine_cmd(cli, a, out),
        Command::Report(a) => report(a, out),
    }
}

fn dump_model(a: &crate::DumpModelArgs, out: &mut dyn Write) -> Result<()> {
    let model = load(&a.design)?;
    if a.format.json {
        return write_out(out, &to_json(&model));
    }
    let mut s = format!(
        "top {} ({} modules, {} statements)\n",
        model.top_module,
        model.modules.len(),
        model.statements.len()
    );
    for m in &model.modules {
        s.push_str(&format!(
            "module {} {}:{}-{}\n",
            m.name,
            m.file.display(),
            m.line_start,
            m.line_end
        ));
        let ports: Vec<String> = m
            .ports
            .iter()
            .map(|p| format!("{} {}[{}]", p.direction, p.name, p.width))
            .collect();
        s.push_str(&format!("  ports: {}\n", ports.join(", ")));
        for i in &m.instances {
            s.push_str(&format!("  instance {} of {}\n", i.name, i.module));
        }
        for &id in &m.statements {
            let st = &model.statements[id];
            let join = |set: &BTreeSet<String>| set.iter().cloned().collect::<Vec<_>>().join(",");
            s.push_str(&format!(
                "  #{id} {:?} {}-{} reads[{}] writes[{}]\n",
                st.kind,
                st.span.line_start,
                st.span.line_end,
                join(&st.reads),
                join(&st.writes)
            ));
        }
    }
    if !model.black_boxes.is_empty() {
        let bb: Vec<&str> = model.black_boxes.iter().map(String::as_str).collect();
        s.push_str(&format!("black boxes: {}\n", bb.join(", ")));
    }
    write_out(out, &s)
}

fn trace(a: &crate::TraceArgs, out: &mut dyn Write) -> Result<()> {
    let model = load(&a.design)?;
    let bad: Vec<&str> = a
        .seed
        .iter()
        .filter(|s| covslice::verilog::SignalRef::parse(s).is_none())
        .map(String::as_str)
        .collect();
    if !bad.is_empty() {
        return Err(usage(
            &["trace"],
            format!("invalid seed signal(s): {}", bad.join(", ")),
        ));
    }
    let seeds = SeedSet::new(&a.seed);
    let slice = trace_cross_file(&seeds, &model)?;
    if let Some(path) = &a.output {
        write_file(path, &to_json(&slice))?;
    }
    if a.format.json {
        write_out(out, &to_json(&slice))
    } else {
        write_out(out, &render_text(&slice, &model))
    }
}

#[derive(Debug, Serialize)]
struct PatchedFileSummary {
    module: String,
    path: PathBuf,
    lines: usize,
}

#[derive(Debug, Serialize)]
struct PatchSummary {
    out_dir: PathBuf,
    top: Option<String>,
    files: Vec<PatchedFileSummary>,
    provenance_entries: usize,
    housed_statements: usize,
    dropped_statements: Vec<usize>,
    warnings: Vec<String>,
}

fn template_library(dir: Option<&Path>) -> Result<TemplateLibrary> {
    let mut lib = TemplateLibrary::builtin();
    if let Some(d) = dir {
        for t in TemplateLibrary::load_dir(d)?.iter() {
            lib.insert(t.clone());
        }
    }
    Ok(lib)
}

fn patch_cmd(a: &crate::PatchArgs, out: &mut dyn Write) -> Result<()> {
    let model = load(&a.design)?;
    let slice: DependencySlice = read_json(&a.slice)?;
    let lib = template_library(a.templates.as_deref())?;
    let fdut = patch(&slice, &model, &lib)?;
    fdut.write_to(&a.out_dir)?;
    for w in &fdut.warnings {
        log::warn!("{w}");
    }
    let summary = PatchSummary {
        out_dir: a.out_dir.clone(),
        top: fdut.top.clone(),
        files: fdut
            .files
            .iter()
            .map(|f| PatchedFileSummary {
                module: f.module.clone(),
                path: f.path.clone(),
                lines: f.text.lines().count(),
            })
            .collect(),
        provenance_entries: fdut.provenance.len(),
        housed_statements: fdut.housed_statements().len(),
        dropped_statements: fdut.dropped_statements.iter().copied().collect(),
        warnings: fdut.warnings.clone(),
    };
    if a.format.json {
        return write_out(out, &to_json(&summary));
    }
    let mut s = format!(
        "wrote {} file(s) to {}\n",
        summary.files.len(),
        a.out_dir.display()
    );
    for f in &summary.files {
        s.push_str(&format!("  {} ({} lines)\n", f.path.display(), f.lines));
    }
    s.push_str(&format!(
        "  provenance.json ({} entries)\nstatements housed {}, dropped {}\n",
        summary.provenance_entries,
        summary.housed_statements,
        summary.dropped_statements.len()
    ));
    for w in &summary.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    write_out(out, &s)
}

#[derive(Debug, Serialize)]
struct AnalyzeOutput {
    run_label: String,
    score: f64,
    per_category_scores: BTreeMap<String, f64>,
    total_items: usize,
    open_items: usize,
    uncovered: covslice::coverage::UncoveredSummary,
    malformed: Vec<covslice::coverage::Malformed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unresolved_hierarchy: Option<Vec<usize>>,
    /// Seed signals per open item, when a design was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<BTreeMap<usize, Vec<String>>>,
}

fn analyze(cli: &Cli, a: &crate::AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ConfigFile::discover(cli.config.as_deref())?;
    let report = read_report(&a.report)?;
    let budget = a
        .budget
        .or(cfg.analyze.budget)
        .unwrap_or(DEFAULT_ANALYZE_BUDGET);
    if budget == 0 {
        return Err(usage(&["analyze"], "--budget must be at least 1"));
    }
    let summary = extract_uncovered(&report, budget);
    let model = match &a.top {
        Some(top) => Some(load_design(&a.design, top)?),
        None => None,
    };
    let seeds = model.as_ref().map(|m| {
        report
            .open_items()
            .filter_map(|it| match seed_signals(it, Some(m)) {
                Ok(s) => Some((it.id, s.signals.iter().map(|r| r.to_string()).collect())),
                Err(e) => {
                    log::warn!("{e}");
                    None
                }
            })
            .collect()
    });
    let o = AnalyzeOutput {
        run_label: report.run_label.clone(),
        score: report.score,
        per_category_scores: report
            .per_category_scores
            .iter()
            .map(|(c, s)| (c.keyword().to_string(), *s))
            .collect(),
        total_items: report.items.len(),
        open_items: report.open_items().count(),
        uncovered: summary.clone(),
        malformed: report.malformed.clone(),
        unresolved_hierarchy: model.as_ref().map(|m| unresolved_hierarchy(&report, m)),
        seeds,
    };
    if a.format.json {
        return write_out(out, &to_json(&o));
    }
    let mut s = format!(
        "run {}: score {:.2} ({} of {} items open)\n",
        o.run_label, o.score, o.open_items, o.total_items
    );
    for (c, v) in &o.per_category_scores {
        s.push_str(&format!("  {c} {v:.2}\n"));
    }
    s.push_str(&summary.render_text(&report));
    for m in &o.malformed {
        s.push_str(&format!("malformed line {}: {}\n", m.line, m.message));
    }
    if let Some(u) = o.unresolved_hierarchy.as_ref().filter(|u| !u.is_empty()) {
        s.push_str(&format!("unresolved hierarchy for item(s) {u:?}\n"));
    }
    if let Some(seeds) = &o.seeds {
        for (id, sigs) in seeds {
            s.push_str(&format!("seeds item {id}: {}\n", sigs.join(", ")));
        }
    }
    write_out(out, &s)
}

#[derive(Debug, Serialize)]
struct IrValidateOutput {
    file: PathBuf,
    module: String,
    errors: usize,
    warnings: usize,
    findings: Vec<Finding>,
}

fn ir_validate(a: &crate::IrValidateArgs, out: &mut dyn Write) -> Result<()> {
    let doc = read_ir(&a.file)?;
    let model = if a.design.is_empty() {
        None
    } else {
        let top = a.top.clone().unwrap_or_else(|| doc.module_name.clone());
        Some(load_design(&a.design, &top)?)
    };
    let findings = validate_ir(&doc, model.as_ref());
    let count = |s: Severity| findings.iter().filter(|f| f.severity == s).count();
    let o = IrValidateOutput {
        file: a.file.clone(),
        module: doc.module_name.clone(),
        errors: count(Severity::Error),
        warnings: count(Severity::Warning),
        findings: findings.clone(),
    };
    if a.format.json {
        write_out(out, &to_json(&o))?;
    } else {
        let mut s = format!(
            "{}: module {}, {} error(s), {} warning(s)\n",
            a.file.display(),
            o.module,
            o.errors,
            o.warnings
        );
        for f in &findings {
            s.push_str(&format!("  {f}\n"));
        }
        write_out(out, &s)?;
    }
    if has_errors(&findings) {
        return Err(crate::CliError::IrInvalid(o.errors).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ComponentSummary {
    skeleton: String,
    interface: Option<String>,
    file: PathBuf,
    attempts: u32,
    defaulted: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SpecializeOutput {
    module: String,
    out_dir: PathBuf,
    components: Vec<ComponentSummary>,
    findings: Vec<Finding>,
}

fn specialize_cmd(a: &crate::SpecializeArgs, out: &mut dyn Write) -> Result<()> {
    let ir = read_ir(&a.ir)?;
    let lib = match &a.protocol_lib {
        Some(d) => ProtocolLibrary::load(d)?,
        None => ProtocolLibrary::builtin(),
    };
    if let Some(name) = &a.interface {
        if ir.interface(name).is_none() {
            return Err(covslice::protocols::ProtocolError::UnknownInterface(name.clone()).into());
        }
    }
    let client = client_from_spec(&a.llm)?;
    let opts = SpecializeOptions {
        max_attempts: a.max_attempts,
        params: LlmParams::default(),
    };
    let selection = select_skeletons(&ir, &lib)?;
    for f in &selection.findings {
        log::warn!("{f}");
    }
    let mut components = Vec::new();
    for sel in &selection.skeletons {
        if a.interface.as_ref().is_some_and(|i| *i != sel.interface) {
            continue;
        }
        components.push(specialize(
            &sel.skeleton,
            &ir,
            Some(&sel.interface),
            client.as_ref(),
            &opts,
        )?);
    }
    if a.env {
        let env = lib.env().ok_or_else(|| crate::CliError::BadInput {
            path: a
                .protocol_lib
                .clone()
                .unwrap_or_else(|| PathBuf::from("<builtin>")),
            message: "the skeleton library has no env.svt".into(),
        })?;
        components.push(specialize(env, &ir, None, client.as_ref(), &opts)?);
    }
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let mut summary = Vec::new();
    for c in &components {
        let file = a.out_dir.join(c.file_name());
        write_file(&file, &c.output_text)?;
        summary.push(ComponentSummary {
            skeleton: c.skeleton_id.clone(),
            interface: c.interface.clone(),
            file,
            attempts: c.attempts,
            defaulted: c.defaulted.clone(),
        });
    }
    let o = SpecializeOutput {
        module: ir.module_name.clone(),
        out_dir: a.out_dir.clone(),
        components: summary,
        findings: selection.findings.clone(),
    };
    if a.format.json {
        return write_out(out, &to_json(&o));
    }
    let mut s = format!(
        "specialized {} component(s) for {}\n",
        o.components.len(),
        o.module
    );
    for c in &o.components {
        s.push_str(&format!(
            "  {} -> {} ({} attempt(s))",
            c.skeleton,
            c.file.display(),
            c.attempts
        ));
        if !c.defaulted.is_empty() {
            s.push_str(&format!(", defaulted {}", c.defaulted.join(", ")));
        }
        s.push('\n');
    }
    for f in &o.findings {
        s.push_str(&format!("{f}\n"));
    }
    write_out(out, &s)
}

fn refine_cmd(cli: &Cli, a: &crate::RefineArgs, out: &mut dyn Write) -> Result<()> {
    let file = ConfigFile::discover(cli.config.as_deref())?;
    let flags = RefineFlags {
        context_budget: a.context_budget,
        points_per_iter: a.points_per_iter,
        repair_attempts: a.repair_attempts,
        waiver_quorum: a.waiver_quorum,
        target_score: a.target,
        max_iters: a.max_iters,
    };
    let cfg = PipelineConfig::resolve(&file, &flags, &a.llm, a.sim.as_deref())?;
    let Some(sim_spec) = &cfg.sim else {
        return Err(usage(
            &["refine"],
            "a simulator is required: pass --sim or set [sim] backend in the config file",
        ));
    };
    if cfg.llms.is_empty() {
        return Err(usage(
            &["refine"],
            "at least one --llm LABEL=SPEC is required",
        ));
    }
    let labels: BTreeSet<&str> = cfg.llms.iter().map(|(l, _)| l.as_str()).collect();
    if labels.len() != cfg.llms.len() {
        return Err(usage(&["refine"], "--llm labels must be distinct"));
    }
    let model = load(&a.design)?;
    let report = read_report(&a.report)?;
    let clients: Vec<(String, Box<dyn LlmClient>)> = cfg
        .llms
        .iter()
        .map(|(l, spec)| client_from_spec(spec).map(|c| (l.clone(), c)))
        .collect::<std::result::Result<_, _>>()?;
    let labeled: Vec<LabeledClient<'_>> = clients
        .iter()
        .map(|(l, c)| LabeledClient::new(l.clone(), c.as_ref()))
        .collect();
    let mut sim = sim_from_spec(sim_spec, &report)?;
    let result = refine(&model, &report, &labeled, sim.as_mut(), &cfg.refine)?;
    let json = result.to_json();
    if let Some(path) = &a.output {
        write_file(path, &json)?;
    }
    if a.format.json {
        write_out(out, &json)
    } else {
        write_out(out, &result.render_text())
    }
}

fn report(a: &crate::ReportArgs, out: &mut dyn Write) -> Result<()> {
    let r: VerificationReport = read_json(&a.file)?;
    if a.format.json {
        write_out(out, &r.to_json())
    } else {
        write_out(out, &r.render_text())
    }
}

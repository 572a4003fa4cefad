//! Rebuilds a dependency slice into compilable Verilog (the Filtered DUT).
//!
//! Each module touched by the slice gets a fresh shell whose port list keeps
//! only what the slice uses. Subtrees that survived whole are copied
//! verbatim; partial ones are rebuilt inside-out: case groups get their
//! header back (plus a `default: ;` when branches were dropped), `if` arms
//! get their conditions back, and procedural fragments are wrapped in an
//! `always` block with a recovered sensitivity list. Every emitted line
//! records where it came from.
//!
//! Wrappers come from a [`TemplateLibrary`] of plain-text templates with
//! `{{hole}}` markers. The built-in set lives in `templates/` and can be
//! overridden from a directory.

use crate::tracker::DependencySlice;
use crate::verilog::{
    Arm, Construct, DeclClass, DesignModel, Direction, ModelError, ModuleDef, Statement,
    StatementKind, StmtId,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstructKind {
    ModuleShell,
    AlwaysBlock,
    CaseBlock,
    ContinuousAssign,
    InstanceConnection,
}

impl ConstructKind {
    pub const ALL: [ConstructKind; 5] = [
        Self::ModuleShell,
        Self::AlwaysBlock,
        Self::CaseBlock,
        Self::ContinuousAssign,
        Self::InstanceConnection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ModuleShell => "ModuleShell",
            Self::AlwaysBlock => "AlwaysBlock",
            Self::CaseBlock => "CaseBlock",
            Self::ContinuousAssign => "ContinuousAssign",
            Self::InstanceConnection => "InstanceConnection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("fragment spans unrelated contexts")]
    MixedContext,
    #[error("no template for {}", .0.name())]
    TemplateMissing(ConstructKind),
    #[error("invalid template {name}: {message}")]
    TemplateInvalid { name: String, message: String },
    #[error("template {} has no value for `{hole}`", kind.name())]
    HoleMissing { kind: ConstructKind, hole: String },
    #[error("statement {0} is not in the design")]
    UnknownStatement(StmtId),
    #[error("reconstructed design does not parse: {0}")]
    UnparseableResult(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A wrapper template: text before and after a body, with named holes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchTemplate {
    pub kind: ConstructKind,
    pub header: String,
    pub footer: String,
    /// Extra text placed before the footer when a group was truncated.
    pub filler: Option<String>,
    pub required: Vec<String>,
}

fn holes_in(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        let after = &rest[i + 2..];
        match after.find("}}") {
            Some(j) => {
                out.insert(after[..j].trim().to_string());
                rest = &after[j + 2..];
            }
            None => break,
        }
    }
    out
}

impl PatchTemplate {
    /// Parses the `kind = ...` / `requires = ...` / `@@section` format.
    pub fn parse(name: &str, text: &str) -> Result<Self, PatchError> {
        let invalid = |message: String| PatchError::TemplateInvalid {
            name: name.to_string(),
            message,
        };
        let mut kind = None;
        let mut required = Vec::new();
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            if let Some(section) = line.strip_prefix("@@") {
                let section = section.trim();
                if !matches!(section, "header" | "footer" | "filler") {
                    return Err(invalid(format!("unknown section @@{section}")));
                }
                if sections.insert(section, Vec::new()).is_some() {
                    return Err(invalid(format!("section @@{section} repeated")));
                }
                current = Some(section);
                continue;
            }
            match current {
                Some(sec) => sections.get_mut(sec).expect("section opened").push(line),
                None => {
                    let t = line.trim();
                    if t.is_empty() || t.starts_with('#') {
                        continue;
                    }
                    let (key, value) = t
                        .split_once('=')
                        .ok_or_else(|| invalid(format!("expected `key = value`, got `{t}`")))?;
                    match key.trim() {
                        "kind" => {
                            kind = Some(ConstructKind::parse(value.trim()).ok_or_else(|| {
                                invalid(format!("unknown kind `{}`", value.trim()))
                            })?)
                        }
                        "requires" => {
                            required = value
                                .split(',')
                                .map(str::trim)
                                .filter(|s| !s.is_empty())
                                .map(String::from)
                                .collect()
                        }
                        other => return Err(invalid(format!("unknown key `{other}`"))),
                    }
                }
            }
        }
        let kind = kind.ok_or_else(|| invalid("missing `kind`".into()))?;
        let join = |s: Option<&Vec<&str>>| s.map(|l| l.join("\n")).unwrap_or_default();
        let header = sections
            .get("header")
            .map(|l| l.join("\n"))
            .ok_or_else(|| invalid("missing @@header".into()))?;
        let footer = sections
            .get("footer")
            .map(|l| l.join("\n"))
            .ok_or_else(|| invalid("missing @@footer".into()))?;
        let filler = sections.get("filler").map(|l| join(Some(l)));
        let t = Self {
            kind,
            header,
            footer,
            filler,
            required,
        };
        let declared: BTreeSet<String> = t.required.iter().cloned().collect();
        let used: BTreeSet<String> = holes_in(&t.header)
            .into_iter()
            .chain(holes_in(&t.footer))
            .chain(t.filler.iter().flat_map(|f| holes_in(f)))
            .collect();
        if let Some(h) = used.difference(&declared).next() {
            return Err(invalid(format!("hole `{h}` not listed in requires")));
        }
        Ok(t)
    }

    fn fill(&self, text: &str, values: &BTreeMap<&str, String>) -> Result<String, PatchError> {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(i) = rest.find("{{") {
            out.push_str(&rest[..i]);
            let after = &rest[i + 2..];
            let j = after.find("}}").unwrap_or(after.len());
            let hole = after[..j].trim();
            let v = values.get(hole).ok_or_else(|| PatchError::HoleMissing {
                kind: self.kind,
                hole: hole.to_string(),
            })?;
            out.push_str(v);
            rest = after.get(j + 2..).unwrap_or("");
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn render_header(&self, values: &BTreeMap<&str, String>) -> Result<String, PatchError> {
        self.fill(&self.header, values)
    }

    pub fn render_footer(&self, values: &BTreeMap<&str, String>) -> Result<String, PatchError> {
        self.fill(&self.footer, values)
    }

    /// Header, body, optional filler and footer joined by newlines.
    pub fn wrap(
        &self,
        values: &BTreeMap<&str, String>,
        body: &str,
        truncated: bool,
    ) -> Result<String, PatchError> {
        let mut parts = vec![self.render_header(values)?, body.to_string()];
        if truncated {
            if let Some(f) = &self.filler {
                parts.push(self.fill(f, values)?);
            }
        }
        parts.push(self.render_footer(values)?);
        Ok(parts
            .into_iter()
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: BTreeMap<ConstructKind, PatchTemplate>,
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "module_shell.tpl",
        include_str!("../templates/module_shell.tpl"),
    ),
    (
        "always_block.tpl",
        include_str!("../templates/always_block.tpl"),
    ),
    (
        "case_block.tpl",
        include_str!("../templates/case_block.tpl"),
    ),
    (
        "continuous_assign.tpl",
        include_str!("../templates/continuous_assign.tpl"),
    ),
    (
        "instance_connection.tpl",
        include_str!("../templates/instance_connection.tpl"),
    ),
];

impl TemplateLibrary {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut lib = Self::empty();
        for (name, text) in BUILTIN {
            lib.insert(PatchTemplate::parse(name, text).expect("built-in template is valid"));
        }
        lib
    }

    /// Built-in templates overridden by every `*.tpl` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PatchError> {
        let io = |source| PatchError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut lib = Self::builtin();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "tpl"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|source| PatchError::Io {
                path: p.clone(),
                source,
            })?;
            lib.insert(PatchTemplate::parse(&p.display().to_string(), &text)?);
        }
        Ok(lib)
    }

    pub fn insert(&mut self, t: PatchTemplate) {
        self.templates.insert(t.kind, t);
    }

    pub fn remove(&mut self, kind: ConstructKind) -> Option<PatchTemplate> {
        self.templates.remove(&kind)
    }

    pub fn get(&self, kind: ConstructKind) -> Result<&PatchTemplate, PatchError> {
        self.templates
            .get(&kind)
            .ok_or(PatchError::TemplateMissing(kind))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PatchTemplate> {
        self.templates.values()
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchedFile {
    pub module: String,
    pub path: PathBuf,
    pub text: String,
}

/// One emitted line traced back to its source. A line may carry several
/// entries when nested statements share it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub out_file: PathBuf,
    pub out_line: usize,
    pub orig_file: PathBuf,
    pub orig_line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement_id: Option<StmtId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredDut {
    pub files: Vec<PatchedFile>,
    /// The original top module, when the slice reaches it.
    pub top: Option<String>,
    pub provenance: Vec<Provenance>,
    pub dropped_statements: BTreeSet<StmtId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FilteredDut {
    /// Slice statements that made it into the output.
    pub fn housed_statements(&self) -> BTreeSet<StmtId> {
        self.provenance
            .iter()
            .filter_map(|p| p.statement_id)
            .collect()
    }

    pub fn line_count(&self) -> usize {
        self.files.iter().map(|f| f.text.lines().count()).sum()
    }

    pub fn file(&self, module: &str) -> Option<&PatchedFile> {
        self.files.iter().find(|f| f.module == module)
    }

    /// Parses the reconstructed files as a design.
    pub fn parse(&self) -> Result<DesignModel, ModelError> {
        let sources = self
            .files
            .iter()
            .map(|f| (f.path.clone(), f.text.clone()))
            .collect();
        match &self.top {
            Some(top) => DesignModel::from_sources(sources, top),
            None => DesignModel::from_sources_any_top(sources),
        }
    }

    /// Writes one file per module plus `provenance.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), PatchError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PatchError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for f in &self.files {
            let p = dir.join(&f.path);
            std::fs::write(&p, &f.text).map_err(io(&p))?;
        }
        let p = dir.join("provenance.json");
        let json = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(&p, json + "\n").map_err(io(&p))
    }

    /// Text of all files, each preceded by a `// file: name` line.
    pub fn combined_text(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&format!("// file: {}\n", f.path.display()));
            out.push_str(&f.text);
        }
        out
    }
}

/// Construct kind that houses a group of statements.
pub fn classify_fragment(
    group: &BTreeSet<StmtId>,
    model: &DesignModel,
) -> Result<ConstructKind, PatchError> {
    let mut stmts = Vec::with_capacity(group.len());
    for &id in group {
        stmts.push(
            model
                .statement(id)
                .ok_or(PatchError::UnknownStatement(id))?,
        );
    }
    let Some(first) = stmts.first() else {
        return Ok(ConstructKind::ModuleShell);
    };
    if stmts.iter().any(|s| s.module != first.module) {
        return Err(PatchError::MixedContext);
    }
    if stmts.iter().all(|s| s.parent.is_none()) {
        let kinds: BTreeSet<StatementKind> = stmts.iter().map(|s| s.kind).collect();
        if kinds.len() == 1 {
            return Ok(match first.kind {
                StatementKind::ContinuousAssign => ConstructKind::ContinuousAssign,
                StatementKind::AlwaysBlock if stmts.len() == 1 => ConstructKind::AlwaysBlock,
                StatementKind::InstanceConnection
                    if stmts.iter().all(|s| instance_of(s) == instance_of(first)) =>
                {
                    ConstructKind::InstanceConnection
                }
                _ => ConstructKind::ModuleShell,
            });
        }
        return Ok(ConstructKind::ModuleShell);
    }
    // Nearest common ancestor, each chain including the statement itself.
    let chains: Vec<Vec<StmtId>> = stmts
        .iter()
        .map(|s| {
            let mut c = vec![s.id];
            c.extend(model.ancestors(s.id));
            c
        })
        .collect();
    let nca = chains[0]
        .iter()
        .copied()
        .find(|a| chains[1..].iter().all(|c| c.contains(a)))
        .ok_or(PatchError::MixedContext)?;
    let mut cur = Some(nca);
    while let Some(id) = cur {
        match model.statements[id].kind {
            StatementKind::CaseBlock | StatementKind::CaseBranch => {
                return Ok(ConstructKind::CaseBlock)
            }
            StatementKind::AlwaysBlock => return Ok(ConstructKind::AlwaysBlock),
            StatementKind::ContinuousAssign => return Ok(ConstructKind::ContinuousAssign),
            StatementKind::InstanceConnection => return Ok(ConstructKind::InstanceConnection),
            _ => cur = model.statements[id].parent,
        }
    }
    Ok(ConstructKind::ModuleShell)
}

fn instance_of(s: &Statement) -> Option<&str> {
    match &s.construct {
        Construct::Binding { instance, .. } => Some(instance),
        _ => None,
    }
}

enum Sensitivity {
    /// The always header is part of the fragment.
    Header(String),
    /// Recovered from the original block.
    Recovered(String),
    /// Guessed from clock/reset-like names.
    Guessed(String, Vec<String>),
    Star,
}

impl Sensitivity {
    fn text(&self) -> &str {
        match self {
            Sensitivity::Header(t) | Sensitivity::Recovered(t) | Sensitivity::Guessed(t, _) => t,
            Sensitivity::Star => "@(*)",
        }
    }
}

/// Sensitivity list for a procedural fragment.
///
/// The original header is reused when it is in the fragment, or recovered
/// from the enclosing block when that block is edge-triggered. Otherwise
/// fragments with non-blocking assignments get a clock/reset list guessed
/// from signal names, and everything else gets `@(*)`.
pub fn reconstruct_sensitivity(fragment: &BTreeSet<StmtId>, model: &DesignModel) -> String {
    sensitivity(fragment, model).text().to_string()
}

fn sensitivity(fragment: &BTreeSet<StmtId>, model: &DesignModel) -> Sensitivity {
    let always = fragment.iter().find_map(|&id| {
        std::iter::once(id)
            .chain(model.ancestors(id))
            .find(|&a| model.statements[a].kind == StatementKind::AlwaysBlock)
    });
    if let Some(a) = always {
        if let Construct::Always { sensitivity, edges } = &model.statements[a].construct {
            if fragment.contains(&a) {
                return Sensitivity::Header(sensitivity.clone());
            }
            if !edges.is_empty() {
                return Sensitivity::Recovered(sensitivity.clone());
            }
        }
    }
    let nonblocking = fragment.iter().any(|&id| {
        std::iter::once(id)
            .chain(model.descendants(id))
            .any(|d| model.statements[d].is_nonblocking())
    });
    if nonblocking {
        if let Some(module) = fragment
            .iter()
            .next()
            .and_then(|&id| model.module(&model.statements[id].module))
        {
            if let Some(g) = guess_clock_reset(module) {
                return g;
            }
        }
    }
    Sensitivity::Star
}

fn guess_clock_reset(m: &ModuleDef) -> Option<Sensitivity> {
    let names: Vec<&String> = m.event_signals.iter().chain(m.signals.keys()).collect();
    let clk = names.iter().find(|n| {
        let l = n.to_ascii_lowercase();
        l.contains("clk") || l.contains("clock")
    })?;
    let rst = names.iter().find(|n| {
        let l = n.to_ascii_lowercase();
        l.contains("rst") || l.contains("reset")
    });
    Some(match rst {
        Some(r) => {
            let edge = if r.ends_with("_n") || r.ends_with("_b") || r.ends_with('n') {
                "negedge"
            } else {
                "posedge"
            };
            Sensitivity::Guessed(
                format!("@(posedge {clk} or {edge} {r})"),
                vec![clk.to_string(), r.to_string()],
            )
        }
        None => Sensitivity::Guessed(format!("@(posedge {clk})"), vec![clk.to_string()]),
    })
}

/// Rebuilds `slice` into a Filtered DUT.
pub fn patch(
    slice: &DependencySlice,
    model: &DesignModel,
    templates: &TemplateLibrary,
) -> Result<FilteredDut, PatchError> {
    patch_statements(&slice.statements(), &slice.entry_ports, model, templates)
}

/// Rebuilds an arbitrary statement set. `entry_ports` are kept on the top
/// module even when no kept statement uses them.
pub fn patch_statements(
    ids: &BTreeSet<StmtId>,
    entry_ports: &BTreeSet<String>,
    model: &DesignModel,
    templates: &TemplateLibrary,
) -> Result<FilteredDut, PatchError> {
    for &id in ids {
        model
            .statement(id)
            .ok_or(PatchError::UnknownStatement(id))?;
    }
    for kind in ConstructKind::ALL {
        templates.get(kind)?;
    }
    let mut by_module: BTreeMap<&str, BTreeSet<StmtId>> = BTreeMap::new();
    for &id in ids {
        by_module
            .entry(model.statements[id].module.as_str())
            .or_default()
            .insert(id);
    }
    // Formals each child must keep because a parent binds them.
    let mut bound: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for &id in ids {
        if let Construct::Binding {
            instance, formal, ..
        } = &model.statements[id].construct
        {
            let parent = model
                .module(&model.statements[id].module)
                .expect("module exists");
            if let Some(inst) = parent.instance(instance) {
                if model.module(&inst.module).is_some() {
                    bound
                        .entry(inst.module.clone())
                        .or_default()
                        .insert(formal.clone());
                }
            }
        }
    }
    let touched: BTreeSet<&str> = by_module
        .keys()
        .copied()
        .chain(bound.keys().map(String::as_str))
        .collect();
    // Hierarchy order for output, children before parents for emission so
    // that parents can bind every port a child kept.
    let mut order: Vec<&ModuleDef> = model
        .hierarchy()
        .into_iter()
        .filter(|m| touched.contains(m.name.as_str()))
        .collect();
    for m in &model.modules {
        if touched.contains(m.name.as_str()) && !order.iter().any(|o| o.name == m.name) {
            order.push(m);
        }
    }
    let mut emit_order: Vec<&ModuleDef> = Vec::new();
    fn post_order<'m>(
        m: &'m ModuleDef,
        model: &'m DesignModel,
        touched: &BTreeSet<&str>,
        seen: &mut BTreeSet<String>,
        out: &mut Vec<&'m ModuleDef>,
    ) {
        if !seen.insert(m.name.clone()) {
            return;
        }
        for inst in &m.instances {
            if let Some(c) = model.module(&inst.module) {
                post_order(c, model, touched, seen, out);
            }
        }
        if touched.contains(m.name.as_str()) {
            out.push(m);
        }
    }
    let mut seen = BTreeSet::new();
    for m in &order {
        post_order(m, model, &touched, &mut seen, &mut emit_order);
    }

    let empty = BTreeSet::new();
    let no_ports = BTreeSet::new();
    let mut fdut = FilteredDut {
        top: touched
            .contains(model.top_module.as_str())
            .then(|| model.top_module.clone()),
        ..FilteredDut::default()
    };
    let mut kept_ports: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut emitted: BTreeMap<String, PatchedFile> = BTreeMap::new();
    for m in emit_order {
        let keep = by_module.get(m.name.as_str()).unwrap_or(&empty);
        let is_top = m.name == model.top_module;
        let mut em = ModuleEmitter {
            model,
            module: m,
            keep,
            lib: templates,
            child_ports: &kept_ports,
            needed: BTreeSet::new(),
            declared_inline: BTreeSet::new(),
            warnings: Vec::new(),
        };
        let (lines, ports) = em.emit(
            bound.get(&m.name).unwrap_or(&BTreeSet::new()),
            if is_top { entry_ports } else { &no_ports },
        )?;
        let path = PathBuf::from(format!("{}.v", m.name));
        let mut text = String::new();
        for (n, line) in lines.iter().enumerate() {
            text.push_str(&line.text);
            text.push('\n');
            if let Some(orig) = line.orig {
                if line.stmts.is_empty() {
                    fdut.provenance.push(Provenance {
                        out_file: path.clone(),
                        out_line: n + 1,
                        orig_file: m.file.clone(),
                        orig_line: orig,
                        statement_id: None,
                    });
                }
                for &(sid, sline) in &line.stmts {
                    fdut.provenance.push(Provenance {
                        out_file: path.clone(),
                        out_line: n + 1,
                        orig_file: m.file.clone(),
                        orig_line: sline,
                        statement_id: Some(sid),
                    });
                }
            }
        }
        fdut.warnings.extend(em.warnings);
        kept_ports.insert(m.name.clone(), ports);
        emitted.insert(
            m.name.clone(),
            PatchedFile {
                module: m.name.clone(),
                path,
                text,
            },
        );
    }
    fdut.files = order
        .iter()
        .filter_map(|m| emitted.remove(&m.name))
        .collect();
    fdut.provenance.sort_by(|a, b| {
        let pos = |f: &Path| fdut.files.iter().position(|x| x.path == f);
        (pos(&a.out_file), a.out_line).cmp(&(pos(&b.out_file), b.out_line))
    });
    let housed = fdut.housed_statements();
    fdut.dropped_statements = ids.difference(&housed).copied().collect();
    for id in &fdut.dropped_statements {
        fdut.warnings
            .push(format!("statement {id} could not be placed in the output"));
    }
    fdut.parse()
        .map_err(|e| PatchError::UnparseableResult(e.to_string()))?;
    Ok(fdut)
}

struct Line {
    text: String,
    orig: Option<usize>,
    /// Kept statements on this line with the original line they map to.
    stmts: Vec<(StmtId, usize)>,
}

impl Line {
    fn synth(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            orig: None,
            stmts: Vec::new(),
        }
    }

    fn from(text: impl Into<String>, orig: usize, stmts: Vec<(StmtId, usize)>) -> Self {
        Self {
            text: text.into(),
            orig: Some(orig),
            stmts,
        }
    }
}

const INDENT: &str = "  ";

struct ModuleEmitter<'a> {
    model: &'a DesignModel,
    module: &'a ModuleDef,
    keep: &'a BTreeSet<StmtId>,
    lib: &'a TemplateLibrary,
    child_ports: &'a BTreeMap<String, BTreeSet<String>>,
    needed: BTreeSet<String>,
    declared_inline: BTreeSet<String>,
    warnings: Vec<String>,
}

impl<'a> ModuleEmitter<'a> {
    fn st(&self, id: StmtId) -> &'a Statement {
        &self.model.statements[id]
    }

    fn kept(&self, id: StmtId) -> bool {
        self.keep.contains(&id)
    }

    fn complete(&self, id: StmtId) -> bool {
        self.kept(id) && self.model.descendants(id).iter().all(|d| self.kept(*d))
    }

    fn note_signals(&mut self, id: StmtId) {
        let s = self.st(id);
        self.needed.extend(s.reads.iter().cloned());
        self.needed.extend(s.writes.iter().cloned());
    }

    /// Copies a statement's source text, re-indented to `depth`.
    fn verbatim(&mut self, id: StmtId, depth: usize) -> Vec<Line> {
        let s = self.st(id);
        let subtree: Vec<StmtId> = std::iter::once(id)
            .chain(self.model.descendants(id))
            .filter(|d| self.kept(*d))
            .collect();
        for &d in &subtree {
            self.note_signals(d);
        }
        let col = self
            .model
            .source_text(&s.span.file)
            .map(|src| {
                let before = &src[..s.span.byte_start];
                before.len() - before.rfind('\n').map_or(0, |i| i + 1)
            })
            .unwrap_or(0);
        let indent = INDENT.repeat(depth);
        s.raw_text
            .split('\n')
            .enumerate()
            .map(|(k, raw)| {
                let raw = raw.trim_end();
                let body = if k == 0 {
                    raw
                } else {
                    let ws = raw.len() - raw.trim_start().len();
                    &raw[ws.min(col)..]
                };
                let orig = s.span.line_start + k;
                let stmts = subtree
                    .iter()
                    .filter(|&&d| {
                        let sp = &self.model.statements[d].span;
                        sp.line_start <= orig && orig <= sp.line_end
                    })
                    .map(|&d| (d, orig))
                    .collect();
                let text = if body.is_empty() {
                    String::new()
                } else {
                    format!("{indent}{body}")
                };
                Line::from(text, orig, stmts)
            })
            .collect()
    }

    fn header_line(&self, id: StmtId, text: String, depth: usize) -> Line {
        let s = self.st(id);
        let stmts = if self.kept(id) {
            vec![(id, s.span.line_start)]
        } else {
            Vec::new()
        };
        Line::from(
            format!("{}{text}", INDENT.repeat(depth)),
            s.span.line_start,
            stmts,
        )
    }

    /// Procedural statement, rebuilt as needed. Empty when nothing of the
    /// subtree survives.
    fn procedural(&mut self, id: StmtId, depth: usize) -> Result<Vec<Line>, PatchError> {
        let s = self.st(id);
        if self.complete(id) {
            return Ok(self.verbatim(id, depth));
        }
        let pad = INDENT.repeat(depth);
        match &s.construct {
            Construct::If { condition, .. } => {
                let mut then_lines = Vec::new();
                let mut else_lines = Vec::new();
                for &c in &s.children {
                    let lines = self.procedural(c, depth + 1)?;
                    if self.st(c).arm == Some(Arm::Else) {
                        else_lines.extend(lines);
                    } else {
                        then_lines.extend(lines);
                    }
                }
                if !self.kept(id) && then_lines.is_empty() && else_lines.is_empty() {
                    return Ok(Vec::new());
                }
                self.needed.extend(s.reads.iter().cloned());
                let mut out = vec![self.header_line(id, format!("if {condition} begin"), depth)];
                out.extend(then_lines);
                if else_lines.is_empty() {
                    out.push(Line::synth(format!("{pad}end")));
                } else {
                    out.push(Line::synth(format!("{pad}end else begin")));
                    out.extend(else_lines);
                    out.push(Line::synth(format!("{pad}end")));
                }
                Ok(out)
            }
            Construct::Case {
                keyword, selector, ..
            } => {
                let mut body = Vec::new();
                let mut dropped = false;
                let mut default_kept = false;
                for &c in &s.children {
                    let lines = self.procedural(c, depth + 1)?;
                    if lines.is_empty() {
                        dropped = true;
                    } else if matches!(
                        self.st(c).construct,
                        Construct::Branch {
                            is_default: true,
                            ..
                        }
                    ) {
                        default_kept = true;
                    }
                    body.extend(lines);
                }
                if !self.kept(id) && body.is_empty() {
                    return Ok(Vec::new());
                }
                if !self.kept(id) {
                    self.warnings.push(format!(
                        "{}: selector {selector} of case at line {} copied from the original; its drivers may be absent",
                        self.module.name, s.span.line_start
                    ));
                }
                self.needed.extend(s.reads.iter().cloned());
                let t = self.lib.get(ConstructKind::CaseBlock)?;
                let values =
                    BTreeMap::from([("keyword", keyword.clone()), ("selector", selector.clone())]);
                let header = t.render_header(&values)?;
                let mut out = Vec::new();
                for (k, h) in header.lines().enumerate() {
                    if k == 0 {
                        out.push(self.header_line(id, h.to_string(), depth));
                    } else {
                        out.push(Line::synth(format!("{pad}{h}")));
                    }
                }
                out.extend(body);
                if dropped && !default_kept {
                    if let Some(f) = &t.filler {
                        for l in t.fill(f, &values)?.lines() {
                            out.push(Line::synth(format!("{pad}{INDENT}{l}")));
                        }
                    }
                }
                for l in t.render_footer(&values)?.lines() {
                    out.push(Line::synth(format!("{pad}{l}")));
                }
                Ok(out)
            }
            Construct::Branch { labels, .. } => {
                let mut body = Vec::new();
                for &c in &s.children {
                    body.extend(self.procedural(c, depth + 1)?);
                }
                if !self.kept(id) && body.is_empty() {
                    return Ok(Vec::new());
                }
                self.needed.extend(s.reads.iter().cloned());
                if body.is_empty() {
                    return Ok(vec![self.header_line(id, format!("{labels}: ;"), depth)]);
                }
                let mut out = vec![self.header_line(id, format!("{labels}: begin"), depth)];
                out.extend(body);
                out.push(Line::synth(format!("{pad}end")));
                Ok(out)
            }
            _ if self.kept(id) => Ok(self.verbatim(id, depth)),
            _ => Ok(Vec::new()),
        }
    }

    fn always(&mut self, id: StmtId) -> Result<Vec<Line>, PatchError> {
        if self.complete(id) {
            return Ok(self.verbatim(id, 1));
        }
        let s = self.st(id);
        let mut body = Vec::new();
        for &c in &s.children {
            body.extend(self.procedural(c, 2)?);
        }
        if !self.kept(id) && body.is_empty() {
            return Ok(Vec::new());
        }
        let fragment: BTreeSet<StmtId> = std::iter::once(id)
            .chain(self.model.descendants(id))
            .filter(|d| self.kept(*d))
            .collect();
        let sens = sensitivity(&fragment, self.model);
        match &sens {
            Sensitivity::Header(_) | Sensitivity::Recovered(_) => {
                self.needed.extend(s.reads.iter().cloned())
            }
            Sensitivity::Guessed(_, names) => self.needed.extend(names.iter().cloned()),
            Sensitivity::Star => {}
        }
        if matches!(sens, Sensitivity::Guessed(..)) {
            self.warnings.push(format!(
                "{}: guessed sensitivity {} for block at line {}",
                self.module.name,
                sens.text(),
                s.span.line_start
            ));
        }
        let t = self.lib.get(ConstructKind::AlwaysBlock)?;
        let values = BTreeMap::from([("sensitivity", sens.text().to_string())]);
        let mut out = Vec::new();
        for (k, h) in t.render_header(&values)?.lines().enumerate() {
            if k == 0 {
                out.push(self.header_line(id, h.to_string(), 1));
            } else {
                out.push(Line::synth(format!("{INDENT}{h}")));
            }
        }
        out.extend(body);
        for l in t.render_footer(&values)?.lines() {
            out.push(Line::synth(format!("{INDENT}{l}")));
        }
        Ok(out)
    }

    fn instance(&mut self, name: &str) -> Result<Vec<Line>, PatchError> {
        let inst = self
            .module
            .instance(name)
            .expect("binding names an instance");
        let child = self.model.module(&inst.module);
        let kept: Vec<_> = inst
            .bindings
            .iter()
            .filter(|b| self.binding_emitted(&inst.module, b))
            .collect();
        let unresolved = kept
            .iter()
            .any(|b| child.is_none_or(|c| c.port(&b.formal).is_none()));
        let positional = inst.positional && (unresolved || kept.len() == inst.bindings.len());
        if inst.positional && unresolved && kept.len() < inst.bindings.len() {
            self.warnings.push(format!(
                "{}: instance {} keeps a subset of positional bindings of an unresolved module",
                self.module.name, inst.name
            ));
        }
        let t = self.lib.get(ConstructKind::InstanceConnection)?;
        let values = BTreeMap::from([
            ("child", inst.module.clone()),
            (
                "params",
                inst.params
                    .as_ref()
                    .map(|p| format!(" {p}"))
                    .unwrap_or_default(),
            ),
            ("instance", inst.name.clone()),
        ]);
        let mut out = Vec::new();
        for h in t.render_header(&values)?.lines() {
            out.push(Line::from(format!("{INDENT}{h}"), inst.line, Vec::new()));
        }
        for (k, b) in kept.iter().enumerate() {
            self.note_signals(b.statement);
            let s = self.st(b.statement);
            let text = if positional {
                b.actual.clone()
            } else if s.span.line_start == s.span.line_end && !inst.positional {
                s.raw_text.clone()
            } else {
                format!(
                    ".{}({})",
                    b.formal,
                    b.actual.split_whitespace().collect::<Vec<_>>().join(" ")
                )
            };
            let comma = if k + 1 < kept.len() { "," } else { "" };
            let stmts = if self.kept(b.statement) {
                vec![(b.statement, s.span.line_start)]
            } else {
                Vec::new()
            };
            out.push(Line::from(
                format!("{INDENT}{INDENT}{text}{comma}"),
                s.span.line_start,
                stmts,
            ));
        }
        for l in t.render_footer(&values)?.lines() {
            out.push(Line::synth(format!("{INDENT}{l}")));
        }
        Ok(out)
    }

    /// A binding survives when it is kept or the child kept its port.
    fn binding_emitted(&self, child: &str, b: &crate::verilog::PortBinding) -> bool {
        self.kept(b.statement)
            || self
                .child_ports
                .get(child)
                .is_some_and(|p| p.contains(&b.formal))
    }

    fn item_binding_emitted(&self, item: StmtId, instance: &str) -> bool {
        let Some(inst) = self.module.instance(instance) else {
            return false;
        };
        inst.bindings
            .iter()
            .find(|b| b.statement == item)
            .is_some_and(|b| self.binding_emitted(&inst.module, b))
    }

    fn decls_of(&self, name: &str) -> Vec<StmtId> {
        self.module
            .statements
            .iter()
            .copied()
            .filter(|&id| {
                let s = self.st(id);
                matches!(s.construct, Construct::Decl { .. })
                    && s.declares.iter().any(|d| d == name)
            })
            .collect()
    }

    fn decl_line(&self, name: &str, text: String) -> Line {
        let decls = self.decls_of(name);
        let orig = decls
            .first()
            .map(|&d| self.st(d).span.line_start)
            .unwrap_or(self.module.line_start);
        let stmts = decls
            .iter()
            .filter(|&&d| self.kept(d))
            .map(|&d| (d, self.st(d).span.line_start))
            .collect();
        Line::from(text, orig, stmts)
    }

    fn emit(
        &mut self,
        bound: &BTreeSet<String>,
        entry_ports: &BTreeSet<String>,
    ) -> Result<(Vec<Line>, BTreeSet<String>), PatchError> {
        let m = self.module;
        // Kept declarations pin their names.
        for &id in self.keep {
            if let Construct::Decl { class } = self.st(id).construct {
                if matches!(
                    class,
                    DeclClass::Port | DeclClass::Net | DeclClass::Variable
                ) {
                    self.needed.extend(self.st(id).declares.iter().cloned());
                }
            }
        }
        let mut prelude = Vec::new();
        let mut body = Vec::new();
        let mut done_instances = BTreeSet::new();
        for &item in &m.items {
            let s = self.st(item);
            match (&s.kind, &s.construct) {
                (_, Construct::Decl { class }) => {
                    if matches!(class, DeclClass::Parameter | DeclClass::Genvar) {
                        prelude.extend(self.verbatim(item, 1));
                    }
                }
                (_, Construct::Opaque { what }) => {
                    if self.kept(item) || what == "function" || what == "task" {
                        body.extend(self.verbatim(item, 1));
                    }
                }
                (StatementKind::ContinuousAssign, _) if self.kept(item) => {
                    self.declared_inline.extend(s.declares.iter().cloned());
                    let t = self.lib.get(ConstructKind::ContinuousAssign)?;
                    let values = BTreeMap::new();
                    let header = t.render_header(&values)?;
                    let footer = t.render_footer(&values)?;
                    body.extend(header.lines().map(|l| Line::synth(format!("{INDENT}{l}"))));
                    body.extend(self.verbatim(item, 1));
                    body.extend(footer.lines().map(|l| Line::synth(format!("{INDENT}{l}"))));
                }
                (StatementKind::AlwaysBlock, _) => body.extend(self.always(item)?),
                (StatementKind::InstanceConnection, Construct::Binding { instance, .. })
                    if self.item_binding_emitted(item, instance)
                        && done_instances.insert(instance.clone()) =>
                {
                    body.extend(self.instance(instance)?);
                }
                _ => {}
            }
        }
        // Ports, in original order.
        let mut port_lines = Vec::new();
        let kept_ports: Vec<_> = m
            .ports
            .iter()
            .filter(|p| {
                self.needed.contains(&p.name)
                    || bound.contains(&p.name)
                    || entry_ports.contains(&p.name)
            })
            .collect();
        for (k, p) in kept_ports.iter().enumerate() {
            let sig = &m.signals[&p.name];
            let net = if p.direction == Direction::Input && sig.net == "reg" {
                "wire"
            } else {
                sig.net.as_str()
            };
            let mut text = format!("{INDENT}{} {net}", p.direction);
            if sig.signed {
                text.push_str(" signed");
            }
            if let Some(r) = &sig.range {
                text.push(' ');
                text.push_str(r);
            }
            text.push(' ');
            text.push_str(&p.name);
            if k + 1 < kept_ports.len() {
                text.push(',');
            }
            port_lines.push(self.decl_line(&p.name, text));
        }
        // Internal signal declarations, in original declaration order.
        let mut internal: Vec<(&String, &crate::verilog::SignalDecl)> = m
            .signals
            .iter()
            .filter(|(n, s)| {
                self.needed.contains(*n)
                    && s.direction.is_none()
                    && !s.implicit
                    && !self.declared_inline.contains(*n)
            })
            .collect();
        internal.sort_by_key(|(n, s)| (s.decl_stmt, (*n).clone()));
        for (n, s) in &m.signals {
            if s.implicit && self.needed.contains(n) {
                self.warnings.push(format!(
                    "{}: {n} has no declaration and stays a 1-bit implicit net",
                    m.name
                ));
            }
        }
        let mut decl_lines = Vec::new();
        for (name, sig) in internal {
            let mut text = format!("{INDENT}{}", sig.net);
            if sig.signed {
                text.push_str(" signed");
            }
            if let Some(r) = &sig.range {
                text.push(' ');
                text.push_str(r);
            }
            text.push(' ');
            text.push_str(name);
            if let Some(a) = &sig.array {
                text.push(' ');
                text.push_str(a);
            }
            text.push(';');
            decl_lines.push(self.decl_line(name, text));
        }
        // Shell.
        let t = self.lib.get(ConstructKind::ModuleShell)?;
        const SENTINEL: &str = "\u{0}ports\u{0}";
        let values = BTreeMap::from([
            ("module_name", m.name.clone()),
            (
                "params",
                m.header_params
                    .as_ref()
                    .map(|p| format!(" {p}"))
                    .unwrap_or_default(),
            ),
            ("port_list", SENTINEL.to_string()),
        ]);
        let mut out = Vec::new();
        let mut port_lines = Some(port_lines);
        for (k, h) in t.render_header(&values)?.lines().enumerate() {
            if h.trim() == SENTINEL {
                out.extend(port_lines.take().unwrap_or_default());
            } else if k == 0 {
                out.push(Line::from(h.to_string(), m.line_start, Vec::new()));
            } else {
                out.push(Line::synth(h.to_string()));
            }
        }
        out.extend(prelude);
        out.extend(decl_lines);
        out.extend(body);
        for l in t.render_footer(&values)?.lines() {
            out.push(Line::from(l.to_string(), m.line_end, Vec::new()));
        }
        let ports = kept_ports.iter().map(|p| p.name.clone()).collect();
        Ok((out, ports))
    }
}

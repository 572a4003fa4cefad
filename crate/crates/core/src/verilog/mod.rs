//! Statement-level model of a multi-file Verilog design.
//!
//! The parser covers the synthesizable Verilog-2001 core: module headers in
//! ANSI and non-ANSI style, net/variable/parameter declarations, continuous
//! assignments, `always` blocks with `if`/`case`, and module instantiation.
//! Anything else (generate regions, functions, tasks, gate primitives,
//! `initial`, loops) becomes an opaque [`StatementKind::Declaration`] whose
//! signal set is an identifier scan of its text.
//!
//! Every statement knows which signals it reads and writes. Containers
//! (`if`, `case`, case branches) additionally write every signal assigned
//! anywhere beneath them, which is how control dependence shows up in the
//! flat read/write view. `always` headers read only their sensitivity list.

mod eval;
pub(crate) mod lexer;
mod parser;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

pub use lexer::is_keyword;

pub type StmtId = usize;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{}:{line}: {message}", file.display())]
pub struct SyntaxError {
    pub file: PathBuf,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read {}: {source}", path.display())]
    FileNotReadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("top module `{0}` not found")]
    TopModuleNotFound(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StatementKind {
    ContinuousAssign,
    ProceduralAssign,
    AlwaysBlock,
    IfBlock,
    CaseBlock,
    CaseBranch,
    InstanceConnection,
    Declaration,
}

impl StatementKind {
    pub fn is_container(self) -> bool {
        matches!(
            self,
            Self::AlwaysBlock | Self::IfBlock | Self::CaseBlock | Self::CaseBranch
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
    Inout,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Input => "input",
            Direction::Output => "output",
            Direction::Inout => "inout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "input" | "in" => Some(Self::Input),
            "output" | "out" => Some(Self::Output),
            "inout" => Some(Self::Inout),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub file: PathBuf,
    pub line_start: usize,
    pub line_end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Which arm of an `if` a statement sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Then,
    Else,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclClass {
    Port,
    Net,
    Variable,
    Parameter,
    Genvar,
}

/// Construct-specific detail the patcher needs to rebuild structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "construct", rename_all = "snake_case")]
pub enum Construct {
    Assign {
        nonblocking: bool,
    },
    Always {
        /// Event control exactly as written, e.g. `@(posedge clk or negedge rst_n)`.
        sensitivity: String,
        /// Signals qualified with `posedge`/`negedge`.
        edges: Vec<String>,
    },
    If {
        /// Condition including its parentheses.
        condition: String,
        has_else: bool,
    },
    Case {
        keyword: String,
        /// Selector including its parentheses.
        selector: String,
        has_default: bool,
    },
    Branch {
        labels: String,
        is_default: bool,
    },
    Binding {
        instance: String,
        child: String,
        formal: String,
        actual: String,
        position: Option<usize>,
    },
    Decl {
        class: DeclClass,
    },
    Opaque {
        what: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Statement {
    pub id: StmtId,
    pub kind: StatementKind,
    pub module: String,
    pub span: Span,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    pub parent: Option<StmtId>,
    pub arm: Option<Arm>,
    pub children: Vec<StmtId>,
    pub raw_text: String,
    /// Names introduced by a declaration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub declares: Vec<String>,
    pub construct: Construct,
}

impl Statement {
    pub fn signals(&self) -> impl Iterator<Item = &String> {
        self.reads.union(&self.writes)
    }

    pub fn references(&self, name: &str) -> bool {
        self.reads.contains(name) || self.writes.contains(name)
    }

    pub fn is_opaque(&self) -> bool {
        matches!(self.construct, Construct::Opaque { .. })
    }

    pub fn is_nonblocking(&self) -> bool {
        matches!(self.construct, Construct::Assign { nonblocking: true })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
    pub width: u32,
}

/// Declared (or implicitly used) signal in a module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDecl {
    /// `wire`, `reg`, `integer`, ...
    pub net: String,
    pub signed: bool,
    /// Packed range as written, e.g. `[WIDTH-1:0]`.
    pub range: Option<String>,
    pub width: u32,
    /// Unpacked dimensions as written, e.g. `[0:7]`.
    pub array: Option<String>,
    pub direction: Option<Direction>,
    /// Declared implicitly by use.
    pub implicit: bool,
    pub decl_stmt: Option<StmtId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBinding {
    pub formal: String,
    pub actual: String,
    pub actual_signals: Vec<String>,
    pub statement: StmtId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub module: String,
    /// Parameter override text as written, e.g. `#(.WIDTH(12))`.
    pub params: Option<String>,
    pub positional: bool,
    pub bindings: Vec<PortBinding>,
    pub line: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleDef {
    pub name: String,
    pub file: PathBuf,
    /// Header parameter port list as written, e.g. `#(parameter W = 8)`.
    pub header_params: Option<String>,
    pub params: BTreeMap<String, String>,
    pub ports: Vec<Port>,
    pub signals: BTreeMap<String, SignalDecl>,
    /// All statement ids of this module in source order.
    pub statements: Vec<StmtId>,
    /// Statements without a parent, in source order.
    pub items: Vec<StmtId>,
    pub instances: Vec<Instance>,
    /// Signals used as `posedge`/`negedge` events anywhere in the module.
    pub event_signals: BTreeSet<String>,
    pub functions: BTreeSet<String>,
    pub line_start: usize,
    pub line_end: usize,
    #[serde(skip)]
    refs: HashMap<String, Vec<StmtId>>,
}

impl ModuleDef {
    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn is_port(&self, name: &str) -> bool {
        self.port(name).is_some()
    }

    /// Statements whose reads or writes mention `name`, in source order.
    pub fn referencing(&self, name: &str) -> &[StmtId] {
        self.refs.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn has_signal(&self, name: &str) -> bool {
        self.signals.contains_key(name)
    }

    pub fn instance(&self, name: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: PathBuf,
    pub modules: Vec<String>,
    #[serde(skip)]
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignModel {
    pub files: Vec<SourceFile>,
    pub top_module: String,
    pub modules: Vec<ModuleDef>,
    pub statements: Vec<Statement>,
    /// Instantiated modules with no definition.
    pub black_boxes: BTreeSet<String>,
    #[serde(skip)]
    module_index: HashMap<String, usize>,
}

/// A signal reference; `module` is `None` for an unqualified name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignalRef {
    pub module: Option<String>,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_range: Option<(u32, u32)>,
}

impl SignalRef {
    pub fn new(module: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            module: Some(module.into()),
            name: name.into(),
            bit_range: None,
        }
    }

    pub fn unqualified(name: impl Into<String>) -> Self {
        Self {
            module: None,
            name: name.into(),
            bit_range: None,
        }
    }

    /// Parses `sig`, `sig[7:0]`, `sig[3]`, or a dotted path `a.b.sig`.
    /// Dotted prefixes are kept verbatim in `module` for later resolution.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        let (path, bits) = match text.find('[') {
            Some(i) => (&text[..i], Some(&text[i..])),
            None => (text, None),
        };
        let bit_range = match bits {
            None => None,
            Some(b) => {
                let inner = b.strip_prefix('[')?.strip_suffix(']')?;
                match inner.split_once(':') {
                    Some((m, l)) => Some((m.trim().parse().ok()?, l.trim().parse().ok()?)),
                    None => {
                        let bit = inner.trim().parse().ok()?;
                        Some((bit, bit))
                    }
                }
            }
        };
        if let Some((msb, lsb)) = bit_range {
            if msb < lsb {
                return None;
            }
        }
        let (module, name) = match path.rsplit_once('.') {
            Some((m, n)) => (Some(m.to_string()), n),
            None => (None, path),
        };
        if !is_identifier(name) {
            return None;
        }
        Some(Self {
            module,
            name: name.to_string(),
            bit_range,
        })
    }
}

impl fmt::Display for SignalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(m) = &self.module {
            write!(f, "{m}.")?;
        }
        f.write_str(&self.name)?;
        match self.bit_range {
            Some((m, l)) if m == l => write!(f, "[{m}]"),
            Some((m, l)) => write!(f, "[{m}:{l}]"),
            None => Ok(()),
        }
    }
}

/// Legal simple Verilog identifier (escaped identifiers start with `\`).
pub fn is_identifier(s: &str) -> bool {
    if let Some(rest) = s.strip_prefix('\\') {
        return !rest.is_empty() && !rest.chars().any(char::is_whitespace);
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') && !is_keyword(s)
}

/// Reads and parses `paths`, then resolves `top`.
pub fn parse_design<P: AsRef<Path>>(paths: &[P], top: &str) -> Result<DesignModel, ModelError> {
    let mut sources = Vec::with_capacity(paths.len());
    for p in paths {
        let path = p.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::FileNotReadable {
            path: path.to_path_buf(),
            source,
        })?;
        sources.push((path.to_path_buf(), text));
    }
    DesignModel::from_sources(sources, top)
}

impl DesignModel {
    /// Builds a model from in-memory sources.
    pub fn from_sources(sources: Vec<(PathBuf, String)>, top: &str) -> Result<Self, ModelError> {
        let design = Self::from_sources_any_top(sources)?;
        if !design.module_index.contains_key(top) {
            return Err(ModelError::TopModuleNotFound(top.to_string()));
        }
        Ok(Self {
            top_module: top.to_string(),
            ..design
        })
    }

    /// Parses sources without requiring a top module. `top_module` is set to
    /// the first module that nothing instantiates, or empty if there is none.
    pub fn from_sources_any_top(sources: Vec<(PathBuf, String)>) -> Result<Self, ModelError> {
        let mut files = Vec::new();
        let mut modules: Vec<ModuleDef> = Vec::new();
        let mut statements = Vec::new();
        for (path, text) in sources {
            let parsed = parser::parse_file(&path, &text, statements.len())?;
            let mut names = Vec::new();
            for (module, stmts) in parsed {
                if modules.iter().any(|m| m.name == module.name) {
                    return Err(SyntaxError {
                        file: path.clone(),
                        line: module.line_start,
                        message: format!("module `{}` defined more than once", module.name),
                    }
                    .into());
                }
                names.push(module.name.clone());
                modules.push(module);
                statements.extend(stmts);
            }
            files.push(SourceFile {
                path,
                modules: names,
                text,
            });
        }
        let mut design = DesignModel {
            files,
            top_module: String::new(),
            module_index: modules
                .iter()
                .enumerate()
                .map(|(i, m)| (m.name.clone(), i))
                .collect(),
            modules,
            statements,
            black_boxes: BTreeSet::new(),
        };
        parser::resolve_instances(&mut design)?;
        design.rebuild_indexes();
        let instantiated: BTreeSet<&str> = design
            .modules
            .iter()
            .flat_map(|m| m.instances.iter().map(|i| i.module.as_str()))
            .collect();
        design.top_module = design
            .modules
            .iter()
            .find(|m| !instantiated.contains(m.name.as_str()))
            .map(|m| m.name.clone())
            .unwrap_or_default();
        Ok(design)
    }

    pub(crate) fn rebuild_indexes(&mut self) {
        self.module_index = self
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.clone(), i))
            .collect();
        for module in &mut self.modules {
            let mut refs: HashMap<String, Vec<StmtId>> = HashMap::new();
            for &id in &module.statements {
                for sig in self.statements[id].signals() {
                    refs.entry(sig.clone()).or_default().push(id);
                }
            }
            module.refs = refs;
        }
    }

    pub fn module(&self, name: &str) -> Option<&ModuleDef> {
        self.module_index.get(name).map(|&i| &self.modules[i])
    }

    pub fn top(&self) -> Option<&ModuleDef> {
        self.module(&self.top_module)
    }

    pub fn statement(&self, id: StmtId) -> Option<&Statement> {
        self.statements.get(id)
    }

    pub fn source_text(&self, file: &Path) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.path == file)
            .map(|f| f.text.as_str())
    }

    /// Modules reachable from the top, top first, then breadth-first in
    /// instance order. Each module appears once.
    pub fn hierarchy(&self) -> Vec<&ModuleDef> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue = std::collections::VecDeque::new();
        if let Some(top) = self.top() {
            queue.push_back(top);
            seen.insert(top.name.as_str());
        }
        while let Some(m) = queue.pop_front() {
            out.push(m);
            for inst in &m.instances {
                if let Some(child) = self.module(&inst.module) {
                    if seen.insert(child.name.as_str()) {
                        queue.push_back(child);
                    }
                }
            }
        }
        out
    }

    /// Every `(parent, instance)` pair that instantiates `child`.
    pub fn instantiation_sites<'a>(
        &'a self,
        child: &'a str,
    ) -> impl Iterator<Item = (&'a ModuleDef, &'a Instance)> + 'a {
        self.modules.iter().flat_map(move |m| {
            m.instances
                .iter()
                .filter(move |i| i.module == child)
                .map(move |i| (m, i))
        })
    }

    /// Resolves a dotted hierarchy path (`top.u_a.u_b`, `tb.dut.u_a`, or a
    /// bare module name) to the module it instantiates. Leading components
    /// that do not match the design (testbench prefixes) are skipped.
    pub fn resolve_scope(&self, path: &str) -> Option<&ModuleDef> {
        let parts: Vec<&str> = path.split('.').filter(|p| !p.is_empty()).collect();
        if parts.len() == 1 {
            if let Some(m) = self.module(parts[0]) {
                return Some(m);
            }
        }
        let top = self.top()?;
        for k in 0..parts.len() {
            let rest = if parts[k] == top.name {
                &parts[k + 1..]
            } else {
                &parts[k..]
            };
            if let Some(m) = self.walk_instances(top, rest) {
                return Some(m);
            }
        }
        None
    }

    fn walk_instances<'a>(&'a self, from: &'a ModuleDef, path: &[&str]) -> Option<&'a ModuleDef> {
        let mut cur = from;
        for name in path {
            let inst = cur.instance(name)?;
            cur = self.module(&inst.module)?;
        }
        Some(cur)
    }

    /// Statements of `module` whose reads or writes name `signal`
    /// (bit selects are ignored).
    pub fn statements_referencing(
        &self,
        module: &str,
        signal: &SignalRef,
    ) -> Result<BTreeSet<StmtId>, ModelError> {
        let m = self
            .module(module)
            .ok_or_else(|| ModelError::UnknownModule(module.to_string()))?;
        Ok(m.referencing(&signal.name).iter().copied().collect())
    }

    /// Chain of ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: StmtId) -> Vec<StmtId> {
        let mut out = Vec::new();
        let mut cur = self.statements[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.statements[p].parent;
        }
        out
    }

    /// Outermost ancestor (or the statement itself if it has none).
    pub fn root_of(&self, id: StmtId) -> StmtId {
        self.ancestors(id).last().copied().unwrap_or(id)
    }

    /// All statements beneath `id`, depth-first in source order.
    pub fn descendants(&self, id: StmtId) -> Vec<StmtId> {
        let mut out = Vec::new();
        let mut stack: Vec<StmtId> = self.statements[id].children.iter().rev().copied().collect();
        while let Some(s) = stack.pop() {
            out.push(s);
            stack.extend(self.statements[s].children.iter().rev().copied());
        }
        out
    }

    pub fn line_count(&self) -> usize {
        self.files.iter().map(|f| f.text.lines().count()).sum()
    }
}

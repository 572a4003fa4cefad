//! Signal-dependency tracing over a [`DesignModel`].
//!
//! [`trace_single_file`] is a worklist search inside one module: every
//! statement that reads or writes a visited signal joins the result, and the
//! other signals of that statement are queued. [`trace_cross_file`] repeats
//! the search across the hierarchy, carrying signals through instance port
//! bindings in both directions until no new interface signal appears.
//!
//! Clock and asynchronous-reset signals (anything used under `posedge` or
//! `negedge`) are never queued, though they are traced when given as seeds.
//! Queuing them would pull every register sharing the clock into each slice.

use crate::verilog::{DesignModel, Direction, ModuleDef, SignalRef, StatementKind, StmtId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("design has no resolved top module")]
    NoTopModule,
    #[error("unknown module `{0}`")]
    UnknownModule(String),
}

/// Signals that start a trace, optionally tied to the coverage item they
/// were derived from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub signals: BTreeSet<SignalRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<usize>,
}

impl SeedSet {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            signals: names
                .into_iter()
                .filter_map(|n| SignalRef::parse(n.as_ref()))
                .collect(),
            origin: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySlice {
    /// Slice statements per module (each module is one logical file).
    pub statements_by_module: BTreeMap<String, BTreeSet<StmtId>>,
    /// Interface signals fed into each iteration; the first entry is the
    /// resolved seed set.
    pub iteration_frontiers: Vec<BTreeSet<SignalRef>>,
    pub entry_ports: BTreeSet<String>,
    pub visited_signals: BTreeSet<SignalRef>,
    pub reachable_from_io: bool,
    /// Set when some binding could not be followed (black box or unknown port).
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<String>,
}

impl DependencySlice {
    pub fn statements(&self) -> BTreeSet<StmtId> {
        self.statements_by_module
            .values()
            .flatten()
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.statements_by_module.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iterations(&self) -> usize {
        self.iteration_frontiers.len()
    }

    /// Visited signal names as seeds for a follow-up trace.
    pub fn visited_as_seeds(&self) -> SeedSet {
        SeedSet {
            signals: self.visited_signals.clone(),
            origin: None,
        }
    }
}

/// Whether `name` may be queued in `module` (clocks and async resets may not).
pub fn is_traceable(module: &ModuleDef, name: &str) -> bool {
    !module.event_signals.contains(name)
}

/// Worklist search within one module.
///
/// Returns the statements reached and the signals visited.
pub fn trace_single_file(
    seeds: &SeedSet,
    model: &DesignModel,
    module: &str,
) -> Result<(BTreeSet<StmtId>, BTreeSet<String>), TraceError> {
    let m = model
        .module(module)
        .ok_or_else(|| TraceError::UnknownModule(module.to_string()))?;
    let start: Vec<String> = seeds
        .signals
        .iter()
        .filter(|s| s.module.as_deref().is_none_or(|q| q == module))
        .map(|s| s.name.clone())
        .collect();
    let mut visited = BTreeSet::new();
    let stmts = bfs(model, m, start, &mut visited);
    Ok((stmts, visited))
}

/// Breadth-first search continuing from an existing visited set. Newly
/// visited signals are added to `visited`.
fn bfs(
    model: &DesignModel,
    m: &ModuleDef,
    start: impl IntoIterator<Item = String>,
    visited: &mut BTreeSet<String>,
) -> BTreeSet<StmtId> {
    let mut queue: VecDeque<String> = start.into_iter().collect();
    let mut result = BTreeSet::new();
    while let Some(s) = queue.pop_front() {
        if !visited.insert(s.clone()) {
            continue;
        }
        for &t in m.referencing(&s) {
            result.insert(t);
            for x in model.statements[t].signals() {
                if x != &s && !visited.contains(x) && is_traceable(m, x) {
                    queue.push_back(x.clone());
                }
            }
        }
    }
    result
}

/// Resolves seeds to `(module, signal)` pairs within the hierarchy.
/// Unqualified names seed every module that has such a signal.
pub fn resolve_seeds(seeds: &SeedSet, model: &DesignModel) -> BTreeSet<(String, String)> {
    let hierarchy = model.hierarchy();
    let mut out = BTreeSet::new();
    for seed in &seeds.signals {
        match &seed.module {
            None => {
                for m in &hierarchy {
                    if m.has_signal(&seed.name) {
                        out.insert((m.name.clone(), seed.name.clone()));
                    }
                }
            }
            Some(path) => {
                if let Some(m) = model.resolve_scope(path) {
                    if m.has_signal(&seed.name) {
                        out.insert((m.name.clone(), seed.name.clone()));
                    }
                }
            }
        }
    }
    out
}

/// Traces seeds across module boundaries through port bindings.
pub fn trace_cross_file(
    seeds: &SeedSet,
    model: &DesignModel,
) -> Result<DependencySlice, TraceError> {
    let top = model.top().ok_or(TraceError::NoTopModule)?;
    let hierarchy = model.hierarchy();
    let in_hierarchy: BTreeSet<&str> = hierarchy.iter().map(|m| m.name.as_str()).collect();

    let mut slice = DependencySlice::default();
    let mut visited: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut unresolved = BTreeSet::new();
    let mut frontier = resolve_seeds(seeds, model);

    while !frontier.is_empty() {
        slice.iteration_frontiers.push(
            frontier
                .iter()
                .map(|(m, s)| SignalRef::new(m.clone(), s.clone()))
                .collect(),
        );
        let mut next: BTreeSet<(String, String)> = BTreeSet::new();
        for m in &hierarchy {
            let mine: Vec<String> = frontier
                .iter()
                .filter(|(mm, _)| mm == &m.name)
                .map(|(_, s)| s.clone())
                .collect();
            if mine.is_empty() {
                continue;
            }
            let v = visited.entry(m.name.as_str()).or_default();
            let before = v.clone();
            let reached = bfs(model, m, mine, v);
            let fresh: Vec<String> = v.difference(&before).cloned().collect();
            // Downward: bindings in the slice carry the child's formal.
            for &t in &reached {
                let st = &model.statements[t];
                if st.kind != StatementKind::InstanceConnection {
                    continue;
                }
                let Some((inst, formal)) = binding_of(st) else {
                    continue;
                };
                match model.module(&inst_child(m, inst)) {
                    Some(child) if child.is_port(formal) => {
                        if is_traceable(child, formal) {
                            next.insert((child.name.clone(), formal.to_string()));
                        }
                    }
                    _ => {
                        unresolved.insert(format!("{}.{inst}", m.name));
                    }
                }
            }
            slice
                .statements_by_module
                .entry(m.name.clone())
                .or_default()
                .extend(reached);
            // Upward: visited ports reach the parent through their bindings.
            for sig in fresh.iter().filter(|s| m.is_port(s)) {
                for (parent, inst) in model.instantiation_sites(&m.name) {
                    if !in_hierarchy.contains(parent.name.as_str()) {
                        continue;
                    }
                    for b in inst.bindings.iter().filter(|b| &b.formal == sig) {
                        slice
                            .statements_by_module
                            .entry(parent.name.clone())
                            .or_default()
                            .insert(b.statement);
                        for a in &b.actual_signals {
                            if is_traceable(parent, a) {
                                next.insert((parent.name.clone(), a.clone()));
                            }
                        }
                    }
                }
            }
        }
        next.retain(|(m, s)| !visited.get(m.as_str()).is_some_and(|v| v.contains(s)));
        frontier = next;
    }

    slice.statements_by_module.retain(|_, s| !s.is_empty());
    for (m, sigs) in &visited {
        for s in sigs {
            slice.visited_signals.insert(SignalRef::new(*m, s.clone()));
        }
    }
    // Entry ports: visited top inputs plus clocks/resets of enclosing
    // always blocks, mapped up to the top.
    if let Some(v) = visited.get(top.name.as_str()) {
        for p in &top.ports {
            if p.direction != Direction::Output && v.contains(&p.name) {
                slice.entry_ports.insert(p.name.clone());
            }
        }
    }
    let mut events = BTreeSet::new();
    for &id in &slice.statements() {
        for a in std::iter::once(id).chain(model.ancestors(id)) {
            if let crate::verilog::Construct::Always { edges, .. } = &model.statements[a].construct
            {
                for e in edges {
                    events.insert((model.statements[a].module.clone(), e.clone()));
                }
            }
        }
    }
    for (m, sig) in events {
        map_to_top(
            model,
            &in_hierarchy,
            &m,
            &sig,
            &mut slice.entry_ports,
            &mut BTreeSet::new(),
        );
    }
    slice.reachable_from_io = !slice.entry_ports.is_empty();
    slice.partial = !unresolved.is_empty();
    slice.unresolved = unresolved.into_iter().collect();
    Ok(slice)
}

fn binding_of(st: &crate::verilog::Statement) -> Option<(&str, &str)> {
    match &st.construct {
        crate::verilog::Construct::Binding {
            instance, formal, ..
        } => Some((instance.as_str(), formal.as_str())),
        _ => None,
    }
}

fn inst_child(m: &ModuleDef, inst: &str) -> String {
    m.instance(inst)
        .map(|i| i.module.clone())
        .unwrap_or_default()
}

/// Follows a port upward through bindings until it reaches a top port.
fn map_to_top(
    model: &DesignModel,
    in_hierarchy: &BTreeSet<&str>,
    module: &str,
    sig: &str,
    out: &mut BTreeSet<String>,
    seen: &mut BTreeSet<(String, String)>,
) {
    if !seen.insert((module.to_string(), sig.to_string())) {
        return;
    }
    let Some(m) = model.module(module) else {
        return;
    };
    if !m.is_port(sig) {
        return;
    }
    if m.name == model.top_module {
        out.insert(sig.to_string());
        return;
    }
    for (parent, inst) in model.instantiation_sites(module) {
        if !in_hierarchy.contains(parent.name.as_str()) {
            continue;
        }
        for b in inst.bindings.iter().filter(|b| b.formal == sig) {
            for a in &b.actual_signals {
                map_to_top(model, in_hierarchy, &parent.name, a, out, seen);
            }
        }
    }
}

/// Human-readable slice listing: one block per module with line ranges.
pub fn render_text(slice: &DependencySlice, model: &DesignModel) -> String {
    let mut out = String::new();
    for (module, ids) in &slice.statements_by_module {
        let file = model
            .module(module)
            .map(|m| m.file.display().to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "== {module} ({file})");
        for &id in ids {
            let s = &model.statements[id];
            let first = s.raw_text.lines().next().unwrap_or("").trim();
            let _ = writeln!(
                out,
                "  {}:{}-{}  #{id} {:?}  {first}",
                file, s.span.line_start, s.span.line_end, s.kind
            );
        }
    }
    let ports: Vec<&str> = slice.entry_ports.iter().map(String::as_str).collect();
    let _ = writeln!(out, "entry ports: {}", ports.join(", "));
    let _ = writeln!(
        out,
        "iterations: {}  statements: {}{}",
        slice.iterations(),
        slice.len(),
        if slice.partial { "  (partial)" } else { "" }
    );
    out
}

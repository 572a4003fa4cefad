//! Brute-force fixpoint oracles for slicing. They share no code with the
//! tracer: each grows a statement set until no statement shares a signal
//! with the current signal set.

use covslice::verilog::{Construct, DesignModel, StatementKind, StmtId};
use std::collections::BTreeSet;

type Scoped = (String, String);

fn traceable(model: &DesignModel, module: &str, sig: &str) -> bool {
    !model.module(module).unwrap().event_signals.contains(sig)
}

/// Fixpoint inside one module.
pub fn single_file_fixpoint(model: &DesignModel, module: &str, seeds: &[&str]) -> BTreeSet<StmtId> {
    let m = model.module(module).unwrap();
    let mut sigs: BTreeSet<String> = seeds.iter().map(|s| s.to_string()).collect();
    let mut out = BTreeSet::new();
    loop {
        let before = (out.len(), sigs.len());
        for &id in &m.statements {
            let s = &model.statements[id];
            if s.reads.iter().chain(&s.writes).any(|x| sigs.contains(x)) {
                out.insert(id);
                for x in s.reads.iter().chain(&s.writes) {
                    if traceable(model, module, x) {
                        sigs.insert(x.clone());
                    }
                }
            }
        }
        if (out.len(), sigs.len()) == before {
            return out;
        }
    }
}

/// Signals touched by a statement in the flattened design. Port bindings
/// also touch the child's formal.
fn flat_signals(model: &DesignModel, id: StmtId) -> Vec<Scoped> {
    let s = &model.statements[id];
    let mut out: Vec<Scoped> = s
        .reads
        .iter()
        .chain(&s.writes)
        .map(|x| (s.module.clone(), x.clone()))
        .collect();
    if s.kind == StatementKind::InstanceConnection {
        if let Construct::Binding {
            instance, formal, ..
        } = &s.construct
        {
            let parent = model.module(&s.module).unwrap();
            let child = parent
                .instance(instance)
                .and_then(|i| model.module(&i.module));
            if let Some(child) = child {
                if child.port(formal).is_some() {
                    out.push((child.name.clone(), formal.clone()));
                }
            }
        }
    }
    out
}

/// Fixpoint over every statement of every module under the top, ignoring
/// module boundaries.
pub fn flat_fixpoint(model: &DesignModel, seeds: &BTreeSet<Scoped>) -> BTreeSet<StmtId> {
    let pool: Vec<StmtId> = model
        .hierarchy()
        .iter()
        .flat_map(|m| m.statements.iter().copied())
        .collect();
    let touched: Vec<Vec<Scoped>> = pool.iter().map(|&id| flat_signals(model, id)).collect();
    let mut sigs = seeds.clone();
    let mut out = BTreeSet::new();
    loop {
        let before = (out.len(), sigs.len());
        for (i, &id) in pool.iter().enumerate() {
            if touched[i].iter().any(|x| sigs.contains(x)) {
                out.insert(id);
                for (m, x) in &touched[i] {
                    if traceable(model, m, x) {
                        sigs.insert((m.clone(), x.clone()));
                    }
                }
            }
        }
        if (out.len(), sigs.len()) == before {
            return out;
        }
    }
}

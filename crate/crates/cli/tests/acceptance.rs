//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

#[path = "../../core/tests/common/oracle.rs"]
#[allow(dead_code)]
mod oracle;

use covslice::coverage::{extract_uncovered, parse_report, read_report, Status};
use covslice::ir::{parse_ir, read_ir, validate_ir, Protocol, Severity};
use covslice::llm::{EchoClient, ScriptedClient};
use covslice::patcher::{patch_statements, TemplateLibrary};
use covslice::protocols::{
    specialize, verify_frozen_regions, ComponentKind, ProtocolLibrary, RegionKind, Skeleton,
    SpecializeOptions,
};
use covslice::refine::{
    compute_srg, refine, CandidateStatus, LabeledClient, MockSim, RefineConfig, SrgEntry,
    StopReason, VerificationReport,
};
use covslice::tracker::{resolve_seeds, trace_cross_file, SeedSet};
use covslice::verilog::{
    parse_design, Construct, DesignModel, Direction, SignalRef, StatementKind, StmtId,
};
use rand::seq::{IndexedRandom, IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

const DESIGNS: &[(&str, &str)] = &[
    ("toy_sub", "toy_top"),
    ("pwrctrl", "pwrctrl"),
    ("feedback", "feedback_top"),
    ("arbiter", "arb_top"),
    ("uart_lite", "uart_top"),
];

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn fixture(rel: &str) -> PathBuf {
    core_dir().join("fixtures").join(rel)
}

fn load(name: &str, top: &str) -> DesignModel {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixture("corpus").join(name))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "v"))
        .collect();
    files.sort();
    parse_design(&files, top).unwrap()
}

fn corpus() -> Vec<(&'static str, DesignModel)> {
    DESIGNS.iter().map(|(n, t)| (*n, load(n, t))).collect()
}

fn signal_pool(model: &DesignModel) -> Vec<(String, String)> {
    model
        .hierarchy()
        .iter()
        .flat_map(|m| m.signals.keys().map(move |s| (m.name.clone(), s.clone())))
        .collect()
}

fn random_seeds(rng: &mut impl Rng, pool: &[(String, String)], max: usize) -> SeedSet {
    let mut seeds = SeedSet::default();
    for _ in 0..rng.random_range(1..=max) {
        let (m, s) = pool.choose(rng).unwrap();
        seeds.signals.insert(SignalRef::new(m.clone(), s.clone()));
    }
    seeds
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

// Criterion 1

type Node = (String, String);

/// Combinational signal graph of the flattened design: continuous assigns,
/// assignments under edge-free always blocks, and port bindings.
fn comb_graph(model: &DesignModel) -> BTreeMap<Node, BTreeSet<Node>> {
    let mut g: BTreeMap<Node, BTreeSet<Node>> = BTreeMap::new();
    let mut edge = |from: Node, to: Node| {
        g.entry(from).or_default().insert(to);
    };
    for m in model.hierarchy() {
        for &id in &m.statements {
            let s = &model.statements[id];
            let scoped = |x: &String| (m.name.clone(), x.clone());
            match s.kind {
                StatementKind::ContinuousAssign => {
                    for r in &s.reads {
                        for w in &s.writes {
                            edge(scoped(r), scoped(w));
                        }
                    }
                }
                StatementKind::ProceduralAssign => {
                    let root = &model.statements[model.root_of(id)];
                    let level = matches!(&root.construct, Construct::Always { edges, .. } if edges.is_empty());
                    if !level {
                        continue;
                    }
                    let mut reads: BTreeSet<&String> = s.reads.iter().collect();
                    let mut p = s.parent;
                    while let Some(pid) = p {
                        let ps = &model.statements[pid];
                        if ps.kind != StatementKind::AlwaysBlock {
                            reads.extend(ps.reads.iter());
                        }
                        p = ps.parent;
                    }
                    for r in reads {
                        for w in &s.writes {
                            edge(scoped(r), scoped(w));
                        }
                    }
                }
                StatementKind::InstanceConnection => {
                    let Construct::Binding { child, formal, .. } = &s.construct else {
                        continue;
                    };
                    let Some(port) = model.module(child).and_then(|c| c.port(formal)) else {
                        continue;
                    };
                    let inner = (child.clone(), formal.clone());
                    for a in s.reads.iter().chain(&s.writes) {
                        match port.direction {
                            Direction::Input => edge(scoped(a), inner.clone()),
                            Direction::Output => edge(inner.clone(), scoped(a)),
                            Direction::Inout => {}
                        }
                    }
                }
                _ => {}
            }
        }
    }
    g
}

fn reachable(g: &BTreeMap<Node, BTreeSet<Node>>, from: &Node) -> BTreeSet<Node> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from.clone()];
    while let Some(n) = stack.pop() {
        for next in g.get(&n).into_iter().flatten() {
            if seen.insert(next.clone()) {
                stack.push(next.clone());
            }
        }
    }
    seen
}

/// A combinational cycle passing through two different modules.
fn cross_module_cycle(model: &DesignModel) -> Option<(Node, Node)> {
    let g = comb_graph(model);
    for u in g.keys() {
        let ru = reachable(&g, u);
        if !ru.contains(u) {
            continue;
        }
        if let Some(v) = ru
            .iter()
            .find(|v| v.0 != u.0 && reachable(&g, v).contains(u))
        {
            return Some((u.clone(), v.clone()));
        }
    }
    None
}

fn renamed_bindings(model: &DesignModel) -> usize {
    model
        .statements
        .iter()
        .filter(|s| match &s.construct {
            Construct::Binding { formal, actual, .. } => {
                let a = actual.trim();
                !a.is_empty()
                    && a.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && a != formal
            }
            _ => false,
        })
        .count()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let models = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut renamed = 0;
    let mut cycle = None;
    let mut checked = 0;
    for (name, model) in &models {
        let mods = model.hierarchy().len();
        let stmts = model.statements.len();
        ensure((2..=10).contains(&mods), || {
            format!("{name}: {mods} modules")
        })?;
        ensure((60..=500).contains(&stmts), || {
            format!("{name}: {stmts} statements")
        })?;
        renamed += renamed_bindings(model);
        if cycle.is_none() {
            cycle = cross_module_cycle(model).map(|c| (*name, c));
        }
        let pool = signal_pool(model);
        for _ in 0..50 {
            let seeds = random_seeds(&mut rng, &pool, 3);
            let got = trace_cross_file(&seeds, model)
                .map_err(|e| e.to_string())?
                .statements();
            let want = oracle::flat_fixpoint(model, &resolve_seeds(&seeds, model));
            ensure(got == want, || {
                format!("{name}: slice differs from oracle for {seeds:?}")
            })?;
            checked += 1;
        }
    }
    let (cyc_design, (a, b)) = cycle.ok_or("no cross-module combinational cycle in corpus")?;
    ensure(renamed > 0, || "no binding renames its net".into())?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!(
        "{checked} seed sets match the flat oracle; cycle in {cyc_design} via {}.{} and {}.{}; {renamed} renamed bindings; {:.2}s",
        a.0, a.1, b.0, b.1,
        took.as_secs_f64()
    ))
}

// Criterion 2

fn criterion_2() -> Outcome {
    let models = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut max_iters = 0;
    for i in 0..250 {
        let (name, model) = &models[i % models.len()];
        let pool = signal_pool(model);
        let seeds = random_seeds(&mut rng, &pool, 3);
        let slice = trace_cross_file(&seeds, model).map_err(|e| e.to_string())?;
        ensure(slice.iterations() <= pool.len(), || {
            format!(
                "{name}: {} iterations over {} signals",
                slice.iterations(),
                pool.len()
            )
        })?;
        max_iters = max_iters.max(slice.iterations());
        let (m, s) = pool.choose(&mut rng).unwrap();
        let mut bigger = seeds.clone();
        bigger.signals.insert(SignalRef::new(m.clone(), s.clone()));
        let grown = trace_cross_file(&bigger, model).map_err(|e| e.to_string())?;
        ensure(slice.statements().is_subset(&grown.statements()), || {
            format!("{name}: adding {m}.{s} to {seeds:?} shrank the slice")
        })?;
    }
    Ok(format!(
        "250 seed sets terminate (max {max_iters} iterations) and grow monotonically"
    ))
}

// Criterion 3

fn find(
    model: &DesignModel,
    module: &str,
    kind: StatementKind,
    prefix: &str,
) -> Result<StmtId, String> {
    model
        .statements
        .iter()
        .find(|s| s.module == module && s.kind == kind && squash(&s.raw_text).starts_with(prefix))
        .map(|s| s.id)
        .ok_or_else(|| format!("no {kind:?} `{prefix}` in {module}"))
}

fn criterion_3() -> Outcome {
    let models = corpus();
    let lib = TemplateLibrary::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let none = BTreeSet::new();
    let mut checked = 0;
    for (name, model) in &models {
        for _ in 0..45 {
            let n = rng.random_range(1..=model.statements.len().min(24));
            let ids: BTreeSet<StmtId> = (0..model.statements.len())
                .choose_multiple(&mut rng, n)
                .into_iter()
                .collect();
            let fdut =
                patch_statements(&ids, &none, model, &lib).map_err(|e| format!("{name}: {e}"))?;
            fdut.parse()
                .map_err(|e| format!("{name} {ids:?}: re-parse failed: {e}"))?;
            let housed = fdut.housed_statements().len();
            let dropped = fdut.dropped_statements.len();
            ensure(housed + dropped == ids.len() && dropped == 0, || {
                format!("{name} {ids:?}: housed {housed}, dropped {dropped}")
            })?;
            checked += 1;
        }
    }

    // Two middle case branches come back inside a complete case statement.
    let model = &models[0].1;
    let case = find(model, "fsm", StatementKind::CaseBlock, "case (state)")?;
    let branches = &model.statements[case].children;
    let picked: BTreeSet<StmtId> = branches[2..4]
        .iter()
        .flat_map(|&b| std::iter::once(b).chain(model.descendants(b)))
        .collect();
    let fdut = patch_statements(&picked, &none, model, &lib).map_err(|e| e.to_string())?;
    let text = &fdut.file("fsm").ok_or("fsm missing")?.text;
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let at = lines
        .iter()
        .position(|l| *l == "case (state)")
        .ok_or("no case header")?;
    let tail = [
        "case (state)",
        "WAIT: next_state = DONE;",
        "DONE: begin",
        "if (!start)",
        "next_state = IDLE;",
        "end",
        "default: ;",
        "endcase",
        "end",
        "endmodule",
    ];
    ensure(lines[at..] == tail, || format!("case patch:\n{text}"))?;
    ensure(lines.contains(&"always @(*) begin"), || {
        "case not wrapped in always @(*)".into()
    })?;
    fdut.parse().map_err(|e| e.to_string())?;

    // A lone nonblocking assignment gets its clocked header back.
    let a = find(
        model,
        "fsm",
        StatementKind::ProceduralAssign,
        "run_cnt <= run_cnt + 3'd1",
    )?;
    let fdut =
        patch_statements(&BTreeSet::from([a]), &none, model, &lib).map_err(|e| e.to_string())?;
    let text = &fdut.file("fsm").ok_or("fsm missing")?.text;
    ensure(
        text.contains("always @(posedge clk or negedge rst_n) begin"),
        || format!("orphan patch:\n{text}"),
    )?;
    fdut.parse().map_err(|e| e.to_string())?;
    Ok(format!(
        "{checked} random subsets re-parse with nothing dropped; case and orphan goldens hold"
    ))
}

// Criterion 4

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    for name in ["toy_sub.cov", "toy_sub.html"] {
        let r = read_report(&fixture("coverage").join(name)).map_err(|e| e.to_string())?;
        let back = parse_report(&r.to_normalized()).map_err(|e| e.to_string())?;
        ensure(back == r, || {
            format!("{name}: normalized round trip differs")
        })?;
        ensure(r.score == 72.50, || format!("{name}: score {}", r.score))?;
        let open: BTreeSet<usize> = r.open_items().map(|i| i.id).collect();
        let listed: BTreeSet<usize> = extract_uncovered(&r, usize::MAX).item_ids().collect();
        ensure(open == listed, || {
            format!("{name}: open {open:?} but extracted {listed:?}")
        })?;
        // Every single flip, then every prefix of flips.
        let mut all = r.clone();
        for i in 0..r.items.len() {
            let mut one = r.clone();
            one.items[i].status = Status::Covered;
            one.rescore();
            ensure(one.score >= r.score, || {
                format!("{name}: covering item {} lowered the score", r.items[i].id)
            })?;
            let before = all.score;
            all.items[i].status = Status::Covered;
            all.rescore();
            ensure(all.score >= before, || {
                format!("{name}: cumulative flip {i} lowered the score")
            })?;
        }
        ensure(all.score == 100.0, || {
            format!("{name}: all covered scores {}", all.score)
        })?;
        notes.push(format!("{name} {:.2} ({} open)", r.score, open.len()));
    }
    Ok(notes.join(", "))
}

// Criterion 5

/// Replaces every `//<<EDIT id hint>> .. //<<END id>>` block with `// hint`.
fn echo_expectation(file_text: &str) -> String {
    let mut out = String::new();
    let mut inside = false;
    for line in file_text.split_inclusive('\n') {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("//<<EDIT ") {
            let hint = rest
                .strip_suffix(">>")
                .unwrap()
                .split_once(' ')
                .map_or("", |(_, h)| h);
            out.push_str(&format!("// {hint}\n"));
            inside = true;
        } else if t.starts_with("//<<END ") {
            inside = false;
        } else if !inside {
            out.push_str(line);
        }
    }
    out
}

fn rebuild(skel: &Skeleton, frozen: impl Fn(&str, &str) -> String) -> String {
    skel.regions
        .iter()
        .map(|r| match r.kind {
            RegionKind::Editable => r.default_fill().to_string(),
            RegionKind::Frozen => frozen(&r.id, &r.text),
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let dir = core_dir().join("protocols");
    let lib = ProtocolLibrary::load(&dir).map_err(|e| e.to_string())?;
    ensure(lib == ProtocolLibrary::builtin(), || {
        "shipped library differs from built-in".into()
    })?;
    let protocols = [
        Protocol::Apb,
        Protocol::Ahb,
        Protocol::Axi,
        Protocol::PChannel,
        Protocol::QChannel,
    ];
    ensure(lib.protocols() == protocols, || {
        format!("protocols {:?}", lib.protocols())
    })?;
    let base_ir = read_ir(&fixture("ir/pwrctrl.ir")).map_err(|e| e.to_string())?;
    let (mut deletions, mut mutations) = (0, 0);
    for p in protocols {
        let mut ir = base_ir.clone();
        ir.interfaces[0].protocol = p;
        for k in ComponentKind::PER_PROTOCOL {
            let skel = lib
                .get(p, k)
                .ok_or_else(|| format!("{p:?} {k:?} missing"))?;
            let file = std::fs::read_to_string(
                dir.join(p.name().to_ascii_lowercase())
                    .join(format!("{}.svt", k.name())),
            )
            .map_err(|e| e.to_string())?;
            ensure(skel.body() == file, || {
                format!("{} does not tile its file", skel.id)
            })?;

            let c = specialize(skel, &ir, None, &EchoClient, &SpecializeOptions::default())
                .map_err(|e| format!("{}: {e}", skel.id))?;
            ensure(c.output_text == echo_expectation(&file), || {
                format!("{}: echo output differs", skel.id)
            })?;
            ensure(
                verify_frozen_regions(skel, &c.output_text).is_empty(),
                || format!("{}: echo flagged", skel.id),
            )?;
            ensure(skel.assemble(&c.region_fills) == c.output_text, || {
                format!("{}: reassembly differs", skel.id)
            })?;

            let defaults = skel.defaults();
            for r in skel.frozen() {
                // Delete one content line that occurs once in the whole output.
                if let Some(line) = r.text.split_inclusive('\n').find(|l| {
                    l.ends_with('\n') && !l.trim().is_empty() && defaults.matches(*l).count() == 1
                }) {
                    let out = rebuild(skel, |id, t| {
                        if id == r.id {
                            t.replacen(line, "", 1)
                        } else {
                            t.to_string()
                        }
                    });
                    let got = verify_frozen_regions(skel, &out);
                    ensure(got == [r.id.clone()], || {
                        format!(
                            "{}: deleting `{}` from {} flagged {got:?}",
                            skel.id,
                            line.trim(),
                            r.id
                        )
                    })?;
                    deletions += 1;
                }
                // Interior character insertion.
                let cuts: Vec<usize> = r.text.char_indices().map(|(i, _)| i).skip(1).collect();
                if let Some(&at) = cuts.get(cuts.len() / 2) {
                    let out = rebuild(skel, |id, t| {
                        if id == r.id {
                            format!("{}\u{1}{}", &t[..at], &t[at..])
                        } else {
                            t.to_string()
                        }
                    });
                    let got = verify_frozen_regions(skel, &out);
                    ensure(got == [r.id.clone()], || {
                        format!("{}: mutating {} flagged {got:?}", skel.id, r.id)
                    })?;
                    mutations += 1;
                }
            }
        }
    }

    let iface = lib
        .get(Protocol::Apb, ComponentKind::Interface)
        .ok_or("APB interface missing")?;
    let frozen: Vec<_> = iface.frozen().collect();
    let (a, b) = (frozen[1], frozen[2]);
    let swapped = rebuild(iface, |id, t| {
        if id == a.id {
            b.text.clone()
        } else if id == b.id {
            a.text.clone()
        } else {
            t.to_string()
        }
    });
    let got = verify_frozen_regions(iface, &swapped);
    ensure(got == [a.id.clone(), b.id.clone()], || {
        format!("swap flagged {got:?}")
    })?;
    Ok(format!(
        "20 skeletons tile and echo cleanly; {deletions} deletions and {mutations} mutations named exactly; swap names {} and {}",
        a.id, b.id
    ))
}

// Criterion 6

fn run_scenario() -> Result<(VerificationReport, Vec<ScriptedClient>), String> {
    let model = load("toy_sub", "toy_top");
    let report = read_report(&fixture("refine/scenario.cov")).map_err(|e| e.to_string())?;
    let clients: Vec<ScriptedClient> = ["a", "b", "c"]
        .iter()
        .map(|n| ScriptedClient::from_file(&fixture(&format!("refine/model_{n}.json"))))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let labeled: Vec<_> = ["a", "b", "c"]
        .iter()
        .zip(&clients)
        .map(|(l, c)| LabeledClient::new(*l, c))
        .collect();
    let mut sim = MockSim::from_file(&fixture("refine/sim_script.json"), report.clone())
        .map_err(|e| e.to_string())?;
    let config = RefineConfig {
        target_score: 100.0,
        ..RefineConfig::default()
    };
    let out = refine(&model, &report, &labeled, &mut sim, &config).map_err(|e| e.to_string())?;
    Ok((out, clients))
}

fn criterion_6() -> Outcome {
    let baseline = read_report(&fixture("refine/scenario.cov")).map_err(|e| e.to_string())?;
    let (out, clients) = run_scenario()?;
    let open: BTreeSet<usize> = baseline.open_items().map(|i| i.id).collect();
    let covered: BTreeSet<usize> = open
        .iter()
        .copied()
        .filter(|id| {
            out.final_run()
                .item(*id)
                .is_some_and(|i| i.status == Status::Covered)
        })
        .collect();
    ensure(covered == BTreeSet::from([3, 4, 18]), || {
        format!("covered {covered:?}")
    })?;
    let waived: BTreeSet<usize> = out.waivers.iter().map(|w| w.target_item).collect();
    ensure(waived == BTreeSet::from([7, 19]), || {
        format!("waived {waived:?}")
    })?;
    let history = out.score_history();
    ensure(history.windows(2).all(|w| w[0] <= w[1]), || {
        format!("history {history:?}")
    })?;
    ensure(out.stop_reason == StopReason::TargetReached, || {
        format!("stopped: {:?}", out.stop_reason)
    })?;
    let failed = out
        .candidates
        .iter()
        .filter(|c| c.status == CandidateStatus::CompileFailed)
        .count();
    let repairs: Vec<String> = clients
        .iter()
        .flat_map(|c| c.calls())
        .filter_map(|c| c.key)
        .filter(|k| k.starts_with("repair/"))
        .collect();
    ensure(failed == 1 && repairs == ["repair/3/c/1"], || {
        format!("{failed} failed, repairs {repairs:?}")
    })?;
    let again = run_scenario()?.0.to_json();
    ensure(out.to_json() == again, || "reruns differ".into())?;
    Ok(format!("covered {covered:?}, waived {waived:?}, history {history:?}, one repair, byte-identical rerun"))
}

// Criterion 7

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let ok = SrgEntry {
        compiled: true,
        simulated: true,
        checkers_passed: true,
    };
    let mut got = Vec::new();
    for flaw in 0..3 {
        let mut entries = vec![ok; 15];
        let bad = &mut entries[rng.random_range(0..15)];
        match flaw {
            0 => bad.compiled = false,
            1 => bad.simulated = false,
            _ => bad.checkers_passed = false,
        }
        entries.shuffle(&mut rng);
        let srg = compute_srg(&entries).map_err(|e| e.to_string())?;
        let expected = (14.0 / 15.0 * 100.0 * 100.0_f64).round() / 100.0;
        ensure(srg == expected && srg == 93.33, || {
            format!("srg {srg}, expected {expected}")
        })?;
        got.push(srg);
    }
    Ok(format!(
        "14 of 15 passing gives {:.2} for each failure stage",
        got[0]
    ))
}

// Criterion 8

fn criterion_8() -> Outcome {
    let path = fixture("ir/pwrctrl.ir");
    let doc = read_ir(&path).map_err(|e| e.to_string())?;
    let back = parse_ir(&doc.to_text()).map_err(|e| e.to_string())?;
    ensure(back == doc, || "text round trip differs".into())?;
    let json = serde_json::to_string(&doc).map_err(|e| e.to_string())?;
    let from_json: covslice::ir::IrDocument =
        serde_json::from_str(&json).map_err(|e| e.to_string())?;
    ensure(from_json == doc, || "JSON round trip differs".into())?;
    let model = load("pwrctrl", "pwrctrl");
    let clean = validate_ir(&doc, Some(&model));
    ensure(clean.is_empty(), || {
        format!("clean document has findings {clean:?}")
    })?;

    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let cases = [
        (
            "width",
            "signal psel in 1 select",
            "signal psel in 2 select",
        ),
        (
            "offset",
            "register STATUS\n  offset: 0x004",
            "register STATUS\n  offset: 0x002",
        ),
    ];
    let mut codes = Vec::new();
    for (what, from, to) in cases {
        ensure(text.contains(from), || format!("fixture lacks `{from}`"))?;
        let doc = parse_ir(&text.replace(from, to)).map_err(|e| e.to_string())?;
        let errors: Vec<_> = validate_ir(&doc, Some(&model))
            .into_iter()
            .filter(|f| f.severity == Severity::Error)
            .collect();
        ensure(errors.len() == 1, || format!("{what}: {errors:?}"))?;
        codes.push(errors[0].code.clone());
    }
    Ok(format!(
        "round trips hold; injected faults give one error each ({})",
        codes.join(", ")
    ))
}

// Criterion 9

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    let fx = |rel: &str| fixture(rel).display().to_string();
    let design = fx("corpus/toy_sub");
    let slice = d.join("slice.json").display().to_string();
    let fdut = d.join("fdut").display().to_string();
    let report = d.join("report.json").display().to_string();
    let stages: Vec<(&str, Vec<String>)> = vec![
        (
            "trace",
            vec![
                "trace",
                "--design",
                &design,
                "--top",
                "toy_top",
                "--seed",
                "done,hs.busy",
                "--json",
                "-o",
                &slice,
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "patch",
            vec![
                "patch", "--design", &design, "--top", "toy_top", "--slice", &slice, "-o", &fdut,
                "--json",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "analyze",
            vec![
                "analyze",
                "--report",
                &fx("refine/scenario.cov"),
                "--design",
                &design,
                "--top",
                "toy_top",
                "--json",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "refine",
            vec![
                "refine".to_string(),
                "--design".into(),
                design.clone(),
                "--top".into(),
                "toy_top".into(),
                "--report".into(),
                fx("refine/scenario.cov"),
                "--llm".into(),
                format!("a=mock:{}", fx("refine/model_a.json")),
                "--llm".into(),
                format!("b=mock:{}", fx("refine/model_b.json")),
                "--llm".into(),
                format!("c=mock:{}", fx("refine/model_c.json")),
                "--sim".into(),
                format!("mock:{}", fx("refine/sim_script.json")),
                "--target".into(),
                "100".into(),
                "-o".into(),
                report.clone(),
                "--json".into(),
            ],
        ),
    ];
    for (name, args) in &stages {
        let o = Command::new(env!("CARGO_BIN_EXE_covslice"))
            .args(args)
            .current_dir(d)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.code() == Some(0), || {
            format!(
                "{name} exited {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stderr)
            )
        })?;
    }
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(v["stop_reason"] == "target_reached", || {
        format!("stop_reason {}", v["stop_reason"])
    })?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "trace, patch, analyze and refine exit 0 in {:.2}s",
        took.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("slice equals flat fixpoint on corpus", criterion_1),
        ("slicing terminates and is monotone", criterion_2),
        ("patched sub-slices are valid Verilog", criterion_3),
        ("coverage round trip, score and extraction", criterion_4),
        ("frozen regions preserved and violations named", criterion_5),
        ("scripted refinement scenario", criterion_6),
        ("syntax-simulation pass rate", criterion_7),
        ("IR round trip and injected faults", criterion_8),
        ("CLI pipeline end to end", criterion_9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

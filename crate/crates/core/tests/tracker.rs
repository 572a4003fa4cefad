mod common;

use common::oracle;
use covslice::tracker::{resolve_seeds, trace_cross_file, trace_single_file, SeedSet};
use covslice::verilog::SignalRef;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[test]
fn fsm_done_matches_single_file_fixpoint() {
    let model = common::load("toy_sub");
    let (stmts, visited) = trace_single_file(&SeedSet::new(["done"]), &model, "fsm").unwrap();
    assert_eq!(
        stmts,
        oracle::single_file_fixpoint(&model, "fsm", &["done"])
    );
    assert!(visited.contains("state"));
    assert!(visited.contains("next_state"));
    assert!(!visited.contains("clk"));
}

#[test]
fn handshake_ack_spans_hierarchy() {
    let model = common::load("toy_sub");
    let seeds = SeedSet::new(["hs.ack"]);
    let slice = trace_cross_file(&seeds, &model).unwrap();
    let ports: Vec<&str> = slice.entry_ports.iter().map(String::as_str).collect();
    assert_eq!(ports, ["clk", "req_in", "rst_n"]);
    assert_eq!(
        slice.statements_by_module.keys().collect::<Vec<_>>(),
        ["fsm", "hs", "toy_top"]
    );
    let flat = oracle::flat_fixpoint(&model, &resolve_seeds(&seeds, &model));
    assert_eq!(slice.statements(), flat);
    assert!(slice.reachable_from_io);
    assert!(!slice.partial);
}

#[test]
fn cross_file_equals_flat_oracle_on_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, model) in common::all() {
        let pool = common::scoped_signals(&model);
        for _ in 0..50 {
            let seeds = common::random_seeds(&mut rng, &pool, 3);
            let slice = trace_cross_file(&seeds, &model).unwrap();
            let flat = oracle::flat_fixpoint(&model, &resolve_seeds(&seeds, &model));
            assert_eq!(slice.statements(), flat, "{name}: {seeds:?}");
        }
    }
}

#[test]
fn frontiers_never_reexpand() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (_, model) in common::all() {
        let pool = common::scoped_signals(&model);
        for _ in 0..20 {
            let slice =
                trace_cross_file(&common::random_seeds(&mut rng, &pool, 2), &model).unwrap();
            let mut seen: BTreeSet<SignalRef> = BTreeSet::new();
            for f in &slice.iteration_frontiers {
                assert!(f.is_disjoint(&seen));
                seen.extend(f.iter().cloned());
            }
            assert!(seen.is_subset(&slice.visited_signals));
            for p in &slice.entry_ports {
                assert!(model.top().unwrap().port(p).is_some());
            }
            for id in slice.statements() {
                assert!(id < model.statements.len());
            }
        }
    }
}

#[test]
fn retracing_visited_signals_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, model) in common::all() {
        let pool = common::scoped_signals(&model);
        for _ in 0..20 {
            let first =
                trace_cross_file(&common::random_seeds(&mut rng, &pool, 3), &model).unwrap();
            let again = trace_cross_file(&first.visited_as_seeds(), &model).unwrap();
            assert_eq!(first.statements(), again.statements(), "{name}");
        }
    }
}

#[test]
fn feedback_loop_terminates() {
    let model = common::load("feedback");
    let slice = trace_cross_file(&SeedSet::new(["feedback_top.dout"]), &model).unwrap();
    // The loop runs mix -> fold -> mix, so both modules are in the slice.
    assert!(slice.statements_by_module.contains_key("mix"));
    assert!(slice.statements_by_module.contains_key("fold"));
    assert!(slice.entry_ports.contains("din"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn termination_and_monotonicity(design in 0usize..5, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..4), extra in any::<prop::sample::Index>()) {
        let model = common::load(common::DESIGNS[design].0);
        let pool = common::scoped_signals(&model);
        let mut seeds = SeedSet::default();
        for p in &picks {
            let (m, s) = &pool[p.index(pool.len())];
            seeds.signals.insert(SignalRef::new(m.clone(), s.clone()));
        }
        let slice = trace_cross_file(&seeds, &model).unwrap();
        prop_assert!(slice.iterations() <= pool.len());
        let (m, s) = &pool[extra.index(pool.len())];
        let mut bigger = seeds.clone();
        bigger.signals.insert(SignalRef::new(m.clone(), s.clone()));
        let grown = trace_cross_file(&bigger, &model).unwrap();
        prop_assert!(slice.statements().is_subset(&grown.statements()));
    }
}

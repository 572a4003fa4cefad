mod common;

use covslice::ir::{
    has_errors, parse_ir, read_ir, validate_ir, Access, ActiveLevel, AddressRange, ClockDesc,
    FunctionalPoint, InterfaceDesc, IrDocument, IrSignal, Protocol, RegisterDesc, ResetDesc, Role,
    Severity, SignalDir, TimingDesc,
};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

fn fixture(name: &str) -> std::path::PathBuf {
    common::fixtures().join("ir").join(name)
}

#[test]
fn pwrctrl_matches_golden_json() {
    let doc = read_ir(&fixture("pwrctrl.ir")).unwrap();
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("pwrctrl.json")).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&doc).unwrap(), golden);
    assert_eq!(doc.interfaces.len(), 1);
    assert_eq!(doc.interfaces[0].protocol, Protocol::Apb);
    assert_eq!(doc.registers.len(), 6);
    assert_eq!(doc.timing.clocks.len(), 2);
    assert_eq!(doc.functional_points.len(), 8);
}

#[test]
fn pwrctrl_is_consistent_with_design() {
    let doc = read_ir(&fixture("pwrctrl.ir")).unwrap();
    let model = common::load("pwrctrl");
    let findings = validate_ir(&doc, Some(&model));
    assert!(findings.is_empty(), "{findings:?}");
}

#[test]
fn width_mismatch_names_both_widths() {
    let text = std::fs::read_to_string(fixture("pwrctrl.ir"))
        .unwrap()
        .replace("signal psel in 1 select", "signal psel in 2 select");
    let doc = parse_ir(&text).unwrap();
    let model = common::load("pwrctrl");
    let errors: Vec<_> = validate_ir(&doc, Some(&model))
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .collect();
    assert_eq!(errors.len(), 1, "{errors:?}");
    assert!(errors[0].message.contains("psel"));
    assert!(errors[0].message.contains("width 2"));
    assert!(errors[0].message.contains("but 1"));
}

#[test]
fn overlapping_offset_is_one_error() {
    let text = std::fs::read_to_string(fixture("pwrctrl.ir"))
        .unwrap()
        .replace(
            "register STATUS\n  offset: 0x004",
            "register STATUS\n  offset: 0x002",
        );
    let doc = parse_ir(&text).unwrap();
    assert_eq!(doc.registers[1].offset, 2);
    let errors: Vec<_> = validate_ir(&doc, Some(&common::load("pwrctrl")))
        .into_iter()
        .filter(|f| f.severity == Severity::Error)
        .collect();
    assert_eq!(errors.len(), 1, "{errors:?}");
    assert_eq!(errors[0].code, "register-overlap");
    assert!(errors[0].message.contains("CTRL") && errors[0].message.contains("STATUS"));
}

#[test]
fn direction_and_missing_ports_are_errors() {
    let text = std::fs::read_to_string(fixture("pwrctrl.ir"))
        .unwrap()
        .replace(
            "signal pready out 1 ready",
            "signal pready in 1 ready\n  signal pslverr out 1 error",
        );
    let doc = parse_ir(&text).unwrap();
    let f = validate_ir(&doc, Some(&common::load("pwrctrl")));
    let codes: BTreeSet<&str> = f.iter().map(|x| x.code.as_str()).collect();
    assert_eq!(codes, BTreeSet::from(["missing-port", "port-direction"]));
}

#[test]
fn fixture_round_trips() {
    let doc = read_ir(&fixture("pwrctrl.ir")).unwrap();
    assert_eq!(parse_ir(&doc.to_text()).unwrap(), doc);
}

// Generators.

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

fn words() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,._:=-]{0,20}[A-Za-z0-9.]"
}

fn annotations() -> impl Strategy<Value = BTreeMap<String, String>> {
    prop::collection::btree_map("x_[a-z]{1,5}", words(), 0..3)
}

fn signal() -> impl Strategy<Value = IrSignal> {
    (
        ident(),
        prop::sample::select(vec![SignalDir::In, SignalDir::Out, SignalDir::Inout]),
        0u32..40,
        ident(),
    )
        .prop_map(|(name, direction, width, role_tag)| IrSignal {
            name,
            direction,
            width,
            role_tag,
        })
}

fn interface() -> impl Strategy<Value = InterfaceDesc> {
    (
        ident(),
        prop::sample::select(Protocol::ALL.to_vec()),
        prop::sample::select(vec![Role::Manager, Role::Subordinate]),
        prop::collection::vec(signal(), 0..5),
        prop::collection::vec((0u64..0x400, 0u64..0x200), 0..3),
        annotations(),
    )
        .prop_map(
            |(name, protocol, role, signals, ranges, annotations)| InterfaceDesc {
                name,
                protocol,
                role,
                signals,
                address_ranges: ranges
                    .into_iter()
                    .map(|(base, size)| AddressRange { base, size })
                    .collect(),
                annotations,
            },
        )
}

fn register() -> impl Strategy<Value = RegisterDesc> {
    (
        "[A-Z][A-Z0-9_]{0,6}",
        (0u64..16).prop_map(|o| o * 4),
        prop::sample::select(vec![1u32, 4, 8, 16, 32]),
        prop::sample::select(vec![0u64, 1, 0x10, 0x101, 0xffff_ffff]),
        prop::sample::select(vec![
            Access::RW,
            Access::RO,
            Access::WO,
            Access::W1C,
            Access::LOCKED,
        ]),
        annotations(),
    )
        .prop_map(
            |(name, offset, width, reset_value, access, annotations)| RegisterDesc {
                name,
                offset,
                width,
                reset_value,
                access,
                interface: None,
                annotations,
            },
        )
}

fn document() -> impl Strategy<Value = IrDocument> {
    (
        ident(),
        annotations(),
        prop::collection::vec(interface(), 0..3),
        prop::collection::vec(register(), 0..5),
        prop::collection::vec((ident(), prop::option::of("[0-9]{1,3}ns")), 0..3),
        prop::collection::vec((ident(), any::<bool>()), 0..2),
        prop::collection::vec(words(), 0..3),
        prop::collection::vec(
            ("FP[0-9]", words(), prop::collection::vec(ident(), 0..3)),
            0..5,
        ),
    )
        .prop_map(
            |(
                module_name,
                module_annotations,
                interfaces,
                registers,
                clocks,
                resets,
                constraints,
                points,
            )| {
                IrDocument {
                    module_name,
                    module_annotations,
                    interfaces,
                    registers,
                    timing: TimingDesc {
                        clocks: clocks
                            .into_iter()
                            .map(|(name, period)| ClockDesc { name, period })
                            .collect(),
                        resets: resets
                            .into_iter()
                            .map(|(name, low)| ResetDesc {
                                name,
                                active: if low {
                                    ActiveLevel::Low
                                } else {
                                    ActiveLevel::High
                                },
                            })
                            .collect(),
                        constraints,
                        annotations: BTreeMap::new(),
                    },
                    functional_points: points
                        .into_iter()
                        .map(|(id, description, tags)| FunctionalPoint {
                            id,
                            description,
                            tags,
                        })
                        .collect(),
                }
            },
        )
}

/// The type invariants, checked directly.
fn invariants_hold(d: &IrDocument) -> bool {
    let ids: Vec<&str> = d.functional_points.iter().map(|p| p.id.as_str()).collect();
    let unique_ids = ids.iter().collect::<BTreeSet<_>>().len() == ids.len();
    let widths = d
        .interfaces
        .iter()
        .all(|i| i.signals.iter().all(|s| s.width >= 1));
    let ranges = d.interfaces.iter().all(|i| {
        let r = &i.address_ranges;
        (0..r.len()).all(|a| {
            ((a + 1)..r.len())
                .all(|b| r[a].base + r[a].size <= r[b].base || r[b].base + r[b].size <= r[a].base)
        })
    });
    let resets = d
        .registers
        .iter()
        .all(|r| r.width >= 64 || r.reset_value < (1u64 << r.width));
    // All generated registers share the first interface's map.
    let mut bytes = BTreeSet::new();
    let offsets = d
        .registers
        .iter()
        .all(|r| (r.offset..r.offset + u64::from(r.width).div_ceil(8)).all(|b| bytes.insert(b)));
    let clocks =
        !d.timing.clocks.is_empty() || d.interfaces.iter().all(|i| i.protocol == Protocol::Custom);
    unique_ids && widths && ranges && resets && offsets && clocks
}

proptest! {
    #[test]
    fn text_round_trip(doc in document()) {
        let text = doc.to_text();
        let back = parse_ir(&text).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn clean_documents_satisfy_invariants(doc in document()) {
        let findings = validate_ir(&doc, None);
        if !has_errors(&findings) {
            prop_assert!(invariants_hold(&doc), "{:#?}", doc);
        }
        if !invariants_hold(&doc) {
            prop_assert!(has_errors(&findings));
        }
    }
}

#![allow(dead_code)]

use covslice::verilog::DesignModel;
use std::path::{Path, PathBuf};

pub const DESIGNS: &[(&str, &str)] = &[
    ("toy_sub", "toy_top"),
    ("pwrctrl", "pwrctrl"),
    ("feedback", "feedback_top"),
    ("arbiter", "arb_top"),
    ("uart_lite", "uart_top"),
];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn design_files(name: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixtures().join("corpus").join(name))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "v"))
        .collect();
    files.sort();
    files
}

pub fn load(name: &str) -> DesignModel {
    let top = DESIGNS.iter().find(|(n, _)| *n == name).unwrap().1;
    covslice::verilog::parse_design(&design_files(name), top).unwrap()
}

pub fn all() -> Vec<(&'static str, DesignModel)> {
    DESIGNS.iter().map(|(n, _)| (*n, load(n))).collect()
}

pub mod oracle;

use rand::Rng;

/// All `(module, signal)` pairs under the top, in a stable order.
pub fn scoped_signals(model: &DesignModel) -> Vec<(String, String)> {
    model
        .hierarchy()
        .iter()
        .flat_map(|m| m.signals.keys().map(move |s| (m.name.clone(), s.clone())))
        .collect()
}

/// A random seed set of 1..=max signals, as module-qualified references.
pub fn random_seeds(
    rng: &mut impl Rng,
    pool: &[(String, String)],
    max: usize,
) -> covslice::tracker::SeedSet {
    let n = rng.random_range(1..=max);
    let mut seeds = covslice::tracker::SeedSet::default();
    for _ in 0..n {
        let (m, s) = &pool[rng.random_range(0..pool.len())];
        seeds
            .signals
            .insert(covslice::verilog::SignalRef::new(m.clone(), s.clone()));
    }
    seeds
}

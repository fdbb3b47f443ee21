use std::path::Path;

use inmart::config::RunConfig;
use inmart::models::{
    build_chain, build_redfield, controllable_reference, pbg_demo, redfield_commutator_defects, ChainParams,
    RedfieldParams, SplitRule,
};

#[test]
fn packaged_models_validate() {
    let report = controllable_reference().validate();
    assert!(report.is_empty(), "{report}");
    let report = pbg_demo(5.0).unwrap().validate();
    assert!(report.is_empty(), "{report}");
    let r = build_redfield(RedfieldParams::reference()).unwrap();
    assert!(r.model.validate().is_empty());
    for n in [2, 4, 8] {
        let report = build_chain(&ChainParams::reference(n)).unwrap().validate();
        assert!(report.is_empty(), "N = {n}: {report}");
    }
}

#[test]
fn signed_weights_are_detected() {
    let grid: Vec<f64> = (0..=30).map(|k| 0.1 * k as f64).collect();
    assert!(!controllable_reference().is_completely_positive(&grid));
    assert!(!build_redfield(RedfieldParams::reference())
        .unwrap()
        .model
        .is_completely_positive(&grid));
}

#[test]
fn redfield_jump_operators_commute() {
    let r = build_redfield(RedfieldParams::reference()).unwrap();
    let (commute, _) = redfield_commutator_defects(&r.model).unwrap();
    assert!(commute < 1e-12);
}

#[test]
fn chain_split_rules_differ_only_in_bookkeeping() {
    for split in [SplitRule::Mirror, SplitRule::AbsValue] {
        let p = ChainParams {
            split,
            ..ChainParams::reference(3)
        };
        assert!(build_chain(&p).unwrap().validate().is_empty());
    }
    let ratio = ChainParams {
        split: SplitRule::Ratio,
        ..ChainParams::reference(3)
    };
    assert!(build_chain(&ratio).is_err());
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let cfg = RunConfig::load(&path).unwrap();
        if cfg.model.is_some() {
            cfg.prepare(None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        } else {
            assert!(cfg.bench.is_some(), "{}", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 6);
}

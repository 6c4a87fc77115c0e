use std::path::Path;

use extobs_core::{Error, ExperimentConfig};

fn shipped() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    ExperimentConfig::from_path(&path).unwrap()
}

#[test]
fn shipped_config_is_the_demo() {
    assert_eq!(shipped(), ExperimentConfig::demo());
}

#[test]
fn serialization_roundtrips() {
    let cfg = shipped();
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}

#[test]
fn unknown_fields_are_rejected() {
    let text = ExperimentConfig::demo().to_toml_string().replace("[run]\n", "[run]\nspeed = 3\n");
    assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Toml(_))));
}

#[test]
fn invalid_values_are_reported() {
    let mut cfg = ExperimentConfig::demo();
    cfg.run.dt = (-1.0).into();
    assert!(matches!(cfg.build(), Err(Error::Config(_))));
    let mut cfg = ExperimentConfig::demo();
    cfg.filters.g = vec![vec![1.0.into(), 0.0.into()], vec![0.0.into(), 1.0.into()]];
    assert!(matches!(cfg.build(), Err(Error::Config(_))));
    let mut cfg = ExperimentConfig::demo();
    cfg.system.x0.pop();
    assert!(matches!(cfg.build(), Err(Error::Dimension { .. })));
    let mut cfg = ExperimentConfig::demo();
    cfg.system.plant = "unknown".into();
    assert!(matches!(cfg.build(), Err(Error::Config(_))));
}

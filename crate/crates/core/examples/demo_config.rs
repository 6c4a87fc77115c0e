//! Prints the built-in demo experiment as TOML.

fn main() {
    print!("{}", extobs_core::ExperimentConfig::demo().to_toml_string());
}

//! The five-state reach-avoid example shipped with the crate.

use crate::mdp::{validate_mdp, Mdp, ModelFile};

/// Raw JSON of the example model.
pub const EXAMPLE_JSON: &str = include_str!("../fixtures/example.json");

pub fn example_model_file() -> ModelFile {
    ModelFile::from_json(EXAMPLE_JSON).expect("bundled fixture parses")
}

/// Validated example: `H = {1,2,3}`, `U = {4}`, `E = {5}`, proxy `{2,3}`.
pub fn example_mdp() -> Mdp {
    validate_mdp(&example_model_file()).expect("bundled fixture is valid")
}

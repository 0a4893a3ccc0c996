use serde::Serialize;

use crate::io::{InputDigest, Inputs, Outputs};
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Written last by every run. Holds nothing that depends on the machine,
/// the output directory or the thread count.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config: C,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn write_manifest<C: Serialize>(
    out: &mut Outputs,
    subcommand: &'static str,
    config: C,
    seed: Option<u64>,
    inputs: Inputs,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: "netsmooth",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config,
        seed,
        inputs: inputs.digests,
        outputs: out.written.clone(),
    };
    out.write_json(MANIFEST_NAME, &manifest)
}

//! Flat key = value config file support (TOML, one section per
//! subcommand). Values from the file fill in whatever the command line
//! left unset; explicit flags always win.

use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub pmf: PmfSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub divergence: DivergenceSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmfSection {
    pub mech: Option<String>,
    pub x: Option<f64>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    pub trials: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub q: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSection {
    pub mech: Option<String>,
    pub alpha: Option<String>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    pub trials: Option<usize>,
    pub x: Option<Vec<f64>>,
    pub x_prime: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub preset: Option<String>,
    pub axis: Option<String>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    pub trials: Option<usize>,
    pub alpha: Option<f64>,
    pub n_max: Option<usize>,
    pub n: Option<usize>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub alpha_points: Option<usize>,
    pub split_k: Option<usize>,
    pub neighbor_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub total_devices: Option<usize>,
    pub devices_per_round: Option<usize>,
    pub rounds: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clipping: Option<f64>,
    pub feature_dim: Option<usize>,
    pub classes: Option<usize>,
    pub samples_per_device: Option<usize>,
    pub separation: Option<f64>,
    pub heterogeneity: Option<f64>,
    pub mechanisms: Option<Vec<String>>,
    pub m: Option<usize>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub theta: Option<f64>,
    pub trials: Option<usize>,
    pub diagnostic: Option<bool>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| anyhow::anyhow!("cannot read config file {}: {e}", p.display()))?;
            toml::from_str(&text)
                .map_err(|e| anyhow::anyhow!("invalid config file {}: {e}", p.display()))
        }
    }
}

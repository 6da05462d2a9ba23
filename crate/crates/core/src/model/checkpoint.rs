//! Plain-text checkpoints.
//!
//! ```text
//! layers=4,3,2
//!
//! <3 lines of 4 weights>
//!
//! <1 line of 3 biases>
//!
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so reading a checkpoint
//! back yields bit-identical parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::{Error, Result};

pub fn checkpoint_string(params: &ModelParams) -> String {
    let sizes: Vec<String> = params.layer_sizes().iter().map(usize::to_string).collect();
    let mut out = format!("layers={}\n", sizes.join(","));
    let row = |vals: &[f64]| vals.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    for layer in &params.layers {
        out.push('\n');
        for r in layer.weights.chunks(layer.inputs) {
            let _ = writeln!(out, "{}", row(r));
        }
        out.push('\n');
        let _ = writeln!(out, "{}", row(&layer.bias));
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("layers="))
        .ok_or_else(|| Error::format("checkpoint: missing `layers=` header"))?;
    let sizes = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
    if sizes.len() < 2 {
        return Err(Error::format("checkpoint: need at least two layer sizes"));
    }
    let values = lines
        .flat_map(str::split_whitespace)
        .map(str::parse::<f64>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(format!("checkpoint value: {e}")))?;
    let mut params = ModelParams::zeros(&sizes);
    if values.len() != params.num_params() {
        return Err(Error::format(format!(
            "checkpoint: {} values for {} parameters",
            values.len(),
            params.num_params()
        )));
    }
    for (slot, v) in params.values_mut().zip(values) {
        *slot = v;
    }
    Ok(params)
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_string(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

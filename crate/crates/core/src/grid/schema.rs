use std::path::Path;

use thiserror::Error;

use super::{validate, Grid, ValidationReport};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid grid: {0}")]
    Semantic(ValidationReport),
    #[error("cannot read grid file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses and validates a grid document.
pub fn parse_grid(text: &str) -> Result<Grid, GridError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let grid: Grid = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        GridError::Schema { path, message: e.into_inner().to_string() }
    })?;
    let report = validate(&grid);
    if report.is_empty() {
        Ok(grid)
    } else {
        Err(GridError::Semantic(report))
    }
}

pub fn parse_grid_file(path: impl AsRef<Path>) -> Result<Grid, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| GridError::Io { path: path.display().to_string(), source })?;
    parse_grid(&text)
}

/// Complex admittances are stored as `{ "g": .., "b": .. }`.
pub(crate) mod complex_gb {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Gb {
        g: f64,
        b: f64,
    }

    pub fn serialize<S: Serializer>(y: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        Gb { g: y.re, b: y.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let Gb { g, b } = Gb::deserialize(d)?;
        Ok(Complex64::new(g, b))
    }
}

//! TOML model files.
//!
//! ```toml
//! dimension = 1
//! alpha = 0.5
//! delta = 0.5
//! offspring = { table = [0.55, 0.0, 0.45] }
//!
//! [[kernel]]
//! offset = [1]
//! rate = 0.5
//! ```
//!
//! Each kernel entry stands for the pair ±offset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{validate_kernel, CbrwModel, OffspringLaw};
use crate::site::Site;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    dimension: usize,
    alpha: f64,
    delta: f64,
    offspring: OffspringSpec,
    kernel: Vec<KernelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelEntry {
    offset: Vec<i64>,
    rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OffspringSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    geometric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    poisson: Option<f64>,
}

fn keyed(key: &str, e: Error) -> Error {
    Error::Parse(format!("{key}: {e}"))
}

/// Parses and validates a model description.
pub fn parse_config(text: &str) -> Result<CbrwModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
    let d = file.dimension;
    if d == 0 {
        return Err(Error::Parse("dimension: must be at least 1".into()));
    }
    let mut raw: BTreeMap<Site, f64> = BTreeMap::new();
    for (i, entry) in file.kernel.iter().enumerate() {
        if entry.offset.len() != d {
            return Err(Error::Parse(format!(
                "kernel[{i}].offset: expected {d} coordinates, got {}",
                entry.offset.len()
            )));
        }
        let z = Site::new(entry.offset.clone());
        if z.is_origin() {
            return Err(Error::Parse(format!("kernel[{i}].offset: must be nonzero")));
        }
        if !(entry.rate >= 0.0 && entry.rate.is_finite()) {
            return Err(Error::Parse(format!(
                "kernel[{i}].rate: must be a finite nonnegative number, got {}",
                entry.rate
            )));
        }
        if raw.contains_key(&z) {
            return Err(Error::Parse(format!(
                "kernel[{i}].offset: {z} is given twice (entries stand for ± pairs, give one member of each)"
            )));
        }
        raw.insert(-&z, entry.rate);
        raw.insert(z, entry.rate);
    }
    let kernel = validate_kernel(&raw, d).map_err(|e| keyed("kernel", e))?;
    let spec = &file.offspring;
    let given = [spec.table.is_some(), spec.geometric.is_some(), spec.poisson.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given != 1 {
        return Err(Error::Parse(
            "offspring: give exactly one of table, geometric or poisson".into(),
        ));
    }
    let law = if let Some(t) = &spec.table {
        OffspringLaw::table(t.clone())
    } else if let Some(r) = spec.geometric {
        OffspringLaw::geometric(r)
    } else {
        OffspringLaw::poisson(spec.poisson.unwrap())
    }
    .map_err(|e| match e {
        Error::InvalidOffspring(m) => Error::Parse(format!("offspring: {m}")),
        other => keyed("offspring", other),
    })?;
    CbrwModel::new(kernel, file.alpha, law, file.delta).map_err(|e| match e {
        Error::InvalidParameter(m) if m.starts_with("alpha") => Error::Parse(format!("alpha: {m}")),
        Error::InvalidParameter(m) if m.starts_with("delta") => Error::Parse(format!("delta: {m}")),
        Error::InvalidParameter(m) | Error::InvalidOffspring(m) => Error::Parse(m),
        other => other,
    })
}

/// Serializes a model in the same format `parse_config` reads.
pub fn to_config(model: &CbrwModel) -> String {
    let offspring = match model.offspring() {
        OffspringLaw::Table(p) => OffspringSpec {
            table: Some(p.clone()),
            ..Default::default()
        },
        OffspringLaw::Geometric(r) => OffspringSpec {
            geometric: Some(*r),
            ..Default::default()
        },
        OffspringLaw::Poisson(l) => OffspringSpec {
            poisson: Some(*l),
            ..Default::default()
        },
    };
    let file = ModelFile {
        dimension: model.dimension(),
        alpha: model.alpha(),
        delta: model.delta(),
        offspring,
        kernel: model
            .kernel()
            .half_support()
            .into_iter()
            .map(|(z, rate)| KernelEntry {
                offset: z.coords().to_vec(),
                rate,
            })
            .collect(),
    };
    toml::to_string(&file).expect("model serializes")
}

/// Hex SHA-256 of the canonical serialization, truncated to 16 digits.
pub fn model_hash(model: &CbrwModel) -> String {
    let digest = Sha256::digest(to_config(model).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

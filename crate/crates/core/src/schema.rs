//! Typed column schema for tabular datasets.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Feature kind plus, for categoricals, the ordered vocabulary. An empty
/// vocabulary means "collect categories from the data in first-seen order";
/// a non-empty one is fixed and unknown values are rejected at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numerical,
    Categorical {
        #[serde(default)]
        vocabulary: Vec<String>,
    },
}

impl FeatureKind {
    pub fn is_numerical(&self) -> bool {
        matches!(self, FeatureKind::Numerical)
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureDef>,
    pub label_column: String,
    pub event_time_column: String,
    /// Free-form label for the time axis, e.g. "week" or "month".
    #[serde(default)]
    pub time_unit: String,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            if let FeatureKind::Categorical { vocabulary } = &f.kind {
                let mut seen = HashSet::new();
                for v in vocabulary {
                    if !seen.insert(v.as_str()) {
                        return Err(Error::Schema(format!(
                            "duplicate vocabulary entry `{}` for feature `{}`",
                            v, f.name
                        )));
                    }
                }
            }
        }
        for reserved in [&self.label_column, &self.event_time_column] {
            if names.contains(reserved.as_str()) {
                return Err(Error::Schema(format!(
                    "column `{}` is both a feature and a label/time column",
                    reserved
                )));
            }
        }
        if self.label_column == self.event_time_column {
            return Err(Error::Schema(
                "label and event time columns must differ".into(),
            ));
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Names of numerical features, in schema order.
    pub fn numerical_names(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .filter(|f| f.kind.is_numerical())
            .map(|f| f.name.as_str())
    }

    pub fn n_numerical(&self) -> usize {
        self.features.iter().filter(|f| f.kind.is_numerical()).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.features.iter().filter(|f| f.kind.is_categorical()).count()
    }

    /// Vocabulary sizes of categorical features, in schema order.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.features
            .iter()
            .filter_map(|f| match &f.kind {
                FeatureKind::Categorical { vocabulary } => Some(vocabulary.len()),
                FeatureKind::Numerical => None,
            })
            .collect()
    }

    /// Slot of a feature within the numerical (`Ok`) or categorical (`Err`)
    /// storage of an instance. `None` if the feature does not exist.
    pub fn slot(&self, name: &str) -> Option<FeatureSlot> {
        let mut num = 0;
        let mut cat = 0;
        for f in &self.features {
            let here = f.name == name;
            match &f.kind {
                FeatureKind::Numerical => {
                    if here {
                        return Some(FeatureSlot::Numerical(num));
                    }
                    num += 1;
                }
                FeatureKind::Categorical { .. } => {
                    if here {
                        return Some(FeatureSlot::Categorical(cat));
                    }
                    cat += 1;
                }
            }
        }
        None
    }

    /// Index of a category string in a feature's vocabulary. Every category
    /// code stored on an instance is produced by this mapping (starting at 0).
    pub fn encode_category(&self, feature: &str, value: &str) -> Result<usize> {
        let def = self
            .feature(feature)
            .ok_or_else(|| Error::Schema(format!("unknown feature `{feature}`")))?;
        match &def.kind {
            FeatureKind::Numerical => Err(Error::Type(format!(
                "feature `{feature}` is numerical, not categorical"
            ))),
            FeatureKind::Categorical { vocabulary } => vocabulary
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| Error::Vocabulary {
                    feature: feature.to_string(),
                    value: value.to_string(),
                    row: 0,
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSlot {
    /// Index into `Instance::numeric_values`.
    Numerical(usize),
    /// Index into `Instance::category_codes`.
    Categorical(usize),
}

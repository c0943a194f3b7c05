//! Declarative per-category event schemas.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::event::{Category, ValueKind};

const DEFAULT_SCHEMA: &str = include_str!("../assets/schema.toml");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: ValueKind,
    /// Whether the default preprocessing keeps this field.
    #[serde(default)]
    pub keep: bool,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySchema {
    pub category: Category,
    pub fields: Vec<FieldSpec>,
}

impl CategorySchema {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Field declarations for all twelve categories, indexed by
/// [`Category::index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSchema {
    categories: Vec<CategorySchema>,
}

#[derive(Deserialize)]
struct SchemaFile {
    category: Vec<CategoryEntry>,
}

#[derive(Deserialize)]
struct CategoryEntry {
    name: String,
    fields: Vec<FieldSpec>,
}

impl EventSchema {
    /// The schema shipped with the synthetic generator.
    pub fn default_schema() -> Self {
        Self::from_toml(DEFAULT_SCHEMA).expect("shipped schema is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text)?;
        let mut slots: Vec<Option<CategorySchema>> = vec![None; Category::COUNT];
        for entry in file.category {
            let category: Category = entry.name.parse()?;
            if slots[category.index()].is_some() {
                return Err(CoreError::Schema(format!("category `{category}` declared twice")));
            }
            let mut seen = HashSet::new();
            for f in &entry.fields {
                if !seen.insert(f.name.as_str()) {
                    return Err(CoreError::Schema(format!(
                        "field `{}` declared twice in `{category}`",
                        f.name
                    )));
                }
            }
            slots[category.index()] = Some(CategorySchema {
                category,
                fields: entry.fields,
            });
        }
        let categories = slots
            .into_iter()
            .zip(Category::ALL)
            .map(|(slot, c)| {
                slot.ok_or_else(|| CoreError::Schema(format!("category `{c}` is not declared")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { categories })
    }

    pub fn category(&self, c: Category) -> &CategorySchema {
        &self.categories[c.index()]
    }

    pub fn categories(&self) -> &[CategorySchema] {
        &self.categories
    }

    pub fn total_fields(&self) -> usize {
        self.categories.iter().map(|c| c.fields.len()).sum()
    }

    pub fn kept_fields(&self) -> usize {
        self.categories
            .iter()
            .map(|c| c.fields.iter().filter(|f| f.keep).count())
            .sum()
    }
}

//! Tool taxonomy used to validate classified answers.
//!
//! The default table groups Photoshop tools by function and is embedded from
//! `data/photoshop_tools.json`. Other applications can supply a file of the
//! same shape.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocr::{match_menu_item, normalize_label};

const EMBEDDED: &str = include_str!("../data/photoshop_tools.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub category: String,
    pub tools: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ToolTaxonomy {
    entries: Vec<CategoryEntry>,
    /// normalized tool -> index into `entries`
    tool_index: HashMap<String, usize>,
    /// normalized category -> index into `entries`
    category_index: HashMap<String, usize>,
    flat_tools: Vec<String>,
}

impl ToolTaxonomy {
    pub fn embedded() -> Self {
        Self::from_json(EMBEDDED.as_bytes()).expect("embedded taxonomy is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json(&bytes).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let entries: Vec<CategoryEntry> =
            serde_json::from_slice(bytes).map_err(|e| Error::validation("taxonomy", e.to_string()))?;
        Self::new(entries)
    }

    pub fn new(entries: Vec<CategoryEntry>) -> Result<Self> {
        let mut tool_index = HashMap::new();
        let mut category_index = HashMap::new();
        for (i, entry) in entries.iter().enumerate() {
            let cat = normalize_label(&entry.category);
            if cat.is_empty() {
                return Err(Error::validation("category", "empty category name"));
            }
            if category_index.insert(cat, i).is_some() {
                return Err(Error::validation("category", format!("duplicate category {:?}", entry.category)));
            }
            for tool in &entry.tools {
                let key = normalize_label(tool);
                if key.is_empty() {
                    return Err(Error::validation("tools", format!("empty tool name in {:?}", entry.category)));
                }
                if let Some(prev) = tool_index.insert(key, i) {
                    return Err(Error::validation(
                        "tools",
                        format!("{tool:?} listed under both {:?} and {:?}", entries[prev].category, entry.category),
                    ));
                }
            }
        }
        let flat_tools = entries.iter().flat_map(|e| e.tools.iter().cloned()).collect();
        Ok(ToolTaxonomy {
            entries,
            tool_index,
            category_index,
            flat_tools,
        })
    }

    pub fn entries(&self) -> &[CategoryEntry] {
        &self.entries
    }

    /// Every tool, in table order.
    pub fn tools(&self) -> &[String] {
        &self.flat_tools
    }

    pub fn category_of(&self, tool: &str) -> Option<&str> {
        self.tool_index
            .get(&normalize_label(tool))
            .map(|&i| self.entries[i].category.as_str())
    }

    pub fn validate(&self, category: &str, tool: &str) -> bool {
        match (
            self.category_index.get(&normalize_label(category)),
            self.tool_index.get(&normalize_label(tool)),
        ) {
            (Some(c), Some(t)) => c == t,
            _ => false,
        }
    }

    pub fn fuzzy_tool(&self, text: &str) -> Result<Option<(String, f64)>> {
        match_menu_item(text, &self.flat_tools)
    }
}

impl Default for ToolTaxonomy {
    fn default() -> Self {
        Self::embedded()
    }
}

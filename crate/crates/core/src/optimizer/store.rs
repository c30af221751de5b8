//! Template persistence: one JSON file per category under a store directory.

use super::PromptTemplate;
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct TemplateStore {
    dir: PathBuf,
}

impl TemplateStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(TemplateStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, category: &str) -> PathBuf {
        let safe: String = category
            .chars()
            .map(|c| if c == '/' || c == '\\' { '_' } else { c })
            .collect();
        self.dir.join(format!("{safe}.json"))
    }

    pub fn save(&self, template: &PromptTemplate) -> io::Result<PathBuf> {
        let path = self.path_for(&template.category);
        let mut json = serde_json::to_string_pretty(template).expect("template serializes");
        json.push('\n');
        fs::write(&path, json)?;
        Ok(path)
    }

    pub fn load(&self, category: &str) -> io::Result<Option<PromptTemplate>> {
        let path = self.path_for(category);
        if !path.exists() {
            return Ok(None);
        }
        let data = fs::read_to_string(path)?;
        let template = serde_json::from_str(&data)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(Some(template))
    }

    /// Read every stored template into memory.
    pub fn load_all(&self) -> io::Result<TemplateSet> {
        let mut templates = BTreeMap::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                let data = fs::read_to_string(&path)?;
                let template: PromptTemplate = serde_json::from_str(&data)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                templates.insert(template.category.clone(), template);
            }
        }
        Ok(TemplateSet { templates })
    }
}

/// In-memory template map with the general fallback.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.category.clone(), template);
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Stored template for the category, or the general fallback.
    pub fn resolve(&self, category: &str) -> PromptTemplate {
        self.templates.get(category).cloned().unwrap_or_else(|| {
            let mut t = PromptTemplate::general(category);
            t.fallback = true;
            t
        })
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

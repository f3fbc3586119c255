//! Terrain class sets as extracted from a mission prompt.

use serde::{Deserialize, Serialize};

use crate::raster::{ClassSpec, Geometry};

/// Where a class in a [`ClassSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Prompt,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub geometry: Geometry,
    pub provenance: Provenance,
}

impl ClassEntry {
    pub fn spec(&self) -> ClassSpec {
        ClassSpec::new(self.name.clone(), self.geometry)
    }
}

/// Canonical form of a class name: trimmed, inner whitespace collapsed,
/// lower-cased.
pub fn canonical_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// An ordered set of classes with unique (case-folded) names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassSet {
    classes: Vec<ClassEntry>,
}

impl ClassSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from specs, dropping later duplicates.
    pub fn from_specs<'a>(specs: impl IntoIterator<Item = &'a ClassSpec>, provenance: Provenance) -> Self {
        let mut set = Self::new();
        for s in specs {
            set.insert(&s.name, s.geometry, provenance);
        }
        set
    }

    /// Inserts a class unless its canonical name is already present or blank.
    /// Returns whether it was added.
    pub fn insert(&mut self, name: &str, geometry: Geometry, provenance: Provenance) -> bool {
        let name = canonical_name(name);
        if name.is_empty() || self.contains(&name) {
            return false;
        }
        self.classes.push(ClassEntry {
            name,
            geometry,
            provenance,
        });
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&ClassEntry> {
        let key = canonical_name(name);
        self.classes.iter().find(|c| c.name == key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassEntry> {
        self.classes.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    pub fn specs(&self) -> Vec<ClassSpec> {
        self.classes.iter().map(ClassEntry::spec).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_is_case_insensitive() {
        let mut set = ClassSet::new();
        assert!(set.insert("Road", Geometry::Linear, Provenance::Prompt));
        assert!(!set.insert("road", Geometry::Areal, Provenance::Default));
        assert!(!set.insert("  ROAD ", Geometry::Areal, Provenance::Default));
        assert!(!set.insert("   ", Geometry::Areal, Provenance::Default));
        assert_eq!(set.len(), 1);
        assert_eq!(set.get("rOaD").unwrap().geometry, Geometry::Linear);
        assert_eq!(canonical_name(" Baseball   Field"), "baseball field");
    }
}

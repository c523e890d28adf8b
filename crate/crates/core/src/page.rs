//! Page classification by URL prefix.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ParseEnumError};
use crate::event::closed_enum;

closed_enum! {
    pub enum PageClass {
        GeneralInstruction => "GENERAL_INSTRUCTION",
        Rubric => "RUBRIC",
        RelevantContent => "RELEVANT_CONTENT",
        IrrelevantContent => "IRRELEVANT_CONTENT",
        TableOfContents => "TABLE_OF_CONTENTS",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub pattern: String,
    pub class: PageClass,
}

/// Maps URL prefixes to page classes. The longest matching prefix wins; URLs
/// matching no prefix get `default_class`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCatalog {
    #[serde(default)]
    pub entries: Vec<CatalogEntry>,
    #[serde(default = "default_page_class")]
    pub default_class: PageClass,
}

fn default_page_class() -> PageClass {
    PageClass::IrrelevantContent
}

impl Default for PageCatalog {
    fn default() -> Self {
        PageCatalog {
            entries: Vec::new(),
            default_class: default_page_class(),
        }
    }
}

impl PageCatalog {
    pub fn new(default_class: PageClass) -> Self {
        PageCatalog {
            entries: Vec::new(),
            default_class,
        }
    }

    pub fn with_entry(mut self, pattern: impl Into<String>, class: PageClass) -> Self {
        self.entries.push(CatalogEntry {
            pattern: pattern.into(),
            class,
        });
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.pattern.is_empty() {
                return Err(ConfigError::invalid(
                    alloc::format!("page_catalog.entries[{i}].pattern"),
                    "must not be empty",
                ));
            }
            if self.entries[..i].iter().any(|e| e.pattern == entry.pattern) {
                return Err(ConfigError::DuplicatePattern(entry.pattern.clone()));
            }
        }
        Ok(())
    }

    pub fn classify(&self, url: &str) -> PageClass {
        classify_page(url, self)
    }
}

/// Returns the class of the longest catalogued prefix of `url`, or the
/// catalog default.
pub fn classify_page(url: &str, catalog: &PageCatalog) -> PageClass {
    catalog
        .entries
        .iter()
        .filter(|e| url.starts_with(e.pattern.as_str()))
        .max_by_key(|e| e.pattern.len())
        .map_or(catalog.default_class, |e| e.class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> PageCatalog {
        PageCatalog::new(PageClass::IrrelevantContent)
            .with_entry("/course/instructions", PageClass::GeneralInstruction)
            .with_entry("/course/rubric", PageClass::Rubric)
            .with_entry("/course/reading/", PageClass::RelevantContent)
            .with_entry("/course/reading/extra", PageClass::IrrelevantContent)
            .with_entry("/course/contents", PageClass::TableOfContents)
    }

    #[test]
    fn rubric_and_instruction_pages() {
        let c = catalog();
        assert_eq!(classify_page("/course/rubric", &c), PageClass::Rubric);
        assert_eq!(
            classify_page("/course/instructions?x=1", &c),
            PageClass::GeneralInstruction
        );
    }

    #[test]
    fn unknown_url_gets_default() {
        assert_eq!(
            classify_page("https://example.org/news", &catalog()),
            PageClass::IrrelevantContent
        );
        let c = PageCatalog::new(PageClass::RelevantContent);
        assert_eq!(classify_page("/anything", &c), PageClass::RelevantContent);
    }

    #[test]
    fn longest_prefix_wins_regardless_of_order() {
        let c = catalog();
        assert_eq!(
            classify_page("/course/reading/ai", &c),
            PageClass::RelevantContent
        );
        assert_eq!(
            classify_page("/course/reading/extra/1", &c),
            PageClass::IrrelevantContent
        );
        let mut reversed = c.clone();
        reversed.entries.reverse();
        assert_eq!(
            classify_page("/course/reading/extra/1", &reversed),
            PageClass::IrrelevantContent
        );
    }

    #[test]
    fn duplicate_patterns_rejected() {
        let c = catalog().with_entry("/course/rubric", PageClass::Rubric);
        assert_eq!(
            c.validate(),
            Err(ConfigError::DuplicatePattern("/course/rubric".into()))
        );
    }
}

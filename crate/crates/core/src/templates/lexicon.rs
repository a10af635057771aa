use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::tokenize;

/// Slot categories a class can belong to.
pub const CATEGORY_GROUPS: &[&str] = &[
    "person",
    "vehicle",
    "outdoor",
    "animal",
    "accessory",
    "sports",
    "container",
    "kitchenware",
    "food",
    "furniture",
    "electronic",
    "appliance",
    "indoor",
];

/// Group of the default template's slot; accepts any class.
pub const GENERIC_GROUP: &str = "generic";

/// Filler for a generic slot when there is nothing detected.
pub const GENERIC_WORD: &str = "object";

static COCO_LEXICON: &str = include_str!("../../data/coco_lexicon.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Determiner {
    A,
    An,
    None,
}

impl Determiner {
    /// Guess from spelling: vowel letters take "an".
    pub fn guess(word: &str) -> Determiner {
        match word.chars().next() {
            Some('a' | 'e' | 'i' | 'o' | 'u') => Determiner::An,
            _ => Determiner::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceForms {
    pub singular: Vec<String>,
    pub plural: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub forms: SurfaceForms,
    pub group: String,
    pub determiner: Determiner,
}

impl LexiconEntry {
    /// Word used to fill a slot of the given plurality.
    pub fn surface(&self, plural: bool) -> &str {
        if plural {
            &self.forms.plural[0]
        } else {
            &self.forms.singular[0]
        }
    }
}

/// A surface form found in running text.
#[derive(Debug, Clone, PartialEq)]
pub struct FormMatch<'a> {
    pub class_name: &'a str,
    pub group: &'a str,
    pub plural: bool,
    pub len: usize,
}

/// Class name → surface forms, category group and determiner hint.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLexicon {
    entries: BTreeMap<String, LexiconEntry>,
    /// (tokenized form, class, plural), longest forms first.
    forms: Vec<(Vec<String>, String, bool)>,
}

impl ClassLexicon {
    pub fn new(entries: BTreeMap<String, LexiconEntry>) -> Result<Self> {
        let mut forms = Vec::new();
        let mut owner: BTreeMap<Vec<String>, &str> = BTreeMap::new();
        for (class, e) in &entries {
            if e.forms.singular.is_empty() || e.forms.plural.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "lexicon entry `{class}` needs singular and plural forms"
                )));
            }
            if !CATEGORY_GROUPS.contains(&e.group.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "lexicon entry `{class}` has unknown group `{}`",
                    e.group
                )));
            }
            // Singular wins when a form is listed as both.
            let sg: BTreeSet<Vec<String>> = e.forms.singular.iter().map(|f| tokenize(f)).collect();
            let tagged = e
                .forms
                .singular
                .iter()
                .map(|f| (f, false))
                .chain(e.forms.plural.iter().map(|f| (f, true)));
            for (f, plural) in tagged {
                let toks = tokenize(f);
                if toks.is_empty() {
                    return Err(Error::InvalidArgument(format!("empty surface form for `{class}`")));
                }
                if plural && sg.contains(&toks) {
                    continue;
                }
                if let Some(other) = owner.insert(toks.clone(), class) {
                    if other != class {
                        return Err(Error::InvalidArgument(format!(
                            "surface form `{f}` belongs to both `{other}` and `{class}`"
                        )));
                    }
                    continue;
                }
                forms.push((toks, class.clone(), plural));
            }
        }
        forms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(ClassLexicon { entries, forms })
    }

    /// The 80-class COCO lexicon shipped with the crate.
    pub fn coco() -> Self {
        ClassLexicon::from_json(COCO_LEXICON, Path::new("coco_lexicon.json"))
            .expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let entries: BTreeMap<String, LexiconEntry> =
            serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        ClassLexicon::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        ClassLexicon::from_json(&crate::io::read_text(path)?, path)
    }

    pub fn get(&self, class: &str) -> Option<&LexiconEntry> {
        self.entries.get(class)
    }

    pub fn group_of(&self, class: &str) -> Option<&str> {
        self.entries.get(class).map(|e| e.group.as_str())
    }

    pub fn classes(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Longest surface form starting at `tokens[0]`, if any.
    pub fn match_at(&self, tokens: &[String]) -> Option<FormMatch<'_>> {
        self.forms
            .iter()
            .find(|(f, _, _)| tokens.starts_with(f))
            .map(|(f, class, plural)| FormMatch {
                class_name: class,
                group: &self.entries[class].group,
                plural: *plural,
                len: f.len(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_covers_coco() {
        let lex = ClassLexicon::coco();
        assert_eq!(lex.classes().count(), 80);
        assert_eq!(lex.group_of("zebra"), Some("animal"));
        assert_eq!(lex.get("zebra").unwrap().surface(true), "zebra");
        assert_eq!(lex.get("orange").unwrap().determiner, Determiner::An);
    }

    #[test]
    fn longest_form_first() {
        let lex = ClassLexicon::coco();
        let toks = tokenize("tennis racket on the court");
        let m = lex.match_at(&toks).unwrap();
        assert_eq!((m.class_name, m.len), ("tennis racket", 2));
        let m = lex.match_at(&tokenize("zebras")).unwrap();
        assert!(m.plural);
        let m = lex.match_at(&tokenize("zebra")).unwrap();
        assert!(!m.plural);
        assert!(lex.match_at(&tokenize("field")).is_none());
    }

    #[test]
    fn rejects_unknown_group_and_shared_forms() {
        let entry = |g: &str| LexiconEntry {
            forms: SurfaceForms {
                singular: vec!["thing".into()],
                plural: vec!["things".into()],
            },
            group: g.into(),
            determiner: Determiner::A,
        };
        assert!(ClassLexicon::new([("x".to_string(), entry("spaceship"))].into()).is_err());
        assert!(
            ClassLexicon::new([("x".to_string(), entry("indoor")), ("y".to_string(), entry("indoor"))].into())
                .is_err()
        );
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexicon::{ClassLexicon, Determiner, GENERIC_GROUP, GENERIC_WORD};
use crate::detection::{sort_detections, Detection};
use crate::error::{Error, Result};
use crate::eval::{mentions, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateToken {
    Text(String),
    Slot { group: String, plural: bool },
}

/// Sentence skeleton of textual words and typed visual-word slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionTemplate {
    pub tokens: Vec<TemplateToken>,
    pub frequency: usize,
    #[serde(default)]
    pub source_classes: BTreeSet<String>,
}

impl CaptionTemplate {
    /// Parses `a red <vehicle> driving` / `a couple of <animal:pl>`.
    pub fn parse(text: &str, frequency: usize) -> Result<Self> {
        let tokens = text
            .split_whitespace()
            .map(|w| match w.strip_prefix('<').and_then(|w| w.strip_suffix('>')) {
                Some(inner) => {
                    let (group, plural) = match inner.split_once(':') {
                        Some((g, "pl")) => (g, true),
                        Some((g, "sg")) | Some((g, "")) => (g, false),
                        Some(_) => return Err(Error::InvalidArgument(format!("bad slot `{w}`"))),
                        None => (inner, false),
                    };
                    Ok(TemplateToken::Slot {
                        group: group.to_string(),
                        plural,
                    })
                }
                None => Ok(TemplateToken::Text(w.to_lowercase())),
            })
            .collect::<Result<Vec<_>>>()?;
        let t = CaptionTemplate {
            tokens,
            frequency: frequency.max(1),
            source_classes: BTreeSet::new(),
        };
        if t.slot_count() == 0 {
            return Err(Error::InvalidArgument(format!("template `{text}` has no slot")));
        }
        Ok(t)
    }

    /// Built-in fallback: "a picture of a <generic>".
    pub fn default_fallback() -> Self {
        CaptionTemplate::parse("a picture of a <generic>", 1).expect("valid default template")
    }

    pub fn slot_count(&self) -> usize {
        self.slots().count()
    }

    pub fn slots(&self) -> impl Iterator<Item = (usize, &str, bool)> {
        self.tokens.iter().enumerate().filter_map(|(i, t)| match t {
            TemplateToken::Slot { group, plural } => Some((i, group.as_str(), *plural)),
            TemplateToken::Text(_) => None,
        })
    }
}

impl fmt::Display for CaptionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match t {
                TemplateToken::Text(w) => f.write_str(w)?,
                TemplateToken::Slot { group, plural: true } => write!(f, "<{group}:pl>")?,
                TemplateToken::Slot { group, plural: false } => write!(f, "<{group}>")?,
            }
        }
        Ok(())
    }
}

/// One training caption with the classes present in its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_id: String,
    pub caption: String,
    #[serde(default)]
    pub classes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub templates: Vec<CaptionTemplate>,
    pub default_template: CaptionTemplate,
}

impl TemplateBank {
    pub fn new(templates: Vec<CaptionTemplate>) -> Self {
        TemplateBank {
            templates,
            default_template: CaptionTemplate::default_fallback(),
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Drops corpus entries that involve any of `unseen`, either through the
/// image's class list or by naming the class in the caption.
pub fn exclude_classes(corpus: &[CorpusEntry], unseen: &BTreeSet<String>) -> Vec<CorpusEntry> {
    corpus
        .iter()
        .filter(|e| {
            let toks = tokenize(&e.caption);
            e.classes.is_disjoint(unseen) && !unseen.iter().any(|u| mentions(&toks, u))
        })
        .cloned()
        .collect()
}

/// Turns captions into slotted templates by replacing every lexicon surface
/// form with a slot of that class's group. Identical templates are merged
/// and captions without any slot are dropped. The bank is ordered by
/// frequency, then template text.
pub fn abstract_captions(corpus: &[CorpusEntry], lexicon: &ClassLexicon) -> TemplateBank {
    let mut merged: BTreeMap<Vec<TemplateToken>, (usize, BTreeSet<String>)> = BTreeMap::new();
    for entry in corpus {
        let words = tokenize(&entry.caption);
        let mut tokens = Vec::with_capacity(words.len());
        let mut classes = BTreeSet::new();
        let mut i = 0;
        while i < words.len() {
            match lexicon.match_at(&words[i..]) {
                Some(m) => {
                    tokens.push(TemplateToken::Slot {
                        group: m.group.to_string(),
                        plural: m.plural,
                    });
                    classes.insert(m.class_name.to_string());
                    i += m.len;
                }
                None => {
                    tokens.push(TemplateToken::Text(words[i].clone()));
                    i += 1;
                }
            }
        }
        if classes.is_empty() {
            continue;
        }
        let slot = merged.entry(tokens).or_default();
        slot.0 += 1;
        slot.1.extend(classes);
    }
    let mut templates: Vec<CaptionTemplate> = merged
        .into_iter()
        .map(|(tokens, (frequency, source_classes))| CaptionTemplate {
            tokens,
            frequency,
            source_classes,
        })
        .collect();
    templates.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.tokens.cmp(&b.tokens)));
    TemplateBank::new(templates)
}

/// Distinct detected classes per category group.
fn detected_groups(detections: &[Detection], lexicon: &ClassLexicon) -> BTreeMap<String, usize> {
    let classes: BTreeSet<&str> = detections.iter().map(|d| d.class_name.as_str()).collect();
    let mut groups = BTreeMap::new();
    for c in classes {
        if let Some(g) = lexicon.group_of(c) {
            *groups.entry(g.to_string()).or_insert(0) += 1;
        }
    }
    groups
}

/// Selection score: fillable slots, minus 0.1 per unfillable slot, plus
/// 0.01 * ln(frequency).
pub fn template_score(template: &CaptionTemplate, groups: &BTreeMap<String, usize>) -> f64 {
    let mut need: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, g, _) in template.slots() {
        *need.entry(g).or_insert(0) += 1;
    }
    let total: usize = need.values().sum();
    let fillable: usize = need
        .iter()
        .map(|(g, n)| (*n).min(groups.get(*g).copied().unwrap_or(0)))
        .sum();
    fillable as f64 - 0.1 * (total - fillable) as f64 + 0.01 * (template.frequency.max(1) as f64).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub template: &'a CaptionTemplate,
    /// Set when nothing was detected and the default template was used.
    pub low_confidence: bool,
}

/// Picks the best-scoring template for a detection set. Ties go to the
/// more frequent template, then to the lexicographically smaller one.
pub fn select_template<'a>(
    bank: &'a TemplateBank,
    detections: &[Detection],
    lexicon: &ClassLexicon,
) -> Result<Selection<'a>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if detections.is_empty() {
        return Ok(Selection {
            template: &bank.default_template,
            low_confidence: true,
        });
    }
    let groups = detected_groups(detections, lexicon);
    let best = bank
        .templates
        .iter()
        .map(|t| (t, template_score(t, &groups)))
        .max_by(|(a, sa), (b, sb)| {
            sa.total_cmp(sb)
                .then(a.frequency.cmp(&b.frequency))
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .map(|(t, _)| t)
        .expect("non-empty bank");
    Ok(Selection {
        template: best,
        low_confidence: false,
    })
}

/// Which detection filled which slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFill {
    pub slot_index: usize,
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
    /// The filler's group does not match the slot's group.
    #[serde(default)]
    pub off_group: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledCaption {
    pub sentence: String,
    pub provenance: Vec<SlotFill>,
}

impl FilledCaption {
    pub fn degraded(&self) -> bool {
        self.provenance.iter().any(|p| p.off_group)
    }
}

/// Fills each slot with the best unused detection of a matching group,
/// falling back to the best unused detection of any group. Each detected
/// class is used at most once while unused ones remain.
pub fn fill_slots(
    template: &CaptionTemplate,
    detections: &[Detection],
    lexicon: &ClassLexicon,
) -> Result<FilledCaption> {
    let mut ranked = detections.to_vec();
    sort_detections(&mut ranked);
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut words: Vec<String> = Vec::with_capacity(template.tokens.len());
    let mut provenance = Vec::new();

    for (i, token) in template.tokens.iter().enumerate() {
        let (group, plural) = match token {
            TemplateToken::Text(w) => {
                words.push(w.clone());
                continue;
            }
            TemplateToken::Slot { group, plural } => (group.as_str(), *plural),
        };
        let generic = group == GENERIC_GROUP;
        let unused = |d: &&Detection| !used.contains(d.class_name.as_str());
        let in_group = |d: &&Detection| generic || lexicon.group_of(&d.class_name) == Some(group);
        let pick = ranked
            .iter()
            .filter(unused)
            .find(in_group)
            .map(|d| (d, false))
            .or_else(|| ranked.iter().find(unused).map(|d| (d, true)))
            .or_else(|| ranked.first().map(|d| (d, true)));

        let (word, determiner) = match pick {
            Some((d, off_group)) => {
                used.insert(d.class_name.as_str());
                provenance.push(SlotFill {
                    slot_index: i,
                    class_name: d.class_name.clone(),
                    score: d.score,
                    off_group: off_group && !generic,
                });
                match lexicon.get(&d.class_name) {
                    Some(e) => (e.surface(plural).to_string(), e.determiner),
                    None => (d.class_name.clone(), Determiner::guess(&d.class_name)),
                }
            }
            None if generic => (GENERIC_WORD.to_string(), Determiner::guess(GENERIC_WORD)),
            None => return Err(Error::NoDetections),
        };
        if let Some(prev) = words.last_mut().filter(|w| *w == "a" || *w == "an") {
            match determiner {
                Determiner::A => *prev = "a".into(),
                Determiner::An => *prev = "an".into(),
                Determiner::None => {}
            }
        }
        words.push(word);
    }
    Ok(FilledCaption {
        sentence: words.join(" "),
        provenance,
    })
}

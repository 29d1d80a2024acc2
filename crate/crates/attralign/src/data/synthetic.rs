//! Synthetic controllable corpora.
//!
//! Each sentence is a seeded, shuffled mix of domain style words, attribute
//! marker words, and neutral filler. Marker sets are pairwise disjoint and
//! disjoint from style/neutral vocabulary, so a bag-of-words classifier can
//! recover the attribute and domain by construction — that property is what
//! makes control and disentanglement claims testable at this scale.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusRecord, LabeledCorpus};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Domain special token, e.g. `<dom:movie_review>`.
    pub name: String,
    pub style_words: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSpec {
    /// Attribute phrase; also serves as its first marker word so the phrase
    /// is always in-vocabulary for the LM encoding pass.
    pub name: String,
    pub marker_words: Vec<String>,
    /// Owning domain (must name a `DomainSpec`).
    pub domain: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub domains: Vec<DomainSpec>,
    pub attributes: Vec<AttributeSpec>,
    pub neutral_words: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences_per_pair: usize,
    /// Extra records per domain that carry no attribute label.
    #[serde(default)]
    pub domain_only_per_domain: usize,
    /// Fraction of tokens drawn from the attribute marker set (0.6 emulates
    /// strongly polarized training data).
    #[serde(default = "default_mix")]
    pub attribute_mix: f64,
    /// Fraction of tokens drawn from the domain style set.
    #[serde(default = "default_mix")]
    pub style_mix: f64,
    pub seed: u64,
}

fn default_mix() -> f64 {
    0.3
}

impl SyntheticSpec {
    /// Two-domain default: a movie-review domain with sentiment attributes
    /// and a news domain with four topic attributes.
    pub fn default_two_domain(sentences_per_pair: usize, seed: u64) -> Self {
        let words = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        SyntheticSpec {
            domains: vec![
                DomainSpec {
                    name: "<dom:movie_review>".into(),
                    style_words: words(&[
                        "film", "screen", "plot", "scene", "actor", "cinema", "script",
                        "sequel", "camera", "studio", "trailer", "critic", "director",
                        "theater",
                    ]),
                },
                DomainSpec {
                    name: "<dom:news>".into(),
                    style_words: words(&[
                        "report", "press", "daily", "headline", "sources", "editor",
                        "bulletin", "column", "wire", "byline", "desk", "anchor",
                        "journal", "gazette",
                    ]),
                },
            ],
            attributes: vec![
                AttributeSpec {
                    name: "positive".into(),
                    marker_words: words(&[
                        "positive", "wonderful", "delightful", "uplifting", "charming",
                        "superb", "heartfelt", "dazzling", "graceful", "stellar",
                    ]),
                    domain: "<dom:movie_review>".into(),
                },
                AttributeSpec {
                    name: "negative".into(),
                    marker_words: words(&[
                        "negative", "dreadful", "tedious", "bleak", "clumsy", "hollow",
                        "grating", "dismal", "shabby", "lifeless",
                    ]),
                    domain: "<dom:movie_review>".into(),
                },
                AttributeSpec {
                    name: "world".into(),
                    marker_words: words(&[
                        "world", "global", "border", "embassy", "treaty", "summit",
                        "diplomat", "nation", "foreign", "capital",
                    ]),
                    domain: "<dom:news>".into(),
                },
                AttributeSpec {
                    name: "sports".into(),
                    marker_words: words(&[
                        "sports", "match", "league", "coach", "stadium", "tournament",
                        "goal", "athlete", "referee", "season",
                    ]),
                    domain: "<dom:news>".into(),
                },
                AttributeSpec {
                    name: "business".into(),
                    marker_words: words(&[
                        "business", "market", "shares", "profit", "merger", "trade",
                        "revenue", "investor", "bank", "economy",
                    ]),
                    domain: "<dom:news>".into(),
                },
                AttributeSpec {
                    name: "science".into(),
                    marker_words: words(&[
                        "science", "research", "rocket", "software", "quantum",
                        "laboratory", "data", "engineer", "circuit", "theory",
                    ]),
                    domain: "<dom:news>".into(),
                },
            ],
            neutral_words: words(&[
                "the", "a", "it", "was", "and", "of", "to", "in", "that", "this",
                "with", "for", "on", "had", "very", "quite", "rather", "some",
                "many", "few", "one", "two", "about", "after", "before", "while",
                "again", "also", "just", "still", "then", "there", "when", "which",
                "more", "most", "other", "such", "only", "over",
            ]),
            min_len: 8,
            max_len: 14,
            sentences_per_pair,
            domain_only_per_domain: 0,
            attribute_mix: 0.3,
            style_mix: 0.3,
            seed,
        }
    }

    /// Add a third wiki-style domain with four entity-type attributes.
    pub fn with_wiki_domain(mut self) -> Self {
        let words = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        self.domains.push(DomainSpec {
            name: "<dom:wiki>".into(),
            style_words: words(&[
                "article", "entry", "infobox", "citation", "category",
                "encyclopedia", "reference", "footnote", "archive", "index",
            ]),
        });
        for (name, markers) in [
            ("company", vec![
                "company", "factory", "brand", "supplier", "warehouse", "firm",
                "corporation", "product", "office", "retailer",
            ]),
            ("artist", vec![
                "artist", "painter", "gallery", "canvas", "sculptor", "portrait",
                "mural", "sketch", "fresco", "easel",
            ]),
            ("village", vec![
                "village", "hamlet", "meadow", "farmland", "orchard", "mill",
                "cottage", "parish", "brook", "lane",
            ]),
            ("animal", vec![
                "animal", "feline", "mammal", "herd", "predator", "habitat",
                "burrow", "flock", "hoof", "fur",
            ]),
        ] {
            self.attributes.push(AttributeSpec {
                name: name.into(),
                marker_words: markers.into_iter().map(String::from).collect(),
                domain: "<dom:wiki>".into(),
            });
        }
        self
    }

    /// Raise the marker mix to 0.6 (the strong-polarity training variant).
    pub fn strong_polarity(mut self) -> Self {
        self.attribute_mix = 0.6;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() || self.attributes.is_empty() {
            return Err(Error::config("spec needs at least one domain and attribute"));
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return Err(Error::config(format!(
                "bad length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.sentences_per_pair == 0 {
            return Err(Error::config("sentences_per_pair must be positive"));
        }
        if !(0.0..=0.9).contains(&self.attribute_mix) || !(0.0..=0.9).contains(&self.style_mix) {
            return Err(Error::config("mix fractions must be in [0, 0.9]"));
        }
        for a in &self.attributes {
            if !self.domains.iter().any(|d| d.name == a.domain) {
                return Err(Error::config(format!(
                    "attribute {:?} references unknown domain {:?}",
                    a.name, a.domain
                )));
            }
            if !a.marker_words.contains(&a.name) {
                return Err(Error::config(format!(
                    "attribute {:?} must appear among its own marker words",
                    a.name
                )));
            }
        }
        // global disjointness across marker sets, style sets, neutral words
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut check = |words: &[String], what: &str| -> Result<()> {
            for w in words {
                if w.is_empty() {
                    return Err(Error::config(format!("{what} contains an empty word")));
                }
                if !seen.insert(w.as_str()) {
                    return Err(Error::config(format!(
                        "word {w:?} appears in more than one word set ({what})"
                    )));
                }
            }
            Ok(())
        };
        for a in &self.attributes {
            check(&a.marker_words, &format!("markers of {}", a.name))?;
        }
        for d in &self.domains {
            check(&d.style_words, &format!("style of {}", d.name))?;
        }
        check(&self.neutral_words, "neutral words")?;
        Ok(())
    }
}

pub fn load_spec(path: &Path) -> Result<SyntheticSpec> {
    let content = fs::read_to_string(path)?;
    let spec: SyntheticSpec = serde_json::from_str(&content)?;
    Ok(spec)
}

/// Generate the corpus: `sentences_per_pair` records per (domain, attribute)
/// plus optional domain-only records, fully determined by the spec and seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    let mut rng = Rng::from_tag(spec.seed, "synth-corpus");
    let mut records = Vec::new();
    for domain in &spec.domains {
        for attr in spec.attributes.iter().filter(|a| a.domain == domain.name) {
            for _ in 0..spec.sentences_per_pair {
                let text = compose(
                    &mut rng,
                    spec,
                    &domain.style_words,
                    Some(&attr.marker_words),
                );
                records.push(CorpusRecord {
                    text,
                    attribute: Some(attr.name.clone()),
                    domain: domain.name.clone(),
                });
            }
        }
        for _ in 0..spec.domain_only_per_domain {
            let text = compose(&mut rng, spec, &domain.style_words, None);
            records.push(CorpusRecord {
                text,
                attribute: None,
                domain: domain.name.clone(),
            });
        }
    }
    LabeledCorpus::from_records(records)
}

fn compose(
    rng: &mut Rng,
    spec: &SyntheticSpec,
    style: &[String],
    markers: Option<&[String]>,
) -> String {
    let span = (spec.max_len - spec.min_len + 1) as u64;
    let n = spec.min_len + rng.next_below(span) as usize;
    let n_attr = if markers.is_some() {
        (spec.attribute_mix * n as f64).round() as usize
    } else {
        0
    };
    let n_style = (spec.style_mix * n as f64).round() as usize;
    let n_neutral = n.saturating_sub(n_attr + n_style);
    let mut words: Vec<&str> = Vec::with_capacity(n);
    if let Some(m) = markers {
        for _ in 0..n_attr {
            words.push(&m[rng.next_below(m.len() as u64) as usize]);
        }
    }
    for _ in 0..n_style {
        words.push(&style[rng.next_below(style.len() as u64) as usize]);
    }
    for _ in 0..n_neutral {
        words.push(&spec.neutral_words[rng.next_below(spec.neutral_words.len() as u64) as usize]);
    }
    rng.shuffle(&mut words);
    words.join(" ")
}

/// Oracle corpus for alignment-training tests: the attribute uniquely
/// determines the continuation of a shared stem ("the item is <gem> indeed"),
/// so the conditional entropy of the tail given the attribute is zero while
/// an unconditional model is stuck at the ln(#attributes) mixture floor.
pub fn make_attribute_predictive_corpus(seed: u64) -> LabeledCorpus {
    const GEMS: [&str; 4] = ["ruby", "jade", "onyx", "opal"];
    const COPIES: usize = 6;
    let mut records = Vec::new();
    for gem in GEMS {
        for _ in 0..COPIES {
            records.push(CorpusRecord {
                text: format!("the item is {gem} indeed"),
                attribute: Some(gem.to_string()),
                domain: "<dom:oracle>".to_string(),
            });
        }
    }
    let mut rng = Rng::for_purpose(seed, Purpose::Shuffle);
    rng.shuffle(&mut records);
    LabeledCorpus::from_records(records).expect("oracle corpus is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_contract() {
        // 2 domains x (2 + 4 attributes) x 10 -> 60 records
        let spec = SyntheticSpec::default_two_domain(10, 1);
        let corpus = generate_synthetic(&spec).unwrap();
        assert_eq!(corpus.len(), 60);
        assert_eq!(corpus.domains().len(), 2);
    }

    #[test]
    fn same_seed_identical_corpus() {
        let spec = SyntheticSpec::default_two_domain(5, 42);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn overlapping_word_sets_rejected() {
        let mut spec = SyntheticSpec::default_two_domain(5, 1);
        spec.neutral_words.push("positive".into());
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn domain_only_records_carry_no_attribute() {
        let mut spec = SyntheticSpec::default_two_domain(2, 3);
        spec.domain_only_per_domain = 4;
        let corpus = generate_synthetic(&spec).unwrap();
        let unlabeled = corpus.records.iter().filter(|r| r.attribute.is_none()).count();
        assert_eq!(unlabeled, 8);
    }

    #[test]
    fn oracle_corpus_is_balanced_and_deterministic_per_attribute() {
        let corpus = make_attribute_predictive_corpus(7);
        assert_eq!(corpus.len(), 24);
        let attrs = corpus.attributes();
        assert_eq!(attrs.len(), 4);
        for a in &attrs {
            let texts: BTreeSet<&str> = corpus
                .records
                .iter()
                .filter(|r| r.attribute.as_deref() == Some(a))
                .map(|r| r.text.as_str())
                .collect();
            assert_eq!(texts.len(), 1, "continuation must be unique given attribute");
        }
    }

    #[test]
    fn wiki_domain_extension_validates() {
        let spec = SyntheticSpec::default_two_domain(2, 1).with_wiki_domain();
        assert!(spec.validate().is_ok());
        let corpus = generate_synthetic(&spec).unwrap();
        assert_eq!(corpus.domains().len(), 3);
    }
}

//! Corpus ingestion, prompt sets, and synthetic corpus generators.

mod corpus;
mod prompts;
mod synthetic;

pub use corpus::{
    load_labeled_tsv, parse_labeled_tsv, save_labeled_tsv, CorpusRecord, LabeledCorpus,
};
pub use prompts::{builtin_prompts, load_prompt_file, PromptSet, KNOWN_SETS};
pub use synthetic::{
    generate_synthetic, load_spec, make_attribute_predictive_corpus, AttributeSpec, DomainSpec,
    SyntheticSpec,
};

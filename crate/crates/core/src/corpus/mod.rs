//! Utterance ingestion, phone- and utterance-level prosody, normalization
//! and dataset persistence.

mod alignment;
mod dataset;
mod prosody;
mod symbols;
pub mod toy;

pub use alignment::{format_alignment, parse_alignment, read_alignment, PhoneAlignment};
pub use dataset::{
    featurize, featurize_entry, fit_corpus_stats, generate_toy_corpus, grid_for, load_dataset, read_manifest,
    read_test_sentences, utterance_id, CorpusStats, Dataset, ManifestEntry, PhoneTargetStats, Standardizer,
    TiltCalibration, Utterance, FEATURES_DIR, MANIFEST, N_TEST_SENTENCES, STATS, TEST_SENTENCES,
};
pub use prosody::{
    aggregate_phone, fit_norm_stats, impute, utterance_prosody, Feature, FeatureStats, NormStats, PhoneProsody,
    PhoneTargets, ProsodyVector,
};
pub use symbols::{
    format_phones, parse_phones, phone_positions, words, PhoneToken, TokenKind, PHONES, PUNCTUATION, UNVOICED,
    VOCAB_SIZE, WORD_BOUNDARY,
};

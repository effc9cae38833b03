//! Dictionary training and database construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, require, write_json, CliError, PipelineConfig, ViewStore};
use crate::features::{DescriptorKind, DescriptorSet, ImageFeatures};
use crate::ingest::save_database;
use crate::retrieval::{build_database, compute_intra_matrix, compute_speedup_index};
use crate::vocab::{train_vocabulary, Vocabulary, VocabularyTree};

pub const LOCAL_VOCAB_FILE: &str = "vocab_local.bin";
pub const REGION_VOCAB_FILE: &str = "vocab_region.bin";
pub const DATABASE_FILE: &str = "database.bin";
const VOCAB_STAMP_FILE: &str = "vocab.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub views: usize,
    pub local_words: usize,
    pub region_words: usize,
    /// Whether the dictionaries were (re)trained in this run.
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabStamp {
    fingerprint: u32,
}

fn vocab_fingerprint(store: &ViewStore, config: &PipelineConfig) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(
        serde_json::to_string(&config.vocab)
            .expect("serializable")
            .as_bytes(),
    );
    h.update(&config.seed.to_le_bytes());
    for v in &store.views {
        h.update(&v.fingerprint.to_le_bytes());
        h.update(v.features.as_bytes());
    }
    h.finalize()
}

/// Every `stride`-th descriptor across the store, with the stride chosen so
/// at most `max` remain.
fn subsample(all: &[ImageFeatures], kind: DescriptorKind, max: usize) -> DescriptorSet {
    let total: usize = all.iter().map(|f| f.get(kind).len()).sum();
    let stride = total.div_ceil(max).max(1);
    let mut out = DescriptorSet::new(kind);
    let flat = all.iter().flat_map(|f| f.get(kind).descriptors.iter());
    for d in flat.step_by(stride) {
        out.push(d);
    }
    out
}

fn train_tree(
    all: &[ImageFeatures],
    kind: DescriptorKind,
    branching: usize,
    depth: usize,
    config: &PipelineConfig,
) -> Result<VocabularyTree, CliError> {
    let sample = subsample(all, kind, config.vocab.max_training_descriptors);
    let salt = match kind {
        DescriptorKind::Local => 0,
        DescriptorKind::Region => 1,
    };
    let mut tree = train_vocabulary(&[&sample], branching, depth, config.seed.wrapping_add(salt))?;
    let per_view: Vec<&DescriptorSet> = all.iter().map(|f| &f.get(kind).descriptors).collect();
    tree.compute_idf(&per_view)?;
    Ok(tree)
}

fn load_all_features(store: &ViewStore) -> Result<Vec<ImageFeatures>, CliError> {
    (0..store.len()).map(|i| store.features(i)).collect()
}

fn train(
    store: &ViewStore,
    all: &[ImageFeatures],
    config: &PipelineConfig,
    out: &Path,
) -> Result<Vocabulary, CliError> {
    let v = &config.vocab;
    let local = train_tree(
        all,
        DescriptorKind::Local,
        v.local_branching,
        v.local_depth,
        config,
    )?;
    let region = train_tree(
        all,
        DescriptorKind::Region,
        v.region_branching,
        v.region_depth,
        config,
    )?;
    create_dir(out)?;
    local.save(&out.join(LOCAL_VOCAB_FILE))?;
    region.save(&out.join(REGION_VOCAB_FILE))?;
    write_json(
        &out.join(VOCAB_STAMP_FILE),
        &VocabStamp {
            fingerprint: vocab_fingerprint(store, config),
        },
    )?;
    Ok(Vocabulary {
        local,
        region,
        merge_weight: v.merge_weight,
    })
}

/// Trains both dictionaries on the store's descriptors and writes them,
/// with their IDF weights, to `out`.
pub fn cmd_train(
    store_dir: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<Vocabulary, CliError> {
    config.validate()?;
    let store = ViewStore::open(store_dir)?;
    let all = load_all_features(&store)?;
    train(&store, &all, config, out)
}

/// Reads the dictionaries written by [`cmd_train`].
pub fn load_vocabulary(dir: &Path, config: &PipelineConfig) -> Result<Vocabulary, CliError> {
    let (l, r) = (dir.join(LOCAL_VOCAB_FILE), dir.join(REGION_VOCAB_FILE));
    require(&l, "train")?;
    require(&r, "train")?;
    Ok(Vocabulary {
        local: VocabularyTree::load(&l)?,
        region: VocabularyTree::load(&r)?,
        merge_weight: config.vocab.merge_weight,
    })
}

/// Quantizes every stored view and writes the database with its
/// intra-distance matrix and speed-up index. Dictionaries already in `out`
/// are reused when they were trained on the same store and settings;
/// otherwise they are trained first.
pub fn cmd_build(
    store_dir: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<BuildReport, CliError> {
    config.validate()?;
    let store = ViewStore::open(store_dir)?;
    let all = load_all_features(&store)?;
    let stamp_path = out.join(VOCAB_STAMP_FILE);
    let fresh = std::fs::read_to_string(&stamp_path)
        .ok()
        .and_then(|t| serde_json::from_str::<VocabStamp>(&t).ok())
        .is_some_and(|s| s.fingerprint == vocab_fingerprint(&store, config));
    let (vocab, trained) = match fresh.then(|| load_vocabulary(out, config)) {
        Some(Ok(v)) => (v, false),
        _ => (train(&store, &all, config, out)?, true),
    };

    let entries = store
        .views
        .iter()
        .zip(&all)
        .map(|(v, f)| Ok((v.info(), vocab.quantize(f)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let db = build_database(entries)?;
    let matrix = compute_intra_matrix(&db);
    let speedup = compute_speedup_index(&matrix, config.retrieval.speedup_k);
    save_database(&out.join(DATABASE_FILE), &db, &matrix, &speedup)?;
    Ok(BuildReport {
        views: db.len(),
        local_words: vocab.local.word_count(),
        region_words: vocab.region.word_count(),
        trained,
    })
}

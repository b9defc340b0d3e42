//! On-disk corpus: a directory holding `lexicon.json`, a JSON Lines
//! manifest, per-utterance `ACFT` feature files and text files of cluster
//! ids and phone symbols that the manifest points into by line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unitfix_core::corpus::{Accent, Dataset, LexiconSpec, Utterance};
use unitfix_core::{ClusterSequence, UnitVocab};

use crate::error::{Error, Result};
use crate::formats::binary::{read_features, write_features, Features};
use crate::formats::text::{read_sequences, read_symbols, write, write_sequences, write_symbols};

pub const LEXICON: &str = "lexicon.json";
pub const MANIFEST: &str = "manifest.jsonl";
pub const CLUSTERS: &str = "clusters.txt";
pub const STANDARD_CLUSTERS: &str = "standard_clusters.txt";
pub const FRAME_PHONES: &str = "frame_phones.txt";
pub const REF_PHONES: &str = "ref_phones.txt";

/// A zero-based line of a text file inside the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRef {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub accent: Accent,
    pub features: String,
    pub frames: usize,
    pub clusters: LineRef,
    pub frame_phones: LineRef,
    /// Standard pronunciation, space separated.
    pub ref_phones: String,
    pub standard_clusters: LineRef,
}

/// One utterance read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusUtt {
    pub utt_id: String,
    pub accent: Accent,
    pub features: Vec<f32>,
    pub clusters: Vec<u32>,
    pub frame_phones: Vec<u32>,
    pub ref_phones: Vec<u32>,
    pub standard_clusters: Vec<u32>,
}

impl CorpusUtt {
    pub fn frames(&self) -> usize {
        self.clusters.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub lexicon: LexiconSpec,
    pub utterances: Vec<CorpusUtt>,
}

impl Corpus {
    pub fn vocab(&self) -> Result<UnitVocab> {
        Ok(UnitVocab::new(self.lexicon.cluster_count() as u32)?)
    }

    pub fn feature_dim(&self) -> usize {
        self.lexicon.feature_dim
    }

    pub fn stacked_features(&self) -> Vec<f32> {
        self.utterances
            .iter()
            .flat_map(|u| u.features.iter().copied())
            .collect()
    }

    pub fn frame_phone_pairs(&self) -> Vec<(String, Vec<u32>)> {
        self.utterances
            .iter()
            .map(|u| (u.utt_id.clone(), u.frame_phones.clone()))
            .collect()
    }
}

fn symbols<'a>(lexicon: &'a LexiconSpec, ids: &[u32]) -> Vec<&'a str> {
    ids.iter()
        .map(|&p| lexicon.phones[p as usize].as_str())
        .collect()
}

pub fn write_lexicon(path: &Path, lexicon: &LexiconSpec) -> Result<()> {
    let mut json = serde_json::to_string_pretty(lexicon)
        .map_err(|e| Error::Format(format!("lexicon: {e}")))?;
    json.push('\n');
    write(path, json.as_bytes())
}

pub fn read_lexicon(path: &Path) -> Result<LexiconSpec> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let lexicon: LexiconSpec =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    lexicon.validate()?;
    Ok(lexicon)
}

/// Writes `dataset` under `dir`, replacing any previous corpus files there.
pub fn write_corpus(dir: &Path, lexicon: &LexiconSpec, dataset: &Dataset) -> Result<()> {
    let vocab = UnitVocab::new(lexicon.cluster_count() as u32)?;
    let utts = &dataset.utterances;
    let seqs = |f: fn(&Utterance) -> &Vec<u32>| -> Result<Vec<ClusterSequence>> {
        utts.iter()
            .map(|u| Ok(ClusterSequence::new(u.utt_id.clone(), f(u).clone(), vocab)?))
            .collect()
    };
    write_lexicon(&dir.join(LEXICON), lexicon)?;
    write_sequences(&dir.join(CLUSTERS), &seqs(|u| &u.clusters)?)?;
    write_sequences(
        &dir.join(STANDARD_CLUSTERS),
        &seqs(|u| &u.standard_clusters)?,
    )?;
    write_symbols(
        &dir.join(FRAME_PHONES),
        utts.iter()
            .map(|u| (u.utt_id.as_str(), symbols(lexicon, &u.frame_phones))),
    )?;
    write_symbols(
        &dir.join(REF_PHONES),
        utts.iter()
            .map(|u| (u.utt_id.as_str(), symbols(lexicon, &u.phones))),
    )?;
    let mut manifest = String::new();
    for (i, u) in utts.iter().enumerate() {
        let features = format!("features/{}.acft", u.utt_id);
        let f = Features {
            frames: u.frames(),
            dim: dataset.feature_dim,
            data: u.features.clone(),
        };
        write_features(&dir.join(&features), &f)?;
        let at = |file: &str| LineRef {
            file: file.to_string(),
            line: i,
        };
        let record = ManifestRecord {
            utt_id: u.utt_id.clone(),
            accent: u.accent,
            features,
            frames: u.frames(),
            clusters: at(CLUSTERS),
            frame_phones: at(FRAME_PHONES),
            ref_phones: symbols(lexicon, &u.phones).join(" "),
            standard_clusters: at(STANDARD_CLUSTERS),
        };
        manifest.push_str(
            &serde_json::to_string(&record).map_err(|e| Error::Format(format!("manifest: {e}")))?,
        );
        manifest.push('\n');
    }
    write(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

/// Cached line files so each is parsed once.
struct Lines {
    dir: PathBuf,
    vocab: UnitVocab,
    units: std::collections::BTreeMap<String, Vec<ClusterSequence>>,
    syms: std::collections::BTreeMap<String, Vec<(String, Vec<String>)>>,
}

impl Lines {
    fn resolve(&self, r: &LineRef) -> Result<PathBuf> {
        let rel = Path::new(&r.file);
        if rel.is_absolute()
            || rel
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(Error::Format(format!(
                "line reference {} leaves the corpus directory",
                r.file
            )));
        }
        Ok(self.dir.join(rel))
    }

    fn units(&mut self, r: &LineRef, utt_id: &str) -> Result<Vec<u32>> {
        if !self.units.contains_key(&r.file) {
            let seqs = read_sequences(&self.resolve(r)?, self.vocab)?;
            self.units.insert(r.file.clone(), seqs);
        }
        let seq = self.units[&r.file]
            .get(r.line)
            .ok_or_else(|| Error::Format(format!("{utt_id}: {} has no line {}", r.file, r.line)))?;
        if seq.utt_id != utt_id {
            return Err(Error::Format(format!(
                "{utt_id}: line {} of {} belongs to {}",
                r.line, r.file, seq.utt_id
            )));
        }
        Ok(seq.tokens.clone())
    }

    fn symbols(&mut self, r: &LineRef, utt_id: &str) -> Result<Vec<String>> {
        if !self.syms.contains_key(&r.file) {
            let rows = read_symbols(&self.resolve(r)?)?;
            self.syms.insert(r.file.clone(), rows);
        }
        let (id, syms) = self.syms[&r.file]
            .get(r.line)
            .ok_or_else(|| Error::Format(format!("{utt_id}: {} has no line {}", r.file, r.line)))?;
        if id != utt_id {
            return Err(Error::Format(format!(
                "{utt_id}: line {} of {} belongs to {id}",
                r.line, r.file
            )));
        }
        Ok(syms.clone())
    }
}

fn phone_ids(lexicon: &LexiconSpec, utt_id: &str, syms: &[String]) -> Result<Vec<u32>> {
    syms.iter()
        .map(|s| {
            lexicon
                .phone_id(s)
                .ok_or_else(|| Error::Format(format!("{utt_id}: unknown phone {s}")))
        })
        .collect()
}

/// Loads a corpus directory and checks that every referenced file exists
/// and that features, clusters and frame phones agree frame for frame.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let lexicon = read_lexicon(&dir.join(LEXICON))?;
    let records = read_manifest(&dir.join(MANIFEST))?;
    let vocab = UnitVocab::new(lexicon.cluster_count() as u32)?;
    let mut lines = Lines {
        dir: dir.to_path_buf(),
        vocab,
        units: Default::default(),
        syms: Default::default(),
    };
    let mut utterances = Vec::with_capacity(records.len());
    for r in records {
        let id = r.utt_id.as_str();
        let f = read_features(&lines.resolve(&LineRef {
            file: r.features.clone(),
            line: 0,
        })?)?;
        let clusters = lines.units(&r.clusters, id)?;
        let standard_clusters = lines.units(&r.standard_clusters, id)?;
        let frame_syms = lines.symbols(&r.frame_phones, id)?;
        let frame_phones = phone_ids(&lexicon, id, &frame_syms)?;
        let ref_syms: Vec<String> = r
            .ref_phones
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let ref_phones = phone_ids(&lexicon, id, &ref_syms)?;
        if f.dim != lexicon.feature_dim {
            return Err(Error::Format(format!(
                "{id}: feature dim {} but lexicon says {}",
                f.dim, lexicon.feature_dim
            )));
        }
        let lens = [
            f.frames,
            clusters.len(),
            standard_clusters.len(),
            frame_phones.len(),
        ];
        if lens.iter().any(|&n| n != r.frames) {
            return Err(Error::Format(format!(
                "{id}: manifest says {} frames; features {}, clusters {}, standard clusters {}, frame phones {}",
                r.frames, lens[0], lens[1], lens[2], lens[3]
            )));
        }
        utterances.push(CorpusUtt {
            utt_id: r.utt_id,
            accent: r.accent,
            features: f.data,
            clusters,
            frame_phones,
            ref_phones,
            standard_clusters,
        });
    }
    Ok(Corpus {
        lexicon,
        utterances,
    })
}

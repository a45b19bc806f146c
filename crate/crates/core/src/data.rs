//! Utterance manifests and feature loading.
//!
//! A manifest is a UTF-8 file of `id<TAB>path[<TAB>speaker]` lines. Relative
//! paths resolve against the manifest's directory. Without an explicit speaker
//! column the speaker is the id prefix before the first `-`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frontend::{logmel, read_wav, FeatureMatrix};
use crate::io::load_tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub path: PathBuf,
    pub speaker: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
}

pub fn speaker_of(id: &str) -> &str {
    id.split('-').next().unwrap_or(id)
}

impl Manifest {
    pub fn parse(text: &str, base: &Path, context: &str) -> Result<Self> {
        let mut utterances = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::format(format!("{context}:{}", n + 1), msg);
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let (id, path, speaker) = match fields[..] {
                [id, path] => (id, path, speaker_of(id)),
                [id, path, spk] => (id, path, spk),
                _ => return Err(bad("expected `id<TAB>path[<TAB>speaker]`".into())),
            };
            if id.is_empty() || path.is_empty() || speaker.is_empty() {
                return Err(bad("empty field".into()));
            }
            if !seen.insert(id.to_string()) {
                return Err(bad(format!("duplicate id `{id}`")));
            }
            let path = Path::new(path);
            utterances.push(Utterance {
                id: id.to_string(),
                path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
                speaker: speaker.to_string(),
            });
        }
        Ok(Manifest { utterances })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(ctx.clone(), e.to_string()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), &ctx)
    }

    /// Paths are written relative to `base` when possible.
    pub fn to_text(&self, base: &Path) -> String {
        self.utterances
            .iter()
            .map(|u| {
                let p = u.path.strip_prefix(base).unwrap_or(&u.path);
                if u.speaker == speaker_of(&u.id) {
                    format!("{}\t{}\n", u.id, p.display())
                } else {
                    format!("{}\t{}\t{}\n", u.id, p.display(), u.speaker)
                }
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        Ok(std::fs::write(path, self.to_text(path.parent().unwrap_or(Path::new("."))))?)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Speakers in sorted order mapped to class indices.
    pub fn speaker_index(&self) -> BTreeMap<String, usize> {
        let mut names: Vec<&str> = self.utterances.iter().map(|u| u.speaker.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect()
    }
}

/// Anything that can produce the raw (un-normalized) features of an utterance id.
pub trait FeatureSource: Sync {
    fn features(&self, id: &str) -> Result<FeatureMatrix>;
    fn contains(&self, id: &str) -> bool;
}

/// Loads `.wav` files through the log-Mel frontend and anything else as a
/// stored `[80, T]` tensor record.
pub struct ManifestSource {
    paths: HashMap<String, PathBuf>,
}

impl ManifestSource {
    pub fn new(manifest: &Manifest) -> Self {
        ManifestSource {
            paths: manifest.utterances.iter().map(|u| (u.id.clone(), u.path.clone())).collect(),
        }
    }
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        logmel(&read_wav(path)?)
    } else {
        FeatureMatrix::new(load_tensor(path)?, false)
    }
}

impl FeatureSource for ManifestSource {
    fn features(&self, id: &str) -> Result<FeatureMatrix> {
        let path = self.paths.get(id).ok_or_else(|| Error::MissingUtterances(vec![id.to_string()]))?;
        load_features(path)
    }

    fn contains(&self, id: &str) -> bool {
        self.paths.contains_key(id)
    }
}

/// In-memory features keyed by id.
#[derive(Clone, Debug, Default)]
pub struct MemorySource(pub HashMap<String, FeatureMatrix>);

impl FeatureSource for MemorySource {
    fn features(&self, id: &str) -> Result<FeatureMatrix> {
        self.0.get(id).cloned().ok_or_else(|| Error::MissingUtterances(vec![id.to_string()]))
    }

    fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }
}

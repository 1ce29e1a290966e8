//! The synthetic ambiguity dataset: on-disk layout, manifest and loading.
//!
//! Every class of an ambiguity pair shares its sentence except for one
//! polarity word, so only the emotion stream can tell the two apart.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::DataConfig;
use crate::autograd::Mat;
use crate::error::{io_err, json_err, EafError, Result};
use crate::features::extract::{sample_track, SamplingStrategy};
use crate::features::io::{densify, read_feature_file, write_feature_file, FeatureSidecar};
use crate::features::synth::{sample_seed, synthesize_raw, ClassLabel, Prototypes, StreamSpec};
use crate::features::{FeatureSequence, Modality};
use crate::pipeline::Sample;
use crate::translator::vocab::PLACEHOLDER_TOKEN;
use crate::translator::{PromptTemplate, Vocabulary};

pub const MANIFEST: &str = "manifest.json";
pub const POLARITY_WORDS: [&str; 2] = ["froh", "traurig"];
/// Index of the polarity word inside every target sentence.
pub const POLARITY_POSITION: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7a1,
            Split::Test => 0x7e5,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = EafError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(EafError::InvalidArgument(format!(
                "unknown split {other:?}"
            ))),
        }
    }
}

pub fn class_text(label: ClassLabel) -> String {
    let p = label.pair;
    format!("a{p} b{p} {} c{p} d{p}", POLARITY_WORDS[label.polarity])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: usize,
    pub pair: usize,
    pub polarity: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub name: String,
    pub class_id: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub stream: StreamSpec,
    pub spec_hash: String,
    pub classes: Vec<ClassEntry>,
    pub template: PromptTemplate,
    pub vocabulary: Vocabulary,
    pub train: Vec<SampleEntry>,
    pub test: Vec<SampleEntry>,
    /// SHA-256 over every feature file, in manifest order.
    pub content_hash: String,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> &[SampleEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// One video's streams before emotion sampling. The emotion track keeps
/// one row per frame plus the face-detection mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: ClassLabel,
    pub text: String,
    pub spatial: Mat,
    pub motion: Mat,
    pub emotion_track: Mat,
    pub face_valid: Vec<bool>,
}

impl Example {
    pub fn to_sample(
        &self,
        vocab: &Vocabulary,
        st: usize,
        strategy: SamplingStrategy,
    ) -> Result<Sample> {
        let emotion = sample_track(&self.emotion_track, &self.face_valid, st, strategy)?;
        Ok(Sample {
            spatial: self.spatial.clone(),
            motion: self.motion.clone(),
            emotion: emotion.data,
            target: vocab.encode_target(&self.text)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocabulary
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.manifest.template
    }

    pub fn samples(
        &self,
        split: Split,
        st: usize,
        strategy: SamplingStrategy,
    ) -> Result<Vec<Sample>> {
        self.split(split)
            .iter()
            .map(|e| e.to_sample(self.vocab(), st, strategy))
            .collect()
    }
}

fn spec_hash(spec: &StreamSpec) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(spec).expect("spec serialises"),
    ))
}

/// Values as stored on disk.
fn round_f32(m: &Mat) -> Mat {
    m.mapv(|v| v as f32 as f64)
}

fn build_template(n_pairs: usize) -> PromptTemplate {
    PromptTemplate {
        instruction: format!("{PLACEHOLDER_TOKEN} übersetze"),
        exemplars: (0..n_pairs.min(2))
            .map(|p| (format!("a{p} b{p}"), format!("c{p} d{p}")))
            .collect(),
    }
}

/// Generates the dataset in memory, with the same f32 rounding the files use.
pub fn synthesize_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    cfg.stream.validate()?;
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(EafError::Config(
            "each split needs at least one sample per class".into(),
        ));
    }
    let spec = StreamSpec {
        prototype_seed: seed,
        ..cfg.stream.clone()
    };
    let protos = Prototypes::new(&spec);
    let n_classes = 2 * spec.n_pairs;
    let classes: Vec<ClassEntry> = (0..n_classes)
        .map(|id| {
            let l = ClassLabel::from_class_id(id);
            ClassEntry {
                id,
                pair: l.pair,
                polarity: l.polarity,
                text: class_text(l),
            }
        })
        .collect();
    let template = build_template(spec.n_pairs);
    let mut texts: Vec<&str> = vec![template.instruction.as_str()];
    texts.extend(
        template
            .exemplars
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()]),
    );
    texts.extend(classes.iter().map(|c| c.text.as_str()));
    let vocabulary = Vocabulary::from_texts(texts);

    let make = |split: Split, per_class: usize| -> Result<(Vec<SampleEntry>, Vec<Example>)> {
        let split_seed = sample_seed(seed, split.salt());
        let mut entries = Vec::new();
        let mut examples = Vec::new();
        for _ in 0..per_class {
            for c in &classes {
                let idx = entries.len();
                let s = sample_seed(split_seed, idx as u64);
                let label = ClassLabel::from_class_id(c.id);
                let raw = synthesize_raw(&spec, &protos, label, s)?;
                entries.push(SampleEntry {
                    name: format!("{}_{idx:05}", split.as_str()),
                    class_id: c.id,
                    seed: s,
                });
                let mut emotion_track = round_f32(&raw.emotion_track);
                for (t, _) in raw.face_valid.iter().enumerate().filter(|(_, v)| !**v) {
                    emotion_track.row_mut(t).fill(0.0);
                }
                examples.push(Example {
                    label,
                    text: c.text.clone(),
                    spatial: round_f32(&raw.spatial.data),
                    motion: round_f32(&raw.motion.data),
                    emotion_track,
                    face_valid: raw.face_valid,
                });
            }
        }
        Ok((entries, examples))
    };
    let (train_entries, train) = make(Split::Train, cfg.train_per_class)?;
    let (test_entries, test) = make(Split::Test, cfg.test_per_class)?;
    Ok(Dataset {
        manifest: Manifest {
            seed,
            spec_hash: spec_hash(&spec),
            stream: spec,
            classes,
            template,
            vocabulary,
            train: train_entries,
            test: test_entries,
            content_hash: String::new(),
        },
        train,
        test,
    })
}

fn feature_paths(dir: &Path, split: Split, name: &str) -> [(Modality, PathBuf); 3] {
    let base = dir.join(split.as_str());
    [Modality::Spatial, Modality::Motion, Modality::Emotion]
        .map(|m| (m, base.join(format!("{name}.{}.feat", m.as_str()))))
}

fn sequences(ex: &Example, stride: usize) -> Result<[FeatureSequence; 3]> {
    let s_len = ex.motion.nrows();
    let t_len = ex.emotion_track.nrows();
    Ok([
        FeatureSequence::dense(Modality::Spatial, ex.spatial.clone())?,
        FeatureSequence::new(
            Modality::Motion,
            ex.motion.clone(),
            (0..s_len).map(|k| k * stride).collect(),
            vec![true; s_len],
        )?,
        FeatureSequence::new(
            Modality::Emotion,
            ex.emotion_track.clone(),
            (0..t_len).collect(),
            ex.face_valid.clone(),
        )?,
    ])
}

fn hash_files(dir: &Path, m: &Manifest) -> Result<String> {
    let mut h = Sha256::new();
    for split in [Split::Train, Split::Test] {
        for e in m.entries(split) {
            for (_, p) in feature_paths(dir, split, &e.name) {
                h.update(fs::read(&p).map_err(io_err(&p))?);
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes features, sidecars and `manifest.json` under `dir`.
pub fn generate_dataset(cfg: &DataConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let mut ds = synthesize_dataset(cfg, seed)?;
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.as_str());
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for (e, ex) in ds.manifest.entries(split).iter().zip(ds.split(split)) {
            let seqs = sequences(ex, ds.manifest.stream.stride)?;
            for ((modality, path), seq) in feature_paths(dir, split, &e.name).into_iter().zip(&seqs)
            {
                let sidecar = FeatureSidecar {
                    seed: e.seed,
                    spec_hash: ds.manifest.spec_hash.clone(),
                    modality,
                    rows: seq.valid.iter().filter(|&&v| v).count(),
                    d_feat: seq.dim(),
                };
                write_feature_file(&path, seq, &sidecar)?;
            }
        }
    }
    ds.manifest.content_hash = hash_files(dir, &ds.manifest)?;
    let path = dir.join(MANIFEST);
    let json = serde_json::to_vec_pretty(&ds.manifest).map_err(json_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(ds.manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let buf = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&buf).map_err(json_err(&path))
}

/// Reads a generated dataset back, checking the content hash.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let actual = hash_files(dir, &manifest)?;
    if actual != manifest.content_hash {
        return Err(EafError::Format {
            path: dir.join(MANIFEST),
            reason: format!(
                "content hash {actual} does not match manifest {}",
                manifest.content_hash
            ),
        });
    }
    let frames = manifest.stream.frames;
    let load = |split: Split| -> Result<Vec<Example>> {
        manifest
            .entries(split)
            .iter()
            .map(|e| {
                let [s, m, em] = feature_paths(dir, split, &e.name).map(|(_, p)| p);
                let spatial = read_feature_file(&s)?;
                let motion = read_feature_file(&m)?;
                let (emotion_track, face_valid) = densify(&read_feature_file(&em)?, frames)?;
                let class = manifest.classes.get(e.class_id).ok_or_else(|| {
                    EafError::Config(format!(
                        "sample {} has unknown class {}",
                        e.name, e.class_id
                    ))
                })?;
                Ok(Example {
                    label: ClassLabel::from_class_id(e.class_id),
                    text: class.text.clone(),
                    spatial: spatial.data,
                    motion: motion.data,
                    emotion_track,
                    face_valid,
                })
            })
            .collect()
    };
    let train = load(Split::Train)?;
    let test = load(Split::Test)?;
    Ok(Dataset {
        manifest,
        train,
        test,
    })
}

//! Manifests, batching of variable-length utterances and the synthetic
//! template-sequence task used in place of a licensed speech corpus.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::{Alphabet, LabelSequence};
use crate::error::{shape_err, Error, Result};
use crate::features::{
    assemble_input, fit_normalization, stack_channels, NormalizationStats, StatsAccumulator,
    CHANNELS,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub labels: LabelSequence,
}

/// One utterance per line: `<id>\t<feature path>\t<space-separated symbols>`.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path, alphabet: &Alphabet) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let id = fields.next().unwrap_or("").trim();
            let path = fields.next().map(str::trim).unwrap_or("");
            let labels = fields.next().unwrap_or("");
            if id.is_empty() || path.is_empty() {
                return Err(Error::Format(format!(
                    "manifest line {}: expected <id>\\t<path>\\t<labels>",
                    lineno + 1
                )));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::Format(format!("duplicate utterance id {id:?}")));
            }
            let labels = alphabet.encode(id, labels)?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: base_dir.join(path),
                labels,
            });
        }
        Ok(Manifest { entries })
    }

    /// Parses and checks that every feature file exists.
    pub fn load(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let manifest = Self::parse(&text, base, alphabet)?;
        for e in &manifest.entries {
            if !e.path.is_file() {
                return Err(Error::io(
                    &e.path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "feature file not found"),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn to_text(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.id,
                e.path.display(),
                alphabet.decode_to_string(&e.labels)
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(alphabet)).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read_static(entry: &ManifestEntry) -> Result<Tensor<f64>> {
        let t = Tensor::<f64>::read_file(&entry.path)?;
        if t.rank() != 2 {
            return Err(shape_err!(
                "{}: static features must be rank 2 [bands x frames], got {:?}",
                entry.path.display(),
                t.shape()
            ));
        }
        Ok(t)
    }

    /// Streams every feature file once, in manifest order.
    pub fn fit_stats(&self) -> Result<NormalizationStats> {
        let mut acc: Option<StatsAccumulator> = None;
        for e in &self.entries {
            let stat = Self::read_static(e)?;
            acc.get_or_insert_with(|| StatsAccumulator::new(CHANNELS, stat.dim(0)))
                .push(&stack_channels(&stat)?)?;
        }
        acc.ok_or_else(|| Error::InvalidArgument("empty training manifest".into()))?
            .finish()
    }

    pub fn load_utterances<S: Scalar>(
        &self,
        stats: &NormalizationStats,
    ) -> Result<Vec<Utterance<S>>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(Utterance {
                    id: e.id.clone(),
                    features: assemble_input(&Self::read_static(e)?, stats)?,
                    labels: e.labels.clone(),
                })
            })
            .collect()
    }
}

/// A normalized `[3 × bands × frames]` input with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance<S> {
    pub id: String,
    pub features: Tensor<S>,
    pub labels: LabelSequence,
}

impl<S: Scalar> Utterance<S> {
    pub fn frames(&self) -> usize {
        self.features.dim(2)
    }
}

/// Utterances zero-padded along time to the longest member.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub ids: Vec<String>,
    /// `[B × channels × bands × max_frames]`.
    pub features: Tensor<S>,
    pub lengths: Vec<usize>,
    pub targets: Vec<LabelSequence>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_items(items: &[&Utterance<S>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (c, b) = (first.features.dim(0), first.features.dim(1));
        if items.iter().any(|u| u.features.shape()[..2] != [c, b]) {
            return Err(shape_err!("batch members differ in channel/band geometry"));
        }
        let fmax = items.iter().map(|u| u.frames()).max().unwrap_or(1);
        let mut data = vec![S::zero(); items.len() * c * b * fmax];
        for (i, u) in items.iter().enumerate() {
            let f = u.frames();
            for (row, src) in u.features.data().chunks_exact(f).enumerate() {
                let off = (i * c * b + row) * fmax;
                data[off..off + f].copy_from_slice(src);
            }
        }
        Ok(Batch {
            ids: items.iter().map(|u| u.id.clone()).collect(),
            features: Tensor::new(vec![items.len(), c, b, fmax], data)?,
            lengths: items.iter().map(|u| u.frames()).collect(),
            targets: items.iter().map(|u| u.labels.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.dim(3)
    }

    /// Item `i` cut back to its true length.
    pub fn item(&self, i: usize) -> Tensor<S> {
        let [_, c, b, fmax] = [
            self.features.dim(0),
            self.features.dim(1),
            self.features.dim(2),
            self.features.dim(3),
        ];
        let f = self.lengths[i];
        let mut out = Vec::with_capacity(c * b * f);
        for row in 0..c * b {
            let off = (i * c * b + row) * fmax;
            out.extend_from_slice(&self.features.data()[off..off + f]);
        }
        Tensor::new(vec![c, b, f], out).expect("item geometry")
    }
}

/// Item indices per batch; shuffled when `shuffle` is set, and optionally
/// sorted by length before batching.
pub fn batch_order<R: Rng + ?Sized>(
    lengths: &[usize],
    batch_size: usize,
    rng: &mut R,
    shuffle: bool,
    sort_by_length: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    if sort_by_length {
        order.sort_by_key(|&i| lengths[i]);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn make_batches<S: Scalar, R: Rng + ?Sized>(
    items: &[Utterance<S>],
    batch_size: usize,
    rng: &mut R,
    shuffle: bool,
) -> Result<Vec<Batch<S>>> {
    let lengths: Vec<usize> = items.iter().map(Utterance::frames).collect();
    batch_order(&lengths, batch_size, rng, shuffle, false)?
        .iter()
        .map(|idx| Batch::from_items(&idx.iter().map(|&i| &items[i]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Each symbol is a fixed random band pattern held for 3 to 10 frames, with
/// short silences between symbols and Gaussian noise on every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub symbols: usize,
    pub bands: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise_std: f64,
    pub counts: SplitCounts,
    pub seed: u64,
}

pub const MIN_SEGMENT: usize = 3;
pub const MAX_SEGMENT: usize = 10;
const MAX_GAP: usize = 2;

impl SyntheticTask {
    fn validate(&self) -> Result<()> {
        if self.symbols == 0 || self.bands == 0 {
            return Err(Error::InvalidArgument(
                "synthetic task needs symbols and bands".into(),
            ));
        }
        if self.min_frames < MIN_SEGMENT || self.max_frames < self.min_frames {
            return Err(Error::InvalidArgument(format!(
                "frame range [{}, {}] must start at {MIN_SEGMENT} or more",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_std must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub id: String,
    /// `[bands × frames]`.
    pub features: Tensor<f64>,
    pub labels: LabelSequence,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub alphabet: Alphabet,
    /// `[symbols × bands]`; row `s - 1` renders symbol `s`.
    pub templates: Tensor<f64>,
    pub train: Vec<SyntheticUtterance>,
    pub dev: Vec<SyntheticUtterance>,
    pub test: Vec<SyntheticUtterance>,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> &[SyntheticUtterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Statistics fitted on the training split, as the file-based path does.
    pub fn fit_stats(&self) -> Result<NormalizationStats> {
        fit_normalization(self.train.iter().map(|u| &u.features))
    }

    /// Normalized network inputs for one split.
    pub fn utterances<S: Scalar>(
        &self,
        split: Split,
        stats: &NormalizationStats,
    ) -> Result<Vec<Utterance<S>>> {
        self.split(split)
            .iter()
            .map(|u| {
                Ok(Utterance {
                    id: u.id.clone(),
                    features: assemble_input(&u.features, stats)?,
                    labels: u.labels.clone(),
                })
            })
            .collect()
    }
}

pub fn generate_synthetic(task: &SyntheticTask) -> Result<SyntheticCorpus> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let alphabet = Alphabet::new((1..=task.symbols).map(|i| format!("s{i}")))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let templates = Tensor::from_fn(&[task.symbols, task.bands], |_| unit.sample(&mut rng));
    let mut splits = Vec::new();
    for split in Split::ALL {
        let utts = (0..task.counts.get(split))
            .map(|i| synth_utterance(task, &templates, &mut rng, format!("{split}_{i:05}")))
            .collect::<Result<Vec<_>>>()?;
        splits.push(utts);
    }
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(SyntheticCorpus {
        alphabet,
        templates,
        train,
        dev,
        test,
    })
}

fn synth_utterance(
    task: &SyntheticTask,
    templates: &Tensor<f64>,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<SyntheticUtterance> {
    let frames = rng.gen_range(task.min_frames..=task.max_frames);
    // Frame-wise symbol (0 = silence).
    let mut timeline = Vec::with_capacity(frames);
    let lead = rng.gen_range(0..=MAX_GAP.min(frames - MIN_SEGMENT));
    timeline.resize(lead, 0);
    let mut labels = Vec::new();
    loop {
        let sym = rng.gen_range(1..=task.symbols);
        let gap = if labels.is_empty() {
            0
        } else {
            let min_gap = usize::from(labels.last() == Some(&sym));
            rng.gen_range(min_gap..=MAX_GAP.max(min_gap))
        };
        let dur = rng.gen_range(MIN_SEGMENT..=MAX_SEGMENT);
        let room = frames - timeline.len();
        let dur = if labels.is_empty() {
            dur.min(room)
        } else {
            dur
        };
        if gap + dur > room {
            break;
        }
        timeline.resize(timeline.len() + gap, 0);
        timeline.resize(timeline.len() + dur, sym);
        labels.push(sym);
    }
    timeline.resize(frames, 0);

    let labels = LabelSequence::new(labels, task.symbols + 1)?;
    debug_assert!(labels.min_frames() <= frames);
    let b = task.bands;
    let mut data = vec![0.0; b * frames];
    let noise = (task.noise_std > 0.0).then(|| Normal::new(0.0, task.noise_std).expect("noise"));
    for (t, &sym) in timeline.iter().enumerate() {
        for band in 0..b {
            let clean = if sym == 0 {
                0.0
            } else {
                templates.data()[(sym - 1) * b + band]
            };
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            data[band * frames + t] = clean + n;
        }
    }
    Ok(SyntheticUtterance {
        id,
        features: Tensor::new(vec![b, frames], data)?,
        labels,
    })
}

/// Files written by [`write_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticLayout {
    pub alphabet: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl SyntheticLayout {
    pub fn manifest(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Writes `alphabet.txt`, `task.json`, `{train,dev,test}.tsv` and
/// `feats/<id>.tnsr` under `dir`.
pub fn write_synthetic(task: &SyntheticTask, dir: impl AsRef<Path>) -> Result<SyntheticLayout> {
    let dir = dir.as_ref();
    let corpus = generate_synthetic(task)?;
    let feats = dir.join("feats");
    std::fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let alphabet = dir.join("alphabet.txt");
    corpus.alphabet.save(&alphabet)?;
    let task_path = dir.join("task.json");
    std::fs::write(&task_path, serde_json::to_string_pretty(task)?)
        .map_err(|e| Error::io(&task_path, e))?;
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let mut text = String::new();
        for u in corpus.split(split) {
            let rel = format!("feats/{}.tnsr", u.id);
            u.features.write_file(dir.join(&rel))?;
            text.push_str(&format!(
                "{}\t{}\t{}\n",
                u.id,
                rel,
                corpus.alphabet.decode_to_string(&u.labels)
            ));
        }
        let path = dir.join(format!("{split}.tsv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        manifests.push(path);
    }
    let test = manifests.pop().unwrap();
    let dev = manifests.pop().unwrap();
    let train = manifests.pop().unwrap();
    Ok(SyntheticLayout {
        alphabet,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_loss;
    use crate::layers::log_softmax_frames;

    fn task(seed: u64, symbols: usize, noise: f64) -> SyntheticTask {
        SyntheticTask {
            symbols,
            bands: 6,
            min_frames: 8,
            max_frames: 40,
            noise_std: noise,
            counts: SplitCounts {
                train: 30,
                dev: 5,
                test: 5,
            },
            seed,
        }
    }

    fn utt(id: &str, frames: usize) -> Utterance<f64> {
        Utterance {
            id: id.into(),
            features: Tensor::from_fn(&[3, 2, frames], |i| i as f64 + 1.0),
            labels: LabelSequence::empty(),
        }
    }

    #[test]
    fn batch_sizes() {
        let items: Vec<_> = (0..45).map(|i| utt(&format!("u{i}"), 1 + i % 4)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = make_batches(&items, 20, &mut rng, true).unwrap();
        assert_eq!(
            batches.iter().map(Batch::len).collect::<Vec<_>>(),
            vec![20, 20, 5]
        );
        let mut ids: Vec<String> = batches.iter().flat_map(|b| b.ids.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 45);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let again = make_batches(&items, 20, &mut rng, true).unwrap();
        for (a, b) in batches.iter().zip(&again) {
            assert_eq!(a.ids, b.ids);
        }
        assert!(make_batches(&items, 0, &mut rng, true).is_err());
    }

    #[test]
    fn padding_is_zero_and_items_roundtrip() {
        let items = [utt("a", 2), utt("b", 5)];
        let b = Batch::from_items(&[&items[0], &items[1]]).unwrap();
        assert_eq!(b.features.shape(), &[2, 3, 2, 5]);
        assert_eq!(b.item(0), items[0].features);
        assert_eq!(b.item(1), items[1].features);
        for row in 0..6 {
            let off = row * 5;
            assert!(b.features.data()[off + 2..off + 5]
                .iter()
                .all(|&v| v == 0.0));
        }
        assert!(b.lengths.iter().all(|&l| l <= b.max_frames()));
    }

    #[test]
    fn padded_loss_equals_unpadded() {
        let logits = Tensor::<f64>::from_fn(&[3, 7], |i| ((i * 13) % 5) as f64 * 0.4);
        let padded = log_softmax_frames(&logits).unwrap();
        let short = Tensor::from_fn(&[3, 4], |i| padded.data()[(i / 4) * 7 + i % 4]);
        let target = [1, 2];
        let a = crate::ctc::ctc_loss_with_length(&padded, 4, &target).unwrap();
        let b = ctc_loss(&short, &target).unwrap();
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn manifest_parse_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let alphabet = Alphabet::new(["a", "b"]).unwrap();
        Tensor::<f64>::zeros(&[2, 3])
            .write_file(dir.path().join("x.tnsr"))
            .unwrap();
        let empty = dir.path().join("empty.tsv");
        std::fs::write(&empty, "").unwrap();
        assert!(Manifest::load(&empty, &alphabet).unwrap().is_empty());

        let good = dir.path().join("m.tsv");
        std::fs::write(&good, "u1\tx.tnsr\ta b a\nu2\tx.tnsr\t\n").unwrap();
        let m = Manifest::load(&good, &alphabet).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(&*m.entries[0].labels, &[1, 2, 1]);
        assert!(m.entries[1].labels.is_empty());
        let again = dir.path().join("again.tsv");
        m.save(&again, &alphabet).unwrap();
        assert_eq!(Manifest::load(&again, &alphabet).unwrap(), m);

        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "u1\tx.tnsr\ta zz\n").unwrap();
        let err = Manifest::load(&bad, &alphabet).unwrap_err();
        assert!(
            err.to_string().contains("zz") && err.to_string().contains("u1"),
            "{err}"
        );

        let missing = dir.path().join("missing.tsv");
        std::fs::write(&missing, "u1\tnope.tnsr\ta\n").unwrap();
        let err = Manifest::load(&missing, &alphabet).unwrap_err();
        assert!(err.to_string().contains("nope.tnsr"), "{err}");

        let dup = dir.path().join("dup.tsv");
        std::fs::write(&dup, "u1\tx.tnsr\ta\nu1\tx.tnsr\tb\n").unwrap();
        assert!(Manifest::load(&dup, &alphabet).is_err());
    }

    #[test]
    fn synthetic_rejects_degenerate() {
        assert!(generate_synthetic(&task(0, 0, 0.0)).is_err());
        let mut t = task(0, 2, 0.0);
        t.min_frames = 2;
        assert!(generate_synthetic(&t).is_err());
    }

    #[test]
    fn synthetic_targets_are_feasible() {
        for seed in 0..20 {
            for symbols in [1, 2, 5] {
                let c = generate_synthetic(&task(seed, symbols, 0.3)).unwrap();
                for split in Split::ALL {
                    for u in c.split(split) {
                        let frames = u.features.dim(1);
                        assert!((8..=40).contains(&frames));
                        assert!(!u.labels.is_empty());
                        assert!(
                            u.labels.min_frames() <= frames,
                            "{}: {:?} in {frames}",
                            u.id,
                            u.labels
                        );
                    }
                }
            }
        }
    }

    /// With no noise every frame equals a template or silence exactly, so
    /// nearest-template labelling plus collapse recovers the labels.
    #[test]
    fn noiseless_single_symbol_is_template_decodable() {
        let c = generate_synthetic(&task(4, 1, 0.0)).unwrap();
        let b = 6;
        for u in &c.train {
            let frames = u.features.dim(1);
            let path: Vec<usize> = (0..frames)
                .map(|t| {
                    let col: Vec<f64> = (0..b).map(|k| u.features.data()[k * frames + t]).collect();
                    usize::from(col.iter().zip(c.templates.data()).all(|(x, y)| x == y))
                })
                .collect();
            assert_eq!(crate::ctc::collapse(&path, 2).unwrap(), u.labels);
        }
    }

    #[test]
    fn synthetic_files_are_deterministic() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let l1 = write_synthetic(&task(7, 3, 0.1), d1.path()).unwrap();
        write_synthetic(&task(7, 3, 0.1), d2.path()).unwrap();
        for entry in std::fs::read_dir(d1.path().join("feats")).unwrap() {
            let p = entry.unwrap().path();
            let q = d2.path().join("feats").join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        }
        let alphabet = Alphabet::load(&l1.alphabet).unwrap();
        let m = Manifest::load(&l1.train, &alphabet).unwrap();
        assert_eq!(m.len(), 30);
        let stats = m.fit_stats().unwrap();
        let utts: Vec<Utterance<f32>> = m.load_utterances(&stats).unwrap();
        assert_eq!(utts[0].features.dim(0), 3);
        assert_eq!(utts[0].features.dim(1), 6);
    }
}

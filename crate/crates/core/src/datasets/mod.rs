//! Dataset domains, class-disjoint train/novel splits and preprocessing.

pub mod batch;
pub mod cache;
pub mod idx;
pub mod letters;
pub mod pairs;
pub mod preprocess;
pub mod sources;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{denormalize_u8, normalize_u8, Image, ImageBatch, ImageShape};
pub use pairs::PairStream;
pub use preprocess::{FramingMode, PreprocessSpec, RawImage};

use crate::error::{Error, Result};
use letters::{generate_letters, LetterStyle, LETTER_CLASSES, LETTER_NAMES};
use sources::{find_file, load_cifar_bin, load_files, load_idx_pair, parse_celeba_attributes};

pub const DATA_DIR_ENV: &str = "AUGINT_DATA_DIR";
pub const CACHE_DIR_ENV: &str = "AUGINT_CACHE_DIR";

/// Directory holding data files shipped with the repository.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitId {
    MnistTrain,
    MnistTest,
    EmnistLetters,
    EmnistLettersTest,
    EmnistBymergeLetters,
    EmnistBymergeLettersTest,
    OmniglotTrain,
    OmniglotTest,
    CelebaMale,
    CelebaFemale,
    Cifar10,
    Cifar100,
    /// First 9,000 images of the bundled 10k MNIST sample.
    MnistSampleTrain,
    /// Last 1,000 images of the bundled 10k MNIST sample.
    MnistSampleTest,
    /// Procedural handwritten letters, 37 ByMerge letter classes.
    SynthLettersTrain,
    SynthLettersTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    /// Training domain X with classes C.
    Train,
    /// Novel domain X' with classes c' outside C.
    Novel,
}

impl SplitId {
    pub const ALL: [SplitId; 16] = [
        SplitId::MnistTrain,
        SplitId::MnistTest,
        SplitId::EmnistLetters,
        SplitId::EmnistLettersTest,
        SplitId::EmnistBymergeLetters,
        SplitId::EmnistBymergeLettersTest,
        SplitId::OmniglotTrain,
        SplitId::OmniglotTest,
        SplitId::CelebaMale,
        SplitId::CelebaFemale,
        SplitId::Cifar10,
        SplitId::Cifar100,
        SplitId::MnistSampleTrain,
        SplitId::MnistSampleTest,
        SplitId::SynthLettersTrain,
        SplitId::SynthLettersTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitId::MnistTrain => "mnist-train",
            SplitId::MnistTest => "mnist-test",
            SplitId::EmnistLetters => "emnist-letters",
            SplitId::EmnistLettersTest => "emnist-letters-test",
            SplitId::EmnistBymergeLetters => "emnist-bymerge-letters",
            SplitId::EmnistBymergeLettersTest => "emnist-bymerge-letters-test",
            SplitId::OmniglotTrain => "omniglot-train",
            SplitId::OmniglotTest => "omniglot-test",
            SplitId::CelebaMale => "celeba-male",
            SplitId::CelebaFemale => "celeba-female",
            SplitId::Cifar10 => "cifar10",
            SplitId::Cifar100 => "cifar100",
            SplitId::MnistSampleTrain => "mnist-sample-train",
            SplitId::MnistSampleTest => "mnist-sample-test",
            SplitId::SynthLettersTrain => "synth-letters-train",
            SplitId::SynthLettersTest => "synth-letters-test",
        }
    }

    pub fn role(self) -> SplitRole {
        use SplitId::*;
        match self {
            MnistTrain | MnistTest | OmniglotTrain | CelebaMale | Cifar10 | MnistSampleTrain
            | MnistSampleTest => SplitRole::Train,
            _ => SplitRole::Novel,
        }
    }

    /// The split on the other side of the class-disjoint experiment pair.
    pub fn paired(self) -> SplitId {
        use SplitId::*;
        match self {
            MnistTrain | MnistTest => EmnistLetters,
            EmnistLetters | EmnistLettersTest | EmnistBymergeLetters | EmnistBymergeLettersTest => MnistTrain,
            OmniglotTrain => OmniglotTest,
            OmniglotTest => OmniglotTrain,
            CelebaMale => CelebaFemale,
            CelebaFemale => CelebaMale,
            Cifar10 => Cifar100,
            Cifar100 => Cifar10,
            MnistSampleTrain | MnistSampleTest => SynthLettersTrain,
            SynthLettersTrain | SynthLettersTest => MnistSampleTrain,
        }
    }

    /// Held-out split used when evaluating on this split's domain; splits
    /// without a separate test set map to themselves.
    pub fn test_split(self) -> SplitId {
        use SplitId::*;
        match self {
            MnistTrain => MnistTest,
            EmnistLetters => EmnistLettersTest,
            EmnistBymergeLetters => EmnistBymergeLettersTest,
            MnistSampleTrain => MnistSampleTest,
            SynthLettersTrain => SynthLettersTest,
            other => other,
        }
    }

    pub fn preprocess_spec(self) -> PreprocessSpec {
        use SplitId::*;
        match self {
            OmniglotTrain | OmniglotTest => PreprocessSpec::omniglot(),
            CelebaMale | CelebaFemale => PreprocessSpec::celeba(),
            Cifar10 | Cifar100 => PreprocessSpec::cifar(),
            _ => PreprocessSpec::handwritten(),
        }
    }

    /// Image count of the full published split, where it is fixed.
    pub fn expected_count(self) -> Option<usize> {
        use SplitId::*;
        match self {
            MnistTrain => Some(60_000),
            MnistTest => Some(10_000),
            EmnistLetters => Some(124_800),
            EmnistLettersTest => Some(20_800),
            OmniglotTrain => Some(19_280),
            OmniglotTest => Some(13_180),
            Cifar10 | Cifar100 => Some(50_000),
            MnistSampleTrain => Some(9_000),
            MnistSampleTest => Some(1_000),
            SynthLettersTrain => Some(SYNTH_TRAIN_PER_CLASS * LETTER_CLASSES),
            SynthLettersTest => Some(SYNTH_TEST_PER_CLASS * LETTER_CLASSES),
            _ => None,
        }
    }

    fn download_instructions(self) -> &'static str {
        use SplitId::*;
        match self {
            MnistTrain | MnistTest => {
                "place train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz], t10k-images-idx3-ubyte[.gz] and t10k-labels-idx1-ubyte[.gz] from http://yann.lecun.com/exdb/mnist/ in <data>/mnist/"
            }
            EmnistLetters | EmnistLettersTest | EmnistBymergeLetters | EmnistBymergeLettersTest => {
                "download gzip.zip from https://www.nist.gov/itl/products-and-services/emnist-dataset and extract the emnist-letters-* and emnist-bymerge-* IDX files into <data>/emnist/"
            }
            OmniglotTrain | OmniglotTest => {
                "extract images_background.zip and images_evaluation.zip from https://github.com/brendenlake/omniglot into <data>/omniglot/"
            }
            CelebaMale | CelebaFemale => {
                "download img_align_celeba/ and list_attr_celeba.txt from https://mmlab.ie.cuhk.edu.hk/projects/CelebA.html into <data>/celeba/"
            }
            Cifar10 => "extract cifar-10-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html into <data>/ (cifar-10-batches-bin/)",
            Cifar100 => "extract cifar-100-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html into <data>/ (cifar-100-binary/)",
            MnistSampleTrain | MnistSampleTest => "the bundled sample lives in data/mnist-sample/ of the repository",
            SynthLettersTrain | SynthLettersTest => "generated on demand",
        }
    }
}

impl fmt::Display for SplitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::UnknownSplit(s.to_string()))
    }
}

pub const SYNTH_TRAIN_PER_CLASS: usize = 300;
pub const SYNTH_TEST_PER_CLASS: usize = 60;
const SYNTH_TRAIN_SEED: u64 = 0x1e77_e125;
const SYNTH_TEST_SEED: u64 = 0x1e77_7e57;

/// Metadata of one side of a class-disjoint experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSplit {
    pub id: SplitId,
    pub role: SplitRole,
    /// Namespaced class identifiers, e.g. `digit:3` or `letter:A`.
    pub class_ids: BTreeSet<String>,
    pub shape: ImageShape,
    pub paired_with: SplitId,
}

impl DomainSplit {
    pub fn is_disjoint_from(&self, other: &DomainSplit) -> bool {
        self.class_ids.is_disjoint(&other.class_ids)
    }
}

/// Class namespace for each split, used to verify train/novel disjointness.
pub fn class_ids(id: SplitId, label_names: &[String]) -> BTreeSet<String> {
    use SplitId::*;
    match id {
        MnistTrain | MnistTest | MnistSampleTrain | MnistSampleTest => {
            (0..10).map(|d| format!("digit:{d}")).collect()
        }
        EmnistLetters | EmnistLettersTest => (b'A'..=b'Z').map(|c| format!("letter:{}", c as char)).collect(),
        EmnistBymergeLetters | EmnistBymergeLettersTest | SynthLettersTrain | SynthLettersTest => {
            LETTER_NAMES.iter().map(|c| format!("letter:{c}")).collect()
        }
        CelebaMale => ["face:male".to_string()].into(),
        CelebaFemale => ["face:female".to_string()].into(),
        Cifar10 => sources::CIFAR10_CLASSES.iter().map(|c| format!("cifar10:{c}")).collect(),
        Cifar100 => (0..100).map(|c| format!("cifar100:{c}")).collect(),
        OmniglotTrain | OmniglotTest => label_names.iter().map(|c| format!("omniglot:{c}")).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataConfig {
    pub data_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Keep only the first `limit` images of a split.
    pub limit: Option<usize>,
}

impl DataConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            cache_dir: None,
            limit: None,
        }
    }

    /// Reads `AUGINT_DATA_DIR` (default `./data`) and `AUGINT_CACHE_DIR`.
    pub fn from_env() -> Self {
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data")),
            cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
            limit: None,
        }
    }

    pub fn with_limit(mut self, limit: Option<usize>) -> Self {
        self.limit = limit;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub split: DomainSplit,
    pub images: ImageBatch,
    /// Files that could not be decoded and were skipped.
    pub skipped: usize,
}

impl LoadedSplit {
    /// Yields consecutive batches of at most `batch_size` images.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = ImageBatch> + '_ {
        let n = self.images.len();
        (0..n)
            .step_by(batch_size.max(1))
            .map(move |s| self.images.slice(s, (s + batch_size).min(n)))
    }
}

fn missing(id: SplitId, dir: &Path) -> Error {
    Error::MissingData {
        split: id.name().to_string(),
        dir: dir.to_path_buf(),
        instructions: id.download_instructions().to_string(),
    }
}

fn require(id: SplitId, dir: &Path, name: &str) -> Result<PathBuf> {
    find_file(dir, name).ok_or_else(|| missing(id, dir))
}

/// Loads and preprocesses a named split.
pub fn load_split(name: &str, cfg: &DataConfig) -> Result<LoadedSplit> {
    let id: SplitId = name.parse()?;
    load_split_id(id, cfg)
}

pub fn load_split_id(id: SplitId, cfg: &DataConfig) -> Result<LoadedSplit> {
    let spec = id.preprocess_spec();
    let cache_path = cfg
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("{}-{}-{}.augcache", id.name(), spec.digest(), cfg.limit.unwrap_or(0))));
    let mut names = Vec::new();
    let (images, skipped) = match cache_path.as_ref().filter(|p| p.exists()) {
        Some(p) => match cache::read_cache(p, &spec.digest())? {
            Some(b) => (b, 0),
            None => load_raw(id, cfg, &spec, &mut names)?,
        },
        None => load_raw(id, cfg, &spec, &mut names)?,
    };
    if let Some(p) = &cache_path {
        if !p.exists() && !matches!(id, SplitId::OmniglotTrain | SplitId::OmniglotTest) {
            cache::write_cache(p, &images, &spec.digest())?;
        }
    }
    if let (Some(expected), None) = (id.expected_count(), cfg.limit) {
        if images.len() + skipped != expected {
            tracing::warn!(split = id.name(), found = images.len(), expected, "unexpected image count");
        }
    }
    let split = DomainSplit {
        id,
        role: id.role(),
        class_ids: class_ids(id, &names),
        shape: spec.target,
        paired_with: id.paired(),
    };
    Ok(LoadedSplit { split, images, skipped })
}

fn truncate(b: ImageBatch, limit: Option<usize>) -> ImageBatch {
    match limit {
        Some(l) if l < b.len() => b.slice(0, l),
        _ => b,
    }
}

fn load_raw(
    id: SplitId,
    cfg: &DataConfig,
    spec: &PreprocessSpec,
    class_names: &mut Vec<String>,
) -> Result<(ImageBatch, usize)> {
    use SplitId::*;
    let root = &cfg.data_dir;
    let out = match id {
        MnistTrain | MnistTest => {
            let dir = root.join("mnist");
            let prefix = if id == MnistTrain { "train" } else { "t10k" };
            let imgs = require(id, &dir, &format!("{prefix}-images-idx3-ubyte"))?;
            let labs = require(id, &dir, &format!("{prefix}-labels-idx1-ubyte"))?;
            (truncate(load_idx_pair(&imgs, &labs, false)?.0, cfg.limit), 0)
        }
        EmnistLetters | EmnistLettersTest => {
            let dir = root.join("emnist");
            let part = if id == EmnistLetters { "train" } else { "test" };
            let imgs = require(id, &dir, &format!("emnist-letters-{part}-images-idx3-ubyte"))?;
            let labs = require(id, &dir, &format!("emnist-letters-{part}-labels-idx1-ubyte"))?;
            let (b, labels) = load_idx_pair(&imgs, &labs, true)?;
            // Letters labels are 1..=26; shift to 0-based.
            let labels = labels.into_iter().map(|l| l.saturating_sub(1)).collect();
            (truncate(b.with_labels(Some(labels))?, cfg.limit), 0)
        }
        EmnistBymergeLetters | EmnistBymergeLettersTest => {
            let dir = root.join("emnist");
            let part = if id == EmnistBymergeLetters { "train" } else { "test" };
            let imgs = require(id, &dir, &format!("emnist-bymerge-{part}-images-idx3-ubyte"))?;
            let labs = require(id, &dir, &format!("emnist-bymerge-{part}-labels-idx1-ubyte"))?;
            let (b, labels) = load_idx_pair(&imgs, &labs, true)?;
            // Keep the 37 letter classes (ByMerge labels 10..=46).
            let keep: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l >= 10).map(|(i, _)| i).collect();
            let letters = b.select(&keep);
            let shifted = keep.iter().map(|&i| labels[i] - 10).collect();
            (truncate(letters.with_labels(Some(shifted))?, cfg.limit), 0)
        }
        MnistSampleTrain | MnistSampleTest => {
            let mut dir = root.join("mnist-sample");
            if find_file(&dir, "images-idx3-ubyte").is_none() {
                dir = bundled_data_dir().join("mnist-sample");
            }
            let imgs = require(id, &dir, "images-idx3-ubyte")?;
            let labs = require(id, &dir, "labels-idx1-ubyte")?;
            let (b, _) = load_idx_pair(&imgs, &labs, false)?;
            let split = 9_000.min(b.len());
            let part = if id == MnistSampleTrain { b.slice(0, split) } else { b.slice(split, b.len()) };
            (truncate(part, cfg.limit), 0)
        }
        SynthLettersTrain | SynthLettersTest => {
            let (per_class, seed) = if id == SynthLettersTrain {
                (SYNTH_TRAIN_PER_CLASS, SYNTH_TRAIN_SEED)
            } else {
                (SYNTH_TEST_PER_CLASS, SYNTH_TEST_SEED)
            };
            let per_class = cfg.limit.map_or(per_class, |l| per_class.min(l.div_ceil(LETTER_CLASSES)));
            (truncate(generate_letters(per_class, seed, &LetterStyle::default()), cfg.limit), 0)
        }
        Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let files = (1..=5)
                .map(|i| require(id, &dir, &format!("data_batch_{i}.bin")))
                .collect::<Result<Vec<_>>>()?;
            (truncate(load_cifar_bin(&files, 1, spec)?, cfg.limit), 0)
        }
        Cifar100 => {
            let dir = root.join("cifar-100-binary");
            let f = require(id, &dir, "train.bin")?;
            (truncate(load_cifar_bin(&[f], 2, spec)?, cfg.limit), 0)
        }
        CelebaMale | CelebaFemale => {
            let dir = root.join("celeba");
            let attrs = require(id, &dir, "list_attr_celeba.txt")?;
            let img_dir = dir.join("img_align_celeba");
            if !img_dir.is_dir() {
                return Err(missing(id, &dir));
            }
            let text = std::fs::read_to_string(attrs)?;
            let want_male = id == CelebaMale;
            let mut files: Vec<PathBuf> = parse_celeba_attributes(&text, "Male")?
                .into_iter()
                .filter(|(_, male)| *male == want_male)
                .map(|(f, _)| img_dir.join(f))
                .collect();
            if let Some(l) = cfg.limit {
                files.truncate(l);
            }
            let (images, skipped) = load_files(&files, spec);
            let n = images.len();
            let label = if want_male { 0 } else { 1 };
            (ImageBatch::from_images(spec.target, &images, Some(vec![label; n]))?, skipped)
        }
        OmniglotTrain | OmniglotTest => {
            let sub = if id == OmniglotTrain { "images_background" } else { "images_evaluation" };
            let dir = root.join("omniglot").join(sub);
            if !dir.is_dir() {
                return Err(missing(id, &root.join("omniglot")));
            }
            let (b, report) = sources::load_image_folder(&dir, spec)?;
            *class_names = report.class_names;
            (truncate(b, cfg.limit), report.skipped)
        }
    };
    Ok(out)
}

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::{load_grayscale, save_grayscale, BitDepth};
use super::phantom::synthesize_phantom;
use super::resample::{downsample, ResampleMethod};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MANIFEST_MAGIC: &str = "#fpsr-manifest";

/// One low/high-resolution training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub lr: Tensor,
    pub hr: Tensor,
}

impl ImagePair {
    /// Builds a pair by downsampling `hr` (1×1×s×s) by `scale`.
    pub fn from_hr(id: impl Into<String>, hr: Tensor, scale: usize, method: ResampleMethod) -> Result<Self> {
        let [_, _, h, w] = hr.dims4()?;
        if h % (2 * scale) != 0 || w % (2 * scale) != 0 {
            return Err(Error::Data(format!(
                "HR side {h}x{w} must be divisible by 2 × scale = {}",
                2 * scale
            )));
        }
        let lr = downsample(&hr, scale, method)?;
        Ok(Self {
            id: id.into(),
            lr,
            hr,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub split: Split,
}

/// Tab-separated index of a prepared dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub scale: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC}\tscale={}\tseed={}\n", self.scale, self.seed);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                e.hr_path.display(),
                e.lr_path.display(),
                e.split
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty manifest".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(MANIFEST_MAGIC) {
            return Err(Error::Data("missing manifest header".into()));
        }
        let (mut scale, mut seed) = (None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("scale", v)) => scale = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(Error::Data(format!("bad manifest header field {f:?}"))),
            }
        }
        let (Some(scale), Some(seed)) = (scale, seed) else {
            return Err(Error::Data("manifest header needs scale and seed".into()));
        };
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, hr, lr, split] = cols[..] else {
                return Err(Error::Data(format!("manifest line {} has {} fields", n + 2, cols.len())));
            };
            entries.push(ManifestEntry {
                id: id.to_string(),
                hr_path: hr.into(),
                lr_path: lr.into(),
                split: split.parse()?,
            });
        }
        let manifest = Self {
            scale,
            seed,
            entries,
            root: root.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate id {} in manifest", w[0])));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every pair of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<ImagePair>> {
        self.split(split)
            .map(|e| {
                let hr = load_grayscale(self.root.join(&e.hr_path))?;
                let lr = load_grayscale(self.root.join(&e.lr_path))?;
                let ([_, _, hh, hw], [_, _, lh, lw]) = (hr.dims4()?, lr.dims4()?);
                if hh != lh * self.scale || hw != lw * self.scale {
                    return Err(Error::Data(format!(
                        "{}: HR {hh}x{hw} is not {}× LR {lh}x{lw}",
                        e.id, self.scale
                    )));
                }
                Ok(ImagePair {
                    id: e.id.clone(),
                    lr,
                    hr,
                })
            })
            .collect()
    }
}

/// Centered `size`×`size` window, offset `floor((dim − size) / 2)`.
pub fn center_crop(image: &Tensor, size: usize) -> Result<Tensor> {
    let [n, c, h, w] = image.dims4()?;
    if size == 0 || size > h || size > w {
        return Err(Error::Data(format!("cannot crop {size}x{size} from {h}x{w}")));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut out = Vec::with_capacity(n * c * size * size);
    for plane in image.data().chunks_exact(h * w) {
        for r in top..top + size {
            out.extend_from_slice(&plane[r * w + left..r * w + left + size]);
        }
    }
    Tensor::new(&[n, c, size, size], out)
}

/// Where source slices come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// `count` synthetic phantoms.
    Phantoms(usize),
    /// Every `.png` / `.pgm` file in a directory.
    Directory(PathBuf),
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("phantom:") {
            Some(n) => n
                .parse()
                .map(Source::Phantoms)
                .map_err(|_| Error::Config(format!("bad phantom count in {s:?}"))),
            None => Ok(Source::Directory(s.into())),
        }
    }
}

/// Fractions of the dataset assigned to train/val/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl Default for SplitFractions {
    fn default() -> Self {
        Self([0.8, 0.1, 0.1])
    }
}

impl SplitFractions {
    /// Counts for `total` items: val and test rounded, the rest train.
    pub fn counts(&self, total: usize) -> Result<[usize; 3]> {
        if self.0.iter().any(|f| !(*f >= 0.0)) || (self.0.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split fractions {:?} must be ≥ 0 and sum to 1", self.0)));
        }
        let val = (total as f64 * self.0[1]).round() as usize;
        let test = (total as f64 * self.0[2]).round() as usize;
        if val + test > total {
            return Err(Error::Config("split fractions leave no room for training".into()));
        }
        Ok([total - val - test, val, test])
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub source: Source,
    pub scale: usize,
    pub crop: usize,
    pub splits: SplitFractions,
    pub seed: u64,
    pub method: ResampleMethod,
}

/// Side at which phantoms are synthesized before cropping (5/4 of the crop,
/// rounded to even).
pub fn phantom_source_size(crop: usize) -> usize {
    (crop * 5 / 4 + 1) & !1
}

/// Loads or synthesizes all source slices, sorted by id.
fn collect_sources(spec: &DatasetSpec) -> Result<Vec<(String, Tensor)>> {
    match &spec.source {
        Source::Phantoms(count) => {
            if *count == 0 {
                return Err(Error::Data("phantom count must be positive".into()));
            }
            (0..*count)
                .map(|i| {
                    let img = synthesize_phantom(
                        spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                        phantom_source_size(spec.crop),
                    )?;
                    Ok((format!("phantom_{i:04}"), img))
                })
                .collect()
        }
        Source::Directory(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Data(format!("no PNG or PGM images in {}", dir.display())));
            }
            files
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| Error::Data(format!("bad file name {}", p.display())))?
                        .to_string();
                    Ok((id, load_grayscale(p)?))
                })
                .collect()
        }
    }
}

/// Crops and downsamples every source into pairs, assigning splits by a
/// seeded shuffle. Returned pairs are sorted by id.
pub fn build_pairs(spec: &DatasetSpec) -> Result<Vec<(ImagePair, Split)>> {
    if spec.crop % (2 * spec.scale) != 0 {
        return Err(Error::Config(format!(
            "crop {} must be divisible by 2 × scale {}",
            spec.crop, spec.scale
        )));
    }
    let sources = collect_sources(spec)?;
    let mut pairs = Vec::with_capacity(sources.len());
    for (id, img) in sources {
        let hr = center_crop(&img, spec.crop)?;
        pairs.push(ImagePair::from_hr(id, hr, spec.scale, spec.method)?);
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = pairs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Data(format!("duplicate id {}", w[0].id)));
    }
    let [n_train, n_val, _] = spec.splits.counts(pairs.len())?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut splits = vec![Split::Test; pairs.len()];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(pairs.into_iter().zip(splits).collect())
}

/// Writes `hr/<id>.png`, `lr/<id>.png` (16-bit) and `manifest.tsv` under `out`.
pub fn build_dataset(spec: &DatasetSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let pairs = build_pairs(spec)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (pair, split) in &pairs {
        let hr_path = PathBuf::from("hr").join(format!("{}.png", pair.id));
        let lr_path = PathBuf::from("lr").join(format!("{}.png", pair.id));
        save_grayscale(out.join(&hr_path), &pair.hr, BitDepth::Sixteen)?;
        save_grayscale(out.join(&lr_path), &pair.lr, BitDepth::Sixteen)?;
        entries.push(ManifestEntry {
            id: pair.id.clone(),
            hr_path,
            lr_path,
            split: *split,
        });
    }
    let manifest = DatasetManifest {
        scale: spec.scale,
        seed: spec.seed,
        entries,
        root: out.to_path_buf(),
    };
    manifest.write(out.join("manifest.tsv"))?;
    Ok(manifest)
}

//! Stimulus generators and the on-disk dataset format they share.
//!
//! A dataset directory holds `meta.json` and one directory per split
//! (`train/`, `val/`). Each split has 8-bit grayscale PNGs for images and
//! masks plus `manifest.jsonl`, one record per image with its label, all
//! sampled parameters and the SHA-256 of every file it references.

pub mod cabc;
pub mod glyphs;
pub mod pathfinder;
pub mod raster;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use raster::Bitmap;

pub const BACKGROUND: u8 = 0;
pub const MARKER: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub x: i64,
    pub y: i64,
    pub radius: f64,
    /// Index of the object (letter or curve) the marker sits on.
    pub object: usize,
}

impl Marker {
    pub fn pixels(&self) -> Vec<(i64, i64)> {
        raster::disc(self.x, self.y, self.radius)
    }
}

/// One generated stimulus.
#[derive(Clone, Debug)]
pub struct Sample {
    pub size: usize,
    pub image: Vec<u8>,
    /// Classification label, `true` when both markers share an object.
    pub label: Option<bool>,
    /// Per-object binary masks, before composition.
    pub masks: Vec<Bitmap>,
    pub markers: Vec<Marker>,
    /// Segmentation target: index into `masks`.
    pub target: Option<usize>,
    pub params: Value,
}

impl Sample {
    pub fn foreground(&self) -> Bitmap {
        Bitmap::from_fn(self.size, |x, y| self.image[y * self.size + x] != BACKGROUND)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Anything that can produce the sample at a given dataset index.
pub trait Generator: Sync {
    fn kind(&self) -> &'static str;
    fn image_size(&self) -> usize;
    fn counts(&self) -> (usize, usize);
    fn sample(&self, index: usize) -> Result<Sample>;
    /// Full parameter set, stored in `meta.json`.
    fn describe(&self) -> Value;
}

/// Train/val sizes for a total count with a tenth held out.
pub fn default_split(count: usize) -> (usize, usize) {
    let val = count / 10;
    (count - val, val)
}

/// Labels alternate with the index so every even-sized range is balanced.
pub fn label_for(index: usize) -> bool {
    index % 2 == 0
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub train: usize,
    pub val: usize,
    /// SHA-256 over both split manifests, which themselves carry the
    /// digest of every file.
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_png(size: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, size as u32, size as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        let mut w = enc.write_header().map_err(|e| Error::Invalid(format!("png: {e}")))?;
        w.write_image_data(pixels).map_err(|e| Error::Invalid(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG into `(width, height, pixels)`.
pub fn decode_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Invalid(format!("{}: expected 8-bit grayscale", path.display())));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mask_bytes(m: &Bitmap) -> Vec<u8> {
    m.data().iter().map(|&v| v * 255).collect()
}

/// Writes one sample's files and returns its manifest record.
fn write_sample(dir: &Path, split: Split, index: usize, s: &Sample) -> Result<Value> {
    let mut digests = serde_json::Map::new();
    let mut put = |name: String, pixels: &[u8]| -> Result<String> {
        let bytes = encode_png(s.size, pixels)?;
        digests.insert(name.clone(), Value::String(sha256_hex(&bytes)));
        write_file(&dir.join(&name), &bytes)?;
        Ok(name)
    };
    let image = put(format!("{index:06}.png"), &s.image)?;
    let masks: Vec<String> =
        s.masks.iter().enumerate().map(|(k, m)| put(format!("{index:06}.mask{k}.png"), &mask_bytes(m))).collect::<Result<_>>()?;
    let target = match s.target {
        Some(k) => Some(put(format!("{index:06}.target.png"), &mask_bytes(&s.masks[k]))?),
        None => None,
    };
    Ok(json!({
        "index": index,
        "split": split,
        "image": image,
        "label": s.label.map(|l| if l { "same" } else { "different" }),
        "masks": masks,
        "target": target,
        "markers": s.markers,
        "params": s.params,
        "sha256": digests,
    }))
}

/// Generates every index of `generator` into `root`, using `workers`
/// threads. Output bytes do not depend on the worker count.
pub fn generate_dataset(generator: &dyn Generator, root: &Path, workers: usize) -> Result<DatasetManifest> {
    let (n_train, n_val) = generator.counts();
    let total = n_train + n_val;
    for split in [Split::Train, Split::Val] {
        let d = root.join(split.dir());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let split_of = |i: usize| if i < n_train { Split::Train } else { Split::Val };
    let workers = workers.max(1);
    let results: Vec<Result<Vec<(usize, String)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for i in (w..total).step_by(workers) {
                        let split = split_of(i);
                        let sample = generator.sample(i)?;
                        let rec = write_sample(&root.join(split.dir()), split, i, &sample)?;
                        out.push((i, serde_json::to_string(&rec)?));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator worker panicked")).collect()
    });
    let mut records = Vec::with_capacity(total);
    for r in results {
        records.extend(r?);
    }
    records.sort_by_key(|r| r.0);

    let mut hasher = Sha256::new();
    for split in [Split::Train, Split::Val] {
        let mut text = String::new();
        for (_, line) in records.iter().filter(|(i, _)| split_of(*i) == split) {
            text.push_str(line);
            text.push('\n');
        }
        hasher.update(text.as_bytes());
        write_file(&root.join(split.dir()).join("manifest.jsonl"), text.as_bytes())?;
    }
    let digest = hex::encode(hasher.finalize());
    let meta = json!({
        "kind": generator.kind(),
        "image_size": generator.image_size(),
        "train": n_train,
        "val": n_val,
        "params": generator.describe(),
        "digest": digest,
    });
    let meta_path = root.join("meta.json");
    let mut f = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(DatasetManifest { root: root.to_owned(), train: n_train, val: n_val, digest })
}

pub fn read_meta(root: &Path) -> Result<Value> {
    let p = root.join("meta.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_manifest(root: &Path, split: Split) -> Result<Vec<Value>> {
    let p = root.join(split.dir()).join("manifest.jsonl");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { path: p.display().to_string(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

/// What [`audit_dataset`] checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditSummary {
    pub train: usize,
    pub val: usize,
    pub same: usize,
    pub different: usize,
    pub files: usize,
    pub control: Option<String>,
}

fn mask_from_png(path: &Path) -> Result<Bitmap> {
    let (w, _, px) = decode_png(path)?;
    Ok(Bitmap::from_fn(w, |x, y| px[y * w + x] > 127))
}

/// Re-reads a generated dataset and checks it against its own metadata:
/// record counts, contiguous indices, balanced labels, file digests, and the
/// luminance or positional control constraint when one was requested.
pub fn audit_dataset(root: &Path) -> Result<AuditSummary> {
    let meta = read_meta(root)?;
    let control = meta["params"]["cabc"]["control"].as_str().map(str::to_owned);
    let mut out = AuditSummary { control: control.clone(), ..Default::default() };
    let fail = |split: Split, line: usize, msg: String| Error::Parse {
        path: root.join(split.dir()).join("manifest.jsonl").display().to_string(),
        line,
        msg,
    };
    let mut next = 0usize;
    for split in [Split::Train, Split::Val] {
        let records = read_manifest(root, split)?;
        let want = meta[split.dir()].as_u64().unwrap_or(0) as usize;
        if records.len() != want {
            return Err(fail(split, records.len(), format!("{} records, metadata says {want}", records.len())));
        }
        let (mut same, mut diff) = (0usize, 0usize);
        for (line, r) in records.iter().enumerate() {
            let line = line + 1;
            if r["index"].as_u64() != Some(next as u64) {
                return Err(fail(split, line, format!("expected index {next}")));
            }
            next += 1;
            let dir = root.join(split.dir());
            for (name, digest) in r["sha256"].as_object().into_iter().flatten() {
                let path = dir.join(name);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if digest.as_str() != Some(sha256_hex(&bytes).as_str()) {
                    return Err(fail(split, line, format!("digest mismatch for {name}")));
                }
                out.files += 1;
            }
            match r["label"].as_str() {
                Some("same") => same += 1,
                Some("different") => diff += 1,
                _ => {}
            }
            match control.as_deref() {
                Some("luminance") => {
                    let v = &r["params"]["intensities"];
                    let ok = match (v[0].as_u64(), v[1].as_u64()) {
                        (Some(a), Some(b)) => cabc::valid_intensities(a as u8, b as u8),
                        _ => false,
                    };
                    if !ok {
                        return Err(fail(split, line, format!("letter intensities {v} violate the luminance control")));
                    }
                }
                Some("positional") => {
                    let masks = r["masks"].as_array().map(Vec::as_slice).unwrap_or(&[]);
                    let [a, b] = masks else {
                        return Err(fail(split, line, "positional control needs two letter masks".into()));
                    };
                    let a = mask_from_png(&dir.join(a.as_str().unwrap_or_default()))?;
                    let b = mask_from_png(&dir.join(b.as_str().unwrap_or_default()))?;
                    if a.dilate().intersects(&b) {
                        return Err(fail(split, line, "letters touch under the positional control".into()));
                    }
                }
                _ => {}
            }
        }
        if same.abs_diff(diff) > 1 {
            return Err(fail(split, records.len(), format!("unbalanced labels: {same} same, {diff} different")));
        }
        out.same += same;
        out.different += diff;
        match split {
            Split::Train => out.train = records.len(),
            Split::Val => out.val = records.len(),
        }
    }
    Ok(out)
}

/// One split held in memory as 8-bit pixels; batches are converted to
/// tensors on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub size: usize,
    pub indices: Vec<usize>,
    images: Vec<u8>,
    /// One byte per image (classification) or per pixel (segmentation).
    targets: Vec<u8>,
    pub segmentation: bool,
}

impl Dataset {
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let records = read_manifest(root, split)?;
        let dir = root.join(split.dir());
        let segmentation = records.first().is_some_and(|r| !r["target"].is_null());
        let mut ds = Dataset { size: 0, indices: Vec::new(), images: Vec::new(), targets: Vec::new(), segmentation };
        for (line, r) in records.iter().enumerate() {
            let bad = |msg: &str| Error::Parse {
                path: dir.join("manifest.jsonl").display().to_string(),
                line: line + 1,
                msg: msg.into(),
            };
            let image = r["image"].as_str().ok_or_else(|| bad("missing image"))?;
            let (w, h, px) = decode_png(&dir.join(image))?;
            if w != h || (ds.size != 0 && w != ds.size) {
                return Err(bad("inconsistent image size"));
            }
            ds.size = w;
            ds.images.extend_from_slice(&px);
            ds.indices.push(r["index"].as_u64().ok_or_else(|| bad("missing index"))? as usize);
            if segmentation {
                let t = r["target"].as_str().ok_or_else(|| bad("missing target"))?;
                let (_, _, m) = decode_png(&dir.join(t))?;
                ds.targets.extend(m.iter().map(|&v| (v > 127) as u8));
            } else {
                let label = match r["label"].as_str() {
                    Some("same") => 1,
                    Some("different") => 0,
                    _ => return Err(bad("label must be \"same\" or \"different\"")),
                };
                ds.targets.push(label);
            }
        }
        Ok(ds)
    }

    /// Builds a dataset from raw pixels (used by tests and toy tasks).
    pub fn from_raw(size: usize, images: Vec<u8>, targets: Vec<u8>, segmentation: bool) -> Result<Self> {
        let n = images.len() / (size * size);
        let per = if segmentation { size * size } else { 1 };
        if images.len() != n * size * size || targets.len() != n * per {
            return Err(Error::Invalid("raw dataset sizes disagree".into()));
        }
        Ok(Dataset { size, indices: (0..n).collect(), images, targets, segmentation })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.targets[i]
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.size * self.size;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn target_mask(&self, i: usize) -> &[u8] {
        let n = self.size * self.size;
        &self.targets[i * n..(i + 1) * n]
    }

    /// `(images, targets)` tensors for the given positions; images scaled to
    /// `[0, 1]`.
    pub fn batch<R: crate::Real>(&self, positions: &[usize]) -> (Tensor<R>, Tensor<R>) {
        let s = self.size;
        let mut img = Vec::with_capacity(positions.len() * s * s);
        let mut tgt = Vec::new();
        for &p in positions {
            img.extend(self.image(p).iter().map(|&v| R::of(v as f64 / 255.0)));
            if self.segmentation {
                tgt.extend(self.target_mask(p).iter().map(|&v| R::of(v as f64)));
            } else {
                tgt.push(R::of(self.targets[p] as f64));
            }
        }
        let n = positions.len();
        let tshape: Vec<usize> = if self.segmentation { vec![n, 1, s, s] } else { vec![n, 1, 1, 1] };
        (Tensor::new(&[n, 1, s, s], img).unwrap(), Tensor::new(&tshape, tgt).unwrap())
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per = if self.segmentation { self.size * self.size } else { 1 };
        Dataset {
            size: self.size,
            indices: self.indices[..n].to_vec(),
            images: self.images[..n * self.size * self.size].to_vec(),
            targets: self.targets[..n * per].to_vec(),
            segmentation: self.segmentation,
        }
    }
}

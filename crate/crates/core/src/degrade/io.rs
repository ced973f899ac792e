use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::dataset::{materialize, DatasetSpec, KindConfig, PairedDataset, Split, SplitCounts};
use super::spec::{parse_num, DegradationKind, DegradationSpec};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_FORMAT: &str = "degrel-dataset";
const MANIFEST_VERSION: u32 = 1;

pub fn image_file_name(id: usize) -> String {
    format!("{id:05}.png")
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a `[C,H,W]` image with C in {1,3} as an 8-bit PNG.
pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(Error::shape(format!("PNG needs a [1|3,H,W] image, got {s:?}"))),
    };
    let plane = h * w;
    let d = img.data();
    let mut bytes = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            bytes.push(to_u8(d[ch * plane + p]));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Read an 8-bit grayscale or RGB PNG into a `[C,H,W]` tensor in [0,1].
pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |e: png::DecodingError| Error::Parse(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(decode_err)?;
    let info = reader.info();
    let c = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (ct, bd) => {
            return Err(Error::Parse(format!(
                "{}: unsupported PNG layout {ct:?}/{bd:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(c * w * h)];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let bytes = &buf[..frame.buffer_size()];
    let plane = h * w;
    let mut data = vec![0f32; c * plane];
    for p in 0..plane {
        for ch in 0..c {
            data[ch * plane + p] = f32::from(bytes[p * c + ch]) / 255.0;
        }
    }
    Tensor::from_vec(&[c, h, w], data)
}

pub fn manifest_text(ds: &PairedDataset) -> String {
    let spec = ds.spec();
    let mut out = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| out.push_str(&format!("{k} = {v}\n"));
    kv("format", &MANIFEST_FORMAT);
    kv("version", &MANIFEST_VERSION);
    kv("seed", &spec.seed);
    kv("size", &spec.size);
    kv("channels", &spec.channels);
    kv("count.train", &spec.counts.train);
    kv("count.val", &spec.counts.val);
    kv("count.test", &spec.counts.test);
    let names: Vec<&str> = spec.kinds.iter().map(|k| k.kind().name()).collect();
    kv("kinds", &names.join(","));
    for k in &spec.kinds {
        kv(&format!("kind.{}", k.kind()), k);
    }
    for id in 0..spec.counts.total() {
        let split = spec.counts.split_of(id).expect("id within counts");
        kv(&format!("image.{id}"), &split.name());
        for kind in ds.kinds() {
            let pair = &ds.variants(kind).expect("listed kind")[id];
            kv(&format!("image.{id}.{kind}"), &pair.spec);
        }
    }
    out
}

/// Parsed manifest: the dataset spec plus the recorded per-image specs.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub images: BTreeMap<(DegradationKind, usize), DegradationSpec>,
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("manifest line {}: expected `key = value`", n + 1)))?;
        if map.insert(k.trim(), v.trim()).is_some() {
            return Err(Error::Parse(format!("manifest line {}: duplicate key `{}`", n + 1, k.trim())));
        }
    }
    let mut take = |k: &str| {
        map.remove(k)
            .ok_or_else(|| Error::Parse(format!("manifest is missing `{k}`")))
    };
    if take("format")? != MANIFEST_FORMAT {
        return Err(Error::Parse("not a dataset manifest".into()));
    }
    let version: u32 = parse_num(take("version")?, "version")?;
    if version != MANIFEST_VERSION {
        return Err(Error::Parse(format!(
            "manifest version {version} is not supported (expected {MANIFEST_VERSION})"
        )));
    }
    let seed = parse_num(take("seed")?, "seed")?;
    let size = parse_num(take("size")?, "size")?;
    let channels = parse_num(take("channels")?, "channels")?;
    let counts = SplitCounts {
        train: parse_num(take("count.train")?, "count.train")?,
        val: parse_num(take("count.val")?, "count.val")?,
        test: parse_num(take("count.test")?, "count.test")?,
    };
    let kind_names = take("kinds")?.to_string();
    let mut kinds = Vec::new();
    for name in kind_names.split(',') {
        let kind: DegradationKind = name.trim().parse()?;
        let kc: KindConfig = take(&format!("kind.{kind}"))?.parse()?;
        if kc.kind() != kind {
            return Err(Error::Parse(format!("kind.{kind} describes `{}`", kc.kind())));
        }
        kinds.push(kc);
    }
    let spec = DatasetSpec {
        kinds,
        counts,
        size,
        channels,
        seed,
    };
    spec.validate()?;
    let mut images = BTreeMap::new();
    for id in 0..counts.total() {
        let split: Split = take(&format!("image.{id}"))?.parse()?;
        if counts.split_of(id) != Some(split) {
            return Err(Error::Parse(format!("image.{id} is listed in the wrong split")));
        }
        for kc in &spec.kinds {
            let kind = kc.kind();
            let ds: DegradationSpec = take(&format!("image.{id}.{kind}"))?.parse()?;
            if ds.kind() != kind {
                return Err(Error::Parse(format!("image.{id}.{kind} describes `{}`", ds.kind())));
            }
            images.insert((kind, id), ds);
        }
    }
    if let Some(k) = map.keys().next() {
        return Err(Error::Parse(format!("manifest has unexpected key `{k}`")));
    }
    Ok(Manifest { spec, images })
}

fn kind_dir(root: &Path, kind: DegradationKind) -> PathBuf {
    root.join(kind.name())
}

/// Write images and manifest under `root`. The manifest is written last, so
/// a directory with a manifest is complete.
pub fn write_dataset(ds: &PairedDataset, root: &Path) -> Result<()> {
    let clean_dir = root.join("clean");
    fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
    for (id, img) in ds.clean().iter().enumerate() {
        write_png(&clean_dir.join(image_file_name(id)), img)?;
    }
    for kind in ds.kinds() {
        let dir = kind_dir(root, kind);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (id, pair) in ds.variants(kind)?.iter().enumerate() {
            write_png(&dir.join(image_file_name(id)), &pair.degraded)?;
        }
    }
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest_text(ds)).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

/// Load a dataset from disk. Pixel values are the stored 8-bit values.
pub fn read_dataset(root: &Path) -> Result<PairedDataset> {
    let manifest = read_manifest(root)?;
    let spec = manifest.spec;
    let expected = [spec.channels, spec.size, spec.size];
    let load = |path: PathBuf| -> Result<Tensor> {
        let t = read_png(&path)?;
        if t.shape() != expected {
            return Err(Error::Parse(format!(
                "{}: shape {:?} does not match manifest {expected:?}",
                path.display(),
                t.shape()
            )));
        }
        Ok(t)
    };
    let clean = (0..spec.counts.total())
        .map(|id| load(root.join("clean").join(image_file_name(id))))
        .collect::<Result<Vec<_>>>()?;
    let mut variants = BTreeMap::new();
    for kc in &spec.kinds {
        let kind = kc.kind();
        let mut pairs = Vec::with_capacity(clean.len());
        for id in 0..clean.len() {
            let ispec = manifest.images[&(kind, id)];
            let degraded = load(kind_dir(root, kind).join(image_file_name(id)))?;
            let mut pair = materialize_target(&clean, id, ispec)?;
            pair.degraded = degraded;
            pairs.push(pair);
        }
        variants.insert(kind, pairs);
    }
    Ok(PairedDataset::from_parts(spec, clean, variants))
}

fn materialize_target(clean: &[Tensor], id: usize, spec: DegradationSpec) -> Result<super::ImagePair> {
    use super::spec::Degradation;
    let target = match spec.params {
        Degradation::Adversarial { target, .. } => target,
        _ => id,
    };
    let clean_t = clean
        .get(target)
        .ok_or_else(|| Error::Parse(format!("image {id}: target {target} out of range")))?;
    Ok(super::ImagePair {
        degraded: clean[id].clone(),
        clean: clean_t.clone(),
        spec,
    })
}

/// Regenerate every image from the manifest and compare it with the stored
/// files after 8-bit quantization. Returns the ids that differ.
pub fn verify_dataset(root: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(root)?;
    let stored = read_dataset(root)?;
    let fresh = super::build_paired_dataset(&manifest.spec)?;
    let quantized = |t: &Tensor| t.data().iter().map(|&v| to_u8(v)).collect::<Vec<u8>>();
    let mut bad = Vec::new();
    for (id, (a, b)) in fresh.clean().iter().zip(stored.clean()).enumerate() {
        if quantized(a) != quantized(b) {
            bad.push(format!("clean/{id}"));
        }
    }
    for kc in &manifest.spec.kinds {
        let kind = kc.kind();
        let fresh_pairs = fresh.variants(kind)?;
        for (id, b) in stored.variants(kind)?.iter().enumerate() {
            let recorded = manifest.images[&(kind, id)];
            // Re-derive from the recorded spec so edits to the manifest are caught too.
            let from_manifest = materialize(fresh.clean(), id, recorded)?;
            if recorded != fresh_pairs[id].spec || quantized(&from_manifest.degraded) != quantized(&b.degraded) {
                bad.push(format!("{kind}/{id}"));
            }
        }
    }
    Ok(bad)
}

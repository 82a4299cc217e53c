//! Paired-modality synthetic dataset: plain image containers with a small
//! binary format, the scene generator, and the on-disk dataset layout.

mod scene;
mod stylize;

pub use scene::{generate_scene, shape_covers, Domain, SceneSpec};
pub use stylize::adain_stylize;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{MmcError, Result};
use crate::geom::BoxCwh;
use crate::tensor::Tensor;

const IMAGE_MAGIC: &[u8; 4] = b"MMCT";
const IMAGE_VERSION: u32 = 1;

/// Dense float image, channel-major. Plain data — no gradient machinery.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(c: usize, h: usize, w: usize) -> Image {
        Image {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> f32 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, y: usize, x: usize, v: f32) {
        self.data[(ch * self.h + y) * self.w + x] = v;
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.c, self.h, self.w], self.data.clone())
            .expect("image dimensions are consistent by construction")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Image> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(MmcError::Contract(format!(
                "image tensors are rank 3, got {s:?}"
            )));
        }
        Ok(Image {
            c: s[0],
            h: s[1],
            w: s[2],
            data: t.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(IMAGE_MAGIC)?;
        w.write_all(&IMAGE_VERSION.to_le_bytes())?;
        for dim in [self.c, self.h, self.w] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Image> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != IMAGE_MAGIC {
            return Err(MmcError::Format(format!("bad image magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != IMAGE_VERSION {
            return Err(MmcError::Format(format!(
                "unsupported image version {version}"
            )));
        }
        let (c, h, w) = (
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
        );
        let mut data = Vec::with_capacity(c * h * w);
        for _ in 0..c * h * w {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b, "pixel payload")?;
            data.push(f32::from_le_bytes(b));
        }
        Ok(Image { c, h, w, data })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| MmcError::Format(format!("truncated while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32 field")?;
    Ok(u32::from_le_bytes(b))
}

/// One annotated object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    /// 1 = person, 2 = car, 3 = cyclist
    pub class_id: usize,
    pub bbox: BoxCwh,
}

/// A paired scene: 3-channel "visual" and 1-channel "thermal" view of the
/// same geometry.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: u64,
    pub image_a: Image,
    pub image_b: Image,
    pub boxes: Vec<Annotation>,
    pub domain: Domain,
    pub illumination: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Everything [`build_dataset`] needs. Scene knobs are forwarded into each
/// sample's [`SceneSpec`].
#[derive(Clone, Debug)]
pub struct DatasetParams {
    pub n_train: usize,
    pub n_test: usize,
    pub day_fraction: f64,
    pub seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub glare_probability: f64,
    pub noise_a: f64,
    pub noise_b: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_train: 2000,
            n_test: 400,
            day_fraction: 0.6,
            seed: 1,
            min_objects: 1,
            max_objects: 5,
            glare_probability: 0.5,
            noise_a: 0.02,
            noise_b: 0.02,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 1 || self.n_test < 1 {
            return Err(MmcError::Parameter(
                "dataset needs at least 1 train and 1 test sample".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.day_fraction) {
            return Err(MmcError::Parameter(format!(
                "day_fraction must lie in [0,1], got {}",
                self.day_fraction
            )));
        }
        if self.min_objects > self.max_objects || self.max_objects > 6 {
            return Err(MmcError::Parameter(format!(
                "object count range {}..={} invalid (max 6)",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }

    fn spec_for(&self, sample_id: u64, domain: Domain) -> SceneSpec {
        SceneSpec {
            // counter-based: parallel generation stays order-independent
            seed: self.seed ^ sample_id,
            domain,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            glare_probability: self.glare_probability,
            noise_a: self.noise_a,
            noise_b: self.noise_b,
            illumination_override: None,
        }
    }
}

/// Shuffled day/night assignment with exact counts per split.
fn domains(n: usize, day_fraction: f64, seed: u64, split: Split) -> Vec<Domain> {
    let day_count = ((n as f64) * day_fraction).round() as usize;
    let mut v: Vec<Domain> = (0..n)
        .map(|i| if i < day_count { Domain::Day } else { Domain::Night })
        .collect();
    use rand::seq::SliceRandom;
    let mut rng = crate::rng::stream(seed, "dataset/domains", &[split as u64]);
    v.shuffle(&mut rng);
    v
}

fn manifest_line(sample: &Sample, split: Split) -> String {
    let mut line = format!(
        "{}\t{}\t{}\t{:.6}\t{}",
        sample.id,
        split.as_str(),
        sample.domain.as_str(),
        sample.illumination,
        sample.boxes.len()
    );
    for b in &sample.boxes {
        line.push_str(&format!(
            "\t{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h
        ));
    }
    line.push('\n');
    line
}

/// Generate and write the full dataset: `manifest.tsv` plus
/// `images/<id>_a.bin` / `<id>_b.bin` pairs. Train ids precede test ids,
/// so the two splits draw from disjoint per-sample seed ranges.
pub fn build_dataset(dir: &Path, params: &DatasetParams) -> Result<()> {
    params.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let mut manifest = String::new();
    let mut id = 0u64;
    for (split, n) in [(Split::Train, params.n_train), (Split::Test, params.n_test)] {
        let doms = domains(n, params.day_fraction, params.seed, split);
        for d in doms {
            let sample = generate_scene(&params.spec_for(id, d));
            let sample = Sample { id, ..sample };
            sample.image_a.save(&images.join(format!("{id}_a.bin")))?;
            sample.image_b.save(&images.join(format!("{id}_b.bin")))?;
            manifest.push_str(&manifest_line(&sample, split));
            id += 1;
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| MmcError::Format(format!("manifest field {what} unparsable: {s:?}")))
}

/// Load every sample of one split, images included.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let manifest = fs::read_to_string(dir.join("manifest.tsv"))?;
    let images: PathBuf = dir.join("images");
    let mut out = Vec::new();
    for line in manifest.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 {
            return Err(MmcError::Format(format!("short manifest line: {line:?}")));
        }
        if fields[1] != split.as_str() {
            continue;
        }
        let id: u64 = parse_field(fields[0], "id")?;
        let domain = match fields[2] {
            "day" => Domain::Day,
            "night" => Domain::Night,
            other => {
                return Err(MmcError::Format(format!("unknown domain {other:?}")));
            }
        };
        let illumination: f32 = parse_field(fields[3], "illumination")?;
        let n_boxes: usize = parse_field(fields[4], "n_boxes")?;
        if fields.len() != 5 + n_boxes {
            return Err(MmcError::Format(format!(
                "manifest line declares {n_boxes} boxes but carries {}",
                fields.len() - 5
            )));
        }
        let mut boxes = Vec::with_capacity(n_boxes);
        for f in &fields[5..] {
            let parts: Vec<&str> = f.split(' ').collect();
            if parts.len() != 5 {
                return Err(MmcError::Format(format!("bad box field {f:?}")));
            }
            boxes.push(Annotation {
                class_id: parse_field(parts[0], "class")?,
                bbox: BoxCwh::new(
                    parse_field(parts[1], "cx")?,
                    parse_field(parts[2], "cy")?,
                    parse_field(parts[3], "w")?,
                    parse_field(parts[4], "h")?,
                ),
            });
        }
        out.push(Sample {
            id,
            image_a: Image::load(&images.join(format!("{id}_a.bin")))?,
            image_b: Image::load(&images.join(format!("{id}_b.bin")))?,
            boxes,
            domain,
            illumination,
        });
    }
    Ok(out)
}

/// Hex SHA-256 of the manifest file — the dataset's identity for golden
/// tests and run manifests.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(dir.join("manifest.tsv"))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

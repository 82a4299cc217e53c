//! Plaintext run configuration: `[section]` headers over one `key = value`
//! per line, `#` comments, and no nesting. Parsing keeps raw strings;
//! [`Config::resolve`] maps them onto the typed configs and rejects every
//! key it does not recognize, so typos fail loudly instead of silently
//! training with a default.
//!
//! Precedence is resolved by construction: callers parse the file first and
//! then apply command-line `section.key=value` overrides via
//! [`Config::set`], which replaces earlier values.

use std::fmt::Write as _;
use std::path::Path;

use crate::augment::AugmentRanges;
use crate::data::DatasetParams;
use crate::error::{MmcError, Result};
use crate::losses::LossWeights;
use crate::nn::EncoderConfig;
use crate::train::{TrainConfig, Variant};

#[derive(Clone, Debug)]
struct Entry {
    section: String,
    key: String,
    value: String,
    /// 1-based source line; 0 for programmatic overrides.
    line: usize,
}

/// An ordered bag of raw `(section, key, value)` settings.
#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: Vec<Entry>,
}

impl Config {
    pub fn empty() -> Config {
        Config::default()
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(MmcError::Config(format!(
                        "line {line}: unterminated section header '{trimmed}'"
                    )));
                };
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    return Err(MmcError::Config(format!(
                        "line {line}: invalid section name '{name}'"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(MmcError::Config(format!(
                    "line {line}: expected 'key = value', got '{trimmed}'"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(MmcError::Config(format!("line {line}: empty key")));
            }
            let Some(section) = section.clone() else {
                return Err(MmcError::Config(format!(
                    "line {line}: key '{key}' appears before any [section] header"
                )));
            };
            if entries
                .iter()
                .any(|e| e.section == section && e.key == key)
            {
                return Err(MmcError::Config(format!(
                    "line {line}: duplicate key [{section}] {key}"
                )));
            }
            entries.push(Entry {
                section,
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        Ok(Config { entries })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MmcError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::parse(&text)
    }

    /// Raw value lookup, for consumers with their own schema (e.g. run
    /// manifests reusing this syntax).
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .map(|e| e.value.as_str())
    }

    /// Apply one `section.key=value` override, replacing any earlier value
    /// for that key.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = || {
            MmcError::Config(format!(
                "override '{assignment}' must look like section.key=value"
            ))
        };
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        let (section, key, value) = (section.trim(), key.trim(), value.trim());
        if section.is_empty() || key.is_empty() {
            return Err(bad());
        }
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.section == section && e.key == key)
        {
            e.value = value.to_string();
            e.line = 0;
        } else {
            self.entries.push(Entry {
                section: section.to_string(),
                key: key.to_string(),
                value: value.to_string(),
                line: 0,
            });
        }
        Ok(())
    }

    /// Typed view over the whole bag. Every entry must be consumed by a
    /// known `(section, key)`; leftovers are reported together.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut exp = ExperimentConfig::default();
        let mut used = vec![false; self.entries.len()];
        {
            let mut r = Reader {
                entries: &self.entries,
                used: &mut used,
            };
            let t = &mut exp.train;
            if let Some(v) = r.take("train", "variant") {
                t.variant = v
                    .parse::<Variant>()
                    .map_err(|e| MmcError::Config(format!("[train] variant: {e}")))?;
            }
            r.get("train", "batch_size", &mut t.batch_size)?;
            r.get("train", "lr", &mut t.lr)?;
            r.get("train", "weight_decay", &mut t.weight_decay)?;
            r.get("train", "lr_decay", &mut t.lr_decay)?;
            r.get("train", "steps", &mut t.steps)?;
            r.get("train", "seed", &mut t.seed)?;
            r.get("train", "augment", &mut t.augment)?;
            if let Some(v) = r.take("train", "overfit_batch") {
                t.overfit_batch = if v == "none" {
                    None
                } else {
                    Some(parse_as(&v, "train", "overfit_batch")?)
                };
            }

            let w = &mut t.weights;
            r.get("loss", "lambda_rgb", &mut w.lambda_rgb)?;
            r.get("loss", "lambda_thm", &mut w.lambda_thm)?;
            r.get("loss", "tau", &mut w.tau)?;
            r.get("loss", "lambda_reg", &mut w.lambda_reg)?;
            r.get("loss", "lambda_rec", &mut w.lambda_rec)?;
            r.get("loss", "lambda_crossrec_rgb", &mut w.lambda_crossrec_rgb)?;
            r.get("loss", "lambda_crossrec_thm", &mut w.lambda_crossrec_thm)?;
            r.get("loss", "n_cls", &mut w.n_cls)?;
            r.get("loss", "kl_sum_over_anchors", &mut w.kl_sum_over_anchors)?;
            r.get("loss", "tau_sq_compensation", &mut w.tau_sq_compensation)?;

            let a = &mut t.ranges;
            r.get("augment", "min_crop_scale", &mut a.min_crop_scale)?;
            r.get("augment", "contrast_lo", &mut a.contrast.0)?;
            r.get("augment", "contrast_hi", &mut a.contrast.1)?;
            r.get("augment", "saturation_lo", &mut a.saturation.0)?;
            r.get("augment", "saturation_hi", &mut a.saturation.1)?;
            r.get("augment", "hue_degrees", &mut a.hue_degrees)?;
            r.get("augment", "photometric_on_b", &mut a.photometric_on_b)?;

            let e = &mut t.encoder;
            r.get("encoder", "image_size", &mut e.image_size)?;
            r.get("encoder", "patch_size", &mut e.patch_size)?;
            r.get("encoder", "embed_dim", &mut e.embed_dim)?;
            r.get("encoder", "depth", &mut e.depth)?;
            r.get("encoder", "heads", &mut e.heads)?;

            let d = &mut exp.data;
            r.get("data", "n_train", &mut d.n_train)?;
            r.get("data", "n_test", &mut d.n_test)?;
            r.get("data", "day_fraction", &mut d.day_fraction)?;
            r.get("data", "seed", &mut d.seed)?;
            r.get("data", "min_objects", &mut d.min_objects)?;
            r.get("data", "max_objects", &mut d.max_objects)?;
            r.get("data", "glare_probability", &mut d.glare_probability)?;
            r.get("data", "noise_a", &mut d.noise_a)?;
            r.get("data", "noise_b", &mut d.noise_b)?;
        }

        let unknown: Vec<String> = self
            .entries
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(e, _)| {
                if e.line > 0 {
                    format!("[{}] {} (line {})", e.section, e.key, e.line)
                } else {
                    format!("[{}] {}", e.section, e.key)
                }
            })
            .collect();
        if !unknown.is_empty() {
            return Err(MmcError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }

        exp.train.validate()?;
        exp.data.validate()?;
        Ok(exp)
    }
}

struct Reader<'a> {
    entries: &'a [Entry],
    used: &'a mut [bool],
}

impl<'a> Reader<'a> {
    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.section == section && e.key == key {
                self.used[i] = true;
                return Some(e.value.clone());
            }
        }
        None
    }

    fn get<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        slot: &mut T,
    ) -> Result<()> {
        if let Some(v) = self.take(section, key) {
            *slot = parse_as(&v, section, key)?;
        }
        Ok(())
    }
}

fn parse_as<T: std::str::FromStr>(value: &str, section: &str, key: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        MmcError::Config(format!(
            "[{section}] {key}: cannot parse '{value}' as {}",
            std::any::type_name::<T>()
        ))
    })
}

/// Everything a run needs: the training recipe plus the dataset recipe.
#[derive(Clone, Debug, Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DatasetParams,
}

impl ExperimentConfig {
    /// Canonical dump: every key, grouped by section, defaults included.
    /// Parsing this text back resolves to an identical configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let LossWeights {
            lambda_rgb,
            lambda_thm,
            tau,
            lambda_reg,
            lambda_rec,
            lambda_crossrec_rgb,
            lambda_crossrec_thm,
            n_cls,
            kl_sum_over_anchors,
            tau_sq_compensation,
        } = t.weights;
        let AugmentRanges {
            min_crop_scale,
            contrast,
            saturation,
            hue_degrees,
            photometric_on_b,
        } = t.ranges;
        let EncoderConfig {
            image_size,
            patch_size,
            embed_dim,
            depth,
            heads,
            in_channels: _,
        } = t.encoder;
        let d = &self.data;
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[train]");
        let _ = writeln!(w, "variant = {}", t.variant);
        let _ = writeln!(w, "batch_size = {}", t.batch_size);
        let _ = writeln!(w, "lr = {}", t.lr);
        let _ = writeln!(w, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(w, "lr_decay = {}", t.lr_decay);
        let _ = writeln!(w, "steps = {}", t.steps);
        let _ = writeln!(w, "seed = {}", t.seed);
        let _ = writeln!(w, "augment = {}", t.augment);
        let ob = t
            .overfit_batch
            .map_or("none".to_string(), |k| k.to_string());
        let _ = writeln!(w, "overfit_batch = {ob}");
        let _ = writeln!(w);
        let _ = writeln!(w, "[loss]");
        let _ = writeln!(w, "lambda_rgb = {lambda_rgb}");
        let _ = writeln!(w, "lambda_thm = {lambda_thm}");
        let _ = writeln!(w, "tau = {tau}");
        let _ = writeln!(w, "lambda_reg = {lambda_reg}");
        let _ = writeln!(w, "lambda_rec = {lambda_rec}");
        let _ = writeln!(w, "lambda_crossrec_rgb = {lambda_crossrec_rgb}");
        let _ = writeln!(w, "lambda_crossrec_thm = {lambda_crossrec_thm}");
        let _ = writeln!(w, "n_cls = {n_cls}");
        let _ = writeln!(w, "kl_sum_over_anchors = {kl_sum_over_anchors}");
        let _ = writeln!(w, "tau_sq_compensation = {tau_sq_compensation}");
        let _ = writeln!(w);
        let _ = writeln!(w, "[augment]");
        let _ = writeln!(w, "min_crop_scale = {min_crop_scale}");
        let _ = writeln!(w, "contrast_lo = {}", contrast.0);
        let _ = writeln!(w, "contrast_hi = {}", contrast.1);
        let _ = writeln!(w, "saturation_lo = {}", saturation.0);
        let _ = writeln!(w, "saturation_hi = {}", saturation.1);
        let _ = writeln!(w, "hue_degrees = {hue_degrees}");
        let _ = writeln!(w, "photometric_on_b = {photometric_on_b}");
        let _ = writeln!(w);
        let _ = writeln!(w, "[encoder]");
        let _ = writeln!(w, "image_size = {image_size}");
        let _ = writeln!(w, "patch_size = {patch_size}");
        let _ = writeln!(w, "embed_dim = {embed_dim}");
        let _ = writeln!(w, "depth = {depth}");
        let _ = writeln!(w, "heads = {heads}");
        let _ = writeln!(w);
        let _ = writeln!(w, "[data]");
        let _ = writeln!(w, "n_train = {}", d.n_train);
        let _ = writeln!(w, "n_test = {}", d.n_test);
        let _ = writeln!(w, "day_fraction = {}", d.day_fraction);
        let _ = writeln!(w, "seed = {}", d.seed);
        let _ = writeln!(w, "min_objects = {}", d.min_objects);
        let _ = writeln!(w, "max_objects = {}", d.max_objects);
        let _ = writeln!(w, "glare_probability = {}", d.glare_probability);
        let _ = writeln!(w, "noise_a = {}", d.noise_a);
        let _ = writeln!(w, "noise_b = {}", d.noise_b);
        s
    }
}

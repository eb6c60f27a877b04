//! Checkpoint directories: `manifest.txt` (versioned `key = value` lines) and
//! `params.bin` (little-endian f64 parameter blob).

use std::collections::BTreeMap;
use std::path::Path;

use super::{DiscriminatorFamily, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, Preset};
use crate::error::{Error, Result};

const FORMAT: &str = "transex-checkpoint";
const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const PARAMS: &str = "params.bin";

fn write_dir(dir: &Path, manifest: &[(&str, String)], params: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = format!("format = {FORMAT}\nversion = {VERSION}\n");
    for (k, v) in manifest {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text.push_str(&format!("param_count = {}\n", params.len()));
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let blob: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let path = dir.join(PARAMS);
    std::fs::write(&path, blob).map_err(|e| Error::io(&path, e))
}

struct Manifest(BTreeMap<String, String>);

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("manifest field `{key}` is malformed")))
    }

    fn enum_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        serde_json::from_value(serde_json::Value::String(self.get(key)?.to_string()))
            .map_err(|_| Error::Checkpoint(format!("unknown {key} `{}`", self.get(key).unwrap_or(""))))
    }
}

fn read_dir(dir: &Path, kind: &str) -> Result<(Manifest, Vec<f64>)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad manifest line `{line}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let m = Manifest(map);
    if m.get("format")? != FORMAT {
        return Err(Error::Checkpoint("not a transex checkpoint".into()));
    }
    let version: u32 = m.parse("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    if m.get("kind")? != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", m.get("kind")?)));
    }
    let path = dir.join(PARAMS);
    let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter blob is truncated".into()));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let count: usize = m.parse("param_count")?;
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "manifest declares {count} parameters, blob has {}",
            params.len()
        )));
    }
    Ok((m, params))
}

pub(super) fn save_generator(g: &GeneratorSpec, dir: &Path) -> Result<()> {
    let (c, h, w) = g.input_shape();
    let (_, oh, ow) = g.output_shape();
    write_dir(
        dir,
        &[
            ("kind", "generator".into()),
            ("family", g.family.to_string()),
            ("preset", g.preset.to_string()),
            ("channels", c.to_string()),
            ("input_height", h.to_string()),
            ("input_width", w.to_string()),
            ("output_height", oh.to_string()),
            ("output_width", ow.to_string()),
            ("scale_factor", g.scale_factor().to_string()),
            ("seed", g.seed.to_string()),
        ],
        &g.params,
    )
}

pub(super) fn load_generator(dir: &Path) -> Result<GeneratorSpec> {
    let (m, params) = read_dir(dir, "generator")?;
    let family: GeneratorFamily = m.enum_field("family")?;
    let preset: Preset = m.enum_field("preset")?;
    let mut g = GeneratorSpec::new(
        family,
        preset,
        m.parse("channels")?,
        (m.parse("input_height")?, m.parse("input_width")?),
        m.parse("seed")?,
    )?;
    if g.params.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "architecture expects {} parameters, checkpoint has {}",
            g.params.len(),
            params.len()
        )));
    }
    g.params = params;
    Ok(g)
}

pub(super) fn save_discriminator(d: &DiscriminatorSpec, dir: &Path) -> Result<()> {
    write_dir(
        dir,
        &[
            ("kind", "discriminator".into()),
            ("family", d.family.to_string()),
            ("preset", d.preset.to_string()),
            ("channels", d.channels.to_string()),
            ("conditional", d.conditional.to_string()),
            ("input_height", d.input_hw.0.to_string()),
            ("input_width", d.input_hw.1.to_string()),
            ("seed", d.seed.to_string()),
        ],
        &d.params,
    )
}

pub(super) fn load_discriminator(dir: &Path) -> Result<DiscriminatorSpec> {
    let (m, params) = read_dir(dir, "discriminator")?;
    let family: DiscriminatorFamily = m.enum_field("family")?;
    let preset: Preset = m.enum_field("preset")?;
    let mut d = DiscriminatorSpec::new(
        family,
        preset,
        m.parse("channels")?,
        m.parse("conditional")?,
        (m.parse("input_height")?, m.parse("input_width")?),
        m.parse("seed")?,
    )?;
    if d.params.len() != params.len() {
        return Err(Error::Checkpoint("parameter count does not match architecture".into()));
    }
    d.params = params;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;

    #[test]
    fn generator_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (16, 16), 4).unwrap();
        g.params.iter_mut().enumerate().for_each(|(i, p)| *p += (i as f64).sin() * 1e-3);
        g.save(dir.path()).unwrap();
        let back = GeneratorSpec::load(dir.path()).unwrap();
        assert_eq!(back, g);
        let probe = ImageTensor::from_fn(16, 16, 3, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 10.0);
        assert_eq!(back.apply(&probe).unwrap(), g.apply(&probe).unwrap());
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("family = unet"));
        assert!(manifest.contains("version = 1"));
    }

    #[test]
    fn discriminator_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let d = DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, Preset::Tiny, 3, true, (16, 16), 5).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(DiscriminatorSpec::load(dir.path()).unwrap(), d);
        assert!(GeneratorSpec::load(dir.path()).is_err());
    }
}

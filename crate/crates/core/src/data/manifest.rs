//! Plain-text dataset manifest: `# key=value` header lines followed by one
//! `train <seed>` or `heldout <seed>` line per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{generate_scene, StereoSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub layers: usize,
    pub train: usize,
    pub heldout: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            seed: 0,
            height: 64,
            width: 96,
            d_max: 16,
            layers: 3,
            train: 512,
            heldout: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub params: DatasetParams,
    pub train: Vec<u64>,
    pub heldout: Vec<u64>,
}

impl Manifest {
    /// Draws per-sample seeds from the master seed.
    pub fn new(params: DatasetParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let train = (0..params.train).map(|_| rng.next_u64()).collect();
        let heldout = (0..params.heldout).map(|_| rng.next_u64()).collect();
        Manifest {
            params,
            train,
            heldout,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.heldout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::from("# flashpip dataset manifest\n");
        for (k, v) in [
            ("seed", p.seed),
            ("height", p.height as u64),
            ("width", p.width as u64),
            ("d_max", p.d_max as u64),
            ("layers", p.layers as u64),
            ("train", p.train as u64),
            ("heldout", p.heldout as u64),
        ] {
            s.push_str(&format!("# {k}={v}\n"));
        }
        for seed in &self.train {
            s.push_str(&format!("train {seed}\n"));
        }
        for seed in &self.heldout {
            s.push_str(&format!("heldout {seed}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = BTreeMap::new();
        let (mut train, mut heldout) = (Vec::new(), Vec::new());
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let (split, seed) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("manifest line {}: `{line}`", ln + 1)))?;
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("manifest line {}: bad seed", ln + 1)))?;
            match split {
                "train" => train.push(seed),
                "heldout" => heldout.push(seed),
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: unknown split `{other}`",
                        ln + 1
                    )))
                }
            }
        }
        let num = |k: &str| -> Result<u64> {
            header
                .get(k)
                .ok_or_else(|| Error::Format(format!("manifest header lacks `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("manifest header `{k}` is not an integer")))
        };
        let params = DatasetParams {
            seed: num("seed")?,
            height: num("height")? as usize,
            width: num("width")? as usize,
            d_max: num("d_max")? as usize,
            layers: num("layers")? as usize,
            train: train.len(),
            heldout: heldout.len(),
        };
        Ok(Manifest {
            params,
            train,
            heldout,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn render(&self, seeds: &[u64]) -> Result<Vec<StereoSample>> {
        let p = &self.params;
        seeds
            .iter()
            .map(|&s| generate_scene(s, p.height, p.width, p.d_max, p.layers))
            .collect()
    }

    pub fn train_samples(&self) -> Result<Vec<StereoSample>> {
        self.render(&self.train)
    }

    pub fn heldout_samples(&self) -> Result<Vec<StereoSample>> {
        self.render(&self.heldout)
    }
}

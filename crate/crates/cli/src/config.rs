//! Layered `key=value` configuration: built-in defaults, then a config
//! file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Command {
    Gen,
    Train,
    Prune,
    Bench,
    Analyze,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Gen, Command::Train, Command::Prune, Command::Bench, Command::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Prune => "prune",
            Command::Bench => "bench",
            Command::Analyze => "analyze",
        }
    }

    fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

use Command::{Analyze, Bench, Gen, Prune, Train};

/// `(key, default, commands that read it, description)`.
pub const SCHEMA: &[(&str, &str, &[Command], &str)] = &[
    ("seed", "0", &[Gen, Train, Prune, Bench, Analyze], "global seed"),
    ("out", "run", &[Gen, Train, Prune, Bench, Analyze], "output directory"),
    ("height", "64", &[Gen], "image height"),
    ("width", "96", &[Gen], "image width"),
    ("d_max", "16", &[Gen], "largest disparity"),
    ("layers", "3", &[Gen], "foreground rectangles per scene"),
    ("train", "512", &[Gen], "training samples"),
    ("heldout", "64", &[Gen], "held-out samples"),
    ("pfm", "0", &[Gen], "held-out samples dumped as PFM (left, right, disparity)"),
    ("manifest", "", &[Train, Prune, Analyze], "dataset manifest; empty means <out>/manifest.txt"),
    ("checkpoint", "", &[Prune, Bench, Analyze], "model checkpoint; empty means <out>/baseline.ckpt"),
    ("feature_channels", "16", &[Train], "encoder channels"),
    ("hidden_channels", "32", &[Train], "GRU hidden channels"),
    ("radius", "4", &[Train], "cost lookup radius"),
    ("iterations", "8", &[Train, Analyze], "refinement iterations"),
    ("init", "soft_argmax", &[Train], "initial estimate: soft_argmax or zero"),
    ("steps", "2000", &[Train, Prune], "optimizer steps (per stage when pruning)"),
    ("batch", "8", &[Train, Prune], "minibatch size"),
    ("lr", "2e-4", &[Train, Prune], "Adam learning rate"),
    ("gamma", "0.8", &[Train], "sequence loss decay"),
    ("log_every", "100", &[Train, Prune], "progress line interval on stderr; 0 disables"),
    ("ratio", "2", &[Prune], "iteration divisor per stage"),
    ("stages", "3", &[Prune], "number of pruning stages"),
    ("unfreeze_head", "false", &[Prune], "also finetune the disparity head"),
    ("aggregate", "estimates", &[Prune], "distillation targets: estimates or deltas"),
    ("final_target", "accumulated", &[Prune], "last-step target: accumulated or delta"),
    ("teacher_forcing", "false", &[Prune], "student looks up costs at teacher estimates"),
    ("random", "false", &[Bench], "random GRU weights instead of a checkpoint"),
    ("check", "false", &[Bench], "verify every cell against the masked dense oracle"),
    ("execute", "false", &[Bench], "run both executors, not only the cost model"),
    ("timing", "false", &[Bench], "add wall-clock columns"),
    ("resolutions", "320x736,640x1472,1280x2944", &[Bench], "image sizes HxW"),
    ("sparsities", "0.7", &[Bench], "pruned pixel fractions"),
    ("bench_iterations", "4", &[Bench], "loop lengths T"),
    ("levels", "2", &[Bench], "pyramid levels"),
    ("downsample", "4", &[Bench], "image-to-state size ratio"),
    ("hidden", "8", &[Bench], "hidden channels for random weights"),
    ("statics", "8", &[Bench], "static input channels for random weights"),
    ("threshold", "0", &[Bench], "importance threshold below which pixels stay frozen"),
    ("samples", "8", &[Analyze], "held-out samples to trace"),
    ("epsilon", "1e-3", &[Analyze], "update flag threshold in pixels"),
    ("pgm", "false", &[Analyze], "dump per-iteration flag maps as PGM"),
];

fn known(key: &str) -> Option<&'static [Command]> {
    SCHEMA.iter().find(|(k, ..)| *k == key).map(|(_, _, c, _)| *c)
}

/// Effective configuration of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

fn split_pair(line: &str, origin: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("{origin}: expected key=value, got `{line}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("{origin}: empty key")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let values = SCHEMA
            .iter()
            .filter(|(_, _, cmds, _)| cmds.contains(&command))
            .map(|(k, v, ..)| (k.to_string(), v.to_string()))
            .collect();
        RunConfig { command, values }
    }

    /// Sets a key this command reads; other known keys are ignored so one
    /// file can serve every subcommand.
    fn apply(&mut self, key: &str, value: String, origin: &str, strict: bool) -> Result<()> {
        let cmds = known(key).ok_or_else(|| CliError::Config(format!("{origin}: unknown key `{key}`")))?;
        if cmds.contains(&self.command) {
            self.values.insert(key.to_string(), value);
        } else if strict {
            return Err(CliError::Config(format!(
                "{origin}: key `{key}` does not apply to `{}`",
                self.command
            )));
        }
        Ok(())
    }

    /// Lines are `key=value`; `#` starts a comment; a `[command]` header
    /// scopes the following keys to that subcommand.
    pub fn merge_file_text(&mut self, text: &str, name: &str) -> Result<()> {
        let mut section: Option<Command> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{name}:{}", i + 1);
            if let Some(s) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(
                    Command::parse(s.trim())
                        .ok_or_else(|| CliError::Config(format!("{origin}: unknown section `{s}`")))?,
                );
                continue;
            }
            let (k, v) = split_pair(line, &origin)?;
            match section {
                Some(c) if c != self.command => {
                    let cmds = known(&k).ok_or_else(|| CliError::Config(format!("{origin}: unknown key `{k}`")))?;
                    if !cmds.contains(&c) {
                        return Err(CliError::Config(format!("{origin}: key `{k}` does not apply to `{c}`")));
                    }
                }
                Some(_) => self.apply(&k, v, &origin, true)?,
                None => self.apply(&k, v, &origin, false)?,
            }
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_file_text(&text, &path.display().to_string())
    }

    pub fn set_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair, "command line")?;
        self.apply(&k, v, "command line", true)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        self.apply(key, value.into(), "command line", true)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("`{key}` is not a `{}` key", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("`{key}` has invalid value `{v}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::Config(format!("`{key}` must be true or false, got `{v}`"))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key);
        let items = v
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("`{key}` has invalid item `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(CliError::Config(format!("`{key}` must not be empty")));
        }
        Ok(items)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    /// A path key, falling back to `<out>/<fallback>` when empty.
    pub fn path_or(&self, key: &str, fallback: &str) -> PathBuf {
        match self.raw(key) {
            "" => self.out_dir().join(fallback),
            p => PathBuf::from(p),
        }
    }

    /// `command`, `artifact_version`, then every key in order.
    pub fn to_text(&self) -> String {
        let mut s = format!("command={}\nartifact_version={ARTIFACT_VERSION}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

/// Parses `HxW`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Config(format!("resolution `{s}` is not HxW"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

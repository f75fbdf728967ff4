use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::blocks::MaskConfig;
use crate::error::{Error, Result};

/// Flat `key = value` file with `#` comments. Keys are consumed by the
/// typed configs; anything left over is reported by [`KeyValues::finish`].
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    path: Option<PathBuf>,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut kv = KeyValues {
            path: path.map(Path::to_path_buf),
            entries: BTreeMap::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| kv.error(n + 1, format!("expected key = value, got `{line}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(kv.error(n + 1, "empty key".into()));
            }
            if kv.entries.contains_key(&key) {
                return Err(kv.error(n + 1, format!("duplicate key `{key}`")));
            }
            kv.entries.insert(key, (n + 1, value.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    fn error(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message,
        }
    }

    /// Removes `key` and parses its value.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| self.error(line, format!("bad value for `{key}`: {e}"))),
        }
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| self.error(line, format!("bad value for `{key}`: {e}"))),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(self.error(*line, format!("unknown key `{key}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodingMode {
    /// Offset-only bias encoding.
    Bias,
    Enhanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    /// Skip-attention upsampling.
    Saub,
    /// Projection + grid unpooling + projected skip.
    Gub,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sharing {
    Shared,
    Unshared,
}

macro_rules! keyword_enum {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })*
                unreachable!()
            }
        }
    };
}

keyword_enum!(EncodingMode { "bias" => EncodingMode::Bias, "enhanced" => EncodingMode::Enhanced });
keyword_enum!(Upsample { "saub" => Upsample::Saub, "gub" => Upsample::Gub });
keyword_enum!(Sharing { "shared" => Sharing::Shared, "unshared" => Sharing::Unshared });

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub classes: usize,
    pub channels: Vec<usize>,
    /// Transformer blocks per encoder level.
    pub blocks: Vec<usize>,
    /// Voxel size of each pooling step (one fewer than levels).
    pub grid: Vec<f64>,
    pub k: usize,
    pub mask: MaskConfig,
    pub encoding: EncodingMode,
    pub upsample: Upsample,
    pub sharing: Sharing,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            classes: 13,
            channels: vec![32, 64, 128, 256, 512],
            blocks: vec![1, 2, 2, 6, 2],
            grid: vec![0.08, 0.1, 0.2, 0.4],
            k: 16,
            mask: MaskConfig::Soft,
            encoding: EncodingMode::Enhanced,
            upsample: Upsample::Saub,
            sharing: Sharing::Shared,
        }
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl NetworkConfig {
    /// Small network used for desk-scale training.
    pub fn tiny(classes: usize) -> Self {
        Self {
            classes,
            channels: vec![16, 32, 64],
            blocks: vec![1, 1, 1],
            grid: vec![0.15, 0.3],
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() {
            return bad("at least one level is required".into());
        }
        if self.blocks.len() != self.channels.len() {
            return bad(format!(
                "{} block counts for {} channel levels",
                self.blocks.len(),
                self.channels.len()
            ));
        }
        if self.grid.len() + 1 != self.channels.len() {
            return bad(format!(
                "{} grid sizes for {} levels (need {})",
                self.grid.len(),
                self.channels.len(),
                self.channels.len() - 1
            ));
        }
        if self.channels.contains(&0) || self.blocks.contains(&0) {
            return bad("channels and block counts must be positive".into());
        }
        if let Some(g) = self.grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("grid sizes must be positive, got {g}"));
        }
        if self.in_channels == 0 || self.k == 0 {
            return bad("in_channels and k must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if let MaskConfig::Hard { tau } = self.mask {
            if !(0.0..=1.0).contains(&tau) {
                return bad(format!("tau must lie in [0, 1], got {tau}"));
            }
        }
        Ok(())
    }

    /// Overrides defaults with the network keys present in `kv`.
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        Self::default().with_key_values(kv)
    }

    /// Overrides `self` with the network keys present in `kv`.
    pub fn with_key_values(self, kv: &mut KeyValues) -> Result<Self> {
        let mut c = self;
        if let Some(v) = kv.take("in_channels")? {
            c.in_channels = v;
        }
        if let Some(v) = kv.take("classes")? {
            c.classes = v;
        }
        if let Some(v) = kv.take_list("channels")? {
            c.channels = v;
        }
        if let Some(v) = kv.take_list("blocks")? {
            c.blocks = v;
        }
        if let Some(v) = kv.take_list("grid")? {
            c.grid = v;
        }
        if let Some(v) = kv.take("k")? {
            c.k = v;
        }
        let tau: Option<f64> = kv.take("tau")?;
        let mode: Option<String> = kv.take("mask")?;
        c.mask = match (mode.as_deref(), tau) {
            (None, None) => c.mask,
            (Some("none"), None) => MaskConfig::None,
            (Some("soft"), None) => MaskConfig::Soft,
            (Some("hard"), Some(t)) => MaskConfig::hard(t)?,
            (Some("hard"), None) => return Err(Error::Config("mask = hard requires tau".into())),
            (_, Some(_)) => return Err(Error::Config("tau is only valid with mask = hard".into())),
            (Some(other), None) => {
                return Err(Error::Config(format!("mask must be none, soft or hard, got `{other}`")))
            }
        };
        if let Some(v) = kv.take("position_encoding")? {
            c.encoding = v;
        }
        if let Some(v) = kv.take("upsample")? {
            c.upsample = v;
        }
        if let Some(v) = kv.take("sharing")? {
            c.sharing = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, None)?;
        let c = Self::from_key_values(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Text form accepted by [`NetworkConfig::parse`].
    pub fn to_text(&self) -> String {
        let mask = match self.mask {
            MaskConfig::None => "mask = none\n".to_string(),
            MaskConfig::Soft => "mask = soft\n".to_string(),
            MaskConfig::Hard { tau } => format!("mask = hard\ntau = {tau:?}\n"),
        };
        format!(
            "in_channels = {}\nclasses = {}\nchannels = {}\nblocks = {}\ngrid = {}\nk = {}\n{mask}position_encoding = {}\nupsample = {}\nsharing = {}\n",
            self.in_channels,
            self.classes,
            join(&self.channels),
            join(&self.blocks),
            self.grid.iter().map(|g| format!("{g:?}")).collect::<Vec<_>>().join(","),
            self.k,
            self.encoding,
            self.upsample,
            self.sharing
        )
    }

    pub fn with_sharing(&self, sharing: Sharing) -> Self {
        Self {
            sharing,
            ..self.clone()
        }
    }
}

/// Component combinations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationCase {
    /// Baseline vector attention.
    I,
    /// + soft mask.
    II,
    /// + enhanced position encoding.
    III,
    /// + skip-attention upsampling.
    IV,
    /// + shared position encoding.
    V,
}

keyword_enum!(AblationCase {
    "I" => AblationCase::I,
    "II" => AblationCase::II,
    "III" => AblationCase::III,
    "IV" => AblationCase::IV,
    "V" => AblationCase::V,
});

impl AblationCase {
    pub const ALL: [AblationCase; 5] = [
        AblationCase::I,
        AblationCase::II,
        AblationCase::III,
        AblationCase::IV,
        AblationCase::V,
    ];

    /// `base` with the case's block combination switched in.
    pub fn apply(self, base: &NetworkConfig) -> NetworkConfig {
        let mut c = base.clone();
        let rank = self as u8;
        c.mask = if rank >= 1 { MaskConfig::Soft } else { MaskConfig::None };
        c.encoding = if rank >= 2 { EncodingMode::Enhanced } else { EncodingMode::Bias };
        c.upsample = if rank >= 3 { Upsample::Saub } else { Upsample::Gub };
        c.sharing = if rank >= 4 { Sharing::Shared } else { Sharing::Unshared };
        c
    }
}

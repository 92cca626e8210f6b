use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stats::seconds_to_picos;
use super::{BackendKind, MappedFileBackend, RamBackend, StorageBackend, TieredCacheBackend};
use crate::error::{Error, Result};

/// Reference (DRAM-speed) cost parameters of the simulated clock.
///
/// A contiguous transfer of `n` bytes on a tier with multiplier `λ` costs
/// `λ * (n / reference_bandwidth + op_latency)` seconds; a flush costs
/// `λ * flush_latency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    /// Bytes per second.
    pub reference_bandwidth: f64,
    /// Seconds per contiguous transfer.
    pub op_latency: f64,
    /// Seconds per flush.
    pub flush_latency: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        Self {
            reference_bandwidth: 10e9,
            op_latency: 100e-9,
            flush_latency: 1e-6,
        }
    }
}

impl LatencyParams {
    pub fn transfer_picos(&self, multiplier: f64, bytes: usize) -> u64 {
        seconds_to_picos(multiplier * (bytes as f64 / self.reference_bandwidth + self.op_latency))
    }

    pub fn flush_picos(&self, multiplier: f64) -> u64 {
        seconds_to_picos(multiplier * self.flush_latency)
    }

    fn validate(&self) -> Result<()> {
        if !(self.reference_bandwidth > 0.0 && self.reference_bandwidth.is_finite()) {
            return Err(Error::Config("reference_bandwidth must be positive".into()));
        }
        if !(self.op_latency >= 0.0 && self.flush_latency >= 0.0) {
            return Err(Error::Config("latencies must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Plain DRAM. When `account_latency` is set the simulated clock charges the
/// reference cost of every transfer (multiplier 1), which is the baseline the
/// persistent-memory ratios are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InMemoryConfig {
    pub account_latency: bool,
    pub capacity_bytes: Option<u64>,
    pub latency: LatencyParams,
}

impl Default for InMemoryConfig {
    fn default() -> Self {
        Self {
            account_latency: true,
            capacity_bytes: None,
            latency: LatencyParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappedFileConfig {
    /// Directory holding `<name>.arr` files; a private temporary directory when unset.
    pub dir: Option<PathBuf>,
    pub flush_each_write: bool,
}

/// Direct-access persistent memory. Filesystem- and device-managed modes share
/// one model and differ only by label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PmemMode {
    #[default]
    FsDax,
    DevDax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmemConfig {
    pub mode: PmemMode,
    pub latency_multiplier: f64,
    /// Simulated seconds charged per allocation (crash-consistent heap allocation).
    pub alloc_penalty: f64,
    pub capacity_bytes: Option<u64>,
    pub latency: LatencyParams,
}

impl Default for PmemConfig {
    fn default() -> Self {
        Self {
            mode: PmemMode::FsDax,
            latency_multiplier: 3.0,
            alloc_penalty: 0.25,
            capacity_bytes: None,
            latency: LatencyParams::default(),
        }
    }
}

/// A DRAM-speed LRU block cache in front of a slower tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TieredCacheConfig {
    pub cache_capacity_bytes: u64,
    pub block_size_bytes: u64,
    pub backing: Box<BackendConfig>,
    pub latency: LatencyParams,
}

impl Default for TieredCacheConfig {
    fn default() -> Self {
        Self {
            cache_capacity_bytes: 64 << 20,
            block_size_bytes: 4096,
            backing: Box::new(BackendConfig::SimulatedPMem(PmemConfig {
                alloc_penalty: 0.0,
                ..PmemConfig::default()
            })),
            latency: LatencyParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BackendConfig {
    InMemory(InMemoryConfig),
    MappedFile(MappedFileConfig),
    SimulatedPMem(PmemConfig),
    TieredCache(TieredCacheConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::InMemory(InMemoryConfig::default())
    }
}

impl BackendConfig {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::InMemory(_) => BackendKind::InMemory,
            BackendConfig::MappedFile(_) => BackendKind::MappedFile,
            BackendConfig::SimulatedPMem(_) => BackendKind::SimulatedPMem,
            BackendConfig::TieredCache(_) => BackendKind::TieredCache,
        }
    }

    /// Default label, following the memory configuration each kind models.
    pub fn label(&self) -> String {
        match self {
            BackendConfig::InMemory(_) => "DRAM".into(),
            BackendConfig::MappedFile(_) => "MMAP".into(),
            BackendConfig::SimulatedPMem(c) => match c.mode {
                PmemMode::FsDax => "FS-DAX".into(),
                PmemMode::DevDax => "Dev-DAX".into(),
            },
            BackendConfig::TieredCache(_) => "MemoryMode".into(),
        }
    }

    /// Latency multiplier of this tier relative to DRAM.
    pub fn latency_multiplier(&self) -> f64 {
        match self {
            BackendConfig::SimulatedPMem(c) => c.latency_multiplier,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackendConfig::InMemory(c) => c.latency.validate(),
            BackendConfig::MappedFile(_) => Ok(()),
            BackendConfig::SimulatedPMem(c) => {
                if !(c.latency_multiplier >= 1.0 && c.latency_multiplier.is_finite()) {
                    return Err(Error::Config(format!(
                        "latency_multiplier must be >= 1, got {}",
                        c.latency_multiplier
                    )));
                }
                if !(c.alloc_penalty >= 0.0 && c.alloc_penalty.is_finite()) {
                    return Err(Error::Config("alloc_penalty must be nonnegative".into()));
                }
                c.latency.validate()
            }
            BackendConfig::TieredCache(c) => {
                if c.block_size_bytes == 0 {
                    return Err(Error::Config("block_size_bytes must be positive".into()));
                }
                if c.cache_capacity_bytes < c.block_size_bytes {
                    return Err(Error::Config(format!(
                        "cache capacity {} is smaller than one {}-byte block",
                        c.cache_capacity_bytes, c.block_size_bytes
                    )));
                }
                if matches!(*c.backing, BackendConfig::TieredCache(_)) {
                    return Err(Error::Config("tiered caches cannot be nested".into()));
                }
                c.latency.validate()?;
                c.backing.validate()
            }
        }
    }

    pub fn build(&self) -> Result<Arc<dyn StorageBackend>> {
        self.validate()?;
        Ok(match self {
            BackendConfig::InMemory(c) => Arc::new(RamBackend::in_memory(c)),
            BackendConfig::MappedFile(c) => Arc::new(MappedFileBackend::new(c)?),
            BackendConfig::SimulatedPMem(c) => Arc::new(RamBackend::simulated_pmem(c)),
            BackendConfig::TieredCache(c) => Arc::new(TieredCacheBackend::new(c)?),
        })
    }
}

/// Parses a byte count with an optional `K`, `M` or `G` (binary) suffix.
fn parse_bytes(value: &str) -> Result<u64> {
    let v = value.trim();
    let (digits, shift) = match v.char_indices().last() {
        Some((i, 'k' | 'K')) => (&v[..i], 10),
        Some((i, 'm' | 'M')) => (&v[..i], 20),
        Some((i, 'g' | 'G')) => (&v[..i], 30),
        _ => (v, 0),
    };
    digits
        .trim()
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(1 << shift))
        .ok_or_else(|| Error::Config(format!("bad byte count `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad number `{value}` for `{key}`")))
}

/// Compact command-line form: `kind[:key=value,...]`.
///
/// | kind                         | keys                                   |
/// |------------------------------|----------------------------------------|
/// | `dram`, `inmemory`           | `capacity`                             |
/// | `mmap`, `mapped`             | `dir`, `flush_each_write`              |
/// | `pmem`, `fsdax`, `devdax`    | `lambda`, `alloc_penalty`, `capacity`  |
/// | `tiered`, `memorymode`       | `cache`, `block`, `lambda`             |
///
/// Byte counts accept `K`/`M`/`G` suffixes.
impl std::str::FromStr for BackendConfig {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let pairs = rest
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_owned()))
                    .ok_or_else(|| Error::Config(format!("expected key=value, got `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let unknown = |key: &str| Error::Config(format!("unknown key `{key}` for backend `{kind}`"));
        let mut config = match kind.trim().to_ascii_lowercase().as_str() {
            "dram" | "inmemory" => BackendConfig::InMemory(InMemoryConfig::default()),
            "mmap" | "mapped" | "mappedfile" => BackendConfig::MappedFile(MappedFileConfig::default()),
            "pmem" | "fsdax" | "simulatedpmem" => BackendConfig::SimulatedPMem(PmemConfig::default()),
            "devdax" => BackendConfig::SimulatedPMem(PmemConfig {
                mode: PmemMode::DevDax,
                ..PmemConfig::default()
            }),
            "tiered" | "memorymode" | "tieredcache" => {
                BackendConfig::TieredCache(TieredCacheConfig::default())
            }
            other => return Err(Error::Config(format!("unknown backend kind `{other}`"))),
        };
        for (key, value) in &pairs {
            match (&mut config, key.as_str()) {
                (BackendConfig::InMemory(c), "capacity") => c.capacity_bytes = Some(parse_bytes(value)?),
                (BackendConfig::MappedFile(c), "dir") => c.dir = Some(PathBuf::from(value)),
                (BackendConfig::MappedFile(c), "flush_each_write") => {
                    c.flush_each_write = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad boolean `{value}`")))?
                }
                (BackendConfig::SimulatedPMem(c), "lambda") => c.latency_multiplier = parse_f64(key, value)?,
                (BackendConfig::SimulatedPMem(c), "alloc_penalty") => c.alloc_penalty = parse_f64(key, value)?,
                (BackendConfig::SimulatedPMem(c), "capacity") => c.capacity_bytes = Some(parse_bytes(value)?),
                (BackendConfig::TieredCache(c), "cache") => c.cache_capacity_bytes = parse_bytes(value)?,
                (BackendConfig::TieredCache(c), "block") => c.block_size_bytes = parse_bytes(value)?,
                (BackendConfig::TieredCache(c), "lambda") => match c.backing.as_mut() {
                    BackendConfig::SimulatedPMem(p) => p.latency_multiplier = parse_f64(key, value)?,
                    _ => return Err(unknown(key)),
                },
                _ => return Err(unknown(key)),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

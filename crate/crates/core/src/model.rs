//! Network definitions for both decoders and the on-disk weights format.
//!
//! A weights file is a text manifest plus a sibling `<manifest>.bin` holding every
//! parameter as little-endian `f32`, in manifest order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{Mlp, MlpSpec, ParamStore, Real, Tensor};

const MAGIC: &str = "trafficgen-weights 1";
pub const PLACEMENT_PREFIX: &str = "placement";
pub const TRAJECTORY_PREFIX: &str = "trajectory";

/// Architecture hyperparameters shared by both networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width D.
    pub width: usize,
    pub blocks: usize,
    /// Hidden widths inside each encoder block MLP.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of every decoder head.
    pub head_hidden: Vec<usize>,
    /// Mixture components, also the number of trajectory modes.
    pub mixtures: usize,
    /// Waypoints per trajectory mode.
    pub future_steps: usize,
    /// Steps between the trajectory head's control points; waypoints in between are
    /// linear interpolations. 1 makes every waypoint a direct output.
    pub waypoint_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 1024,
            blocks: 5,
            encoder_hidden: vec![],
            head_hidden: vec![2048, 1024, 256],
            mixtures: 10,
            future_steps: 90,
            waypoint_stride: 1,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            width: 64,
            blocks: 5,
            encoder_hidden: vec![],
            head_hidden: vec![64],
            mixtures: 3,
            future_steps: 90,
            waypoint_stride: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0
            || self.blocks == 0
            || self.mixtures == 0
            || self.future_steps == 0
            || self.waypoint_stride == 0
        {
            return Err(Error::Config(
                "width, blocks, mixtures, future_steps and waypoint_stride must be positive".into(),
            ));
        }
        if self.encoder_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            width: self.width,
            blocks: self.blocks,
            hidden: self.encoder_hidden.clone(),
        }
    }

    /// Control points per trajectory mode.
    pub fn control_points(&self) -> usize {
        self.future_steps.div_ceil(self.waypoint_stride)
    }

    fn head(&self, input: usize, output: usize) -> MlpSpec {
        MlpSpec::new(input, &self.head_hidden, output)
    }

    fn to_line(&self) -> String {
        let list = |v: &[usize]| {
            if v.is_empty() {
                "-".to_string()
            } else {
                v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            }
        };
        format!(
            "width={} blocks={} encoder_hidden={} head_hidden={} mixtures={} future_steps={} waypoint_stride={}",
            self.width,
            self.blocks,
            list(&self.encoder_hidden),
            list(&self.head_hidden),
            self.mixtures,
            self.future_steps,
            self.waypoint_stride
        )
    }

    fn from_tokens<'a>(tokens: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let bad = |t: &str| Error::Config(format!("bad config token `{t}`"));
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(tok))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(tok));
            let list = |v: &str| -> Result<Vec<usize>> {
                if v == "-" {
                    Ok(vec![])
                } else {
                    v.split(',').map(num).collect()
                }
            };
            match k {
                "width" => cfg.width = num(v)?,
                "blocks" => cfg.blocks = num(v)?,
                "encoder_hidden" => cfg.encoder_hidden = list(v)?,
                "head_hidden" => cfg.head_hidden = list(v)?,
                "mixtures" => cfg.mixtures = num(v)?,
                "future_steps" => cfg.future_steps = num(v)?,
                "waypoint_stride" => cfg.waypoint_stride = num(v)?,
                _ => return Err(bad(tok)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Encoder plus occupancy and attribute heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub place: Mlp,
    pub pos: Mlp,
    pub heading: Mlp,
    pub speed: Mlp,
    pub size: Mlp,
}

impl PlacementNet {
    fn head_specs(cfg: &ModelConfig) -> [(&'static str, MlpSpec); 5] {
        let (d, k) = (cfg.width, cfg.mixtures);
        [
            ("place", cfg.head(d, 1)),
            ("pos", cfg.head(d, 6 * k)),
            ("heading", cfg.head(d, 3 * k)),
            ("speed", cfg.head(d, 3 * k)),
            ("size", cfg.head(d, 6 * k)),
        ]
    }

    fn assemble(config: ModelConfig, encoder: Encoder, mut heads: Vec<Mlp>) -> Self {
        let size = heads.pop().unwrap();
        let speed = heads.pop().unwrap();
        let heading = heads.pop().unwrap();
        let pos = heads.pop().unwrap();
        let place = heads.pop().unwrap();
        PlacementNet {
            config,
            encoder,
            place,
            pos,
            heading,
            speed,
            size,
        }
    }

    pub fn new<T: Real>(store: &mut ParamStore<T>, config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PLACEMENT_PREFIX;
        let encoder = Encoder::new(store, &format!("{p}.encoder"), config.encoder(), &mut rng);
        let heads = Self::head_specs(&config)
            .into_iter()
            .map(|(name, spec)| Mlp::new(store, &format!("{p}.{name}"), spec, &mut rng))
            .collect();
        Self::assemble(config, encoder, heads)
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, config: ModelConfig) -> Result<Self> {
        let p = PLACEMENT_PREFIX;
        let encoder = Encoder::bind(store, &format!("{p}.encoder"), config.encoder())?;
        let heads = Self::head_specs(&config)
            .into_iter()
            .map(|(name, spec)| Mlp::bind(store, &format!("{p}.{name}"), spec))
            .collect::<Result<_>>()?;
        Ok(Self::assemble(config, encoder, heads))
    }
}

/// Encoder plus a head mapping (region embedding, context) to K waypoint modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: Mlp,
}

impl TrajectoryNet {
    fn head_spec(cfg: &ModelConfig) -> MlpSpec {
        cfg.head(2 * cfg.width, cfg.mixtures * (2 * cfg.control_points() + 1))
    }

    pub fn new<T: Real>(store: &mut ParamStore<T>, config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TRAJECTORY_PREFIX;
        let encoder = Encoder::new(store, &format!("{p}.encoder"), config.encoder(), &mut rng);
        let head = Mlp::new(store, &format!("{p}.head"), Self::head_spec(&config), &mut rng);
        TrajectoryNet { config, encoder, head }
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, config: ModelConfig) -> Result<Self> {
        let p = TRAJECTORY_PREFIX;
        let encoder = Encoder::bind(store, &format!("{p}.encoder"), config.encoder())?;
        let head = Mlp::bind(store, &format!("{p}.head"), Self::head_spec(&config))?;
        Ok(TrajectoryNet { config, encoder, head })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementModel {
    pub net: PlacementNet,
    pub params: ParamStore<f32>,
}

impl PlacementModel {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let net = PlacementNet::new(&mut params, config, seed);
        PlacementModel { net, params }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub net: TrajectoryNet,
    pub params: ParamStore<f32>,
}

impl TrajectoryModel {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let net = TrajectoryNet::new(&mut params, config, seed);
        TrajectoryModel { net, params }
    }
}

/// Everything stored in one weights file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights {
    pub placement: Option<PlacementModel>,
    pub trajectory: Option<TrajectoryModel>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl Weights {
    pub fn placement(&self, path: &Path) -> Result<&PlacementModel> {
        self.placement.as_ref().ok_or_else(|| Error::Weights {
            path: path.to_path_buf(),
            detail: "no placement network in this file".into(),
        })
    }

    pub fn trajectory(&self, path: &Path) -> Result<&TrajectoryModel> {
        self.trajectory.as_ref().ok_or_else(|| Error::Weights {
            path: path.to_path_buf(),
            detail: "no trajectory network in this file".into(),
        })
    }

    /// Manifest text and blob bytes.
    pub fn encode(&self) -> (String, Vec<u8>) {
        let mut manifest = format!("{MAGIC}\n");
        let mut blob = Vec::new();
        let mut stores = Vec::new();
        if let Some(m) = &self.placement {
            let _ = writeln!(manifest, "config {PLACEMENT_PREFIX} {}", m.net.config.to_line());
            stores.push(&m.params);
        }
        if let Some(m) = &self.trajectory {
            let _ = writeln!(manifest, "config {TRAJECTORY_PREFIX} {}", m.net.config.to_line());
            stores.push(&m.params);
        }
        for store in stores {
            for (name, t) in store.iter() {
                let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                let _ = writeln!(manifest, "param {name} {}", dims.join(" "));
                for &x in t.data() {
                    blob.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        (manifest, blob)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (manifest, blob) = self.encode();
        fs::write(path, manifest).map_err(|e| Error::io(path, e))?;
        let bin = blob_path(path);
        fs::write(&bin, blob).map_err(|e| Error::io(bin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bin = blob_path(path);
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::decode(&manifest, &blob).map_err(|e| match e {
            Error::Config(detail) => Error::Weights {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn decode(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Config("not a weights manifest".into()));
        }
        let mut configs: Vec<(String, ModelConfig)> = Vec::new();
        let mut params: Vec<(String, Vec<usize>)> = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("config") => {
                    let which = tok.next().ok_or_else(|| Error::Config(format!("bad line `{line}`")))?;
                    configs.push((which.to_string(), ModelConfig::from_tokens(tok)?));
                }
                Some("param") => {
                    let name = tok.next().ok_or_else(|| Error::Config(format!("bad line `{line}`")))?;
                    let shape = tok
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Config(format!("bad shape in `{line}`")))?;
                    if shape.is_empty() || shape.len() > 3 {
                        return Err(Error::Config(format!("bad shape in `{line}`")));
                    }
                    params.push((name.to_string(), shape));
                }
                _ => return Err(Error::Config(format!("unrecognized manifest line `{line}`"))),
            }
        }
        let expected: usize = params.iter().map(|(_, s)| s.iter().product::<usize>() * 4).sum();
        if blob.len() != expected {
            return Err(Error::Config(format!(
                "blob holds {} bytes, manifest describes {expected}",
                blob.len()
            )));
        }

        let mut stores: Vec<(String, ParamStore<f32>)> = Vec::new();
        let mut offset = 0;
        for (name, shape) in params {
            let n: usize = shape.iter().product();
            let data = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            let prefix = name.split('.').next().unwrap_or_default().to_string();
            match stores.iter_mut().find(|(p, _)| *p == prefix) {
                Some((_, s)) => {
                    s.add(name, Tensor::new(&shape, data));
                }
                None => {
                    let mut s = ParamStore::new();
                    s.add(name, Tensor::new(&shape, data));
                    stores.push((prefix, s));
                }
            }
        }

        let mut weights = Weights::default();
        for (which, config) in configs {
            let store = stores
                .iter()
                .position(|(p, _)| *p == which)
                .map(|i| stores.swap_remove(i).1)
                .unwrap_or_default();
            match which.as_str() {
                PLACEMENT_PREFIX => {
                    let net = PlacementNet::bind(&store, config)?;
                    weights.placement = Some(PlacementModel { net, params: store });
                }
                TRAJECTORY_PREFIX => {
                    let net = TrajectoryNet::bind(&store, config)?;
                    weights.trajectory = Some(TrajectoryModel { net, params: store });
                }
                other => return Err(Error::Config(format!("unknown network `{other}`"))),
            }
        }
        if let Some((p, _)) = stores.first() {
            return Err(Error::Config(format!("parameters under `{p}` have no config line")));
        }
        Ok(weights)
    }
}

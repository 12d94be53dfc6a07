use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial encoder variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoder {
    /// Channels folded onto the electrode grid and filtered with square
    /// patches, then the patches are merged.
    Spatial3d,
    /// One kernel spanning every channel, no grid reshape.
    Spatial2d,
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoder::Spatial3d => "spatial3d",
            Encoder::Spatial2d => "spatial2d",
        })
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial3d" | "3d" => Ok(Encoder::Spatial3d),
            "spatial2d" | "2d" => Ok(Encoder::Spatial2d),
            other => Err(Error::Config(format!("unknown encoder {other:?}"))),
        }
    }
}

/// `count` temporal kernels of length `len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelBank {
    pub len: usize,
    pub count: usize,
}

/// Parses `"32:32,512:32"` into kernel banks.
pub fn parse_kernel_banks(s: &str) -> Result<Vec<KernelBank>> {
    s.split(',')
        .map(|part| {
            let (len, count) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("kernel bank {part:?} is not len:count")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad number {v:?} in kernel bank {part:?}")))
            };
            Ok(KernelBank {
                len: num(len)?,
                count: num(count)?,
            })
        })
        .collect()
}

pub fn format_kernel_banks(banks: &[KernelBank]) -> String {
    banks
        .iter()
        .map(|b| format!("{}:{}", b.len, b.count))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel_banks: Vec<KernelBank>,
    pub encoder: Encoder,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub t_active: usize,
    pub n_classes: usize,
    pub fusion_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub fusion_channels: usize,
    /// Spatial kernels per temporal map.
    pub spatial_multiplier: usize,
    pub tcn_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kernel_banks: vec![
                KernelBank { len: 32, count: 32 },
                KernelBank {
                    len: 512,
                    count: 32,
                },
            ],
            encoder: Encoder::Spatial3d,
            grid_rows: 8,
            grid_cols: 16,
            t_active: 300,
            n_classes: 6,
            fusion_kernel: 16,
            pool1: 4,
            pool2: 8,
            fusion_channels: 16,
            spatial_multiplier: 2,
            tcn_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn with_banks(banks: &[(usize, usize)]) -> Self {
        ModelConfig {
            kernel_banks: banks
                .iter()
                .map(|&(len, count)| KernelBank { len, count })
                .collect(),
            ..ModelConfig::default()
        }
    }

    pub fn n_tcn(&self) -> usize {
        self.kernel_banks.iter().map(|b| b.count).sum()
    }

    pub fn n_channels(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Feature maps after the spatial encoder.
    pub fn encoder_channels(&self) -> usize {
        self.n_tcn() * self.spatial_multiplier
    }

    pub fn pooled_len(&self) -> usize {
        self.t_active / self.pool1 / self.pool2
    }

    pub fn fc_inputs(&self) -> usize {
        self.fusion_channels * self.pooled_len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel_banks.is_empty() || self.n_tcn() == 0 {
            return bad("at least one temporal kernel is required".into());
        }
        for (i, b) in self.kernel_banks.iter().enumerate() {
            if b.len == 0 || b.count == 0 {
                return bad(format!(
                    "kernel bank {}:{} must have positive length and count",
                    b.len, b.count
                ));
            }
            if self.kernel_banks[..i].iter().any(|o| o.len == b.len) {
                return bad(format!("kernel length {} listed twice", b.len));
            }
        }
        let positive = [
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
            ("t_active", self.t_active),
            ("n_classes", self.n_classes),
            ("fusion_kernel", self.fusion_kernel),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
            ("fusion_channels", self.fusion_channels),
            ("spatial_multiplier", self.spatial_multiplier),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.encoder == Encoder::Spatial3d && self.grid_cols % self.grid_rows != 0 {
            return bad(format!(
                "3-D encoder tiles the grid with {r}x{r} patches; {c} columns is not a multiple of {r}",
                r = self.grid_rows,
                c = self.grid_cols
            ));
        }
        if self.pooled_len() == 0 {
            return bad(format!(
                "time length {} vanishes after pooling by {} and {}",
                self.t_active, self.pool1, self.pool2
            ));
        }
        Ok(())
    }

    /// Flat `key = value` text, one field per line.
    pub fn to_text(&self) -> String {
        format!(
            "n_tcn = {}\nkernel_lengths = {}\nencoder = {}\ngrid_rows = {}\ngrid_cols = {}\n\
             t_active = {}\nn_classes = {}\nfusion_kernel = {}\npool1 = {}\npool2 = {}\n\
             fusion_channels = {}\nspatial_multiplier = {}\ntcn_bias = {}\n",
            self.n_tcn(),
            format_kernel_banks(&self.kernel_banks),
            self.encoder,
            self.grid_rows,
            self.grid_cols,
            self.t_active,
            self.n_classes,
            self.fusion_kernel,
            self.pool1,
            self.pool2,
            self.fusion_channels,
            self.spatial_multiplier,
            self.tcn_bias
        )
    }

    /// Parses [`ModelConfig::to_text`] output. Missing keys keep their
    /// defaults; `n_tcn`, when present, must equal the kernel count.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut n_tcn = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let int = || {
                value.parse::<usize>().map_err(|_| {
                    Error::Config(format!("line {}: {key} needs an integer", lineno + 1))
                })
            };
            match key {
                "n_tcn" => n_tcn = Some(int()?),
                "kernel_lengths" => cfg.kernel_banks = parse_kernel_banks(value)?,
                "encoder" => cfg.encoder = value.parse()?,
                "grid_rows" => cfg.grid_rows = int()?,
                "grid_cols" => cfg.grid_cols = int()?,
                "t_active" => cfg.t_active = int()?,
                "n_classes" => cfg.n_classes = int()?,
                "fusion_kernel" => cfg.fusion_kernel = int()?,
                "pool1" => cfg.pool1 = int()?,
                "pool2" => cfg.pool2 = int()?,
                "fusion_channels" => cfg.fusion_channels = int()?,
                "spatial_multiplier" => cfg.spatial_multiplier = int()?,
                "tcn_bias" => {
                    cfg.tcn_bias = value.parse().map_err(|_| {
                        Error::Config(format!("line {}: tcn_bias needs true/false", lineno + 1))
                    })?
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if let Some(n) = n_tcn {
            if n != cfg.n_tcn() {
                return Err(Error::Config(format!(
                    "n_tcn = {n} but kernel_lengths sum to {}",
                    cfg.n_tcn()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::tensor::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }
}

//! The bi-band network: a bank of channel-wise temporal kernels, a spatial
//! encoder over the electrode grid, a temporal fusion block and a linear
//! classifier.
//!
//! Two evaluation plans compute the same function. [`ForwardPlan::Layered`]
//! follows the layer listing literally and materialises the full
//! `[n_tcn, channels, time]` feature volume. [`ForwardPlan::Fused`] uses the
//! fact that the temporal kernels and the spatial kernels (temporal extent 1)
//! are both linear and therefore commute: it applies the spatial encoder to
//! the raw trial first and then one temporal kernel per encoder map, folding
//! every bias into a single per-channel constant. The fused plan is roughly
//! sixty times cheaper and is what training uses.

mod config;

use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{format_kernel_banks, parse_kernel_banks, Encoder, KernelBank, ModelConfig};

use crate::error::{shape_err, Error, Result};
use crate::tensor::ops::{
    add, add_channel_bias, avg_pool_temporal, batch_norm, concat, conv_depthwise_temporal,
    conv_grouped, conv_temporal, elu, linear, mul, narrow, repeat_interleave, reshape, sub,
    BatchNormConfig, BatchNormStats, Mode, Stride3,
};
use crate::tensor::{read_checkpoint, write_checkpoint, Element, NamedArray, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardPlan {
    Layered,
    #[default]
    Fused,
}

/// Output shape of one stage, batch axis included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub stage: &'static str,
    pub shape: Vec<usize>,
}

struct Param<T: Element> {
    name: String,
    tensor: Tensor<T>,
}

pub struct Model<T: Element = f32> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    bn_encoder: Mutex<BatchNormStats<T>>,
    bn_fusion: Mutex<BatchNormStats<T>>,
    bn_cfg: BatchNormConfig,
    plan: ForwardPlan,
}

impl<T: Element> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: Tensor::parameter(p.tensor.shape(), p.tensor.to_vec())
                        .expect("valid shape"),
                })
                .collect(),
            bn_encoder: Mutex::new(self.bn_encoder.lock().expect("stats lock").clone()),
            bn_fusion: Mutex::new(self.bn_fusion.lock().expect("stats lock").clone()),
            bn_cfg: self.bn_cfg,
            plan: self.plan,
        }
    }
}

fn bank_weight(len: usize) -> String {
    format!("bcwt.k{len}.weight")
}

fn bank_bias(len: usize) -> String {
    format!("bcwt.k{len}.bias")
}

/// Parameter names, shapes and initialisation fan-in (0 for biases and
/// normalisation offsets, which start at zero; `None` for scales, which start
/// at one).
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Option<usize>)> {
    let mut out = Vec::new();
    for b in &cfg.kernel_banks {
        out.push((bank_weight(b.len), vec![b.count, b.len], Some(b.len)));
        if cfg.tcn_bias {
            out.push((bank_bias(b.len), vec![b.count], Some(0)));
        }
    }
    let enc = cfg.encoder_channels();
    match cfg.encoder {
        Encoder::Spatial3d => {
            let r = cfg.grid_rows;
            let patches = cfg.grid_cols / r;
            out.push((
                "encoder.spatial.weight".into(),
                vec![enc, 1, r, r, 1],
                Some(r * r),
            ));
            out.push(("encoder.spatial.bias".into(), vec![enc], Some(0)));
            out.push((
                "encoder.merge.weight".into(),
                vec![enc, 1, 1, patches, 1],
                Some(patches),
            ));
            out.push(("encoder.merge.bias".into(), vec![enc], Some(0)));
        }
        Encoder::Spatial2d => {
            let c = cfg.n_channels();
            out.push((
                "encoder.spatial.weight".into(),
                vec![enc, 1, c, 1, 1],
                Some(c),
            ));
            out.push(("encoder.spatial.bias".into(), vec![enc], Some(0)));
        }
    }
    out.push(("encoder.bn.gamma".into(), vec![enc], None));
    out.push(("encoder.bn.beta".into(), vec![enc], Some(0)));
    let fk = cfg.fusion_kernel;
    out.push((
        "fusion.temporal.weight".into(),
        vec![enc, 1, 1, 1, fk],
        Some(fk),
    ));
    out.push(("fusion.temporal.bias".into(), vec![enc], Some(0)));
    let f = cfg.fusion_channels;
    out.push((
        "fusion.pointwise.weight".into(),
        vec![f, enc, 1, 1, 1],
        Some(enc),
    ));
    out.push(("fusion.pointwise.bias".into(), vec![f], Some(0)));
    out.push(("fusion.bn.gamma".into(), vec![f], None));
    out.push(("fusion.bn.beta".into(), vec![f], Some(0)));
    out.push((
        "fc.weight".into(),
        vec![cfg.n_classes, cfg.fc_inputs()],
        Some(cfg.fc_inputs()),
    ));
    out.push(("fc.bias".into(), vec![cfg.n_classes], Some(0)));
    out
}

impl<T: Element> Model<T> {
    /// Builds a model with weights drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// in a fixed order from a ChaCha8 stream seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = match fan_in {
                    None => vec![T::one(); n],
                    Some(0) => vec![T::zero(); n],
                    Some(fan) => {
                        let a = 1.0 / (fan as f64).sqrt();
                        (0..n)
                            .map(|_| T::from_f64_lossy(rng.random_range(-a..a)))
                            .collect()
                    }
                };
                Ok(Param {
                    name,
                    tensor: Tensor::parameter(&shape, data)?,
                })
            })
            .collect::<Result<_>>()?;
        let enc = config.encoder_channels();
        let fusion = config.fusion_channels;
        Ok(Model {
            config,
            params,
            bn_encoder: Mutex::new(BatchNormStats::new(enc)),
            bn_fusion: Mutex::new(BatchNormStats::new(fusion)),
            bn_cfg: BatchNormConfig::default(),
            plan: ForwardPlan::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> ForwardPlan {
        self.plan
    }

    pub fn set_plan(&mut self, plan: ForwardPlan) {
        self.plan = plan;
    }

    /// Number of trainable scalars: kernels, biases and normalisation scales
    /// and offsets. Running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.params.iter().map(|p| &p.tensor).collect()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Config(format!("model has no parameter {name:?}")))
    }

    /// Replaces every parameter's values, in [`Model::param_names`] order.
    pub fn set_param_values(&mut self, values: Vec<Vec<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(shape_err!(
                "{} value buffers for {} parameters",
                values.len(),
                self.params.len()
            ));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.tensor = Tensor::parameter(p.tensor.shape(), v)?;
        }
        Ok(())
    }

    pub fn running_stats(&self) -> (BatchNormStats<T>, BatchNormStats<T>) {
        (
            self.bn_encoder.lock().expect("stats lock").clone(),
            self.bn_fusion.lock().expect("stats lock").clone(),
        )
    }

    /// Logits `[B, n_classes]` for `input [B, 1, channels, time]`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.run(input, mode, self.plan, None)
    }

    /// Runs the layered plan and records the output shape of every stage.
    pub fn forward_traced(
        &self,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<TraceEntry>)> {
        let mut trace = Vec::new();
        let out = self.run(input, mode, ForwardPlan::Layered, Some(&mut trace))?;
        Ok((out, trace))
    }

    pub fn forward_with_plan(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        plan: ForwardPlan,
    ) -> Result<Tensor<T>> {
        self.run(input, mode, plan, None)
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        plan: ForwardPlan,
        mut trace: Option<&mut Vec<TraceEntry>>,
    ) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (ch, t) = (cfg.n_channels(), cfg.t_active);
        if input.rank() != 4
            || input.shape()[1] != 1
            || input.shape()[2] != ch
            || input.shape()[3] != t
        {
            return Err(shape_err!(
                "model expects [B, 1, {ch}, {t}], got {:?}",
                input.shape()
            ));
        }
        let mut note = |stage: &'static str, x: &Tensor<T>| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEntry {
                    stage,
                    shape: x.shape().to_vec(),
                });
            }
        };
        let encoded = match plan {
            ForwardPlan::Layered => self.encode_layered(input, &mut note)?,
            ForwardPlan::Fused => self.encode_fused(input)?,
        };

        let x = {
            let mut stats = self.bn_encoder.lock().expect("stats lock");
            batch_norm(
                &encoded,
                self.param("encoder.bn.gamma")?,
                self.param("encoder.bn.beta")?,
                &mut stats,
                mode,
                self.bn_cfg,
            )?
        };
        let x = avg_pool_temporal(&elu(&x), cfg.pool1)?;
        note("encoder.pool", &x);

        let enc = cfg.encoder_channels();
        let kernels = reshape(
            self.param("fusion.temporal.weight")?,
            &[enc, cfg.fusion_kernel],
        )?;
        let x = conv_depthwise_temporal(&x, &kernels, Some(self.param("fusion.temporal.bias")?))?;
        let x = conv_grouped(
            &x,
            self.param("fusion.pointwise.weight")?,
            Some(self.param("fusion.pointwise.bias")?),
            Stride3::UNIT,
            1,
        )?;
        note("fusion.pointwise", &x);
        let x = {
            let mut stats = self.bn_fusion.lock().expect("stats lock");
            batch_norm(
                &x,
                self.param("fusion.bn.gamma")?,
                self.param("fusion.bn.beta")?,
                &mut stats,
                mode,
                self.bn_cfg,
            )?
        };
        let x = avg_pool_temporal(&elu(&x), cfg.pool2)?;
        note("fusion.pool", &x);

        let batch = input.shape()[0];
        let x = reshape(&x, &[batch, cfg.fc_inputs()])?;
        note("flatten", &x);
        let logits = linear(&x, self.param("fc.weight")?, self.param("fc.bias")?)?;
        note("fc", &logits);
        Ok(logits)
    }

    /// Temporal bank, then the spatial encoder, exactly as listed.
    fn encode_layered(
        &self,
        input: &Tensor<T>,
        note: &mut impl FnMut(&'static str, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (batch, ch, t) = (input.shape()[0], cfg.n_channels(), cfg.t_active);
        let n = cfg.n_tcn();
        let rows = reshape(input, &[batch, ch, t])?;
        let mut maps = Vec::with_capacity(n);
        for b in &cfg.kernel_banks {
            let w = self.param(&bank_weight(b.len))?;
            for j in 0..b.count {
                let kernel = reshape(&narrow(w, 0, j, 1)?, &[b.len])?;
                let bias = match cfg.tcn_bias {
                    true => Some(narrow(self.param(&bank_bias(b.len))?, 0, j, 1)?),
                    false => None,
                };
                let y = conv_temporal(&rows, &kernel, bias.as_ref())?;
                maps.push(reshape(&y, &[batch, 1, ch, t])?);
            }
        }
        let volume = concat(&maps.iter().collect::<Vec<_>>(), 1)?;
        note("bcwt", &volume);

        match cfg.encoder {
            Encoder::Spatial3d => {
                let r = cfg.grid_rows;
                let grid = reshape(&volume, &[batch, n, r, cfg.grid_cols, t])?;
                note("grid", &grid);
                let x = conv_grouped(
                    &grid,
                    self.param("encoder.spatial.weight")?,
                    Some(self.param("encoder.spatial.bias")?),
                    Stride3::new(r, r, 1),
                    n,
                )?;
                note("encoder.spatial", &x);
                let x = conv_grouped(
                    &x,
                    self.param("encoder.merge.weight")?,
                    Some(self.param("encoder.merge.bias")?),
                    Stride3::UNIT,
                    cfg.encoder_channels(),
                )?;
                note("encoder.merge", &x);
                Ok(x)
            }
            Encoder::Spatial2d => {
                let column = reshape(&volume, &[batch, n, ch, 1, t])?;
                let x = conv_grouped(
                    &column,
                    self.param("encoder.spatial.weight")?,
                    Some(self.param("encoder.spatial.bias")?),
                    Stride3::UNIT,
                    n,
                )?;
                note("encoder.spatial", &x);
                Ok(x)
            }
        }
    }

    /// Linear part of the spatial encoder on a single-map input, optionally
    /// with its biases.
    fn spatial(&self, x: &Tensor<T>, with_bias: bool) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let bias = |name: &str| -> Result<Option<&Tensor<T>>> {
            Ok(if with_bias {
                Some(self.param(name)?)
            } else {
                None
            })
        };
        match cfg.encoder {
            Encoder::Spatial3d => {
                let r = cfg.grid_rows;
                let x = conv_grouped(
                    x,
                    self.param("encoder.spatial.weight")?,
                    bias("encoder.spatial.bias")?,
                    Stride3::new(r, r, 1),
                    1,
                )?;
                conv_grouped(
                    &x,
                    self.param("encoder.merge.weight")?,
                    bias("encoder.merge.bias")?,
                    Stride3::UNIT,
                    cfg.encoder_channels(),
                )
            }
            Encoder::Spatial2d => conv_grouped(
                x,
                self.param("encoder.spatial.weight")?,
                bias("encoder.spatial.bias")?,
                Stride3::UNIT,
                1,
            ),
        }
    }

    fn grid_shape(&self, batch: usize, t: usize) -> [usize; 5] {
        let cfg = &self.config;
        match cfg.encoder {
            Encoder::Spatial3d => [batch, 1, cfg.grid_rows, cfg.grid_cols, t],
            Encoder::Spatial2d => [batch, 1, cfg.n_channels(), 1, t],
        }
    }

    /// Spatial encoder on the raw trial, then the temporal kernels.
    fn encode_fused(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let batch = input.shape()[0];
        let m = cfg.spatial_multiplier;
        let enc = cfg.encoder_channels();
        let spatial = self.spatial(
            &reshape(input, &self.grid_shape(batch, cfg.t_active))?,
            false,
        )?;

        let mut parts = Vec::with_capacity(cfg.kernel_banks.len());
        let mut offset = 0;
        for b in &cfg.kernel_banks {
            let kernels = repeat_interleave(self.param(&bank_weight(b.len))?, m)?;
            let part = narrow(&spatial, 1, offset, b.count * m)?;
            parts.push(conv_depthwise_temporal(&part, &kernels, None)?);
            offset += b.count * m;
        }
        let filtered = concat(&parts.iter().collect::<Vec<_>>(), 1)?;

        // Every bias upstream of the temporal kernels is constant in time,
        // so it reaches each encoder map as an affine function of the
        // temporal-bank bias feeding that map.
        let unit = self.grid_shape(1, 1);
        let at_zero = reshape(&self.spatial(&Tensor::zeros(&unit)?, true)?, &[enc])?;
        let bias = if cfg.tcn_bias {
            let at_one = reshape(&self.spatial(&Tensor::ones(&unit)?, true)?, &[enc])?;
            let tcn: Vec<&Tensor<T>> = cfg
                .kernel_banks
                .iter()
                .map(|b| self.param(&bank_bias(b.len)))
                .collect::<Result<_>>()?;
            let tcn = repeat_interleave(&concat(&tcn, 0)?, m)?;
            add(&at_zero, &mul(&tcn, &sub(&at_one, &at_zero)?)?)?
        } else {
            at_zero
        };
        add_channel_bias(&filtered, &bias)
    }

    /// Parameters followed by running statistics, as checkpoint arrays.
    pub fn to_named_arrays(&self) -> Vec<NamedArray> {
        let to_f32 = |v: &[T]| {
            v.iter()
                .map(|x| x.to_f32().expect("finite"))
                .collect::<Vec<f32>>()
        };
        let mut out: Vec<NamedArray> = self
            .params
            .iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: to_f32(p.tensor.data()),
            })
            .collect();
        let (enc, fusion) = self.running_stats();
        for (prefix, stats) in [("encoder.bn", enc), ("fusion.bn", fusion)] {
            out.push(NamedArray {
                name: format!("{prefix}.running_mean"),
                shape: vec![stats.mean.len()],
                data: to_f32(&stats.mean),
            });
            out.push(NamedArray {
                name: format!("{prefix}.running_var"),
                shape: vec![stats.var.len()],
                data: to_f32(&stats.var),
            });
        }
        out
    }

    /// Loads arrays written by [`Model::to_named_arrays`] for the same config.
    pub fn load_named_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        let find = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let a = arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if a.shape != shape {
                return Err(Error::Format(format!(
                    "checkpoint {name} has shape {:?}, model expects {shape:?}",
                    a.shape
                )));
            }
            Ok(a.data
                .iter()
                .map(|&v| T::from_f32(v).expect("finite"))
                .collect())
        };
        let values = self
            .params
            .iter()
            .map(|p| find(&p.name, p.tensor.shape()))
            .collect::<Result<Vec<_>>>()?;
        let (enc, fusion) = (self.config.encoder_channels(), self.config.fusion_channels);
        let enc_stats = BatchNormStats {
            mean: find("encoder.bn.running_mean", &[enc])?,
            var: find("encoder.bn.running_var", &[enc])?,
        };
        let fusion_stats = BatchNormStats {
            mean: find("fusion.bn.running_mean", &[fusion])?,
            var: find("fusion.bn.running_var", &[fusion])?,
        };
        let known = self.params.len() + 4;
        if arrays.len() != known {
            return Err(Error::Format(format!(
                "checkpoint has {} arrays, model expects {known}",
                arrays.len()
            )));
        }
        self.set_param_values(values)?;
        *self.bn_encoder.lock().expect("stats lock") = enc_stats;
        *self.bn_fusion.lock().expect("stats lock") = fusion_stats;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_named_arrays())
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        model.load_named_arrays(&read_checkpoint(path)?)?;
        Ok(model)
    }
}

//! The GLAFF plugin: an attention-based mapper from timestamp features to
//! observation space, a robust (median / quantile-range) denormalizer that
//! transports mappings onto each window's scale, and an adaptive combiner
//! that fuses the global mapping with the backbone's local prediction.

use crate::backbone::{Backbone, BackboneKind, DLinear, SeasonalNaive};
use crate::error::{Error, Result};
use crate::nn::{dropout, EncoderLayer, LayerNorm, Linear, Module};
use crate::rng::DetRng;
use crate::tensor::{Graph, Tensor};
use crate::timefeat::FeatureMode;

/// Stabilizer added symmetrically to both quantile ranges so constant
/// channels stay well-defined: scale = (σ + ε) / (σ̃ + ε).
pub const SCALE_EPS: f64 = 1e-8;

/// Hyperparameters and ablation switches for the plugin.
#[derive(Clone, Debug)]
pub struct GlaffConfig {
    pub dim: usize,
    pub dff: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub quantile: f64,
    pub feature_mode: FeatureMode,
    pub no_attention: bool,
    pub no_quantile: bool,
    pub no_adaptive: bool,
    pub no_backbone: bool,
}

impl Default for GlaffConfig {
    fn default() -> Self {
        GlaffConfig {
            dim: 512,
            dff: 2048,
            heads: 8,
            layers: 2,
            dropout: 0.1,
            quantile: 0.75,
            feature_mode: FeatureMode::Raw,
            no_attention: false,
            no_quantile: false,
            no_adaptive: false,
            no_backbone: false,
        }
    }
}

impl GlaffConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("mapper needs at least one block".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.quantile > 0.5 && self.quantile < 1.0) {
            return Err(Error::Config(format!(
                "quantile {} must lie strictly between 0.5 and 1",
                self.quantile
            )));
        }
        Ok(())
    }
}

/// One block of the equal-size MLP stack used by the `no_attention`
/// ablation: Linear d→w, GELU, Linear w→d, LayerNorm.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub expand: Linear,
    pub contract: Linear,
    pub norm: LayerNorm,
    dropout: f64,
}

impl MlpBlock {
    fn forward(&self, g: &mut Graph, x: &Tensor, train: bool, rng: &mut DetRng) -> Result<Tensor> {
        let hidden = self.expand.forward(g, x)?;
        let hidden = g.gelu(&hidden);
        let hidden = dropout(g, &hidden, self.dropout, train, rng)?;
        let out = self.contract.forward(g, &hidden)?;
        let out = dropout(g, &out, self.dropout, train, rng)?;
        self.norm.forward(g, &out)
    }
}

impl Module for MlpBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.expand.visit_params(&format!("{prefix}expand."), f);
        self.contract.visit_params(&format!("{prefix}contract."), f);
        self.norm.visit_params(&format!("{prefix}ln."), f);
    }
}

/// Hidden width for an MLP block whose parameter count matches one encoder
/// layer: 2dw + w + 3d ≈ 4d² + 2·d·dff + dff + 9d.
pub fn mlp_width_matching(dim: usize, dff: usize) -> usize {
    let num = 4 * dim * dim + 2 * dim * dff + dff + 6 * dim;
    let den = 2 * dim + 1;
    (num + den / 2) / den
}

#[derive(Clone, Debug)]
pub enum MapperStack {
    Attention(Vec<EncoderLayer>),
    Mlp(Vec<MlpBlock>),
}

/// Embedding → stacked blocks → final LayerNorm → projection.
#[derive(Clone, Debug)]
pub struct Mapper {
    pub embedding: Linear,
    pub stack: MapperStack,
    pub final_norm: LayerNorm,
    pub projection: Linear,
}

impl Mapper {
    pub fn new(config: &GlaffConfig, channels: usize, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let stack = if config.no_attention {
            let w = mlp_width_matching(d, config.dff);
            let blocks = (0..config.layers)
                .map(|_| MlpBlock {
                    expand: Linear::new(d, w, rng),
                    contract: Linear::new(w, d, rng),
                    norm: LayerNorm::new(d),
                    dropout: config.dropout,
                })
                .collect();
            MapperStack::Mlp(blocks)
        } else {
            let layers: Result<Vec<EncoderLayer>> = (0..config.layers)
                .map(|_| EncoderLayer::new(d, config.dff, config.heads, config.dropout, rng))
                .collect();
            MapperStack::Attention(layers?)
        };
        Ok(Mapper {
            embedding: Linear::new(6, d, rng),
            stack,
            final_norm: LayerNorm::new(d),
            projection: Linear::new(d, channels, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.projection.out_dim()
    }

    /// Map timestamp features [b, n, 6] to an initial mapping [b, n, c].
    /// The same parameters serve history and future windows.
    pub fn forward(
        &self,
        g: &mut Graph,
        feats: &Tensor,
        train: bool,
        rng: &mut DetRng,
    ) -> Result<Tensor> {
        if feats.shape().last() != Some(&6) {
            return Err(Error::Dimension {
                op: "map_timestamps",
                lhs: feats.shape().to_vec(),
                rhs: vec![6],
            });
        }
        let mut h = self.embedding.forward(g, feats)?;
        match &self.stack {
            MapperStack::Attention(layers) => {
                for layer in layers {
                    h = layer.forward(g, &h, train, rng)?;
                }
            }
            MapperStack::Mlp(blocks) => {
                for block in blocks {
                    h = block.forward(g, &h, train, rng)?;
                }
            }
        }
        let h = self.final_norm.forward(g, &h)?;
        self.projection.forward(g, &h)
    }
}

impl Module for Mapper {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embedding.visit_params(&format!("{prefix}emb."), f);
        match &mut self.stack {
            MapperStack::Attention(layers) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.visit_params(&format!("{prefix}enc{i}."), f);
                }
            }
            MapperStack::Mlp(blocks) => {
                for (i, block) in blocks.iter_mut().enumerate() {
                    block.visit_params(&format!("{prefix}mlp{i}."), f);
                }
            }
        }
        self.final_norm.visit_params(&format!("{prefix}norm."), f);
        self.projection.visit_params(&format!("{prefix}proj."), f);
    }
}

/// Window statistics used by the denormalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsKind {
    /// Median and quantile range (robust to tail contamination).
    Robust,
    /// Mean and standard deviation (the `no_quantile` ablation).
    MeanStd,
}

fn window_stats(
    g: &mut Graph,
    x: &Tensor,
    q: f64,
    kind: StatsKind,
) -> Result<(Tensor, Tensor)> {
    match kind {
        StatsKind::Robust => {
            let center = g.median_lower_axis1(x)?;
            let hi = g.quantile_axis1(x, q)?;
            let lo = g.quantile_axis1(x, 1.0 - q)?;
            let spread = g.sub(&hi, &lo)?;
            Ok((center, spread))
        }
        StatsKind::MeanStd => {
            let center = g.mean_axis1(x)?;
            let centered = g.sub(x, &center)?;
            let sq = g.mul(&centered, &centered)?;
            let var = g.mean_axis1(&sq)?;
            // tiny floor keeps the sqrt gradient finite on constant slices
            let var = g.add_scalar(&var, 1e-12);
            let spread = g.sqrt(&var);
            Ok((center, spread))
        }
    }
}

/// Inverse normalization of the initial mappings onto the observation scale:
/// X̂ = (X̃ − μ̃) · (σ + ε) / (σ̃ + ε) + μ, and likewise Ŷ.
///
/// Statistics of the observations enter as constants (no gradient flows into
/// the data); statistics of the mapping carry gradients into the mapper.
pub fn robust_denormalize(
    g: &mut Graph,
    x_map: &Tensor,
    y_map: &Tensor,
    x_obs: &Tensor,
    q: f64,
    kind: StatsKind,
) -> Result<(Tensor, Tensor)> {
    if kind == StatsKind::Robust && !(q > 0.5 && q < 1.0) {
        return Err(Error::Domain(format!(
            "quantile {q} must lie strictly between 0.5 and 1"
        )));
    }
    match x_map.shape() {
        [_, h, _] if *h >= 2 => {}
        other => {
            return Err(Error::Config(format!(
                "denormalizer needs history length >= 2, got shape {other:?}"
            )))
        }
    }
    let (map_center, map_spread) = window_stats(g, x_map, q, kind)?;
    let (obs_center, obs_spread) = window_stats(g, x_obs, q, kind)?;
    let num = g.add_scalar(&obs_spread, SCALE_EPS);
    let den = g.add_scalar(&map_spread, SCALE_EPS);
    let scale = g.div(&num, &den)?;
    let transport = |g: &mut Graph, m: &Tensor| -> Result<Tensor> {
        let centered = g.sub(m, &map_center)?;
        let scaled = g.mul(&centered, &scale)?;
        g.add(&scaled, &obs_center)
    };
    let x_hat = transport(g, x_map)?;
    let y_hat = transport(g, y_map)?;
    Ok((x_hat, y_hat))
}

/// The combiner MLP: history error → per-(sample, channel) fusion weights.
#[derive(Clone, Debug)]
pub struct Combiner {
    pub hidden: Linear,
    pub out: Linear,
}

impl Combiner {
    pub fn new(history: usize, dff: usize, rng: &mut DetRng) -> Self {
        Combiner {
            hidden: Linear::new(history, dff, rng),
            out: Linear::new(dff, 2, rng),
        }
    }

    pub fn history(&self) -> usize {
        self.hidden.in_dim()
    }

    /// Weights [b, c, 2] from the channel-major error [b, c, h]; rows sum
    /// to one via the trailing softmax.
    pub fn weights(&self, g: &mut Graph, error_t: &Tensor) -> Result<Tensor> {
        if error_t.shape().last() != Some(&self.history()) {
            return Err(Error::Dimension {
                op: "combine",
                lhs: error_t.shape().to_vec(),
                rhs: vec![self.history()],
            });
        }
        let hidden = self.hidden.forward(g, error_t)?;
        let hidden = g.gelu(&hidden);
        let logits = self.out.forward(g, &hidden)?;
        g.softmax_lastdim(&logits)
    }
}

impl Module for Combiner {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.hidden.visit_params(&format!("{prefix}hidden."), f);
        self.out.visit_params(&format!("{prefix}out."), f);
    }
}

/// Everything the composed forward pass produces, for diagnostics and tests.
#[derive(Debug)]
pub struct GlaffOutputs {
    pub x_map: Tensor,
    pub y_map: Tensor,
    pub x_hat: Tensor,
    pub y_hat: Tensor,
    /// Fusion weights [b, c, 2]; uniform 0.5 under `no_adaptive`, absent
    /// under `no_backbone`.
    pub weights: Option<Tensor>,
    pub prediction: Tensor,
}

/// Mapper + combiner behind one forward pass, parameterized by a config.
#[derive(Clone, Debug)]
pub struct GlaffPlugin {
    pub config: GlaffConfig,
    pub mapper: Mapper,
    pub combiner: Combiner,
    history: usize,
}

impl GlaffPlugin {
    pub fn new(
        config: GlaffConfig,
        history: usize,
        channels: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        config.validate()?;
        let mapper = Mapper::new(&config, channels, rng)?;
        let combiner = Combiner::new(history, config.dff, rng);
        Ok(GlaffPlugin {
            config,
            mapper,
            combiner,
            history,
        })
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn channels(&self) -> usize {
        self.mapper.channels()
    }

    /// The composed pass: map both windows, inverse-normalize, fuse with the
    /// backbone prediction (`local`). Under `no_backbone` the denormalized
    /// future mapping is the prediction and `local` is ignored.
    pub fn forward(
        &self,
        g: &mut Graph,
        x_obs: &Tensor,
        s_feat: &Tensor,
        t_feat: &Tensor,
        local: Option<&Tensor>,
        train: bool,
        rng: &mut DetRng,
    ) -> Result<GlaffOutputs> {
        let x_map = self.mapper.forward(g, s_feat, train, rng)?;
        let y_map = self.mapper.forward(g, t_feat, train, rng)?;
        let kind = if self.config.no_quantile {
            StatsKind::MeanStd
        } else {
            StatsKind::Robust
        };
        let (x_hat, y_hat) =
            robust_denormalize(g, &x_map, &y_map, x_obs, self.config.quantile, kind)?;

        if self.config.no_backbone {
            return Ok(GlaffOutputs {
                x_map,
                y_map,
                prediction: y_hat.clone(),
                x_hat,
                y_hat,
                weights: None,
            });
        }
        let local = local.ok_or_else(|| {
            Error::Usage("backbone prediction required unless no_backbone is set".into())
        })?;

        if self.config.no_adaptive {
            let half_map = g.mul_scalar(&y_hat, 0.5);
            let half_local = g.mul_scalar(local, 0.5);
            let prediction = g.add(&half_map, &half_local)?;
            let b = x_obs.shape()[0];
            let c = self.channels();
            let weights = Tensor::constant(vec![b, c, 2], vec![0.5; b * c * 2]);
            return Ok(GlaffOutputs {
                x_map,
                y_map,
                x_hat,
                y_hat,
                weights: Some(weights),
                prediction,
            });
        }

        // error in observation space, channel-major (Algorithm-1 sign: X − X̂)
        let error = g.sub(x_obs, &x_hat)?;
        let error_t = g.transpose_last2(&error)?;
        let weights = self.combiner.weights(g, &error_t)?;
        let w_map = g.slice_lastdim(&weights, 0, 1)?;
        let w_map = g.transpose_last2(&w_map)?; // [b, 1, c]
        let w_local = g.slice_lastdim(&weights, 1, 1)?;
        let w_local = g.transpose_last2(&w_local)?;
        let global_part = g.mul(&y_hat, &w_map)?;
        let local_part = g.mul(local, &w_local)?;
        let prediction = g.add(&global_part, &local_part)?;
        Ok(GlaffOutputs {
            x_map,
            y_map,
            x_hat,
            y_hat,
            weights: Some(weights),
            prediction,
        })
    }
}

impl Module for GlaffPlugin {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.mapper.visit_params(&format!("{prefix}mapper."), f);
        self.combiner.visit_params(&format!("{prefix}combiner."), f);
    }
}

/// A plugin (optional) around a backbone (optional): the trainable unit the
/// harness optimizes end to end. At least one of the two must be present.
pub struct GlaffModel {
    pub plugin: Option<GlaffPlugin>,
    pub backbone: Option<Box<dyn Backbone>>,
    pub freeze_backbone: bool,
    dropout_rng: DetRng,
}

impl GlaffModel {
    pub fn new(
        plugin: Option<GlaffPlugin>,
        backbone: Option<Box<dyn Backbone>>,
        freeze_backbone: bool,
        seed_rng: &DetRng,
    ) -> Result<Self> {
        if plugin.is_none() && backbone.is_none() {
            return Err(Error::Config(
                "model needs a plugin, a backbone, or both".into(),
            ));
        }
        if let Some(p) = &plugin {
            if p.config.no_backbone && backbone.is_some() {
                return Err(Error::Config(
                    "no_backbone ablation cannot carry a backbone".into(),
                ));
            }
            if !p.config.no_backbone && backbone.is_none() {
                return Err(Error::Config(
                    "plugin requires a backbone unless no_backbone is set".into(),
                ));
            }
        }
        Ok(GlaffModel {
            plugin,
            backbone,
            freeze_backbone,
            dropout_rng: seed_rng.derive("dropout"),
        })
    }

    /// Final prediction [b, p, c].
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x_obs: &Tensor,
        s_feat: &Tensor,
        t_feat: &Tensor,
        train: bool,
    ) -> Result<Tensor> {
        Ok(self.forward_outputs(g, x_obs, s_feat, t_feat, train)?.prediction)
    }

    /// Full diagnostics variant of [`GlaffModel::forward`].
    pub fn forward_outputs(
        &mut self,
        g: &mut Graph,
        x_obs: &Tensor,
        s_feat: &Tensor,
        t_feat: &Tensor,
        train: bool,
    ) -> Result<GlaffOutputs> {
        let local = match &self.backbone {
            Some(bb) => Some(if self.freeze_backbone && g.is_recording() {
                let mut frozen = Graph::inference();
                bb.forecast(&mut frozen, x_obs, s_feat, t_feat, false)?
            } else {
                bb.forecast(g, x_obs, s_feat, t_feat, train)?
            }),
            None => None,
        };
        match &self.plugin {
            Some(plugin) => plugin.forward(
                g,
                x_obs,
                s_feat,
                t_feat,
                local.as_ref(),
                train,
                &mut self.dropout_rng,
            ),
            None => {
                let prediction = local.expect("validated at construction");
                Ok(GlaffOutputs {
                    x_map: Tensor::zeros(vec![0]),
                    y_map: Tensor::zeros(vec![0]),
                    x_hat: Tensor::zeros(vec![0]),
                    y_hat: Tensor::zeros(vec![0]),
                    weights: None,
                    prediction,
                })
            }
        }
    }
}

impl Module for GlaffModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(p) = &mut self.plugin {
            p.visit_params(&format!("{prefix}plugin."), f);
        }
        if let Some(b) = &mut self.backbone {
            b.visit_params(&format!("{prefix}backbone."), f);
        }
    }
}

/// Backbone choice plus its hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// DLinear moving-average kernel.
    pub kernel: usize,
    /// Seasonal-naive period.
    pub period: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            kind: BackboneKind::DLinear,
            kernel: 25,
            period: 24,
        }
    }
}

impl BackboneSpec {
    fn build(&self, history: usize, horizon: usize, rng: &mut DetRng) -> Result<Box<dyn Backbone>> {
        Ok(match self.kind {
            BackboneKind::DLinear => Box::new(DLinear::new(history, horizon, self.kernel, rng)?),
            BackboneKind::SeasonalNaive => {
                Box::new(SeasonalNaive::new(history, horizon, self.period)?)
            }
        })
    }
}

/// Everything needed to rebuild a model deterministically: window geometry,
/// channel count, plugin config, and backbone choice. Stored in checkpoints.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub history: usize,
    pub horizon: usize,
    pub channels: usize,
    pub feature_mode: FeatureMode,
    /// None trains the bare backbone (the plugin-free baseline).
    pub plugin: Option<GlaffConfig>,
    pub backbone: Option<BackboneSpec>,
    pub freeze_backbone: bool,
}

impl ModelSpec {
    /// Build the model with parameters initialized from `seed`.
    ///
    /// Initialization order is fixed (plugin first, then backbone) so a
    /// (spec, seed) pair always yields bit-identical parameters.
    pub fn build(&self, seed: u64) -> Result<GlaffModel> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        let root = DetRng::new(seed);
        let mut init = root.derive("init");
        let plugin = match &self.plugin {
            Some(cfg) => Some(GlaffPlugin::new(
                cfg.clone(),
                self.history,
                self.channels,
                &mut init,
            )?),
            None => None,
        };
        let needs_backbone = match &self.plugin {
            Some(cfg) => !cfg.no_backbone,
            None => true,
        };
        let backbone = if needs_backbone {
            let spec = self.backbone.ok_or_else(|| {
                Error::Config("backbone required unless no_backbone is set".into())
            })?;
            Some(spec.build(self.history, self.horizon, &mut init)?)
        } else {
            None
        };
        GlaffModel::new(plugin, backbone, self.freeze_backbone, &root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use crate::testutil::max_rel_err_fd;

    fn toy_config() -> GlaffConfig {
        GlaffConfig {
            dim: 8,
            dff: 16,
            heads: 2,
            layers: 1,
            dropout: 0.0,
            quantile: 0.75,
            ..GlaffConfig::default()
        }
    }

    fn rand_tensor(rng: &mut DetRng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::constant(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect())
    }

    #[test]
    fn config_validation() {
        let mut c = toy_config();
        c.quantile = 0.5;
        assert!(c.validate().is_err());
        c.quantile = 1.0;
        assert!(c.validate().is_err());
        c.quantile = 0.75;
        c.heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mapper_rejects_bad_feature_dim() {
        let mut rng = DetRng::new(1);
        let mapper = Mapper::new(&toy_config(), 2, &mut rng).unwrap();
        let mut g = Graph::inference();
        let bad = Tensor::zeros(vec![1, 4, 5]);
        assert!(matches!(
            mapper.forward(&mut g, &bad, false, &mut rng),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn identical_feature_rows_map_identically() {
        let mut rng = DetRng::new(2);
        let mapper = Mapper::new(&toy_config(), 2, &mut rng).unwrap();
        let mut g = Graph::inference();
        let row = [6.0, 2.0, 5.0, 12.0, 0.0, 0.0];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let feats = Tensor::constant(vec![1, 4, 6], data);
        let out = mapper.forward(&mut g, &feats, false, &mut rng).unwrap();
        let first = &out.data()[..2];
        for r in 1..4 {
            assert_eq!(&out.data()[r * 2..(r + 1) * 2], first);
        }
    }

    #[test]
    fn mapper_is_permutation_equivariant() {
        let mut rng = DetRng::new(3);
        let mapper = Mapper::new(&toy_config(), 2, &mut rng).unwrap();
        let mut g = Graph::inference();
        let feats = rand_tensor(&mut rng, vec![1, 5, 6], 0.0, 12.0);
        let out = mapper.forward(&mut g, &feats, false, &mut rng).unwrap();

        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = vec![0.0; feats.numel()];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * 6..(dst + 1) * 6].copy_from_slice(&feats.data()[src * 6..(src + 1) * 6]);
        }
        let out_p = mapper
            .forward(
                &mut g,
                &Tensor::constant(vec![1, 5, 6], permuted),
                false,
                &mut rng,
            )
            .unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for ch in 0..2 {
                let a = out.data()[src * 2 + ch];
                let b = out_p.data()[dst * 2 + ch];
                assert!((a - b).abs() < 1e-9, "row {src}->{dst} ch {ch}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_projection_maps_to_zero() {
        let mut rng = DetRng::new(4);
        let mut mapper = Mapper::new(&toy_config(), 2, &mut rng).unwrap();
        mapper.projection.weight = Tensor::param(vec![8, 2], vec![0.0; 16]);
        let mut g = Graph::inference();
        let feats = rand_tensor(&mut rng, vec![1, 4, 6], 0.0, 30.0);
        let out = mapper.forward(&mut g, &feats, false, &mut rng).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mapper_gradcheck_toy_dims() {
        let mut rng = DetRng::new(5);
        let mut mapper = Mapper::new(&toy_config(), 2, &mut rng).unwrap();
        let feats = rand_tensor(&mut rng, vec![1, 4, 6], -1.0, 1.0);
        let err = max_rel_err_fd(&mut mapper, |m, g| {
            let mut d = DetRng::new(0);
            let y = m.forward(g, &feats, false, &mut d)?;
            Ok(g.sum_all(&y))
        });
        assert!(err < 1e-4, "mapper gradcheck rel err {err}");
    }

    #[test]
    fn mapper_parameter_count_matches_closed_form() {
        // defaults d=512, dff=2048, H=8, l=2, c=7; count derived from layer
        // shapes independently of the visitor
        let config = GlaffConfig::default();
        let mut rng = DetRng::new(6);
        let mut mapper = Mapper::new(&config, 7, &mut rng).unwrap();
        let (d, dff, l, c) = (512usize, 2048usize, 2usize, 7usize);
        let attn = 4 * (d * d + d);
        let ffn = d * dff + dff + dff * d + d;
        let norms = 2 * (2 * d);
        let per_layer = attn + ffn + norms;
        let expected = (6 * d + d) + l * per_layer + 2 * d + (d * c + c);
        assert_eq!(param_count(&mut mapper), expected);
    }

    #[test]
    fn mlp_stack_parameter_count_within_5_percent() {
        let config = GlaffConfig {
            no_attention: true,
            ..GlaffConfig::default()
        };
        let mut rng = DetRng::new(7);
        let mut mlp_mapper = Mapper::new(&config, 7, &mut rng).unwrap();
        let mut attn_mapper = Mapper::new(&GlaffConfig::default(), 7, &mut rng).unwrap();
        let a = param_count(&mut mlp_mapper) as f64;
        let b = param_count(&mut attn_mapper) as f64;
        assert!(
            (a - b).abs() / b < 0.05,
            "mlp {a} vs attention {b}: {:.2}% apart",
            100.0 * (a - b).abs() / b
        );
    }

    #[test]
    fn denormalize_identity_transport() {
        // μ̃ = μ and σ̃ = σ → X̂ = X̃ (values chosen exact in binary)
        let mut g = Graph::inference();
        let data = vec![1.0, 2.0, 4.0, 8.0, 3.0, 5.0];
        let x = Tensor::constant(vec![1, 6, 1], data.clone());
        let y = Tensor::constant(vec![1, 2, 1], vec![2.5, 3.5]);
        let (x_hat, _y_hat) =
            robust_denormalize(&mut g, &x, &y, &x, 0.75, StatsKind::Robust).unwrap();
        assert_eq!(x_hat.data(), &data[..]);
    }

    #[test]
    fn denormalize_affine_equivariance() {
        let mut rng = DetRng::new(8);
        let mut g = Graph::inference();
        let (b, h, p, c) = (2, 24, 4, 3);
        let x_map = rand_tensor(&mut rng, vec![b, h, c], -1.0, 1.0);
        let y_map = rand_tensor(&mut rng, vec![b, p, c], -1.0, 1.0);
        let x = rand_tensor(&mut rng, vec![b, h, c], 5.0, 9.0);
        let (a_coef, beta) = (2.75, -1.25);
        let x_aff = Tensor::constant(
            x.shape().to_vec(),
            x.data().iter().map(|&v| a_coef * v + beta).collect(),
        );
        let (x_hat, y_hat) =
            robust_denormalize(&mut g, &x_map, &y_map, &x, 0.75, StatsKind::Robust).unwrap();
        let (x_hat2, y_hat2) =
            robust_denormalize(&mut g, &x_map, &y_map, &x_aff, 0.75, StatsKind::Robust).unwrap();
        for (new, old) in x_hat2.data().iter().zip(x_hat.data()) {
            assert!((new - (a_coef * old + beta)).abs() < 1e-6, "{new} vs {old}");
        }
        for (new, old) in y_hat2.data().iter().zip(y_hat.data()) {
            assert!((new - (a_coef * old + beta)).abs() < 1e-6);
        }
    }

    /// Replace the top `m` values of each channel with strictly larger ones.
    fn contaminate_top(x: &Tensor, m: usize, rng: &mut DetRng) -> Tensor {
        let [b, h, c] = *x.shape() else { panic!() };
        let mut data = x.data().to_vec();
        for bi in 0..b {
            for ch in 0..c {
                let mut idx: Vec<usize> = (0..h).collect();
                idx.sort_by(|&i, &j| {
                    data[(bi * h + i) * c + ch].total_cmp(&data[(bi * h + j) * c + ch])
                });
                for &i in idx.iter().rev().take(m) {
                    data[(bi * h + i) * c + ch] = rng.uniform(1e6, 1e9);
                }
            }
        }
        Tensor::constant(x.shape().to_vec(), data)
    }

    #[test]
    fn robust_stats_ignore_upper_tail_contamination_exactly() {
        // h=96, q=0.75: fewer than ceil(0.25·96)=24 inflated top values
        // leave μ, σ and hence X̂, Ŷ bit-identical
        let mut rng = DetRng::new(9);
        let mut g = Graph::inference();
        let (b, h, p, c) = (2, 96, 8, 2);
        let x_map = rand_tensor(&mut rng, vec![b, h, c], -1.0, 1.0);
        let y_map = rand_tensor(&mut rng, vec![b, p, c], -1.0, 1.0);
        let x = rand_tensor(&mut rng, vec![b, h, c], 0.0, 10.0);
        let x_bad = contaminate_top(&x, 23, &mut rng);
        let (x_hat, y_hat) =
            robust_denormalize(&mut g, &x_map, &y_map, &x, 0.75, StatsKind::Robust).unwrap();
        let (x_hat2, y_hat2) =
            robust_denormalize(&mut g, &x_map, &y_map, &x_bad, 0.75, StatsKind::Robust).unwrap();
        assert_eq!(x_hat.data(), x_hat2.data());
        assert_eq!(y_hat.data(), y_hat2.data());

        // mean/std statistics are NOT invariant under the same contamination
        let (m_hat, _) =
            robust_denormalize(&mut g, &x_map, &y_map, &x, 0.75, StatsKind::MeanStd).unwrap();
        let (m_hat2, _) =
            robust_denormalize(&mut g, &x_map, &y_map, &x_bad, 0.75, StatsKind::MeanStd).unwrap();
        assert_ne!(m_hat.data(), m_hat2.data());
    }

    #[test]
    fn lower_tail_mirror_invariance() {
        let mut rng = DetRng::new(10);
        let mut g = Graph::inference();
        let (b, h, p, c) = (1, 96, 4, 1);
        let x_map = rand_tensor(&mut rng, vec![b, h, c], -1.0, 1.0);
        let y_map = rand_tensor(&mut rng, vec![b, p, c], -1.0, 1.0);
        let x = rand_tensor(&mut rng, vec![b, h, c], 0.0, 10.0);
        // push the bottom 23 values arbitrarily lower
        let mut data = x.data().to_vec();
        let mut idx: Vec<usize> = (0..h).collect();
        idx.sort_by(|&i, &j| data[i].total_cmp(&data[j]));
        for &i in idx.iter().take(23) {
            data[i] = -rng.uniform(1e6, 1e9);
        }
        let x_bad = Tensor::constant(x.shape().to_vec(), data);
        let (x_hat, _) =
            robust_denormalize(&mut g, &x_map, &y_map, &x, 0.75, StatsKind::Robust).unwrap();
        let (x_hat2, _) =
            robust_denormalize(&mut g, &x_map, &y_map, &x_bad, 0.75, StatsKind::Robust).unwrap();
        assert_eq!(x_hat.data(), x_hat2.data());
    }

    #[test]
    fn denormalizer_rejects_degenerate_history() {
        let mut g = Graph::inference();
        let x_map = Tensor::zeros(vec![1, 1, 1]);
        let y_map = Tensor::zeros(vec![1, 1, 1]);
        let x = Tensor::zeros(vec![1, 1, 1]);
        assert!(matches!(
            robust_denormalize(&mut g, &x_map, &y_map, &x, 0.75, StatsKind::Robust),
            Err(Error::Config(_))
        ));
        let x2 = Tensor::zeros(vec![1, 4, 1]);
        assert!(matches!(
            robust_denormalize(&mut g, &x2, &y_map, &x2, 0.4, StatsKind::Robust),
            Err(Error::Domain(_))
        ));
    }

    fn toy_plugin(no_adaptive: bool, rng: &mut DetRng) -> GlaffPlugin {
        let config = GlaffConfig {
            no_adaptive,
            ..toy_config()
        };
        GlaffPlugin::new(config, 8, 2, rng).unwrap()
    }

    #[test]
    fn zero_initialized_combiner_gives_half_half() {
        let mut rng = DetRng::new(11);
        let mut plugin = toy_plugin(false, &mut rng);
        plugin.combiner.out.weight = Tensor::param(vec![16, 2], vec![0.0; 32]);
        plugin.combiner.out.bias = Tensor::param(vec![2], vec![0.0; 2]);
        let mut g = Graph::inference();
        let x = rand_tensor(&mut rng, vec![2, 8, 2], 0.0, 4.0);
        let s = rand_tensor(&mut rng, vec![2, 8, 6], 0.0, 12.0);
        let t = rand_tensor(&mut rng, vec![2, 4, 6], 0.0, 12.0);
        let local = rand_tensor(&mut rng, vec![2, 4, 2], 0.0, 4.0);
        let mut d = DetRng::new(0);
        let out = plugin
            .forward(&mut g, &x, &s, &t, Some(&local), false, &mut d)
            .unwrap();
        let w = out.weights.unwrap();
        assert!(w.data().iter().all(|&v| v == 0.5));
        for i in 0..out.prediction.numel() {
            let expect = 0.5 * out.y_hat.data()[i] + 0.5 * local.data()[i];
            assert!((out.prediction.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_sources_pass_through() {
        // Ŷ = Ȳ → Y = Ȳ regardless of the weights
        let mut rng = DetRng::new(12);
        let plugin = toy_plugin(false, &mut rng);
        let mut g = Graph::inference();
        let x = rand_tensor(&mut rng, vec![1, 8, 2], 0.0, 4.0);
        let s = rand_tensor(&mut rng, vec![1, 8, 6], 0.0, 12.0);
        let t = rand_tensor(&mut rng, vec![1, 4, 6], 0.0, 12.0);
        let mut d = DetRng::new(0);
        // run once to obtain Ŷ, then feed it back as the local prediction
        let dummy = Tensor::zeros(vec![1, 4, 2]);
        let first = plugin
            .forward(&mut g, &x, &s, &t, Some(&dummy), false, &mut d)
            .unwrap();
        let local = first.y_hat.clone();
        let out = plugin
            .forward(&mut g, &x, &s, &t, Some(&local), false, &mut d)
            .unwrap();
        for (p, l) in out.prediction.data().iter().zip(local.data()) {
            assert!((p - l).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_convex_and_prediction_bounded() {
        let mut rng = DetRng::new(13);
        let plugin = toy_plugin(false, &mut rng);
        let mut g = Graph::inference();
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, vec![2, 8, 2], -3.0, 3.0);
            let s = rand_tensor(&mut rng, vec![2, 8, 6], 0.0, 12.0);
            let t = rand_tensor(&mut rng, vec![2, 4, 6], 0.0, 12.0);
            let local = rand_tensor(&mut rng, vec![2, 4, 2], -3.0, 3.0);
            let mut d = DetRng::new(0);
            let out = plugin
                .forward(&mut g, &x, &s, &t, Some(&local), false, &mut d)
                .unwrap();
            let w = out.weights.unwrap();
            for s_idx in 0..w.numel() / 2 {
                let (a, b) = (w.data()[2 * s_idx], w.data()[2 * s_idx + 1]);
                assert!(a >= 0.0 && b >= 0.0);
                assert!((a + b - 1.0).abs() < 1e-9);
            }
            for i in 0..out.prediction.numel() {
                let (hi, lo) = {
                    let (u, v) = (out.y_hat.data()[i], local.data()[i]);
                    (u.max(v), u.min(v))
                };
                let y = out.prediction.data()[i];
                assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn no_adaptive_is_exact_average() {
        let mut rng = DetRng::new(14);
        let plugin = toy_plugin(true, &mut rng);
        let mut g = Graph::inference();
        let x = rand_tensor(&mut rng, vec![1, 8, 2], 0.0, 4.0);
        let s = rand_tensor(&mut rng, vec![1, 8, 6], 0.0, 12.0);
        let t = rand_tensor(&mut rng, vec![1, 4, 6], 0.0, 12.0);
        let local = rand_tensor(&mut rng, vec![1, 4, 2], 0.0, 4.0);
        let mut d = DetRng::new(0);
        let out = plugin
            .forward(&mut g, &x, &s, &t, Some(&local), false, &mut d)
            .unwrap();
        for i in 0..out.prediction.numel() {
            let expect = 0.5 * out.y_hat.data()[i] + 0.5 * local.data()[i];
            assert_eq!(out.prediction.data()[i], expect);
        }
        assert!(out.weights.unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn no_backbone_with_zero_projection_predicts_window_median() {
        let mut rng = DetRng::new(15);
        let config = GlaffConfig {
            no_backbone: true,
            ..toy_config()
        };
        let mut plugin = GlaffPlugin::new(config, 8, 2, &mut rng).unwrap();
        plugin.mapper.projection.weight = Tensor::param(vec![8, 2], vec![0.0; 16]);
        plugin.mapper.projection.bias = Tensor::param(vec![2], vec![0.0; 2]);
        let mut g = Graph::inference();
        let x = rand_tensor(&mut rng, vec![1, 8, 2], 1.0, 9.0);
        let s = rand_tensor(&mut rng, vec![1, 8, 6], 0.0, 12.0);
        let t = rand_tensor(&mut rng, vec![1, 4, 6], 0.0, 12.0);
        let mut d = DetRng::new(0);
        let out = plugin.forward(&mut g, &x, &s, &t, None, false, &mut d).unwrap();
        // per-channel lower median of the history, broadcast over the horizon
        for ch in 0..2 {
            let mut col: Vec<f64> = (0..8).map(|i| x.data()[i * 2 + ch]).collect();
            col.sort_by(f64::total_cmp);
            let med = col[(8 - 1) / 2];
            for t_i in 0..4 {
                assert_eq!(out.prediction.data()[t_i * 2 + ch], med);
            }
        }
    }

    #[test]
    fn combiner_gradcheck() {
        let mut rng = DetRng::new(16);
        let mut combiner = Combiner::new(8, 16, &mut rng);
        let err_t = rand_tensor(&mut rng, vec![2, 2, 8], -1.0, 1.0);
        let fixed = rand_tensor(&mut rng, vec![2, 2, 2], -1.0, 1.0);
        let err = max_rel_err_fd(&mut combiner, |m, g| {
            let w = m.weights(g, &err_t)?;
            let prod = g.mul(&w, &fixed)?;
            Ok(g.sum_all(&prod))
        });
        assert!(err < 1e-4, "combiner gradcheck rel err {err}");
    }

    #[test]
    fn full_plugin_gradcheck_toy_dims() {
        let mut rng = DetRng::new(17);
        let mut plugin = toy_plugin(false, &mut rng);
        let x = rand_tensor(&mut rng, vec![2, 8, 2], 0.0, 4.0);
        let s = rand_tensor(&mut rng, vec![2, 8, 6], 0.0, 12.0);
        let t = rand_tensor(&mut rng, vec![2, 4, 6], 0.0, 12.0);
        let local = rand_tensor(&mut rng, vec![2, 4, 2], 0.0, 4.0);
        let target = rand_tensor(&mut rng, vec![2, 4, 2], 0.0, 4.0);
        let err = max_rel_err_fd(&mut plugin, |m, g| {
            let mut d = DetRng::new(0);
            let out = m.forward(g, &x, &s, &t, Some(&local), false, &mut d)?;
            crate::nn::mse_loss(g, &out.prediction, &target)
        });
        assert!(err < 1e-4, "plugin gradcheck rel err {err}");
    }
}

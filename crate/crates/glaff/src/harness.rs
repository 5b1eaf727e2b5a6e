//! Training loop, evaluation metrics, ablation orchestration, gradient-check
//! runner, and the glue between configs, data, models, and checkpoints.

use std::time::Instant;

use crate::backbone::DLinear;
use crate::config::{DataSource, RunConfig};
use crate::data::{
    chrono_split, extend_with_history, load_csv, pollute_windows, robust_channel_stats,
    standardize, synth_generate, ChannelStats, Dataset, Window, WindowPlan,
};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, param_count, Adam, EncoderLayer, LayerNorm, Linear, Module, MultiHeadAttention};
use crate::plugin::{Combiner, GlaffConfig, GlaffModel, Mapper, ModelSpec};
use crate::rng::DetRng;
use crate::tensor::{Graph, Tensor};

/// Splits after standardization. Val/test segments are extended backwards by
/// one history length so their windows can reach into the preceding split
/// for context while every target stays inside its own split.
pub struct PreparedData {
    pub train: Dataset,
    pub val_segment: Dataset,
    pub test_segment: Dataset,
    pub stats: Vec<ChannelStats>,
}

impl PreparedData {
    pub fn channels(&self) -> usize {
        self.train.channel_count()
    }
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let raw = match &cfg.source {
        DataSource::Synth => synth_generate(cfg.synth_n, &cfg.synth_profile())?,
        DataSource::Csv(path) => {
            if path.is_empty() {
                return Err(Error::Config(
                    "data.source = csv requires data.csv_path".into(),
                ));
            }
            load_csv(std::path::Path::new(path))?
        }
    };
    let (train, val, test) = chrono_split(&raw, &cfg.split)?;
    let (train, val, test, stats) = standardize(&train, &val, &test)?;
    let val_segment = extend_with_history(&train, &val, cfg.history);
    let test_segment = {
        let mut before_test = train.clone();
        before_test.timestamps.extend_from_slice(&val.timestamps);
        before_test.values.extend_from_slice(&val.values);
        extend_with_history(&before_test, &test, cfg.history)
    };
    Ok(PreparedData {
        train,
        val_segment,
        test_segment,
        stats,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalMetrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    pub horizon: usize,
    pub best_epoch: usize,
    pub curve: Vec<EpochStat>,
    pub val: EvalMetrics,
    pub test: EvalMetrics,
    /// Test metrics with anomaly-polluted history windows, when the config
    /// carries anomaly specs.
    pub test_polluted: Option<EvalMetrics>,
    /// Mean (global, local) combiner weights over the clean test set, when
    /// the plugin fuses with a backbone.
    pub mean_weights: Option<(f64, f64)>,
    pub param_count: usize,
    pub seconds: f64,
}

/// Human-readable variant name derived from the active switches.
pub fn variant_name(cfg: &RunConfig) -> String {
    if !cfg.glaff_enabled {
        return "backbone_only".into();
    }
    let g = &cfg.glaff;
    let mut parts = Vec::new();
    if g.no_backbone {
        parts.push("no_backbone");
    }
    if g.no_attention {
        parts.push("no_attention");
    }
    if g.no_quantile {
        parts.push("no_quantile");
    }
    if g.no_adaptive {
        parts.push("no_adaptive");
    }
    if parts.is_empty() {
        "full".into()
    } else {
        parts.join("+")
    }
}

fn batch_tensors(windows: &[&Window], h: usize, p: usize, c: usize) -> [Tensor; 4] {
    let b = windows.len();
    let mut x = Vec::with_capacity(b * h * c);
    let mut s = Vec::with_capacity(b * h * 6);
    let mut t = Vec::with_capacity(b * p * 6);
    let mut y = Vec::with_capacity(b * p * c);
    for w in windows {
        x.extend_from_slice(&w.x);
        s.extend_from_slice(&w.s);
        t.extend_from_slice(&w.t);
        y.extend_from_slice(&w.y);
    }
    [
        Tensor::constant(vec![b, h, c], x),
        Tensor::constant(vec![b, fix_len(s.len(), b, 6), 6], s),
        Tensor::constant(vec![b, fix_len(t.len(), b, 6), 6], t),
        Tensor::constant(vec![b, p, c], y),
    ]
}

fn fix_len(total: usize, b: usize, w: usize) -> usize {
    total / (b * w)
}

/// Eval-mode forward over the given windows; MSE/MAE are means over every
/// window, horizon step, and channel. Optionally also averages the fusion
/// weights for diagnostics.
pub fn evaluate_windows(
    model: &mut GlaffModel,
    windows: &[Window],
    h: usize,
    p: usize,
    c: usize,
    collect_weights: bool,
) -> Result<(EvalMetrics, Option<(f64, f64)>)> {
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut elems = 0usize;
    let mut wsum = (0.0, 0.0);
    let mut wcount = 0usize;
    let batch = 64;
    let mut i = 0;
    while i < windows.len() {
        let hi = (i + batch).min(windows.len());
        let refs: Vec<&Window> = windows[i..hi].iter().collect();
        let [x, s, t, y] = batch_tensors(&refs, h, p, c);
        let mut g = Graph::inference();
        let out = model.forward_outputs(&mut g, &x, &s, &t, false)?;
        for (pv, tv) in out.prediction.data().iter().zip(y.data()) {
            let d = pv - tv;
            sse += d * d;
            sae += d.abs();
        }
        elems += y.numel();
        if collect_weights {
            if let Some(w) = &out.weights {
                for pair in w.data().chunks_exact(2) {
                    wsum.0 += pair[0];
                    wsum.1 += pair[1];
                }
                wcount += w.numel() / 2;
            }
        }
        i = hi;
    }
    let metrics = EvalMetrics {
        mse: sse / elems as f64,
        mae: sae / elems as f64,
    };
    let weights = if collect_weights && wcount > 0 {
        Some((wsum.0 / wcount as f64, wsum.1 / wcount as f64))
    } else {
        None
    };
    Ok((metrics, weights))
}

fn snapshot_params(model: &mut GlaffModel) -> Vec<(String, Vec<f64>, Vec<usize>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name, t| {
        out.push((name, t.data().to_vec(), t.shape().to_vec()));
    });
    out
}

fn restore_params(model: &mut GlaffModel, saved: &[(String, Vec<f64>, Vec<usize>)]) {
    let mut idx = 0;
    model.visit_params("", &mut |_, t| {
        let (_, data, shape) = &saved[idx];
        *t = Tensor::param(shape.clone(), data.clone());
        idx += 1;
    });
}

/// Train under the config: joint Adam over plugin and backbone with an L2
/// loss on the final prediction, stride-1 windows in seed-shuffled batches,
/// best-validation-epoch checkpointing.
pub fn train(cfg: &RunConfig) -> Result<(GlaffModel, ModelSpec, TrainReport)> {
    crate::tensor::set_threads(cfg.threads);
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    let c = data.channels();
    let spec = cfg.model_spec(c)?;
    let mut model = spec.build(cfg.seed)?;
    let params = param_count(&mut model);

    let (h, p) = (cfg.history, cfg.horizon);
    let train_plan = WindowPlan::new(&data.train, h, p, cfg.feature_mode)?;
    let val_windows: Vec<Window> = WindowPlan::new(&data.val_segment, h, p, cfg.feature_mode)?
        .iter(1)
        .collect();

    let mut offsets: Vec<usize> = (0..train_plan.count()).collect();
    let mut shuffle_rng = DetRng::new(cfg.seed).derive("shuffle");
    let mut adam = Adam::new(cfg.lr);
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<(String, Vec<f64>, Vec<usize>)>)> = None;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut offsets);
        let mut loss_sum = 0.0;
        let mut loss_windows = 0usize;
        for (batch_idx, chunk) in offsets.chunks(cfg.batch).enumerate() {
            let windows: Vec<Window> = chunk.iter().map(|&o| train_plan.window_at(o)).collect();
            let refs: Vec<&Window> = windows.iter().collect();
            let [x, s, t, y] = batch_tensors(&refs, h, p, c);
            let mut g = Graph::recording();
            let pred = model.forward(&mut g, &x, &s, &t, true)?;
            let loss = mse_loss(&mut g, &pred, &y)?;
            let loss_val = loss.scalar_value()?;
            if !loss_val.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss_val * chunk.len() as f64;
            loss_windows += chunk.len();
            let grads = g.backward(&loss)?;
            adam.step(&mut model, &grads)?;
        }
        let train_loss = loss_sum / loss_windows as f64;
        let (val_metrics, _) = evaluate_windows(&mut model, &val_windows, h, p, c, false)?;
        curve.push(EpochStat {
            epoch,
            train_loss,
            val_mse: val_metrics.mse,
        });
        let better = best
            .as_ref()
            .map_or(true, |(_, best_mse, _)| val_metrics.mse < *best_mse);
        if better {
            best = Some((epoch, val_metrics.mse, snapshot_params(&mut model)));
        }
    }

    let (best_epoch, _, best_params) = best.ok_or_else(|| {
        Error::Config("training ran for zero epochs; nothing to checkpoint".into())
    })?;
    restore_params(&mut model, &best_params);

    let (val, _) = evaluate_windows(&mut model, &val_windows, h, p, c, false)?;
    let test_windows: Vec<Window> = WindowPlan::new(&data.test_segment, h, p, cfg.feature_mode)?
        .iter(1)
        .collect();
    let (test, mean_weights) = evaluate_windows(&mut model, &test_windows, h, p, c, true)?;

    let specs = cfg.anomalies()?;
    let test_polluted = if specs.is_empty() {
        None
    } else {
        let mut polluted = test_windows.clone();
        let stats = robust_channel_stats(&data.test_segment);
        pollute_windows(
            &mut polluted,
            &specs,
            &stats,
            data.test_segment.points_per_day(),
        )?;
        let (m, _) = evaluate_windows(&mut model, &polluted, h, p, c, false)?;
        Some(m)
    };

    let report = TrainReport {
        run_id: cfg.run_id(),
        variant: variant_name(cfg),
        seed: cfg.seed,
        horizon: p,
        best_epoch,
        curve,
        val,
        test,
        test_polluted,
        mean_weights,
        param_count: params,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, spec, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Val,
    Test,
}

impl SplitSel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSel::Train),
            "val" => Ok(SplitSel::Val),
            "test" => Ok(SplitSel::Test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train|val|test)"
            ))),
        }
    }
}

/// Evaluate a checkpoint on a split of the configured dataset. The window
/// geometry and feature mode come from the checkpoint, not the config.
pub fn evaluate_checkpoint(
    model: &mut GlaffModel,
    spec: &ModelSpec,
    cfg: &RunConfig,
    split: SplitSel,
) -> Result<EvalMetrics> {
    crate::tensor::set_threads(cfg.threads);
    let mut geo = cfg.clone();
    geo.history = spec.history;
    geo.horizon = spec.horizon;
    geo.feature_mode = spec.feature_mode;
    let data = prepare_data(&geo)?;
    if data.channels() != spec.channels {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} channels but dataset has {}",
            spec.channels,
            data.channels()
        )));
    }
    let segment = match split {
        SplitSel::Train => &data.train,
        SplitSel::Val => &data.val_segment,
        SplitSel::Test => &data.test_segment,
    };
    let windows: Vec<Window> =
        WindowPlan::new(segment, spec.history, spec.horizon, spec.feature_mode)?
            .iter(1)
            .collect();
    let (metrics, _) = evaluate_windows(
        model,
        &windows,
        spec.history,
        spec.horizon,
        spec.channels,
        false,
    )?;
    Ok(metrics)
}

/// The four ablation switches plus "full".
pub const ABLATION_VARIANTS: [&str; 5] = [
    "full",
    "no_backbone",
    "no_attention",
    "no_quantile",
    "no_adaptive",
];

/// Config for a named ablation variant: all switches cleared, then one set.
pub fn variant_config(cfg: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut out = cfg.clone();
    out.glaff_enabled = true;
    out.glaff.no_attention = false;
    out.glaff.no_quantile = false;
    out.glaff.no_adaptive = false;
    out.glaff.no_backbone = false;
    match variant {
        "full" => {}
        "no_backbone" => out.glaff.no_backbone = true,
        "no_attention" => out.glaff.no_attention = true,
        "no_quantile" => out.glaff.no_quantile = true,
        "no_adaptive" => out.glaff.no_adaptive = true,
        "backbone_only" => out.glaff_enabled = false,
        other => {
            return Err(Error::Config(format!(
                "unknown ablation variant '{other}' (expected one of {ABLATION_VARIANTS:?})"
            )))
        }
    }
    Ok(out)
}

/// Train every requested variant with the identical seed and data order.
pub fn ablate(cfg: &RunConfig, variants: &[String]) -> Result<Vec<TrainReport>> {
    let mut reports = Vec::with_capacity(variants.len());
    for v in variants {
        let vcfg = variant_config(cfg, v)?;
        let (_, _, report) = train(&vcfg)?;
        reports.push(report);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// gradient checking

#[derive(Clone, Debug)]
pub struct ComponentCheck {
    pub component: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub components: Vec<ComponentCheck>,
    pub subgradient_locality: bool,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.subgradient_locality && self.components.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .components
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({}: {:.3e})", c.component, c.worst_param, c.max_rel_err))
            .collect();
        if !self.subgradient_locality {
            out.push("quantile/median subgradient locality".into());
        }
        out
    }
}

const GRADCHECK_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn fd_check<M: Module>(
    module: &mut M,
    mut loss: impl FnMut(&mut M, &mut Graph) -> Result<Tensor>,
) -> Result<(f64, String)> {
    let mut graph = Graph::recording();
    let root = loss(module, &mut graph)?;
    let grads = graph.backward(&root)?;

    let mut names = Vec::new();
    let mut autodiff = Vec::new();
    module.visit_params("", &mut |name, t| {
        names.push((name, t.numel()));
        autodiff.push(grads.dense(t));
    });

    let set = |m: &mut M, pi: usize, ei: usize, val: f64| -> f64 {
        let mut seen = 0;
        let mut old = f64::NAN;
        m.visit_params("", &mut |_, t| {
            if seen == pi {
                let mut data = t.data().to_vec();
                old = data[ei];
                data[ei] = val;
                *t = Tensor::param(t.shape().to_vec(), data);
            }
            seen += 1;
        });
        old
    };

    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for pi in 0..names.len() {
        for ei in 0..names[pi].1 {
            let orig = set(module, pi, ei, 0.0);
            set(module, pi, ei, orig + FD_STEP);
            let up = {
                let mut g = Graph::inference();
                loss(module, &mut g)?.scalar_value()?
            };
            set(module, pi, ei, orig - FD_STEP);
            let down = {
                let mut g = Graph::inference();
                loss(module, &mut g)?.scalar_value()?
            };
            set(module, pi, ei, orig);
            let fd = (up - down) / (2.0 * FD_STEP);
            let rel = (autodiff[pi][ei] - fd).abs() / fd.abs().max(1.0);
            if rel > worst {
                worst = rel;
                worst_name = format!("{}[{}]", names[pi].0, ei);
            }
        }
    }
    Ok((worst, worst_name))
}

fn rand_const(rng: &mut DetRng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::constant(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect())
}

/// Verify the quantile/median subgradient: the gradient of the quantile
/// range touches at most four coordinates, and nudging any non-selected
/// coordinate (without crossing ranks) leaves the value bit-identical.
fn subgradient_locality(seed: u64) -> Result<bool> {
    let mut rng = DetRng::new(seed).derive("locality");
    let n = 16;
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0)).collect();
    let spread = |vals: &[f64]| -> Result<f64> {
        let mut g = Graph::inference();
        let t = Tensor::constant(vec![vals.len()], vals.to_vec());
        let hi = g.quantile_interp(&t, 0.75)?;
        let lo = g.quantile_interp(&t, 0.25)?;
        Ok(hi.scalar_value()? - lo.scalar_value()?)
    };
    let mut g = Graph::recording();
    let t = Tensor::param(vec![n], v.clone());
    let hi = g.quantile_interp(&t, 0.75)?;
    let lo = g.quantile_interp(&t, 0.25)?;
    let range = g.sub(&hi, &lo)?;
    let grads = g.backward(&range)?;
    let gv = grads.dense(&t);
    let touched: Vec<usize> = (0..n).filter(|&i| gv[i] != 0.0).collect();
    if touched.len() > 4 {
        return Ok(false);
    }
    let base = spread(&v)?;
    // nudge every untouched coordinate by a rank-safe delta
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let delta = min_gap / 4.0;
    for i in (0..n).filter(|i| !touched.contains(i)) {
        let mut nudged = v.clone();
        nudged[i] += delta;
        if spread(&nudged)? != base {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Central-difference verification of every layer and the composed loss at
/// toy dimensions (b=2, h=8, p=4, c=2, d=8, dff=16, heads=2, l=1).
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut rng = DetRng::new(seed).derive("gradcheck");
    let mut components = Vec::new();
    let mut push = |name: &str, res: (f64, String)| {
        components.push(ComponentCheck {
            component: name.to_string(),
            max_rel_err: res.0,
            worst_param: res.1,
            passed: res.0 < GRADCHECK_TOL,
        });
    };

    {
        let mut layer = Linear::new(6, 4, &mut rng);
        let x = rand_const(&mut rng, vec![3, 6], -1.0, 1.0);
        let w = rand_const(&mut rng, vec![3, 4], -1.0, 1.0);
        push(
            "linear",
            fd_check(&mut layer, |m, g| {
                let y = m.forward(g, &x)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        let mut norm = LayerNorm::new(8);
        let x = rand_const(&mut rng, vec![4, 8], -2.0, 2.0);
        let w = rand_const(&mut rng, vec![4, 8], -1.0, 1.0);
        push(
            "layer_norm",
            fd_check(&mut norm, |m, g| {
                let y = m.forward(g, &x)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        let mut attn = MultiHeadAttention::new(8, 2, &mut rng)?;
        let x = rand_const(&mut rng, vec![2, 4, 8], -1.0, 1.0);
        let w = rand_const(&mut rng, vec![2, 4, 8], -1.0, 1.0);
        push(
            "mhsa",
            fd_check(&mut attn, |m, g| {
                let y = m.forward(g, &x)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        let mut layer = EncoderLayer::new(8, 16, 2, 0.0, &mut rng)?;
        let x = rand_const(&mut rng, vec![2, 4, 8], -1.0, 1.0);
        let w = rand_const(&mut rng, vec![2, 4, 8], -1.0, 1.0);
        push(
            "encoder_layer",
            fd_check(&mut layer, |m, g| {
                let mut d = DetRng::new(0);
                let y = m.forward(g, &x, false, &mut d)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    let toy_cfg = GlaffConfig {
        dim: 8,
        dff: 16,
        heads: 2,
        layers: 1,
        dropout: 0.0,
        quantile: 0.75,
        ..GlaffConfig::default()
    };
    {
        let mut mapper = Mapper::new(&toy_cfg, 2, &mut rng)?;
        let feats = rand_const(&mut rng, vec![2, 4, 6], -1.0, 1.0);
        let w = rand_const(&mut rng, vec![2, 4, 2], -1.0, 1.0);
        push(
            "mapper",
            fd_check(&mut mapper, |m, g| {
                let mut d = DetRng::new(0);
                let y = m.forward(g, &feats, false, &mut d)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        let mut combiner = Combiner::new(8, 16, &mut rng);
        let e = rand_const(&mut rng, vec![2, 2, 8], -1.0, 1.0);
        let w = rand_const(&mut rng, vec![2, 2, 2], -1.0, 1.0);
        push(
            "combiner",
            fd_check(&mut combiner, |m, g| {
                let y = m.weights(g, &e)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        let mut dlinear = DLinear::new(8, 4, 3, &mut rng)?;
        let x = rand_const(&mut rng, vec![2, 8, 2], -1.0, 1.0);
        let s = Tensor::zeros(vec![2, 8, 6]);
        let t = Tensor::zeros(vec![2, 4, 6]);
        let w = rand_const(&mut rng, vec![2, 4, 2], -1.0, 1.0);
        push(
            "dlinear",
            fd_check(&mut dlinear, |m, g| {
                use crate::backbone::Backbone;
                let y = m.forecast(g, &x, &s, &t, false)?;
                let wy = g.mul(&y, &w)?;
                Ok(g.sum_all(&wy))
            })?,
        );
    }
    {
        // composed GLAFF loss at the toy dims
        let spec = ModelSpec {
            history: 8,
            horizon: 4,
            channels: 2,
            feature_mode: crate::timefeat::FeatureMode::Raw,
            plugin: Some(toy_cfg),
            backbone: Some(crate::plugin::BackboneSpec {
                kind: crate::backbone::BackboneKind::DLinear,
                kernel: 3,
                period: 4,
            }),
            freeze_backbone: false,
        };
        let mut model = spec.build(seed)?;
        let x = rand_const(&mut rng, vec![2, 8, 2], 0.0, 4.0);
        let s = rand_const(&mut rng, vec![2, 8, 6], 0.0, 12.0);
        let t = rand_const(&mut rng, vec![2, 4, 6], 0.0, 12.0);
        let target = rand_const(&mut rng, vec![2, 4, 2], 0.0, 4.0);
        push(
            "glaff_composed",
            fd_check(&mut model, |m, g| {
                let pred = m.forward(g, &x, &s, &t, false)?;
                mse_loss(g, &pred, &target)
            })?,
        );
    }

    let report = GradcheckReport {
        components,
        subgradient_locality: subgradient_locality(seed)?,
        tolerance: GRADCHECK_TOL,
    };
    Ok(report)
}

/// One line-delimited metrics record. Wall-clock lives in a separate timing
/// file so metrics bytes are reproducible.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    pub horizon: usize,
    pub split: String,
    pub mse: f64,
    pub mae: f64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"run_id\":\"{}\",\"variant\":\"{}\",\"seed\":{},\"horizon\":{},\"split\":\"{}\",\"mse\":{},\"mae\":{}}}",
            self.run_id, self.variant, self.seed, self.horizon, self.split, self.mse, self.mae
        )
    }
}

/// All metrics records for one training report.
pub fn report_records(report: &TrainReport) -> Vec<MetricsRecord> {
    let base = |split: &str, m: EvalMetrics| MetricsRecord {
        run_id: report.run_id.clone(),
        variant: report.variant.clone(),
        seed: report.seed,
        horizon: report.horizon,
        split: split.to_string(),
        mse: m.mse,
        mae: m.mae,
    };
    let mut out = vec![base("val", report.val), base("test", report.test)];
    if let Some(m) = report.test_polluted {
        out.push(base("test_anomalous", m));
    }
    out
}

/// Plot-ready training curve (epoch, train_loss, val_mse).
pub fn curve_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,val_mse\n");
    for e in &report.curve {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_mse));
    }
    s
}

//! Local-information forecasters behind a uniform interface, so the plugin
//! stays plug-and-play.

use crate::error::{Error, Result};
use crate::nn::{Linear, Module};
use crate::rng::DetRng;
use crate::tensor::{Graph, Tensor};

/// Identifies a backbone in configs and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    DLinear,
    SeasonalNaive,
}

impl BackboneKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dlinear" => Ok(BackboneKind::DLinear),
            "seasonal_naive" => Ok(BackboneKind::SeasonalNaive),
            other => Err(Error::Config(format!(
                "unknown backbone '{other}' (expected dlinear|seasonal_naive)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneKind::DLinear => "dlinear",
            BackboneKind::SeasonalNaive => "seasonal_naive",
        }
    }
}

/// A forecaster mapping history observations to a local prediction.
///
/// Implementations must never read future observations; timestamp features
/// are available but may be ignored (DLinear ignores them).
pub trait Backbone: Module {
    /// X: [b, h, c] → Ȳ: [b, p, c].
    fn forecast(
        &self,
        g: &mut Graph,
        x: &Tensor,
        s_feat: &Tensor,
        t_feat: &Tensor,
        train: bool,
    ) -> Result<Tensor>;

    fn kind(&self) -> BackboneKind;
    fn history(&self) -> usize;
    fn horizon(&self) -> usize;
}

/// Decomposition-enhanced linear forecaster: a moving-average trend plus a
/// seasonal remainder, each mapped h → p by a channel-shared linear layer.
#[derive(Clone, Debug)]
pub struct DLinear {
    pub trend: Linear,
    pub seasonal: Linear,
    kernel: usize,
    history: usize,
    horizon: usize,
    /// Constant [h, h] matrix applying the edge-replicated moving average
    /// along the time axis (input as [b, c, h] row vectors).
    avg: Tensor,
}

impl DLinear {
    pub fn new(history: usize, horizon: usize, kernel: usize, rng: &mut DetRng) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 || kernel > history {
            return Err(Error::Config(format!(
                "moving-average kernel must be odd and within 1..=h, got k={kernel}, h={history}"
            )));
        }
        let h = history;
        let radius = (kernel - 1) / 2;
        let mut avg = vec![0.0; h * h];
        let w = 1.0 / kernel as f64;
        for t in 0..h {
            for j in t as isize - radius as isize..=t as isize + radius as isize {
                let s = j.clamp(0, h as isize - 1) as usize;
                avg[s * h + t] += w;
            }
        }
        Ok(DLinear {
            trend: Linear::new(h, horizon, rng),
            seasonal: Linear::new(h, horizon, rng),
            kernel,
            history,
            horizon,
            avg: Tensor::constant(vec![h, h], avg),
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Moving-average trend of X ([b, h, c]), for tests and diagnostics.
    pub fn trend_of(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let xt = g.transpose_last2(x)?;
        let trend = g.matmul(&xt, &self.avg)?;
        g.transpose_last2(&trend)
    }
}

impl Module for DLinear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.trend.visit_params(&format!("{prefix}trend."), f);
        self.seasonal.visit_params(&format!("{prefix}seasonal."), f);
    }
}

impl Backbone for DLinear {
    fn forecast(
        &self,
        g: &mut Graph,
        x: &Tensor,
        _s_feat: &Tensor,
        _t_feat: &Tensor,
        _train: bool,
    ) -> Result<Tensor> {
        match x.shape() {
            [_, h, _] if *h == self.history => {}
            other => {
                return Err(Error::Dimension {
                    op: "dlinear_forecast",
                    lhs: other.to_vec(),
                    rhs: vec![self.history],
                })
            }
        }
        let xt = g.transpose_last2(x)?; // [b, c, h]
        let trend = g.matmul(&xt, &self.avg)?;
        let seasonal = g.sub(&xt, &trend)?;
        let yt_trend = self.trend.forward(g, &trend)?;
        let yt_seasonal = self.seasonal.forward(g, &seasonal)?;
        let yt = g.add(&yt_trend, &yt_seasonal)?; // [b, c, p]
        g.transpose_last2(&yt)
    }

    fn kind(&self) -> BackboneKind {
        BackboneKind::DLinear
    }

    fn history(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Parameter-free persistence baseline: repeat the last observed period.
#[derive(Clone, Debug)]
pub struct SeasonalNaive {
    period: usize,
    history: usize,
    horizon: usize,
}

impl SeasonalNaive {
    pub fn new(history: usize, horizon: usize, period: usize) -> Result<Self> {
        if period == 0 || period > history {
            return Err(Error::Config(format!(
                "seasonal period must be within 1..=h, got period={period}, h={history}"
            )));
        }
        Ok(SeasonalNaive {
            period,
            history,
            horizon,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }
}

impl Module for SeasonalNaive {
    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor)) {}
}

impl Backbone for SeasonalNaive {
    fn forecast(
        &self,
        g: &mut Graph,
        x: &Tensor,
        _s_feat: &Tensor,
        _t_feat: &Tensor,
        _train: bool,
    ) -> Result<Tensor> {
        let _ = g;
        let (b, h, c) = match x.shape() {
            [b, h, c] if *h == self.history => (*b, *h, *c),
            other => {
                return Err(Error::Dimension {
                    op: "seasonal_naive_forecast",
                    lhs: other.to_vec(),
                    rhs: vec![self.history],
                })
            }
        };
        let p = self.horizon;
        let xd = x.data();
        let mut out = vec![0.0; b * p * c];
        for bi in 0..b {
            for t in 0..p {
                let src = h - self.period + (t % self.period);
                for ch in 0..c {
                    out[(bi * p + t) * c + ch] = xd[(bi * h + src) * c + ch];
                }
            }
        }
        Ok(Tensor::constant(vec![b, p, c], out))
    }

    fn kind(&self) -> BackboneKind {
        BackboneKind::SeasonalNaive
    }

    fn history(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

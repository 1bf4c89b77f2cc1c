use serde::{Deserialize, Serialize};

use super::RenderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfPoint {
    pub x: f64,
    pub rgba: [f64; 4],
}

/// Piecewise-linear map from a normalized scalar to straight RGBA.
///
/// Control points are strictly increasing in `x`, start at 0 and end at 1.
/// Serialized as `{"points": [{"x": 0.0, "rgba": [r, g, b, a]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTf")]
pub struct TransferFunction {
    points: Vec<TfPoint>,
}

#[derive(Deserialize)]
struct RawTf {
    points: Vec<TfPoint>,
}

impl TryFrom<RawTf> for TransferFunction {
    type Error = RenderError;

    fn try_from(raw: RawTf) -> Result<Self, RenderError> {
        Self::new(raw.points)
    }
}

impl TransferFunction {
    pub fn new(points: Vec<TfPoint>) -> Result<Self, RenderError> {
        let bad = |msg: String| Err(RenderError::InvalidTransferFunction(msg));
        if points.len() < 2 {
            return bad(format!("{} control points, need at least 2", points.len()));
        }
        if points[0].x != 0.0 || points[points.len() - 1].x != 1.0 {
            return bad("control points must start at 0 and end at 1".into());
        }
        if points.windows(2).any(|w| w[0].x.partial_cmp(&w[1].x) != Some(std::cmp::Ordering::Less)) {
            return bad("control point positions must be strictly increasing".into());
        }
        if points.iter().flat_map(|p| p.rgba).any(|c| !(0.0..=1.0).contains(&c)) {
            return bad("colors must lie in [0, 1]".into());
        }
        Ok(Self { points })
    }

    pub fn constant(rgba: [f64; 4]) -> Result<Self, RenderError> {
        Self::new(vec![TfPoint { x: 0.0, rgba }, TfPoint { x: 1.0, rgba }])
    }

    /// From transparent black at 0 to `rgba` at 1.
    pub fn ramp(rgba: [f64; 4]) -> Result<Self, RenderError> {
        Self::new(vec![TfPoint { x: 0.0, rgba: [0.0; 4] }, TfPoint { x: 1.0, rgba }])
    }

    /// The default color map: dark blue through amber to white, mostly transparent.
    pub fn default_colormap() -> Self {
        Self::new(vec![
            TfPoint { x: 0.0, rgba: [0.0, 0.0, 0.0, 0.0] },
            TfPoint { x: 0.15, rgba: [0.05, 0.1, 0.4, 0.0] },
            TfPoint { x: 0.5, rgba: [0.8, 0.45, 0.15, 0.04] },
            TfPoint { x: 1.0, rgba: [1.0, 1.0, 1.0, 0.25] },
        ])
        .expect("static control points are valid")
    }

    pub fn points(&self) -> &[TfPoint] {
        &self.points
    }

    pub fn eval(&self, s: f64) -> [f64; 4] {
        let s = s.clamp(0.0, 1.0);
        let i = self.points.partition_point(|p| p.x <= s);
        if i == self.points.len() {
            return self.points[i - 1].rgba;
        }
        let (a, b) = (&self.points[i - 1], &self.points[i]);
        let w = (s - a.x) / (b.x - a.x);
        [0, 1, 2, 3].map(|c| a.rgba[c] + (b.rgba[c] - a.rgba[c]) * w)
    }
}

/// A per-sample scalar filter applied before classification.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum SampleFilter {
    #[default]
    None,
    /// Zero below the threshold, unchanged above.
    Threshold(f64),
    Gamma(f64),
    Invert,
}

impl SampleFilter {
    pub fn validate(&self) -> Result<(), RenderError> {
        match *self {
            SampleFilter::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                Err(RenderError::InvalidSettings(format!("threshold {t} outside [0, 1]")))
            }
            SampleFilter::Gamma(g) if !(g > 0.0 && g.is_finite()) => {
                Err(RenderError::InvalidSettings(format!("gamma {g} must be positive")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        match *self {
            SampleFilter::None => s,
            SampleFilter::Threshold(t) => {
                if s < t {
                    0.0
                } else {
                    s
                }
            }
            SampleFilter::Gamma(g) => s.powf(g),
            SampleFilter::Invert => 1.0 - s,
        }
    }
}

/// Filter, classify, and correct opacity for a step of `step` (in the same
/// units as `reference_step`): `a' = 1 - (1 - a)^(step / reference_step)`.
#[inline]
pub fn classify_and_correct(
    tf: &TransferFunction,
    scalar: f64,
    step: f64,
    reference_step: f64,
    filter: SampleFilter,
) -> [f64; 4] {
    let [r, g, b, a] = tf.eval(filter.apply(scalar));
    let corrected = if a <= 0.0 {
        0.0
    } else if step == reference_step {
        a
    } else {
        1.0 - (1.0 - a).powf(step / reference_step)
    };
    [r, g, b, corrected]
}

/// Front-to-back "under" step: `C += (1 - A) a c`, `A += (1 - A) a`.
/// `acc` is premultiplied, `sample` is straight color with its alpha.
#[inline]
pub fn composite_step(acc: [f64; 4], sample: [f64; 4]) -> [f64; 4] {
    let w = (1.0 - acc[3]) * sample[3];
    [acc[0] + w * sample[0], acc[1] + w * sample[1], acc[2] + w * sample[2], acc[3] + w]
}

//! Integrated Gradients over every input coordinate of a graph.
//!
//! The path integral is approximated with an m-step right Riemann sum:
//! `attr_i = (x_i - x'_i) * mean_{k=1..m} dF/dx_i (x' + k/m (x - x'))`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::model::{input_gradients, GraphSample, InputGradient, ModelParams};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 50;

/// A scalar function of a graph's inputs with its gradient.
pub trait ScalarField {
    fn value_and_gradient(&self, points: &[GraphSample]) -> Result<Vec<(f64, InputGradient)>>;
}

/// Log-probability of one class under a trained model (eval mode).
pub struct ClassLogProb<'a> {
    pub params: &'a ModelParams,
    pub target: usize,
}

impl ScalarField for ClassLogProb<'_> {
    fn value_and_gradient(&self, points: &[GraphSample]) -> Result<Vec<(f64, InputGradient)>> {
        input_gradients(self.params, points, self.target)
    }
}

/// `F(x) = w . x + b` over the same layout as a graph sample.
pub struct LinearField {
    pub weights: InputGradient,
    pub bias: f64,
}

impl ScalarField for LinearField {
    fn value_and_gradient(&self, points: &[GraphSample]) -> Result<Vec<(f64, InputGradient)>> {
        let w = &self.weights;
        points
            .iter()
            .map(|p| {
                if p.packets.dim() != w.packets.dim() || p.flow.len() != w.flow.len() {
                    return Err(Error::Shape("linear field layout mismatch".into()));
                }
                let v = w.flow.dot(&p.flow)
                    + (&w.packets * &p.packets).sum()
                    + (&w.contain * &p.contain).sum()
                    + (&w.link * &p.link).sum()
                    + self.bias;
                Ok((v, w.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AttributionRequest {
    pub input: GraphSample,
    /// Defaults to all zeros.
    pub baseline: Option<GraphSample>,
    pub steps: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub flow: Array1<f64>,
    pub packets: Array2<f64>,
    pub contain: Array2<f64>,
    pub link: Array2<f64>,
    pub target: usize,
    pub steps: usize,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|sum of attributions - (F(x) - F(x'))|`
    pub completeness_gap: f64,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.flow.sum() + self.packets.sum() + self.contain.sum() + self.link.sum()
    }

    pub fn num_coordinates(&self) -> usize {
        self.flow.len() + self.packets.len() + self.contain.len() + self.link.len()
    }
}

fn same_layout(a: &GraphSample, b: &GraphSample) -> bool {
    a.flow.len() == b.flow.len()
        && a.packets.dim() == b.packets.dim()
        && a.contain.dim() == b.contain.dim()
        && a.link.dim() == b.link.dim()
}

/// Flat coordinate of the first non-finite entry (flow, packets, contain,
/// link order).
fn first_non_finite(g: &InputGradient) -> Option<usize> {
    g.flow
        .iter()
        .chain(g.packets.iter())
        .chain(g.contain.iter())
        .chain(g.link.iter())
        .position(|v| !v.is_finite())
}

/// Path points are evaluated `chunk` at a time.
pub fn integrated_gradients(
    field: &dyn ScalarField,
    req: &AttributionRequest,
    chunk: usize,
) -> Result<Attribution> {
    let m = req.steps;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("integration needs at least 2 steps, got {m}")));
    }
    let x = &req.input;
    let base = req.baseline.clone().unwrap_or_else(|| x.zeros_like());
    if !same_layout(x, &base) {
        return Err(Error::Shape("baseline does not match the input layout".into()));
    }
    let mut acc = InputGradient::zeros_like(x);
    let mut f_input = f64::NAN;
    let ks: Vec<usize> = (1..=m).collect();
    for ks in ks.chunks(chunk.max(1)) {
        let points: Vec<GraphSample> = ks
            .iter()
            .map(|k| {
                if *k == m {
                    x.clone()
                } else {
                    x.interpolate_from(&base, *k as f64 / m as f64)
                }
            })
            .collect();
        for (k, (v, g)) in ks.iter().zip(field.value_and_gradient(&points)?) {
            if let Some(coordinate) = first_non_finite(&g) {
                return Err(Error::NonFiniteGradient { coordinate });
            }
            acc.flow += &g.flow;
            acc.packets += &g.packets;
            acc.contain += &g.contain;
            acc.link += &g.link;
            if *k == m {
                f_input = v;
            }
        }
    }
    let f_baseline = field.value_and_gradient(std::slice::from_ref(&base))?[0].0;
    let scale = 1.0 / m as f64;
    let att = Attribution {
        flow: (&x.flow - &base.flow) * &acc.flow * scale,
        packets: (&x.packets - &base.packets) * &acc.packets * scale,
        contain: (&x.contain - &base.contain) * &acc.contain * scale,
        link: (&x.link - &base.link) * &acc.link * scale,
        target: req.target,
        steps: m,
        f_input,
        f_baseline,
        completeness_gap: 0.0,
    };
    let gap = (att.total() - (f_input - f_baseline)).abs();
    Ok(Attribution {
        completeness_gap: gap,
        ..att
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletenessCheck {
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Passes when the gap is within 2% of |F(x) - F(x')| or 1e-3, whichever
/// is larger.
pub fn completeness_check(att: &Attribution, f_input: f64, f_baseline: f64) -> CompletenessCheck {
    let delta = f_input - f_baseline;
    let gap = (att.total() - delta).abs();
    let tolerance = (0.02 * delta.abs()).max(1e-3);
    CompletenessCheck {
        gap,
        tolerance,
        pass: gap <= tolerance,
    }
}

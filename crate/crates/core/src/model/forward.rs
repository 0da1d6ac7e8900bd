use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{rel_key, type_key, GraphBatch, GraphSample, ModelParams, Relation};
use crate::autodiff::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

pub(crate) struct InputVars {
    pub flow: Var,
    pub packet: Var,
    pub contain: Var,
    pub link: Var,
}

pub(crate) struct Built {
    pub logp: Var,
    pub inputs: InputVars,
    pub params: BTreeMap<String, Var>,
    /// (running-stat key, batch mean, batch biased variance, rows)
    pub bn_stats: Vec<(String, Array1<f64>, Array1<f64>, usize)>,
    pub alphas: Vec<(usize, Relation, Rc<Vec<usize>>, Var)>,
}

struct RelationInput<'a> {
    layer: usize,
    rel: Relation,
    src_h: Var,
    dst_h: Var,
    src: &'a Rc<Vec<usize>>,
    dst: &'a Rc<Vec<usize>>,
    attr: Var,
    n_dst: usize,
    isolated: Option<Rc<Vec<f64>>>,
}

fn relation(
    t: &mut Tape,
    pv: &BTreeMap<String, Var>,
    params: &ModelParams,
    r: RelationInput<'_>,
) -> (Var, Var) {
    let cfg = &params.config;
    let heads = cfg.heads(r.layer);
    let p = |part: &str| pv[&rel_key(r.layer, r.rel, part)];
    let w = p("w");
    let xs = t.matmul(r.src_h, w);
    let xt = if r.src_h == r.dst_h { xs } else { t.matmul(r.dst_h, w) };
    let xe = t.matmul(r.attr, p("we"));
    let xs_e = t.gather(xs, r.src.clone());
    let xt_e = t.gather(xt, r.dst.clone());
    let ls = t.head_dot(xs_e, p("att_src"), heads);
    let lt = t.head_dot(xt_e, p("att_dst"), heads);
    let le = t.head_dot(xe, p("att_edge"), heads);
    let logit = t.add(ls, lt);
    let logit = t.add(logit, le);
    let act = t.leaky_relu(logit, cfg.attention_slope);
    let alpha = t.segment_softmax(act, r.dst.clone(), r.n_dst);
    let m = t.add(xs_e, xe);
    let msg = t.head_mul(alpha, m);
    let mut out = t.scatter_add(msg, r.dst.clone(), r.n_dst);
    if let Some(mask) = r.isolated {
        if mask.iter().any(|v| *v != 0.0) {
            let selfloop = t.row_scale(xt, mask);
            out = t.add(out, selfloop);
        }
    }
    (out, alpha)
}

pub(crate) fn build(t: &mut Tape, params: &ModelParams, batch: &GraphBatch, mode: Mode) -> Result<Built> {
    let cfg = &params.config;
    batch.check(cfg)?;
    let pv: BTreeMap<String, Var> = params
        .tensors
        .iter()
        .map(|(k, v)| (k.clone(), t.leaf(v.clone())))
        .collect();
    let inputs = InputVars {
        flow: t.leaf(batch.flow_x.clone()),
        packet: t.leaf(batch.packet_x.clone()),
        contain: t.leaf(batch.contain_attr.clone()),
        link: t.leaf(batch.link_attr.clone()),
    };
    let g = batch.num_graphs;
    let p = batch.num_packets();
    let packet_ids = Rc::new((0..p).collect::<Vec<_>>());
    let link_iso = Rc::new(batch.isolated_mask(&batch.link_dst));
    let link_rev_iso = Rc::new(batch.isolated_mask(&batch.link_src));

    let hf = t.matmul(inputs.flow, pv["proj.flow.w"]);
    let mut hf = t.add_row(hf, pv["proj.flow.b"]);
    let hp = t.matmul(inputs.packet, pv["proj.packet.w"]);
    let mut hp = t.add_row(hp, pv["proj.packet.b"]);

    let mut bn_stats = Vec::new();
    let mut alphas = Vec::new();
    let slope = cfg.activation_slope();
    for layer in 1..=2 {
        let specs = [
            (Relation::Contain, hf, hp, &batch.packet_graph, &packet_ids, inputs.contain, p, None),
            (Relation::ContainedBy, hp, hf, &packet_ids, &batch.packet_graph, inputs.contain, g, None),
            (Relation::Link, hp, hp, &batch.link_src, &batch.link_dst, inputs.link, p, Some(link_iso.clone())),
            (
                Relation::LinkRev,
                hp,
                hp,
                &batch.link_dst,
                &batch.link_src,
                inputs.link,
                p,
                Some(link_rev_iso.clone()),
            ),
        ];
        let mut flow_sum: Option<Var> = None;
        let mut packet_sum: Option<Var> = None;
        for (rel, src_h, dst_h, src, dst, attr, n_dst, isolated) in specs {
            let (out, alpha) = relation(
                t,
                &pv,
                params,
                RelationInput {
                    layer,
                    rel,
                    src_h,
                    dst_h,
                    src,
                    dst,
                    attr,
                    n_dst,
                    isolated,
                },
            );
            alphas.push((layer, rel, dst.clone(), alpha));
            let slot = if rel == Relation::ContainedBy {
                &mut flow_sum
            } else {
                &mut packet_sum
            };
            *slot = Some(match *slot {
                Some(acc) => t.add(acc, out),
                None => out,
            });
        }
        let mut next = Vec::with_capacity(2);
        for (ty, sum) in [("flow", flow_sum), ("packet", packet_sum)] {
            let sum = sum.expect("every node type receives messages");
            let mut h = t.add_row(sum, pv[&type_key(layer, ty, "bias")]);
            if cfg.batch_norm {
                let gamma = pv[&type_key(layer, ty, "bn.gamma")];
                let beta = pv[&type_key(layer, ty, "bn.beta")];
                let key = type_key(layer, ty, "bn");
                h = match mode {
                    Mode::Train => {
                        let rows = t.value(h).nrows();
                        let (y, mean, var) = t.batch_norm(h, gamma, beta, cfg.bn_eps);
                        bn_stats.push((key, mean, var, rows));
                        y
                    }
                    Mode::Eval => {
                        let rs = params
                            .running
                            .get(&key)
                            .ok_or_else(|| Error::Shape(format!("running stats {key} missing")))?;
                        t.batch_norm_fixed(h, gamma, beta, &rs.mean, &rs.var, cfg.bn_eps)
                    }
                };
            }
            next.push(t.leaky_relu(h, slope));
        }
        hf = next[0];
        hp = next[1];
    }

    let counts = batch.nodes_per_graph();
    let pooled = t.scatter_add(hp, batch.packet_graph.clone(), g);
    let pooled = t.add(pooled, hf);
    let pooled = t.row_scale(pooled, Rc::new(counts.iter().map(|c| 1.0 / *c as f64).collect()));

    let mut h = pooled;
    let n_dense = cfg.head_dims.len() + 1;
    for i in 0..n_dense {
        let z = t.matmul(h, pv[&format!("head.w{i}")]);
        h = t.add_row(z, pv[&format!("head.b{i}")]);
        if i + 1 < n_dense {
            h = t.relu(h);
        }
    }
    let logp = t.log_softmax(h);
    Ok(Built {
        logp,
        inputs,
        params: pv,
        bn_stats,
        alphas,
    })
}

/// Per-graph log-probabilities (G x classes). Train mode uses batch
/// statistics but does not touch the running statistics.
pub fn forward(params: &ModelParams, batch: &GraphBatch, mode: Mode) -> Result<Array2<f64>> {
    let mut t = Tape::new();
    let b = build(&mut t, params, batch, mode)?;
    Ok(t.value(b.logp).clone())
}

/// Attention coefficients of one relation in one layer. Row e belongs to
/// the e-th edge of the relation, whose destination is `dst[e]`.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub layer: usize,
    pub relation: Relation,
    pub dst: Vec<usize>,
    pub alpha: Array2<f64>,
}

pub fn forward_detailed(
    params: &ModelParams,
    batch: &GraphBatch,
    mode: Mode,
) -> Result<(Array2<f64>, Vec<AttentionTrace>)> {
    let mut t = Tape::new();
    let b = build(&mut t, params, batch, mode)?;
    let traces = b
        .alphas
        .iter()
        .map(|(layer, relation, dst, a)| AttentionTrace {
            layer: *layer,
            relation: *relation,
            dst: dst.to_vec(),
            alpha: t.value(*a).clone(),
        })
        .collect();
    Ok((t.value(b.logp).clone(), traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_log_probs(row: ndarray::ArrayView1<'_, f64>) -> Self {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        Prediction {
            class: best,
            probabilities: row.iter().map(|v| v.exp()).collect(),
        }
    }
}

/// Eval-mode predictions, `batch_size` graphs at a time.
pub fn predict_samples(
    params: &ModelParams,
    samples: &[GraphSample],
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = GraphBatch::collate(chunk)?;
        let logp = forward(params, &batch, Mode::Eval)?;
        out.extend(logp.axis_iter(Axis(0)).map(Prediction::from_log_probs));
    }
    Ok(out)
}

/// Gradient of the target log-probability with respect to one graph's
/// inputs, in the model's normalized input space.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub flow: Array1<f64>,
    pub packets: Array2<f64>,
    pub contain: Array2<f64>,
    pub link: Array2<f64>,
}

impl InputGradient {
    pub fn zeros_like(s: &GraphSample) -> Self {
        InputGradient {
            flow: Array1::zeros(s.flow.raw_dim()),
            packets: Array2::zeros(s.packets.raw_dim()),
            contain: Array2::zeros(s.contain.raw_dim()),
            link: Array2::zeros(s.link.raw_dim()),
        }
    }
}

/// For every sample: (log p(target), gradient). Eval mode; samples are
/// independent of each other.
pub fn input_gradients(
    params: &ModelParams,
    samples: &[GraphSample],
    target: usize,
) -> Result<Vec<(f64, InputGradient)>> {
    if target >= params.config.classes {
        return Err(Error::InvalidArgument(format!("target class {target} out of range")));
    }
    let batch = GraphBatch::collate(samples)?;
    let mut t = Tape::new();
    let b = build(&mut t, params, &batch, Mode::Eval)?;
    let picks = (0..batch.num_graphs).map(|i| (i, target, 1.0)).collect();
    let root = t.pick_sum(b.logp, Rc::new(picks));
    let mut grads = t.backward(root);
    let flow = grads.take(&t, b.inputs.flow);
    let packets = batch.split_packets(&grads.take(&t, b.inputs.packet));
    let contain = batch.split_packets(&grads.take(&t, b.inputs.contain));
    let link = batch.split_links(&grads.take(&t, b.inputs.link));
    let logp = t.value(b.logp);
    Ok(packets
        .into_iter()
        .zip(contain)
        .zip(link)
        .enumerate()
        .map(|(i, ((packets, contain), link))| {
            (
                logp[[i, target]],
                InputGradient {
                    flow: flow.row(i).to_owned(),
                    packets,
                    contain,
                    link,
                },
            )
        })
        .collect())
}

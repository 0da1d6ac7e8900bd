use std::rc::Rc;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::graph::HeteroGraph;
use crate::{Error, Result};

/// One graph in the model's input space (already normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub id: String,
    pub flow: Array1<f64>,
    /// n x payload_dim
    pub packets: Array2<f64>,
    /// n x contain_dim, row i belongs to packet i
    pub contain: Array2<f64>,
    /// (n-1) x link_dim, row i joins packet i to packet i+1
    pub link: Array2<f64>,
    pub label: Option<usize>,
}

impl GraphSample {
    pub fn num_packets(&self) -> usize {
        self.packets.nrows()
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.num_packets();
        let ok = n >= 1
            && self.flow.len() == cfg.flow_dim
            && self.packets.ncols() == cfg.payload_dim
            && self.contain.dim() == (n, cfg.contain_dim)
            && self.link.dim() == (n - 1, cfg.link_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "graph {}: flow {}, packets {:?}, contain {:?}, link {:?} do not fit the model",
                self.id,
                self.flow.len(),
                self.packets.dim(),
                self.contain.dim(),
                self.link.dim()
            )))
        }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        GraphSample {
            id: self.id.clone(),
            flow: Array1::zeros(self.flow.raw_dim()),
            packets: Array2::zeros(self.packets.raw_dim()),
            contain: Array2::zeros(self.contain.raw_dim()),
            link: Array2::zeros(self.link.raw_dim()),
            label: self.label,
        }
    }

    /// `base + t * (self - base)`
    pub fn interpolate_from(&self, base: &GraphSample, t: f64) -> Self {
        GraphSample {
            id: self.id.clone(),
            flow: &base.flow + &((&self.flow - &base.flow) * t),
            packets: &base.packets + &((&self.packets - &base.packets) * t),
            contain: &base.contain + &((&self.contain - &base.contain) * t),
            link: &base.link + &((&self.link - &base.link) * t),
            label: self.label,
        }
    }
}

/// Per-feature standardization statistics from a training set. Payload
/// bytes are scaled by 1/255 instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub flow_mean: Vec<f64>,
    pub flow_std: Vec<f64>,
    pub contain_mean: Vec<f64>,
    pub contain_std: Vec<f64>,
    pub link_mean: Vec<f64>,
    pub link_std: Vec<f64>,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&[f64]> = rows.collect();
    if rows.is_empty() {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in &rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(flow_dim: usize, contain_dim: usize, link_dim: usize) -> Self {
        Self {
            flow_mean: vec![0.0; flow_dim],
            flow_std: vec![1.0; flow_dim],
            contain_mean: vec![0.0; contain_dim],
            contain_std: vec![1.0; contain_dim],
            link_mean: vec![0.0; link_dim],
            link_std: vec![1.0; link_dim],
        }
    }

    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a HeteroGraph> + Clone) -> Self {
        let flow_dim = graphs
            .clone()
            .into_iter()
            .next()
            .map_or(0, |g| g.flow_features.len());
        let (flow_mean, flow_std) =
            mean_std(graphs.clone().into_iter().map(|g| g.flow_features.as_slice()), flow_dim);
        let (contain_mean, contain_std) = mean_std(
            graphs.clone().into_iter().flat_map(|g| g.contain.iter().map(|c| c.as_slice())),
            crate::graph::CONTAIN_FEATURE_COUNT,
        );
        let (link_mean, link_std) = mean_std(
            graphs.into_iter().flat_map(|g| g.link.iter().map(std::slice::from_ref)),
            crate::graph::LINK_FEATURE_COUNT,
        );
        Self {
            flow_mean,
            flow_std,
            contain_mean,
            contain_std,
            link_mean,
            link_std,
        }
    }

    pub fn apply(&self, g: &HeteroGraph) -> Result<GraphSample> {
        g.validate()?;
        if g.flow_features.len() != self.flow_mean.len() {
            return Err(Error::Shape(format!(
                "graph {} has {} flow features, normalizer expects {}",
                g.id,
                g.flow_features.len(),
                self.flow_mean.len()
            )));
        }
        let std = |v: f64, m: f64, s: f64| (v - m) / s;
        let flow = Array1::from_iter(
            g.flow_features
                .iter()
                .zip(self.flow_mean.iter().zip(&self.flow_std))
                .map(|(v, (m, s))| std(*v, *m, *s)),
        );
        let n = g.num_packets();
        let width = g.payloads[0].len();
        let packets = Array2::from_shape_fn((n, width), |(i, j)| g.payloads[i][j] as f64 / 255.0);
        let cd = self.contain_mean.len();
        let contain = Array2::from_shape_fn((n, cd), |(i, j)| {
            std(g.contain[i][j], self.contain_mean[j], self.contain_std[j])
        });
        let link = Array2::from_shape_fn((n - 1, 1), |(i, _)| {
            std(g.link[i], self.link_mean[0], self.link_std[0])
        });
        Ok(GraphSample {
            id: g.id.clone(),
            flow,
            packets,
            contain,
            link,
            label: g.label.map(|c| c.index()),
        })
    }

    /// Maps model-space flow values back to raw feature units.
    pub fn denormalize_flow(&self, i: usize, v: f64) -> f64 {
        v * self.flow_std[i] + self.flow_mean[i]
    }
}

/// Several graphs concatenated per node type.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub num_graphs: usize,
    /// G x flow_dim; row g is the flow node of graph g.
    pub flow_x: Array2<f64>,
    /// P x payload_dim
    pub packet_x: Array2<f64>,
    /// Graph of each packet node.
    pub packet_graph: Rc<Vec<usize>>,
    /// P x contain_dim; contain edge k joins flow packet_graph[k] and packet k.
    pub contain_attr: Array2<f64>,
    pub link_src: Rc<Vec<usize>>,
    pub link_dst: Rc<Vec<usize>>,
    /// L x link_dim
    pub link_attr: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    /// Row offset of each graph's first packet.
    pub packet_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn collate<'a>(samples: impl IntoIterator<Item = &'a GraphSample>) -> Result<Self> {
        let samples: Vec<&GraphSample> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (fd, pd, cd) = (first.flow.len(), first.packets.ncols(), first.contain.ncols());
        let ld = first.link.ncols();
        let g = samples.len();
        let p: usize = samples.iter().map(|s| s.num_packets()).sum();
        let l: usize = samples.iter().map(|s| s.link.nrows()).sum();
        let mut flow_x = Array2::zeros((g, fd));
        let mut packet_x = Array2::zeros((p, pd));
        let mut contain_attr = Array2::zeros((p, cd));
        let mut link_attr = Array2::zeros((l, ld));
        let mut packet_graph = Vec::with_capacity(p);
        let mut link_src = Vec::with_capacity(l);
        let mut link_dst = Vec::with_capacity(l);
        let mut offsets = Vec::with_capacity(g);
        let (mut po, mut lo) = (0, 0);
        for (gi, s) in samples.iter().enumerate() {
            let n = s.num_packets();
            if n == 0
                || s.flow.len() != fd
                || s.packets.ncols() != pd
                || s.contain.dim() != (n, cd)
                || s.link.dim() != (n - 1, ld)
            {
                return Err(Error::Shape(format!("graph {} does not match batch layout", s.id)));
            }
            flow_x.row_mut(gi).assign(&s.flow);
            packet_x.slice_mut(s![po..po + n, ..]).assign(&s.packets);
            contain_attr.slice_mut(s![po..po + n, ..]).assign(&s.contain);
            link_attr.slice_mut(s![lo..lo + n - 1, ..]).assign(&s.link);
            packet_graph.extend(std::iter::repeat(gi).take(n));
            for i in 0..n - 1 {
                link_src.push(po + i);
                link_dst.push(po + i + 1);
            }
            offsets.push(po);
            po += n;
            lo += n - 1;
        }
        Ok(GraphBatch {
            num_graphs: g,
            flow_x,
            packet_x,
            packet_graph: Rc::new(packet_graph),
            contain_attr,
            link_src: Rc::new(link_src),
            link_dst: Rc::new(link_dst),
            link_attr,
            labels: samples.iter().map(|s| s.label).collect(),
            packet_offsets: offsets,
        })
    }

    pub fn num_packets(&self) -> usize {
        self.packet_x.nrows()
    }

    /// Nodes (flow + packets) per graph.
    pub fn nodes_per_graph(&self) -> Vec<usize> {
        let mut c = vec![1; self.num_graphs];
        for &g in self.packet_graph.iter() {
            c[g] += 1;
        }
        c
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let p = self.num_packets();
        let l = self.link_src.len();
        let ok = self.flow_x.dim() == (self.num_graphs, cfg.flow_dim)
            && self.packet_x.ncols() == cfg.payload_dim
            && self.contain_attr.dim() == (p, cfg.contain_dim)
            && self.link_attr.dim() == (l, cfg.link_dim)
            && self.link_dst.len() == l
            && self.packet_graph.len() == p
            && self.packet_graph.iter().all(|g| *g < self.num_graphs)
            && self.link_src.iter().chain(self.link_dst.iter()).all(|i| *i < p);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("batch layout does not match the model config".into()))
        }
    }

    /// Packets without an incoming edge in `dst` get a weight of 1.
    pub(crate) fn isolated_mask(&self, dst: &[usize]) -> Vec<f64> {
        let mut has_in = vec![false; self.num_packets()];
        for &d in dst {
            has_in[d] = true;
        }
        has_in.into_iter().map(|h| if h { 0.0 } else { 1.0 }).collect()
    }

    /// Split per-packet rows back into per-graph blocks.
    pub fn split_packets(&self, m: &Array2<f64>) -> Vec<Array2<f64>> {
        let counts = self.nodes_per_graph();
        (0..self.num_graphs)
            .map(|g| {
                let o = self.packet_offsets[g];
                m.slice(s![o..o + counts[g] - 1, ..]).to_owned()
            })
            .collect()
    }

    /// Split per-link rows back into per-graph blocks.
    pub fn split_links(&self, m: &Array2<f64>) -> Vec<Array2<f64>> {
        let counts = self.nodes_per_graph();
        let mut o = 0;
        counts
            .iter()
            .map(|c| {
                let l = c - 2;
                let block = m.slice(s![o..o + l, ..]).to_owned();
                o += l;
                block
            })
            .collect()
    }

    pub fn flow_rows(&self, m: &Array2<f64>) -> Vec<Array1<f64>> {
        m.axis_iter(Axis(0)).map(|r| r.to_owned()).collect()
    }
}

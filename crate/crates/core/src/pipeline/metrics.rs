//! Multi-class precision/recall/F1 with macro averaging.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub predicted: usize,
    /// `None` when the class does not occur in the labels.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Macro F1 over payload-specific classes present in the labels.
    pub payload_specific_f1: Option<f64>,
    /// Macro F1 over the remaining classes present in the labels.
    pub flow_specific_f1: Option<f64>,
    /// `confusion[label][prediction]`
    pub confusion: Vec<Vec<usize>>,
    /// Classes excluded from the macro averages because they have no support.
    pub undefined: Vec<String>,
}

fn confusion(pred: &[usize], labels: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n]; n];
    for (p, y) in pred.iter().zip(labels) {
        m[*y][*p] += 1;
    }
    m
}

/// (precision, recall, f1) of class `c`; precision is 0 when nothing was
/// predicted as `c`.
fn prf(m: &[Vec<usize>], c: usize) -> (f64, f64, f64) {
    let tp = m[c][c] as f64;
    let support: usize = m[c].iter().sum();
    let predicted: usize = m.iter().map(|r| r[c]).sum();
    let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
    let r = if support == 0 { 0.0 } else { tp / support as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Macro F1 over classes present in `labels`.
pub fn macro_f1(pred: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let m = confusion(pred, labels, n_classes);
    let present: Vec<usize> = (0..n_classes).filter(|c| m[*c].iter().sum::<usize>() > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().map(|c| prf(&m, *c).2).sum::<f64>() / present.len() as f64
}

pub fn evaluate(
    pred: &[usize],
    labels: &[usize],
    class_names: &[String],
    payload_classes: &[usize],
) -> Result<EvalReport> {
    if pred.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let n = class_names.len();
    if let Some(bad) = pred.iter().chain(labels).find(|c| **c >= n) {
        return Err(Error::InvalidArgument(format!("class index {bad} out of range")));
    }
    let m = confusion(pred, labels, n);
    let mut per_class = Vec::with_capacity(n);
    let mut undefined = Vec::new();
    let mut present = Vec::new();
    for c in 0..n {
        let support: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|r| r[c]).sum();
        let (p, r, f) = prf(&m, c);
        let defined = support > 0;
        if defined {
            present.push(c);
        } else {
            undefined.push(class_names[c].clone());
        }
        per_class.push(ClassMetrics {
            class: class_names[c].clone(),
            support,
            predicted,
            precision: defined.then_some(p),
            recall: defined.then_some(r),
            f1: defined.then_some(f),
        });
    }
    if !undefined.is_empty() {
        log::warn!("classes without support excluded from macro averages: {}", undefined.join(", "));
    }
    let avg = |cs: &[usize], k: usize| -> Option<f64> {
        if cs.is_empty() {
            return None;
        }
        let s: f64 = cs
            .iter()
            .map(|c| {
                let t = prf(&m, *c);
                [t.0, t.1, t.2][k]
            })
            .sum();
        Some(s / cs.len() as f64)
    };
    let payload: Vec<usize> = present.iter().copied().filter(|c| payload_classes.contains(c)).collect();
    let flow: Vec<usize> = present.iter().copied().filter(|c| !payload_classes.contains(c)).collect();
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(EvalReport {
        samples: labels.len(),
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        per_class,
        macro_precision: avg(&present, 0).unwrap_or(0.0),
        macro_recall: avg(&present, 1).unwrap_or(0.0),
        macro_f1: avg(&present, 2).unwrap_or(0.0),
        payload_specific_f1: avg(&payload, 2),
        flow_specific_f1: avg(&flow, 2),
        confusion: m,
        undefined,
    })
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from("# Evaluation\n\n");
        s += &format!(
            "Samples: {}  \nAccuracy: {:.4}  \nMacro precision: {:.4}  \nMacro recall: {:.4}  \nMacro F1: {:.4}  \n",
            self.samples, self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        s += &format!(
            "Payload-specific F1: {}  \nFlow-specific F1: {}\n\n",
            fmt(self.payload_specific_f1),
            fmt(self.flow_specific_f1)
        );
        s += "| Class | Support | Precision | Recall | F1 |\n|---|---:|---:|---:|---:|\n";
        for c in &self.per_class {
            s += &format!(
                "| {} | {} | {} | {} | {} |\n",
                c.class,
                c.support,
                fmt(c.precision),
                fmt(c.recall),
                fmt(c.f1)
            );
        }
        s += "\n## Confusion matrix (rows: label, columns: prediction)\n\n";
        s += &format!(
            "| |{}|\n|---|{}\n",
            self.per_class.iter().map(|c| c.class.as_str()).collect::<Vec<_>>().join("|"),
            "---:|".repeat(self.per_class.len())
        );
        for (c, row) in self.per_class.iter().zip(&self.confusion) {
            s += &format!(
                "| {} |{}|\n",
                c.class,
                row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|")
            );
        }
        s
    }
}

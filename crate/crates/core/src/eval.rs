//! Segmentation scoring: intersection over union per class, summarized as
//! mean ± standard deviation across slices or across datasets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{ArrayView, Dimension, Zip};
use thiserror::Error;

use crate::model::{Class, LabelVolume};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("nothing to evaluate")]
    EmptyStack,
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1.0 when both masks are empty.
pub fn iou<D: Dimension>(a: ArrayView<'_, bool, D>, b: ArrayView<'_, bool, D>) -> Result<f64, EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    Zip::from(&a).and(&b).for_each(|&x, &y| {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    });
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// How the foreground "overall" score is defined; echoed into reports.
pub const OVERALL_DEFINITION: &str =
    "per-slice mean IoU over foreground classes {peripheral, central, resection}";

/// Per-slice IoU of one stack against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct StackIouReport {
    pub classes: Vec<Class>,
    /// `per_slice[k][c]` is the IoU of `classes[c]` on slice `k`.
    pub per_slice: Vec<Vec<f64>>,
    /// Per-slice mean over the foreground classes in `classes`.
    pub per_slice_overall: Vec<f64>,
    pub per_class: BTreeMap<Class, MeanStd>,
    pub overall: MeanStd,
}

/// Scores `pred` against `reference` slice by slice.
pub fn stack_iou_stats(pred: &LabelVolume, reference: &LabelVolume, classes: &[Class]) -> Result<StackIouReport, EvalError> {
    let (pm, rm) = (pred.manifest(), reference.manifest());
    if pred.labels().dim() != reference.labels().dim() {
        return Err(EvalError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            pred.labels().dim(),
            reference.labels().dim()
        )));
    }
    if pm.pixel_size_mm != rm.pixel_size_mm || pm.slice_spacing_mm != rm.slice_spacing_mm {
        return Err(EvalError::DimensionMismatch("manifest spacing differs".into()));
    }
    if pred.slice_count() == 0 || classes.is_empty() {
        return Err(EvalError::EmptyStack);
    }
    let fg: Vec<usize> = classes
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != Class::Background)
        .map(|(i, _)| i)
        .collect();
    let mut per_slice = Vec::with_capacity(pred.slice_count());
    let mut per_slice_overall = Vec::with_capacity(pred.slice_count());
    for k in 0..pred.slice_count() {
        let (p, r) = (pred.slice(k), reference.slice(k));
        let scores: Vec<f64> = classes
            .iter()
            .map(|&c| {
                let code = c.code();
                iou(p.mapv(|v| v == code).view(), r.mapv(|v| v == code).view())
            })
            .collect::<Result<_, _>>()?;
        if !fg.is_empty() {
            per_slice_overall.push(fg.iter().map(|&i| scores[i]).sum::<f64>() / fg.len() as f64);
        }
        per_slice.push(scores);
    }
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let col: Vec<f64> = per_slice.iter().map(|s| s[i]).collect();
            (c, MeanStd::of(&col).expect("nonempty stack"))
        })
        .collect();
    let overall = MeanStd::of(&per_slice_overall).ok_or(EvalError::EmptyStack)?;
    Ok(StackIouReport {
        classes: classes.to_vec(),
        per_slice,
        per_slice_overall,
        per_class,
        overall,
    })
}

/// Dataset-level summary: mean ± std of per-stack means.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIouReport {
    pub stacks: Vec<StackIouReport>,
    pub per_class: BTreeMap<Class, MeanStd>,
    pub overall: MeanStd,
}

pub fn dataset_iou_stats(stacks: Vec<StackIouReport>) -> Result<DatasetIouReport, EvalError> {
    if stacks.is_empty() {
        return Err(EvalError::EmptyStack);
    }
    let classes = stacks[0].classes.clone();
    let per_class = classes
        .iter()
        .map(|c| {
            let means: Vec<f64> = stacks.iter().filter_map(|s| s.per_class.get(c)).map(|m| m.mean).collect();
            (*c, MeanStd::of(&means).expect("nonempty"))
        })
        .collect();
    let overall_means: Vec<f64> = stacks.iter().map(|s| s.overall.mean).collect();
    Ok(DatasetIouReport {
        overall: MeanStd::of(&overall_means).expect("nonempty"),
        per_class,
        stacks,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct IouSummary {
    pub overall: MeanStd,
    pub central: MeanStd,
    pub peripheral: MeanStd,
    pub resection: Option<MeanStd>,
}

impl IouSummary {
    pub fn from_parts(overall: MeanStd, per_class: &BTreeMap<Class, MeanStd>) -> Option<Self> {
        Some(Self {
            overall,
            central: *per_class.get(&Class::Central)?,
            peripheral: *per_class.get(&Class::Peripheral)?,
            resection: per_class.get(&Class::Resection).copied(),
        })
    }
}

/// Renders `Method | Overall IoU | Central IoU | Peripheral IoU` rows, with a
/// trailing Resection column when any row carries one.
pub fn render_table(rows: &[(&str, &IouSummary)]) -> String {
    let with_resection = rows.iter().any(|(_, s)| s.resection.is_some());
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max("Method".len());
    let mut header = vec!["Overall IoU", "Central IoU", "Peripheral IoU"];
    if with_resection {
        header.push("Resection IoU");
    }
    let col_w = 15;
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "Method");
    for h in &header {
        let _ = write!(out, "  {h:<col_w$}");
    }
    out = out.trim_end().to_string();
    out.push('\n');
    for (name, s) in rows {
        let mut line = format!("{name:<name_w$}");
        let mut cells = vec![s.overall, s.central, s.peripheral];
        if with_resection {
            if let Some(r) = s.resection {
                cells.push(r);
            }
        }
        for c in cells {
            let _ = write!(line, "  {:<col_w$}", c.to_string());
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Line-oriented `key=value` rendering of a stack report.
pub fn stack_report_kv(report: &StackIouReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "overall.definition={OVERALL_DEFINITION}");
    let _ = writeln!(out, "std.scope=slices");
    let _ = writeln!(out, "slices={}", report.per_slice.len());
    write_stats(&mut out, "overall", &report.overall);
    for (c, m) in &report.per_class {
        write_stats(&mut out, c.name(), m);
    }
    for (k, scores) in report.per_slice.iter().enumerate() {
        let cells: Vec<String> = scores.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "slice.{k:04}={}", cells.join(","));
    }
    out
}

pub fn dataset_report_kv(report: &DatasetIouReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "overall.definition={OVERALL_DEFINITION}");
    let _ = writeln!(out, "std.scope=datasets");
    let _ = writeln!(out, "datasets={}", report.stacks.len());
    write_stats(&mut out, "overall", &report.overall);
    for (c, m) in &report.per_class {
        write_stats(&mut out, c.name(), m);
    }
    for (i, s) in report.stacks.iter().enumerate() {
        write_stats(&mut out, &format!("dataset.{i}.overall"), &s.overall);
        for (c, m) in &s.per_class {
            write_stats(&mut out, &format!("dataset.{i}.{}", c.name()), m);
        }
    }
    out
}

fn write_stats(out: &mut String, key: &str, m: &MeanStd) {
    let _ = writeln!(out, "{key}.mean={:.6}", m.mean);
    let _ = writeln!(out, "{key}.std={:.6}", m.std);
    let _ = writeln!(out, "{key}.n={}", m.n);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScanManifest;
    use ndarray::{array, Array2, Array3};
    use proptest::prelude::*;

    #[test]
    fn identical_and_disjoint() {
        let a = array![[true, false], [true, true]];
        assert_eq!(iou(a.view(), a.view()).unwrap(), 1.0);
        let b = a.mapv(|v| !v);
        assert_eq!(iou(a.view(), b.view()).unwrap(), 0.0);
        let e = Array2::from_elem((2, 2), false);
        assert_eq!(iou(e.view(), e.view()).unwrap(), 1.0);
    }

    #[test]
    fn overlapping_strips() {
        // 2×1 strips shifted by one pixel share one pixel out of three
        let mut a = Array2::from_elem((1, 3), false);
        let mut b = a.clone();
        a[[0, 0]] = true;
        a[[0, 1]] = true;
        b[[0, 1]] = true;
        b[[0, 2]] = true;
        assert!((iou(a.view(), b.view()).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Array2::from_elem((2, 2), false);
        let b = Array2::from_elem((2, 3), false);
        assert!(matches!(iou(a.view(), b.view()), Err(EvalError::DimensionMismatch(_))));
    }

    fn vol(labels: Array3<u8>) -> LabelVolume {
        let (n, h, w) = labels.dim();
        LabelVolume::new(ScanManifest::new(n, w, h, 0.1, n as f64, "t").unwrap(), labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let v = vol(Array3::from_shape_fn((4, 5, 6), |(z, y, x)| ((x + y + z) % 4) as u8));
        let r = stack_iou_stats(&v, &v, &Class::FOREGROUND).unwrap();
        assert_eq!(r.overall.mean, 1.0);
        assert_eq!(r.overall.std, 0.0);
        assert!(r.per_class.values().all(|m| m.mean == 1.0 && m.std == 0.0));
    }

    #[test]
    fn single_slice_std_is_zero() {
        let a = vol(Array3::from_shape_fn((1, 4, 4), |(_, y, _)| (y % 3) as u8));
        let b = vol(Array3::from_shape_fn((1, 4, 4), |(_, _, x)| (x % 3) as u8));
        let r = stack_iou_stats(&a, &b, &Class::FOREGROUND).unwrap();
        assert_eq!(r.overall.std, 0.0);
        assert!(r.overall.mean < 1.0);
    }

    #[test]
    fn table_renders_reference_row() {
        let m = |mean, std| MeanStd { mean, std, n: 5 };
        let row = IouSummary {
            overall: m(0.81, 0.04),
            central: m(0.86, 0.05),
            peripheral: m(0.76, 0.05),
            resection: None,
        };
        let table = render_table(&[("nnUNet", &row)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "Method  Overall IoU      Central IoU      Peripheral IoU");
        assert_eq!(lines[1], "nnUNet  0.81 ± 0.04      0.86 ± 0.05      0.76 ± 0.05");
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in proptest::collection::vec(any::<bool>(), 48),
                            b in proptest::collection::vec(any::<bool>(), 48)) {
            let a = Array2::from_shape_vec((6, 8), a).unwrap();
            let b = Array2::from_shape_vec((6, 8), b).unwrap();
            prop_assert_eq!(iou(a.view(), b.view()).unwrap(), iou(b.view(), a.view()).unwrap());
            if a.iter().any(|&v| v) {
                prop_assert_eq!(iou(a.view(), a.view()).unwrap(), 1.0);
            }
        }

        #[test]
        fn shrinking_prediction_stays_below_identity(bits in proptest::collection::vec(any::<bool>(), 48),
                                                     drop in proptest::collection::vec(any::<bool>(), 48)) {
            let a = Array2::from_shape_vec((6, 8), bits).unwrap();
            let d = Array2::from_shape_vec((6, 8), drop).unwrap();
            let shrunk = ndarray::Zip::from(&a).and(&d).map_collect(|&x, &y| x && !y);
            prop_assert!(iou(shrunk.view(), a.view()).unwrap() <= iou(a.view(), a.view()).unwrap());
        }
    }
}

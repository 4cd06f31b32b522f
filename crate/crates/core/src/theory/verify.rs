use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frr::{frr_constrained_solve, moment_audit, FrrOptions, MomentAudit};
use super::qp::{max_margin_solve, QpOptions};
use super::toy::{projected_classifier, replicate, sample_toy, sample_toy_ood, Axis, ReplicationMap, ToyDistribution};
use crate::datasets::LabeledDataset;
use crate::svg::{Point, ScatterPlot};
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub d_list: Vec<usize>,
    pub axes: Vec<Axis>,
    /// Training points per class for the hard-margin problem.
    pub train_per_class: usize,
    /// Points per class behind the sampled moments of the FRR program.
    pub frr_per_class: usize,
    /// Evaluation points (total) for ID and OOD accuracy.
    pub eval_samples: usize,
    /// Monte-Carlo size of the moment audit; 0 skips it.
    pub audit_samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            d_list: vec![0, 1, 5, 20],
            axes: vec![Axis::First, Axis::Second],
            train_per_class: 500,
            frr_per_class: 50_000,
            eval_samples: 10_000,
            audit_samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub d: usize,
    pub axis: Axis,
    pub solver: String,
    pub w: Vec<f64>,
    pub w_proj: [f64; 2],
    /// Percent.
    pub id_acc: f64,
    /// Percent.
    pub ood_acc: f64,
    pub group_equality_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub rows: Vec<TheoryRow>,
    pub moment_audit: Option<MomentAudit>,
}

impl TheoryReport {
    pub fn find(&self, d: usize, axis: Axis, solver: &str) -> Option<&TheoryRow> {
        self.rows.iter().find(|r| r.d == d && r.axis == axis && r.solver == solver)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,axis,solver,w_proj_x,w_proj_y,id_acc,ood_acc,group_equality_residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:.9},{:.4},{:.4},{:.3e}",
                r.d, r.axis, r.solver, r.w_proj[0], r.w_proj[1], r.id_acc, r.ood_acc, r.group_equality_residual
            );
        }
        s
    }
}

/// Percent of samples with `sign(<w, x>)` matching the label.
pub fn accuracy(w: &[f64], ds: &LabeledDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let correct = (0..ds.len())
        .filter(|&i| {
            let s: f64 = ds.inputs.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
            (s > 0.0) == (ds.labels[i] == 1)
        })
        .count();
    100.0 * correct as f64 / ds.len() as f64
}

/// `|group sum - other| / ||w||` for a classifier on replicated inputs.
pub fn group_equality_residual(w: &[f64], map: ReplicationMap) -> Result<f64, Error> {
    let p = projected_classifier(w, map)?;
    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((p[0] - p[1]).abs() / n)
}

/// Solves both programs for every `(d, axis)` and scores them on fresh ID
/// and shifted samples.
pub fn verify_theory(opts: &VerifyOptions) -> Result<TheoryReport, Error> {
    let dist = ToyDistribution::default();
    let train = sample_toy(&dist, opts.train_per_class, opts.seed, true);
    let frr_base = sample_toy(&dist, opts.frr_per_class, opts.seed.wrapping_add(1), true);
    let half = opts.eval_samples / 2;
    let id = sample_toy(&dist, half, opts.seed.wrapping_add(2), false);
    let ood = sample_toy_ood(half, opts.seed.wrapping_add(3));
    let mut rows = Vec::new();
    for &axis in &opts.axes {
        for &d in &opts.d_list {
            let map = ReplicationMap::new(d, axis);
            let tr = replicate(&train, map)?;
            let id_r = replicate(&id, map)?;
            let ood_r = replicate(&ood, map)?;
            let mm = max_margin_solve(&tr.inputs, &tr.signed_labels(), QpOptions::default())?;
            let fr_data = replicate(&frr_base, map)?;
            let fr = frr_constrained_solve(&fr_data.inputs, &fr_data.signed_labels(), FrrOptions::default())?;
            for (solver, w, converged) in [("max_margin", mm.w, true), ("frr", fr.w, fr.converged)] {
                rows.push(TheoryRow {
                    d,
                    axis,
                    solver: solver.to_string(),
                    w_proj: projected_classifier(&w, map)?,
                    id_acc: accuracy(&w, &id_r),
                    ood_acc: accuracy(&w, &ood_r),
                    group_equality_residual: group_equality_residual(&w, map)?,
                    w,
                    converged,
                });
            }
        }
    }
    let moment_audit = if opts.audit_samples > 0 {
        let d = opts.d_list.iter().copied().find(|&d| d >= 2).unwrap_or(5);
        // A deliberately asymmetric classifier so both moment terms show.
        let mut w = vec![0.5 / d as f64; d + 1];
        w[d] = 1.0;
        Some(moment_audit(d, &w, opts.audit_samples, opts.seed.wrapping_add(4))?)
    } else {
        None
    };
    Ok(TheoryReport { rows, moment_audit })
}

/// Writes `theory.csv`, `theory.json`, and one SVG per `(d, axis, solver)`.
pub fn write_theory_outputs(report: &TheoryReport, dir: &Path, seed: u64) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("theory.csv"), report.to_csv())?;
    fs::write(dir.join("theory.json"), serde_json::to_string_pretty(report)?)?;
    let train = sample_toy(&ToyDistribution::default(), 150, seed, false);
    let ood = sample_toy_ood(150, seed.wrapping_add(1));
    for r in &report.rows {
        let mut plot = ScatterPlot::new(
            &format!("d={} axis={} {}", r.d, r.axis, r.solver),
            [-2.0, 2.0],
            [-2.0, 2.0],
        );
        for (ds, hollow) in [(&train, false), (&ood, true)] {
            for i in 0..ds.len() {
                let x = ds.inputs.row(i);
                plot.points.push(Point {
                    x: x[0],
                    y: x[1],
                    class: ds.labels[i],
                    hollow,
                });
            }
        }
        plot.boundary = Some(r.w_proj);
        let name = format!("boundary_d{}_{}_{}.svg", r.d, r.axis, r.solver);
        fs::write(dir.join(name), plot.render())?;
    }
    Ok(())
}

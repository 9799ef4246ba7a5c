use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    load_data, opt_pct, pct, thread_pool, write_file, write_json, Cell, ExperimentConfig, LoadedData,
};
use crate::energy::OpsReport;
use crate::error::{Error, Result};
use crate::events::Modality;
use crate::memory::MemoryKind;
use crate::models::{build_model, Arch, Model, ModelSpec};
use crate::rng::derive_seed;
use crate::train::{
    evaluate, joint_epoch, train_epoch, write_metrics_line, MetricsRecord, OptimState, TrainConfig,
};

/// Test-set results of one modality path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityResult {
    pub modality: Modality,
    pub accuracy: f64,
    pub correct: usize,
    pub samples: usize,
    pub loss: f64,
    pub sparsity: f64,
    pub confusion: Vec<Vec<usize>>,
    pub ops: OpsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub model: String,
    pub memory: MemoryKind,
    pub arch: Arch,
    pub seed: u64,
    pub spec: ModelSpec,
    pub epochs: usize,
    pub results: Vec<ModalityResult>,
    /// Skipped updates reported by the optimizer.
    pub warnings: Vec<String>,
}

impl CellReport {
    pub fn accuracy(&self, m: Modality) -> Option<f64> {
        self.results.iter().find(|r| r.modality == m).map(|r| r.accuracy)
    }

    fn result(&self, m: Modality) -> Option<&ModalityResult> {
        self.results.iter().find(|r| r.modality == m)
    }
}

fn record(epoch: usize, split: String, loss: f64, acc: f64, sparsity: f64) -> MetricsRecord {
    MetricsRecord {
        epoch,
        split,
        loss,
        acc,
        sparsity,
    }
}

fn test_results(model: &Model, data: &LoadedData) -> Result<Vec<ModalityResult>> {
    model
        .arch()
        .modalities()
        .iter()
        .map(|&m| {
            let test = &data.get(m)?.test;
            let ev = evaluate(model, test)?;
            let correct = (0..ev.confusion.len()).map(|c| ev.confusion[c][c]).sum();
            Ok(ModalityResult {
                modality: m,
                accuracy: ev.accuracy,
                correct,
                samples: test.len(),
                loss: ev.loss,
                sparsity: ev.sparsity,
                confusion: ev.confusion,
                ops: OpsReport::from_activity(&model.spec, m, &ev.activity)?,
            })
        })
        .collect()
}

/// Trains and evaluates one cell and writes its log, checkpoint and report
/// under `dir`.
fn run_cell(cfg: &ExperimentConfig, cell: &Cell, data: &LoadedData, dir: &Path) -> Result<CellReport> {
    let spec = cfg.spec(cell);
    let mut model = build_model(&spec, cell.seed)?;
    let tc = TrainConfig {
        seed: cell.seed,
        ..cfg.train
    };
    let mut st = OptimState::new(&model.params);
    let mut log = Vec::new();
    let modalities = cell.arch.modalities();
    for epoch in 0..tc.epochs {
        let trained = match cell.arch {
            Arch::Dual => {
                let j = joint_epoch(
                    &mut model,
                    Some(&data.get(Modality::Visual)?.train),
                    Some(&data.get(Modality::Audio)?.train),
                    &tc,
                    &mut st,
                    epoch,
                )?;
                vec![(Modality::Visual, j.visual), (Modality::Audio, j.audio)]
            }
            _ => {
                let m = modalities[0];
                vec![(
                    m,
                    Some(train_epoch(&mut model, &data.get(m)?.train, &tc, &mut st, epoch)?),
                )]
            }
        };
        for (m, e) in trained {
            if let Some(e) = e {
                write_metrics_line(
                    &mut log,
                    &record(epoch, format!("train/{m}"), e.loss, e.accuracy, e.sparsity),
                )?;
            }
        }
        let last = epoch + 1 == tc.epochs;
        if tc.eval_every > 0 && (epoch + 1) % tc.eval_every == 0 && !last {
            for &m in modalities {
                let ev = evaluate(&model, &data.get(m)?.test)?;
                write_metrics_line(
                    &mut log,
                    &record(epoch, format!("test/{m}"), ev.loss, ev.accuracy, ev.sparsity),
                )?;
            }
        }
        info!("{}: epoch {} done", cell.id, epoch + 1);
    }
    let results = test_results(&model, data)?;
    for r in &results {
        write_metrics_line(
            &mut log,
            &record(
                tc.epochs,
                format!("test/{}", r.modality),
                r.loss,
                r.accuracy,
                r.sparsity,
            ),
        )?;
    }
    let report = CellReport {
        cell: cell.id.clone(),
        model: cell.memory.model_id().to_string(),
        memory: cell.memory,
        arch: cell.arch,
        seed: cell.seed,
        spec,
        epochs: tc.epochs,
        results,
        warnings: st.warnings.clone(),
    };
    write_file(&dir.join("metrics.jsonl"), &log)?;
    write_file(&dir.join("model.ckpt"), &model.params.to_checkpoint())?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// One line of the ablation table. Accuracies are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub memory: MemoryKind,
    pub visual: Option<f64>,
    pub audio: Option<f64>,
    /// Mean of the modalities present.
    pub average: f64,
    /// `average` minus the best average of the run.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<CellReport>,
}

fn ablation_rows(cfg: &ExperimentConfig, reports: &[CellReport]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    let mut push = |model: String, memory: MemoryKind, visual: Option<f64>, audio: Option<f64>| {
        let present: Vec<f64> = [visual, audio].into_iter().flatten().collect();
        let average = present.iter().sum::<f64>() / present.len() as f64;
        rows.push(AblationRow {
            model,
            memory,
            visual,
            audio,
            average,
            delta: 0.0,
        });
    };
    for &k in &cfg.grid.memories {
        let of = |m: Modality| {
            reports
                .iter()
                .find(|r| r.memory == k && r.arch == Arch::single(m))
                .and_then(|r| r.accuracy(m))
        };
        push(
            k.model_id().to_string(),
            k,
            of(Modality::Visual),
            of(Modality::Audio),
        );
    }
    if let Some(r) = reports.iter().find(|r| r.arch == Arch::Dual) {
        push(
            format!("{}-dual", r.model),
            r.memory,
            r.accuracy(Modality::Visual),
            r.accuracy(Modality::Audio),
        );
    }
    let best = rows.iter().map(|r| r.average).fold(f64::NEG_INFINITY, f64::max);
    for r in &mut rows {
        r.delta = r.average - best;
    }
    rows
}

fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("# schema: memsnn-ablation v1\nModel,Memory,Visual,Audio,Average,Delta\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model,
            r.memory,
            opt_pct(r.visual),
            opt_pct(r.audio),
            pct(r.average),
            pct(r.delta)
        );
    }
    s
}

/// Trains every grid cell and writes `ablation.csv`, `ablation.json` and
/// `cells/<id>/{metrics.jsonl, model.ckpt, report.json}` under the output
/// directory.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationSummary> {
    cfg.validate()?;
    let cells = cfg.cells();
    let data = load_data(cfg, &cfg.modalities_needed(&cells))?;
    let pool = thread_pool(cfg)?;
    let out = &cfg.output_dir;
    let reports: Vec<CellReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(cfg, c, &data, &out.join("cells").join(&c.id)))
            .collect::<Result<_>>()
    })?;
    let rows = ablation_rows(cfg, &reports);
    write_file(&out.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
    let summary = AblationSummary { rows, cells: reports };
    write_json(&out.join("ablation.json"), &summary)?;
    Ok(summary)
}

/// Accuracies of one training regime. Fractions, not percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub label: String,
    pub visual: f64,
    pub audio: f64,
    /// Unweighted mean of the two modality accuracies.
    pub arithmetic_mean: f64,
    /// Accuracy over the union of both test sets.
    pub pooled_mean: f64,
}

impl JointRow {
    fn minus(&self, other: &JointRow, label: &str) -> JointRow {
        JointRow {
            label: label.to_string(),
            visual: self.visual - other.visual,
            audio: self.audio - other.audio,
            arithmetic_mean: self.arithmetic_mean - other.arithmetic_mean,
            pooled_mean: self.pooled_mean - other.pooled_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub memory: MemoryKind,
    pub seed: u64,
    pub parallel: JointRow,
    pub joint: JointRow,
    pub delta: JointRow,
    /// Set when a pooled and an arithmetic average differ at the printed
    /// precision, so the two cannot be used interchangeably.
    pub average_discrepancy: bool,
    pub cells: Vec<CellReport>,
}

fn joint_row(label: &str, v: &ModalityResult, a: &ModalityResult) -> JointRow {
    JointRow {
        label: label.to_string(),
        visual: v.accuracy,
        audio: a.accuracy,
        arithmetic_mean: 0.5 * (v.accuracy + a.accuracy),
        pooled_mean: (v.correct + a.correct) as f64 / (v.samples + a.samples) as f64,
    }
}

fn joint_csv(rows: &[&JointRow]) -> String {
    let mut s = String::from("# schema: memsnn-joint v1\nRow,Visual,Audio,ArithmeticMean,PooledMean\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.label,
            pct(r.visual),
            pct(r.audio),
            pct(r.arithmetic_mean),
            pct(r.pooled_mean)
        );
    }
    s
}

/// Trains a dual-encoder model and a matching pair of single-modality models
/// from the same seed, then writes `joint.csv`, `joint.json` and one
/// directory per model under `joint/`.
pub fn run_joint(cfg: &ExperimentConfig) -> Result<JointReport> {
    cfg.validate_common()?;
    let kind = cfg.joint.memory;
    let seed = derive_seed(cfg.seed, "joint");
    let id = kind.model_id();
    let cells = vec![
        Cell::new(format!("{id}-visual"), kind, Arch::Visual, seed),
        Cell::new(format!("{id}-audio"), kind, Arch::Audio, seed),
        Cell::new(format!("{id}-dual"), kind, Arch::Dual, seed),
    ];
    for m in [Modality::Visual, Modality::Audio] {
        if cfg.data.get(m).is_none() {
            return Err(Error::config(format!("joint training needs {m} data")));
        }
    }
    cfg.validate_cells(&cells)?;
    let data = load_data(cfg, &[Modality::Visual, Modality::Audio])?;
    let pool = thread_pool(cfg)?;
    let out = cfg.output_dir.join("joint");
    let reports: Vec<CellReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(cfg, c, &data, &out.join(&c.id)))
            .collect::<Result<_>>()
    })?;
    let get = |i: usize, m: Modality| reports[i].result(m).expect("cell evaluated on its modalities");
    let parallel = joint_row("Parallel", get(0, Modality::Visual), get(1, Modality::Audio));
    let joint = joint_row("Joint", get(2, Modality::Visual), get(2, Modality::Audio));
    let delta = joint.minus(&parallel, "Delta");
    let average_discrepancy = [&parallel, &joint]
        .iter()
        .any(|r| pct(r.arithmetic_mean) != pct(r.pooled_mean));
    write_file(
        &cfg.output_dir.join("joint.csv"),
        joint_csv(&[&parallel, &joint, &delta]).as_bytes(),
    )?;
    let report = JointReport {
        memory: kind,
        seed,
        parallel,
        joint,
        delta,
        average_discrepancy,
        cells: reports,
    };
    write_json(&cfg.output_dir.join("joint.json"), &report)?;
    Ok(report)
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{load_data, thread_pool, write_file, write_json, Cell, ExperimentConfig};
use crate::engram::{
    analyze, cross_modal_alignment, rate_features, zero_shot_transfer, EngramReport, FeatureMatrix,
};
use crate::error::{Error, Result};
use crate::events::Modality;
use crate::models::{build_model, Arch, Model};
use crate::rng::derive_seed;

fn load_cell(cfg: &ExperimentConfig, cell: &Cell, bytes: &[u8]) -> Result<Model> {
    let mut model = build_model(&cfg.spec(cell), cell.seed)?;
    model.params.load_checkpoint(bytes)?;
    Ok(model)
}

fn fmt(x: Option<f64>, digits: usize) -> String {
    x.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

fn engram_csv(reports: &[EngramReport]) -> String {
    let mut s = String::from(
        "# schema: memsnn-engram v1\nModel,Modality,Silhouette,DB,Transfer,AlignmentMeanDiag,EffDimFraction\n",
    );
    for r in reports {
        let db = match r.davies_bouldin {
            Some(v) => format!("{v:.4}"),
            None => "inf".into(),
        };
        let _ = writeln!(
            s,
            "{},{},{:.4},{},{},{},{:.4}",
            r.model,
            r.modality,
            r.silhouette,
            db,
            fmt(r.transfer_accuracy.map(|a| 100.0 * a), 2),
            fmt(r.alignment.as_ref().map(|a| a.mean_diag), 4),
            r.effective_dim_fraction
        );
    }
    s
}

/// Engram analysis of trained grid cells. Checkpoints are read from
/// `<checkpoints>/<cell id>/model.ckpt`; features come from the test split.
/// When a memory kind has both a visual and an audio cell, or the cell is a
/// dual model, the two feature sets are also aligned and cross-probed.
///
/// Writes `engram.csv`, `engram.json` and `features/<cell>-<modality>.csv`
/// under the output directory.
pub fn run_engram(cfg: &ExperimentConfig, checkpoints: &Path) -> Result<Vec<EngramReport>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut blobs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let path = checkpoints.join(&cell.id).join("model.ckpt");
        let bytes = fs::read(&path).map_err(|e| Error::IoAt {
            path: format!("checkpoint of cell {} ({})", cell.id, path.display()),
            source: e,
        })?;
        blobs.push(bytes);
    }
    let data = load_data(cfg, &cfg.modalities_needed(&cells))?;
    let pool = thread_pool(cfg)?;
    let features: Vec<Vec<(String, FeatureMatrix)>> = pool.install(|| {
        cells
            .par_iter()
            .zip(&blobs)
            .map(|(cell, bytes)| {
                let model = load_cell(cfg, cell, bytes)?;
                let label = match cell.arch {
                    Arch::Dual => cell.id.clone(),
                    _ => cell.memory.model_id().to_string(),
                };
                cell.arch
                    .modalities()
                    .iter()
                    .map(|&m| {
                        let seed = derive_seed(cell.seed, "engram");
                        let f = rate_features(&model, &data.get(m)?.test, cfg.engram.per_class, seed)?;
                        Ok((label.clone(), f))
                    })
                    .collect()
            })
            .collect::<Result<_>>()
    })?;
    let features: Vec<(String, FeatureMatrix)> = features.into_iter().flatten().collect();
    let mut reports: Vec<EngramReport> = pool.install(|| {
        features
            .par_iter()
            .map(|(label, f)| analyze(label, f))
            .collect::<Result<_>>()
    })?;
    // Cross-modal pairs share a model label.
    for i in 0..features.len() {
        if features[i].1.modality != Modality::Visual {
            continue;
        }
        let Some(j) = (0..features.len())
            .find(|&j| features[j].0 == features[i].0 && features[j].1.modality == Modality::Audio)
        else {
            continue;
        };
        let (fv, fa) = (&features[i].1, &features[j].1);
        let alignment = cross_modal_alignment(fv, fa)?;
        reports[i].transfer_accuracy = Some(zero_shot_transfer(fv, fa, &cfg.engram.probe)?);
        reports[j].transfer_accuracy = Some(zero_shot_transfer(fa, fv, &cfg.engram.probe)?);
        reports[i].alignment = Some(alignment.clone());
        reports[j].alignment = Some(alignment);
    }
    let out = &cfg.output_dir;
    for (cell_label, f) in &features {
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        write_file(
            &out.join("features")
                .join(format!("{cell_label}-{}.csv", f.modality)),
            &buf,
        )?;
    }
    write_file(&out.join("engram.csv"), engram_csv(&reports).as_bytes())?;
    write_json(&out.join("engram.json"), &reports)?;
    Ok(reports)
}

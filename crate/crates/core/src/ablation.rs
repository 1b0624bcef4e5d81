//! The twelve-model ablation grid: recurrent variant × stability branches,
//! trained under one seed and scored on a held-out sequence.

use std::path::Path;

use crate::config::{FusionMode, ModelConfig, RecurrentVariant, TrainConfig};
use crate::data::Sequence;
use crate::error::{io_err, Error, Result};
use crate::metrics::{per_frame_psnr_curve, ChannelMode};
use crate::model::TcNet;
use crate::train::{LossRecord, TrainData, Trainer};

/// One grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    /// 1-based model number.
    pub model: usize,
    pub variant: RecurrentVariant,
    pub tsb: bool,
    pub cmb: bool,
    pub fusion: FusionMode,
}

impl AblationSpec {
    /// `base` with this row's branches and fusion applied. Branch block
    /// counts come from `base` when switched on.
    pub fn config(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.variant = self.variant;
        c.cmb_blocks = if self.cmb { base.cmb_blocks.max(1) } else { 0 };
        c.tsb_blocks = if self.tsb { base.tsb_blocks.max(1) } else { 0 };
        c.fusion.mode = self.fusion;
        c
    }
}

/// Rows in table order: per variant, no branch, CMB only, TSB only (all
/// one-stage fusion), then both branches with progressive fusion.
pub fn table4_grid() -> Vec<AblationSpec> {
    let mut rows = Vec::with_capacity(12);
    for variant in RecurrentVariant::ALL {
        for (tsb, cmb) in [(false, false), (false, true), (true, false), (true, true)] {
            rows.push(AblationSpec {
                model: rows.len() + 1,
                variant,
                tsb,
                cmb,
                fusion: if tsb && cmb { FusionMode::Progressive } else { FusionMode::OneStage },
            });
        }
    }
    rows
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub params: usize,
    pub psnr_db: f64,
    pub loss_initial: f64,
    pub loss_final: f64,
    pub finite: bool,
    pub monotone: bool,
}

/// Means of `segments` consecutive chunks of the loss log.
pub fn segment_means(log: &[LossRecord], segments: usize) -> Vec<f64> {
    let n = log.len();
    (0..segments)
        .filter_map(|s| {
            let (lo, hi) = (s * n / segments, (s + 1) * n / segments);
            (hi > lo).then(|| log[lo..hi].iter().map(|r| r.loss).sum::<f64>() / (hi - lo) as f64)
        })
        .collect()
}

/// Smoothed loss trend: chunk means never increase.
pub fn monotone_trend(log: &[LossRecord], segments: usize) -> bool {
    let m = segment_means(log, segments);
    !m.is_empty() && m.windows(2).all(|w| w[1] <= w[0])
}

pub const TREND_SEGMENTS: usize = 4;

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub const CSV_HEADER: [&str; 12] = [
    "model",
    "variant",
    "temporal_self_alignment",
    "spatial_correlative_matching",
    "one_stage_fusion",
    "progressive_fusion",
    "params",
    "psnr_db",
    "loss_initial",
    "loss_final",
    "finite",
    "monotone",
];

impl AblationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for r in &self.rows {
            let s = &r.spec;
            w.write_record([
                s.model.to_string(),
                s.variant.as_str().to_string(),
                flag(s.tsb),
                flag(s.cmb),
                flag(s.fusion == FusionMode::OneStage),
                flag(s.fusion == FusionMode::Progressive),
                r.params.to_string(),
                format!("{:.4}", r.psnr_db),
                r.loss_initial.to_string(),
                r.loss_final.to_string(),
                flag(r.finite),
                flag(r.monotone),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| io_err(path, e))
    }

    /// Model numbers sorted by PSNR, best first (ties keep table order).
    pub fn psnr_ordering(&self) -> Vec<usize> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.psnr_db.total_cmp(&a.psnr_db));
        rows.iter().map(|r| r.spec.model).collect()
    }
}

/// Train and score each row. `eval` is an `(lr, hr)` held-out pair scored
/// in RGB. Rows run in order; `on_row` sees each as it completes.
pub fn run_ablation(
    base: &ModelConfig,
    train: &TrainConfig,
    data: &TrainData,
    eval: (&Sequence, &Sequence),
    specs: &[AblationSpec],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for spec in specs {
        let config = spec.config(base);
        let model = TcNet::new(&config, train.seed)?;
        let params = model.param_count();
        let mut trainer = Trainer::new(model, train.clone())?;
        let (finite, err) = match trainer.run(data, |_, _| {}) {
            Ok(()) => (true, None),
            Err(Error::Diverged { iter, detail }) => (false, Some(format!("iteration {iter}: {detail}"))),
            Err(e) => return Err(e),
        };
        let log = &trainer.log;
        let (psnr_db, monotone) = if finite {
            let sr = trainer.model.upscale(eval.0)?;
            (
                per_frame_psnr_curve(&sr, eval.1, ChannelMode::Rgb)?.mean_psnr(),
                monotone_trend(log, TREND_SEGMENTS),
            )
        } else {
            (f64::NAN, false)
        };
        let means = segment_means(log, TREND_SEGMENTS);
        let row = AblationRow {
            spec: spec.clone(),
            params,
            psnr_db,
            loss_initial: means.first().copied().unwrap_or(f64::NAN),
            loss_final: means.last().copied().unwrap_or(f64::NAN),
            finite: finite && log.iter().all(|r| r.loss.is_finite()),
            monotone,
        };
        if let Some(e) = err {
            eprintln!("model {} diverged at {e}", spec.model);
        }
        on_row(&row);
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_table_shape() {
        let g = table4_grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g.iter().filter(|s| s.fusion == FusionMode::Progressive).count(), 3);
        assert!(g.iter().all(|s| (s.fusion == FusionMode::Progressive) == (s.tsb && s.cmb)));
        assert_eq!(g[0].variant, RecurrentVariant::Vanilla);
        assert_eq!(g[11].variant, RecurrentVariant::Hybrid);
        for s in &g {
            s.config(&ModelConfig::toy()).validate().unwrap();
        }
    }

    #[test]
    fn trend_uses_chunk_means() {
        let log = |v: &[f64]| -> Vec<LossRecord> {
            v.iter()
                .enumerate()
                .map(|(i, &l)| LossRecord {
                    iter: i as u64,
                    loss: l,
                    lr_main: 0.0,
                    lr_flow: 0.0,
                })
                .collect()
        };
        // noisy but falling
        assert!(monotone_trend(&log(&[5.0, 6.0, 4.0, 4.5, 3.0, 3.5, 2.0, 2.2]), 4));
        assert!(!monotone_trend(&log(&[1.0, 1.0, 2.0, 2.0]), 2));
        assert_eq!(segment_means(&log(&[1.0, 3.0, 5.0, 7.0]), 2), vec![2.0, 6.0]);
    }
}

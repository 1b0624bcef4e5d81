//! The twelve-row ablation grid: parameter cost of each branch per variant,
//! and optionally a short training sweep.
//!
//! cargo run --release --example ablation_grid -- [iters]

use tcvsr::ablation::{run_ablation, table4_grid};
use tcvsr::config::{ModelConfig, TrainConfig};
use tcvsr::data::{degrade_sequence, synth_sequence, DegradationKind, Pattern};
use tcvsr::model::TcNet;
use tcvsr::train::TrainData;

fn main() -> tcvsr::Result<()> {
    let base = ModelConfig::toy();
    let grid = table4_grid();
    for s in &grid {
        let n = TcNet::new(&s.config(&base), 0)?.param_count();
        println!(
            "M{:<2} {:<7} tsb={} cmb={} {:<11} {n:>7} params",
            s.model,
            s.variant.as_str(),
            s.tsb as u8,
            s.cmb as u8,
            s.fusion.as_str()
        );
    }

    let Some(iters) = std::env::args().nth(1).and_then(|s| s.parse::<u64>().ok()) else {
        return Ok(());
    };
    let hr = synth_sequence(Pattern::Checkerboard, &[(2.0, 1.0)], 8, 96, 96, 1)?;
    let data = TrainData::from_hr(vec![hr], DegradationKind::Bicubic, 4)?;
    let held = synth_sequence(Pattern::Checkerboard, &[(2.0, 1.0)], 4, 96, 96, 2)?;
    let held_lr = degrade_sequence(&held, DegradationKind::Bicubic, 4)?;
    let train = TrainConfig { total_iters: iters, freeze_flow_iters: iters / 4, flow_pretrain_iters: 20, ..TrainConfig::toy() };
    let report = run_ablation(&base, &train, &data, (&held_lr, &held), &grid, |r| {
        println!("M{:<2} psnr {:.3} loss {:.4} -> {:.4}", r.spec.model, r.psnr_db, r.loss_initial, r.loss_final);
    })?;
    print!("{}", report.to_csv()?);
    Ok(())
}

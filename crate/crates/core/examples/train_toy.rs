//! Train the toy network on a synthetic sequence, checkpoint it, resume it
//! and compare against bicubic on a held-out clip.
//!
//! cargo run --release --example train_toy -- [iters]

use std::collections::BTreeMap;

use tcvsr::config::{ModelConfig, TrainConfig};
use tcvsr::data::{bicubic_resize, degrade_sequence, synth_sequence, DegradationKind, Pattern};
use tcvsr::metrics::{per_frame_psnr_curve, ChannelMode};
use tcvsr::model::TcNet;
use tcvsr::train::{TrainData, Trainer};

fn main() -> tcvsr::Result<()> {
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let motion = [(2.0, 1.0)];
    let hr = synth_sequence(Pattern::Checkerboard, &motion, 16, 128, 128, 1)?;
    let data = TrainData::from_hr(vec![hr], DegradationKind::Bicubic, 4)?;
    let cfg = TrainConfig { total_iters: iters, freeze_flow_iters: iters / 4, ..TrainConfig::toy() };

    let mut trainer = Trainer::new(TcNet::new(&ModelConfig::toy(), cfg.seed)?, cfg)?;
    println!("{} parameters", trainer.model.param_count());
    let log = |r: &tcvsr::train::LossRecord, pre: bool| {
        if r.iter % 50 == 0 {
            println!("{} {:>4} loss {:.4} lr {:.1e}", if pre { "flow" } else { "main" }, r.iter, r.loss, r.lr_main);
        }
    };
    // stop halfway, checkpoint, and pick the run back up from disk
    trainer.run_until(&data, iters / 2, log)?;
    let dir = tempfile_dir();
    trainer.save(&dir)?;
    let mut trainer = Trainer::load(&dir, &BTreeMap::new())?;
    trainer.run(&data, log)?;

    let held = synth_sequence(Pattern::Checkerboard, &motion, 8, 128, 128, 2)?;
    let lr = degrade_sequence(&held, DegradationKind::Bicubic, 4)?;
    let sr = trainer.model.upscale(&lr)?;
    let bic = lr.map_frames(|f| Ok(bicubic_resize(f, 128, 128)?))?;
    let score = |s| per_frame_psnr_curve(s, &held, ChannelMode::Y).map(|r| r.mean_psnr());
    println!("held-out PSNR(Y): model {:.2} dB, bicubic {:.2} dB", score(&sr)?, score(&bic)?);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("tcvsr-train-toy-{}", std::process::id()))
}

//! Temporal profiles and per-frame PSNR curves: the two views used to judge
//! flicker in a super-resolved clip.
//!
//! cargo run --example temporal_consistency -- [out_dir]

use std::path::PathBuf;

use tcvsr::data::{bicubic_resize, degrade_sequence, save_png, synth_sequence, DegradationKind, Pattern};
use tcvsr::metrics::{per_frame_psnr_curve, profile_slope, temporal_profile, ChannelMode};

fn main() -> tcvsr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/temporal".into()));
    std::fs::create_dir_all(&out).map_err(|e| tcvsr::Error::Io(e.to_string()))?;
    let hr = synth_sequence(Pattern::GradientNoise, &[(2.0, 0.0)], 24, 64, 128, 9)?;
    let lr = degrade_sequence(&hr, DegradationKind::bd(), 4)?;
    let up = lr.map_frames(|f| Ok(bicubic_resize(f, 64, 128)?))?;

    for (name, seq) in [("gt", &hr), ("bicubic", &up)] {
        let prof = temporal_profile(seq, 32)?;
        save_png(&prof, &out.join(format!("profile_{name}.png")))?;
        println!("{name}: profile slope {:.3} px/frame", profile_slope(&prof, 6)?);
    }

    let report = per_frame_psnr_curve(&up, &hr, ChannelMode::Y)?;
    report.write_csv(&out.join("psnr.csv"))?;
    println!("bicubic: mean {:.2} dB, per-frame std {:.3} dB", report.mean_psnr(), report.psnr_std());
    Ok(())
}

//! Render a synthetic translating sequence and degrade it with BI and BD.
//!
//! cargo run --example degradation -- [out_dir]

use std::path::PathBuf;

use tcvsr::data::{bicubic_resize, degrade_sequence, save_frames, synth_sequence, DegradationKind, Pattern};
use tcvsr::metrics::{per_frame_psnr_curve, ChannelMode};

fn main() -> tcvsr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/degradation".into()));
    let hr = synth_sequence(Pattern::TextLike, &[(2.0, 1.0), (1.0, -1.0)], 8, 128, 128, 3)?;
    save_frames(&hr, &out.join("hr"))?;

    for (name, kind) in [("bi", DegradationKind::Bicubic), ("bd", DegradationKind::bd())] {
        let lr = degrade_sequence(&hr, kind, 4)?;
        save_frames(&lr, &out.join(name))?;
        // how much the naive bicubic upsample loses under each degradation
        let up = lr.map_frames(|f| Ok(bicubic_resize(f, 128, 128)?))?;
        let r = per_frame_psnr_curve(&up, &hr, ChannelMode::Y)?;
        println!("{name}: {}×{} LR frames, bicubic back-up PSNR(Y) {:.2} dB", lr.height(), lr.width(), r.mean_psnr());
    }
    println!("frames written under {}", out.display());
    Ok(())
}

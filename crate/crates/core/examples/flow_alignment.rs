//! Backward warping with known flows, then the flow pyramid after supervised
//! pretraining on shifted crops of synthetic canvases (about two minutes at
//! the toy default; pass a smaller step count to try it quickly).

use tcvsr::config::{ModelConfig, TrainConfig};
use tcvsr::data::{degrade_sequence, synth_sequence, DegradationKind, Pattern};
use tcvsr::flow::{estimate_flow, warp, FlowField};
use tcvsr::model::TcNet;
use tcvsr::train::{TrainData, Trainer};

fn main() -> tcvsr::Result<()> {
    let hr = synth_sequence(Pattern::GradientNoise, &[(4.0, 0.0)], 4, 128, 128, 1)?;
    let lr = degrade_sequence(&hr, DegradationKind::Bicubic, 4)?;
    let (f0, f1) = (&lr.frames[0], &lr.frames[1]);

    // content moves 1 LR px right, so frame 0 is frame 1 sampled one px to the right
    let aligned = warp(f1, &FlowField::constant(1, 32, 32, 1.0, 0.0))?;
    let err = |a: &tcvsr::tensor::Tensor| -> f64 {
        let mut s = 0.0;
        for c in 0..3 {
            for y in 4..28 {
                for x in 4..28 {
                    s += (a.at(&[c, y, x]) - f0.at(&[c, y, x])).abs() as f64;
                }
            }
        }
        s / (3.0 * 24.0 * 24.0)
    };
    println!("mean |frame0 − frame1| {:.4}, after warp {:.2e}", err(f1), err(&aligned));

    let data = TrainData::new(vec![hr], vec![lr.clone()], 4)?;
    let toy = TrainConfig::toy();
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(toy.flow_pretrain_iters);
    let cfg = TrainConfig { flow_pretrain_iters: iters, total_iters: 0, freeze_flow_iters: 0, ..toy };
    let mut trainer = Trainer::new(TcNet::new(&ModelConfig::toy(), 0)?, cfg)?;
    trainer.run(&data, |r, _| {
        if r.iter % 2000 == 0 {
            println!("pretrain iter {:>3} loss {:.4}", r.iter, r.loss);
        }
    })?;
    let m = &trainer.model;
    let flow = estimate_flow(&m.net.flow, &m.store, f0, f1)?;
    println!("gradient noise, 1 px: EPE {:.3} px", flow.endpoint_error(1.0, 0.0, 4));

    let text = degrade_sequence(&synth_sequence(Pattern::TextLike, &[(12.0, 0.0)], 2, 128, 128, 3)?, DegradationKind::Bicubic, 4)?;
    let flow = estimate_flow(&m.net.flow, &m.store, &text.frames[0], &text.frames[1])?;
    println!("text-like, 3 px: EPE {:.3} px", flow.endpoint_error(3.0, 0.0, 4));
    Ok(())
}

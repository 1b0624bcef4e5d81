//! The tape directly: build a tiny conv + pixel-shuffle network by hand,
//! backpropagate a Charbonnier loss and take one Adam step.

use tcvsr::tensor::{cosine_lr, AdamConfig, AdamState, Binding, Builder, Graph, Init, ParamGroup, ParamStore, RngState, Tensor};

fn main() -> tcvsr::Result<()> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = RngState::new(0);
    let (conv, up) = {
        let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Main);
        (b.conv("conv", 3, 8, 3, Init::FanIn), b.conv("up", 8, 12, 3, Init::FanIn))
    };
    let lr = Tensor::<f32>::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut RngState::new(1));
    let hr = Tensor::<f32>::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut RngState::new(2));
    let mut adam = AdamState::new(&store, AdamConfig::default());

    for step in 0..5 {
        let g = Graph::new();
        let p = Binding::new(&g, &store);
        let x = g.constant(lr.clone());
        let h = g.leaky_relu(&conv.forward(&p, &x)?, 0.1)?;
        let sr = g.pixel_shuffle(&up.forward(&p, &h)?, 2)?;
        let loss = g.charbonnier(&sr, &g.constant(hr.clone()), 1e-3)?;
        let grads = p.gradients(&g.backward(&loss)?);
        let lr = cosine_lr(step, 5, 1e-2, 1e-4)?;
        adam.step(&mut store, &grads, |_| Some(lr))?;
        println!("step {step} loss {:.5}", loss.value().data()[0]);
    }
    Ok(())
}

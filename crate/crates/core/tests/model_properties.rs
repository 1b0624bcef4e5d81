use tcvsr::config::{ModelConfig, RecurrentVariant};
use tcvsr::data::{synth_sequence, Pattern, Sequence};
use tcvsr::model::TcNet;
use tcvsr::stability::self_attention;
use tcvsr::tensor::{Binding, Graph, RngState, Tensor};

fn static_frames(t: usize, h: usize, w: usize) -> Vec<Tensor> {
    let seq = synth_sequence(Pattern::TextLike, &[(0.0, 0.0)], t, h, w, 4).unwrap();
    seq.frames.iter().map(|f| f.clone().reshape(&[1, 3, h, w]).unwrap()).collect()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b) as f64
}

#[test]
fn static_scene_aligns_to_itself_at_init() {
    // the flow head starts at zero, so every warped neighbour is the frame itself
    let model = TcNet::new(&ModelConfig::toy(), 3).unwrap();
    let g = Graph::inference();
    let p = Binding::new(&g, &model.store);
    let frames: Vec<_> = static_frames(5, 16, 16).into_iter().map(|f| g.constant(f)).collect();
    let (al, _) = model.net.run_sequence(&p, &frames).unwrap();
    for i in 0..5 {
        for h in [&al.h_prev[i], &al.h_next[i]].into_iter().flatten() {
            assert_eq!(max_diff(h.value(), frames[i].value()), 0.0, "frame {i}");
        }
    }
}

#[test]
fn static_scene_features_equal_without_hidden_path() {
    // with the hidden-state input weights zeroed, a static clip has no
    // source of frame-to-frame variation left
    let mut model = TcNet::new(&ModelConfig::toy(), 5).unwrap();
    let c = model.config().channels;
    let stage = &model.net.propagation;
    assert_eq!(stage.variant, RecurrentVariant::Hybrid);
    let wid = stage.conv_in.weight;
    let hidden = c + 3..2 * c + 3;
    {
        let wt = model.store.value_mut(wid);
        let (co, ci, k) = (wt.dim(0), wt.dim(1), wt.dim(2));
        let d = wt.data_mut();
        for o in 0..co {
            for i in hidden.clone() {
                d[(o * ci + i) * k * k..(o * ci + i + 1) * k * k].fill(0.0);
            }
        }
    }
    let mut rng = RngState::new(1);
    tcvsr::checks::activate_zero_params(&mut model.store, &mut rng, 0.1);
    let g = Graph::inference();
    let p = Binding::new(&g, &model.store);
    let frames: Vec<_> = static_frames(6, 16, 16).into_iter().map(|f| g.constant(f)).collect();
    let (_, feats) = model.net.run_sequence(&p, &frames).unwrap();
    for f in &feats[1..] {
        assert!(max_diff(f.value(), feats[0].value()) < 1e-5);
    }
}

#[test]
fn tsb_static_input_on_2d_remainder_path() {
    // T = 3 < patch3d, so the whole clip is one group of 2D patches: every
    // frame sees the same token set and gets the same output
    let model = TcNet::new(&ModelConfig::toy(), 6).unwrap();
    let c = model.config().channels;
    let mut rng = RngState::new(2);
    let one = Tensor::<f32>::uniform(&[1, c, 8, 8], -1.0, 1.0, &mut rng);
    let x = Tensor::concat(&[&one, &one, &one], 0).unwrap();
    let g = Graph::inference();
    let p = Binding::new(&g, &model.store);
    let y = model.net.tsb[0].forward(&p, &g.constant(x), 3, 1).unwrap().to_tensor();
    let f0 = y.narrow(0, 0, 1).unwrap();
    for t in 1..3 {
        assert!(max_diff(&y.narrow(0, t, 1).unwrap(), &f0) < 1e-5);
    }
}

#[test]
fn self_attention_is_permutation_equivariant() {
    let mut rng = RngState::new(8);
    let (n, d) = (7, 5);
    let q = Tensor::<f64>::uniform(&[n, d], -1.0, 1.0, &mut rng);
    let k = Tensor::<f64>::uniform(&[n, d], -1.0, 1.0, &mut rng);
    let v = Tensor::<f64>::uniform(&[n, 3], -1.0, 1.0, &mut rng);
    let perm = [4usize, 2, 6, 0, 1, 5, 3];
    let rows = |t: &Tensor<f64>| {
        let parts: Vec<Tensor<f64>> = perm.iter().map(|&i| t.narrow(0, i, 1).unwrap()).collect();
        Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0).unwrap()
    };
    let g = Graph::inference();
    let run = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| {
        self_attention(&g, &g.constant(q.clone()), &g.constant(k.clone()), &g.constant(v.clone()))
            .unwrap()
            .to_tensor()
    };
    let y = run(&q, &k, &v);
    let yp = run(&rows(&q), &rows(&k), &rows(&v));
    assert!(rows(&y).max_abs_diff(&yp) < 1e-12);
}

#[test]
fn upscale_is_deterministic_and_handles_single_frame() {
    let cfg = ModelConfig::toy();
    let lr = Sequence::new(static_frames(1, 16, 16).into_iter().map(|f| f.reshape(&[3, 16, 16]).unwrap()).collect())
        .unwrap();
    let a = TcNet::new(&cfg, 9).unwrap().upscale(&lr).unwrap();
    let b = TcNet::new(&cfg, 9).unwrap().upscale(&lr).unwrap();
    assert_eq!(a.frames[0].shape(), &[3, 64, 64]);
    assert_eq!(a.frames[0].data(), b.frames[0].data());
}

#[test]
fn each_variant_runs_a_clip() {
    let frames = static_frames(5, 16, 16);
    for variant in RecurrentVariant::ALL {
        let cfg = ModelConfig { variant, ..ModelConfig::toy() };
        let model = TcNet::new(&cfg, 0).unwrap();
        let lr = Sequence::new(frames.iter().map(|f| f.clone().reshape(&[3, 16, 16]).unwrap()).collect()).unwrap();
        let sr = model.upscale(&lr).unwrap();
        assert_eq!(sr.len(), 5);
        assert!(sr.frames.iter().all(|f| f.all_finite()));
    }
}

use tcvsr_tensor::kernels::conv::PaddingMode;
use tcvsr_tensor::nn::{Builder, Init};
use tcvsr_tensor::{Binding, Graph, ParamGroup, ParamStore, RngState, Tensor, Var};

fn c(t: Tensor<f64>) -> Var<f64> {
    Var::constant(t)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut RngState::new(seed))
}

#[test]
fn conv2d_identity_kernel() {
    let g = Graph::new();
    let x = random(&[2, 3, 5, 7], 1);
    let mut w = Tensor::zeros(&[3, 3, 3, 3]);
    for ch in 0..3 {
        w.set(&[ch, ch, 1, 1], 1.0);
    }
    for mode in [PaddingMode::Zero, PaddingMode::Replicate] {
        let y = g
            .conv2d(&c(x.clone()), &c(w.clone()), Some(&c(Tensor::zeros(&[3]))), 1, 1, mode)
            .unwrap();
        assert_eq!(y.value(), &x);
    }
}

#[test]
fn conv2d_downsampling_shape() {
    let g = Graph::<f32>::new();
    let x = Var::constant(Tensor::zeros(&[1, 64, 64, 64]));
    let w = Var::constant(Tensor::zeros(&[64, 64, 4, 4]));
    let y = g.conv2d(&x, &w, None, 2, 1, PaddingMode::Zero).unwrap();
    assert_eq!(y.shape(), &[1, 64, 32, 32]);
}

#[test]
fn conv2d_hand_sum() {
    let g = Graph::new();
    let y = g
        .conv2d(
            &c(t(&[1, 1, 2, 2], &[1., 2., 3., 4.])),
            &c(Tensor::ones(&[1, 1, 2, 2])),
            Some(&c(Tensor::zeros(&[1]))),
            1,
            0,
            PaddingMode::Zero,
        )
        .unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.value().data(), &[10.0]);
}

#[test]
fn conv2d_shape_errors() {
    let g = Graph::<f64>::new();
    let x = c(Tensor::zeros(&[1, 3, 4, 4]));
    assert!(g.conv2d(&x, &c(Tensor::zeros(&[2, 4, 3, 3])), None, 1, 1, PaddingMode::Zero).is_err());
    assert!(g.conv2d(&x, &c(Tensor::zeros(&[2, 3, 7, 7])), None, 1, 1, PaddingMode::Zero).is_err());
    assert!(g.conv2d(&x, &c(Tensor::zeros(&[2, 3, 3, 3])), None, 0, 1, PaddingMode::Zero).is_err());
}

#[test]
fn replicate_padding_extends_border() {
    let g = Graph::new();
    // 1×3 kernel picking the left neighbour
    let w = t(&[1, 1, 1, 3], &[1., 0., 0.]);
    let y = g
        .conv2d(&c(t(&[1, 1, 1, 3], &[5., 6., 7.])), &c(w), None, 1, 0, PaddingMode::Replicate)
        .unwrap();
    assert_eq!(y.value().data(), &[5.0]);
    let w = c(t(&[1, 1, 3, 3], &[0., 0., 0., 1., 0., 0., 0., 0., 0.]));
    let x = c(t(&[1, 1, 1, 3], &[5., 6., 7.]));
    let z = g.conv2d(&x, &w, None, 1, 1, PaddingMode::Replicate).unwrap();
    assert_eq!(z.value().data(), &[5., 5., 6.]);
    let z = g.conv2d(&x, &w, None, 1, 1, PaddingMode::Zero).unwrap();
    assert_eq!(z.value().data(), &[0., 5., 6.]);
}

#[test]
fn conv_transpose_examples() {
    let g = Graph::<f32>::new();
    let x = Var::constant(Tensor::zeros(&[1, 64, 32, 32]));
    let w = Var::constant(Tensor::zeros(&[64, 64, 2, 2]));
    assert_eq!(g.conv_transpose2d(&x, &w, None, 2, 0).unwrap().shape(), &[1, 64, 64, 64]);

    let g = Graph::new();
    let x = random(&[1, 2, 3, 3], 5);
    let mut w = Tensor::zeros(&[2, 2, 1, 1]);
    w.set(&[0, 0, 0, 0], 1.0);
    w.set(&[1, 1, 0, 0], 1.0);
    let y = g.conv_transpose2d(&c(x.clone()), &c(w), None, 1, 0).unwrap();
    assert_eq!(y.value(), &x);

    let y = g
        .conv_transpose2d(&c(t(&[1, 1, 1, 1], &[3.])), &c(Tensor::ones(&[1, 1, 2, 2])), None, 2, 0)
        .unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.value().data(), &[3., 3., 3., 3.]);
}

#[test]
fn matmul_examples() {
    let g = Graph::new();
    let b = random(&[4, 3], 9);
    assert_eq!(g.matmul(&c(Tensor::eye(4)), &c(b.clone())).unwrap().value(), &b);
    let y = g.matmul(&c(t(&[1, 2], &[1., 2.])), &c(t(&[2, 1], &[3., 4.]))).unwrap();
    assert_eq!(y.value().data(), &[11.0]);
    let z = g.matmul(&c(Tensor::zeros(&[2, 4])), &c(b)).unwrap();
    assert!(z.value().data().iter().all(|&v| v == 0.0));
    assert!(g.matmul(&c(Tensor::zeros(&[2, 3])), &c(Tensor::zeros(&[2, 3]))).is_err());
}

#[test]
fn softmax_examples() {
    let g = Graph::new();
    let y = g.softmax_rows(&c(Tensor::zeros(&[1, 4]))).unwrap();
    for &v in y.value().data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let cst = 3.7;
    let y = g.softmax_rows(&c(t(&[1, 2], &[cst, cst + 2f64.ln()]))).unwrap();
    assert!((y.value().data()[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((y.value().data()[1] - 2.0 / 3.0).abs() < 1e-12);
    let y = g.softmax_rows(&c(t(&[1, 3], &[100., 0., 0.]))).unwrap();
    assert!(y.value().data()[0] > 0.9999);
    assert!(g.softmax_rows(&c(t(&[1, 2], &[f64::NAN, 0.]))).is_err());
}

#[test]
fn pixel_shuffle_examples() {
    let g = Graph::new();
    let x = random(&[1, 4, 2, 2], 3);
    let y = g.pixel_shuffle(&c(x.clone()), 2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    // out(c, r·h + a, r·w + b) = in(c·r² + a·r + b, h, w)
    for h in 0..2 {
        for w in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    assert_eq!(y.value().at(&[0, 0, 2 * h + a, 2 * w + b]), x.at(&[0, 2 * a + b, h, w]));
                }
            }
        }
    }
    let k = g.pixel_shuffle(&c(Tensor::full(&[2, 8, 3, 3], 0.7)), 2).unwrap();
    assert!(k.value().data().iter().all(|&v| v == 0.7));
    assert!(g.pixel_shuffle(&c(Tensor::zeros(&[1, 6, 2, 2])), 2).is_err());
    let back = g.pixel_unshuffle(&y, 2).unwrap();
    assert_eq!(back.value(), &x);
}

#[test]
fn resblock_examples() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = RngState::new(11);
    let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Main);
    let block = b.resblock("rb", 8);
    let stack: Vec<_> = (0..20).map(|i| b.resblock(&format!("s{i}"), 8)).collect();

    // zero second conv at init: identity
    let g = Graph::new();
    let p = Binding::new(&g, &store);
    let x = Var::constant(Tensor::uniform(&[1, 8, 12, 12], -1.0, 1.0, &mut rng));
    assert_eq!(block.forward(&p, &x).unwrap().value(), x.value());

    // all weights zero: identity
    let mut zeroed = store.clone();
    for prm in zeroed.iter_mut() {
        prm.value = Tensor::zeros(prm.value.shape());
    }
    let p0 = Binding::new(&g, &zeroed);
    assert_eq!(block.forward(&p0, &x).unwrap().value(), x.value());

    // random weights on a 20-block stack: same shape, different values
    for prm in store.iter_mut() {
        if prm.name.ends_with("weight") {
            prm.value = Tensor::uniform(prm.value.shape(), -0.2, 0.2, &mut rng);
        }
    }
    let p = Binding::new(&g, &store);
    let y = tcvsr_tensor::nn::resblocks_forward(&stack, &p, &x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.value().max_abs_diff(x.value()) > 1e-3);

    let wrong = Var::constant(Tensor::zeros(&[1, 4, 12, 12]));
    assert!(block.forward(&p, &wrong).is_err());
}

#[test]
fn resblock_paper_shape() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = RngState::new(1);
    let block = Builder::new(&mut store, &mut rng, ParamGroup::Main).resblock("rb", 64);
    let g = Graph::inference();
    let p = Binding::new(&g, &store);
    let x = Var::constant(Tensor::zeros(&[1, 64, 32, 32]));
    assert_eq!(block.forward(&p, &x).unwrap().shape(), &[1, 64, 32, 32]);
}

#[test]
fn warp_identities() {
    let g = Graph::new();
    let src = random(&[1, 2, 6, 7], 21);
    let y = g.warp(&c(src.clone()), &c(Tensor::zeros(&[1, 2, 6, 7]))).unwrap();
    assert_eq!(y.value(), &src);

    let mut flow = Tensor::zeros(&[1, 2, 6, 7]);
    for i in 0..42 {
        flow.data_mut()[i] = 1.0;
    }
    let y = g.warp(&c(src.clone()), &c(flow)).unwrap();
    for ch in 0..2 {
        for yy in 0..6 {
            for x in 0..6 {
                assert!((y.value().at(&[0, ch, yy, x]) - src.at(&[0, ch, yy, x + 1])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn upsample_and_pool_of_constant() {
    let g = Graph::new();
    let x = c(Tensor::full(&[1, 2, 4, 6], 0.3));
    let u = g.upsample2(&x).unwrap();
    assert_eq!(u.shape(), &[1, 2, 8, 12]);
    assert!(u.value().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    let p = g.avg_pool2(&u).unwrap();
    assert!(p.value().max_abs_diff(x.value()) < 1e-15);
}

#[test]
fn charbonnier_values() {
    let g = Graph::new();
    let a = random(&[2, 3, 4], 4);
    let l = g.charbonnier(&c(a.clone()), &c(a.clone()), 1e-3).unwrap();
    assert_eq!(l.value().item(), 1e-3);
    let l = g
        .charbonnier(&c(Tensor::ones(&[5])), &c(Tensor::zeros(&[5])), 1e-3)
        .unwrap();
    assert!((l.value().item() - (1.0f64 + 1e-6).sqrt()).abs() < 1e-15);
}

#[test]
fn charbonnier_gradient_vanishes_at_zero_residual() {
    let g = Graph::new();
    let a = g.leaf(random(&[10], 8));
    let b = c(a.to_tensor());
    let l = g.charbonnier(&a, &b, 1e-3).unwrap();
    let grads = g.backward(&l).unwrap();
    assert!(grads.get(&a).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn finite_checks_reject_nan_weights() {
    let g = Graph::<f32>::new().with_finite_checks(true);
    let x = Var::constant(Tensor::zeros(&[1, 1, 3, 3]));
    let w = Var::constant(Tensor::full(&[1, 1, 1, 1], f32::NAN));
    assert!(g.conv2d(&x, &w, None, 1, 0, PaddingMode::Zero).is_err());
}

#[test]
fn gradients_accumulate_over_fanout() {
    let g = Graph::new();
    let x = g.leaf(t(&[2], &[1.5, -2.0]));
    let y = g.mul(&x, &x).unwrap();
    let z = g.add(&y, &x).unwrap();
    let s = g.sum(&z).unwrap();
    let grads = g.backward(&s).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn init_modes() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = RngState::new(0);
    let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Flow);
    let conv = b.conv("c", 4, 4, 3, Init::FanIn);
    let zero = b.conv("z", 4, 4, 3, Init::Zero);
    let bound = (6.0 / (1.01 * 36.0f64)).sqrt();
    let w = &store.get(conv.weight).value;
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(w.max() > 0.0 && w.min() < 0.0);
    assert!(store.get(zero.weight).value.data().iter().all(|&v| v == 0.0));
    assert_eq!(store.get(conv.bias).group, ParamGroup::Flow);
    assert_eq!(store.count(), 2 * (4 * 4 * 9 + 4));
}

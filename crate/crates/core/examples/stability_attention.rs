//! The two stability branches on a toy feature clip: 3D patch tokens,
//! temporal self-attention maps and the spatial correlative blocks.

use tcvsr::config::ModelConfig;
use tcvsr::model::TcNet;
use tcvsr::stability::{attention_map, embed_3d_patches, fold_3d_patches, stability_forward, PatchGrid3D};
use tcvsr::tensor::{Binding, Graph, RngState, Tensor};

fn main() -> tcvsr::Result<()> {
    let (t, c, h, w) = (4, 16, 8, 8);
    let mut rng = RngState::new(5);
    let x = Tensor::<f32>::uniform(&[t, c, h, w], -1.0, 1.0, &mut rng);

    let grid = PatchGrid3D::new(t, c, h, w, 2, 4, 4)?;
    let tokens = embed_3d_patches(&x, &grid)?;
    println!("{} tokens of width {}", grid.n(), grid.d());
    assert_eq!(fold_3d_patches(&tokens, &grid)?.data(), x.data());

    let map = attention_map(&tokens, &tokens, 1.0 / (grid.d() as f64).sqrt())?;
    for i in 0..grid.n() {
        let row: Vec<String> = (0..grid.n()).map(|j| format!("{:.2}", map.at(&[i, j]))).collect();
        println!("  {}", row.join(" "));
    }

    let model = TcNet::new(&ModelConfig::toy(), 0)?;
    let g = Graph::inference();
    let p = Binding::new(&g, &model.store);
    let (cm, sa) = stability_forward(&p, &g.constant(x), t, 1, &model.net.cmb, &model.net.tsb)?;
    println!("CMB output {:?}, TSB output {:?}", cm.shape(), sa.shape());
    Ok(())
}

//! Feature-map tokenization: shape-preserving conv, row-major flatten,
//! linear mix, CLS append, and the fixed 2-D sinusoidal positional table.

use rand::Rng;

use super::config::ModelConfig;
use crate::autodiff::{Graph, GraphParams, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Inserts one branch's tokenizer parameters under `prefix`: the conv,
/// the linear mix, and a zero-initialized CLS row.
pub fn init_tokenizer<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.token_width;
    let k = cfg.tokenizer_kernel;
    let fan = (d * k * k) as f64;
    let bound = 1.0 / fan.sqrt();
    store.insert(
        &format!("{prefix}.conv.w"),
        Tensor::rand_uniform(&[d, d, k, k], -bound, bound, rng),
    )?;
    store.insert(&format!("{prefix}.conv.b"), Tensor::zeros(&[d]))?;
    let lin = 1.0 / (d as f64).sqrt();
    store.insert(
        &format!("{prefix}.norm.w"),
        Tensor::rand_uniform(&[d, d], -lin, lin, rng),
    )?;
    store.insert(&format!("{prefix}.norm.b"), Tensor::zeros(&[d]))?;
    store.insert(&format!("{prefix}.cls"), Tensor::zeros(&[1, d]))?;
    Ok(())
}

/// Turns `[batch, D, s, s]` feature maps into `[batch, L, D]` tokens:
/// shape-preserving conv, row-major flatten of the grid (token i covers grid
/// cell (i / g, i % g)), then a linear mix of each token.
pub fn tokenize<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    prefix: &str,
    features: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let d = cfg.token_width;
    let pad = (cfg.tokenizer_kernel - 1) / 2;
    let conv = g.conv2d(
        features,
        bound.var(&format!("{prefix}.conv.w"))?,
        Some(bound.var(&format!("{prefix}.conv.b"))?),
        1,
        pad,
    )?;
    let shape = g.value(conv).shape().to_vec();
    let (b, grid_h, grid_w) = (shape[0], shape[2], shape[3]);
    let flat = g.reshape(conv, &[b, d, grid_h * grid_w])?;
    let tokens = g.permute(flat, &[0, 2, 1])?;
    g.linear(
        tokens,
        bound.var(&format!("{prefix}.norm.w"))?,
        bound.var(&format!("{prefix}.norm.b"))?,
    )
}

/// The fixed positional table for a g x g grid plus one CLS row, shape
/// `[g*g + 1, d]`. The first d/2 coordinates encode the grid row with the
/// standard sin/cos frequency ladder, the rest the column; the CLS row
/// (last) is all zeros.
pub fn positional_table<T: Scalar>(grid: usize, d: usize) -> Result<Tensor<T>> {
    if d % 4 != 0 || d == 0 {
        return Err(Error::Config(format!(
            "token width {d} must be a positive multiple of 4"
        )));
    }
    let l = grid * grid;
    let half = d / 2;
    let mut data = vec![0.0f64; (l + 1) * d];
    for i in 0..l {
        let row = (i / grid) as f64;
        let col = (i % grid) as f64;
        for (offset, pos) in [(0, row), (half, col)] {
            for pair in 0..half / 2 {
                let freq = 10000f64.powf(-2.0 * pair as f64 / half as f64);
                data[i * d + offset + 2 * pair] = (pos * freq).sin();
                data[i * d + offset + 2 * pair + 1] = (pos * freq).cos();
            }
        }
    }
    Tensor::new(vec![l + 1, d], data.into_iter().map(T::from_f64).collect())
}

/// Appends the CLS token after all feature tokens and adds the positional
/// table: `[batch, L, D]` becomes `[batch, L+1, D]` with CLS at the last
/// index.
pub fn add_cls_pos<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    prefix: &str,
    tokens: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let shape = g.value(tokens).shape().to_vec();
    if shape.len() != 3 || shape[1] != cfg.token_count() || shape[2] != cfg.token_width {
        return Err(Error::shape(format!(
            "expected [batch, {}, {}] tokens, got {shape:?}",
            cfg.token_count(),
            cfg.token_width
        )));
    }
    let cls = bound.var(&format!("{prefix}.cls"))?;
    let cls_batch = g.repeat0(cls, shape[0])?;
    let with_cls = g.concat(&[tokens, cls_batch], 1)?;
    let table = positional_table(cfg.grid(), cfg.token_width)?;
    g.add_broadcast0(with_cls, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_store(cfg: &ModelConfig) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_tokenizer(&mut store, "tok", cfg, &mut rng).unwrap();
        let d = cfg.token_width;
        let mut conv = Tensor::zeros(&[d, d, 1, 1]);
        for ch in 0..d {
            conv.data_mut()[ch * d + ch] = 1.0;
        }
        *store.get_mut("tok.conv.w").unwrap() = conv;
        let mut lin = Tensor::zeros(&[d, d]);
        for ch in 0..d {
            lin.data_mut()[ch * d + ch] = 1.0;
        }
        *store.get_mut("tok.norm.w").unwrap() = lin;
        store
    }

    #[test]
    fn identity_tokenizer_flattens_row_major() {
        let mut cfg = ModelConfig::tiny(3, 0);
        cfg.patch_size = 3;
        cfg.tokenizer_kernel = 1;
        let store = identity_store(&cfg);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = Tensor::rand_uniform(&[2, cfg.token_width, 3, 3], -1.0, 1.0, &mut rng);
        let f = g.constant(feats.clone()).unwrap();
        let tokens = tokenize(&mut g, &bound, "tok", f, &cfg).unwrap();
        let out = g.value(tokens);
        assert_eq!(out.shape(), &[2, 9, cfg.token_width]);
        // token i of sample b holds feature column (i / 3, i % 3)
        let d = cfg.token_width;
        for b in 0..2 {
            for i in 0..9 {
                let (r, c) = (i / 3, i % 3);
                for ch in 0..d {
                    let feat = feats.data()[((b * d + ch) * 3 + r) * 3 + c];
                    let tok = out.data()[(b * 9 + i) * d + ch];
                    assert_eq!(tok, feat);
                }
            }
        }
    }

    #[test]
    fn positional_table_is_zero_sin_one_cos_at_origin() {
        let table = positional_table::<f64>(5, 8).unwrap();
        assert_eq!(table.shape(), &[26, 8]);
        // grid cell (0,0): every sin entry 0, every cos entry 1
        for pair in 0..2 {
            assert_eq!(table.data()[2 * pair], 0.0);
            assert_eq!(table.data()[2 * pair + 1], 1.0);
            assert_eq!(table.data()[4 + 2 * pair], 0.0);
            assert_eq!(table.data()[4 + 2 * pair + 1], 1.0);
        }
        // CLS row is exactly zero
        let last = &table.data()[25 * 8..];
        assert!(last.iter().all(|&v| v == 0.0));
        // row feature of token i depends only on i / g
        let row_of = |i: usize| &table.data()[i * 8..i * 8 + 4];
        assert_eq!(row_of(1), row_of(2));
        assert_ne!(row_of(0), row_of(5));
        assert!(positional_table::<f64>(5, 10).is_err());
    }

    #[test]
    fn fresh_cls_row_stays_exactly_zero() {
        let cfg = ModelConfig::tiny(3, 1);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_tokenizer(&mut store, "tok", &cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let l = cfg.token_count();
        let d = cfg.token_width;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tokens = Tensor::rand_uniform(&[2, l, d], -1.0, 1.0, &mut rng);
        let t = g.constant(tokens).unwrap();
        let with = add_cls_pos(&mut g, &bound, "tok", t, &cfg).unwrap();
        let out = g.value(with);
        assert_eq!(out.shape(), &[2, l + 1, d]);
        for b in 0..2 {
            let cls = &out.data()[(b * (l + 1) + l) * d..(b * (l + 1) + l + 1) * d];
            assert!(cls.iter().all(|&v| v == 0.0), "CLS row moved: {cls:?}");
        }
    }

    #[test]
    fn default_grid_yields_121_plus_cls() {
        let cfg = ModelConfig::default_for(4, 0);
        let table = positional_table::<f64>(cfg.grid(), cfg.token_width).unwrap();
        assert_eq!(table.shape(), &[122, 64]);
    }
}

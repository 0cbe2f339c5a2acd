//! Cross-state fusion of two token streams.
//!
//! Fusion happens in two moves. First [`exchange_cls`] swaps the CLS tokens
//! (held at the last index) between the two modality streams. Then each
//! fusion layer runs the simplified Mamba block per direction with one twist:
//! the selective-scan parameters (b, c, delta) are generated from the other
//! direction's stream, while the recurrence itself is driven by the
//! direction's own stream, followed by a residual and a final layernorm.
//! Setting both streams equal collapses a direction to the plain block's
//! scan; the parameter stream shares the drive stream's code path, so the
//! two cannot diverge.

use rand::Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{GraphParams, ParamStore};
use crate::autodiff::scalar::Scalar;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ssm::block::{block_core, init_mamba_block, SsmBlockConfig};

/// Swaps the CLS rows (last index) of two equally shaped `[tokens, d]`
/// sequences: each output keeps the other stream's feature rows and its own
/// stream's CLS row. Plain-tensor variant for single sequences.
pub fn exchange_cls<T: Scalar>(
    tokens_h: &Tensor<T>,
    tokens_l: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = tokens_h.shape();
    if s != tokens_l.shape() || s.len() != 2 || s[0] < 1 {
        return Err(Error::shape(format!(
            "expected two equal [tokens, d] sequences, got {:?} and {:?}",
            s,
            tokens_l.shape()
        )));
    }
    let (rows, d) = (s[0], s[1]);
    let feat = (rows - 1) * d;
    let mut h_cross = tokens_l.data().to_vec();
    h_cross[feat..].copy_from_slice(&tokens_h.data()[feat..]);
    let mut l_cross = tokens_h.data().to_vec();
    l_cross[feat..].copy_from_slice(&tokens_l.data()[feat..]);
    Ok((
        Tensor::new(vec![rows, d], h_cross)?,
        Tensor::new(vec![rows, d], l_cross)?,
    ))
}

/// Graph variant of [`exchange_cls`] over batched `[batch, tokens, d]`
/// streams.
pub fn exchange_cls_graph<T: Scalar>(
    g: &mut Graph<T>,
    tokens_h: Var,
    tokens_l: Var,
) -> Result<(Var, Var)> {
    let s = g.value(tokens_h).shape().to_vec();
    if s != g.value(tokens_l).shape() || s.len() != 3 || s[1] < 1 {
        return Err(Error::shape(format!(
            "expected two equal [batch, tokens, d] streams, got {:?} and {:?}",
            s,
            g.value(tokens_l).shape()
        )));
    }
    let rows = s[1];
    let feats_h = g.slice(tokens_h, 1, 0, rows - 1)?;
    let cls_h = g.slice(tokens_h, 1, rows - 1, 1)?;
    let feats_l = g.slice(tokens_l, 1, 0, rows - 1)?;
    let cls_l = g.slice(tokens_l, 1, rows - 1, 1)?;
    let h_cross = g.concat(&[feats_l, cls_h], 1)?;
    let l_cross = g.concat(&[feats_h, cls_l], 1)?;
    Ok((h_cross, l_cross))
}

/// Inserts one fusion layer's parameters: an independent block per direction
/// (`.h` and `.l`) plus a post-norm each.
pub fn init_csfm_block<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &SsmBlockConfig,
    rng: &mut R,
) -> Result<()> {
    for dir in ["h", "l"] {
        init_mamba_block(store, &format!("{prefix}.{dir}"), cfg, rng)?;
        store.insert(
            &format!("{prefix}.{dir}.postnorm.gamma"),
            Tensor::full(&[cfg.d], T::one()),
        )?;
        store.insert(
            &format!("{prefix}.{dir}.postnorm.beta"),
            Tensor::zeros(&[cfg.d]),
        )?;
    }
    Ok(())
}

fn direction_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    prefix: &str,
    x_self: Var,
    x_other: Var,
    cfg: &SsmBlockConfig,
) -> Result<Var> {
    let res = block_core(g, bound, prefix, x_self, x_other, cfg)?;
    g.layernorm(
        res,
        bound.var(&format!("{prefix}.postnorm.gamma"))?,
        bound.var(&format!("{prefix}.postnorm.beta"))?,
    )
}

/// One fusion layer over a cross pair `(x_h_cross, x_l_cross)`, both
/// `[batch, tokens, d]`. Each direction scans its own stream with parameters
/// generated from the other.
pub fn csfm_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    prefix: &str,
    pair: (Var, Var),
    cfg: &SsmBlockConfig,
) -> Result<(Var, Var)> {
    let (xh, xl) = pair;
    if g.value(xh).shape() != g.value(xl).shape() {
        return Err(Error::shape(format!(
            "fusion pair shapes must match: {:?} vs {:?}",
            g.value(xh).shape(),
            g.value(xl).shape()
        )));
    }
    let yh = direction_forward(g, bound, &format!("{prefix}.h"), xh, xl, cfg)?;
    let yl = direction_forward(g, bound, &format!("{prefix}.l"), xl, xh, cfg)?;
    Ok((yh, yl))
}

/// Inserts `n_layers` fusion layers under `prefix.0 .. prefix.{n-1}`.
pub fn init_fusion_stack<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    n_layers: usize,
    cfg: &SsmBlockConfig,
    rng: &mut R,
) -> Result<()> {
    for i in 0..n_layers {
        init_csfm_block(store, &format!("{prefix}.{i}"), cfg, rng)?;
    }
    Ok(())
}

/// Sequential fusion layers; the pair roles persist across layers and the
/// CLS rows stay at the last index throughout.
pub fn fusion_stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    prefix: &str,
    pair: (Var, Var),
    n_layers: usize,
    cfg: &SsmBlockConfig,
) -> Result<(Var, Var)> {
    let mut p = pair;
    for i in 0..n_layers {
        p = csfm_block_forward(g, bound, &format!("{prefix}.{i}"), p, cfg)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, CheckSettings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CFG: SsmBlockConfig = SsmBlockConfig { d: 4, d_in: 4, n: 2 };

    #[test]
    fn exchange_swaps_only_the_cls_row() {
        let h = Tensor::new(vec![2, 1], vec![10.0, 11.0]).unwrap();
        let l = Tensor::new(vec![2, 1], vec![20.0, 21.0]).unwrap();
        let (hc, lc) = exchange_cls(&h, &l).unwrap();
        assert_eq!(hc.data(), &[20.0, 11.0]);
        assert_eq!(lc.data(), &[10.0, 21.0]);
    }

    #[test]
    fn exchange_twice_is_identity_and_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Tensor::<f64>::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let l = Tensor::<f64>::rand_uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let (hc, lc) = exchange_cls(&h, &l).unwrap();
        let (h2, l2) = exchange_cls(&hc, &lc).unwrap();
        assert_eq!(h2.data(), h.data());
        assert_eq!(l2.data(), l.data());

        let mut before: Vec<u64> = h
            .data()
            .iter()
            .chain(l.data())
            .map(|v| v.to_bits())
            .collect();
        let mut after: Vec<u64> = hc
            .data()
            .iter()
            .chain(lc.data())
            .map(|v| v.to_bits())
            .collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_streams_exchange_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::<f64>::rand_uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let (hc, lc) = exchange_cls(&t, &t).unwrap();
        assert_eq!(hc.data(), t.data());
        assert_eq!(lc.data(), t.data());
    }

    #[test]
    fn graph_exchange_matches_plain_exchange() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Tensor::<f64>::rand_uniform(&[1, 4, 3], -1.0, 1.0, &mut rng);
        let l = Tensor::<f64>::rand_uniform(&[1, 4, 3], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let vh = g.constant(h.clone()).unwrap();
        let vl = g.constant(l.clone()).unwrap();
        let (hc, lc) = exchange_cls_graph(&mut g, vh, vl).unwrap();
        let ph = exchange_cls(&h.reshaped(&[4, 3]).unwrap(), &l.reshaped(&[4, 3]).unwrap())
            .unwrap();
        assert_eq!(g.value(hc).data(), ph.0.data());
        assert_eq!(g.value(lc).data(), ph.1.data());
    }

    fn tied_store(seed: u64) -> ParamStore<f64> {
        // Both directions share identical values so symmetric inputs give
        // symmetric outputs.
        let mut one = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_mamba_block(&mut one, "f.h", &CFG, &mut rng).unwrap();
        one.insert("f.h.postnorm.gamma", Tensor::full(&[CFG.d], 1.0))
            .unwrap();
        one.insert("f.h.postnorm.beta", Tensor::zeros(&[CFG.d]))
            .unwrap();
        let copies: Vec<(String, Tensor<f64>)> = one
            .entries()
            .iter()
            .map(|e| (e.name.replace("f.h", "f.l"), e.value.clone()))
            .collect();
        for (name, value) in copies {
            one.insert(&name, value).unwrap();
        }
        one
    }

    #[test]
    fn tied_directions_and_equal_streams_agree_bitwise() {
        let store = tied_store(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = Tensor::rand_uniform(&[2, 5, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let t = g.constant(tokens).unwrap();
        let (yh, yl) = csfm_block_forward(&mut g, &bound, "f", (t, t), &CFG).unwrap();
        assert_eq!(g.value(yh).data(), g.value(yl).data());
        assert_eq!(g.value(yh).shape(), &[2, 5, 4]);
    }

    fn untied_store(seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_csfm_block(&mut store, "f", &CFG, &mut rng).unwrap();
        store
    }

    #[test]
    fn gradient_reaches_the_other_stream() {
        let store = untied_store(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let th = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let tl = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        // The post-norm output has zero row means, so a plain mean would be
        // constant; weight the entries to get a non-degenerate loss.
        let weights = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let xh = g.constant(th).unwrap();
        let xl = g.leaf(tl).unwrap();
        let (yh, _) = csfm_block_forward(&mut g, &bound, "f", (xh, xl), &CFG).unwrap();
        let w = g.constant(weights).unwrap();
        let weighted = g.mul(yh, w).unwrap();
        let loss = g.mean_all(weighted).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(xl).expect("cross stream must receive gradient");
        assert!(grad.data().iter().any(|&v| v.abs() > 1e-6));
    }

    #[test]
    fn perturbing_the_other_stream_changes_the_output() {
        let store = untied_store(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let th = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let tl = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let run = |tl: &Tensor<f64>| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g).unwrap();
            let xh = g.constant(th.clone()).unwrap();
            let xl = g.constant(tl.clone()).unwrap();
            let (yh, _) = csfm_block_forward(&mut g, &bound, "f", (xh, xl), &CFG).unwrap();
            g.value(yh).clone()
        };
        let base = run(&tl);
        let mut bumped = tl.clone();
        bumped.data_mut()[5] += 1e-3;
        let moved = run(&bumped);
        assert!(base.max_abs_diff(&moved) > 0.0);
    }

    #[test]
    fn cross_causality_late_rows_cannot_affect_early_rows() {
        let store = untied_store(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let th = Tensor::rand_uniform(&[1, 6, 4], -1.0, 1.0, &mut rng);
        let tl = Tensor::rand_uniform(&[1, 6, 4], -1.0, 1.0, &mut rng);
        let run = |tl: &Tensor<f64>| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g).unwrap();
            let xh = g.constant(th.clone()).unwrap();
            let xl = g.constant(tl.clone()).unwrap();
            let (yh, _) = csfm_block_forward(&mut g, &bound, "f", (xh, xl), &CFG).unwrap();
            g.value(yh).clone()
        };
        let base = run(&tl);
        let mut bumped = tl.clone();
        for k in 4 * 4..6 * 4 {
            bumped.data_mut()[k] += 0.5;
        }
        let moved = run(&bumped);
        for k in 0..4 * 4 {
            assert_eq!(base.data()[k], moved.data()[k]);
        }
    }

    #[test]
    fn fusion_stack_zero_layers_is_identity_and_two_compose() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        init_fusion_stack(&mut store, "fus", 2, &CFG, &mut rng).unwrap();
        let th = Tensor::rand_uniform(&[1, 5, 4], -1.0, 1.0, &mut rng);
        let tl = Tensor::rand_uniform(&[1, 5, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let xh = g.constant(th).unwrap();
        let xl = g.constant(tl).unwrap();
        let (zh, zl) = fusion_stack_forward(&mut g, &bound, "fus", (xh, xl), 0, &CFG).unwrap();
        assert_eq!(g.value(zh).data(), g.value(xh).data());
        assert_eq!(g.value(zl).data(), g.value(xl).data());

        let stacked = fusion_stack_forward(&mut g, &bound, "fus", (xh, xl), 2, &CFG).unwrap();
        let l0 = csfm_block_forward(&mut g, &bound, "fus.0", (xh, xl), &CFG).unwrap();
        let l1 = csfm_block_forward(&mut g, &bound, "fus.1", l0, &CFG).unwrap();
        assert_eq!(g.value(stacked.0).data(), g.value(l1.0).data());
        assert_eq!(g.value(stacked.1).data(), g.value(l1.1).data());
    }

    #[test]
    fn full_block_gradients_match_finite_differences() {
        let mut store = untied_store(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let th = Tensor::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let tl = Tensor::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let wh = Tensor::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let wl = Tensor::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let report = check_gradients(
            &mut store,
            |bound, g| {
                let xh = g.constant(th.clone())?;
                let xl = g.constant(tl.clone())?;
                let (yh, yl) = csfm_block_forward(g, bound, "f", (xh, xl), &CFG)?;
                let ch = g.constant(wh.clone())?;
                let cl = g.constant(wl.clone())?;
                let ph = g.mul(yh, ch)?;
                let pl = g.mul(yl, cl)?;
                let s = g.add(ph, pl)?;
                g.mean_all(s)
            },
            &CheckSettings {
                samples_per_tensor: 16,
                ..CheckSettings::default()
            },
        )
        .unwrap();
        assert!(report.max_error < 1e-7, "{}", report.describe());
    }
}

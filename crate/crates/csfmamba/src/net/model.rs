//! The full two-branch classifier: extractors, tokenizers, per-branch scan
//! encoders, CLS exchange + cross-state fusion, and the classifier head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::extract::{hsi_extract, init_extractors, lidar_extract, BnUpdate, Mode};
use super::tokenize::{add_cls_pos, init_tokenizer, tokenize};
use crate::autodiff::{Graph, GraphParams, ParamStore, Scalar, Tensor, Var};
use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::fusion::{exchange_cls_graph, fusion_stack_forward, init_fusion_stack};
use crate::ssm::{encoder_forward, init_encoder};

/// Handles produced by one forward pass.
pub struct ForwardOutput<T> {
    pub logits: Var,
    pub probs: Var,
    pub cls_h: Var,
    pub cls_l: Var,
    /// Batch statistics seen by each batchnorm (training mode only).
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Builds the full parameter store for a config. Deterministic: the same
/// config (including seed) produces bit-identical parameters in a fixed
/// insertion order, and the random draws do not depend on the scalar type.
pub fn init_model<T: Scalar>(cfg: &ModelConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_extractors(&mut store, cfg, &mut rng)?;
    init_tokenizer(&mut store, "tok_h", cfg, &mut rng)?;
    init_tokenizer(&mut store, "tok_l", cfg, &mut rng)?;
    let block = cfg.block();
    init_encoder(&mut store, "enc_h", cfg.encoder_layers, &block, &mut rng)?;
    init_encoder(&mut store, "enc_l", cfg.encoder_layers, &block, &mut rng)?;
    if cfg.no_fusion {
        init_encoder(&mut store, "fuse_h", cfg.fusion_layers, &block, &mut rng)?;
        init_encoder(&mut store, "fuse_l", cfg.fusion_layers, &block, &mut rng)?;
    } else {
        init_fusion_stack(&mut store, "fusion", cfg.fusion_layers, &block, &mut rng)?;
    }
    let d = cfg.token_width;
    let bound = 1.0 / (d as f64).sqrt();
    store.insert(
        "head.w",
        Tensor::rand_uniform(&[d, cfg.num_classes], -bound, bound, &mut rng),
    )?;
    store.insert("head.b", Tensor::zeros(&[cfg.num_classes]))?;
    Ok(store)
}

/// Adds uniform noise to every trainable tensor, moving the model off its
/// initialization. A freshly built model sits at a degenerate point: the
/// class-token row and every bias are exactly zero, each block preserves an
/// all-zero class row regardless of the data, and the logits equal the head
/// bias for any input. Gradient probes must therefore run at a generic
/// nearby point, not at the exact initial one.
pub fn perturb_params<T: Scalar>(store: &mut ParamStore<T>, scale: f64, seed: u64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("perturbation scale {scale} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.trainable_entries().map(|e| e.name.clone()).collect();
    for name in names {
        let t = store.get_mut(&name).expect("listed entry exists");
        for v in t.data_mut() {
            *v += T::from_f64(rng.gen_range(-scale..scale));
        }
    }
    Ok(())
}

/// Classifier head: logits = FC((cls_h + cls_l) / 2), probabilities by
/// softmax. Zero CLS rows map to exactly the FC bias.
pub fn head_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    cls_h: Var,
    cls_l: Var,
) -> Result<(Var, Var)> {
    let sum = g.add(cls_h, cls_l)?;
    let avg = g.scale(sum, T::from_f64(0.5))?;
    let logits = g.linear(avg, bound.var("head.w")?, bound.var("head.b")?)?;
    let probs = g.softmax(logits)?;
    Ok((logits, probs))
}

/// Last token of a `[batch, tokens, d]` stream as `[batch, d]`.
fn take_cls<T: Scalar>(g: &mut Graph<T>, tokens: Var) -> Result<Var> {
    let shape = g.value(tokens).shape().to_vec();
    let cls = g.slice(tokens, 1, shape[1] - 1, 1)?;
    g.reshape(cls, &[shape[0], shape[2]])
}

/// Full forward over channel-last patch batches `[batch, s, s, C1]` and
/// `[batch, s, s, C2]`. Pass the patches as graph variables so callers can
/// request gradients with respect to the inputs.
pub fn model_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    cfg: &ModelConfig,
    hsi_patches: Var,
    lidar_patches: Var,
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    let mut bn_updates = Vec::new();
    let hf = hsi_extract(g, bound, cfg, hsi_patches, mode, &mut bn_updates)?;
    let lf = lidar_extract(g, bound, cfg, lidar_patches, mode, &mut bn_updates)?;

    let th = tokenize(g, bound, "tok_h", hf, cfg)?;
    let tl = tokenize(g, bound, "tok_l", lf, cfg)?;
    let th = add_cls_pos(g, bound, "tok_h", th, cfg)?;
    let tl = add_cls_pos(g, bound, "tok_l", tl, cfg)?;

    let block = cfg.block();
    let eh = encoder_forward(g, bound, "enc_h", th, cfg.encoder_layers, &block)?;
    let el = encoder_forward(g, bound, "enc_l", tl, cfg.encoder_layers, &block)?;

    let (yh, yl) = if cfg.no_fusion {
        let yh = encoder_forward(g, bound, "fuse_h", eh, cfg.fusion_layers, &block)?;
        let yl = encoder_forward(g, bound, "fuse_l", el, cfg.fusion_layers, &block)?;
        (yh, yl)
    } else {
        let (xh, xl) = exchange_cls_graph(g, eh, el)?;
        fusion_stack_forward(g, bound, "fusion", (xh, xl), cfg.fusion_layers, &block)?
    };

    let cls_h = take_cls(g, yh)?;
    let cls_l = take_cls(g, yl)?;
    let (logits, probs) = head_forward(g, bound, cls_h, cls_l)?;
    Ok(ForwardOutput {
        logits,
        probs,
        cls_h,
        cls_l,
        bn_updates,
    })
}

/// Converts 1-based class labels to the 0-based indices the graph loss
/// expects, rejecting anything outside 1..=K.
pub fn zero_based_labels(labels: &[u16], num_classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            let l = l as usize;
            if l == 0 || l > num_classes {
                Err(Error::invalid(format!(
                    "label {l} outside 1..={num_classes}"
                )))
            } else {
                Ok(l - 1)
            }
        })
        .collect()
}

/// Mean cross-entropy between logits and 1-based labels, as a graph node.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[u16],
    num_classes: usize,
) -> Result<Var> {
    let zero_based = zero_based_labels(labels, num_classes)?;
    g.cross_entropy(logits, &zero_based)
}

/// Mean cross-entropy computed directly from probabilities `[n, K]` and
/// 1-based labels: -mean(ln p[label]). Accumulates in 64-bit regardless of
/// the probability precision.
pub fn cross_entropy_mean<T: Scalar>(
    probs: &[T],
    labels: &[u16],
    num_classes: usize,
) -> Result<f64> {
    if labels.is_empty() || probs.len() != labels.len() * num_classes {
        return Err(Error::shape(format!(
            "{} probabilities do not match {} labels of {num_classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let zero_based = zero_based_labels(labels, num_classes)?;
    let mut total = 0.0;
    for (row, &label) in zero_based.iter().enumerate() {
        let p = probs[row * num_classes + label].to_f64();
        if !(p > 0.0) {
            return Err(Error::numeric(format!(
                "probability {p} for sample {row} is not positive"
            )));
        }
        total -= p.ln();
    }
    Ok(total / labels.len() as f64)
}

/// Stacks the listed patches into a channel-last `[n, s, s, C]` tensor.
pub fn patch_batch<T: Scalar>(set: &PatchSet, indices: &[usize]) -> Result<Tensor<T>> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let s = set.patch_size();
    let c = set.channels();
    let mut data = Vec::with_capacity(indices.len() * s * s * c);
    for &i in indices {
        if i >= set.len() {
            return Err(Error::invalid(format!(
                "patch index {i} out of range for {} patches",
                set.len()
            )));
        }
        data.extend(set.patch(i).iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(vec![indices.len(), s, s, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, CheckSettings};
    use rand::SeedableRng;

    fn random_inputs(cfg: &ModelConfig, batch: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.patch_size;
        let hsi = Tensor::rand_uniform(&[batch, s, s, cfg.hsi_channels], -1.0, 1.0, &mut rng);
        let lidar = Tensor::rand_uniform(&[batch, s, s, cfg.lidar_channels], -1.0, 1.0, &mut rng);
        (hsi, lidar)
    }

    fn forward_probs(cfg: &ModelConfig, store: &ParamStore<f64>, seed: u64) -> Tensor<f64> {
        let (hsi, lidar) = random_inputs(cfg, 2, seed);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let hp = g.constant(hsi).unwrap();
        let lp = g.constant(lidar).unwrap();
        let out = model_forward(&mut g, &bound, cfg, hp, lp, Mode::Train).unwrap();
        g.value(out.probs).clone()
    }

    #[test]
    fn probabilities_form_a_simplex() {
        let cfg = ModelConfig::tiny(3, 21);
        let store = init_model(&cfg).unwrap();
        let probs = forward_probs(&cfg, &store, 1);
        assert_eq!(probs.shape(), &[2, 3]);
        for row in probs.data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let cfg = ModelConfig::tiny(3, 22);
        let a = init_model(&cfg).unwrap();
        let b = init_model(&cfg).unwrap();
        for (ea, eb) in a.entries().iter().zip(b.entries()) {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.value.data(), eb.value.data());
        }
        assert_eq!(
            forward_probs(&cfg, &a, 5).data(),
            forward_probs(&cfg, &b, 5).data()
        );
    }

    #[test]
    fn permuting_head_rows_permutes_probabilities() {
        let cfg = ModelConfig::tiny(3, 23);
        let store = init_model(&cfg).unwrap();
        let base = forward_probs(&cfg, &store, 9);

        let mut permuted = init_model(&cfg).unwrap();
        // swap classes 0 and 2 in the head
        let d = cfg.token_width;
        {
            let w = permuted.get_mut("head.w").unwrap();
            for r in 0..d {
                w.data_mut().swap(r * 3, r * 3 + 2);
            }
        }
        {
            let b = permuted.get_mut("head.b").unwrap();
            b.data_mut().swap(0, 2);
        }
        let swapped = forward_probs(&cfg, &permuted, 9);
        for (rb, rs) in base.data().chunks(3).zip(swapped.data().chunks(3)) {
            assert_eq!(rb[0], rs[2]);
            assert_eq!(rb[1], rs[1]);
            assert_eq!(rb[2], rs[0]);
        }
    }

    #[test]
    fn gradients_reach_both_modality_inputs() {
        let cfg = ModelConfig::tiny(3, 24);
        // at the exact initial point the class readout is data-independent,
        // so probe at a generic nearby point
        let mut store = init_model(&cfg).unwrap();
        perturb_params(&mut store, 0.05, 99).unwrap();
        let (hsi, lidar) = random_inputs(&cfg, 2, 3);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let hp = g.leaf(hsi).unwrap();
        let lp = g.leaf(lidar).unwrap();
        let out = model_forward(&mut g, &bound, &cfg, hp, lp, Mode::Train).unwrap();
        let loss = batch_loss(&mut g, out.logits, &[1, 3], 3).unwrap();
        g.backward(loss).unwrap();
        for (name, v) in [("hsi", hp), ("lidar", lp)] {
            let grad = g.grad(v).unwrap_or_else(|| panic!("no {name} gradient"));
            assert!(
                grad.data().iter().any(|&x| x.abs() > 1e-12),
                "{name} gradient is all zero"
            );
        }
    }

    #[test]
    fn zero_cls_rows_reproduce_the_head_bias() {
        let cfg = ModelConfig::tiny(4, 25);
        let mut store = init_model(&cfg).unwrap();
        store.get_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.3, -0.2, 0.05, 1.5]);
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let zeros = g.constant(Tensor::zeros(&[3, cfg.token_width])).unwrap();
        let (logits, _) = head_forward(&mut g, &bound, zeros, zeros).unwrap();
        for row in g.value(logits).data().chunks(4) {
            assert_eq!(row, &[0.3, -0.2, 0.05, 1.5]);
        }
    }

    #[test]
    fn loss_examples() {
        // exact one-hot prediction scores zero
        assert_eq!(cross_entropy_mean(&[0.0, 1.0, 0.0], &[2], 3).unwrap(), 0.0);
        // uniform over four classes scores ln 4
        let u = cross_entropy_mean(&[0.25; 4], &[3], 4).unwrap();
        assert!((u - 4.0f64.ln()).abs() < 1e-12);
        // batch mean of {0, ln 4}
        let probs = [0.0, 1.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25];
        let m = cross_entropy_mean(&probs, &[2, 1], 4).unwrap();
        assert!((m - 4.0f64.ln() / 2.0).abs() < 1e-12);
        // labels outside 1..=K are rejected
        assert!(cross_entropy_mean(&[0.5, 0.5], &[0], 2).is_err());
        assert!(cross_entropy_mean(&[0.5, 0.5], &[3], 2).is_err());
    }

    #[test]
    fn graph_loss_matches_the_plain_loss() {
        let logits = Tensor::new(vec![2, 3], vec![0.2, -1.0, 0.7, 1.5, 0.0, -0.5]).unwrap();
        let labels = [3u16, 1u16];
        let mut g = Graph::<f64>::new();
        let lv = g.constant(logits.clone()).unwrap();
        let loss = batch_loss(&mut g, lv, &labels, 3).unwrap();
        let sm = g.softmax(lv).unwrap();
        let plain = cross_entropy_mean(g.value(sm).data(), &labels, 3).unwrap();
        assert!((g.value(loss).item().unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn ablated_models_build_and_backpropagate() {
        for (lift, nofuse) in [(true, false), (false, true), (true, true)] {
            let mut cfg = ModelConfig::tiny(3, 31);
            cfg.linear_extractors = lift;
            cfg.no_fusion = nofuse;
            let store = init_model(&cfg).unwrap();
            let (hsi, lidar) = random_inputs(&cfg, 2, 8);
            let mut g = Graph::new();
            let bound = store.bind(&mut g).unwrap();
            let hp = g.leaf(hsi).unwrap();
            let lp = g.leaf(lidar).unwrap();
            let out = model_forward(&mut g, &bound, &cfg, hp, lp, Mode::Train).unwrap();
            let loss = batch_loss(&mut g, out.logits, &[2, 3], 3).unwrap();
            g.backward(loss).unwrap();
            let grads = store.collect_grads(&g, &bound).unwrap();
            assert!(grads
                .iter()
                .any(|t| t.data().iter().any(|&v| v.abs() > 1e-12)));
        }
    }

    #[test]
    fn tiny_model_end_to_end_gradients_match_finite_differences() {
        let cfg = ModelConfig::tiny(3, 33);
        let mut store = init_model(&cfg).unwrap();
        perturb_params(&mut store, 0.05, 101).unwrap();
        let (hsi, lidar) = random_inputs(&cfg, 2, 12);
        let labels = [1u16, 2u16];
        let report = check_gradients(
            &mut store,
            |bound, g| {
                let hp = g.constant(hsi.clone())?;
                let lp = g.constant(lidar.clone())?;
                let out = model_forward(g, bound, &cfg, hp, lp, Mode::Train)?;
                batch_loss(g, out.logits, &labels, 3)
            },
            &CheckSettings {
                samples_per_tensor: 4,
                seed: 5,
                ..CheckSettings::default()
            },
        )
        .unwrap();
        assert!(report.max_error < 1e-4, "{}", report.describe());
    }
}

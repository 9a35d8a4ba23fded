use blindqe_core::checkpoint::ModelKind;
use blindqe_core::codec::Frame;
use blindqe_core::drl::{DrlConfig, DrlModel};
use blindqe_core::net::attention::AttentionBlock;
use blindqe_core::net::stage::{project_gate, stda, Stage};
use blindqe_core::net::{Enhancer, NetArch, NetConfig, QecvNet};
use blindqe_core::nn::{zero_params, Conv2d};
use blindqe_core::Error;
use blindqe_tensor::gradcheck::check_gradients;
use blindqe_tensor::{macs, ops, ParamStore, Session, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> NetConfig {
    NetConfig {
        feat_channels: 4,
        max_stages: 3,
        window: 2,
        heads: 2,
        degradation_dim: 3,
        qe_reduction: 2,
        ..NetConfig::default()
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Direct "same" convolution with stride 1.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, dil: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4();
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (dil * (k - 1) / 2) as isize;
    let mut out = Tensor::zeros(vec![n, cout, h, wd]);
    for b_ in 0..n {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[o];
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + (ky * dil) as isize - pad;
                                let sx = xx as isize + (kx * dil) as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.get(&[o, i, ky, kx]) * x.get(&[b_, i, sy as usize, sx as usize]);
                            }
                        }
                    }
                    out.set(&[b_, o, y, xx], acc);
                }
            }
        }
    }
    out
}

fn conv_oracle(store: &ParamStore<f64>, c: &Conv2d, x: &Tensor<f64>) -> Tensor<f64> {
    naive_conv(x, store.get(c.weight), store.get(c.bias), c.opts.dilation)
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= tol, "max difference {worst} > {tol}");
}

fn toy_stage(seed: u64) -> (Stage, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let st = Stage::new(&mut store, "s", &toy(), &mut rng);
    (st, store)
}

#[test]
fn stda_matches_scalar_formula() {
    let (st, store) = toy_stage(3);
    let s = Session::new(&store, false);
    let f = random(&[2, 4, 4, 4], 1);
    let fr = random(&[2, 4, 4, 4], 2);
    let g = random(&[2, 4], 3).map(|v| 0.5 + 0.4 * v);
    let got = stda(&s, &st.stda_conv, &Var::constant(f.clone()), &Var::constant(fr.clone()), &Var::constant(g.clone()))
        .unwrap();
    let conv = conv_oracle(&store, &st.stda_conv, &f);
    let mut want = f.clone();
    for (i, v) in want.data_mut().iter_mut().enumerate() {
        let (n, c) = (i / 64, (i / 16) % 4);
        *v += (conv.data()[i] + fr.data()[i]) * g.data()[n * 4 + c];
    }
    assert_close(got.value(), &want, 1e-12);
}

#[test]
fn stda_rejects_mismatched_degradation_tensor() {
    let (st, store) = toy_stage(3);
    let s = Session::new(&store, false);
    let f = Var::constant(Tensor::zeros(vec![1, 4, 4, 4]));
    let fr = Var::constant(Tensor::zeros(vec![1, 4, 2, 2]));
    let g = Var::constant(Tensor::zeros(vec![1, 4]));
    assert!(matches!(stda(&s, &st.stda_conv, &f, &fr, &g), Err(Error::Shape(_))));
}

#[test]
fn local_branch_matches_dilated_oracle() {
    let (st, store) = toy_stage(5);
    let s = Session::new(&store, false);
    let f = random(&[1, 4, 8, 8], 9);
    let got = st.local.forward(&s, &Var::constant(f.clone()));
    let mut acc = conv_oracle(&store, &st.local.dilated[0], &f);
    for c in &st.local.dilated[1..] {
        acc.add_assign(&conv_oracle(&store, c, &f));
    }
    let mut want = conv_oracle(&store, &st.local.out, &acc.map(|v| v.max(0.0)));
    want.add_assign(&f);
    assert_close(got.value(), &want, 1e-12);
    let dil: Vec<usize> = st.local.dilated.iter().map(|c| c.opts.dilation).collect();
    assert_eq!(dil, [1, 2, 4]);
}

/// Windowed multi-head attention computed token by token, including the
/// cyclic shift and the mask between wrapped regions.
fn attention_oracle(store: &ParamStore<f64>, b: &AttentionBlock, y: &Tensor<f64>, shift: usize) -> Tensor<f64> {
    let (h, w, c) = (y.shape()[1], y.shape()[2], y.shape()[3]);
    let (win, heads) = (b.window, b.heads);
    let d = c / heads;
    let lin = |id_w, id_b, x: &[f64]| -> Vec<f64> {
        let (wt, bs): (&Tensor<f64>, &Tensor<f64>) = (store.get(id_w), store.get(id_b));
        let fo = wt.shape()[0];
        (0..fo).map(|o| bs.data()[o] + (0..x.len()).map(|i| wt.get(&[o, i]) * x[i]).sum::<f64>()).collect()
    };
    let region = |p: usize, len: usize| {
        if p < len - win {
            0
        } else if p < len - shift {
            1
        } else {
            2
        }
    };
    let table = store.get(b.bias_table);
    let span = 2 * win - 1;
    let mut out = Tensor::zeros(y.shape().to_vec());
    for n in 0..y.shape()[0] {
        // Rolled grid: position p holds original (p + shift) mod len.
        let tok = |py: usize, px: usize| -> Vec<f64> {
            let (oy, ox) = ((py + shift) % h, (px + shift) % w);
            (0..c).map(|k| y.get(&[n, oy, ox, k])).collect()
        };
        for wy in 0..h / win {
            for wx in 0..w / win {
                let pos: Vec<(usize, usize)> =
                    (0..win * win).map(|i| (wy * win + i / win, wx * win + i % win)).collect();
                let qkv: Vec<Vec<f64>> = pos.iter().map(|&(py, px)| lin(b.qkv.weight, b.qkv.bias, &tok(py, px))).collect();
                for (i, &(pyi, pxi)) in pos.iter().enumerate() {
                    let mut merged = vec![0.0; c];
                    for hd in 0..heads {
                        let q = &qkv[i][hd * d..(hd + 1) * d];
                        let scores: Vec<f64> = pos
                            .iter()
                            .enumerate()
                            .map(|(j, &(pyj, pxj))| {
                                let k = &qkv[j][c + hd * d..c + (hd + 1) * d];
                                let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                                let rel = (pyi + win - 1 - pyj) * span + (pxi + win - 1 - pxj);
                                let same = shift == 0
                                    || (region(pyi, h), region(pxi, w)) == (region(pyj, h), region(pxj, w));
                                dot / (d as f64).sqrt() + table.get(&[rel, hd]) + if same { 0.0 } else { -100.0 }
                            })
                            .collect();
                        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                        let z: f64 = e.iter().sum();
                        for (j, ej) in e.iter().enumerate() {
                            for k in 0..d {
                                merged[hd * d + k] += ej / z * qkv[j][2 * c + hd * d + k];
                            }
                        }
                    }
                    let o = lin(b.proj.weight, b.proj.bias, &merged);
                    let (oy, ox) = ((pyi + shift) % h, (pxi + shift) % w);
                    for (k, v) in o.into_iter().enumerate() {
                        out.set(&[n, oy, ox, k], v);
                    }
                }
            }
        }
    }
    out
}

fn attention_block(shifted: bool, seed: u64) -> (AttentionBlock, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = AttentionBlock::new(&mut store, "a", 4, 2, 2, 2, shifted, &mut rng);
    // Non-zero biases so the oracle sees every term.
    for e in store.entries_mut() {
        if e.name.ends_with(".bias") {
            e.value = random(e.value.shape(), 77).map(|v| 0.1 * v);
        }
    }
    (b, store)
}

#[test]
fn single_window_attention_matches_oracle() {
    let (b, store) = attention_block(false, 4);
    let s = Session::new(&store, false);
    let y = random(&[1, 2, 2, 4], 8);
    let got = b.attend(&s, &Var::constant(y.clone())).unwrap();
    assert_close(got.value(), &attention_oracle(&store, &b, &y, 0), 1e-10);
}

#[test]
fn shifted_window_attention_matches_oracle() {
    let (b, store) = attention_block(true, 6);
    let s = Session::new(&store, false);
    let y = random(&[2, 4, 6, 4], 10);
    assert_eq!(b.effective_shift(4, 6), 1);
    let got = b.attend(&s, &Var::constant(y.clone())).unwrap();
    assert_close(got.value(), &attention_oracle(&store, &b, &y, 1), 1e-10);
}

#[test]
fn single_window_attention_in_f32_within_tolerance() {
    let (b, store) = attention_block(false, 12);
    let y = random(&[1, 2, 2, 4], 13);
    let want = attention_oracle(&store, &b, &y, 0);
    let s32 = Session::new(&store.cast::<f32>(), false);
    let got = b.attend(&s32, &Var::constant(y.cast::<f32>())).unwrap();
    assert_close(&got.value().cast::<f64>(), &want, 1e-5);
}

#[test]
fn zero_weights_give_identity_branches() {
    let (st, mut store) = toy_stage(7);
    zero_params(&mut store, "s.attn");
    zero_params(&mut store, "s.local.out");
    zero_params(&mut store, "s.gate");
    let s = Session::new(&store, false);
    let fa = Var::constant(random(&[1, 4, 4, 4], 11));
    assert_eq!(st.global.forward(&s, &fa).unwrap().value(), fa.value());
    assert_eq!(st.local.forward(&s, &fa).value(), fa.value());
    let twice = st.dglf(&s, &fa).unwrap();
    assert_close(twice.value(), &fa.value().map(|v| 2.0 * v), 0.0);
    let g = project_gate(&s, &st.gate, &Var::constant(random(&[2, 3], 1)));
    assert!(g.value().data().iter().all(|&v| v == 0.5));
}

#[test]
fn untrained_head_passes_target_through() {
    let net = QecvNet::new(&toy(), 1).unwrap();
    let s = Session::new(&net.params, false);
    let frames = Var::constant(random(&[1, 3, 8, 8], 2).map(|v| 0.5 + 0.5 * v).cast::<f32>());
    let fr = Var::constant(Tensor::<f32>::zeros(vec![1, 4, 8, 8]));
    let fv = Var::constant(Tensor::<f32>::zeros(vec![1, 3]));
    let (out, trace) = net.arch.forward(&s, &frames, &fr, &fv, 1).unwrap();
    assert_eq!(out.value(), ops::narrow(&frames, 1, 1, 1).value());
    assert_eq!(trace.executed_stages, 2);
}

fn toy_inputs(h: usize, w: usize) -> (Var<f64>, Var<f64>, Var<f64>) {
    (
        Var::constant(random(&[1, 4, h, w], 20)),
        Var::constant(random(&[1, 4, h, w], 21)),
        Var::constant(random(&[1, 3], 22)),
    )
}

#[test]
fn deepest_level_equals_running_every_stage() {
    let mut store = ParamStore::<f64>::new();
    let arch = NetArch::build(&toy(), &mut store, 3).unwrap();
    let s = Session::new(&store, false);
    let (f0, fr, fv) = toy_inputs(4, 4);
    let (a, costs) = arch.htar(&s, &f0, &fr, &fv, 2).unwrap();
    let b = arch.all_stages(&s, &f0, &fr, &fv).unwrap();
    assert_eq!(a.value(), b.value());
    assert_eq!(costs.len(), 3);
    assert!(matches!(arch.htar(&s, &f0, &fr, &fv, 3), Err(Error::Validation(_))));
}

#[test]
fn cost_grows_linearly_with_level() {
    let mut store = ParamStore::<f64>::new();
    let arch = NetArch::build(&toy(), &mut store, 3).unwrap();
    let s = Session::new(&store, false);
    let (f0, fr, fv) = toy_inputs(4, 4);
    let one: u64 = arch.htar(&s, &f0, &fr, &fv, 0).unwrap().1.iter().sum();
    for level in 0..3 {
        let total: u64 = arch.htar(&s, &f0, &fr, &fv, level).unwrap().1.iter().sum();
        assert_eq!(total, (level as u64 + 1) * one);
    }
}

#[test]
fn analytic_cost_matches_counted_operations() {
    let (st, store) = toy_stage(2);
    let s = Session::new(&store, false);
    let (f, fr, fv) = toy_inputs(4, 6);
    let (_, counted) = macs::measure(|| st.forward(&s, &f, &fr, &fv).unwrap());
    assert_eq!(counted, st.macs(4, 6));
}

#[test]
fn stage_gradients_match_finite_differences() {
    let (st, store) = toy_stage(8);
    let inputs = [random(&[1, 4, 4, 4], 30), random(&[1, 4, 4, 4], 31), random(&[1, 3], 32)];
    let err = check_gradients(&inputs, 1e-6, |v| {
        let s = Session::new(&store, false);
        let out = st.forward(&s, &v[0], &v[1], &v[2]).unwrap();
        ops::sum_all(&ops::mul(&out, &out))
    });
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn alignment_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let arch = NetArch::build(&toy(), &mut store, 4).unwrap();
    let frames = random(&[1, 3, 4, 4], 40).map(|v| 0.5 + 0.4 * v);
    let err = check_gradients(&[frames], 1e-6, |v| {
        let s = Session::new(&store, false);
        let out = arch.align.forward(&s, &v[0]).unwrap();
        ops::sum_all(&ops::mul(&out, &out))
    });
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn parameter_gradients_reach_every_stage_run() {
    let mut store = ParamStore::<f64>::new();
    let arch = NetArch::build(&toy(), &mut store, 5).unwrap();
    let s = Session::new(&store, true);
    let (f0, fr, fv) = toy_inputs(4, 4);
    let (out, _) = arch.htar(&s, &f0, &fr, &fv, 1).unwrap();
    let mut g = ops::sum_all(&ops::mul(&out, &out)).backward();
    let grads = s.collect_grads(&mut g);
    for (e, gr) in store.entries().iter().zip(&grads) {
        let ran = e.name.starts_with("stage0.") || e.name.starts_with("stage1.");
        if ran {
            assert!(gr.is_some(), "{} has no gradient", e.name);
        } else if e.name.starts_with("stage2.") {
            assert!(gr.is_none(), "{} was skipped but has a gradient", e.name);
        }
    }
}

fn toy_drl() -> DrlConfig {
    DrlConfig {
        stage_channels: vec![4, 4, 4, 3],
        residual_blocks_per_stage: 1,
        working_channels: 4,
        mlp_hidden: 6,
        class_count: 3,
        qp_levels: vec![27, 37, 47],
        ..DrlConfig::default()
    }
}

fn frames(w: usize, h: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3).map(|_| Frame::from_fn(w, h, |_, _| rng.random_range(0.0..255.0f64).round())).collect()
}

#[test]
fn enhancer_crops_back_to_input_size() {
    let drl = DrlModel::new(&toy_drl(), 1).unwrap();
    let net = QecvNet::new(&toy(), 2).unwrap();
    let e = Enhancer::from_models(drl, net).unwrap();
    let fs = frames(21, 13, 3);
    let (out, trace) = e.enhance(&fs, Some(2)).unwrap();
    assert_eq!((out.width(), out.height()), (21, 13));
    assert_eq!(trace.executed_stages, 3);
    // Zero reconstruction layer: the target comes back unchanged.
    let worst = out.data().iter().zip(fs[1].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
    assert!(matches!(e.enhance(&fs[..2], None), Err(Error::Shape(_))));
}

#[test]
fn enhancer_checks_compatibility() {
    let drl = DrlModel::new(&toy_drl(), 1).unwrap();
    let mut cfg = toy();
    cfg.degradation_dim = 5;
    let net = QecvNet::new(&cfg, 2).unwrap();
    assert!(matches!(Enhancer::from_models(drl.clone(), net), Err(Error::Compatibility(_))));

    let net = QecvNet::new(&toy(), 2).unwrap();
    let dw = drl.to_weights(serde_json::json!({})).unwrap();
    let nw = net.to_weights(None, serde_json::json!({ "drl_config_hash": "elsewhere" })).unwrap();
    assert_eq!(nw.kind, ModelKind::Net);
    assert!(matches!(Enhancer::new(&dw, &nw, &toy()), Err(Error::Compatibility(_))));

    let nw = net.to_weights(None, serde_json::json!({ "drl_config_hash": dw.config_hash() })).unwrap();
    assert!(Enhancer::new(&dw, &nw, &toy()).is_ok());
    let mut other = toy();
    other.heads = 4;
    assert!(matches!(Enhancer::new(&dw, &nw, &other), Err(Error::Compatibility(_))));
}

#[test]
fn weights_round_trip_through_bytes() {
    let net = QecvNet::new(&toy(), 9).unwrap();
    let w = net.to_weights(None, serde_json::Value::Null).unwrap();
    let back = QecvNet::from_weights(&blindqe_core::checkpoint::ModelWeights::from_bytes(&w.to_bytes()).unwrap())
        .unwrap();
    assert_eq!(back.config(), net.config());
    for (a, b) in back.params.entries().iter().zip(net.params.entries()) {
        assert_eq!(a.value, b.value);
    }
}

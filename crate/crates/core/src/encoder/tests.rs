use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::matrix::Matrix;

fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        mel_bins: 4,
        adapter_t0: 4,
        adapter_inputs: vec![3, 4, 6],
        fingerprint_dim: 3,
        num_blocks: 2,
        base_channels: 2,
        time_strides: vec![2, 2],
        freq_strides: vec![2, 2],
        seed,
    }
}

fn random_mel(rng: &mut ChaCha8Rng, bins: usize, frames: usize) -> MelSpectrogram {
    let data = (0..bins * frames)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    MelSpectrogram {
        values: Matrix::from_vec(bins, frames, data),
        window_s: 0.0,
    }
}

/// Straight nested-loop evaluation of the encoder, written against tensor
/// names only.
fn oracle_encode(w: &EncoderWeights, x: &Matrix) -> Vec<f64> {
    let cfg = w.config();
    let t_in = x.cols();
    let t0 = cfg.adapter_t0;
    let a = w.tensor(&format!("adapter.t{t_in}.weight")).unwrap();
    let ab = w.tensor(&format!("adapter.t{t_in}.bias")).unwrap();

    // act[c][f][t]
    let mut act: Vec<Vec<Vec<f64>>> = vec![(0..x.rows())
        .map(|f| {
            (0..t0)
                .map(|j| {
                    let mut s = ab[j];
                    for t in 0..t_in {
                        s += x.get(f, t) * a[t * t0 + j];
                    }
                    elu(s)
                })
                .collect()
        })
        .collect()];

    for b in 0..cfg.num_blocks {
        let c_in = act.len();
        let c_out = cfg.block_channels(b);
        let (fi, ti) = (act[0].len(), act[0][0].len());
        let (st, sf) = (cfg.time_strides[b], cfg.freq_strides[b]);
        let tw = w.tensor(&format!("block{b}.tconv.weight")).unwrap();
        let tb = w.tensor(&format!("block{b}.tconv.bias")).unwrap();
        let fw = w.tensor(&format!("block{b}.fconv.weight")).unwrap();
        let fb = w.tensor(&format!("block{b}.fconv.bias")).unwrap();
        let gain = w.tensor(&format!("block{b}.norm.gain")).unwrap();
        let off = w.tensor(&format!("block{b}.norm.offset")).unwrap();

        let to_len = (ti - 1) / st + 1;
        let mut mid = vec![vec![vec![0.0; to_len]; fi]; c_out];
        for o in 0..c_out {
            for f in 0..fi {
                for t in 0..to_len {
                    let mut s = tb[o];
                    for i in 0..c_in {
                        for k in 0..3 {
                            let src = (t * st + k) as i64 - 1;
                            if src >= 0 && (src as usize) < ti {
                                s += tw[(o * c_in + i) * 3 + k] * act[i][f][src as usize];
                            }
                        }
                    }
                    mid[o][f][t] = elu(s);
                }
            }
        }
        let fo_len = (fi - 1) / sf + 1;
        let mut out = vec![vec![vec![0.0; to_len]; fo_len]; c_out];
        for o in 0..c_out {
            for f in 0..fo_len {
                for t in 0..to_len {
                    let mut s = fb[o];
                    for i in 0..c_out {
                        for k in 0..3 {
                            let src = (f * sf + k) as i64 - 1;
                            if src >= 0 && (src as usize) < fi {
                                s += fw[(o * c_out + i) * 3 + k] * mid[i][src as usize][t];
                            }
                        }
                    }
                    out[o][f][t] = elu(s);
                }
            }
        }
        let flat: Vec<f64> = out.iter().flatten().flatten().copied().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (o, plane) in out.iter_mut().enumerate() {
            for v in plane.iter_mut().flatten() {
                *v = gain[o] * (*v - mean) / (var + NORM_EPS).sqrt() + off[o];
            }
        }
        act = out;
    }

    let hidden: Vec<f64> = act.iter().flatten().flatten().copied().collect();
    let d = cfg.fingerprint_dim;
    let pw = w.tensor("proj.weight").unwrap();
    let pb = w.tensor("proj.bias").unwrap();
    let v: Vec<f64> = (0..d)
        .map(|j| {
            pb[j]
                + (0..hidden.len())
                    .map(|c| hidden[c] * pw[c * d + j])
                    .sum::<f64>()
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Perturbs all biases and norm parameters away from their trivial init so
/// every code path is exercised.
fn jitter(w: &mut EncoderWeights, rng: &mut ChaCha8Rng) {
    for p in w.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
}

#[test]
fn default_config_is_valid() {
    let cfg = EncoderConfig::default();
    cfg.validate().unwrap();
    assert_eq!(
        (0..8).map(|i| cfg.block_channels(i)).collect::<Vec<_>>(),
        vec![16, 16, 32, 32, 64, 64, 128, 128]
    );
    EncoderConfig::full_scale().validate().unwrap();
    let wide = EncoderConfig {
        num_blocks: 10,
        time_strides: vec![2, 2, 2, 2, 2, 1, 1, 1, 1, 1],
        freq_strides: vec![2, 2, 2, 2, 2, 2, 2, 2, 1, 1],
        ..EncoderConfig::default()
    };
    assert_eq!(wide.block_channels(9), 128);
}

#[test]
fn invalid_strides_rejected() {
    let cfg = EncoderConfig {
        freq_strides: vec![2; 7].into_iter().chain([1]).collect(),
        ..EncoderConfig::default()
    };
    assert!(matches!(init_weights(&cfg), Err(Error::InvalidConfig(_))));
    let cfg = EncoderConfig {
        time_strides: vec![2; 8],
        ..EncoderConfig::default()
    };
    assert!(matches!(init_weights(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn init_is_seeded() {
    let a = init_weights(&EncoderConfig::default()).unwrap();
    let b = init_weights(&EncoderConfig::default()).unwrap();
    assert_eq!(a, b);
    let c = init_weights(&EncoderConfig {
        seed: 1,
        ..EncoderConfig::default()
    })
    .unwrap();
    assert!(a.params().iter().zip(c.params()).any(|(x, y)| x != y));
}

#[test]
fn init_respects_fan_in_bound() {
    let w = init_weights(&EncoderConfig::default()).unwrap();
    for t in w.layout().tensors() {
        let vals = &w.params()[t.range()];
        match t.init {
            Init::FanInUniform => {
                let fan_in = t.dims[..t.dims.len() - 1].iter().product::<usize>();
                let fan_in = if t.name.starts_with("block") {
                    t.dims[1] * 3
                } else {
                    fan_in
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= bound), "{}", t.name);
                assert!(vals.iter().any(|v| v.abs() > 0.5 * bound), "{}", t.name);
            }
            Init::Ones => assert!(vals.iter().all(|&v| v == 1.0)),
            Init::Zeros => assert!(vals.iter().all(|&v| v == 0.0)),
        }
    }
    for t_in in [16, 32, 63] {
        assert!(w.supports_frames(t_in));
    }
}

#[test]
fn adapter_shapes_and_identity() {
    let w = init_weights(&EncoderConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in [16, 63] {
        let out = w.adapter_forward(&random_mel(&mut rng, 256, t)).unwrap();
        assert_eq!(out.shape(), (256, 32));
    }
    assert!(matches!(
        w.adapter_forward(&random_mel(&mut rng, 256, 20)),
        Err(Error::NoAdapterForT(20))
    ));

    let mut w = w;
    let a = w.tensor_mut("adapter.t32.weight").unwrap();
    a.fill(0.0);
    for i in 0..32 {
        a[i * 32 + i] = 1.0;
    }
    w.tensor_mut("adapter.t32.bias").unwrap().fill(0.0);
    let mel = random_mel(&mut rng, 256, 32);
    let out = w.adapter_forward(&mel).unwrap();
    for (o, i) in out.as_slice().iter().zip(mel.values.as_slice()) {
        assert_eq!(*o, elu(*i));
    }
}

#[test]
fn encode_unit_norm_and_deterministic() {
    let w = init_weights(&EncoderConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in [16, 32, 63] {
        let mel = random_mel(&mut rng, 256, t);
        let a = w.encode(&mel).unwrap();
        let b = w.encode(&mel).unwrap();
        assert_eq!(a.dim(), 128);
        assert!((a.norm() - 1.0).abs() < 1e-5);
        assert_eq!(a, b);
    }
}

#[test]
fn forward_matches_nested_loop_oracle() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut w = init_weights(&tiny_config(seed)).unwrap();
        jitter(&mut w, &mut rng);
        for t in [3, 4, 6] {
            let mel = random_mel(&mut rng, 4, t);
            let got = w.encode(&mel).unwrap();
            let want = oracle_encode(&w, &mel.values);
            for (g, e) in got.as_slice().iter().zip(&want) {
                assert!((g - e).abs() < 1e-12, "{g} vs {e}");
            }
        }
    }
}

#[test]
fn batch_matches_sequential() {
    let w = init_weights(&tiny_config(9)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mels: Vec<_> = (0..64)
        .map(|i| random_mel(&mut rng, 4, [3, 4, 6][i % 3]))
        .collect();
    let batch = w.encode_batch(&mels).unwrap();
    for (m, fp) in mels.iter().zip(&batch) {
        assert_eq!(&w.encode(m).unwrap(), fp);
    }
    assert_eq!(
        w.encode_batch(&mels[..1]).unwrap()[0],
        w.encode(&mels[0]).unwrap()
    );

    let mut reversed = mels.clone();
    reversed.reverse();
    let mut rb = w.encode_batch(&reversed).unwrap();
    rb.reverse();
    assert_eq!(rb, batch);
}

fn weighted_output(w: &EncoderWeights, mels: &[MelSpectrogram], up: &[Vec<f64>]) -> f64 {
    mels.iter()
        .zip(up)
        .map(|(m, g)| {
            let fp = w.encode(m).unwrap();
            fp.as_slice().iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

#[test]
fn gradients_match_finite_differences() {
    let eps = 1e-4;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut w = init_weights(&tiny_config(seed)).unwrap();
        jitter(&mut w, &mut rng);
        let mels: Vec<_> = [3, 4, 6]
            .iter()
            .map(|&t| random_mel(&mut rng, 4, t))
            .collect();
        let up: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let analytic = forward_backward(&mels, &w, &up).unwrap();
        let mut worst = 0.0f64;
        for p in 0..w.params().len() {
            let orig = w.params()[p];
            w.params_mut()[p] = orig + eps;
            let plus = weighted_output(&w, &mels, &up);
            w.params_mut()[p] = orig - eps;
            let minus = weighted_output(&w, &mels, &up);
            w.params_mut()[p] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = analytic[p].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[p] - numeric).abs() / denom);
        }
        assert!(worst <= 1e-3, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let w = init_weights(&tiny_config(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mels = vec![random_mel(&mut rng, 4, 4), random_mel(&mut rng, 4, 6)];
    let g = forward_backward(&mels, &w, &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn normalization_gradient_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let y: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let g: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dv = l2_normalize_backward(&y, norm, &g);
        let dot: f64 = dv.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-6, "{dot}");
    }
}

#[test]
fn projection_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut w = init_weights(&tiny_config(4)).unwrap();
    jitter(&mut w, &mut rng);
    let mel = random_mel(&mut rng, 4, 4);
    let before = w.encode(&mel).unwrap();
    for name in ["proj.weight", "proj.bias"] {
        w.tensor_mut(name)
            .unwrap()
            .iter_mut()
            .for_each(|v| *v *= 3.7);
    }
    let after = w.encode(&mel).unwrap();
    for (a, b) in before.as_slice().iter().zip(after.as_slice()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut w = init_weights(&tiny_config(6)).unwrap();
    jitter(&mut w, &mut rng);
    let bytes = encode_checkpoint(&w).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, w);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

    let mel = random_mel(&mut rng, 4, 6);
    assert_eq!(back.encode(&mel).unwrap(), w.encode(&mel).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.nfpw");
    save_checkpoint(&w, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_checkpoint(&path).unwrap(), w);
}

#[test]
fn checkpoint_rejects_corruption() {
    let w = init_weights(&tiny_config(1)).unwrap();
    let bytes = encode_checkpoint(&w).unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ),
            "cut at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(Error::CorruptCheckpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(Error::CorruptCheckpoint(_))
    ));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(
        decode_checkpoint(&long),
        Err(Error::CorruptCheckpoint(_))
    ));
}

use proptest::prelude::*;

use segfp_core::audio::{decode_wav, encode_wav, load_wav, save_wav};
use segfp_core::db::{build_db, DbHeader, DbTrack, FingerprintDb, SegmentKey, TrackEntry};
use segfp_core::encoder::init_weights;
use segfp_core::eval::{generate_corpus, CorpusSpec};
use segfp_core::query::{run_query, vote, QuerySpec};
use segfp_core::segmentation::{segment_count, slice_segments};
use segfp_core::{AudioClip, EncoderConfig, FeatureConfig, FeatureExtractor, SegmentationParams};

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        mel_bins: 32,
        adapter_t0: 16,
        adapter_inputs: vec![16, 32],
        fingerprint_dim: 32,
        num_blocks: 5,
        base_channels: 8,
        time_strides: vec![2, 2, 2, 2, 1],
        freq_strides: vec![2, 2, 2, 2, 2],
        seed: 9,
    }
}

#[test]
fn wav_file_round_trip() {
    let samples: Vec<f32> = (0..4000)
        .map(|i| ((i * 37 % 2001) as f32 - 1000.0) / 32768.0)
        .collect();
    let clip = AudioClip::new(samples, 8000).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.wav");
    save_wav(&clip, &path).unwrap();
    assert_eq!(load_wav(&path).unwrap(), clip);
}

#[test]
fn clean_excerpts_retrieve_their_source() {
    let spec = CorpusSpec {
        n_train: 1,
        n_ref: 6,
        n_dist: 2,
        clip_len_s: 6.0,
        master_seed: 4,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let features = FeatureExtractor::new(FeatureConfig {
        mel_bins: 32,
        ..FeatureConfig::default()
    })
    .unwrap();
    let weights = init_weights(&small_encoder()).unwrap();
    let params = SegmentationParams::new(1.0, 0.5).unwrap();
    let tracks: Vec<DbTrack> = corpus
        .reference
        .iter()
        .map(|t| (t, true))
        .chain(corpus.distractor.iter().map(|t| (t, false)))
        .map(|(t, is_reference)| DbTrack {
            id: t.id,
            name: t.name.clone(),
            clip: t.clip.clone(),
            is_reference,
        })
        .collect();
    let db = build_db(&tracks, &weights, &features, &params).unwrap();
    assert_eq!(db.len(), tracks.len() * 11);
    for track in &corpus.reference {
        for k in [0usize, 3, 6] {
            let spec = QuerySpec {
                source_offset_s: k as f64 * 0.5,
                ..QuerySpec::new(3.0)
            };
            let result = run_query(&track.clip, &spec, &db, &weights, &features, &params).unwrap();
            let best = &result.candidates[0];
            assert_eq!(
                (best.track_id, best.start_index),
                (track.id, k as i64),
                "{}",
                track.name
            );
            assert!((best.vote_weight - 5.0).abs() < 1e-4);
        }
    }
}

fn unit_rows(rows: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut state = seed;
    let mut out = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| (x / n) as f32));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_bytes_round_trip(samples in prop::collection::vec(-32768i32..32768, 1..500), rate in 1000u32..48000) {
        let clip = AudioClip::new(samples.iter().map(|&s| s as f32 / 32768.0).collect(), rate).unwrap();
        let decoded = decode_wav(&encode_wav(&clip).unwrap()).unwrap();
        prop_assert_eq!(decoded, clip);
    }

    #[test]
    fn slicing_agrees_with_segment_count(w8 in 1usize..24, h8 in 1usize..16, extra8 in 0usize..64) {
        let (w, h) = (w8 as f64 / 8.0, h8 as f64 / 8.0);
        let l = w + extra8 as f64 / 8.0;
        let clip = AudioClip::new(vec![0.0; (l * 8000.0) as usize], 8000).unwrap();
        let params = SegmentationParams::new(w, h).unwrap();
        let segments = slice_segments(&clip, 0, &params, 8000).unwrap();
        prop_assert_eq!(segments.len(), segment_count(l, w, h).unwrap());
        for (i, s) in segments.iter().enumerate() {
            prop_assert_eq!(s.index as usize, i);
            prop_assert_eq!(s.samples.len(), (w * 8000.0) as usize);
        }
    }

    #[test]
    fn search_is_sorted_and_bounded(seed in any::<u64>(), k in 1usize..40) {
        let dim = 8;
        let tracks: Vec<TrackEntry> = (0..5)
            .map(|id| TrackEntry { id, name: format!("t{id}"), segment_count: 6, is_reference: true })
            .collect();
        let header = DbHeader { window_s: 1.0, hop_s: 0.5, sample_rate: 8000, dim };
        let db = FingerprintDb::from_parts(header, tracks, unit_rows(30, dim, seed)).unwrap();
        let query = unit_rows(1, dim, seed ^ 0x5555);
        let hits = db.search_f32(&query, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(30));
        for pair in hits.windows(2) {
            prop_assert!(pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0));
        }
        for (_, s) in &hits {
            prop_assert!(s.abs() <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn vote_weights_sum_positive_scores(
        hits in prop::collection::vec(
            prop::collection::vec((0u32..3, 0u32..6, -64i32..=64), 0..5),
            1..5,
        ),
    ) {
        let table: Vec<Vec<(SegmentKey, f64)>> = hits
            .iter()
            .map(|seg| seg.iter().map(|&(t, s, v)| (SegmentKey { track_id: t, segment_index: s }, v as f64 / 64.0)).collect())
            .collect();
        let candidates = vote(&table, usize::MAX);
        let total: f64 = candidates.iter().map(|c| c.vote_weight).sum();
        let positive: f64 = table.iter().flatten().map(|h| h.1).filter(|&s| s > 0.0).sum();
        prop_assert_eq!(total, positive);
        prop_assert!(candidates.iter().all(|c| c.vote_weight > 0.0));
        for pair in candidates.windows(2) {
            prop_assert!(pair[0].vote_weight >= pair[1].vote_weight);
        }
    }
}

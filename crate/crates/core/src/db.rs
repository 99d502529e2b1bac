//! Segment fingerprint database with exhaustive inner-product search.
//!
//! On-disk layout (all little-endian):
//!
//! ```text
//! "NFPD" | version u16 | rate u32 | dim u32 | W us u32 | h us u32 | tracks u32
//! per track: id u32 | name_len u16 | name (UTF-8) | segments u32 | is_reference u8
//! rows x dim f32, row-major, tracks in table order, segments ascending
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::audio::AudioClip;
use crate::encoder::{EncoderWeights, Fingerprint};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::io::write_atomic;
use crate::segmentation::{slice_segments, SegmentationParams};

const MAGIC: &[u8; 4] = b"NFPD";
const VERSION: u16 = 1;
const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentKey {
    pub track_id: u32,
    pub segment_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbHeader {
    pub window_s: f64,
    pub hop_s: f64,
    pub sample_rate: u32,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackEntry {
    pub id: u32,
    pub name: String,
    pub segment_count: u32,
    pub is_reference: bool,
}

/// A clip to index.
#[derive(Debug, Clone)]
pub struct DbTrack {
    pub id: u32,
    pub name: String,
    pub clip: AudioClip,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    header: DbHeader,
    tracks: Vec<TrackEntry>,
    keys: Vec<SegmentKey>,
    matrix: Vec<f32>,
}

fn micros(seconds: f64) -> Result<u32> {
    let us = (seconds * 1e6).round();
    if !(us > 0.0 && us <= u32::MAX as f64) {
        return Err(Error::InvalidParams(format!(
            "{seconds} s does not fit the header"
        )));
    }
    Ok(us as u32)
}

fn key_order(a: &(f64, SegmentKey), b: &(f64, SegmentKey)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

impl FingerprintDb {
    /// Assembles a database from already computed rows.
    pub fn from_parts(header: DbHeader, tracks: Vec<TrackEntry>, matrix: Vec<f32>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tracks {
            if !seen.insert(t.id) {
                return Err(Error::InvalidInput(format!("duplicate track id {}", t.id)));
            }
        }
        let keys: Vec<SegmentKey> = tracks
            .iter()
            .flat_map(|t| {
                (0..t.segment_count).map(move |s| SegmentKey {
                    track_id: t.id,
                    segment_index: s,
                })
            })
            .collect();
        if header.dim == 0 || matrix.len() != keys.len() * header.dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dim {}",
                matrix.len(),
                keys.len(),
                header.dim
            )));
        }
        for (r, row) in matrix.chunks(header.dim).enumerate() {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOL) {
                return Err(Error::InvalidInput(format!("row {r} has norm {norm}")));
            }
        }
        Ok(Self {
            header,
            tracks,
            keys,
            matrix,
        })
    }

    pub fn header(&self) -> &DbHeader {
        &self.header
    }

    pub fn tracks(&self) -> &[TrackEntry] {
        &self.tracks
    }

    pub fn keys(&self) -> &[SegmentKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.header.dim..(i + 1) * self.header.dim]
    }

    pub fn track(&self, id: u32) -> Option<&TrackEntry> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Fails unless the database was built with segment length `window_s`.
    pub fn check_window(&self, window_s: f64) -> Result<()> {
        if (self.header.window_s - window_s).abs() > 1e-6 {
            return Err(Error::IncompatibleW {
                db_w: self.header.window_s,
                pipeline_w: window_s,
            });
        }
        Ok(())
    }

    /// Inner product of the query (rounded to f32) with every row.
    pub fn scores(&self, query: &[f32]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.header.dim)
            .map(|row| {
                row.iter()
                    .zip(query)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>()
            })
            .collect()
    }

    /// The `k` highest-scoring rows, best first; ties go to the smaller key.
    pub fn search(&self, query: &Fingerprint, k: usize) -> Result<Vec<(SegmentKey, f64)>> {
        self.search_f32(&query.to_f32(), k)
    }

    pub fn search_f32(&self, query: &[f32], k: usize) -> Result<Vec<(SegmentKey, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyDb);
        }
        if k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        if query.len() != self.header.dim {
            return Err(Error::Shape(format!(
                "query has {} dims, database has {}",
                query.len(),
                self.header.dim
            )));
        }
        let mut scored: Vec<(f64, SegmentKey)> = self
            .scores(query)
            .into_iter()
            .zip(self.keys.iter().copied())
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, key_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(key_order);
        Ok(scored.into_iter().map(|(s, key)| (key, s)).collect())
    }

    pub fn search_batch(
        &self,
        queries: &[Fingerprint],
        k: usize,
    ) -> Result<Vec<Vec<(SegmentKey, f64)>>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + self.matrix.len() * 4);
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(VERSION)?;
        out.write_u32::<LittleEndian>(self.header.sample_rate)?;
        out.write_u32::<LittleEndian>(self.header.dim as u32)?;
        out.write_u32::<LittleEndian>(micros(self.header.window_s)?)?;
        out.write_u32::<LittleEndian>(micros(self.header.hop_s)?)?;
        out.write_u32::<LittleEndian>(self.tracks.len() as u32)?;
        for t in &self.tracks {
            out.write_u32::<LittleEndian>(t.id)?;
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidInput(format!("track name too long: {}", t.name)))?;
            out.write_u16::<LittleEndian>(len)?;
            out.extend_from_slice(name);
            out.write_u32::<LittleEndian>(t.segment_count)?;
            out.write_u8(t.is_reference as u8)?;
        }
        for &v in &self.matrix {
            out.write_f32::<LittleEndian>(v)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptDb(m.to_string());
        let eof = |_| Error::CorruptDb("unexpected end of file".into());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if r.read_u16::<LittleEndian>().map_err(eof)? != VERSION {
            return Err(corrupt("unsupported version"));
        }
        let sample_rate = r.read_u32::<LittleEndian>().map_err(eof)?;
        let dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let window_us = r.read_u32::<LittleEndian>().map_err(eof)?;
        let hop_us = r.read_u32::<LittleEndian>().map_err(eof)?;
        if sample_rate == 0 || dim == 0 || window_us == 0 || hop_us == 0 {
            return Err(corrupt("zero header field"));
        }
        let n_tracks = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut tracks = Vec::with_capacity(n_tracks.min(1 << 16));
        let mut rows = 0usize;
        for _ in 0..n_tracks {
            let id = r.read_u32::<LittleEndian>().map_err(eof)?;
            let len = r.read_u16::<LittleEndian>().map_err(eof)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(eof)?;
            let name = String::from_utf8(name).map_err(|_| corrupt("track name is not UTF-8"))?;
            let segment_count = r.read_u32::<LittleEndian>().map_err(eof)?;
            let is_reference = match r.read_u8().map_err(eof)? {
                0 => false,
                1 => true,
                _ => return Err(corrupt("bad reference flag")),
            };
            rows = rows
                .checked_add(segment_count as usize)
                .ok_or_else(|| corrupt("row count overflow"))?;
            tracks.push(TrackEntry {
                id,
                name,
                segment_count,
                is_reference,
            });
        }
        let start = r.position() as usize;
        let expected = rows
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| corrupt("matrix size overflow"))?;
        if bytes.len() - start != expected {
            return Err(corrupt(&format!(
                "matrix holds {} bytes, header implies {expected}",
                bytes.len() - start
            )));
        }
        let matrix: Vec<f32> = bytes[start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let header = DbHeader {
            window_s: window_us as f64 / 1e6,
            hop_s: hop_us as f64 / 1e6,
            sample_rate,
            dim,
        };
        Self::from_parts(header, tracks, matrix).map_err(|e| Error::CorruptDb(e.to_string()))
    }
}

/// Slices every clip with `params`, encodes each segment and stores the rows
/// in input order.
pub fn build_db(
    tracks: &[DbTrack],
    weights: &EncoderWeights,
    features: &FeatureExtractor,
    params: &SegmentationParams,
) -> Result<FingerprintDb> {
    if tracks.is_empty() {
        return Err(Error::InvalidInput("no tracks to index".into()));
    }
    let rate = features.config().sample_rate;
    let frames = features.config().frames_for(params.window_samples(rate)?);
    if !weights.supports_frames(frames) {
        return Err(Error::NoAdapterForT(frames));
    }
    let per_track: Vec<(TrackEntry, Vec<f32>)> = tracks
        .par_iter()
        .map(|t| {
            let segments = slice_segments(&t.clip, t.id, params, rate)?;
            let mut rows = Vec::with_capacity(segments.len() * weights.config().fingerprint_dim);
            for seg in &segments {
                let fp = weights.encode(&features.mel_spectrogram(seg)?)?;
                rows.extend(fp.to_f32());
            }
            Ok((
                TrackEntry {
                    id: t.id,
                    name: t.name.clone(),
                    segment_count: segments.len() as u32,
                    is_reference: t.is_reference,
                },
                rows,
            ))
        })
        .collect::<Result<_>>()?;
    let header = DbHeader {
        window_s: params.window_s,
        hop_s: params.hop_s,
        sample_rate: rate,
        dim: weights.config().fingerprint_dim,
    };
    let mut entries = Vec::with_capacity(per_track.len());
    let mut matrix = Vec::new();
    for (entry, rows) in per_track {
        entries.push(entry);
        matrix.extend(rows);
    }
    FingerprintDb::from_parts(header, entries, matrix)
}

pub fn save_db(db: &FingerprintDb, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &db.to_bytes()?)
}

pub fn load_db(path: impl AsRef<Path>) -> Result<FingerprintDb> {
    FingerprintDb::from_bytes(&std::fs::read(path)?)
}

pub fn search(db: &FingerprintDb, query: &Fingerprint, k: usize) -> Result<Vec<(SegmentKey, f64)>> {
    db.search(query, k)
}

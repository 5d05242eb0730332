//! Dataset generation, great-circle ground truth, text serialization and
//! the character tokenizer.
//!
//! A sample is an origin coordinate plus a small displacement, serialized
//! as `"lat,lon+dlat,dlon"` with four decimals per value; the target is the
//! great-circle distance in meters at three decimals.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::GeoAngles;
use crate::error::{Error, Result};
use crate::model::{tag_segments, TokenGeoTag};

/// Mean Earth radius of the idealized sphere, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Hard cap on token sequence length, including specials.
pub const MAX_SEQ_LEN: usize = 100;

/// Largest coordinate displacement drawn by the generator, in degrees.
pub const DEFAULT_MAX_DISPLACEMENT_DEG: f64 = 10.0;

/// Wraps a longitude in degrees into `[-180, 180)`.
pub fn wrap_lon_deg(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Great-circle distance in meters between two points given in degrees,
/// via the haversine formula on the sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    for lat in [lat1, lat2] {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Domain(format!(
                "latitude {lat} outside [-90, 90] degrees"
            )));
        }
    }
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let half_dphi_sin = (dphi / 2.0).sin();
    let half_dlam_sin = (dlambda / 2.0).sin();
    let a = half_dphi_sin * half_dphi_sin
        + phi1.cos() * phi2.cos() * half_dlam_sin * half_dlam_sin;
    let c = 2.0 * a.sqrt().min(1.0).asin();
    Ok(EARTH_RADIUS_M * c)
}

/// One experiment record: origin, displacement, ground-truth distance and
/// both serialized strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoSample {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub dlat_deg: f64,
    pub dlon_deg: f64,
    pub distance_m: f64,
    pub input_text: String,
    pub target_text: String,
}

impl GeoSample {
    /// Builds a sample from origin and displacement, computing the wrapped
    /// destination, the haversine distance and both text forms.
    pub fn new(lat_deg: f64, lon_deg: f64, dlat_deg: f64, dlon_deg: f64) -> Result<Self> {
        let dest_lat = lat_deg + dlat_deg;
        if !(-90.0..=90.0).contains(&dest_lat) {
            return Err(Error::Domain(format!(
                "destination latitude {dest_lat} beyond a pole"
            )));
        }
        let dest_lon = wrap_lon_deg(lon_deg + dlon_deg);
        let distance_m = haversine(lat_deg, lon_deg, dest_lat, dest_lon)?;
        let (input_text, target_text) =
            format_sample_parts(lat_deg, lon_deg, dlat_deg, dlon_deg, distance_m);
        Ok(GeoSample {
            lat_deg,
            lon_deg,
            dlat_deg,
            dlon_deg,
            distance_m,
            input_text,
            target_text,
        })
    }

    /// Origin angles in radians.
    pub fn origin(&self) -> GeoAngles {
        GeoAngles::from_degrees(self.lat_deg, self.lon_deg)
    }

    /// Destination angles in radians: exact coordinate addition, with the
    /// longitude wrapped.
    pub fn destination(&self) -> GeoAngles {
        GeoAngles::from_degrees(self.lat_deg + self.dlat_deg, self.lon_deg + self.dlon_deg)
    }
}

/// Serializes a sample: coordinates at four decimals, `'+'` separating the
/// origin from the signed displacement, distance at three decimals.
pub fn format_sample_parts(
    lat_deg: f64,
    lon_deg: f64,
    dlat_deg: f64,
    dlon_deg: f64,
    distance_m: f64,
) -> (String, String) {
    let input = format!("{lat_deg:.4},{lon_deg:.4}+{dlat_deg:.4},{dlon_deg:.4}");
    let target = format!("{distance_m:.3}");
    (input, target)
}

/// The sample's `(input_text, target_text)` pair.
pub fn format_sample(s: &GeoSample) -> (String, String) {
    (s.input_text.clone(), s.target_text.clone())
}

/// Parses `"lat,lon+dlat,dlon"` back into its four numbers.
pub fn parse_input_text(text: &str) -> Result<(f64, f64, f64, f64)> {
    let (origin, disp) = text
        .split_once('+')
        .ok_or_else(|| Error::Parse(format!("no '+' separator in {text:?}")))?;
    let parse_pair = |segment: &str| -> Result<(f64, f64)> {
        let (a, b) = segment
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("no ',' in segment {segment:?}")))?;
        if a.is_empty() || b.is_empty() {
            return Err(Error::Parse(format!("empty coordinate in {segment:?}")));
        }
        let a = a
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number {a:?}: {e}")))?;
        let b = b
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number {b:?}: {e}")))?;
        Ok((a, b))
    };
    let (lat, lon) = parse_pair(origin)?;
    let (dlat, dlon) = parse_pair(disp)?;
    Ok((lat, lon, dlat, dlon))
}

/// Draws `n` samples: origin uniform over the globe in coordinate degrees,
/// displacements uniform in `(-max_disp_deg, +max_disp_deg)`. Records whose
/// destination would cross a pole are redrawn whole. Deterministic for a
/// fixed seed.
pub fn generate_dataset(n: usize, seed: u64, max_disp_deg: f64) -> Vec<GeoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let lat = rng.gen_range(-90.0..90.0);
        let lon = rng.gen_range(-180.0..180.0);
        let dlat = rng.gen_range(-max_disp_deg..max_disp_deg);
        let dlon = rng.gen_range(-max_disp_deg..max_disp_deg);
        // gen_range includes its lower bound; reject it to keep |d| strict.
        if dlat == -max_disp_deg || dlon == -max_disp_deg {
            continue;
        }
        if (lat + dlat).abs() > 90.0 {
            continue;
        }
        samples.push(
            GeoSample::new(lat, lon, dlat, dlon)
                .expect("generator draws stay inside the coordinate domain"),
        );
    }
    samples
}

/// Fabricated baseline tags: each sample's origin and destination replaced
/// by independent uniform random coordinates, drawn once per sample. The
/// segment structure matches the true tagging.
pub fn randomize_tags(dataset: &[GeoSample], seed: u64) -> Result<Vec<TokenGeoTag>> {
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dataset
        .iter()
        .map(|sample| {
            let fake_origin = GeoAngles::from_degrees(
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-180.0..180.0),
            );
            let fake_dest = GeoAngles::from_degrees(
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-180.0..180.0),
            );
            let tokens = tokenize(&sample.input_text, &vocab)?;
            tag_segments(&sample.input_text, &tokens, &vocab, fake_origin, fake_dest)
        })
        .collect()
}

/// Writes one JSON object per line; bytewise reproducible for a fixed
/// sample list.
pub fn dump_dataset(samples: &[GeoSample], path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    for s in samples {
        let line = serde_json::to_string(s)
            .map_err(|e| Error::Parse(format!("serialize sample: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Reads a JSONL dataset, reporting the 1-based line of any schema error.
pub fn load_dataset(path: &Path) -> Result<Vec<GeoSample>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: GeoSample = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Fixed 17-symbol character vocabulary: digits, `'.'`, `','`, `'+'`,
/// `'-'`, then BOS/EOS/PAD.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    _private: (),
}

const VOCAB_CHARS: [char; 14] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '.', ',', '+', '-',
];

impl Vocabulary {
    pub const BOS: usize = 14;
    pub const EOS: usize = 15;
    pub const PAD: usize = 16;

    pub fn new() -> Self {
        Vocabulary { _private: () }
    }

    pub fn size(&self) -> usize {
        VOCAB_CHARS.len() + 3
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        VOCAB_CHARS.iter().position(|&v| v == c)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        VOCAB_CHARS.get(id).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id >= VOCAB_CHARS.len()
    }
}

/// A finalized token sequence: one id per character plus a trailing EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One id per character, EOS appended.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSeq> {
    let mut ids = Vec::with_capacity(text.len() + 1);
    for c in text.chars() {
        let id = ids_or_vocab_error(vocab, c)?;
        ids.push(id);
    }
    ids.push(Vocabulary::EOS);
    if ids.len() > MAX_SEQ_LEN {
        return Err(Error::Length(format!(
            "{} tokens exceed the maximum of {MAX_SEQ_LEN}",
            ids.len()
        )));
    }
    Ok(TokenSeq { ids })
}

fn ids_or_vocab_error(vocab: &Vocabulary, c: char) -> Result<usize> {
    vocab
        .id_of(c)
        .ok_or_else(|| Error::Vocabulary(format!("character {c:?} has no token id")))
}

/// Inverts [`tokenize`], dropping special tokens.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocabulary) -> String {
    seq.ids
        .iter()
        .filter_map(|&id| vocab.char_of(id))
        .collect()
}

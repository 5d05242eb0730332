//! The geotransformer: a single-head, single-block encoder-decoder
//! transformer whose only positional signal is the spherical rotation of
//! attention query/key vectors by per-token coordinate tags.
//!
//! Both blocks consume the same input tokens with no masks; targets are
//! aligned position-wise, padded, and the loss is restricted to positions
//! up to and including the target EOS.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::data::{tokenize, GeoSample, TokenSeq, Vocabulary};
use crate::encoding::{spherical_block, GeoAngles, GeoRotary, RotationBlock3};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 27,
            n_heads: 1,
            n_blocks: 1,
            d_ff: 108,
            vocab_size: 17,
            max_seq_len: 100,
        }
    }
}

impl ModelConfig {
    /// Defaults with a different embedding dimension; the feed-forward
    /// width scales with it.
    pub fn with_d_model(d_model: usize) -> Self {
        ModelConfig {
            d_model,
            d_ff: 4 * d_model,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        GeoRotary::new(self.d_model)?;
        if self.n_heads != 1 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidDimension(format!(
                "this architecture is single-head; got n_heads = {}",
                self.n_heads
            )));
        }
        if self.n_blocks != 1 {
            return Err(Error::InvalidDimension(format!(
                "this architecture is single-block; got n_blocks = {}",
                self.n_blocks
            )));
        }
        if self.d_ff == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::InvalidDimension(
                "d_ff, vocab_size and max_seq_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-token rotation angles; `None` is the identity rotation used for
/// special tokens, the segment separator and untagged runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGeoTag {
    tags: Vec<Option<GeoAngles>>,
}

impl TokenGeoTag {
    pub fn new(tags: Vec<Option<GeoAngles>>) -> Self {
        TokenGeoTag { tags }
    }

    /// All-identity tags for a sequence of the given length.
    pub fn identity(len: usize) -> Self {
        TokenGeoTag {
            tags: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<GeoAngles> {
        self.tags[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Option<GeoAngles>> {
        self.tags.iter()
    }

    /// One rotation block per token; identity where untagged.
    pub fn blocks(&self) -> Vec<RotationBlock3> {
        self.tags
            .iter()
            .map(|t| t.map(spherical_block).unwrap_or_else(RotationBlock3::identity))
            .collect()
    }
}

/// Tags a serialized sample: base-segment characters carry `origin`,
/// characters after the `'+'` separator carry `dest`, the separator and
/// special tokens are identity.
pub fn tag_segments(
    text: &str,
    tokens: &TokenSeq,
    vocab: &Vocabulary,
    origin: GeoAngles,
    dest: GeoAngles,
) -> Result<TokenGeoTag> {
    if crate::data::detokenize(tokens, vocab) != text {
        return Err(Error::Parse(format!(
            "token sequence does not reproduce the text {text:?}"
        )));
    }
    // Structural validation: both segments must parse as number pairs.
    crate::data::parse_input_text(text)?;
    let plus_id = vocab.id_of('+').expect("'+' is in the vocabulary");
    let mut seen_separator = false;
    let tags = tokens
        .ids
        .iter()
        .map(|&id| {
            if vocab.is_special(id) {
                None
            } else if id == plus_id && !seen_separator {
                seen_separator = true;
                None
            } else if seen_separator {
                Some(dest)
            } else {
                Some(origin)
            }
        })
        .collect();
    Ok(TokenGeoTag::new(tags))
}

/// True per-token tags for a sample: origin on the base segment,
/// destination on the displacement segment.
pub fn assign_token_coordinates(
    sample: &GeoSample,
    tokens: &TokenSeq,
    vocab: &Vocabulary,
) -> Result<TokenGeoTag> {
    tag_segments(
        &sample.input_text,
        tokens,
        vocab,
        sample.origin(),
        sample.destination(),
    )
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct EncDecActivations {
    pub encoder_output: Tensor,
    pub logits: Tensor,
}

struct AttnParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

struct LayerNormParams {
    gain: ParamId,
    shift: ParamId,
}

struct FeedForwardParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncoderParams {
    attn: AttnParams,
    ln_attn: LayerNormParams,
    ff: FeedForwardParams,
    ln_ff: LayerNormParams,
}

struct DecoderParams {
    self_attn: AttnParams,
    ln_self: LayerNormParams,
    cross_attn: AttnParams,
    ln_cross: LayerNormParams,
    ff: FeedForwardParams,
    ln_ff: LayerNormParams,
}

struct ModelParams {
    embed: ParamId,
    encoder: EncoderParams,
    decoder: DecoderParams,
    out_w: ParamId,
    out_b: ParamId,
}

/// One training sample prepared for the model.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub tokens: TokenSeq,
    pub tags: TokenGeoTag,
    pub target: TokenSeq,
}

/// The model: configuration, parameter store and the id map into it.
pub struct GeoTransformer {
    config: ModelConfig,
    rot: GeoRotary,
    pub store: ParamStore,
    params: ModelParams,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("uniform init is finite")
}

fn init_attn(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> AttnParams {
    AttnParams {
        wq: store.add(&format!("{prefix}.wq"), uniform(rng, &[d, d], d, d)),
        wk: store.add(&format!("{prefix}.wk"), uniform(rng, &[d, d], d, d)),
        wv: store.add(&format!("{prefix}.wv"), uniform(rng, &[d, d], d, d)),
        wo: store.add(&format!("{prefix}.wo"), Tensor::zeros(&[d, d])),
    }
}

fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) -> LayerNormParams {
    LayerNormParams {
        gain: store.add(&format!("{prefix}.gain"), Tensor::full(&[d], 1.0)),
        shift: store.add(&format!("{prefix}.shift"), Tensor::zeros(&[d])),
    }
}

fn init_feed_forward(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    f: usize,
    rng: &mut impl Rng,
) -> FeedForwardParams {
    FeedForwardParams {
        w1: store.add(&format!("{prefix}.w1"), uniform(rng, &[d, f], d, f)),
        b1: store.add(&format!("{prefix}.b1"), Tensor::zeros(&[f])),
        w2: store.add(&format!("{prefix}.w2"), uniform(rng, &[f, d], f, d)),
        b2: store.add(&format!("{prefix}.b2"), Tensor::zeros(&[d])),
    }
}

impl GeoTransformer {
    /// Initializes all weights from the rng: uniform
    /// `±√(6/(fan_in+fan_out))` for projection matrices and the embedding,
    /// ones/zeros for layer norms, zeros for biases. Attention output
    /// projections start at zero so the first forward pass is independent
    /// of the coordinate tags; they receive gradient immediately.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let rot = GeoRotary::new(config.d_model)?;
        let d = config.d_model;
        let v = config.vocab_size;
        let f = config.d_ff;
        let mut store = ParamStore::new();

        let embed = store.add("embed", uniform(rng, &[v, d], v, d));

        let encoder = EncoderParams {
            attn: init_attn(&mut store, "enc.attn", d, rng),
            ln_attn: init_layer_norm(&mut store, "enc.ln_attn", d),
            ff: init_feed_forward(&mut store, "enc.ff", d, f, rng),
            ln_ff: init_layer_norm(&mut store, "enc.ln_ff", d),
        };
        let decoder = DecoderParams {
            self_attn: init_attn(&mut store, "dec.self_attn", d, rng),
            ln_self: init_layer_norm(&mut store, "dec.ln_self", d),
            cross_attn: init_attn(&mut store, "dec.cross_attn", d, rng),
            ln_cross: init_layer_norm(&mut store, "dec.ln_cross", d),
            ff: init_feed_forward(&mut store, "dec.ff", d, f, rng),
            ln_ff: init_layer_norm(&mut store, "dec.ln_ff", d),
        };
        let out_w = store.add("out.w", uniform(rng, &[d, v], d, v));
        let out_b = store.add("out.b", Tensor::zeros(&[v]));

        Ok(GeoTransformer {
            config,
            rot,
            store,
            params: ModelParams {
                embed,
                encoder,
                decoder,
                out_w,
                out_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Geo-rotated scaled-dot-product attention. Query and key rows are
    /// projected, rotated by their token tags, and combined through a
    /// row-softmax; values are projected but never rotated.
    fn geo_attention_on_tape(
        &self,
        tape: &mut Tape,
        q_in: VarId,
        k_in: VarId,
        v_in: VarId,
        tags_q: &TokenGeoTag,
        tags_k: &TokenGeoTag,
        attn: &AttnParams,
    ) -> Result<VarId> {
        let q_rows = tape.value(q_in).rows();
        let k_rows = tape.value(k_in).rows();
        if tags_q.len() != q_rows || tags_k.len() != k_rows {
            return Err(Error::ShapeMismatch(format!(
                "tag lengths {}/{} do not match sequence lengths {}/{}",
                tags_q.len(),
                tags_k.len(),
                q_rows,
                k_rows
            )));
        }
        let wq = tape.param(&self.store, attn.wq);
        let wk = tape.param(&self.store, attn.wk);
        let wv = tape.param(&self.store, attn.wv);
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(k_in, wk)?;
        let v = tape.matmul(v_in, wv)?;
        let q = tape.geo_rotate_rows(q, tags_q.blocks())?;
        let k = tape.geo_rotate_rows(k, tags_k.blocks())?;
        let scores = tape.matmul_nt(q, k)?;
        let scaled = tape.scale(scores, 1.0 / (self.config.d_model as f64).sqrt());
        let probs = tape.softmax_rows(scaled)?;
        tape.matmul(probs, v)
    }

    /// Attention sublayer with its output projection, residual connection
    /// and layer norm.
    #[allow(clippy::too_many_arguments)]
    fn attention_sublayer(
        &self,
        tape: &mut Tape,
        residual: VarId,
        q_in: VarId,
        kv_in: VarId,
        tags_q: &TokenGeoTag,
        tags_k: &TokenGeoTag,
        attn: &AttnParams,
        ln: &LayerNormParams,
    ) -> Result<VarId> {
        let mixed = self.geo_attention_on_tape(tape, q_in, kv_in, kv_in, tags_q, tags_k, attn)?;
        let wo = tape.param(&self.store, attn.wo);
        let projected = tape.matmul(mixed, wo)?;
        let summed = tape.add(residual, projected)?;
        let gain = tape.param(&self.store, ln.gain);
        let shift = tape.param(&self.store, ln.shift);
        tape.layer_norm_rows(summed, gain, shift)
    }

    fn feed_forward_sublayer(
        &self,
        tape: &mut Tape,
        x: VarId,
        ff: &FeedForwardParams,
        ln: &LayerNormParams,
    ) -> Result<VarId> {
        let w1 = tape.param(&self.store, ff.w1);
        let b1 = tape.param(&self.store, ff.b1);
        let w2 = tape.param(&self.store, ff.w2);
        let b2 = tape.param(&self.store, ff.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row_bias(h, b1)?;
        let h = tape.relu(h);
        let out = tape.matmul(h, w2)?;
        let out = tape.add_row_bias(out, b2)?;
        let summed = tape.add(x, out)?;
        let gain = tape.param(&self.store, ln.gain);
        let shift = tape.param(&self.store, ln.shift);
        tape.layer_norm_rows(summed, gain, shift)
    }

    /// Builds the full forward graph on the tape and returns the encoder
    /// output and vocabulary logits nodes.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        tokens: &TokenSeq,
        tags: &TokenGeoTag,
    ) -> Result<(VarId, VarId)> {
        let len = tokens.len();
        if len == 0 {
            return Err(Error::Length("empty token sequence".into()));
        }
        if len > self.config.max_seq_len {
            return Err(Error::Length(format!(
                "{len} tokens exceed the maximum of {}",
                self.config.max_seq_len
            )));
        }
        if tags.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} tags for {} tokens",
                tags.len(),
                len
            )));
        }
        let identity = TokenGeoTag::identity(len);
        let embed = tape.param(&self.store, self.params.embed);
        let x0 = tape.embed(embed, &tokens.ids)?;

        // Encoder: geo self-attention, then feed-forward.
        let p = &self.params.encoder;
        let enc = self.attention_sublayer(tape, x0, x0, x0, tags, tags, &p.attn, &p.ln_attn)?;
        let enc = self.feed_forward_sublayer(tape, enc, &p.ff, &p.ln_ff)?;

        // Decoder: fed the same input. Its own tokens carry identity tags;
        // the cross-attention keys keep the encoder-side tags.
        let p = &self.params.decoder;
        let dec = self.attention_sublayer(
            tape, x0, x0, x0, &identity, &identity, &p.self_attn, &p.ln_self,
        )?;
        let dec = self.attention_sublayer(
            tape, dec, dec, enc, &identity, tags, &p.cross_attn, &p.ln_cross,
        )?;
        let dec = self.feed_forward_sublayer(tape, dec, &p.ff, &p.ln_ff)?;

        let out_w = tape.param(&self.store, self.params.out_w);
        let out_b = tape.param(&self.store, self.params.out_b);
        let logits = tape.matmul(dec, out_w)?;
        let logits = tape.add_row_bias(logits, out_b)?;
        Ok((enc, logits))
    }

    /// Inference forward pass on a private tape.
    pub fn forward(&self, tokens: &TokenSeq, tags: &TokenGeoTag) -> Result<EncDecActivations> {
        let mut tape = Tape::new();
        let (enc, logits) = self.forward_on_tape(&mut tape, tokens, tags)?;
        Ok(EncDecActivations {
            encoder_output: tape.value(enc).clone(),
            logits: tape.value(logits).clone(),
        })
    }

    /// Position-wise loss of one sample's logits node: the target sequence
    /// padded to the input length, masked beyond its EOS.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        logits: VarId,
        input_len: usize,
        target: &TokenSeq,
    ) -> Result<VarId> {
        if target.len() > input_len {
            return Err(Error::Length(format!(
                "target of {} tokens does not fit input of {}",
                target.len(),
                input_len
            )));
        }
        let mut padded = target.ids.clone();
        padded.resize(input_len, Vocabulary::PAD);
        let ignore: Vec<bool> = (0..input_len).map(|i| i >= target.len()).collect();
        tape.cross_entropy(logits, &padded, &ignore)
    }
}

/// One optimization step over a batch: zero grads, forward every sample,
/// mean the per-sample losses, backpropagate, apply Adam. Returns the
/// pre-step mean loss.
pub fn train_step(
    model: &mut GeoTransformer,
    batch: &[BatchItem],
    adam: &mut AdamState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyLoss);
    }
    model.store.zero_grads();
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    for item in batch {
        let (_, logits) = model.forward_on_tape(&mut tape, &item.tokens, &item.tags)?;
        let loss = model.sample_loss(&mut tape, logits, item.tokens.len(), &item.target)?;
        losses.push(loss);
    }
    let mean = tape.mean_scalars(&losses)?;
    let value = tape.value(mean).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {value}")));
    }
    tape.backward(mean)?;
    tape.accumulate_param_grads(&mut model.store);
    adam_step(&mut model.store, adam);
    Ok(value)
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// f64 bit patterns, little-endian order of the flat buffer.
    bits: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

/// Writes every parameter as its exact f64 bit pattern, with the config
/// and a version tag, so a checkpoint round-trips bit-exactly.
pub fn save_checkpoint(model: &GeoTransformer, path: &Path) -> Result<()> {
    let tensors = model
        .store
        .iter()
        .map(|(_, p)| TensorRecord {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            bits: p.value.data().iter().map(|v| v.to_bits()).collect(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: model.config,
        tensors,
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &file)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))?;
    Ok(())
}

/// Restores a model from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<GeoTransformer> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = GeoTransformer::new(file.config, &mut seed_rng)?;
    if file.tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors in file, model has {}",
            file.tensors.len(),
            model.store.len()
        )));
    }
    for record in &file.tensors {
        let id = model.store.by_name(&record.name).ok_or_else(|| {
            Error::Checkpoint(format!("unknown parameter {:?}", record.name))
        })?;
        if model.store.value(id).shape() != record.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} has shape {:?}, expected {:?}",
                record.name,
                record.shape,
                model.store.value(id).shape()
            )));
        }
        let data: Vec<f64> = record.bits.iter().map(|&b| f64::from_bits(b)).collect();
        *model.store.value_mut(id) = Tensor::from_vec(&record.shape, data)?;
    }
    Ok(model)
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_tags() -> (GeoSample, TokenSeq, TokenGeoTag, Vocabulary) {
        let vocab = Vocabulary::new();
        let sample = GeoSample::new(46.4157, 21.0756, -0.0424, 0.0132).unwrap();
        let tokens = tokenize(&sample.input_text, &vocab).unwrap();
        let tags = assign_token_coordinates(&sample, &tokens, &vocab).unwrap();
        (sample, tokens, tags, vocab)
    }

    #[test]
    fn tags_follow_reference_segments() {
        let (sample, tokens, tags, _) = sample_tags();
        assert_eq!(sample.input_text, "46.4157,21.0756+-0.0424,0.0132");
        assert_eq!(tags.len(), tokens.len());
        let origin = GeoAngles::from_degrees(46.4157, 21.0756);
        let dest = GeoAngles::from_degrees(46.3733, 21.0888);
        // First 15 characters are the base segment.
        for i in 0..15 {
            let t = tags.get(i).unwrap();
            assert!((t.lat_phi - origin.lat_phi).abs() < 1e-12);
            assert!((t.lon_theta - origin.lon_theta).abs() < 1e-12);
        }
        // Separator at 15 is identity.
        assert_eq!(tags.get(15), None);
        // Displacement characters carry the destination.
        for i in 16..tokens.len() - 1 {
            let t = tags.get(i).unwrap();
            assert!((t.lat_phi - dest.lat_phi).abs() < 1e-12);
            assert!((t.lon_theta - dest.lon_theta).abs() < 1e-12);
        }
        // Trailing EOS is identity.
        assert_eq!(tags.get(tokens.len() - 1), None);
    }

    #[test]
    fn zero_displacement_tags_collapse() {
        let vocab = Vocabulary::new();
        let sample = GeoSample::new(10.0, 20.0, 0.0, 0.0).unwrap();
        let tokens = tokenize(&sample.input_text, &vocab).unwrap();
        let tags = assign_token_coordinates(&sample, &tokens, &vocab).unwrap();
        let non_special: Vec<GeoAngles> = tags.iter().flatten().copied().collect();
        assert!(non_special.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn malformed_sequences_are_rejected() {
        let vocab = Vocabulary::new();
        let (sample, tokens, _, _) = sample_tags();
        // Token sequence that does not reproduce the text.
        let mut wrong = tokens.clone();
        wrong.ids[0] = 9;
        assert!(matches!(
            assign_token_coordinates(&sample, &wrong, &vocab).unwrap_err(),
            Error::Parse(_)
        ));
        // Empty displacement digits.
        let text = "1.0,2.0+,3.0";
        let seq = tokenize(text, &vocab).unwrap();
        let angles = GeoAngles::new(0.0, 0.0);
        assert!(matches!(
            tag_segments(text, &seq, &vocab, angles, angles).unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let (_, tokens, tags, _) = sample_tags();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = GeoTransformer::new(ModelConfig::default(), &mut rng).unwrap();
        let a = model.forward(&tokens, &tags).unwrap();
        let b = model.forward(&tokens, &tags).unwrap();
        assert_eq!(a.logits.shape(), &[tokens.len(), 17]);
        assert_eq!(a.encoder_output.shape(), &[tokens.len(), 27]);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.encoder_output, b.encoder_output);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let (_, tokens, tags, _) = sample_tags();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = GeoTransformer::new(ModelConfig::default(), &mut rng).unwrap();
        let short_tags = TokenGeoTag::identity(tokens.len() - 1);
        assert!(matches!(
            model.forward(&tokens, &short_tags).unwrap_err(),
            Error::ShapeMismatch(_)
        ));
        let long = TokenSeq {
            ids: vec![0; 101],
        };
        assert!(matches!(
            model.forward(&long, &TokenGeoTag::identity(101)).unwrap_err(),
            Error::Length(_)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d_model: 28,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (_, tokens, tags, _) = sample_tags();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = GeoTransformer::new(ModelConfig::default(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        save_checkpoint(&model, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        for (id, p) in model.store.iter() {
            let r = restored.store.by_name(&p.name).unwrap();
            assert_eq!(model.store.value(id).data(), restored.store.value(r).data());
        }
        // Same forwards, bit for bit.
        let a = model.forward(&tokens, &tags).unwrap();
        let b = restored.forward(&tokens, &tags).unwrap();
        assert_eq!(a.logits, b.logits);

        // Saving the restored model reproduces the file bytes.
        let path2 = dir.path().join("weights2.json");
        save_checkpoint(&restored, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}

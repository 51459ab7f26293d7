//! Small fully-connected coordinate networks with positional encoding,
//! deterministic forward passes and exact reverse-mode gradients.
//!
//! The scene network maps an encoded 3D position (plus the encoded view
//! direction, concatenated at the penultimate layer) to an RGB color and a
//! volume density. The same dense-layer core also backs the ray generator
//! network, which has a plain feed-forward stack without the concat.
//!
//! Parameters live in a single flat `f64` buffer ([`ParamSet`]) so that
//! optimizers, Fisher diagonals and prune masks can address every scalar by
//! index.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const BYTES_PER_PARAM: usize = std::mem::size_of::<f64>();

/// Shape of one dense layer: `out_dim x in_dim` weights plus `out_dim` bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerDims {
    pub fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

/// Flat-addressable MLP parameters with a frozen flag.
///
/// Layout per layer: row-major weights (`out_dim` rows of `in_dim`), then the
/// bias vector. Layers are stored back to back in `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    dims: Vec<LayerDims>,
    offsets: Vec<usize>,
    data: Vec<f64>,
    frozen: bool,
    version: u32,
}

impl ParamSet {
    pub fn zeros(dims: &[LayerDims]) -> Result<Self> {
        Self::check_chain(dims)?;
        let offsets = Self::offsets_for(dims);
        let total = dims.iter().map(LayerDims::param_count).sum();
        Ok(ParamSet { dims: dims.to_vec(), offsets, data: vec![0.0; total], frozen: false, version: 0 })
    }

    /// Seeded uniform init in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` per layer.
    pub fn init(dims: &[LayerDims], rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for (k, d) in dims.iter().enumerate() {
            let bound = 1.0 / (d.in_dim as f64).sqrt();
            let start = p.offsets[k];
            for x in &mut p.data[start..start + d.param_count()] {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    fn check_chain(dims: &[LayerDims]) -> Result<()> {
        for w in dims.windows(2) {
            // a concat layer may widen the next input, never narrow it
            if w[1].in_dim < w[0].out_dim {
                return Err(Error::Config(format!(
                    "layer dimensions do not chain: out {} -> in {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(())
    }

    fn offsets_for(dims: &[LayerDims]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for d in dims {
            offsets.push(acc);
            acc += d.param_count();
        }
        offsets
    }

    pub fn dims(&self) -> &[LayerDims] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len()
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// Total parameter count times bytes per scalar.
    pub fn byte_size(&self) -> usize {
        self.data.len() * BYTES_PER_PARAM
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the flat parameter buffer.
    ///
    /// Panics if the set is frozen; mutating a snapshot is a programming
    /// error, not a recoverable condition.
    pub fn data_mut(&mut self) -> &mut [f64] {
        assert!(!self.frozen, "attempted to mutate a frozen ParamSet (version {})", self.version);
        &mut self.data
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let d = self.dims[layer];
        let start = self.offsets[layer];
        &self.data[start..start + d.out_dim * d.in_dim]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let d = self.dims[layer];
        let start = self.offsets[layer] + d.out_dim * d.in_dim;
        &self.data[start..start + d.out_dim]
    }

    /// Flat index of the first scalar of `layer`.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Deep copy with `frozen = true` and the snapshot task index stamped in.
    pub fn snapshot(&self, task: u32) -> ParamSet {
        let mut copy = self.clone();
        copy.frozen = true;
        copy.version = task;
        copy
    }

    /// Thawed deep copy, e.g. to continue training from a checkpoint.
    pub fn thaw(&self) -> ParamSet {
        let mut copy = self.clone();
        copy.frozen = false;
        copy
    }

    /// FNV-1a over the exact parameter bytes; used to assert frozen sets
    /// never drift during a task.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for x in &self.data {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

// ---------------------------------------------------------------------------
// Serialization: versioned little-endian binary with a lossless round trip.
// Layout: magic "NFPS", format u32, frozen u8, version u32, layer count u32,
// per-layer (in u32, out u32), then row-major f64 scalars.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"NFPS";
const FORMAT_VERSION: u32 = 1;

impl ParamSet {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.frozen as u8])?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&(d.in_dim as u32).to_le_bytes())?;
            w.write_all(&(d.out_dim as u32).to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("ParamSet deserialize: {msg}"));
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        if &buf4 != MAGIC {
            return Err(bad("bad magic"));
        }
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        if u32::from_le_bytes(buf4) != FORMAT_VERSION {
            return Err(bad("unsupported format version"));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(|e| bad(&e.to_string()))?;
        let frozen = b1[0] != 0;
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        let version = u32::from_le_bytes(buf4);
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        let n_layers = u32::from_le_bytes(buf4) as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
            let in_dim = u32::from_le_bytes(buf4) as usize;
            r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
            let out_dim = u32::from_le_bytes(buf4) as usize;
            dims.push(LayerDims { in_dim, out_dim });
        }
        let mut p = ParamSet::zeros(&dims)?;
        let mut buf8 = [0u8; 8];
        for i in 0..p.data.len() {
            r.read_exact(&mut buf8).map_err(|e| bad(&e.to_string()))?;
            p.data[i] = f64::from_le_bytes(buf8);
        }
        p.frozen = frozen;
        p.version = version;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e.to_string()))?;
        self.write_to(&mut f).map_err(|e| Error::io(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e.to_string()))?;
        Self::read_from(&mut f)
    }
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

/// Frequency-band configuration for one input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    pub bands: u32,
    pub include_identity: bool,
}

impl EncodingConfig {
    pub fn new(bands: u32, include_identity: bool) -> Self {
        EncodingConfig { bands, include_identity }
    }

    /// Encoded dimension for a `dim`-vector input.
    pub fn encoded_dim(&self, dim: usize) -> usize {
        dim * (self.include_identity as usize + 2 * self.bands as usize)
    }
}

/// Appends `[v?, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{L-1} pi v), cos(2^{L-1} pi v)]`
/// to `out`, each band covering every component of `v`.
pub fn encode_into(out: &mut Vec<f64>, v: &[f64], cfg: EncodingConfig) {
    if cfg.include_identity {
        out.extend_from_slice(v);
    }
    let mut freq = std::f64::consts::PI;
    for _ in 0..cfg.bands {
        for &x in v {
            out.push((freq * x).sin());
        }
        for &x in v {
            out.push((freq * x).cos());
        }
        freq *= 2.0;
    }
}

pub fn encode(v: &[f64], cfg: EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.encoded_dim(v.len()));
    encode_into(&mut out, v, cfg);
    out
}

// ---------------------------------------------------------------------------
// Dense core: forward with a tape, exact reverse-mode backward.
// ReLU after every layer except the last (linear). One layer may take an
// auxiliary vector concatenated onto its input.
// ---------------------------------------------------------------------------

/// Activation record of one forward pass, sufficient for an exact backward.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[k]` is the (post-activation, post-concat) input fed to layer k.
    pub inputs: Vec<Vec<f64>>,
    /// Raw linear output of the last layer.
    pub output: Vec<f64>,
}

/// Forward through the dense stack. `aux` optionally names a layer index and
/// the vector concatenated onto that layer's input.
pub fn dense_forward(params: &ParamSet, input: &[f64], aux: Option<(usize, &[f64])>) -> Tape {
    let n = params.num_layers();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut cur = input.to_vec();
    for k in 0..n {
        if let Some((layer, aux_vec)) = aux {
            if layer == k {
                cur.extend_from_slice(aux_vec);
            }
        }
        let d = params.dims()[k];
        assert_eq!(cur.len(), d.in_dim, "layer {k} input dim mismatch");
        let w = params.weights(k);
        let b = params.bias(k);
        let mut next = vec![0.0; d.out_dim];
        for (o, row) in w.chunks_exact(d.in_dim).enumerate() {
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(&cur) {
                acc += wi * xi;
            }
            next[o] = acc;
        }
        if k + 1 < n {
            for x in &mut next {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
        inputs.push(std::mem::replace(&mut cur, next));
    }
    Tape { inputs, output: cur }
}

/// Accumulates `d(output) . d(params)` into `grad` (same flat layout as the
/// ParamSet). `aux_layer` must match the forward call.
pub fn dense_backward(
    params: &ParamSet,
    tape: &Tape,
    d_output: &[f64],
    aux_layer: Option<usize>,
    grad: &mut [f64],
) {
    let n = params.num_layers();
    assert_eq!(grad.len(), params.num_params());
    let mut d_out = d_output.to_vec();
    for k in (0..n).rev() {
        let d = params.dims()[k];
        let input = &tape.inputs[k];
        let w = params.weights(k);
        let base = params.layer_offset(k);
        let bias_base = base + d.out_dim * d.in_dim;
        // weight and bias gradients
        for o in 0..d.out_dim {
            let g = d_out[o];
            if g != 0.0 {
                let row = base + o * d.in_dim;
                for i in 0..d.in_dim {
                    grad[row + i] += g * input[i];
                }
            }
            grad[bias_base + o] += g;
        }
        if k == 0 {
            break;
        }
        // gradient w.r.t. this layer's input, truncated past any concat tail
        let prev_out = params.dims()[k - 1].out_dim;
        let keep = if aux_layer == Some(k) { prev_out } else { d.in_dim };
        let mut d_in = vec![0.0; keep];
        for o in 0..d.out_dim {
            let g = d_out[o];
            if g != 0.0 {
                let row = &w[o * d.in_dim..o * d.in_dim + keep];
                for i in 0..keep {
                    d_in[i] += g * row[i];
                }
            }
        }
        // ReLU mask of the previous layer's post-activation
        for i in 0..keep {
            if input[i] <= 0.0 {
                d_in[i] = 0.0;
            }
        }
        d_out = d_in;
    }
}

// ---------------------------------------------------------------------------
// Scene network
// ---------------------------------------------------------------------------

/// Color + density sample produced by the scene network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkOutput {
    pub color: [f64; 3],
    pub sigma: f64,
}

/// Architecture of the scene network: ReLU trunk over the encoded position,
/// encoded view direction concatenated at the penultimate hidden layer,
/// 4-wide linear head mapped through (sigmoid, softplus).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub pos_enc: EncodingConfig,
    pub dir_enc: EncodingConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![128, 128, 128, 128],
            pos_enc: EncodingConfig::new(6, true),
            dir_enc: EncodingConfig::new(2, true),
        }
    }
}

impl NetworkConfig {
    pub fn pos_dim(&self) -> usize {
        self.pos_enc.encoded_dim(3)
    }

    pub fn dir_dim(&self) -> usize {
        self.dir_enc.encoded_dim(3)
    }

    /// Index of the hidden layer whose input carries the view direction.
    pub fn concat_layer(&self) -> usize {
        self.hidden.len() - 1
    }

    pub fn layer_dims(&self) -> Result<Vec<LayerDims>> {
        if self.hidden.len() < 2 {
            return Err(Error::Config("scene network needs at least 2 hidden layers".into()));
        }
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.pos_dim();
        for (k, &h) in self.hidden.iter().enumerate() {
            let in_dim = if k == self.concat_layer() { prev + self.dir_dim() } else { prev };
            dims.push(LayerDims { in_dim, out_dim: h });
            prev = h;
        }
        dims.push(LayerDims { in_dim: prev, out_dim: 4 });
        Ok(dims)
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        ParamSet::init(&self.layer_dims()?, rng)
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let expect = self.layer_dims()?;
        if params.dims() != expect.as_slice() {
            return Err(Error::Config(format!(
                "parameter shapes {:?} do not match network config {:?}",
                params.dims(),
                expect
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    // overflow-safe: softplus(x) = max(x,0) + ln(1 + exp(-|x|))
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Head mapping from the 4 raw outputs to (color in [0,1]^3, sigma >= 0).
fn apply_head(raw: &[f64]) -> NetworkOutput {
    NetworkOutput {
        color: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
        sigma: softplus(raw[3]),
    }
}

/// Deterministic forward pass of the scene network.
pub fn forward(params: &ParamSet, cfg: &NetworkConfig, p: [f64; 3], d: [f64; 3]) -> Result<NetworkOutput> {
    cfg.check(params)?;
    Ok(forward_unchecked(params, cfg, p, d).0)
}

/// Forward keeping the tape, for a later [`backward_sample`]. Skips the shape
/// check; callers validate once per batch.
pub fn forward_unchecked(
    params: &ParamSet,
    cfg: &NetworkConfig,
    p: [f64; 3],
    d: [f64; 3],
) -> (NetworkOutput, Tape) {
    let enc_p = encode(&p, cfg.pos_enc);
    let enc_d = encode(&d, cfg.dir_enc);
    let tape = dense_forward(params, &enc_p, Some((cfg.concat_layer(), &enc_d)));
    (apply_head(&tape.output), tape)
}

/// Backward of one sample through the output maps and the dense stack,
/// contracting the upstream gradients `(d_color, d_sigma)` into `grad`.
pub fn backward_sample(
    params: &ParamSet,
    cfg: &NetworkConfig,
    tape: &Tape,
    out: &NetworkOutput,
    d_color: [f64; 3],
    d_sigma: f64,
    grad: &mut [f64],
) {
    let mut d_raw = [0.0; 4];
    for ch in 0..3 {
        let s = out.color[ch];
        d_raw[ch] = d_color[ch] * s * (1.0 - s);
    }
    d_raw[3] = d_sigma * sigmoid(tape.output[3]);
    dense_backward(params, tape, &d_raw, Some(cfg.concat_layer()), grad);
}

/// Batched exact reverse-mode gradient of the network outputs contracted with
/// per-sample upstream gradients. Accumulation runs in batch order, so the
/// reduction is deterministic.
pub fn backward(
    params: &ParamSet,
    cfg: &NetworkConfig,
    batch: &[([f64; 3], [f64; 3])],
    upstream: &[([f64; 3], f64)],
) -> Result<Vec<f64>> {
    cfg.check(params)?;
    if batch.is_empty() {
        return Err(Error::Domain("backward: empty batch".into()));
    }
    if upstream.iter().any(|(dc, ds)| !ds.is_finite() || dc.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("backward: non-finite upstream gradient".into()));
    }
    let mut grad = vec![0.0; params.num_params()];
    for ((p, d), (dc, ds)) in batch.iter().zip(upstream) {
        let (out, tape) = forward_unchecked(params, cfg, *p, *d);
        backward_sample(params, cfg, &tape, &out, *dc, *ds, &mut grad);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            hidden: vec![8, 8],
            pos_enc: EncodingConfig::new(2, true),
            dir_enc: EncodingConfig::new(0, true),
        }
    }

    #[test]
    fn encode_zero_vector() {
        let e = encode(&[0.0, 0.0, 0.0], EncodingConfig::new(1, true));
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn encode_identity_only() {
        let v = [0.3, -0.2, 0.9];
        assert_eq!(encode(&v, EncodingConfig::new(0, true)), v.to_vec());
    }

    #[test]
    fn encode_dims_and_first_band() {
        let e = encode(&[0.5, 0.0, 0.0], EncodingConfig::new(2, false));
        assert_eq!(e.len(), 12);
        assert!((e[0] - 1.0).abs() < 1e-12); // sin(pi * 0.5)
    }

    #[test]
    fn zero_weight_network_output() {
        let cfg = tiny_cfg();
        let params = ParamSet::zeros(&cfg.layer_dims().unwrap()).unwrap();
        let out = forward(&params, &cfg, [0.1, 0.2, 0.3], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(out.color, [0.5, 0.5, 0.5]);
        assert!((out.sigma - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn forward_deterministic() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = cfg.init_params(&mut rng).unwrap();
        let a = forward(&params, &cfg, [0.1, -0.4, 0.7], [0.0, 0.0, 1.0]).unwrap();
        let b = forward(&params, &cfg, [0.1, -0.4, 0.7], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let cfg = tiny_cfg();
        let other = NetworkConfig { hidden: vec![4, 4], ..tiny_cfg() };
        let params = ParamSet::zeros(&other.layer_dims().unwrap()).unwrap();
        assert!(matches!(forward(&params, &cfg, [0.0; 3], [0.0, 0.0, 1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn snapshot_is_independent_and_frozen() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = cfg.init_params(&mut rng).unwrap();
        let snap = params.snapshot(2);
        assert!(snap.is_frozen());
        assert_eq!(snap.version(), 2);
        assert_eq!(snap.byte_size(), params.byte_size());
        let before = snap.checksum();
        params.data_mut()[0] += 1.0;
        assert_eq!(snap.checksum(), before);
        // snapshot of snapshot keeps contents
        assert_eq!(snap.snapshot(3).data(), snap.data());
    }

    #[test]
    #[should_panic(expected = "frozen")]
    fn frozen_mutation_panics() {
        let cfg = tiny_cfg();
        let params = ParamSet::zeros(&cfg.layer_dims().unwrap()).unwrap();
        let mut snap = params.snapshot(1);
        let _ = snap.data_mut();
    }

    #[test]
    fn frozen_forward_stable_across_student_updates() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut student = cfg.init_params(&mut rng).unwrap();
        let snap = student.snapshot(1);
        let before = forward(&snap, &cfg, [0.2, 0.1, 0.0], [0.0, 0.0, 1.0]).unwrap();
        for x in student.data_mut() {
            *x += 0.25;
        }
        let after = forward(&snap, &cfg, [0.2, 0.1, 0.0], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn param_bytes_cases() {
        let empty = ParamSet::zeros(&[]).unwrap();
        assert_eq!(empty.byte_size(), 0);
        let single = ParamSet::zeros(&[LayerDims { in_dim: 3, out_dim: 2 }]).unwrap();
        assert_eq!(single.byte_size(), 64);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = cfg.init_params(&mut rng).unwrap();
        let batch = vec![([0.1, 0.2, 0.3], [0.0, 0.0, 1.0])];
        let upstream = vec![([0.0; 3], 0.0)];
        let grad = backward(&params, &cfg, &batch, &upstream).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_layer_linear_gradient_is_outer_product() {
        // single linear layer: d(out_o)/d(w_{oi}) = input_i, d/d(b_o) = 1
        let dims = [LayerDims { in_dim: 3, out_dim: 2 }];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ParamSet::init(&dims, &mut rng).unwrap();
        let input = [0.4, -0.7, 0.2];
        let tape = dense_forward(&params, &input, None);
        let upstream = [2.0, -1.5];
        let mut grad = vec![0.0; params.num_params()];
        dense_backward(&params, &tape, &upstream, None, &mut grad);
        for o in 0..2 {
            for i in 0..3 {
                assert!((grad[o * 3 + i] - upstream[o] * input[i]).abs() < 1e-15);
            }
            assert!((grad[6 + o] - upstream[o]).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = cfg.init_params(&mut rng).unwrap();
        assert!(params.num_params() <= 500, "oracle is specified for small networks");
        let batch: Vec<([f64; 3], [f64; 3])> = (0..4)
            .map(|_| {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                (p, [0.0, 0.0, 1.0])
            })
            .collect();
        let upstream: Vec<([f64; 3], f64)> = (0..4)
            .map(|_| {
                (
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let analytic = backward(&params, &cfg, &batch, &upstream).unwrap();

        // independent central-difference oracle over every parameter
        let scalar = |params: &ParamSet| -> f64 {
            let mut acc = 0.0;
            for ((p, d), (dc, ds)) in batch.iter().zip(&upstream) {
                let out = forward(params, &cfg, *p, *d).unwrap();
                for ch in 0..3 {
                    acc += dc[ch] * out.color[ch];
                }
                acc += ds * out.sigma;
            }
            acc
        };
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for k in 0..params.num_params() {
            let orig = params.data()[k];
            params.data_mut()[k] = orig + h;
            let plus = scalar(&params);
            params.data_mut()[k] = orig - h;
            let minus = scalar(&params);
            params.data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / (fd.abs() + 1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn paramset_roundtrip() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = cfg.init_params(&mut rng).unwrap().snapshot(4);
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let back = ParamSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, params);
    }
}

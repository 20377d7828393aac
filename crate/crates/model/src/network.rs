//! The fusion network: modality embeddings with CLS tokens, transformer
//! encoders, cross-attention fusion, the DOA classifier and the auxiliary
//! spherical-map and wearer-activity heads.

use egodoa_core::features::N_BINS;
use egodoa_core::{Error, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{normal, xavier, Mat, ParamId, ParamStore};

/// Coarse spherical grid produced by each head projection.
pub const SPHERE_COARSE: (usize, usize) = (45, 90);
/// Upsampled spherical grid, 2 degrees per cell.
pub const SPHERE_FINE: (usize, usize) = (90, 180);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff: usize,
    /// GCC-PHAT frames per chunk.
    pub audio_len: usize,
    /// Lag coefficients per frame.
    pub audio_dim: usize,
    /// Patches per frame.
    pub visual_len: usize,
    /// Raw values per patch.
    pub visual_dim: usize,
    pub bins: usize,
    /// Normalise sublayer inputs instead of sublayer outputs.
    pub pre_ln: bool,
    pub spherical_head: bool,
    pub wearer_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            heads: 4,
            hidden: 128,
            ff: 256,
            audio_len: 22,
            audio_dim: 96,
            visual_len: 196,
            visual_dim: 768,
            bins: N_BINS,
            pre_ln: false,
            spherical_head: false,
            wearer_head: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("depth", self.depth),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ff", self.ff),
            ("audio_len", self.audio_len),
            ("audio_dim", self.audio_dim),
            ("visual_len", self.visual_len),
            ("visual_dim", self.visual_dim),
            ("bins", self.bins),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerIds {
    pub attn: AttnIds,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub embed: ParamId,
    pub cls: ParamId,
    pub pos: ParamId,
    pub layers: Vec<LayerIds>,
}

#[derive(Debug, Clone)]
pub struct HeadIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelIds {
    pub audio: EncoderIds,
    pub visual: EncoderIds,
    pub fusion: AttnIds,
    pub cls1: HeadIds,
    pub cls2: HeadIds,
    pub sphere: Option<[HeadIds; 2]>,
    pub wearer: Option<HeadIds>,
}

/// Parameter shapes in registration order.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let h = cfg.hidden;
    let mut out = Vec::new();
    let mut push = |n: String, s: (usize, usize)| out.push((n, s));
    for (m, len, dim) in [
        ("audio", cfg.audio_len, cfg.audio_dim),
        ("visual", cfg.visual_len, cfg.visual_dim),
    ] {
        push(format!("{m}.embed"), (dim, h));
        push(format!("{m}.cls"), (1, h));
        push(format!("{m}.pos"), (len + 1, h));
        for l in 0..cfg.depth {
            let p = format!("{m}.layer{l}");
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{p}.attn.{w}"), (h, h));
            }
            push(format!("{p}.ln1.g"), (1, h));
            push(format!("{p}.ln1.b"), (1, h));
            push(format!("{p}.mlp.w1"), (h, cfg.ff));
            push(format!("{p}.mlp.b1"), (1, cfg.ff));
            push(format!("{p}.mlp.w2"), (cfg.ff, h));
            push(format!("{p}.mlp.b2"), (1, h));
            push(format!("{p}.ln2.g"), (1, h));
            push(format!("{p}.ln2.b"), (1, h));
        }
    }
    for w in ["wq", "wk", "wv", "wo"] {
        push(format!("fusion.attn.{w}"), (h, h));
    }
    push("classifier.w1".into(), (2 * h, cfg.ff));
    push("classifier.b1".into(), (1, cfg.ff));
    push("classifier.w2".into(), (cfg.ff, cfg.bins));
    push("classifier.b2".into(), (1, cfg.bins));
    if cfg.spherical_head {
        let cells = SPHERE_COARSE.0 * SPHERE_COARSE.1;
        for m in ["audio", "visual"] {
            push(format!("sphere.{m}.w"), (h, cells));
            push(format!("sphere.{m}.b"), (1, cells));
        }
    }
    if cfg.wearer_head {
        push("wearer.w".into(), (h, 1));
        push("wearer.b".into(), (1, 1));
    }
    out
}

fn init_value(rng: &mut ChaCha8Rng, name: &str, shape: (usize, usize)) -> Mat {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if name.ends_with(".cls") || name.ends_with(".pos") {
        normal(rng, shape.0, shape.1, 0.02)
    } else if name.contains(".ln") && leaf == "g" {
        Mat::ones(shape)
    } else if leaf.starts_with('b') || leaf == "b" {
        Mat::zeros(shape)
    } else {
        xavier(rng, shape.0, shape.1)
    }
}

fn resolve(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

fn resolve_ids(cfg: &ModelConfig, store: &ParamStore) -> Result<ModelIds> {
    let r = |n: String| resolve(store, &n);
    let attn = |p: &str| -> Result<AttnIds> {
        Ok(AttnIds {
            wq: r(format!("{p}.attn.wq"))?,
            wk: r(format!("{p}.attn.wk"))?,
            wv: r(format!("{p}.attn.wv"))?,
            wo: r(format!("{p}.attn.wo"))?,
        })
    };
    let encoder = |m: &str| -> Result<EncoderIds> {
        let mut layers = Vec::new();
        for l in 0..cfg.depth {
            let p = format!("{m}.layer{l}");
            layers.push(LayerIds {
                attn: attn(&p)?,
                ln1_g: r(format!("{p}.ln1.g"))?,
                ln1_b: r(format!("{p}.ln1.b"))?,
                w1: r(format!("{p}.mlp.w1"))?,
                b1: r(format!("{p}.mlp.b1"))?,
                w2: r(format!("{p}.mlp.w2"))?,
                b2: r(format!("{p}.mlp.b2"))?,
                ln2_g: r(format!("{p}.ln2.g"))?,
                ln2_b: r(format!("{p}.ln2.b"))?,
            });
        }
        Ok(EncoderIds {
            embed: r(format!("{m}.embed"))?,
            cls: r(format!("{m}.cls"))?,
            pos: r(format!("{m}.pos"))?,
            layers,
        })
    };
    let head = |p: &str| -> Result<HeadIds> {
        Ok(HeadIds {
            w: r(format!("{p}.w"))?,
            b: r(format!("{p}.b"))?,
        })
    };
    Ok(ModelIds {
        audio: encoder("audio")?,
        visual: encoder("visual")?,
        fusion: attn("fusion")?,
        cls1: HeadIds {
            w: r("classifier.w1".into())?,
            b: r("classifier.b1".into())?,
        },
        cls2: HeadIds {
            w: r("classifier.w2".into())?,
            b: r("classifier.b2".into())?,
        },
        sphere: if cfg.spherical_head {
            Some([head("sphere.audio")?, head("sphere.visual")?])
        } else {
            None
        },
        wearer: if cfg.wearer_head { Some(head("wearer")?) } else { None },
    })
}

/// Which classifier input a chunk is routed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    AudioVisual,
    AudioOnly,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ModelIds,
}

impl Model {
    /// Seeded initialisation.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, shape) in layout(&config) {
            let v = init_value(&mut rng, &name, shape);
            params.add(&name, v);
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    /// Wraps an existing store, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let id = resolve(&params, name)?;
            if params.get(id).dim() != *shape {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    params.get(id).dim()
                )));
            }
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    /// Parameters belonging to the visual encoder.
    pub fn visual_param_ids(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| self.params.name(id).starts_with("visual."))
            .collect()
    }

    /// Posterior for one chunk. `patches` must be present for the
    /// audio-visual route.
    pub fn posterior(&self, gcc: &Mat, patches: Option<&Mat>, route: Route) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let za = encode_audio(&mut g, self, gcc)?;
        let p = match route {
            Route::AudioOnly => audio_only_predict(&mut g, self, za),
            Route::AudioVisual => {
                let patches = patches.ok_or_else(|| Error::Shape("audio-visual route needs patches".into()))?;
                let zv = encode_visual(&mut g, self, patches)?;
                fuse_predict(&mut g, self, za, zv).posterior
            }
        };
        Ok(g.value(p).iter().copied().collect())
    }

    /// Wearer speech probability from the audio CLS.
    pub fn wearer_probability(&self, gcc: &Mat) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let za = encode_audio(&mut g, self, gcc)?;
        let s = wearer_activity_predict(&mut g, self, za)?;
        Ok(g.scalar(s))
    }

    /// Reduced 90 x 180 spherical score map.
    pub fn spherical_map(&self, gcc: &Mat, patches: &Mat) -> Result<Mat> {
        let mut g = Graph::new(&self.params);
        let za = encode_audio(&mut g, self, gcc)?;
        let zv = encode_visual(&mut g, self, patches)?;
        let f = fuse(&mut g, self, za, zv);
        let m = spherical_head(&mut g, self, f.audio_cls, f.visual_cls)?;
        Ok(g.value(m.reduced).clone())
    }
}

fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = g.param(w);
    let bv = g.param(b);
    let y = g.matmul(x, wv);
    g.add_row(y, bv)
}

fn embed(g: &mut Graph, ids: &EncoderIds, x: &Mat, len: usize, dim: usize, what: &str) -> Result<Var> {
    if x.dim() != (len, dim) {
        return Err(Error::Shape(format!(
            "{what} input is {:?}, model expects ({len}, {dim})",
            x.dim()
        )));
    }
    let xv = g.input(x.clone());
    let e = g.param(ids.embed);
    let tokens = g.matmul(xv, e);
    let cls = g.param(ids.cls);
    let seq = g.concat_rows(&[cls, tokens]);
    let pos = g.param(ids.pos);
    Ok(g.add(seq, pos))
}

/// `[CLS; a_1 A; ...; a_L A] + pos`.
pub fn embed_audio(g: &mut Graph, m: &Model, gcc: &Mat) -> Result<Var> {
    let c = &m.config;
    embed(g, &m.ids.audio, gcc, c.audio_len, c.audio_dim, "GCC-PHAT")
}

/// `[CLS; v_1 V; ...; v_L V] + pos` over unit-scaled patches.
pub fn embed_visual(g: &mut Graph, m: &Model, patches: &Mat) -> Result<Var> {
    let c = &m.config;
    embed(g, &m.ids.visual, patches, c.visual_len, c.visual_dim, "patch")
}

struct Attention {
    out: Var,
    weights: Vec<Var>,
}

fn attention(g: &mut Graph, ids: &AttnIds, heads: usize, q_src: Var, kv_src: Var) -> Attention {
    let h = g.shape(q_src).1;
    let dk = h / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let wq = g.param(ids.wq);
    let wk = g.param(ids.wk);
    let wv = g.param(ids.wv);
    let q = g.matmul(q_src, wq);
    let k = g.matmul(kv_src, wk);
    let v = g.matmul(kv_src, wv);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for i in 0..heads {
        let qi = g.slice_cols(q, i * dk, dk);
        let ki = g.slice_cols(k, i * dk, dk);
        let vi = g.slice_cols(v, i * dk, dk);
        let s = g.matmul_bt(qi, ki);
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s);
        weights.push(a);
        outs.push(g.matmul(a, vi));
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    let wo = g.param(ids.wo);
    Attention {
        out: g.matmul(cat, wo),
        weights,
    }
}

/// Multi-head scaled dot-product self-attention.
pub fn msa(g: &mut Graph, ids: &AttnIds, heads: usize, z: Var) -> Var {
    attention(g, ids, heads, z, z).out
}

/// Per-head attention matrices of [`msa`].
pub fn msa_weights(g: &mut Graph, ids: &AttnIds, heads: usize, z: Var) -> Vec<Var> {
    attention(g, ids, heads, z, z).weights
}

/// One encoder layer. Post-LN: `z^ = LN(MSA(z)) + z`, `z' = LN(MLP(z^)) + z^`.
/// Pre-LN: `z^ = MSA(LN(z)) + z`, `z' = MLP(LN(z^)) + z^`.
pub fn encoder_block(g: &mut Graph, ids: &LayerIds, heads: usize, pre_ln: bool, z: Var) -> Var {
    let g1 = g.param(ids.ln1_g);
    let b1 = g.param(ids.ln1_b);
    let g2 = g.param(ids.ln2_g);
    let b2 = g.param(ids.ln2_b);
    let mlp = |g: &mut Graph, x: Var| {
        let hdn = linear(g, x, ids.w1, ids.b1);
        let act = g.gelu(hdn);
        linear(g, act, ids.w2, ids.b2)
    };
    if pre_ln {
        let n = g.layer_norm(z, g1, b1);
        let a = msa(g, &ids.attn, heads, n);
        let zh = g.add(a, z);
        let n2 = g.layer_norm(zh, g2, b2);
        let f = mlp(g, n2);
        g.add(f, zh)
    } else {
        let a = msa(g, &ids.attn, heads, z);
        let n = g.layer_norm(a, g1, b1);
        let zh = g.add(n, z);
        let f = mlp(g, zh);
        let n2 = g.layer_norm(f, g2, b2);
        g.add(n2, zh)
    }
}

fn encode(g: &mut Graph, m: &Model, enc: &EncoderIds, mut z: Var) -> Var {
    for layer in &enc.layers {
        z = encoder_block(g, layer, m.config.heads, m.config.pre_ln, z);
    }
    z
}

/// Embedding followed by all audio encoder layers.
pub fn encode_audio(g: &mut Graph, m: &Model, gcc: &Mat) -> Result<Var> {
    let z = embed_audio(g, m, gcc)?;
    Ok(encode(g, m, &m.ids.audio, z))
}

pub fn encode_visual(g: &mut Graph, m: &Model, patches: &Mat) -> Result<Var> {
    let z = embed_visual(g, m, patches)?;
    Ok(encode(g, m, &m.ids.visual, z))
}

/// CLS outputs of the cross-attention over the joint token sequence.
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    pub audio_cls: Var,
    pub visual_cls: Var,
}

/// One MSA over `z_a ⊕ z_v`. Only the two CLS rows are read downstream and
/// attention rows are independent, so only those two queries are formed.
pub fn fuse(g: &mut Graph, m: &Model, za: Var, zv: Var) -> Fused {
    let la = g.shape(za).0;
    let joint = g.concat_rows(&[za, zv]);
    let ca = g.slice_rows(joint, 0, 1);
    let cv = g.slice_rows(joint, la, 1);
    let q = g.concat_rows(&[ca, cv]);
    let out = attention(g, &m.ids.fusion, m.config.heads, q, joint).out;
    Fused {
        audio_cls: g.slice_rows(out, 0, 1),
        visual_cls: g.slice_rows(out, 1, 1),
    }
}

fn classify(g: &mut Graph, m: &Model, x: Var) -> Var {
    let hdn = linear(g, x, m.ids.cls1.w, m.ids.cls1.b);
    let act = g.gelu(hdn);
    linear(g, act, m.ids.cls2.w, m.ids.cls2.b)
}

pub struct Prediction {
    pub logits: Var,
    pub posterior: Var,
}

/// `MLP(MSA(z_a ⊕ z_v))` over the concatenated fused CLS pair, softmaxed.
pub fn fuse_predict(g: &mut Graph, m: &Model, za: Var, zv: Var) -> Prediction {
    let f = fuse(g, m, za, zv);
    let x = g.concat_cols(&[f.audio_cls, f.visual_cls]);
    let logits = classify(g, m, x);
    let posterior = g.softmax_rows(logits);
    Prediction { logits, posterior }
}

/// Shared classifier on the audio CLS with the visual half zero-filled.
pub fn audio_only_predict(g: &mut Graph, m: &Model, za: Var) -> Var {
    let cls = g.slice_rows(za, 0, 1);
    let zero = g.input(Mat::zeros((1, m.config.hidden)));
    let x = g.concat_cols(&[cls, zero]);
    let logits = classify(g, m, x);
    g.softmax_rows(logits)
}

/// `(n_out, n_in)` linear-interpolation matrix with half-pixel centres and
/// edge clamping.
pub fn bilinear_matrix(n_in: usize, n_out: usize) -> Mat {
    let mut r = Mat::zeros((n_out, n_in));
    let ratio = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let w = src - i0 as f64;
        r[[o, i0]] += 1.0 - w;
        r[[o, i1]] += w;
    }
    r
}

pub struct SphereOutput {
    /// Upsampled channels, audio then visual, each 90 x 180.
    pub channels: [Var; 2],
    /// Channel mean.
    pub reduced: Var,
}

/// Projects each fused CLS to 45 x 90 logits, upsamples to 90 x 180 and
/// averages the two channels.
pub fn spherical_head(g: &mut Graph, m: &Model, cls_a: Var, cls_v: Var) -> Result<SphereOutput> {
    let heads = m
        .ids
        .sphere
        .as_ref()
        .ok_or_else(|| Error::Config("model was built without a spherical head".into()))?
        .clone();
    let (cr, cc) = SPHERE_COARSE;
    let (fr, fc) = SPHERE_FINE;
    let ry = g.input(bilinear_matrix(cr, fr));
    let rx = g.input(bilinear_matrix(cc, fc));
    let mut chans = Vec::with_capacity(2);
    for (cls, head) in [cls_a, cls_v].into_iter().zip(heads.iter()) {
        let flat = linear(g, cls, head.w, head.b);
        let grid = g.reshape(flat, cr, cc);
        let up = g.matmul(ry, grid);
        chans.push(g.matmul_bt(up, rx));
    }
    let sum = g.add(chans[0], chans[1]);
    let reduced = g.scale(sum, 0.5);
    Ok(SphereOutput {
        channels: [chans[0], chans[1]],
        reduced,
    })
}

/// Raw wearer-activity logit from the audio CLS.
pub fn wearer_activity_logit(g: &mut Graph, m: &Model, za: Var) -> Result<Var> {
    let head = m
        .ids
        .wearer
        .clone()
        .ok_or_else(|| Error::Config("model was built without a wearer head".into()))?;
    let cls = g.slice_rows(za, 0, 1);
    Ok(linear(g, cls, head.w, head.b))
}

pub fn wearer_activity_predict(g: &mut Graph, m: &Model, za: Var) -> Result<Var> {
    let z = wearer_activity_logit(g, m, za)?;
    Ok(g.sigmoid(z))
}

/// Unit-scaled patch matrix from stored bytes.
pub fn patches_to_unit(p: &Array2<u8>) -> Mat {
    p.mapv(|v| v as f64 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{check_grads, check_grads_sampled};
    use egodoa_core::features::gaussian_target;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            depth: 1,
            heads: 2,
            hidden: 16,
            ff: 8,
            audio_len: 2,
            audio_dim: 5,
            visual_len: 2,
            visual_dim: 6,
            bins: 360,
            pre_ln: false,
            spherical_head: true,
            wearer_head: true,
            seed: 11,
        }
    }

    fn rand_mat(seed: u64, r: usize, c: usize) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal(&mut rng, r, c, 1.0)
    }

    /// Naive per-head loop attention.
    fn naive_msa(z: &Mat, p: &ParamStore, ids: &AttnIds, heads: usize) -> Mat {
        let (n, h) = z.dim();
        let dk = h / heads;
        let q = z.dot(p.get(ids.wq));
        let k = z.dot(p.get(ids.wk));
        let v = z.dot(p.get(ids.wv));
        let mut cat = Mat::zeros((n, h));
        for hd in 0..heads {
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for (j, s) in scores.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in 0..dk {
                        dot += q[[i, hd * dk + c]] * k[[j, hd * dk + c]];
                    }
                    *s = dot / (dk as f64).sqrt();
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let tot: f64 = e.iter().sum();
                for c in 0..dk {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += e[j] / tot * v[[j, hd * dk + c]];
                    }
                    cat[[i, hd * dk + c]] = acc;
                }
            }
        }
        cat.dot(p.get(ids.wo))
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 4;
        c.depth = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn embeddings_prepend_cls() {
        let m = Model::new(ModelConfig {
            hidden: 8,
            heads: 2,
            ff: 8,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut g = Graph::new(m.params());
        let a = embed_audio(&mut g, &m, &Mat::zeros((22, 96))).unwrap();
        assert_eq!(g.shape(a), (23, 8));
        let v = embed_visual(&mut g, &m, &Mat::zeros((196, 768))).unwrap();
        assert_eq!(g.shape(v), (197, 8));
        assert!(matches!(
            embed_audio(&mut g, &m, &Mat::zeros((21, 96))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_input_and_params_give_position_encoding() {
        let mut m = Model::new(tiny_config()).unwrap();
        for name in ["audio.embed", "audio.cls", "visual.embed", "visual.cls"] {
            let id = m.params().id(name).unwrap();
            m.params_mut().get_mut(id).fill(0.0);
        }
        let mut g = Graph::new(m.params());
        let a = embed_audio(&mut g, &m, &rand_mat(1, 2, 5)).unwrap();
        let pa = m.params().get(m.ids().audio.pos);
        assert_eq!(g.value(a), pa);
        let v = embed_visual(&mut g, &m, &Mat::zeros((2, 6))).unwrap();
        assert_eq!(g.value(v), m.params().get(m.ids().visual.pos));
    }

    #[test]
    fn msa_matches_naive_loop() {
        let m = Model::new(ModelConfig {
            hidden: 12,
            heads: 3,
            ..tiny_config()
        })
        .unwrap();
        let z = rand_mat(2, 5, 12);
        let ids = &m.ids().audio.layers[0].attn;
        let mut g = Graph::new(m.params());
        let zv = g.input(z.clone());
        let out = msa(&mut g, ids, 3, zv);
        let oracle = naive_msa(&z, m.params(), ids, 3);
        let diff = (g.value(out) - &oracle).mapv(f64::abs).fold(0.0f64, |a, b| a.max(*b));
        assert!(diff <= 1e-10, "max diff {diff}");
    }

    #[test]
    fn msa_single_token_and_identical_tokens() {
        let m = Model::new(tiny_config()).unwrap();
        let ids = &m.ids().audio.layers[0].attn;
        let p = m.params();
        let t = rand_mat(3, 1, 16);
        let mut g = Graph::new(p);
        let tv = g.input(t.clone());
        let w = msa_weights(&mut g, ids, 2, tv);
        for a in &w {
            assert_eq!(g.value(*a)[[0, 0]], 1.0);
        }
        let out = msa(&mut g, ids, 2, tv);
        let direct = t.dot(p.get(ids.wv)).dot(p.get(ids.wo));
        assert!((g.value(out) - &direct).iter().all(|d| d.abs() < 1e-12));

        let two = ndarray::concatenate(ndarray::Axis(0), &[t.view(), t.view()]).unwrap();
        let tv2 = g.input(two);
        let out2 = msa(&mut g, ids, 2, tv2);
        let o = g.value(out2);
        assert_eq!(o.row(0), o.row(1));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let m = Model::new(ModelConfig {
            hidden: 16,
            heads: 4,
            ..tiny_config()
        })
        .unwrap();
        for seed in 0..20 {
            let z = rand_mat(100 + seed, 7, 16) * 5.0;
            let mut g = Graph::new(m.params());
            let zv = g.input(z);
            for a in msa_weights(&mut g, &m.ids().audio.layers[0].attn, 4, zv) {
                for r in g.value(a).rows() {
                    assert!((r.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        for pre_ln in [false, true] {
            let m = Model::new(ModelConfig {
                pre_ln,
                ..tiny_config()
            })
            .unwrap();
            let z = rand_mat(4, 5, 16);
            let perm = [0usize, 3, 1, 4, 2];
            let zp = Mat::from_shape_fn((5, 16), |(i, j)| z[[perm[i], j]]);
            let layer = &m.ids().audio.layers[0];
            let mut g = Graph::new(m.params());
            let a = g.input(z);
            let b = g.input(zp);
            let ya = encoder_block(&mut g, layer, 2, pre_ln, a);
            let yb = encoder_block(&mut g, layer, 2, pre_ln, b);
            let (ya, yb) = (g.value(ya), g.value(yb));
            for i in 0..5 {
                for j in 0..16 {
                    assert!((ya[[perm[i], j]] - yb[[i, j]]).abs() < 1e-12);
                }
            }
        }
    }

    fn grad_config(pre_ln: bool) -> ModelConfig {
        ModelConfig {
            pre_ln,
            spherical_head: false,
            wearer_head: false,
            bins: 12,
            ..tiny_config()
        }
    }

    #[test]
    fn embedding_gradients() {
        let m = Model::new(grad_config(false)).unwrap();
        let (x, v) = (rand_mat(5, 2, 5), rand_mat(6, 2, 6));
        let t = rand_mat(7, 3, 16);
        let mut store = m.params().clone();
        check_grads(&mut store, &|g| {
            let mm = &m;
            let a = embed_audio(g, mm, &x).unwrap();
            let b = embed_visual(g, mm, &v).unwrap();
            let s = g.add(a, b);
            g.squared_error(s, &t)
        });
    }

    #[test]
    fn encoder_block_gradients() {
        for pre_ln in [false, true] {
            let m = Model::new(grad_config(pre_ln)).unwrap();
            let z = rand_mat(8, 3, 16);
            let t = rand_mat(9, 3, 16);
            let layer = m.ids().audio.layers[0].clone();
            let mut store = m.params().clone();
            check_grads(&mut store, &|g| {
                let zv = g.input(z.clone());
                let y = encoder_block(g, &layer, 2, pre_ln, zv);
                g.squared_error(y, &t)
            });
        }
    }

    fn target(bins: usize, theta: usize) -> Mat {
        let p = gaussian_target(theta, 4.0).unwrap().p;
        let mut t = Mat::zeros((1, bins));
        for (i, v) in p.iter().take(bins).enumerate() {
            t[[0, i]] = *v;
        }
        t
    }

    #[test]
    fn fused_emd_gradients() {
        let m = Model::new(grad_config(false)).unwrap();
        let (x, v) = (rand_mat(10, 2, 5), rand_mat(11, 2, 6));
        let t = target(12, 3);
        let mut store = m.params().clone();
        check_grads(&mut store, &|g| {
            let mm = &m;
            let za = encode_audio(g, mm, &x).unwrap();
            let zv = encode_visual(g, mm, &v).unwrap();
            let p = fuse_predict(g, mm, za, zv);
            g.squared_error(p.posterior, &t)
        });
    }

    #[test]
    fn audio_only_emd_gradients() {
        let m = Model::new(grad_config(true)).unwrap();
        let x = rand_mat(12, 2, 5);
        let t = target(12, 7);
        let mut store = m.params().clone();
        check_grads(&mut store, &|g| {
            let mm = &m;
            let za = encode_audio(g, mm, &x).unwrap();
            let p = audio_only_predict(g, mm, za);
            g.squared_error(p, &t)
        });
    }

    #[test]
    fn wearer_head_gradients_and_range() {
        let cfg = ModelConfig {
            wearer_head: true,
            ..grad_config(false)
        };
        let m = Model::new(cfg).unwrap();
        let x = rand_mat(13, 2, 5);
        let y = Mat::from_elem((1, 1), 1.0);
        let mut store = m.params().clone();
        check_grads(&mut store, &|g| {
            let mm = &m;
            let za = encode_audio(g, mm, &x).unwrap();
            let z = wearer_activity_logit(g, mm, za).unwrap();
            g.bce_with_logits(z, &y)
        });
        for s in 0..20 {
            let p = m.wearer_probability(&(rand_mat(s, 2, 5) * 100.0)).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
        let mut zeroed = m.clone();
        let w = zeroed.ids().wearer.clone().unwrap();
        zeroed.params_mut().get_mut(w.w).fill(0.0);
        zeroed.params_mut().get_mut(w.b).fill(0.0);
        assert_eq!(zeroed.wearer_probability(&x).unwrap(), 0.5);
    }

    #[test]
    fn posteriors_on_simplex_and_deterministic() {
        let m = Model::new(tiny_config()).unwrap();
        for s in 0..10 {
            let x = rand_mat(s, 2, 5) * 50.0;
            let v = rand_mat(s + 50, 2, 6) * 50.0;
            for route in [Route::AudioVisual, Route::AudioOnly] {
                let p = m.posterior(&x, Some(&v), route).unwrap();
                assert_eq!(p.len(), 360);
                assert!(p.iter().all(|v| *v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert_eq!(p, m.posterior(&x, Some(&v), route).unwrap());
            }
        }
    }

    #[test]
    fn audio_only_ignores_visual_input() {
        let m = Model::new(tiny_config()).unwrap();
        let x = rand_mat(20, 2, 5);
        let a = m.posterior(&x, Some(&rand_mat(21, 2, 6)), Route::AudioOnly).unwrap();
        let b = m.posterior(&x, Some(&rand_mat(22, 2, 6)), Route::AudioOnly).unwrap();
        let c = m.posterior(&x, None, Route::AudioOnly).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(m.posterior(&x, None, Route::AudioVisual).is_err());
    }

    /// Direct bilinear evaluation at one output location.
    fn bilinear_at(x: &Mat, r: usize, c: usize, out: (usize, usize)) -> f64 {
        let (h, w) = x.dim();
        let src = |o: usize, n_in: usize, n_out: usize| {
            let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, s - lo as f64)
        };
        let (y0, y1, fy) = src(r, h, out.0);
        let (x0, x1, fx) = src(c, w, out.1);
        let top = x[[y0, x0]] * (1.0 - fx) + x[[y0, x1]] * fx;
        let bot = x[[y1, x0]] * (1.0 - fx) + x[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    }

    #[test]
    fn upsampling_matches_direct_bilinear() {
        let ry = bilinear_matrix(45, 90);
        let rx = bilinear_matrix(90, 180);
        for s in 0..5 {
            let x = rand_mat(30 + s, 45, 90);
            let up = ry.dot(&x).dot(&rx.t());
            for r in 0..90 {
                for c in 0..180 {
                    assert!((up[[r, c]] - bilinear_at(&x, r, c, (90, 180))).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn spherical_head_shapes_and_constants() {
        let mut m = Model::new(tiny_config()).unwrap();
        let heads = m.ids().sphere.clone().unwrap();
        for h in &heads {
            m.params_mut().get_mut(h.w).fill(0.0);
            m.params_mut().get_mut(h.b).fill(0.75);
        }
        let mut g = Graph::new(m.params());
        let za = encode_audio(&mut g, &m, &rand_mat(40, 2, 5)).unwrap();
        let zv = encode_visual(&mut g, &m, &rand_mat(41, 2, 6)).unwrap();
        let f = fuse(&mut g, &m, za, zv);
        let out = spherical_head(&mut g, &m, f.audio_cls, f.visual_cls).unwrap();
        for c in out.channels {
            assert_eq!(g.shape(c), SPHERE_FINE);
        }
        let red = g.value(out.reduced);
        assert_eq!(red.dim(), SPHERE_FINE);
        assert!(red.iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn spherical_head_gradients() {
        let cfg = ModelConfig {
            hidden: 4,
            heads: 2,
            ..grad_config(false)
        };
        let cfg = ModelConfig {
            spherical_head: true,
            ..cfg
        };
        let m = Model::new(cfg).unwrap();
        let (x, v) = (rand_mat(42, 2, 5), rand_mat(43, 2, 6));
        let t = rand_mat(44, 90, 180).mapv(|v| if v > 1.0 { 1.0 } else { 0.0 });
        let mut store = m.params().clone();
        check_grads_sampled(&mut store, 40, &|g| {
            let mm = &m;
            let za = encode_audio(g, mm, &x).unwrap();
            let zv = encode_visual(g, mm, &v).unwrap();
            let f = fuse(g, mm, za, zv);
            let s = spherical_head(g, mm, f.audio_cls, f.visual_cls).unwrap();
            g.bce_with_logits(s.reduced, &t)
        });
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let m = Model::new(tiny_config()).unwrap();
        let mut other = ModelConfig {
            hidden: 8,
            ..tiny_config()
        };
        assert!(Model::from_params(other.clone(), m.params().clone()).is_err());
        other.hidden = 16;
        other.wearer_head = false;
        assert!(Model::from_params(other, m.params().clone()).is_err());
        assert!(Model::from_params(tiny_config(), m.params().clone()).is_ok());
    }
}

//! Latent reconstruction transformer: Plücker-conditioned patch tokens,
//! per-view self-attention, human geometric tokens sampled from the input
//! latent, projection-windowed cross-attention, and a pixel-aligned
//! Gaussian head.

mod checkpoint;
pub mod layers;
pub mod params;
pub mod window;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use nalgebra::Vector3;
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::BodyMesh;
use crate::error::{Error, Result};
use crate::geometry::{bilinear_taps, pixel_to_cell_coord, plucker_raymap, RayMap, MIN_DEPTH};
use crate::gsplat::{GaussianGrads, GaussianSet};
use crate::latent::ViewBundle;
use layers::*;
use params::{Grads, Init, ParamStore};

/// Raw attribute width per Gaussian.
pub const RAW_WIDTH: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub patch: usize,
    pub n_intra: usize,
    pub n_inter: usize,
    pub n_tokenizer: usize,
    pub ffn_mult: usize,
    pub k_win: usize,
    pub human_prior: bool,
    pub channels: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub n_views: usize,
    pub near: f64,
    pub far: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub init_depth: f64,
    pub init_scale: f64,
    pub init_opacity: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            heads: 8,
            patch: 2,
            n_intra: 4,
            n_inter: 2,
            n_tokenizer: 2,
            ffn_mult: 4,
            k_win: 2,
            human_prior: true,
            channels: 4,
            latent_h: 64,
            latent_w: 64,
            n_views: 4,
            near: 0.5,
            far: 3.5,
            s_min: 1e-4,
            s_max: 0.5,
            init_depth: 2.5,
            init_scale: 0.02,
            init_opacity: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("model config: {m}")));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.patch == 0 || self.latent_h % self.patch != 0 || self.latent_w % self.patch != 0 {
            return bad("latent size must be divisible by the patch size");
        }
        if self.channels == 0 || self.n_views == 0 || self.latent_h == 0 || self.latent_w == 0 {
            return bad("channels, views and latent size must be positive");
        }
        if self.k_win == 0 {
            return bad("k_win must be at least 1");
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return bad("need 0 < near < far");
        }
        if !(self.s_min > 0.0 && self.s_max > self.s_min) {
            return bad("need 0 < s_min < s_max");
        }
        if !(self.init_depth > self.near && self.init_depth < self.far) {
            return bad("init_depth must lie in (near, far)");
        }
        if !(self.init_scale > self.s_min && self.init_scale < self.s_max) {
            return bad("init_scale must lie in (s_min, s_max)");
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad("init_opacity must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn tokens_h(&self) -> usize {
        self.latent_h / self.patch
    }

    pub fn tokens_w(&self) -> usize {
        self.latent_w / self.patch
    }

    /// Gaussians per view.
    pub fn cells(&self) -> usize {
        self.latent_h * self.latent_w
    }

    pub fn num_gaussians(&self) -> usize {
        self.n_views * self.cells()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: LinearIds,
    intra: Vec<SelfBlockIds>,
    tok_embed: LinearIds,
    tok_blocks: Vec<SelfBlockIds>,
    inter: Vec<CrossBlockIds>,
    head_ln: LnIds,
    head: LinearIds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> LinearIds {
        let init = if zero { Init::Zeros } else { Init::TruncNormal(0.02) };
        LinearIds {
            w: self.store.add(&format!("{name}.w"), &[fan_in, fan_out], init, false, self.rng),
            b: self.store.add(&format!("{name}.b"), &[fan_out], Init::Zeros, false, self.rng),
        }
    }

    fn ln(&mut self, name: &str, d: usize) -> LnIds {
        LnIds {
            g: self.store.add(&format!("{name}.g"), &[d], Init::Ones, true, self.rng),
            b: self.store.add(&format!("{name}.b"), &[d], Init::Zeros, true, self.rng),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, mult: usize) -> FfnIds {
        FfnIds {
            ln: self.ln(&format!("{name}.ln"), d),
            fc1: self.linear(&format!("{name}.fc1"), d, d * mult, false),
            fc2: self.linear(&format!("{name}.fc2"), d * mult, d, true),
        }
    }

    fn self_block(&mut self, name: &str, d: usize, mult: usize) -> SelfBlockIds {
        SelfBlockIds {
            ln: self.ln(&format!("{name}.attn.ln"), d),
            q: self.linear(&format!("{name}.attn.q"), d, d, false),
            k: self.linear(&format!("{name}.attn.k"), d, d, false),
            v: self.linear(&format!("{name}.attn.v"), d, d, false),
            o: self.linear(&format!("{name}.attn.o"), d, d, true),
            ffn: self.ffn(&format!("{name}.ffn"), d, mult),
        }
    }

    fn cross_block(&mut self, name: &str, d: usize, mult: usize) -> CrossBlockIds {
        CrossBlockIds {
            ln_q: self.ln(&format!("{name}.attn.ln_q"), d),
            ln_kv: self.ln(&format!("{name}.attn.ln_kv"), d),
            q: self.linear(&format!("{name}.attn.q"), d, d, false),
            k: self.linear(&format!("{name}.attn.k"), d, d, false),
            v: self.linear(&format!("{name}.attn.v"), d, d, false),
            o: self.linear(&format!("{name}.attn.o"), d, d, true),
            ffn: self.ffn(&format!("{name}.ffn"), d, mult),
        }
    }
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    rays: Vec<RayMap>,
    views: Vec<ViewCache>,
    tokenizer: Option<TokenizerCache>,
    kv: Vec<CrossKv>,
    lists: Vec<Vec<Vec<u32>>>,
}

struct ViewCache {
    patch_in: Array2<f64>,
    intra: Vec<SelfBlockCache>,
    inter: Vec<CrossBlockCache>,
    head_ln: LnCache,
    head_in: Array2<f64>,
}

struct TokenizerCache {
    input_view: usize,
    taps: Vec<[(usize, f64); 4]>,
    tok_in: Array2<f64>,
    blocks: Vec<SelfBlockCache>,
}

pub struct ForwardOutput {
    pub gaussians: GaussianSet,
    /// `N_p × 14` raw head outputs, view-major then row-major cells.
    pub raw: Array2<f64>,
    /// Query-key scores evaluated per head, per inter block, summed over views.
    pub score_evals: Vec<u64>,
    /// Unnormalized quaternion norms, for the decode backward pass.
    quat_norms: Vec<f64>,
    pub cache: ForwardCache,
}

/// Gradients with respect to model inputs.
pub struct InputGrads {
    /// Per view, same layout as the latent features.
    pub latents: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let c = &config;
        let (d, m, p) = (c.d, c.ffn_mult, c.patch);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let embed = b.linear("embed", (c.channels + 6) * p * p, d, false);
        let intra = (0..c.n_intra).map(|i| b.self_block(&format!("intra.{i}"), d, m)).collect();
        let tok_embed = b.linear("tokenizer.embed", 3 + c.channels, d, false);
        let tok_blocks = (0..c.n_tokenizer).map(|i| b.self_block(&format!("tokenizer.{i}"), d, m)).collect();
        let inter = (0..c.n_inter).map(|i| b.cross_block(&format!("inter.{i}"), d, m)).collect();
        let head_ln = b.ln("head.ln", d);
        let head = b.linear("head", d, p * p * RAW_WIDTH, false);
        let layout = Layout {
            embed,
            intra,
            tok_embed,
            tok_blocks,
            inter,
            head_ln,
            head,
        };
        let mut model = Model {
            config,
            params: store,
            layout,
        };
        model.init_head_bias();
        Ok(model)
    }

    fn init_head_bias(&mut self) {
        let c = &self.config;
        let mut slot = [0.0; RAW_WIDTH];
        slot[0] = logit((c.init_depth - c.near) / (c.far - c.near));
        for k in 7..10 {
            slot[k] = logit((c.init_scale - c.s_min) / (c.s_max - c.s_min));
        }
        slot[13] = logit(c.init_opacity);
        let bias = &mut self.params.tensors[self.layout.head.b].data;
        for (i, v) in bias.iter_mut().enumerate() {
            *v = slot[i % RAW_WIDTH];
        }
    }

    /// Replace every parameter with a seeded normal sample (for gradient
    /// checks, where zero-initialized paths would hide errors).
    pub fn randomize(&mut self, std: f64, seed: u64) {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).unwrap();
        for t in &mut self.params.tensors {
            for v in &mut t.data {
                *v = dist.sample(&mut rng);
            }
        }
    }

    fn check_bundle(&self, bundle: &ViewBundle) -> Result<()> {
        let c = &self.config;
        let (h, w, ch) = bundle.dims();
        if bundle.views.len() != c.n_views {
            return Err(Error::config(format!(
                "bundle has {} views, model expects {}",
                bundle.views.len(),
                c.n_views
            )));
        }
        if (h, w, ch) != (c.latent_h, c.latent_w, c.channels) {
            return Err(Error::config(format!(
                "bundle latents are {h}×{w}×{ch}, model expects {}×{}×{}",
                c.latent_h, c.latent_w, c.channels
            )));
        }
        Ok(())
    }

    fn patch_input(&self, feats: &[f32], ray: &RayMap) -> Array2<f64> {
        let c = &self.config;
        let (p, ch, w) = (c.patch, c.channels, c.latent_w);
        let (th, tw) = (c.tokens_h(), c.tokens_w());
        let width = (ch + 6) * p * p;
        let mut x = Array2::zeros((th * tw, width));
        for tr in 0..th {
            for tc in 0..tw {
                let mut row = x.row_mut(tr * tw + tc);
                for a in 0..p {
                    for b in 0..p {
                        let (r, col) = (tr * p + a, tc * p + b);
                        let base = (a * p + b) * (ch + 6);
                        let f = &feats[(r * w + col) * ch..(r * w + col + 1) * ch];
                        for k in 0..ch {
                            row[base + k] = f[k] as f64;
                        }
                        let pl = ray.at(r, col);
                        for k in 0..6 {
                            row[base + ch + k] = pl[k];
                        }
                    }
                }
            }
        }
        x
    }

    fn tokenize(&self, bundle: &ViewBundle, verts: &[[f64; 3]]) -> (Array2<f64>, TokenizerCache) {
        let c = &self.config;
        let (h, w, ch) = (c.latent_h, c.latent_w, c.channels);
        let input_view = bundle.input_index();
        let inp = &bundle.views[input_view];
        let cam = &inp.camera;
        let mut tok_in = Array2::zeros((verts.len(), 3 + ch));
        let mut taps = Vec::with_capacity(verts.len());
        for (i, v) in verts.iter().enumerate() {
            let pc = cam.to_camera(&Vector3::from(*v));
            let (x, y) = if pc.z > MIN_DEPTH {
                let hp = cam.k * pc;
                (
                    pixel_to_cell_coord(hp.x / hp.z, cam.width, w),
                    pixel_to_cell_coord(hp.y / hp.z, cam.height, h),
                )
            } else {
                (0.0, 0.0)
            };
            let t = bilinear_taps(h, w, x, y);
            let mut row = tok_in.row_mut(i);
            row[0] = v[0];
            row[1] = v[1];
            row[2] = v[2];
            for (cell, wt) in t {
                for k in 0..ch {
                    row[3 + k] += wt * inp.features.data[cell * ch + k] as f64;
                }
            }
            taps.push(t);
        }
        let p = &self.params;
        let mut hbar = linear_fwd(p, self.layout.tok_embed, &tok_in);
        let mut blocks = Vec::with_capacity(self.layout.tok_blocks.len());
        for ids in &self.layout.tok_blocks {
            let (y, cache) = self_block_fwd(p, ids, &hbar, c.heads);
            hbar = y;
            blocks.push(cache);
        }
        (
            hbar,
            TokenizerCache {
                input_view,
                taps,
                tok_in,
                blocks,
            },
        )
    }

    /// Full forward pass. `mesh` is in the same world frame as the bundle's
    /// normalization; `None` (or `human_prior = false`) runs without human
    /// tokens.
    pub fn forward(&self, bundle: &ViewBundle, mesh: Option<&BodyMesh>) -> Result<ForwardOutput> {
        bundle.validate()?;
        self.check_bundle(bundle)?;
        let c = &self.config;
        let p = &self.params;
        let (th, tw) = (c.tokens_h(), c.tokens_w());

        let rays = bundle
            .views
            .iter()
            .map(|v| plucker_raymap(&v.camera, c.latent_h, c.latent_w))
            .collect::<Result<Vec<_>>>()?;

        let mesh = mesh.filter(|_| c.human_prior);
        let (hbar, tokenizer, verts) = match mesh {
            Some(m) => {
                let ctr = Vector3::from(bundle.center);
                let verts: Vec<[f64; 3]> = m
                    .vertices
                    .iter()
                    .map(|v| {
                        let q = (Vector3::from(*v) - ctr) / bundle.radius;
                        [q.x, q.y, q.z]
                    })
                    .collect();
                let (hbar, cache) = self.tokenize(bundle, &verts);
                (hbar, Some(cache), verts)
            }
            None => (Array2::zeros((0, c.d)), None, Vec::new()),
        };
        let lists: Vec<Vec<Vec<u32>>> = bundle
            .views
            .iter()
            .map(|v| {
                if tokenizer.is_some() {
                    let cells = window::vertex_token_cells(&verts, &v.camera, c.latent_h, c.latent_w, c.patch);
                    window::window_key_lists(&cells, th, tw, c.k_win)
                } else {
                    window::empty_key_lists(th * tw)
                }
            })
            .collect();
        let kv: Vec<CrossKv> = self.layout.inter.iter().map(|ids| cross_kv_fwd(p, ids, &hbar)).collect();

        let per_view: Vec<(ViewCache, Array2<f64>, Vec<u64>)> = (0..c.n_views)
            .into_par_iter()
            .map(|vi| {
                let patch_in = self.patch_input(&bundle.views[vi].features.data, &rays[vi]);
                let mut x = linear_fwd(p, self.layout.embed, &patch_in);
                let mut intra = Vec::new();
                for ids in &self.layout.intra {
                    let (y, cache) = self_block_fwd(p, ids, &x, c.heads);
                    x = y;
                    intra.push(cache);
                }
                let mut inter = Vec::new();
                let mut counts = Vec::new();
                for (ids, kvb) in self.layout.inter.iter().zip(&kv) {
                    let (y, cache, n) = cross_block_fwd(p, ids, &x, kvb, c.heads, &lists[vi]);
                    x = y;
                    inter.push(cache);
                    counts.push(n);
                }
                let (head_in, head_ln) = ln_fwd(p, self.layout.head_ln, &x);
                let out = linear_fwd(p, self.layout.head, &head_in);
                (
                    ViewCache {
                        patch_in,
                        intra,
                        inter,
                        head_ln,
                        head_in,
                    },
                    out,
                    counts,
                )
            })
            .collect();

        let mut raw = Array2::zeros((c.num_gaussians(), RAW_WIDTH));
        let mut score_evals = vec![0u64; c.n_inter];
        let mut views = Vec::with_capacity(c.n_views);
        for (vi, (cache, out, counts)) in per_view.into_iter().enumerate() {
            self.scatter_head(&out, &mut raw, vi);
            for (s, n) in score_evals.iter_mut().zip(counts) {
                *s += n;
            }
            views.push(cache);
        }
        let (gaussians, quat_norms) = self.decode(&raw, &rays);
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("transformer forward produced non-finite outputs"));
        }
        Ok(ForwardOutput {
            gaussians,
            raw,
            score_evals,
            quat_norms,
            cache: ForwardCache {
                rays,
                views,
                tokenizer,
                kv,
                lists,
            },
        })
    }

    /// Map head rows (one per token, `p²·14` wide) to per-cell raw rows.
    fn scatter_head(&self, out: &Array2<f64>, raw: &mut Array2<f64>, view: usize) {
        let c = &self.config;
        let (p, w, tw) = (c.patch, c.latent_w, c.tokens_w());
        let base = view * c.cells();
        for (t, row) in out.rows().into_iter().enumerate() {
            let (tr, tc) = (t / tw, t % tw);
            for a in 0..p {
                for b in 0..p {
                    let cell = (tr * p + a) * w + tc * p + b;
                    let off = (a * p + b) * RAW_WIDTH;
                    raw.row_mut(base + cell).assign(&row.slice(s![off..off + RAW_WIDTH]));
                }
            }
        }
    }

    fn gather_head(&self, d_raw: &Array2<f64>, view: usize) -> Array2<f64> {
        let c = &self.config;
        let (p, w, tw) = (c.patch, c.latent_w, c.tokens_w());
        let base = view * c.cells();
        let mut out = Array2::zeros((c.tokens_h() * tw, p * p * RAW_WIDTH));
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            let (tr, tc) = (t / tw, t % tw);
            for a in 0..p {
                for b in 0..p {
                    let cell = (tr * p + a) * w + tc * p + b;
                    let off = (a * p + b) * RAW_WIDTH;
                    row.slice_mut(s![off..off + RAW_WIDTH]).assign(&d_raw.row(base + cell));
                }
            }
        }
        out
    }

    /// Activations from raw rows to Gaussian attributes.
    pub fn decode(&self, raw: &Array2<f64>, rays: &[RayMap]) -> (GaussianSet, Vec<f64>) {
        let c = &self.config;
        let mut set = GaussianSet::default();
        let mut norms = Vec::with_capacity(raw.nrows());
        for (i, r) in raw.rows().into_iter().enumerate() {
            let ray = &rays[i / c.cells()];
            let cell = i % c.cells();
            let (row, col) = (cell / c.latent_w, cell % c.latent_w);
            let dir = ray.direction(row, col);
            let t = c.near + sigmoid(r[0]) * (c.far - c.near);
            let mu = Vector3::from(ray.origin) + dir * t;
            let q = [1.0 + r[3], r[4], r[5], r[6]];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            let sc = |x: f64| c.s_min + sigmoid(x) * (c.s_max - c.s_min);
            set.push(
                [mu.x, mu.y, mu.z],
                q.map(|v| v / n),
                [sc(r[7]), sc(r[8]), sc(r[9])],
                sigmoid(r[13]),
                [sigmoid(r[10]), sigmoid(r[11]), sigmoid(r[12])],
            );
        }
        (set, norms)
    }

    /// Chain Gaussian-attribute gradients back to raw head outputs.
    pub fn decode_backward(&self, out: &ForwardOutput, g: &GaussianGrads) -> Array2<f64> {
        let c = &self.config;
        let raw = &out.raw;
        let mut d = Array2::zeros(raw.dim());
        let dsig = |x: f64| {
            let s = sigmoid(x);
            s * (1.0 - s)
        };
        for i in 0..raw.nrows() {
            let r = raw.row(i);
            let ray = &out.cache.rays[i / c.cells()];
            let cell = i % c.cells();
            let dir = ray.direction(cell / c.latent_w, cell % c.latent_w);
            let dm = Vector3::from(g.means[i]);
            let mut dr = d.row_mut(i);
            dr[0] = dm.dot(&dir) * (c.far - c.near) * dsig(r[0]);
            let qn = out.gaussians.rotations[i];
            let gq = g.rotations[i];
            let radial: f64 = (0..4).map(|k| qn[k] * gq[k]).sum();
            for k in 0..4 {
                dr[3 + k] = (gq[k] - qn[k] * radial) / out.quat_norms[i];
            }
            for k in 0..3 {
                dr[7 + k] = g.scales[i][k] * (c.s_max - c.s_min) * dsig(r[7 + k]);
                dr[10 + k] = g.colors[i][k] * dsig(r[10 + k]);
            }
            dr[13] = g.opacities[i] * dsig(r[13]);
        }
        d
    }

    /// Reverse pass from raw-output gradients to parameter and input
    /// gradients.
    pub fn backward(&self, cache: &ForwardCache, d_raw: &Array2<f64>) -> (Grads, InputGrads) {
        let c = &self.config;
        let p = &self.params;
        let lay = &self.layout;
        let ch = c.channels;

        let per_view: Vec<(Grads, Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<f64>)> = (0..c.n_views)
            .into_par_iter()
            .map(|vi| {
                let vc = &cache.views[vi];
                let mut g = p.zero_grads();
                let d_out = self.gather_head(d_raw, vi);
                let dh = linear_bwd(p, &mut g, lay.head, &vc.head_in, &d_out);
                let mut dx = ln_bwd(p, &mut g, lay.head_ln, &vc.head_ln, &dh);
                let mut dks = vec![Array2::zeros((0, 0)); lay.inter.len()];
                let mut dvs = vec![Array2::zeros((0, 0)); lay.inter.len()];
                for bi in (0..lay.inter.len()).rev() {
                    let (ndx, dk, dv) = cross_block_bwd(
                        p,
                        &mut g,
                        &lay.inter[bi],
                        &vc.inter[bi],
                        &cache.kv[bi],
                        c.heads,
                        &cache.lists[vi],
                        &dx,
                    );
                    dx = ndx;
                    dks[bi] = dk;
                    dvs[bi] = dv;
                }
                for bi in (0..lay.intra.len()).rev() {
                    dx = self_block_bwd(p, &mut g, &lay.intra[bi], &vc.intra[bi], c.heads, &dx);
                }
                let d_in = linear_bwd(p, &mut g, lay.embed, &vc.patch_in, &dx);
                let mut d_lat = vec![0.0; c.cells() * ch];
                let (pp, w, tw) = (c.patch, c.latent_w, c.tokens_w());
                for (t, row) in d_in.rows().into_iter().enumerate() {
                    let (tr, tc) = (t / tw, t % tw);
                    for a in 0..pp {
                        for b in 0..pp {
                            let cell = (tr * pp + a) * w + tc * pp + b;
                            let base = (a * pp + b) * (ch + 6);
                            for k in 0..ch {
                                d_lat[cell * ch + k] += row[base + k];
                            }
                        }
                    }
                }
                (g, dks, dvs, d_lat)
            })
            .collect();

        let mut grads = p.zero_grads();
        let mut latents = Vec::with_capacity(c.n_views);
        let mut dk_sum: Vec<Option<Array2<f64>>> = vec![None; lay.inter.len()];
        let mut dv_sum: Vec<Option<Array2<f64>>> = vec![None; lay.inter.len()];
        for (g, dks, dvs, d_lat) in per_view {
            grads.add_assign(&g);
            for (bi, (dk, dv)) in dks.into_iter().zip(dvs).enumerate() {
                dk_sum[bi] = Some(match dk_sum[bi].take() {
                    Some(acc) => acc + &dk,
                    None => dk,
                });
                dv_sum[bi] = Some(match dv_sum[bi].take() {
                    Some(acc) => acc + &dv,
                    None => dv,
                });
            }
            latents.push(d_lat);
        }

        let mut d_hbar: Option<Array2<f64>> = None;
        for bi in 0..lay.inter.len() {
            let (dk, dv) = (dk_sum[bi].as_ref().unwrap(), dv_sum[bi].as_ref().unwrap());
            let dh = cross_kv_bwd(p, &mut grads, &lay.inter[bi], &cache.kv[bi], dk, dv);
            d_hbar = Some(match d_hbar {
                Some(acc) => acc + &dh,
                None => dh,
            });
        }
        if let (Some(tok), Some(mut dh)) = (&cache.tokenizer, d_hbar) {
            for bi in (0..lay.tok_blocks.len()).rev() {
                dh = self_block_bwd(p, &mut grads, &lay.tok_blocks[bi], &tok.blocks[bi], c.heads, &dh);
            }
            let d_in = linear_bwd(p, &mut grads, lay.tok_embed, &tok.tok_in, &dh);
            let d_lat = &mut latents[tok.input_view];
            for (row, taps) in d_in.rows().into_iter().zip(&tok.taps) {
                for &(cell, wt) in taps {
                    for k in 0..ch {
                        d_lat[cell * ch + k] += wt * row[3 + k];
                    }
                }
            }
        }
        (grads, InputGrads { latents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{bundle_from_images, ViewLayout};
    use crate::imaging::Image;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 8,
            heads: 2,
            patch: 2,
            n_intra: 1,
            n_inter: 1,
            n_tokenizer: 1,
            ffn_mult: 2,
            k_win: 2,
            latent_h: 4,
            latent_w: 4,
            n_views: 2,
            ..Default::default()
        }
    }

    fn bundle(cfg: &ModelConfig) -> ViewBundle {
        let layout = ViewLayout {
            n_views: cfg.n_views,
            latent_h: cfg.latent_h,
            latent_w: cfg.latent_w,
            elevation: 0.0,
            distance: 2.5,
            focal_ratio: 1.1,
        };
        let img = Image::filled(cfg.latent_w * 8, cfg.latent_h * 8, [0.3, 0.6, 0.9]);
        bundle_from_images(&vec![Some(&img); cfg.n_views], &layout).unwrap()
    }

    #[test]
    fn raw_zero_decodes_to_midrange() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 0).unwrap();
        let b = bundle(&cfg);
        let rays: Vec<RayMap> = b.views.iter().map(|v| plucker_raymap(&v.camera, 4, 4).unwrap()).collect();
        let raw = Array2::zeros((cfg.num_gaussians(), RAW_WIDTH));
        let (g, _) = model.decode(&raw, &rays);
        assert_eq!(g.len(), 32);
        assert_eq!(g.opacities[0], 0.5);
        assert_eq!(g.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.scales[0][0], cfg.s_min + 0.5 * (cfg.s_max - cfg.s_min));
        let o = Vector3::from(rays[0].origin);
        let dist = (Vector3::from(g.means[0]) - o).norm();
        assert!((dist - 2.0).abs() < 1e-12);
    }

    #[test]
    fn initial_head_bias_hits_targets() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let b = bundle(&cfg);
        let raw = Array2::zeros((cfg.num_gaussians(), RAW_WIDTH)) + &model.params.vec(model.layout.head.b).slice(s![0..RAW_WIDTH]);
        let rays: Vec<RayMap> = b.views.iter().map(|v| plucker_raymap(&v.camera, 4, 4).unwrap()).collect();
        let (g, _) = model.decode(&raw, &rays);
        assert!((g.opacities[0] - cfg.init_opacity).abs() < 1e-12);
        assert!((g.scales[0][1] - cfg.init_scale).abs() < 1e-12);
    }
}

//! Transformer building blocks with explicit forward caches and hand-written
//! backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{Grads, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

pub fn linear_fwd(p: &ParamStore, ids: LinearIds, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&p.mat(ids.w)) + &p.vec(ids.b)
}

pub fn linear_bwd(p: &ParamStore, g: &mut Grads, ids: LinearIds, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    g.add_mat(ids.w, &x.t().dot(dy));
    g.add_col_sums(ids.b, dy);
    dy.dot(&p.mat(ids.w).t())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LnIds {
    pub g: ParamId,
    pub b: ParamId,
}

pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub fn ln_fwd(p: &ParamStore, ids: LnIds, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &p.vec(ids.g) + &p.vec(ids.b);
    (y, LnCache { xhat, inv_std })
}

pub fn ln_bwd(p: &ParamStore, g: &mut Grads, ids: LnIds, c: &LnCache, dy: &Array2<f64>) -> Array2<f64> {
    g.add_vec(ids.g, &(dy * &c.xhat).sum_axis(Axis(0)));
    g.add_col_sums(ids.b, dy);
    let d = dy.ncols() as f64;
    let dxhat = dy * &p.vec(ids.g);
    let sum1 = dxhat.sum_axis(Axis(1));
    let sum2 = (&dxhat * &c.xhat).sum_axis(Axis(1));
    let mut dx = dxhat * d - &sum1.view().insert_axis(Axis(1)) - &c.xhat * &sum2.view().insert_axis(Axis(1));
    dx *= &(&c.inv_std / d).view().insert_axis(Axis(1));
    dx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Which keys each query may attend to.
#[derive(Clone, Copy)]
pub enum Keys<'a> {
    All,
    /// Ascending key indices per query; an empty list skips the query.
    Lists(&'a [Vec<u32>]),
}

pub enum AttnCache {
    /// Row-stochastic probabilities per head.
    Dense(Vec<Array2<f64>>),
    /// Per query, per head, probabilities aligned with the key list.
    Lists(Vec<Vec<f64>>),
}

fn softmax_in_place(s: &mut [f64]) {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

/// Multi-head scaled dot-product attention. Returns the concatenated head
/// outputs, the cache, and the number of query-key scores evaluated per head.
pub fn attention_fwd(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: usize,
    keys: Keys,
) -> (Array2<f64>, AttnCache, u64) {
    let (nq, d) = q.dim();
    let nk = k.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((nq, d));
    match keys {
        Keys::All => {
            let mut probs = Vec::with_capacity(heads);
            if nk == 0 {
                return (out, AttnCache::Dense(probs), 0);
            }
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let qh = q.slice(s![.., r.clone()]);
                let kh = k.slice(s![.., r.clone()]);
                let vh = v.slice(s![.., r.clone()]);
                let mut sc = qh.dot(&kh.t()) * scale;
                for mut row in sc.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("contiguous"));
                }
                out.slice_mut(s![.., r]).assign(&sc.dot(&vh));
                probs.push(sc);
            }
            (out, AttnCache::Dense(probs), (nq * nk) as u64)
        }
        Keys::Lists(lists) => {
            let qs = q.as_slice().expect("contiguous");
            let ks = k.as_standard_layout();
            let vs = v.as_standard_layout();
            let ks = ks.as_slice().unwrap();
            let vs = vs.as_slice().unwrap();
            let mut count = 0u64;
            let mut probs = Vec::with_capacity(nq);
            let os = out.as_slice_mut().unwrap();
            for (qi, list) in lists.iter().enumerate() {
                count += list.len() as u64;
                let mut pq = Vec::with_capacity(list.len() * heads);
                if list.is_empty() {
                    probs.push(pq);
                    continue;
                }
                for h in 0..heads {
                    let qrow = &qs[qi * d + h * dh..qi * d + (h + 1) * dh];
                    let mut sc: Vec<f64> = list
                        .iter()
                        .map(|&j| {
                            let krow = &ks[j as usize * d + h * dh..j as usize * d + (h + 1) * dh];
                            qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale
                        })
                        .collect();
                    softmax_in_place(&mut sc);
                    let orow = &mut os[qi * d + h * dh..qi * d + (h + 1) * dh];
                    for (&j, &pj) in list.iter().zip(&sc) {
                        let vrow = &vs[j as usize * d + h * dh..j as usize * d + (h + 1) * dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += pj * x;
                        }
                    }
                    pq.extend_from_slice(&sc);
                }
                probs.push(pq);
            }
            (out, AttnCache::Lists(probs), count)
        }
    }
}

pub fn attention_bwd(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: usize,
    keys: Keys,
    cache: &AttnCache,
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (nq, d) = q.dim();
    let nk = k.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((nq, d));
    let mut dk = Array2::zeros((nk, d));
    let mut dv = Array2::zeros((nk, d));
    match (keys, cache) {
        (Keys::All, AttnCache::Dense(probs)) => {
            for (h, p) in probs.iter().enumerate() {
                let r = h * dh..(h + 1) * dh;
                let qh = q.slice(s![.., r.clone()]);
                let kh = k.slice(s![.., r.clone()]);
                let vh = v.slice(s![.., r.clone()]);
                let doh = dout.slice(s![.., r.clone()]);
                let dp = doh.dot(&vh.t());
                let rows = (&dp * p).sum_axis(Axis(1));
                let ds = p * &(dp - &rows.view().insert_axis(Axis(1)));
                dq.slice_mut(s![.., r.clone()]).assign(&(ds.dot(&kh) * scale));
                dk.slice_mut(s![.., r.clone()]).assign(&(ds.t().dot(&qh) * scale));
                dv.slice_mut(s![.., r]).assign(&p.t().dot(&doh));
            }
        }
        (Keys::Lists(lists), AttnCache::Lists(probs)) => {
            let qs = q.as_slice().unwrap();
            let ks = k.as_slice().unwrap();
            let vs = v.as_slice().unwrap();
            let dos = dout.as_standard_layout();
            let dos = dos.as_slice().unwrap();
            let dqs = dq.as_slice_mut().unwrap();
            let dks = dk.as_slice_mut().unwrap();
            let dvs = dv.as_slice_mut().unwrap();
            let mut dp = Vec::new();
            for (qi, list) in lists.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let n = list.len();
                for h in 0..heads {
                    let p = &probs[qi][h * n..(h + 1) * n];
                    let o = qi * d + h * dh;
                    let dorow = &dos[o..o + dh];
                    dp.clear();
                    for &j in list {
                        let vr = &vs[j as usize * d + h * dh..j as usize * d + (h + 1) * dh];
                        dp.push(dorow.iter().zip(vr).map(|(a, b)| a * b).sum::<f64>());
                    }
                    let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for (idx, &j) in list.iter().enumerate() {
                        let ds = p[idx] * (dp[idx] - dot) * scale;
                        let ko = j as usize * d + h * dh;
                        for c in 0..dh {
                            dqs[o + c] += ds * ks[ko + c];
                            dks[ko + c] += ds * qs[o + c];
                            dvs[ko + c] += p[idx] * dorow[c];
                        }
                    }
                }
            }
        }
        _ => unreachable!("attention cache does not match key mode"),
    }
    (dq, dk, dv)
}

/// Reference masked attention: every score is evaluated, masked pairs are
/// set to −∞ before the softmax, and rows with no admitted key output zero.
/// `mask` is row-major `nq × nk`.
pub fn attention_dense_masked(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    mask: &[bool],
) -> (Array2<f64>, u64) {
    let (nq, d) = q.dim();
    let nk = k.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((nq, d));
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let mut sc = q.slice(s![.., r.clone()]).dot(&k.slice(s![.., r.clone()]).t()) * scale;
        for (qi, mut row) in sc.rows_mut().into_iter().enumerate() {
            let m = &mask[qi * nk..(qi + 1) * nk];
            if !m.iter().any(|&b| b) {
                row.fill(0.0);
                continue;
            }
            for (x, &ok) in row.iter_mut().zip(m) {
                if !ok {
                    *x = f64::NEG_INFINITY;
                }
            }
            softmax_in_place(row.as_slice_mut().unwrap());
        }
        out.slice_mut(s![.., r.clone()]).assign(&sc.dot(&v.slice(s![.., r])));
    }
    (out, (nq * nk) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfnIds {
    pub ln: LnIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

pub struct FfnCache {
    ln: LnCache,
    h: Array2<f64>,
    a: Array2<f64>,
    act: Array2<f64>,
}

/// `x + W2 gelu(W1 LN(x))`.
pub fn ffn_fwd(p: &ParamStore, ids: FfnIds, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
    let (h, ln) = ln_fwd(p, ids.ln, x);
    let a = linear_fwd(p, ids.fc1, &h);
    let act = a.mapv(gelu);
    let y = x + &linear_fwd(p, ids.fc2, &act);
    (y, FfnCache { ln, h, a, act })
}

pub fn ffn_bwd(p: &ParamStore, g: &mut Grads, ids: FfnIds, c: &FfnCache, dy: &Array2<f64>) -> Array2<f64> {
    let dact = linear_bwd(p, g, ids.fc2, &c.act, dy);
    let da = dact * &c.a.mapv(gelu_grad);
    let dh = linear_bwd(p, g, ids.fc1, &c.h, &da);
    dy + &ln_bwd(p, g, ids.ln, &c.ln, &dh)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfBlockIds {
    pub ln: LnIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ffn: FfnIds,
}

pub struct SelfBlockCache {
    ln: LnCache,
    h: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: AttnCache,
    o: Array2<f64>,
    ffn: FfnCache,
}

pub fn self_block_fwd(p: &ParamStore, ids: &SelfBlockIds, x: &Array2<f64>, heads: usize) -> (Array2<f64>, SelfBlockCache) {
    let (h, ln) = ln_fwd(p, ids.ln, x);
    let q = linear_fwd(p, ids.q, &h);
    let k = linear_fwd(p, ids.k, &h);
    let v = linear_fwd(p, ids.v, &h);
    let (o, attn, _) = attention_fwd(&q, &k, &v, heads, Keys::All);
    let x1 = x + &linear_fwd(p, ids.o, &o);
    let (y, ffn) = ffn_fwd(p, ids.ffn, &x1);
    (y, SelfBlockCache { ln, h, q, k, v, attn, o, ffn })
}

pub fn self_block_bwd(
    p: &ParamStore,
    g: &mut Grads,
    ids: &SelfBlockIds,
    c: &SelfBlockCache,
    heads: usize,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let dx1 = ffn_bwd(p, g, ids.ffn, &c.ffn, dy);
    let d_o = linear_bwd(p, g, ids.o, &c.o, &dx1);
    let (dq, dk, dv) = attention_bwd(&c.q, &c.k, &c.v, heads, Keys::All, &c.attn, &d_o);
    let mut dh = linear_bwd(p, g, ids.q, &c.h, &dq);
    dh += &linear_bwd(p, g, ids.k, &c.h, &dk);
    dh += &linear_bwd(p, g, ids.v, &c.h, &dv);
    dx1 + ln_bwd(p, g, ids.ln, &c.ln, &dh)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossBlockIds {
    pub ln_q: LnIds,
    pub ln_kv: LnIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ffn: FfnIds,
}

/// Keys and values of one cross block, shared by every view.
pub struct CrossKv {
    ln: LnCache,
    h: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

pub fn cross_kv_fwd(p: &ParamStore, ids: &CrossBlockIds, hbar: &Array2<f64>) -> CrossKv {
    let (h, ln) = ln_fwd(p, ids.ln_kv, hbar);
    let k = linear_fwd(p, ids.k, &h);
    let v = linear_fwd(p, ids.v, &h);
    CrossKv { ln, h, k, v }
}

pub fn cross_kv_bwd(
    p: &ParamStore,
    g: &mut Grads,
    ids: &CrossBlockIds,
    c: &CrossKv,
    dk: &Array2<f64>,
    dv: &Array2<f64>,
) -> Array2<f64> {
    let mut dh = linear_bwd(p, g, ids.k, &c.h, dk);
    dh += &linear_bwd(p, g, ids.v, &c.h, dv);
    ln_bwd(p, g, ids.ln_kv, &c.ln, &dh)
}

pub struct CrossBlockCache {
    ln: LnCache,
    h: Array2<f64>,
    q: Array2<f64>,
    attn: AttnCache,
    o: Array2<f64>,
    empty: Vec<bool>,
    ffn: FfnCache,
}

/// Masked cross-attention (queries from `x`, keys/values from `kv`) with a
/// residual, then the FFN. Queries with no admitted key skip attention.
pub fn cross_block_fwd(
    p: &ParamStore,
    ids: &CrossBlockIds,
    x: &Array2<f64>,
    kv: &CrossKv,
    heads: usize,
    lists: &[Vec<u32>],
) -> (Array2<f64>, CrossBlockCache, u64) {
    let (h, ln) = ln_fwd(p, ids.ln_q, x);
    let q = linear_fwd(p, ids.q, &h);
    let (o, attn, count) = attention_fwd(&q, &kv.k, &kv.v, heads, Keys::Lists(lists));
    let empty: Vec<bool> = lists.iter().map(|l| l.is_empty()).collect();
    let mut y = linear_fwd(p, ids.o, &o);
    for (mut row, &e) in y.rows_mut().into_iter().zip(&empty) {
        if e {
            row.fill(0.0);
        }
    }
    let x1 = x + &y;
    let (out, ffn) = ffn_fwd(p, ids.ffn, &x1);
    (out, CrossBlockCache { ln, h, q, attn, o, empty, ffn }, count)
}

/// Returns `(dx, dk, dv)`.
pub fn cross_block_bwd(
    p: &ParamStore,
    g: &mut Grads,
    ids: &CrossBlockIds,
    c: &CrossBlockCache,
    kv: &CrossKv,
    heads: usize,
    lists: &[Vec<u32>],
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dx1 = ffn_bwd(p, g, ids.ffn, &c.ffn, dy);
    let mut dyo = dx1.clone();
    for (mut row, &e) in dyo.rows_mut().into_iter().zip(&c.empty) {
        if e {
            row.fill(0.0);
        }
    }
    let d_o = linear_bwd(p, g, ids.o, &c.o, &dyo);
    let (dq, dk, dv) = attention_bwd(&c.q, &kv.k, &kv.v, heads, Keys::Lists(lists), &c.attn, &d_o);
    let dh = linear_bwd(p, g, ids.q, &c.h, &dq);
    (dx1 + ln_bwd(p, g, ids.ln_q, &c.ln, &dh), dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dense_probabilities_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (rand_mat(&mut rng, 7, 8), rand_mat(&mut rng, 5, 8), rand_mat(&mut rng, 5, 8));
        let (_, cache, count) = attention_fwd(&q, &k, &v, 2, Keys::All);
        assert_eq!(count, 35);
        let AttnCache::Dense(p) = cache else { panic!() };
        for ph in p {
            for row in ph.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lists_match_dense_masked_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (rand_mat(&mut rng, 9, 12), rand_mat(&mut rng, 6, 12), rand_mat(&mut rng, 6, 12));
        let mut mask = vec![false; 9 * 6];
        let lists: Vec<Vec<u32>> = (0..9)
            .map(|qi| {
                (0..6u32)
                    .filter(|&j| {
                        let ok = qi != 4 && rng.random_bool(0.5);
                        mask[qi * 6 + j as usize] = ok;
                        ok
                    })
                    .collect()
            })
            .collect();
        let (a, _, count) = attention_fwd(&q, &k, &v, 3, Keys::Lists(&lists));
        let (b, dense_count) = attention_dense_masked(q.view(), k.view(), v.view(), 3, &mask);
        assert!((a - &b).iter().all(|x| x.abs() < 1e-12));
        assert_eq!(count, mask.iter().filter(|&&m| m).count() as u64);
        assert_eq!(dense_count, 54);
        assert!(b.row(4).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn all_admitted_lists_equal_vanilla_attention() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (rand_mat(&mut rng, 5, 8), rand_mat(&mut rng, 4, 8), rand_mat(&mut rng, 4, 8));
        let lists = vec![(0..4u32).collect::<Vec<_>>(); 5];
        let (a, ..) = attention_fwd(&q, &k, &v, 2, Keys::Lists(&lists));
        let (b, ..) = attention_fwd(&q, &k, &v, 2, Keys::All);
        assert!((a - &b).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}

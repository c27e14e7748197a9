use super::layers::*;
use super::real::Real;
use super::sigmoid;
use super::weights::*;
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::rd_pipeline::RDTensor;

/// Detector output: per coarse cell a confidence logit and two offset
/// logits, stored as a 3-channel tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap<T = f64> {
    pub logits: Tensor<T>,
}

impl<T: Real> DetectionMap<T> {
    pub fn rows(&self) -> usize {
        self.logits.h
    }

    pub fn cols(&self) -> usize {
        self.logits.w
    }

    pub fn confidence(&self, r: usize, c: usize) -> T {
        sigmoid(self.logits.at(0, r, c))
    }
}

/// 2D sinusoidal encoding as a `c × h × w` tensor. The first `c/2`
/// channels encode the row, the rest the column; within each half even
/// channels are sines and odd channels cosines of `pos / 10000^(2i/(c/2))`.
pub fn positional_encoding(h: usize, w: usize, c: usize) -> Result<Tensor> {
    if c == 0 || c % 4 != 0 {
        return Err(Error::Config(format!("positional encoding needs c divisible by 4, got {c}")));
    }
    let half = c / 2;
    let mut t = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let j = ch % half;
        let freq = 10000f64.powf(-((2 * (j / 2)) as f64) / half as f64);
        for y in 0..h {
            for x in 0..w {
                let pos = if ch < half { y } else { x } as f64;
                let a = pos * freq;
                t.data[(ch * h + y) * w + x] = if j % 2 == 0 { a.sin() } else { a.cos() };
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone)]
struct EncCache<T> {
    input: Tensor<T>,
    norm: NormCache<T>,
    post_norm: Tensor<T>,
}

/// Activations of one attention block, in the shifted frame when the block
/// shifts.
#[derive(Debug, Clone)]
pub struct BlockCache<T = f64> {
    ln1: NormCache<T>,
    ln1_out: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    pub attn: AttnCache<T>,
    attn_out: Tensor<T>,
    ln2: NormCache<T>,
    ln2_out: Tensor<T>,
    m1: Tensor<T>,
    m1a: Tensor<T>,
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f64> {
    fingerprint: u64,
    enc: Vec<EncCache<T>>,
    res_in: Tensor<T>,
    res_a: Tensor<T>,
    res_a_act: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    sppf: SppfCache<T>,
}

impl<T> ForwardCache<T> {
    pub fn blocks(&self) -> &[BlockCache<T>] {
        &self.blocks
    }
}

fn conv<T: Real>(x: &Tensor<T>, w: &impl Params<T>, name: &str, s: ConvSpec) -> Tensor<T> {
    conv2d(x, w.param(&format!("{name}.weight")), w.param(&format!("{name}.bias")), s)
}

fn conv_back(x: &Tensor, w: &WeightSet, name: &str, s: ConvSpec, dy: &Tensor, g: &mut WeightSet) -> Tensor {
    let (dx, dw, db) = conv2d_backward(x, w.get(&format!("{name}.weight")), s, dy);
    g.accumulate(&format!("{name}.weight"), &dw);
    g.accumulate(&format!("{name}.bias"), &db);
    dx
}

fn shift_of(block: usize) -> isize {
    if block == 0 {
        0
    } else {
        (WINDOW / 2) as isize
    }
}

/// One transformer block: LN → W-MSA → skip, LN → MLP → skip. A nonzero
/// `shift` rolls the grid by `−shift` before and back after.
pub fn block_forward<T: Real>(x: &Tensor<T>, w: &impl Params<T>, b: &str, shift: isize) -> (Tensor<T>, BlockCache<T>) {
    let shifted = if shift != 0 { roll(x, -shift, -shift) } else { x.clone() };
    let (ln1_out, ln1) = layer_norm(&shifted, w.param(&format!("{b}.ln1.weight")), w.param(&format!("{b}.ln1.bias")));
    let q = conv(&ln1_out, w, &format!("{b}.attn.q"), PROJ);
    let k = conv(&ln1_out, w, &format!("{b}.attn.k"), PROJ);
    let v = conv(&ln1_out, w, &format!("{b}.attn.v"), PROJ);
    let (attn_out, attn) = window_attention(&q, &k, &v, HEADS, WINDOW);
    let o = conv(&attn_out, w, &format!("{b}.attn.out"), PROJ);
    let y1 = shifted.add(&o);
    let (ln2_out, ln2) = layer_norm(&y1, w.param(&format!("{b}.ln2.weight")), w.param(&format!("{b}.ln2.bias")));
    let m1 = conv(&ln2_out, w, &format!("{b}.mlp.fc1"), FC1);
    let m1a = silu_forward(&m1);
    let m2 = conv(&m1a, w, &format!("{b}.mlp.fc2"), FC2);
    let y2 = y1.add(&m2);
    let out = if shift != 0 { roll(&y2, shift, shift) } else { y2 };
    (
        out,
        BlockCache {
            ln1,
            ln1_out,
            q,
            k,
            v,
            attn,
            attn_out,
            ln2,
            ln2_out,
            m1,
            m1a,
        },
    )
}

pub fn block_backward(dout: &Tensor, c: &BlockCache, w: &WeightSet, b: &str, shift: isize, g: &mut WeightSet) -> Tensor {
    let dy2 = if shift != 0 { roll(dout, -shift, -shift) } else { dout.clone() };
    let dm1a = conv_back(&c.m1a, w, &format!("{b}.mlp.fc2"), FC2, &dy2, g);
    let dm1 = silu_backward(&c.m1, &dm1a);
    let dln2 = conv_back(&c.ln2_out, w, &format!("{b}.mlp.fc1"), FC1, &dm1, g);
    let (dy1_ln, dg2, db2) = layer_norm_backward(&c.ln2, w.get(&format!("{b}.ln2.weight")), &dln2);
    g.accumulate(&format!("{b}.ln2.weight"), &dg2);
    g.accumulate(&format!("{b}.ln2.bias"), &db2);
    let mut dy1 = dy2;
    dy1.add_assign(&dy1_ln);
    let dattn = conv_back(&c.attn_out, w, &format!("{b}.attn.out"), PROJ, &dy1, g);
    let (dq, dk, dv) = window_attention_backward(&c.q, &c.k, &c.v, &c.attn, &dattn);
    let mut dln1 = conv_back(&c.ln1_out, w, &format!("{b}.attn.q"), PROJ, &dq, g);
    dln1.add_assign(&conv_back(&c.ln1_out, w, &format!("{b}.attn.k"), PROJ, &dk, g));
    dln1.add_assign(&conv_back(&c.ln1_out, w, &format!("{b}.attn.v"), PROJ, &dv, g));
    let (dshift_ln, dg1, db1) = layer_norm_backward(&c.ln1, w.get(&format!("{b}.ln1.weight")), &dln1);
    g.accumulate(&format!("{b}.ln1.weight"), &dg1);
    g.accumulate(&format!("{b}.ln1.bias"), &db1);
    let mut dshifted = dy1;
    dshifted.add_assign(&dshift_ln);
    if shift != 0 {
        roll(&dshifted, shift, shift)
    } else {
        dshifted
    }
}

#[derive(Debug, Clone)]
pub struct SppfCache<T = f64> {
    pool_args: Vec<Vec<usize>>,
    cat: Tensor<T>,
    fuse: Tensor<T>,
    fuse_act: Tensor<T>,
}

/// Three serial 5×5 max pools, concatenated with their input and fused by
/// a 1×1 convolution with SiLU.
pub fn sppf_forward<T: Real>(x: &Tensor<T>, w: &impl Params<T>) -> (Tensor<T>, SppfCache<T>) {
    let mut pools = Vec::with_capacity(3);
    let mut pool_args = Vec::with_capacity(3);
    let mut cur = x.clone();
    for _ in 0..3 {
        let (p, arg) = max_pool(&cur, 5);
        pool_args.push(arg);
        pools.push(p.clone());
        cur = p;
    }
    let cat = concat(&[x, &pools[0], &pools[1], &pools[2]]);
    let fuse = conv(&cat, w, "sppf.fuse", FUSE);
    let fuse_act = silu_forward(&fuse);
    (
        fuse_act.clone(),
        SppfCache {
            pool_args,
            cat,
            fuse,
            fuse_act,
        },
    )
}

pub fn sppf_backward(dout: &Tensor, c: &SppfCache, w: &WeightSet, g: &mut WeightSet) -> Tensor {
    let dfuse = silu_backward(&c.fuse, dout);
    let dcat = conv_back(&c.cat, w, "sppf.fuse", FUSE, &dfuse, g);
    let mut parts = split(&dcat, &[WIDTH; 4]).into_iter();
    let mut dx = parts.next().unwrap();
    let dps: Vec<Tensor> = parts.collect();
    // Serial pools: the gradient of pool i also flows into pool i − 1.
    let mut carry = Tensor::zeros(dout.c, dout.h, dout.w);
    for i in (0..3).rev() {
        let mut dp = dps[i].clone();
        dp.add_assign(&carry);
        carry = max_pool_backward(&c.pool_args[i], &dp);
    }
    dx.add_assign(&carry);
    dx
}

/// Check that an `R × D` input fits the encoder strides and window tiling.
pub fn check_input_dims(rows: usize, cols: usize) -> Result<()> {
    let unit = STRIDE * WINDOW;
    if rows == 0 || cols == 0 || rows % unit != 0 || cols % unit != 0 {
        return Err(Error::Shape(format!(
            "input {rows}×{cols} must be a nonzero multiple of {unit} in both dimensions"
        )));
    }
    Ok(())
}

/// Model input tensor from a 3-channel RD tensor.
pub fn input_tensor(t: &RDTensor) -> Tensor {
    Tensor::from_vec(3, t.rows, t.cols, t.data.clone())
}

pub fn forward(input: &Tensor, w: &WeightSet) -> Result<(DetectionMap, ForwardCache)> {
    let (map, mut cache) = forward_with(input, w)?;
    cache.fingerprint = w.fingerprint();
    Ok((map, cache))
}

/// Forward pass in any scalar precision.
pub fn forward_with<T: Real, P: Params<T>>(input: &Tensor<T>, w: &P) -> Result<(DetectionMap<T>, ForwardCache<T>)> {
    if input.c != 3 {
        return Err(Error::Shape(format!("input has {} channels, expected 3", input.c)));
    }
    check_input_dims(input.h, input.w)?;
    let mut x = input.clone();
    let mut enc = Vec::with_capacity(3);
    for (name, s) in ENC {
        let pre = conv(&x, w, name, s);
        let (post_norm, norm) = instance_norm(&pre);
        let out = silu_forward(&post_norm);
        enc.push(EncCache {
            input: x,
            norm,
            post_norm,
        });
        x = out;
    }
    let res_in = x;
    let res_a = conv(&res_in, w, "res.conv_a", RES_CONV);
    let res_a_act = silu_forward(&res_a);
    let res_b = conv(&res_a_act, w, "res.conv_b", RES_CONV);
    let mut t = res_in.add(&res_b);
    t.add_assign(&positional_encoding(t.h, t.w, WIDTH)?.cast());

    let mut blocks = Vec::with_capacity(BLOCKS.len());
    for (i, b) in BLOCKS.iter().enumerate() {
        let (out, cache) = block_forward(&t, w, b, shift_of(i));
        blocks.push(cache);
        t = out;
    }

    let (fuse_act, sppf) = sppf_forward(&t, w);
    let logits = conv(&fuse_act, w, "head", HEAD);
    Ok((
        DetectionMap { logits },
        ForwardCache {
            fingerprint: 0,
            enc,
            res_in,
            res_a,
            res_a_act,
            blocks,
            sppf,
        },
    ))
}

/// Parameter gradients of `Σ grad_map · map` for the forward pass that
/// produced `cache`. Fails if `w` is not the weight set of that pass.
pub fn backward(w: &WeightSet, cache: &ForwardCache, grad_map: &Tensor) -> Result<WeightSet> {
    if cache.fingerprint != w.fingerprint() {
        return Err(Error::StaleCache);
    }
    let (h, wd) = (cache.sppf.fuse_act.h, cache.sppf.fuse_act.w);
    if (grad_map.c, grad_map.h, grad_map.w) != (3, h, wd) {
        return Err(Error::Shape(format!(
            "gradient map {}×{}×{} does not match output 3×{h}×{wd}",
            grad_map.c, grad_map.h, grad_map.w
        )));
    }
    let mut g = WeightSet::zeros();
    let dfuse_act = conv_back(&cache.sppf.fuse_act, w, "head", HEAD, grad_map, &mut g);
    let mut dx = sppf_backward(&dfuse_act, &cache.sppf, w, &mut g);

    for i in (0..BLOCKS.len()).rev() {
        dx = block_backward(&dx, &cache.blocks[i], w, BLOCKS[i], shift_of(i), &mut g);
    }

    // Positional encoding is additive and parameter-free.
    let dres_act = conv_back(&cache.res_a_act, w, "res.conv_b", RES_CONV, &dx, &mut g);
    let dres_a = silu_backward(&cache.res_a, &dres_act);
    dx.add_assign(&conv_back(&cache.res_in, w, "res.conv_a", RES_CONV, &dres_a, &mut g));

    for (i, (name, s)) in ENC.iter().enumerate().rev() {
        let e = &cache.enc[i];
        let dn = silu_backward(&e.post_norm, &dx);
        let dpre = instance_norm_backward(&e.norm, &dn);
        dx = conv_back(&e.input, w, name, *s, &dpre, &mut g);
    }
    Ok(g)
}

/// Cells whose confidence exceeds `threshold` and is a local maximum of
/// its 8-neighborhood, decoded to bin positions `(cell + σ(offset))·8`.
/// Equal neighbors are resolved toward the earlier cell in raster order.
/// Detection energy is not observed by the network and is set to 0.
pub fn decode_detections(map: &DetectionMap, threshold: f64) -> Vec<Detection> {
    let (h, w) = (map.rows(), map.cols());
    let conf: Vec<f64> = map.logits.plane(0).iter().map(|&z| sigmoid(z)).collect();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = conf[r * w + c];
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let ni = nr as usize * w + nc as usize;
                    let earlier = ni < r * w + c;
                    if conf[ni] > v || (earlier && conf[ni] == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                let or = sigmoid(map.logits.at(1, r, c));
                let od = sigmoid(map.logits.at(2, r, c));
                out.push(Detection::new(
                    (r as f64 + or) * STRIDE as f64,
                    (c as f64 + od) * STRIDE as f64,
                    v,
                    0.0,
                ));
            }
        }
    }
    out
}

//! Spatial-temporal packer.
//!
//! A packer splits a `[w, h, n, D]` feature volume into equal blocks. Each
//! block is average-pooled into a point; the point (through `mlp_q`) attends
//! over the block's rows (through `mlp_kv`, then the value projection), and
//! the pooled point is added back as a residual. `packer_s` uses spatial
//! blocks, `packer_t` temporal ones. The full pass is
//!
//! ```text
//! F   = packer_s(v̂, k1 x k1)      [k1, k1, n, D]
//! F_s = packer_s(F,  k2 x k2)     [k2, k2, n, D]
//! F_t = packer_t(F,  sigma)       [k1, k1, sigma, D]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::numkit::{io, mean_pool_regions, softmax, Rng, Tensor};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation of GELU
    Gelu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    weight: Tensor,
    bias: Vec<f64>,
}

impl Affine {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.rank() != 2 || weight.dims()[0] != bias.len() {
            return Err(shape_err!(
                "affine weight {:?} with bias of length {}",
                weight.dims(),
                bias.len()
            ));
        }
        if !weight.all_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(domain_err!("non-finite affine parameters"));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(Tensor::identity(dim)?, vec![0.0; dim])
    }

    /// Gaussian weights with std `1/sqrt(dim)`, zero bias.
    pub fn random(dim: usize, rng: &mut Rng) -> Result<Self> {
        let weight = rng.normal_tensor(&[dim, dim], 1.0 / (dim as f64).sqrt())?;
        Self::new(weight, vec![0.0; dim])
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.in_dim();
        self.weight
            .data()
            .chunks(n)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(0.0, |acc, (w, v)| acc + w * v) + b)
            .collect()
    }
}

/// Two affine layers with an activation between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub first: Affine,
    pub second: Affine,
    pub activation: Activation,
}

impl Mlp {
    pub fn identity(dim: usize) -> Result<Self> {
        Ok(Self {
            first: Affine::identity(dim)?,
            second: Affine::identity(dim)?,
            activation: Activation::Identity,
        })
    }

    pub fn random(dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            first: Affine::random(dim, rng)?,
            second: Affine::random(dim, rng)?,
            activation: Activation::Gelu,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self
            .first
            .apply(x)
            .into_iter()
            .map(|v| self.activation.apply(v))
            .collect();
        self.second.apply(&hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackerParams {
    pub dim: usize,
    pub heads: usize,
    pub mlp_q: Mlp,
    pub mlp_kv: Mlp,
    pub value_projection: Affine,
}

impl PackerParams {
    /// Identity MLPs and value projection, single head.
    pub fn identity(dim: usize) -> Result<Self> {
        Ok(Self {
            dim,
            heads: 1,
            mlp_q: Mlp::identity(dim)?,
            mlp_kv: Mlp::identity(dim)?,
            value_projection: Affine::identity(dim)?,
        })
    }

    /// Random GELU MLPs (query MLP drawn first); value projection is identity.
    pub fn random(dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            dim,
            heads: 1,
            mlp_q: Mlp::random(dim, rng)?,
            mlp_kv: Mlp::random(dim, rng)?,
            value_projection: Affine::identity(dim)?,
        })
    }

    pub fn with_heads(mut self, heads: usize) -> Result<Self> {
        self.heads = heads;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(shape_err!("dim {d} is not divisible into {} heads", self.heads));
        }
        let affines = [
            &self.mlp_q.first,
            &self.mlp_q.second,
            &self.mlp_kv.first,
            &self.mlp_kv.second,
            &self.value_projection,
        ];
        if affines.iter().any(|a| a.in_dim() != d || a.out_dim() != d) {
            return Err(shape_err!("packer layers must all be {d} x {d}"));
        }
        Ok(())
    }

    fn affines(&self) -> [(&'static str, &Affine); 5] {
        [
            ("mlp_q.0", &self.mlp_q.first),
            ("mlp_q.1", &self.mlp_q.second),
            ("mlp_kv.0", &self.mlp_kv.first),
            ("mlp_kv.1", &self.mlp_kv.second),
            ("value", &self.value_projection),
        ]
    }
}

/// Result of one query's attention.
struct QueryOut {
    output: Vec<f64>,
    pre_residual: Vec<f64>,
    /// `[heads, R]`
    weights: Vec<f64>,
}

fn attend_one(point: &[f64], region: &[f64], params: &PackerParams) -> QueryOut {
    let d = params.dim;
    let heads = params.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = params.mlp_q.apply(point);
    let keys: Vec<Vec<f64>> = region.chunks(d).map(|r| params.mlp_kv.apply(r)).collect();
    let values: Vec<Vec<f64>> = keys.iter().map(|k| params.value_projection.apply(k)).collect();

    let mut pre_residual = vec![0.0; d];
    let mut weights = Vec::with_capacity(heads * keys.len());
    for h in 0..heads {
        let lanes = h * dh..(h + 1) * dh;
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| {
                q[lanes.clone()]
                    .iter()
                    .zip(&k[lanes.clone()])
                    .fold(0.0, |acc, (a, b)| acc + a * b)
                    * scale
            })
            .collect();
        let w = softmax(&scores);
        for (wr, v) in w.iter().zip(&values) {
            for c in lanes.clone() {
                pre_residual[c] += wr * v[c];
            }
        }
        weights.extend(w);
    }
    let output = point.iter().zip(&pre_residual).map(|(p, a)| p + a).collect();
    QueryOut {
        output,
        pre_residual,
        weights,
    }
}

/// Everything a point-to-region attention call computed.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `[P, D]`
    pub output: Tensor,
    /// Attention result before the residual, `[P, D]`.
    pub pre_residual: Tensor,
    /// `[P, heads, R]`
    pub weights: Tensor,
}

fn check_attention_shapes(points: &Tensor, regions: &Tensor, params: &PackerParams) -> Result<(usize, usize)> {
    params.validate()?;
    let d = params.dim;
    match (points.dims(), regions.dims()) {
        (&[p, 1, pd], &[rp, r, rd]) if p == rp && pd == d && rd == d => Ok((p, r)),
        _ => Err(shape_err!(
            "points {:?} and regions {:?} do not fit [P, 1, {d}] / [P, R, {d}]",
            points.dims(),
            regions.dims()
        )),
    }
}

/// Each point queries its own region rows; returns `[P, D]`.
pub fn point_region_attention(points: &Tensor, regions: &Tensor, params: &PackerParams) -> Result<Tensor> {
    Ok(point_region_attention_traced(points, regions, params, Exec::default())?.output)
}

pub fn point_region_attention_traced(
    points: &Tensor,
    regions: &Tensor,
    params: &PackerParams,
    exec: Exec,
) -> Result<AttentionTrace> {
    let (p, r) = check_attention_shapes(points, regions, params)?;
    let d = params.dim;
    let outs = par::map_range(exec, p, |i| {
        attend_one(
            &points.data()[i * d..(i + 1) * d],
            &regions.data()[i * r * d..(i + 1) * r * d],
            params,
        )
    });
    let mut output = Vec::with_capacity(p * d);
    let mut pre = Vec::with_capacity(p * d);
    let mut weights = Vec::with_capacity(p * params.heads * r);
    for o in outs {
        output.extend(o.output);
        pre.extend(o.pre_residual);
        weights.extend(o.weights);
    }
    Ok(AttentionTrace {
        output: Tensor::new(vec![p, d], output)?,
        pre_residual: Tensor::new(vec![p, d], pre)?,
        weights: Tensor::new(vec![p, params.heads, r], weights)?,
    })
}

/// Pool-attend-residual over blocks of extent `block = [bw, bh, bt]`.
fn pack_blocks(x: &Tensor, block: [usize; 3], params: &PackerParams, exec: Exec) -> Result<Tensor> {
    params.validate()?;
    let &[w, h, n, d] = x.dims() else {
        return Err(shape_err!("packer input must be [w, h, n, D], got {:?}", x.dims()));
    };
    if d != params.dim {
        return Err(shape_err!("feature dim {d} != packer dim {}", params.dim));
    }
    let points = mean_pool_regions(x, &block)?;
    let [bw, bh, bt] = block;
    let (ow, oh, on) = (w / bw, h / bh, n / bt);
    let region_len = bw * bh * bt;
    let xd = x.data();
    let pd = points.data();

    let mut out = vec![0.0; ow * oh * on * d];
    par::fill_chunks(exec, &mut out, d, |q, cell| {
        let (i, j, t) = (q / (oh * on), (q / on) % oh, q % on);
        let mut region = Vec::with_capacity(region_len * d);
        for a in 0..bw {
            for b in 0..bh {
                for c in 0..bt {
                    let off = (((i * bw + a) * h + (j * bh + b)) * n + (t * bt + c)) * d;
                    region.extend_from_slice(&xd[off..off + d]);
                }
            }
        }
        let r = attend_one(&pd[q * d..(q + 1) * d], &region, params);
        cell.copy_from_slice(&r.output);
    });
    Tensor::new(vec![ow, oh, on, d], out)
}

/// Spatial packer: `[w, h, n, D] -> [k, k, n, D]`.
pub fn packer_s(x: &Tensor, k: usize, params: &PackerParams) -> Result<Tensor> {
    packer_s_with(x, k, params, Exec::default())
}

pub fn packer_s_with(x: &Tensor, k: usize, params: &PackerParams, exec: Exec) -> Result<Tensor> {
    let &[w, h, _, _] = x.dims() else {
        return Err(shape_err!("packer input must be [w, h, n, D], got {:?}", x.dims()));
    };
    if k == 0 || w % k != 0 || h % k != 0 {
        return Err(shape_err!("grid {k}x{k} does not divide spatial extent {w}x{h}"));
    }
    pack_blocks(x, [w / k, h / k, 1], params, exec)
}

/// Temporal packer: `[k, k, n, D] -> [k, k, sigma, D]`.
pub fn packer_t(x: &Tensor, sigma: usize, params: &PackerParams) -> Result<Tensor> {
    packer_t_with(x, sigma, params, Exec::default())
}

pub fn packer_t_with(x: &Tensor, sigma: usize, params: &PackerParams, exec: Exec) -> Result<Tensor> {
    let &[_, _, n, _] = x.dims() else {
        return Err(shape_err!("packer input must be [w, h, n, D], got {:?}", x.dims()));
    };
    if sigma == 0 || n % sigma != 0 {
        return Err(shape_err!("sigma {sigma} does not divide {n} frames"));
    }
    pack_blocks(x, [1, 1, n / sigma], params, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StpConfig {
    pub w1: usize,
    pub h1: usize,
    pub n: usize,
    pub k1: usize,
    pub k2: usize,
    pub sigma: usize,
}

impl Default for StpConfig {
    fn default() -> Self {
        Self {
            w1: 27,
            h1: 27,
            n: 100,
            k1: 9,
            k2: 3,
            sigma: 20,
        }
    }
}

/// Which output streams a pass produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StpBranches {
    Both,
    /// Only `F_t`; the second spatial packer is removed.
    TemporalOnly,
    /// Only `F_s`; the temporal packer is removed.
    SpatialOnly,
}

impl StpConfig {
    /// Setting with only the temporal stream kept: `F_t` is 25 x 9 x 9.
    pub fn temporal_only_ablation() -> Self {
        Self {
            sigma: 25,
            ..Self::default()
        }
    }

    /// Setting with only the spatial stream kept: `F_s` is 100 x 5 x 5.
    /// A 5 x 5 grid does not divide 27, so the input grid is 30 x 30 with a
    /// 10 x 10 first stage.
    pub fn spatial_only_ablation() -> Self {
        Self {
            w1: 30,
            h1: 30,
            k1: 10,
            k2: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            w1,
            h1,
            n,
            k1,
            k2,
            sigma,
        } = *self;
        if [w1, h1, n, k1, k2, sigma].contains(&0) {
            return Err(shape_err!("zero extent in {self:?}"));
        }
        if w1 % k1 != 0 || h1 % k1 != 0 {
            return Err(shape_err!("k1 = {k1} does not divide {w1}x{h1}"));
        }
        if k1 % k2 != 0 {
            return Err(shape_err!("k2 = {k2} does not divide k1 = {k1}"));
        }
        if n % sigma != 0 {
            return Err(shape_err!("sigma = {sigma} does not divide n = {n}"));
        }
        Ok(())
    }

    pub fn spatial_tokens(&self) -> usize {
        self.k2 * self.k2 * self.n
    }

    pub fn temporal_tokens(&self) -> usize {
        self.k1 * self.k1 * self.sigma
    }

    pub fn token_count(&self, branches: StpBranches) -> usize {
        match branches {
            StpBranches::Both => self.spatial_tokens() + self.temporal_tokens(),
            StpBranches::TemporalOnly => self.temporal_tokens(),
            StpBranches::SpatialOnly => self.spatial_tokens(),
        }
    }
}

/// Parameters for the three packer calls. With `tied`, the second spatial
/// packer reuses the first-stage parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StpParams {
    pub stage1: PackerParams,
    spatial: Option<PackerParams>,
    pub temporal: PackerParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsManifest {
    dim: usize,
    heads: usize,
    seed: Option<u64>,
    nonlinearity: Activation,
    tied: bool,
}

impl StpParams {
    pub fn new(stage1: PackerParams, spatial: Option<PackerParams>, temporal: PackerParams) -> Result<Self> {
        let p = Self {
            stage1,
            spatial,
            temporal,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(
            PackerParams::identity(dim)?,
            Some(PackerParams::identity(dim)?),
            PackerParams::identity(dim)?,
        )
    }

    /// Draws stage-1, then (untied) spatial, then temporal parameters.
    pub fn random(dim: usize, rng: &mut Rng, tied: bool) -> Result<Self> {
        let stage1 = PackerParams::random(dim, rng)?;
        let spatial = if tied {
            None
        } else {
            Some(PackerParams::random(dim, rng)?)
        };
        let temporal = PackerParams::random(dim, rng)?;
        Self::new(stage1, spatial, temporal)
    }

    /// Same parameters with every packer split into `heads` heads.
    pub fn with_heads(self, heads: usize) -> Result<Self> {
        let spatial = self.spatial.map(|p| p.with_heads(heads)).transpose()?;
        Self::new(
            self.stage1.with_heads(heads)?,
            spatial,
            self.temporal.with_heads(heads)?,
        )
    }

    pub fn is_tied(&self) -> bool {
        self.spatial.is_none()
    }

    pub fn spatial(&self) -> &PackerParams {
        self.spatial.as_ref().unwrap_or(&self.stage1)
    }

    pub fn dim(&self) -> usize {
        self.stage1.dim
    }

    fn stages(&self) -> Vec<(&'static str, &PackerParams)> {
        let mut v = vec![("stage1", &self.stage1)];
        if let Some(s) = &self.spatial {
            v.push(("spatial", s));
        }
        v.push(("temporal", &self.temporal));
        v
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, p) in self.stages() {
            p.validate()?;
            if p.dim != d {
                return Err(shape_err!("{name} packer dim {} != {d}", p.dim));
            }
        }
        Ok(())
    }

    /// Writes one `STT1` file per weight/bias plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, seed: Option<u64>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = ParamsManifest {
            dim: self.dim(),
            heads: self.stage1.heads,
            seed,
            nonlinearity: self.stage1.mlp_q.activation,
            tied: self.is_tied(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (stage, p) in self.stages() {
            for (layer, a) in p.affines() {
                io::save(dir.join(format!("{stage}.{layer}.weight.stt")), a.weight())?;
                let bias = Tensor::new(vec![a.bias().len()], a.bias().to_vec())?;
                io::save(dir.join(format!("{stage}.{layer}.bias.stt")), &bias)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: ParamsManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let affine = |stage: &str, layer: &str| -> Result<Affine> {
            let w = io::load(dir.join(format!("{stage}.{layer}.weight.stt")))?;
            let b = io::load(dir.join(format!("{stage}.{layer}.bias.stt")))?;
            Affine::new(w, b.into_data())
        };
        let packer = |stage: &str| -> Result<PackerParams> {
            let p = PackerParams {
                dim: m.dim,
                heads: m.heads,
                mlp_q: Mlp {
                    first: affine(stage, "mlp_q.0")?,
                    second: affine(stage, "mlp_q.1")?,
                    activation: m.nonlinearity,
                },
                mlp_kv: Mlp {
                    first: affine(stage, "mlp_kv.0")?,
                    second: affine(stage, "mlp_kv.1")?,
                    activation: m.nonlinearity,
                },
                value_projection: affine(stage, "value")?,
            };
            p.validate()?;
            Ok(p)
        };
        let spatial = if m.tied { None } else { Some(packer("spatial")?) };
        Self::new(packer("stage1")?, spatial, packer("temporal")?)
            .map_err(|e| Error::Format(format!("params in {}: {e}", dir.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StpOutput {
    /// `[k2, k2, n, D]`
    pub f_s: Option<Tensor>,
    /// `[k1, k1, sigma, D]`
    pub f_t: Option<Tensor>,
}

impl StpOutput {
    pub fn token_count(&self) -> usize {
        let cells = |t: &Option<Tensor>| t.as_ref().map_or(0, |t| t.len() / t.dims()[3]);
        cells(&self.f_s) + cells(&self.f_t)
    }

    /// Flattened tokens, temporal stream first.
    pub fn flatten(&self) -> Result<Tensor> {
        let streams: Vec<&Tensor> = [&self.f_t, &self.f_s].into_iter().flatten().collect();
        flatten_streams(&streams)
    }
}

/// Runs both streams and returns `(F_s, F_t)`.
pub fn stp_forward(v_hat: &Tensor, cfg: &StpConfig, params: &StpParams) -> Result<(Tensor, Tensor)> {
    let out = stp_forward_with(v_hat, cfg, params, StpBranches::Both, Exec::default())?;
    Ok((out.f_s.unwrap(), out.f_t.unwrap()))
}

pub fn stp_forward_with(
    v_hat: &Tensor,
    cfg: &StpConfig,
    params: &StpParams,
    branches: StpBranches,
    exec: Exec,
) -> Result<StpOutput> {
    cfg.validate()?;
    let expected = [cfg.w1, cfg.h1, cfg.n, params.dim()];
    if v_hat.dims() != expected {
        return Err(shape_err!(
            "input {:?} does not match config {expected:?}",
            v_hat.dims()
        ));
    }
    let f = packer_s_with(v_hat, cfg.k1, &params.stage1, exec)?;
    let f_s = match branches {
        StpBranches::TemporalOnly => None,
        _ => Some(packer_s_with(&f, cfg.k2, params.spatial(), exec)?),
    };
    let f_t = match branches {
        StpBranches::SpatialOnly => None,
        _ => Some(packer_t_with(&f, cfg.sigma, &params.temporal, exec)?),
    };
    Ok(StpOutput { f_s, f_t })
}

/// Rows of `[w, h, t, D]` streams, each stream frame by frame and row-major
/// over `(w, h)` within a frame.
fn flatten_streams(streams: &[&Tensor]) -> Result<Tensor> {
    let d = match streams.first() {
        Some(t) => t.dims()[3],
        None => return Err(shape_err!("nothing to flatten")),
    };
    let mut data = Vec::new();
    for s in streams {
        let &[w, h, n, sd] = s.dims() else {
            return Err(shape_err!("stream must be [w, h, t, D], got {:?}", s.dims()));
        };
        if sd != d {
            return Err(shape_err!("stream dims {sd} and {d} differ"));
        }
        for t in 0..n {
            for i in 0..w {
                for j in 0..h {
                    data.extend_from_slice(s.row(&[i, j, t]));
                }
            }
        }
    }
    let rows = data.len() / d;
    Tensor::new(vec![rows, d], data)
}

/// `F_t` rows followed by `F_s` rows.
pub fn flatten_concat(f_t: &Tensor, f_s: &Tensor) -> Result<Tensor> {
    flatten_streams(&[f_t, f_s])
}

/// Image features skip the packer: `[w, h, D] -> [w * h, D]`.
pub fn flatten_image(v_hat: &Tensor) -> Result<Tensor> {
    let &[w, h, d] = v_hat.dims() else {
        return Err(shape_err!("image features must be [w, h, D], got {:?}", v_hat.dims()));
    };
    v_hat.clone().reshape(&[w * h, d])
}

/// `n` frame indices spread evenly over `total` frames,
/// `round(i * (total - 1) / (n - 1))`; repeats frames when `total < n`.
pub fn sample_frame_indices(total: usize, n: usize) -> Result<Vec<usize>> {
    if total == 0 || n == 0 {
        return Err(domain_err!("cannot sample {n} frames from {total}"));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n)
        .map(|i| ((i * (total - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect())
}

//! Language-aligned positional embeddings.
//!
//! Every coordinate token has an input-embedding row `p` and an output-layer
//! row `p̂`. The positional tensor over the full anchor grid is
//!
//! ```text
//! rho[w, h, t] = (p̂_w + p_w)/2 + (p̂_h + p_h)/2 + (p̂_t + p_t)/2
//! ```
//!
//! which is then linearly resized (align-corners) onto the visual feature
//! grid and added to the features.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Axis, CoordToken, CoordVocab};
use crate::error::{shape_err, Error, Result};
use crate::numkit::{self, io, linear_interp_resize, softmax, Rng, Tensor};
use crate::par::{self, Exec};

/// Standard deviation of freshly initialized coordinate rows.
pub const INIT_STD: f64 = 0.02;

/// Initial values are snapped to multiples of `2^-40`. Sums and halvings of
/// such values are exact in `f64`, so the blended grid is exactly separable.
const INIT_GRID: f64 = 1099511627776.0; // 2^40

/// Input and output rows for every coordinate token, laid out as widths,
/// heights, then times (the same order as the extended vocabulary).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    input: Tensor,
    output: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct TablesHeader {
    layout: Vec<Axis>,
    m_w: usize,
    m_h: usize,
    m_t: usize,
    dim: usize,
}

impl EmbeddingTables {
    pub fn new(input: Tensor, output: Tensor) -> Result<Self> {
        if input.rank() != 2 || input.dims() != output.dims() {
            return Err(shape_err!(
                "embedding tables must be equal [rows, D] matrices, got {:?} and {:?}",
                input.dims(),
                output.dims()
            ));
        }
        Ok(Self { input, output })
    }

    pub fn zeros(vocab: &CoordVocab, dim: usize) -> Result<Self> {
        let z = Tensor::zeros(&[vocab.coord_token_count(), dim])?;
        Self::new(z.clone(), z)
    }

    /// Seeded Gaussian rows (std [`INIT_STD`]); input table drawn first.
    pub fn random(vocab: &CoordVocab, dim: usize, rng: &mut Rng) -> Result<Self> {
        let dims = [vocab.coord_token_count(), dim];
        let mut draw = || Tensor::from_fn(&dims, |_| (rng.normal(INIT_STD) * INIT_GRID).round() / INIT_GRID);
        let input = draw()?;
        let output = draw()?;
        Self::new(input, output)
    }

    pub fn rows(&self) -> usize {
        self.input.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.input.dims()[1]
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Same tables with every row scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            input: self.input.scale(alpha),
            output: self.output.scale(alpha),
        }
    }

    fn check_vocab(&self, vocab: &CoordVocab) -> Result<()> {
        if self.rows() != vocab.coord_token_count() {
            return Err(Error::Lookup(format!(
                "tables hold {} rows, vocabulary has {} coordinate tokens",
                self.rows(),
                vocab.coord_token_count()
            )));
        }
        Ok(())
    }

    fn lookup<'a>(&self, table: &'a Tensor, t: CoordToken, vocab: &CoordVocab) -> Result<&'a [f64]> {
        self.check_vocab(vocab)?;
        if !vocab.contains(t) {
            return Err(Error::Lookup(format!("no row for {t}")));
        }
        Ok(table.row(&[vocab.coord_offset(t)]))
    }

    pub fn input_row(&self, t: CoordToken, vocab: &CoordVocab) -> Result<&[f64]> {
        self.lookup(&self.input, t, vocab)
    }

    pub fn output_row(&self, t: CoordToken, vocab: &CoordVocab) -> Result<&[f64]> {
        self.lookup(&self.output, t, vocab)
    }

    pub fn save(&self, dir: impl AsRef<Path>, vocab: &CoordVocab) -> Result<()> {
        self.check_vocab(vocab)?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        io::save(dir.join("input.stt"), &self.input)?;
        io::save(dir.join("output.stt"), &self.output)?;
        let header = TablesHeader {
            layout: vec![Axis::Width, Axis::Height, Axis::Time],
            m_w: vocab.m_w,
            m_h: vocab.m_h,
            m_t: vocab.m_t,
            dim: self.dim(),
        };
        fs::write(dir.join("tables.json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    /// Loads tables written by [`EmbeddingTables::save`], returning the
    /// anchor counts recorded in the header.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, usize, usize, usize)> {
        let dir = dir.as_ref();
        let header: TablesHeader = serde_json::from_str(&fs::read_to_string(dir.join("tables.json"))?)?;
        if header.layout != [Axis::Width, Axis::Height, Axis::Time] {
            return Err(Error::Format(format!("unsupported row layout {:?}", header.layout)));
        }
        let tables = Self::new(io::load(dir.join("input.stt"))?, io::load(dir.join("output.stt"))?)?;
        if tables.rows() != header.m_w + header.m_h + header.m_t || tables.dim() != header.dim {
            return Err(Error::Format("table shape disagrees with header".into()));
        }
        Ok((tables, header.m_w, header.m_h, header.m_t))
    }
}

/// Positional tensor over the anchor grid, `[m_w, m_h, m_t, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTensor(Tensor);

impl RhoTensor {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dims()[3]
    }
}

/// `(p̂ + p) / 2` for each token of one axis, as `[m, D]` rows.
fn axis_blend(tables: &EmbeddingTables, vocab: &CoordVocab, axis: Axis) -> Result<Vec<Vec<f64>>> {
    (0..vocab.anchors(axis))
        .map(|i| {
            let t = CoordToken::new(axis, i);
            let p = tables.input_row(t, vocab)?;
            let p_hat = tables.output_row(t, vocab)?;
            Ok(p_hat.iter().zip(p).map(|(a, b)| (a + b) / 2.0).collect())
        })
        .collect()
}

pub fn build_rho(tables: &EmbeddingTables, vocab: &CoordVocab) -> Result<RhoTensor> {
    build_rho_with(tables, vocab, Exec::default())
}

pub fn build_rho_with(tables: &EmbeddingTables, vocab: &CoordVocab, exec: Exec) -> Result<RhoTensor> {
    vocab.validate()?;
    let width = axis_blend(tables, vocab, Axis::Width)?;
    let height = axis_blend(tables, vocab, Axis::Height)?;
    let time = axis_blend(tables, vocab, Axis::Time)?;
    let d = tables.dim();
    let (m_h, m_t) = (vocab.m_h, vocab.m_t);

    let mut data = vec![0.0; vocab.m_w * m_h * m_t * d];
    par::fill_chunks(exec, &mut data, m_h * m_t * d, |w, slab| {
        for h in 0..m_h {
            for t in 0..m_t {
                let cell = &mut slab[(h * m_t + t) * d..(h * m_t + t + 1) * d];
                for (k, c) in cell.iter_mut().enumerate() {
                    *c = width[w][k] + height[h][k] + time[t][k];
                }
            }
        }
    });
    Ok(RhoTensor(Tensor::new(vec![vocab.m_w, m_h, m_t, d], data)?))
}

/// Trilinear align-corners resize of the full grid to `[w1, h1, n, D]`.
pub fn downsample_rho(rho: &RhoTensor, w1: usize, h1: usize, n: usize) -> Result<Tensor> {
    linear_interp_resize(rho.tensor(), &[w1, h1, n], true)
}

/// Bilinear align-corners resize of the `t = 0` slice to `[w1, h1, D]`.
pub fn downsample_rho_image(rho: &RhoTensor, w1: usize, h1: usize) -> Result<Tensor> {
    if w1 == 0 || h1 == 0 {
        return Err(shape_err!("zero target extent ({w1}, {h1})"));
    }
    let src = rho.tensor();
    let (mw, mh, d) = (src.dims()[0], src.dims()[1], src.dims()[3]);
    let tap = |i: usize, from: usize, to: usize| -> (usize, usize, f64) {
        if from == 1 || to == 1 {
            return (0, 0, 0.0);
        }
        let pos = (i * (from - 1)) as f64 / (to - 1) as f64;
        let lo = (pos.floor() as usize).min(from - 1);
        (lo, (lo + 1).min(from - 1), pos - lo as f64)
    };
    let at = |w: usize, h: usize| src.row(&[w, h, 0]);

    let mut data = Vec::with_capacity(w1 * h1 * d);
    for i in 0..w1 {
        let (x0, x1, fx) = tap(i, mw, w1);
        for j in 0..h1 {
            let (y0, y1, fy) = tap(j, mh, h1);
            let (a, b, c, e) = (at(x0, y0), at(x0, y1), at(x1, y0), at(x1, y1));
            for k in 0..d {
                let top = (1.0 - fy) * a[k] + fy * b[k];
                let bottom = (1.0 - fy) * c[k] + fy * e[k];
                data.push((1.0 - fx) * top + fx * bottom);
            }
        }
    }
    Tensor::new(vec![w1, h1, d], data)
}

/// `v + rho_hat`.
pub fn apply_lape(v: &Tensor, rho_hat: &Tensor) -> Result<Tensor> {
    v.add(rho_hat)
}

/// Stacks ordinary-language rows `[V, D]` on top of the coordinate output
/// rows, giving the extended output layer `[V + m_w + m_h + m_t, D]`.
pub fn extended_output_layer(base: &Tensor, tables: &EmbeddingTables, vocab: &CoordVocab) -> Result<Tensor> {
    tables.check_vocab(vocab)?;
    if base.rank() != 2 || base.dims()[0] != vocab.base_vocab_size || base.dims()[1] != tables.dim() {
        return Err(shape_err!(
            "base rows {:?} do not match V = {} and D = {}",
            base.dims(),
            vocab.base_vocab_size,
            tables.dim()
        ));
    }
    let mut data = base.data().to_vec();
    data.extend_from_slice(tables.output().data());
    Tensor::new(vec![vocab.extended_size(), tables.dim()], data)
}

/// Next-token distribution `softmax(W_o h)`.
pub fn output_distribution(h: &[f64], w_o: &Tensor) -> Result<Vec<f64>> {
    if w_o.rank() != 2 || w_o.dims()[1] != h.len() {
        return Err(shape_err!(
            "output layer {:?} does not match feature length {}",
            w_o.dims(),
            h.len()
        ));
    }
    let column = Tensor::new(vec![h.len(), 1], h.to_vec())?;
    let logits = numkit::matmul(w_o, &column)?;
    Ok(softmax(logits.data()))
}

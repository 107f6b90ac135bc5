use super::dense::{check_shape, strides, DenseTensor};
use crate::error::{Error, Result};

/// Where a logical dimension lives in the physical `outer ++ inner` shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimMap {
    /// Split into a block index (outer axis) and an offset inside the block (inner axis).
    Split { outer: usize, inner: usize },
    /// Stored unsplit on a single physical axis.
    Plain(usize),
}

/// Physical layout of a blocked tensor plus its logical index mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedLayout {
    outer_shape: Vec<usize>,
    inner_shape: Vec<usize>,
    logical: Vec<DimMap>,
}

impl BlockedLayout {
    pub fn new(outer_shape: Vec<usize>, inner_shape: Vec<usize>, logical: Vec<DimMap>) -> Result<Self> {
        let physical: Vec<usize> = outer_shape.iter().chain(&inner_shape).copied().collect();
        check_shape(&physical)?;
        let mut used = vec![false; physical.len()];
        let mut claim = |axis: usize| -> Result<()> {
            match used.get_mut(axis) {
                Some(u) if !*u => {
                    *u = true;
                    Ok(())
                }
                _ => Err(Error::InvalidShape {
                    shape: physical.clone(),
                    reason: format!("physical axis {axis} missing or mapped twice"),
                }),
            }
        };
        for map in &logical {
            match *map {
                DimMap::Split { outer, inner } => {
                    if outer >= outer_shape.len() || inner < outer_shape.len() {
                        return Err(Error::InvalidShape {
                            shape: physical.clone(),
                            reason: format!("split ({outer}, {inner}) must pair an outer with an inner axis"),
                        });
                    }
                    claim(outer)?;
                    claim(inner)?;
                }
                DimMap::Plain(axis) => claim(axis)?,
            }
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidShape {
                shape: physical,
                reason: "every physical axis must be mapped".into(),
            });
        }
        Ok(Self {
            outer_shape,
            inner_shape,
            logical,
        })
    }

    /// `W[K][C] -> W[K_b][C_b][b_c][b_k]`.
    pub fn weight_2d(k: usize, c: usize, b_c: usize, b_k: usize) -> Result<Self> {
        let (k_b, c_b) = (blocks("K", k, b_k)?, blocks("C", c, b_c)?);
        Self::new(
            vec![k_b, c_b],
            vec![b_c, b_k],
            vec![DimMap::Split { outer: 0, inner: 3 }, DimMap::Split { outer: 1, inner: 2 }],
        )
    }

    /// `I[N][C][H][W] -> I[N][C_b][H][W][b_c]`.
    pub fn conv_input(n: usize, c: usize, h: usize, w: usize, b_c: usize) -> Result<Self> {
        let c_b = blocks("C", c, b_c)?;
        Self::new(
            vec![n, c_b, h, w],
            vec![b_c],
            vec![
                DimMap::Plain(0),
                DimMap::Split { outer: 1, inner: 4 },
                DimMap::Plain(2),
                DimMap::Plain(3),
            ],
        )
    }

    /// `W[K][C][R][S] -> W[K_b][C_b][R][S][b_c][b_k]`.
    pub fn conv_weight(k: usize, c: usize, r: usize, s: usize, b_c: usize, b_k: usize) -> Result<Self> {
        let (k_b, c_b) = (blocks("K", k, b_k)?, blocks("C", c, b_c)?);
        Self::new(
            vec![k_b, c_b, r, s],
            vec![b_c, b_k],
            vec![
                DimMap::Split { outer: 0, inner: 5 },
                DimMap::Split { outer: 1, inner: 4 },
                DimMap::Plain(2),
                DimMap::Plain(3),
            ],
        )
    }

    /// `O[N][K][P][Q] -> O[N][K_b][P][Q][b_k]`; same shape family as the input layout.
    pub fn conv_output(n: usize, k: usize, p: usize, q: usize, b_k: usize) -> Result<Self> {
        Self::conv_input(n, k, p, q, b_k)
    }

    /// `X[N][C] -> X[N_b][C_b][b_n][b_c]`.
    pub fn fc_activation(n: usize, c: usize, b_n: usize, b_c: usize) -> Result<Self> {
        let (n_b, c_b) = (blocks("N", n, b_n)?, blocks("C", c, b_c)?);
        Self::new(
            vec![n_b, c_b],
            vec![b_n, b_c],
            vec![DimMap::Split { outer: 0, inner: 2 }, DimMap::Split { outer: 1, inner: 3 }],
        )
    }

    pub fn outer_shape(&self) -> &[usize] {
        &self.outer_shape
    }

    pub fn inner_shape(&self) -> &[usize] {
        &self.inner_shape
    }

    pub fn logical_dims(&self) -> &[DimMap] {
        &self.logical
    }

    pub fn physical_shape(&self) -> Vec<usize> {
        self.outer_shape.iter().chain(&self.inner_shape).copied().collect()
    }

    fn extent(&self, axis: usize) -> usize {
        if axis < self.outer_shape.len() {
            self.outer_shape[axis]
        } else {
            self.inner_shape[axis - self.outer_shape.len()]
        }
    }

    pub fn logical_shape(&self) -> Vec<usize> {
        self.logical
            .iter()
            .map(|m| match *m {
                DimMap::Split { outer, inner } => self.extent(outer) * self.extent(inner),
                DimMap::Plain(axis) => self.extent(axis),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.physical_shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical coordinate of a logical coordinate.
    pub fn physical_index(&self, logical: &[usize]) -> Option<Vec<usize>> {
        if logical.len() != self.logical.len() {
            return None;
        }
        let mut phys = vec![0; self.outer_shape.len() + self.inner_shape.len()];
        for (&x, (map, ext)) in logical.iter().zip(self.logical.iter().zip(self.logical_shape())) {
            if x >= ext {
                return None;
            }
            match *map {
                DimMap::Split { outer, inner } => {
                    let blk = self.extent(inner);
                    phys[outer] = x / blk;
                    phys[inner] = x % blk;
                }
                DimMap::Plain(axis) => phys[axis] = x,
            }
        }
        Some(phys)
    }

    /// Linear offset into the physical buffer of a logical coordinate.
    pub fn offset(&self, logical: &[usize]) -> Option<usize> {
        let phys = self.physical_index(logical)?;
        let st = strides(&self.physical_shape());
        Some(phys.iter().zip(&st).map(|(i, s)| i * s).sum())
    }

    /// Per logical dimension, the physical offset contribution of each coordinate.
    fn offset_tables(&self) -> Vec<Vec<usize>> {
        let st = strides(&self.physical_shape());
        self.logical
            .iter()
            .zip(self.logical_shape())
            .map(|(map, ext)| match *map {
                DimMap::Split { outer, inner } => {
                    let blk = self.extent(inner);
                    (0..ext).map(|x| (x / blk) * st[outer] + (x % blk) * st[inner]).collect()
                }
                DimMap::Plain(axis) => (0..ext).map(|x| x * st[axis]).collect(),
            })
            .collect()
    }

    /// Calls `f(logical_linear, physical_offset)` for every element, logical row-major order.
    fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        let tables = self.offset_tables();
        let shape = self.logical_shape();
        let rank = shape.len();
        let last = &tables[rank - 1];
        let mut idx = vec![0usize; rank];
        let outer_count: usize = shape[..rank - 1].iter().product();
        let mut lin = 0;
        for _ in 0..outer_count {
            let row: usize = (0..rank - 1).map(|d| tables[d][idx[d]]).sum();
            for &off in last {
                f(lin, row + off);
                lin += 1;
            }
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

fn blocks(dim: &'static str, extent: usize, block: usize) -> Result<usize> {
    if block == 0 || !extent.is_multiple_of(block) {
        return Err(Error::Divisibility { dim, extent, block });
    }
    Ok(extent / block)
}

/// Effective block factor: the default when it fits, else the extent itself.
pub fn clamp_block(extent: usize, block: usize) -> usize {
    block.min(extent).max(1)
}

/// FP32 tensor stored in a [`BlockedLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedTensor {
    layout: BlockedLayout,
    data: Vec<f32>,
}

impl BlockedTensor {
    pub fn zeros(layout: BlockedLayout) -> Self {
        let len = layout.len();
        Self {
            layout,
            data: vec![0.0; len],
        }
    }

    pub fn from_physical(layout: BlockedLayout, data: Vec<f32>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::ShapeMismatch {
                context: "BlockedTensor::from_physical",
                expected: layout.physical_shape(),
                actual: vec![data.len()],
            });
        }
        Ok(Self { layout, data })
    }

    /// Reorders a dense tensor whose shape is the layout's logical shape.
    pub fn from_dense(dense: &DenseTensor, layout: BlockedLayout) -> Result<Self> {
        let expected = layout.logical_shape();
        if dense.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "BlockedTensor::from_dense",
                expected,
                actual: dense.shape().to_vec(),
            });
        }
        let src = dense.data();
        let mut data = vec![0.0; src.len()];
        layout.for_each_pair(|lin, phys| data[phys] = src[lin]);
        Ok(Self { layout, data })
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut out = vec![0.0; self.data.len()];
        self.layout.for_each_pair(|lin, phys| out[lin] = self.data[phys]);
        DenseTensor::new(self.layout.logical_shape(), out).expect("layout shapes are validated")
    }

    pub fn layout(&self) -> &BlockedLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, logical: &[usize]) -> Option<f32> {
        self.layout.offset(logical).map(|o| self.data[o])
    }

    /// Physical view as a dense tensor of shape `outer ++ inner`.
    pub fn physical(&self) -> DenseTensor {
        DenseTensor::new(self.layout.physical_shape(), self.data.clone()).expect("validated")
    }
}

/// Blocks a `[K][C]` weight matrix into `[K_b][C_b][b_c][b_k]`.
pub fn block_weight_2d(w: &DenseTensor, b_c: usize, b_k: usize) -> Result<BlockedTensor> {
    let &[k, c] = w.shape() else {
        return Err(Error::InvalidShape {
            shape: w.shape().to_vec(),
            reason: "weight must be [K][C]".into(),
        });
    };
    BlockedTensor::from_dense(w, BlockedLayout::weight_2d(k, c, b_c, b_k)?)
}

/// Blocks conv input `[N][C][H][W]` and weight `[K][C][R][S]` into the direct-convolution
/// layouts. Block factors larger than the channel extent are clamped to it.
pub fn block_conv_tensors(
    input: &DenseTensor,
    weight: &DenseTensor,
    b_c: usize,
    b_k: usize,
) -> Result<(BlockedTensor, BlockedTensor)> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::InvalidShape {
            shape: input.shape().to_vec(),
            reason: "conv input must be [N][C][H][W]".into(),
        });
    };
    let &[k, wc, r, s] = weight.shape() else {
        return Err(Error::InvalidShape {
            shape: weight.shape().to_vec(),
            reason: "conv weight must be [K][C][R][S]".into(),
        });
    };
    if wc != c {
        return Err(Error::ShapeMismatch {
            context: "block_conv_tensors channels",
            expected: vec![c],
            actual: vec![wc],
        });
    }
    let b_c = clamp_block(c, b_c);
    let b_k = clamp_block(k, b_k);
    let bi = BlockedTensor::from_dense(input, BlockedLayout::conv_input(n, c, h, w, b_c)?)?;
    let bw = BlockedTensor::from_dense(weight, BlockedLayout::conv_weight(k, c, r, s, b_c, b_k)?)?;
    Ok((bi, bw))
}

/// `(N, C_b, H, W, b_c)` of a conv-input-shaped tensor.
fn nchwc_dims(t: &BlockedTensor) -> Result<[usize; 5]> {
    let l = t.layout();
    match (l.outer_shape(), l.inner_shape()) {
        (&[n, c_b, h, w], &[b_c])
            if *l == BlockedLayout::conv_input(n, c_b * b_c, h, w, b_c).expect("non-zero") =>
        {
            Ok([n, c_b, h, w, b_c])
        }
        _ => Err(Error::InvalidShape {
            shape: l.physical_shape(),
            reason: "expected an [N][C_b][H][W][b_c] tensor".into(),
        }),
    }
}

/// Copies `I[N][C_b][H][W][b_c]` into a zero halo of `pad_h` rows and `pad_w` columns.
pub fn pad_spatial(input: &BlockedTensor, pad_h: usize, pad_w: usize) -> Result<BlockedTensor> {
    let [n, c_b, h, w, b_c] = nchwc_dims(input)?;
    if pad_h == 0 && pad_w == 0 {
        return Ok(input.clone());
    }
    let (hp, wp) = (h + 2 * pad_h, w + 2 * pad_w);
    let layout = BlockedLayout::conv_input(n, c_b * b_c, hp, wp, b_c)?;
    let mut out = vec![0.0; layout.len()];
    let src = input.data();
    let row = w * b_c;
    for plane in 0..n * c_b {
        for y in 0..h {
            let s = (plane * h + y) * row;
            let d = ((plane * hp + y + pad_h) * wp + pad_w) * b_c;
            out[d..d + row].copy_from_slice(&src[s..s + row]);
        }
    }
    BlockedTensor::from_physical(layout, out)
}

/// Inverse of [`pad_spatial`]: drops the halo.
pub fn crop_spatial(input: &BlockedTensor, pad_h: usize, pad_w: usize) -> Result<BlockedTensor> {
    let [n, c_b, hp, wp, b_c] = nchwc_dims(input)?;
    if hp <= 2 * pad_h || wp <= 2 * pad_w {
        return Err(Error::InvalidShape {
            shape: input.layout().physical_shape(),
            reason: format!("cannot crop {pad_h}x{pad_w} halo"),
        });
    }
    let (h, w) = (hp - 2 * pad_h, wp - 2 * pad_w);
    let layout = BlockedLayout::conv_input(n, c_b * b_c, h, w, b_c)?;
    let mut out = vec![0.0; layout.len()];
    let src = input.data();
    let row = w * b_c;
    for plane in 0..n * c_b {
        for y in 0..h {
            let d = (plane * h + y) * row;
            let s = ((plane * hp + y + pad_h) * wp + pad_w) * b_c;
            out[d..d + row].copy_from_slice(&src[s..s + row]);
        }
    }
    BlockedTensor::from_physical(layout, out)
}

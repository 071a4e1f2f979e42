//! Dense row-major `f32` tensors and the strided kernels used by the
//! broadcasting and reduction ops.

use std::fmt;
use std::sync::Arc;

/// Immutable, cheaply clonable dense tensor.
///
/// Storage is shared behind an `Arc`; mutation goes through
/// [`Tensor::data_mut`] which copies on write.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data[..8]", &preview)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Panics if `data.len()` does not match the shape.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f32) -> Self {
        Self::new(&[], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise binary op with numpy-style broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Tensor::new(&self.shape, data);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!(
                "shapes {:?} and {:?} are not broadcast compatible",
                self.shape, other.shape
            )
        });
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut out = vec![0.0f32; numel(&out_shape)];
        let (a, b) = (self.data(), other.data());
        for_each_pair(&out_shape, &sa, &sb, |lin, ia, ib| {
            out[lin] = f(a[ia], b[ib]);
        });
        Tensor::new(&out_shape, out)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let compatible = broadcast_shape(&self.shape, shape).is_some_and(|s| s == shape);
        assert!(
            compatible,
            "cannot broadcast {:?} to {:?}",
            self.shape, shape
        );
        let sa = broadcast_strides(&self.shape, shape);
        let zero = vec![0; shape.len()];
        let mut out = vec![0.0f32; numel(shape)];
        let a = self.data();
        for_each_pair(shape, &sa, &zero, |lin, ia, _| out[lin] = a[ia]);
        Tensor::new(shape, out)
    }

    /// Sums over broadcast dimensions so the result has `shape`.
    ///
    /// `shape` must broadcast to `self.shape()`; accumulation is done in `f64`
    /// in a fixed order.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let compatible = broadcast_shape(shape, &self.shape).is_some_and(|s| s == self.shape);
        assert!(
            compatible,
            "cannot sum {:?} down to {:?}",
            self.shape, shape
        );
        let so = broadcast_strides(shape, &self.shape);
        let si = contiguous_strides(&self.shape);
        let mut acc = vec![0.0f64; numel(shape)];
        let a = self.data();
        for_each_pair(&self.shape, &si, &so, |_, ia, io| acc[io] += a[ia] as f64);
        Tensor::new(shape, acc.into_iter().map(|v| v as f32).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies axis-0 slices `[start, start + len)` into a new tensor.
    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor {
        assert!(self.rank() >= 1 && start + len <= self.shape[0]);
        let inner = numel(&self.shape[1..]);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(
            &shape,
            self.data[start * inner..(start + len) * inner].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for t in items {
            assert_eq!(t.shape, inner, "stack of mismatched shapes");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        Tensor::new(&shape, data)
    }

    /// Concatenates along axis 0.
    pub fn concat_batch(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "concat of zero tensors");
        let inner = items[0].shape[1..].to_vec();
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            assert_eq!(&t.shape[1..], inner.as_slice(), "concat of mismatched shapes");
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&inner);
        Tensor::new(&shape, data)
    }
}

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (i, &d) in shape.iter().enumerate().rev() {
        strides[i] = acc;
        acc *= d;
    }
    strides
}

/// Right-aligned numpy broadcasting.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `target` (0 on broadcast axes).
pub fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Iterates `shape` in row-major order, yielding the linear index and the
/// offsets into two strided operands. Adjacent axes that are contiguous for
/// both operands are merged so the inner loop stays long.
fn for_each_pair(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    if shape.is_empty() {
        f(0, 0, 0);
        return;
    }
    if shape.contains(&0) {
        return;
    }
    let mut dims: Vec<usize> = Vec::with_capacity(shape.len());
    let mut stra: Vec<usize> = Vec::with_capacity(shape.len());
    let mut strb: Vec<usize> = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        if shape[i] == 1 {
            continue;
        }
        if let Some(&last) = dims.last() {
            let j = dims.len() - 1;
            if stra[j] == sa[i] * shape[i] && strb[j] == sb[i] * shape[i] {
                dims[j] = last * shape[i];
                stra[j] = sa[i];
                strb[j] = sb[i];
                continue;
            }
        }
        dims.push(shape[i]);
        stra.push(sa[i]);
        strb.push(sb[i]);
    }
    if dims.is_empty() {
        f(0, 0, 0);
        return;
    }
    let depth = dims.len();
    let inner = dims[depth - 1];
    let (ia_step, ib_step) = (stra[depth - 1], strb[depth - 1]);
    let mut counter = vec![0usize; depth - 1];
    let mut lin = 0usize;
    loop {
        let mut base_a = 0;
        let mut base_b = 0;
        for k in 0..depth - 1 {
            base_a += counter[k] * stra[k];
            base_b += counter[k] * strb[k];
        }
        for t in 0..inner {
            f(lin, base_a + t * ia_step, base_b + t * ib_step);
            lin += 1;
        }
        let mut k = depth - 1;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            counter[k] += 1;
            if counter[k] < dims[k] {
                break;
            }
            counter[k] = 0;
        }
    }
}

use crate::diffcore::Scalar;
use crate::error::{Error, Result};

/// Dense row-major array.
///
/// A zero-dimensional tensor (empty shape) holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::Contract(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = numel_of(&shape);
        Tensor::from_parts(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::from_f64(x)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len());
        let strides = strides_of(&self.shape);
        let offset: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[offset]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel_of(&shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        )
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Matrix product with optional batching.
    ///
    /// `self` is `[..., m, k]`. `rhs` is either `[k, n]`, shared across all
    /// leading dimensions, or `[..., k, n]` with the same leading dimensions.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (a, b) = (&self.shape, &rhs.shape);
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let mut out_shape = a[..a.len() - 1].to_vec();
        out_shape.push(n);
        if b.len() == 2 {
            let rows = self.numel() / k;
            let mut out = vec![S::zero(); rows * n];
            gemm(&self.data, &rhs.data, &mut out, rows, k, n);
            return Ok(Tensor::from_parts(out_shape, out));
        }
        if a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(Error::shape("matmul", a, b));
        }
        let batch = numel_of(&a[..a.len() - 2]);
        let mut out = vec![S::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Self {
        let nd = self.ndim();
        assert!(nd >= 2, "transpose_last needs ndim >= 2");
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm).expect("valid permutation")
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd
            || perm
                .iter()
                .any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape("permute", &self.shape, perm));
        }
        let in_strides = strides_of(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; nd];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            out.push(self.data[offset]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                offset += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape[axis] {
            return Err(Error::Contract(format!(
                "narrow(axis={axis}, start={start}, len={len}) on shape {:?}",
                self.shape
            )));
        }
        let outer = numel_of(&self.shape[..axis]);
        let inner = numel_of(&self.shape[axis + 1..]);
        let extent = self.shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_parts(shape, out))
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return Err(Error::shape("concat", &first.shape, &[axis]));
        }
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
        }
        let outer = numel_of(&first.shape[..axis]);
        let inner = numel_of(&first.shape[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_parts(shape, out))
    }

    /// Sums a broadcast result back down to `shape`.
    pub(crate) fn reduce_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let plan = BroadcastPlan::new(&self.shape, shape);
        let mut out = vec![S::zero(); numel_of(shape)];
        plan.for_each(|o, src| out[src] += self.data[o]);
        Tensor::from_parts(shape.to_vec(), out)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, i-k-j order.
pub(crate) fn gemm<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Numpy-style broadcast of two shapes, right aligned.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd {
            a[i + a.len() - nd]
        } else {
            1
        };
        let db = if i + b.len() >= nd {
            b[i + b.len() - nd]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps each linear index of a broadcast output shape to the linear index of
/// a (smaller) source operand.
pub(crate) struct BroadcastPlan {
    out_shape: Vec<usize>,
    src_strides: Vec<usize>,
}

impl BroadcastPlan {
    pub(crate) fn new(out_shape: &[usize], src_shape: &[usize]) -> Self {
        let nd = out_shape.len();
        let own = strides_of(src_shape);
        let src_strides = (0..nd)
            .map(|i| {
                if i + src_shape.len() < nd {
                    0
                } else {
                    let j = i + src_shape.len() - nd;
                    if src_shape[j] == 1 && out_shape[i] != 1 {
                        0
                    } else {
                        own[j]
                    }
                }
            })
            .collect();
        BroadcastPlan {
            out_shape: out_shape.to_vec(),
            src_strides,
        }
    }

    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let nd = self.out_shape.len();
        let total = numel_of(&self.out_shape);
        let mut idx = vec![0usize; nd];
        let mut src = 0usize;
        for o in 0..total {
            f(o, src);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                src += self.src_strides[ax];
                if idx[ax] < self.out_shape[ax] {
                    break;
                }
                src -= self.src_strides[ax] * self.out_shape[ax];
                idx[ax] = 0;
            }
        }
    }

    pub(crate) fn index_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(numel_of(&self.out_shape));
        self.for_each(|_, s| map.push(s));
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_small_fixture() {
        let a = Tensor::<f64>::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 2], &[5., 6., 7., 8.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(
            c.data(),
            naive_matmul(a.data(), b.data(), 2, 2, 2).as_slice()
        );
        assert_eq!(c.data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f32>::from_f64(
            [3, 4],
            &(0..12).map(|x| x as f64 * 0.7 - 2.0).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a.matmul(&Tensor::eye(4)).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([4, 5]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn batched_matmul_matches_per_batch() {
        let a: Vec<f64> = (0..24).map(|x| (x as f64).sin()).collect();
        let b: Vec<f64> = (0..24).map(|x| (x as f64).cos()).collect();
        let ta = Tensor::<f64>::from_f64([2, 3, 4], &a).unwrap();
        let tb = Tensor::<f64>::from_f64([2, 4, 3], &b).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for batch in 0..2 {
            let want = naive_matmul(&a[batch * 12..], &b[batch * 12..], 3, 4, 3);
            assert_eq!(&c.data()[batch * 9..batch * 9 + 9], want.as_slice());
        }
    }

    #[test]
    fn permute_roundtrip_and_values() {
        let t = Tensor::<f32>::from_f64([2, 3, 4], &(0..24).map(|x| x as f64).collect::<Vec<_>>())
            .unwrap();
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn narrow_concat_inverse() {
        let t = Tensor::<f32>::from_f64([2, 5, 3], &(0..30).map(|x| x as f64).collect::<Vec<_>>())
            .unwrap();
        let a = t.narrow(1, 0, 2).unwrap();
        let b = t.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), t);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 3], &[2, 5, 1]), Some(vec![2, 5, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        let g = Tensor::<f64>::ones([4, 3]);
        assert_eq!(g.reduce_to(&[3]).data(), &[4.0, 4.0, 4.0]);
        assert_eq!(g.reduce_to(&[4, 1]).data(), &[3.0; 4]);
    }

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new([0, 2], vec![]).is_err());
        assert_eq!(Tensor::<f32>::scalar(1.5).numel(), 1);
    }
}

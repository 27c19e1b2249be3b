//! Dense row-major tensors and the `TNSR` binary encoding.

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::{DType, Scalar};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

/// Dense tensor, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("extents must be positive, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        let data = rows.iter().flatten().map(|&v| S::lit(v)).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(S) -> S) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other`; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "cannot add {:?} into {:?}",
                other.shape,
                self.shape
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }

    /// Row-major matrix product with a fixed left-to-right summation order.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(shape_err!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape,
                rhs.shape
            ));
        }
        let (p, q) = (self.shape[0], self.shape[1]);
        let (q2, r) = (rhs.shape[0], rhs.shape[1]);
        if q != q2 {
            return Err(shape_err!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape,
                rhs.shape
            ));
        }
        let mut out = vec![S::zero(); p * r];
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let a = self.data[i * q + k];
                let b = &rhs.data[k * r..(k + 1) * r];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Tensor::new(vec![p, r], out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&S::DTYPE.tag().to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.reserve(self.data.len() * S::DTYPE.width());
        for &v in &self.data {
            v.write_le(out);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one tensor from the front of `bytes`, converting from the stored
    /// element type if it differs from `S`. Returns the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = TensorHeader::parse(bytes)?;
        let width = header.dtype.width();
        let n: usize = header.shape.iter().product();
        let start = header.len;
        let end = start + n * width;
        if bytes.len() < end {
            return Err(Error::Format(format!(
                "tensor payload truncated: need {} bytes, have {}",
                end,
                bytes.len()
            )));
        }
        let raw = &bytes[start..end];
        let data: Vec<S> = match header.dtype {
            dt if dt == S::DTYPE => raw.chunks_exact(width).map(S::read_le).collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| S::lit(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| S::lit(f64::read_le(c)))
                .collect(),
        };
        Ok((Tensor::new(header.shape, data)?, end))
    }

    /// Like [`Tensor::decode`] but rejects a stored element type other than `S`.
    pub fn decode_exact(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = TensorHeader::parse(bytes)?;
        if header.dtype != S::DTYPE {
            return Err(Error::Format(format!(
                "stored dtype {} does not match requested {}",
                header.dtype.name(),
                S::DTYPE.name()
            )));
        }
        Self::decode(bytes)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (t, used) = Self::decode(&bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after tensor",
                path.display(),
                bytes.len() - used
            )));
        }
        Ok(t)
    }
}

#[derive(Debug)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Header length in bytes.
    pub len: usize,
}

impl TensorHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::Format("tensor header truncated".into()))
        };
        if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
            return Err(Error::Format("missing TNSR magic".into()));
        }
        let version = u32_at(4)?;
        if version != TENSOR_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported tensor version {version}"
            )));
        }
        let tag = u32_at(8)?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
        let rank = u32_at(12)? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut off = 16;
        for _ in 0..rank {
            let b = bytes
                .get(off..off + 8)
                .ok_or_else(|| Error::Format("tensor extents truncated".into()))?;
            shape.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            off += 8;
        }
        Ok(TensorHeader {
            dtype,
            shape,
            len: off,
        })
    }
}

/// `ln Σ exp(xᵢ)` with a max shift. All `-inf` inputs give exactly `-inf`.
pub fn reduce_logsumexp<S: Scalar>(xs: &[S]) -> Result<S> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("logsumexp of an empty slice".into()));
    }
    Ok(logsumexp_unchecked(xs))
}

#[inline]
pub(crate) fn logsumexp_unchecked<S: Scalar>(xs: &[S]) -> S {
    let m = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    let s: S = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Two-term log-add.
#[inline]
pub(crate) fn log_add<S: Scalar>(a: S, b: S) -> S {
    let m = a.max(b);
    if m == S::neg_infinity() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = m(&[vec![1., 2.], vec![3., 4.]]);
        let id = m(&[vec![1., 0.], vec![0., 1.]]);
        assert_eq!(a.matmul(&id).unwrap(), a);
    }

    #[test]
    fn matmul_column() {
        let a = m(&[vec![1., 2.], vec![3., 4.]]);
        let b = m(&[vec![0.], vec![1.]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[vec![2.], vec![4.]]));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn map_cases() {
        let x = m(&[vec![1., -2.]]);
        assert_eq!(x.map(|v| v), x);
        assert_eq!(x.map(|_| 0.0), Tensor::zeros(&[1, 2]));
        assert_eq!(x.map(|v| -v), m(&[vec![-1., 2.]]));
    }

    #[test]
    fn logsumexp_examples() {
        let q = 0.25f64.ln();
        let r = reduce_logsumexp(&[q, q, q]).unwrap();
        assert!((r - 0.75f64.ln()).abs() < 1e-15);
        let ninf = f64::NEG_INFINITY;
        assert_eq!(reduce_logsumexp(&[ninf, ninf]).unwrap(), ninf);
        assert_eq!(reduce_logsumexp(&[0.0f64]).unwrap(), 0.0);
        assert!(reduce_logsumexp::<f64>(&[]).is_err());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn encode_layout() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let b = t.encode();
        assert_eq!(&b[..4], b"TNSR");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 2);
        assert_eq!(b.len(), 32 + 8);
        let (back, used) = Tensor::<f64>::decode(&b).unwrap();
        assert_eq!(used, b.len());
        assert_eq!(back.data(), &[1.0, -1.0]);
        assert!(Tensor::<f64>::decode_exact(&b).is_err());
    }

    proptest! {
        #[test]
        fn map_preserves_shape(shape in proptest::collection::vec(1usize..5, 1..4)) {
            let t = Tensor::<f64>::from_fn(&shape, |i| i as f64);
            let u = t.map(|v| v * 2.0 + 1.0);
            prop_assert_eq!(u.shape(), t.shape());
        }

        #[test]
        fn logsumexp_bounds(xs in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let r = reduce_logsumexp(&xs).unwrap();
            prop_assert!(r >= mx - 1e-12);
            prop_assert!(r <= mx + (xs.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn matmul_associative(seed in 0u64..1000, p in 1usize..4, q in 1usize..4, r in 1usize..4, s in 1usize..4) {
            let mut k = seed;
            let mut next = move || { k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((k >> 33) as f64 / (1u64 << 31) as f64) - 0.5 };
            let a = Tensor::<f64>::from_fn(&[p, q], |_| next());
            let b = Tensor::<f64>::from_fn(&[q, r], |_| next());
            let c = Tensor::<f64>::from_fn(&[r, s], |_| next());
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn encode_decode_roundtrip(shape in proptest::collection::vec(1usize..4, 1..4), seed in any::<u32>()) {
            let t = Tensor::<f32>::from_fn(&shape, |i| (i as f32 + seed as f32).sin());
            let (back, _) = Tensor::<f32>::decode_exact(&t.encode()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}

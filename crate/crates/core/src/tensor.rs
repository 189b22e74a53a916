//! Dense row-major tensors and their portable binary encoding:
//! `[rank: u32][dims: u32 …][payload: f32 …]`, all little-endian.
//!
//! Values are held as `f64` in memory and written as `f32`, so a tensor that
//! went through [`Tensor::round_to_f32`] (or was decoded) encodes losslessly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![value; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of length `dims[1..].product()` along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let inner: usize = self.dims[1..].iter().product();
        &self.data[i * inner..(i + 1) * inner]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", self.data[i]))),
            None => Ok(()),
        }
    }

    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }

    /// Concatenates tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::ShapeMismatch("cannot stack zero tensors".into()))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.dims != first.dims {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    t.dims, first.dims
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { dims, data })
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 * self.dims.len() + 4 * self.data.len()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }

    /// Decodes one tensor from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Tensor, usize)> {
        let mut r = Reader::new(bytes);
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let data = r.f32s(n)?;
        Ok((Tensor { dims, data }, r.pos))
    }
}

/// Little-endian cursor that reports short reads as truncation errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "need {n} bytes at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("payload of {n} values overflows")))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let mut t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.1, 3.0, 1e-3, 7.0]).unwrap();
        t.round_to_f32();
        let mut buf = Vec::new();
        t.encode(&mut buf);
        assert_eq!(buf.len(), t.encoded_len());
        let (back, used) = Tensor::decode(&buf).unwrap();
        assert_eq!(used, buf.len());
        assert_eq!(back, t);
    }

    #[test]
    fn decode_reports_truncation() {
        let t = Tensor::zeros(vec![4]);
        let mut buf = Vec::new();
        t.encode(&mut buf);
        buf.pop();
        assert!(matches!(Tensor::decode(&buf), Err(Error::Truncated(_))));
    }

    #[test]
    fn shape_is_checked() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let a = Tensor::zeros(vec![2]);
        let b = Tensor::zeros(vec![3]);
        assert!(Tensor::stack(&[&a, &b]).is_err());
        let s = Tensor::stack(&[&a, &a]).unwrap();
        assert_eq!(s.dims(), &[2, 2]);
    }
}

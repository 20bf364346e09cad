use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

/// Dense `[batch, channel, height, width]` array with a same-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
            grad: vec![0.0; shape.len()],
        }
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        let grad = vec![0.0; data.len()];
        Ok(Self { shape, data, grad })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Values and gradient buffer borrowed together.
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.data, &mut self.grad)
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn grad_plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.grad[start..start + p]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor4, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Selects batch elements by index, in order.
    pub fn select_batch(&self, indices: &[usize]) -> Tensor4 {
        let per = self.shape.c * self.shape.plane();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor4::from_vec(
            Shape4 {
                n: indices.len(),
                ..self.shape
            },
            data,
        )
        .expect("sizes agree")
    }
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("nothing to concatenate"))?;
    let s0 = first.shape;
    for p in parts {
        let s = p.shape;
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::shape(format!("concat {s} with {s0}")));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape.c).sum();
    let out_shape = s0.with_channels(c);
    let mut data = Vec::with_capacity(out_shape.len());
    let plane = s0.plane();
    for n in 0..s0.n {
        for p in parts {
            let per = p.shape.c * plane;
            data.extend_from_slice(&p.data[n * per..(n + 1) * per]);
        }
    }
    Tensor4::from_vec(out_shape, data)
}

/// Adjoint of [`concat_channels`]: accumulates slices of `out.grad` into each part.
pub fn split_channels_backward(parts: &mut [&mut Tensor4], out: &Tensor4) -> Result<()> {
    let s0 = out.shape;
    let c: usize = parts.iter().map(|p| p.shape.c).sum();
    if c != s0.c {
        return Err(Error::shape(format!("split of {s0} into {c} channels")));
    }
    let plane = s0.plane();
    let mut offset = 0;
    for p in parts.iter_mut() {
        let pc = p.shape.c;
        for n in 0..s0.n {
            let src = &out.grad[(n * s0.c + offset) * plane..(n * s0.c + offset + pc) * plane];
            let dst = &mut p.grad[n * pc * plane..(n + 1) * pc * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        offset += pc;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_nchw() {
        let t =
            Tensor4::from_vec(Shape4::new(2, 3, 2, 2), (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(1, 2, 1, 0), 22.0);
        assert_eq!(t.plane(0, 1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn concat_and_split_are_adjoint() {
        let a = Tensor4::from_vec(Shape4::new(2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b =
            Tensor4::from_vec(Shape4::new(2, 2, 1, 2), (10..18).map(f64::from).collect()).unwrap();
        let mut out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), Shape4::new(2, 3, 1, 2));
        assert_eq!(out.plane(1, 0), &[3.0, 4.0]);
        assert_eq!(out.plane(1, 2), &[16.0, 17.0]);
        out.grad = out.data().to_vec();
        let (mut a2, mut b2) = (a.clone(), b.clone());
        split_channels_backward(&mut [&mut a2, &mut b2], &out).unwrap();
        assert_eq!(a2.grad, a.data());
        assert_eq!(b2.grad, b.data());
    }
}

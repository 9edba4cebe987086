use crate::features::FeatureMap;

use super::NnError;

/// Rank-3 activation tensor, `(height, width, channels)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != h * w * c {
            return Err(NnError::Shape(format!(
                "{} values for a {h}x{w}x{c} tensor",
                data.len()
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f64) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn from_feature(feature: &FeatureMap) -> Self {
        let (h, w, c) = feature.shape();
        Self {
            h,
            w,
            c,
            data: feature.values().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
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

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.w + w) * self.c + c
    }

    #[inline]
    pub fn at(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: f64) {
        let i = self.index(h, w, c);
        self.data[i] = v;
    }

    /// Pixel `(h, w)` as a channel slice.
    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[f64] {
        let start = (h * self.w + w) * self.c;
        &self.data[start..start + self.c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.shape() != other.shape() {
            return Err(NnError::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Tensor {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Split along the height (filter-bank) axis into equal lower and upper halves.
pub fn split_frequency(x: &Tensor) -> Result<(Tensor, Tensor), NnError> {
    if x.h % 2 != 0 {
        return Err(NnError::Shape(format!(
            "cannot split odd height {} into equal halves",
            x.h
        )));
    }
    let half = x.h / 2;
    let cut = half * x.w * x.c;
    let low = Tensor::from_vec(half, x.w, x.c, x.data[..cut].to_vec())?;
    let high = Tensor::from_vec(half, x.w, x.c, x.data[cut..].to_vec())?;
    Ok((low, high))
}

/// Stack `top` above `bottom` along the height axis.
pub fn concat_height(top: &Tensor, bottom: &Tensor) -> Result<Tensor, NnError> {
    if (top.w, top.c) != (bottom.w, bottom.c) {
        return Err(NnError::Shape(format!(
            "cannot concatenate {:?} with {:?} along height",
            top.shape(),
            bottom.shape()
        )));
    }
    let mut data = Vec::with_capacity(top.len() + bottom.len());
    data.extend_from_slice(&top.data);
    data.extend_from_slice(&bottom.data);
    Tensor::from_vec(top.h + bottom.h, top.w, top.c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_and_concat_are_inverse() {
        let x = Tensor::from_vec(128, 5, 3, (0..128 * 15).map(|i| i as f64).collect()).unwrap();
        let (low, high) = split_frequency(&x).unwrap();
        assert_eq!(low.shape(), (64, 5, 3));
        assert_eq!(high.shape(), (64, 5, 3));
        for w in 0..5 {
            for c in 0..3 {
                assert_eq!(high.at(0, w, c), x.at(64, w, c));
                assert_eq!(low.at(63, w, c), x.at(63, w, c));
            }
        }
        assert_eq!(concat_height(&low, &high).unwrap(), x);
        assert!(split_frequency(&Tensor::zeros(3, 2, 1)).is_err());
    }

    #[test]
    fn canonical_feature_splits_into_halves() {
        let x = Tensor::zeros(128, 423, 3);
        let (low, high) = split_frequency(&x).unwrap();
        assert_eq!(low.shape(), (64, 423, 3));
        assert_eq!(high.shape(), (64, 423, 3));
    }
}

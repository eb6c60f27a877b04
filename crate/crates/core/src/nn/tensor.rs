use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Channel-planar activation map. Unlike [`ImageTensor`] it carries any
/// channel count and unbounded values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn to_image(&self) -> Result<ImageTensor> {
        ImageTensor::new(self.h, self.w, self.c, self.data.clone())
    }

    pub fn into_image(self) -> Result<ImageTensor> {
        ImageTensor::new(self.h, self.w, self.c, self.data)
    }

    /// Stacks `a` over `b` along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if (a.h, a.w) != (b.h, b.w) {
            return Err(Error::shape(
                format!("{}x{}", a.h, a.w),
                format!("{}x{}", b.h, b.w),
            ));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor::from_vec(a.c + b.c, a.h, a.w, data))
    }

    /// Splits off the first `c_first` channels.
    pub fn split_channels(mut self, c_first: usize) -> (Tensor, Tensor) {
        let plane = self.h * self.w;
        let rest = self.data.split_off(c_first * plane);
        let (h, w, c) = (self.h, self.w, self.c);
        (
            Tensor::from_vec(c_first, h, w, self.data),
            Tensor::from_vec(c - c_first, h, w, rest),
        )
    }
}

impl From<&ImageTensor> for Tensor {
    fn from(img: &ImageTensor) -> Self {
        let (c, h, w) = img.shape();
        Tensor::from_vec(c, h, w, img.values().to_vec())
    }
}

impl From<ImageTensor> for Tensor {
    fn from(img: ImageTensor) -> Self {
        let (c, h, w) = img.shape();
        Tensor::from_vec(c, h, w, img.into_values())
    }
}

//! Grayscale images and dense label maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| T::lit(self.data[i] as f64))
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if n != 1 || c != 1 {
            return Err(Error::validation(format!("expected [1,1,H,W], got {:?}", t.shape())));
        }
        GrayImage::new(h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Row-major per-pixel class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "label map {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn max_class(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Pixel count per class id in `[0, classes)`; ids outside are ignored.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.data {
            if let Some(slot) = h.get_mut(l as usize) {
                *slot += 1;
            }
        }
        h
    }
}

/// A labelled still image of the source domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub labels: LabelMap,
}

impl LabeledImage {
    pub fn new(image: GrayImage, labels: LabelMap) -> Result<Self> {
        if (image.height, image.width) != (labels.height, labels.width) {
            return Err(Error::validation("image and label map shapes differ"));
        }
        Ok(LabeledImage { image, labels })
    }
}

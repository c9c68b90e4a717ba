use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Integer class ids laid out `[N, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTensor {
    inner: Tensor<u8>,
}

impl LabelTensor {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        Ok(LabelTensor {
            inner: Tensor::new(&shape, data)?,
        })
    }

    /// Accepts `[N,H,W]` or `[H,W]` (treated as a single sample).
    pub fn from_tensor(t: Tensor<u8>) -> Result<Self> {
        let inner = match *t.shape() {
            [_, _, _] => t,
            [h, w] => t.reshape(&[1, h, w])?,
            _ => {
                return Err(Error::dim(format!(
                    "labels must be [N,H,W] or [H,W], got {:?}",
                    t.shape()
                )))
            }
        };
        Ok(LabelTensor { inner })
    }

    pub fn filled(shape: [usize; 3], class: u8) -> Self {
        LabelTensor {
            inner: Tensor::full(&shape, class),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.inner.shape();
        [s[0], s[1], s[2]]
    }

    pub fn data(&self) -> &[u8] {
        self.inner.data()
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        self.inner.data_mut()
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn as_tensor(&self) -> &Tensor<u8> {
        &self.inner
    }

    pub fn into_tensor(self) -> Tensor<u8> {
        self.inner
    }

    /// Checks every id is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if let Some((i, &v)) = self
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= num_classes)
        {
            let [_, h, w] = self.shape();
            return Err(Error::Label(format!(
                "class id {} at sample {}, row {}, col {} is not below {}",
                v,
                i / (h * w),
                (i / w) % h,
                i % w,
                num_classes
            )));
        }
        Ok(())
    }

    pub fn sample(&self, index: usize) -> LabelTensor {
        LabelTensor {
            inner: self.inner.sample(index),
        }
    }

    pub fn stack(parts: &[&LabelTensor]) -> Result<LabelTensor> {
        let tensors: Vec<&Tensor<u8>> = parts.iter().map(|p| &p.inner).collect();
        Ok(LabelTensor {
            inner: Tensor::stack(&tensors)?,
        })
    }
}

/// Per-pixel argmax over the class axis of `[N,H,W,C]` scores; ties go to
/// the lowest class id.
pub fn argmax<T: Scalar>(scores: &Tensor<T>) -> Result<LabelTensor> {
    let [n, h, w, c] = scores.dims4()?;
    if c > 256 {
        return Err(Error::dim(format!("{} classes exceed the u8 label range", c)));
    }
    let data = scores
        .data()
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    LabelTensor::new([n, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_goes_to_lowest_id() {
        let s = Tensor::<f32>::new(&[1, 1, 2, 3], vec![0.4, 0.4, 0.2, 0.1, 0.45, 0.45]).unwrap();
        assert_eq!(argmax(&s).unwrap().data(), &[0, 1]);
    }

    #[test]
    fn validate_reports_position() {
        let l = LabelTensor::new([1, 2, 2], vec![0, 1, 1, 7]).unwrap();
        let err = l.validate(5).unwrap_err().to_string();
        assert!(err.contains("class id 7") && err.contains("row 1, col 1"), "{}", err);
    }
}

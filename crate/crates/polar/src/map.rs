//! Single-channel image plane.

/// Row-major H x W map of `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Map2d {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Map2d {
    pub fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "map data must be h*w");
        Self { h, w, data }
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.w + c] = v;
    }

    /// New map with `f` applied to every sample.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Map2d {
        Map2d {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Crop the window starting at (r0, c0).
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Map2d {
        assert!(r0 + h <= self.h && c0 + w <= self.w, "crop out of range");
        let mut data = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            data.extend_from_slice(&self.data[r * self.w + c0..r * self.w + c0 + w]);
        }
        Map2d { h, w, data }
    }

    pub fn flip_horizontal(&self) -> Map2d {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.h {
            data.extend(self.data[r * self.w..(r + 1) * self.w].iter().rev());
        }
        Map2d {
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn flip_vertical(&self) -> Map2d {
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..self.h).rev() {
            data.extend_from_slice(&self.data[r * self.w..(r + 1) * self.w]);
        }
        Map2d {
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_flips() {
        let m = Map2d::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.crop(0, 1, 2, 2).data(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(m.flip_horizontal().data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(m.flip_vertical().data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }
}

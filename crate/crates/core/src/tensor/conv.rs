/// Sliding-window geometry over a `[C, H, W]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    /// Output extent, or `None` when the kernel does not fit the padded input.
    pub fn out_dims(&self) -> Option<(usize, usize)> {
        let ph = self.height + 2 * self.pad;
        let pw = self.width + 2 * self.pad;
        if self.kh > ph || self.kw > pw || self.stride == 0 {
            return None;
        }
        Some((
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Unfolds the image into `[C·kh·kw, Ho·Wo]` patches (zero padding).
    pub fn im2col(&self, img: &[f64]) -> Vec<f64> {
        let (ho, wo) = self.out_dims().expect("validated geometry");
        let cols_n = ho * wo;
        let mut cols = vec![0.0; self.rows() * cols_n];
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for oy in 0..ho {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for ox in 0..wo {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            if x >= 0 && x < self.width as isize {
                                dst[oy * wo + ox] = src[x as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Window::im2col`]: folds patches back, summing overlaps.
    pub fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (ho, wo) = self.out_dims().expect("validated geometry");
        let cols_n = ho * wo;
        for c in 0..self.channels {
            let plane =
                &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * cols_n..(row + 1) * cols_n];
                    for oy in 0..ho {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for ox in 0..wo {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            if x >= 0 && x < self.width as isize {
                                dst[x as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let w = Window {
            channels: 2,
            height: 5,
            width: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
        };
        let (ho, wo) = w.out_dims().unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..w.rows() * ho * wo).map(|i| (i as f64 * 0.3).cos()).collect();
        let ax = w.im2col(&x);
        let mut aty = vec![0.0; 40];
        w.col2im(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn oversized_kernel_has_no_output() {
        let w = Window {
            channels: 1,
            height: 2,
            width: 2,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 0,
        };
        assert_eq!(w.out_dims(), None);
    }
}

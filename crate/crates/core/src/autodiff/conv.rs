//! Same-size 3D convolution over channel-last volumes `[X, Y, Z, C]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Boundary handling for the convolution taps that fall outside the volume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    Zero,
    /// Mirror about the edge voxel (`-1 -> 1`, `L -> L-2`).
    Reflect,
}

pub(crate) fn source_index(i: isize, len: usize, padding: Padding) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            Some(r.clamp(0, n - 1) as usize)
        }
    }
}

pub(crate) struct ConvGeometry {
    pub dims: [usize; 3],
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize]) -> Result<Self> {
        if x.len() != 4 || w.len() != 5 {
            return Err(Error::shape("conv3d", x, w));
        }
        let k = w[0];
        if k % 2 == 0 || w[1] != k || w[2] != k || w[3] != x[3] {
            return Err(Error::shape("conv3d", x, w));
        }
        Ok(ConvGeometry {
            dims: [x[0], x[1], x[2]],
            cin: x[3],
            cout: w[4],
            k,
        })
    }

    /// Calls `f(out_voxel, src_voxel, tap)` for every in-bounds (after padding)
    /// tap of every output voxel.
    fn for_each_tap(&self, padding: Padding, mut f: impl FnMut(usize, usize, usize)) {
        let [nx, ny, nz] = self.dims;
        let r = (self.k / 2) as isize;
        let k = self.k;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let out = (x * ny + y) * nz + z;
                    for a in 0..k {
                        let Some(sx) = source_index(x as isize + a as isize - r, nx, padding) else {
                            continue;
                        };
                        for b in 0..k {
                            let Some(sy) = source_index(y as isize + b as isize - r, ny, padding)
                            else {
                                continue;
                            };
                            for c in 0..k {
                                let Some(sz) =
                                    source_index(z as isize + c as isize - r, nz, padding)
                                else {
                                    continue;
                                };
                                f(out, (sx * ny + sy) * nz + sz, (a * k + b) * k + c);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward(x: &Tensor, w: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = ConvGeometry::new(x.shape(), w.shape())?;
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; g.dims.iter().product::<usize>() * cout];
    let xd = x.data();
    let wd = w.data();
    g.for_each_tap(padding, |o, s, tap| {
        let dst = &mut out[o * cout..(o + 1) * cout];
        for ci in 0..cin {
            let xv = xd[s * cin + ci];
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (d, &wv) in dst.iter_mut().zip(wrow) {
                *d += xv * wv;
            }
        }
    });
    let mut shape = x.shape().to_vec();
    shape[3] = cout;
    Tensor::new(shape, out)
}

/// Returns `(dx, dw)` for upstream gradient `g` of shape `[X, Y, Z, Cout]`.
pub(crate) fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let geo = ConvGeometry::new(x.shape(), w.shape())?;
    let (cin, cout) = (geo.cin, geo.cout);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let xd = x.data();
    let wd = w.data();
    let gd = g.data();
    {
        let dxd = dx.data_mut();
        let mut dwd = vec![0.0; wd.len()];
        geo.for_each_tap(padding, |o, s, tap| {
            let grow = &gd[o * cout..(o + 1) * cout];
            for ci in 0..cin {
                let base = (tap * cin + ci) * cout;
                let wrow = &wd[base..base + cout];
                let xv = xd[s * cin + ci];
                let mut acc = 0.0;
                for ((&gv, &wv), dwv) in grow.iter().zip(wrow).zip(&mut dwd[base..base + cout]) {
                    acc += gv * wv;
                    *dwv += gv * xv;
                }
                dxd[s * cin + ci] += acc;
            }
        });
        dw.data_mut().copy_from_slice(&dwd);
    }
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(source_index(-1, 4, Padding::Reflect), Some(1));
        assert_eq!(source_index(4, 4, Padding::Reflect), Some(2));
        assert_eq!(source_index(-1, 1, Padding::Reflect), Some(0));
        assert_eq!(source_index(-1, 4, Padding::Zero), None);
    }

    #[test]
    fn centre_tap_identity_kernel() {
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| i as f64);
        let mut w = Tensor::zeros(&[3, 3, 3, 2, 2]);
        for c in 0..2 {
            w.set(&[1, 1, 1, c, c], 1.0);
        }
        let y = conv3d_forward(&x, &w, Padding::Zero).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_padding_border_sum() {
        // All-ones 3x3x3 kernel on a ones volume counts in-bounds neighbours.
        let x = Tensor::ones(&[3, 3, 3, 1]);
        let w = Tensor::ones(&[3, 3, 3, 1, 1]);
        let y = conv3d_forward(&x, &w, Padding::Zero).unwrap();
        assert_eq!(y.get(&[1, 1, 1, 0]), 27.0);
        assert_eq!(y.get(&[0, 0, 0, 0]), 8.0);
        let r = conv3d_forward(&x, &w, Padding::Reflect).unwrap();
        assert_eq!(r.get(&[0, 0, 0, 0]), 27.0);
    }
}

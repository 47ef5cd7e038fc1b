use crate::error::{Error, Result};
use crate::tensor::{conv2d_raw, ConvGeometry, Padding, Prng, Tensor};

pub const STAGE_WIDTHS: [usize; 5] = [8, 16, 32, 64, 64];

/// Fixed random feature extractor: five 3x3 conv + ReLU stages with 2x2
/// average pooling between them. Never trained.
#[derive(Clone, Debug)]
pub struct SurrogateNet {
    seed: u64,
    weights: Vec<Tensor>,
}

impl SurrogateNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = Prng::new(seed);
        let mut cin = 3;
        let weights = STAGE_WIDTHS
            .iter()
            .map(|&w| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let t = Tensor::randn(&[w, cin, 3, 3], std, &mut rng);
                cin = w;
                t
            })
            .collect();
        Self { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Spatially averaged features per image and stage: out[b][stage].
    pub fn features(&self, images: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let (b, _, h, w) = images.dims4()?;
        let down = 1 << (STAGE_WIDTHS.len() - 1);
        if h % down != 0 || w % down != 0 {
            return Err(Error::Shape(format!("surrogate net needs extents divisible by {down}, got {h}x{w}")));
        }
        let mut out = vec![Vec::with_capacity(STAGE_WIDTHS.len()); b];
        let mut cur = images.clone();
        for (i, wt) in self.weights.iter().enumerate() {
            cur = conv2d_raw(&cur, wt, ConvGeometry::new(1, 1, Padding::Zero))?.map(|v| v.max(0.0));
            let m = cur.spatial_means()?;
            let c = m.shape()[1];
            for (bi, o) in out.iter_mut().enumerate() {
                o.push(m.data()[bi * c..(bi + 1) * c].to_vec());
            }
            if i + 1 < self.weights.len() {
                cur = avg_pool2(&cur)?;
            }
        }
        Ok(out)
    }
}

fn avg_pool2(t: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = t.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(b * c * oh * ow);
    for bi in 0..b {
        for ch in 0..c {
            let p = t.plane(bi, ch);
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    data.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
                }
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], data)
}

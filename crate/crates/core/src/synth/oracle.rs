use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean chroma magnitudes below this are treated as gray.
pub const ABSTAIN_CHROMA: f64 = 1e-3;

pub fn domain_hue(k: usize, domains: usize) -> f64 {
    2.0 * PI * k as f64 / domains as f64
}

/// Coverage-weighted mean hue angle of the foreground, or None when the
/// mask is empty or the foreground is gray.
pub fn hue_angle(image: &Tensor, mask: &Tensor) -> Result<Option<f64>> {
    let p = mask.len();
    if image.len() != 3 * p {
        return Err(Error::Shape(format!("image {:?} vs mask {:?}", image.shape(), mask.shape())));
    }
    let d = image.data();
    let (mut a, mut b, mut wsum) = (0.0, 0.0, 0.0);
    for (i, &w) in mask.data().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let (r, g, bl) = (d[i], d[p + i], d[2 * p + i]);
        a += w * (r - 0.5 * (g + bl));
        b += w * 0.75f64.sqrt() * (g - bl);
        wsum += w;
    }
    if wsum <= 0.0 {
        return Ok(None);
    }
    let (a, b) = (a / wsum, b / wsum);
    if a.hypot(b) < ABSTAIN_CHROMA {
        return Ok(None);
    }
    Ok(Some(b.atan2(a)))
}

/// Nearest domain hue by circular distance; None means abstain.
pub fn hue_oracle(image: &Tensor, mask: &Tensor, domains: usize) -> Result<Option<usize>> {
    let Some(h) = hue_angle(image, mask)? else {
        return Ok(None);
    };
    let circ = |k: usize| {
        let d = (h - domain_hue(k, domains)).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let mut best = 0;
    for k in 1..domains {
        if circ(k) < circ(best) {
            best = k;
        }
    }
    Ok(Some(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, TaskKind, TaskSpec};

    #[test]
    fn clean_targets_are_recognised() {
        let d = gen_dataset(&TaskSpec {
            extent: 16,
            samples: 40,
            ..Default::default()
        })
        .unwrap();
        for s in &d.samples {
            assert_eq!(hue_oracle(&s.y, &s.mask, 4).unwrap(), s.domain);
        }
    }

    #[test]
    fn gray_and_empty_abstain() {
        let gray = Tensor::full(&[3, 4, 4], 0.2);
        assert_eq!(hue_oracle(&gray, &Tensor::full(&[4, 4], 1.0), 4).unwrap(), None);
        let colored = Tensor::from_fn(&[3, 4, 4], |i| if i < 16 { 0.5 } else { -0.5 });
        assert_eq!(hue_oracle(&colored, &Tensor::zeros(&[4, 4]), 4).unwrap(), None);
        assert_eq!(hue_oracle(&colored, &Tensor::full(&[4, 4], 1.0), 4).unwrap(), Some(0));
    }

    #[test]
    fn continuous_hue_recovered() {
        let d = gen_dataset(&TaskSpec {
            kind: TaskKind::Continuous,
            extent: 16,
            samples: 20,
            ..Default::default()
        })
        .unwrap();
        for s in &d.samples {
            let h = hue_angle(&s.y, &s.mask).unwrap().unwrap();
            let want = PI * s.code.values()[0];
            let diff = (h - want).rem_euclid(2.0 * PI);
            assert!(diff.min(2.0 * PI - diff) < 1e-9);
        }
    }
}

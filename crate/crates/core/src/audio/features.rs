use super::{log_mel, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of the square feature image.
pub const IMAGE_SIZE: usize = 224;

/// Half-width of the regression window used by [`delta`] (9 frames total).
const DELTA_HALF: usize = 4;

/// Which recording a feature image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Reading,
    Interview,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Reading => "reading",
            Task::Interview => "interview",
        }
    }
}

/// `[3, 224, 224]` stack of log-mel, Δ and ΔΔ, each normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub channels: Tensor,
    pub task: Task,
}

impl FeatureImage {
    pub fn new(channels: Tensor, task: Task) -> Result<Self> {
        if channels.shape() != [3, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(Error::shape(
                "FeatureImage",
                format!(
                    "expected [3, {IMAGE_SIZE}, {IMAGE_SIZE}], got {:?}",
                    channels.shape()
                ),
            ));
        }
        Ok(Self { channels, task })
    }
}

/// Regression slope over a 9-frame window along the time axis of a
/// `[bands, frames]` matrix, replicating the edge frames. `order = 2`
/// applies the operator twice.
pub fn delta(features: &Tensor, order: usize) -> Result<Tensor> {
    if features.rank() != 2 {
        return Err(Error::shape(
            "delta",
            format!("expected [bands, frames], got {:?}", features.shape()),
        ));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "delta order must be 1 or 2, got {order}"
        )));
    }
    let mut out = delta_once(features);
    if order == 2 {
        out = delta_once(&out);
    }
    Ok(out)
}

fn delta_once(x: &Tensor) -> Tensor {
    let (bands, frames) = (x.shape()[0], x.shape()[1]);
    let denom = 2.0 * (1..=DELTA_HALF).map(|n| (n * n) as f64).sum::<f64>();
    let last = frames as isize - 1;
    let mut out = vec![0.0; bands * frames];
    for b in 0..bands {
        let row = x.row(b);
        for t in 0..frames {
            let mut acc = 0.0;
            for n in 1..=DELTA_HALF as isize {
                let fwd = (t as isize + n).clamp(0, last) as usize;
                let back = (t as isize - n).clamp(0, last) as usize;
                acc += n as f64 * (row[fwd] - row[back]);
            }
            out[b * frames + t] = acc / denom;
        }
    }
    Tensor::from_parts(vec![bands, frames], out)
}

/// Bilinear resize of a matrix with corner-aligned sampling: output pixel
/// `(i, j)` samples the input at `(i·(H−1)/(h−1), j·(W−1)/(w−1))`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if x.rank() != 2 || out_h == 0 || out_w == 0 {
        return Err(Error::shape(
            "resize_bilinear",
            format!("{:?} -> [{out_h}, {out_w}]", x.shape()),
        ));
    }
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = coords(h, out_h);
    let cols = coords(w, out_w);
    let d = x.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = d[r0 * w + c0] * (1.0 - fc) + d[r0 * w + c1] * fc;
            let bottom = d[r1 * w + c0] * (1.0 - fc) + d[r1 * w + c1] * fc;
            out.push(if fr == 0.0 {
                top
            } else {
                top * (1.0 - fr) + bottom * fr
            });
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w], out))
}

/// Rescales to `[0, 1]`; a constant input becomes all zeros.
pub fn min_max_normalize(x: &Tensor) -> Tensor {
    let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Tensor::zeros(x.shape());
    }
    x.map(|v| (v - lo) / (hi - lo))
}

/// Builds the three-channel image for one recording.
pub fn make_feature_image(wave: &Waveform, task: Task) -> Result<FeatureImage> {
    let mel = log_mel(wave)?;
    let d1 = delta(&mel, 1)?;
    let d2 = delta(&mel, 2)?;
    let mut data = Vec::with_capacity(3 * IMAGE_SIZE * IMAGE_SIZE);
    for channel in [&mel, &d1, &d2] {
        let resized = resize_bilinear(channel, IMAGE_SIZE, IMAGE_SIZE)?;
        data.extend_from_slice(min_max_normalize(&resized).data());
    }
    FeatureImage::new(
        Tensor::from_parts(vec![3, IMAGE_SIZE, IMAGE_SIZE], data),
        task,
    )
}

use crate::error::{Error, Result};
use crate::model::VideoFeatures;
use crate::numerics::Tensor;

/// How frames are grouped into clips at ingestion.
///
/// When `frames_per_clip` is set it takes precedence over `max_clips`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolingConfig {
    pub max_clips: usize,
    pub frames_per_clip: Option<usize>,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            max_clips: 45,
            frames_per_clip: None,
        }
    }
}

/// Average-pools `frames` (`n_frames x d_v`) into `min(max_clips, n_frames)`
/// contiguous groups whose sizes differ by at most one, larger groups first.
pub fn pool_clips(frames: &Tensor, max_clips: usize) -> Result<VideoFeatures> {
    if frames.rank() != 2 {
        return Err(Error::dim("pool_clips", frames.shape(), &[0, 0]));
    }
    if max_clips == 0 {
        return Err(Error::InvalidArgument("max_clips must be >= 1".into()));
    }
    let n = frames.rows();
    let k = max_clips.min(n);
    let d = frames.cols();
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k * d);
    let mut start = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        let mut mean = vec![0.0; d];
        for f in start..start + size {
            for (m, v) in mean.iter_mut().zip(frames.row(f)) {
                *m += v;
            }
        }
        out.extend(mean.into_iter().map(|m| m / size as f64));
        start += size;
    }
    VideoFeatures::new(Tensor::matrix(k, d, out)?)
}

/// Pools according to `cfg`.
pub fn pool_frames(frames: &Tensor, cfg: &PoolingConfig) -> Result<VideoFeatures> {
    let max_clips = match cfg.frames_per_clip {
        Some(0) => return Err(Error::InvalidArgument("frames_per_clip must be >= 1".into())),
        Some(fpc) => frames.rows().div_ceil(fpc),
        None => cfg.max_clips,
    };
    pool_clips(frames, max_clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn five_frames_into_two_clips() {
        let f = frames(&[vec![1.], vec![2.], vec![3.], vec![4.], vec![5.]]);
        let v = pool_clips(&f, 2).unwrap();
        assert_eq!(v.clip(0), &[2.0]);
        assert_eq!(v.clip(1), &[4.5]);
    }

    #[test]
    fn few_frames_are_identity() {
        let f = frames(&[vec![1., -1.], vec![0.5, 2.]]);
        let v = pool_clips(&f, 45).unwrap();
        assert_eq!(v.as_tensor(), &f);
    }

    #[test]
    fn constant_frames_give_constant_clips() {
        let f = frames(&vec![vec![0.25, 3.0]; 17]);
        let v = pool_clips(&f, 5).unwrap();
        assert!((0..5).all(|i| v.clip(i) == [0.25, 3.0]));
    }

    #[test]
    fn frames_per_clip_takes_precedence() {
        let f = frames(&vec![vec![1.0]; 250]);
        let cfg = PoolingConfig {
            max_clips: 45,
            frames_per_clip: Some(100),
        };
        assert_eq!(pool_frames(&f, &cfg).unwrap().len(), 3);
    }

    #[test]
    fn zero_max_clips_rejected() {
        assert!(pool_clips(&frames(&[vec![1.0]]), 0).is_err());
    }

    proptest! {
        #[test]
        fn weighted_clip_mean_equals_frame_mean(
            vals in prop::collection::vec(-10.0f64..10.0, 1..60),
            max_clips in 1usize..20,
        ) {
            let n = vals.len();
            let f = Tensor::matrix(n, 1, vals.clone()).unwrap();
            let v = pool_clips(&f, max_clips).unwrap();
            let k = v.len();
            prop_assert_eq!(k, max_clips.min(n));
            let (base, extra) = (n / k, n % k);
            let weighted: f64 = (0..k)
                .map(|g| v.clip(g)[0] * (base + usize::from(g < extra)) as f64)
                .sum::<f64>() / n as f64;
            let mean = vals.iter().sum::<f64>() / n as f64;
            prop_assert!((weighted - mean).abs() < 1e-9);
        }
    }
}

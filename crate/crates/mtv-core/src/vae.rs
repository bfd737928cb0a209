//! Exact-roundtrip video packer standing in for a learned autoencoder: a
//! pure space-to-depth rearrangement. Frames are grouped `patch_t` at a time
//! into latent intervals and each `patch_s x patch_s` pixel block becomes one
//! latent token, pixels moving into channels. Decoding moves every value
//! back, so `decode(encode(x)) == x` bitwise.
//!
//! Video layout is `[frames, height, width, channels]`, row-major.

use crate::diffusion::LatentVideo;
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaeStub {
    pub patch_t: usize,
    pub patch_s: usize,
}

impl VaeStub {
    pub fn new(patch_t: usize, patch_s: usize) -> Result<Self> {
        if patch_t == 0 || patch_s == 0 {
            return Err(Error::invalid("VaeStub::new", "patch factors must be positive"));
        }
        Ok(VaeStub { patch_t, patch_s })
    }

    /// Latent channels for a `channels`-channel video.
    pub fn latent_channels(&self, channels: usize) -> usize {
        channels * self.patch_t * self.patch_s * self.patch_s
    }

    fn frame_dims(&self, op: &'static str, video: &DenseArray) -> Result<(usize, usize, usize, usize)> {
        if video.rank() != 4 {
            return Err(Error::invalid(
                op,
                format!("expected [frames, height, width, channels], got {:?}", video.shape()),
            ));
        }
        let s = video.shape();
        let (f, h, w, c) = (s[0], s[1], s[2], s[3]);
        if f % self.patch_t != 0 {
            return Err(Error::invalid(
                op,
                format!("{f} frames not divisible by patch_t {}", self.patch_t),
            ));
        }
        if h % self.patch_s != 0 || w % self.patch_s != 0 {
            return Err(Error::invalid(
                op,
                format!("{h}x{w} frame not divisible by patch_s {}", self.patch_s),
            ));
        }
        Ok((f, h, w, c))
    }

    /// `[F, H, W, C] -> [F/p_t, (H/p_s)(W/p_s), C p_t p_s²]`. Channel order
    /// within a latent token: frame offset, then row offset, then column
    /// offset, then source channel, fastest last.
    pub fn encode(&self, video: &DenseArray) -> Result<LatentVideo> {
        let (f, h, w, c) = self.frame_dims("vae_encode", video)?;
        let (pt, ps) = (self.patch_t, self.patch_s);
        let (m, gh, gw) = (f / pt, h / ps, w / ps);
        let s_tokens = gh * gw;
        let c_z = self.latent_channels(c);
        let src = video.data();
        let mut out = vec![0.0; m * s_tokens * c_z];
        for mi in 0..m {
            for by in 0..gh {
                for bx in 0..gw {
                    let token = (mi * s_tokens + by * gw + bx) * c_z;
                    for dt in 0..pt {
                        for dy in 0..ps {
                            for dx in 0..ps {
                                for ch in 0..c {
                                    let frame = mi * pt + dt;
                                    let y = by * ps + dy;
                                    let x = bx * ps + dx;
                                    let s_idx = ((frame * h + y) * w + x) * c + ch;
                                    let d_idx = token + ((dt * ps + dy) * ps + dx) * c + ch;
                                    out[d_idx] = src[s_idx];
                                }
                            }
                        }
                    }
                }
            }
        }
        LatentVideo::new(DenseArray::new(vec![m, s_tokens, c_z], out)?)
    }

    /// Exact inverse of [`encode`](Self::encode). Needs the frame geometry
    /// back because several (height, width) pairs share one token count.
    pub fn decode(&self, latent: &LatentVideo, height: usize, width: usize, channels: usize) -> Result<DenseArray> {
        let op = "vae_decode";
        let (pt, ps) = (self.patch_t, self.patch_s);
        if height % ps != 0 || width % ps != 0 {
            return Err(Error::invalid(
                op,
                format!("{height}x{width} frame not divisible by patch_s {ps}"),
            ));
        }
        let (gh, gw) = (height / ps, width / ps);
        if latent.spatial() != gh * gw {
            return Err(Error::invalid(
                op,
                format!(
                    "latent has {} tokens per interval, geometry needs {}",
                    latent.spatial(),
                    gh * gw
                ),
            ));
        }
        let c_z = self.latent_channels(channels);
        if latent.channels() != c_z {
            return Err(Error::invalid(
                op,
                format!("latent has {} channels, geometry needs {c_z}", latent.channels()),
            ));
        }
        let m = latent.intervals();
        let f = m * pt;
        let src = latent.tokens().data();
        let s_tokens = gh * gw;
        let mut out = vec![0.0; f * height * width * channels];
        for mi in 0..m {
            for by in 0..gh {
                for bx in 0..gw {
                    let token = (mi * s_tokens + by * gw + bx) * c_z;
                    for dt in 0..pt {
                        for dy in 0..ps {
                            for dx in 0..ps {
                                for ch in 0..channels {
                                    let frame = mi * pt + dt;
                                    let y = by * ps + dy;
                                    let x = bx * ps + dx;
                                    let d_idx = ((frame * height + y) * width + x) * channels + ch;
                                    let s_idx = token + ((dt * ps + dy) * ps + dx) * channels + ch;
                                    out[d_idx] = src[s_idx];
                                }
                            }
                        }
                    }
                }
            }
        }
        DenseArray::new(vec![f, height, width, channels], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let vae = VaeStub::new(4, 2).unwrap();
        let video = Rng::new(1).normal_array(&[8, 6, 4, 3]);
        let latent = vae.encode(&video).unwrap();
        assert_eq!(latent.intervals(), 2);
        assert_eq!(latent.spatial(), 3 * 2);
        assert_eq!(latent.channels(), 3 * 4 * 4);
        let back = vae.decode(&latent, 6, 4, 3).unwrap();
        assert_eq!(back.shape(), video.shape());
        assert_eq!(back.data(), video.data());
    }

    #[test]
    fn eight_frames_at_patch_four_give_two_intervals() {
        let vae = VaeStub::new(4, 4).unwrap();
        let video = Rng::new(2).normal_array(&[8, 8, 8, 1]);
        let latent = vae.encode(&video).unwrap();
        assert_eq!(latent.intervals(), 2);
    }

    #[test]
    fn encode_places_pixels_where_documented() {
        // 2 frames, one 2x2 block, 1 channel: token channel order is
        // (frame offset, row, column).
        let vae = VaeStub::new(2, 2).unwrap();
        let video = DenseArray::new(
            vec![2, 2, 2, 1],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        )
        .unwrap();
        let latent = vae.encode(&video).unwrap();
        assert_eq!(latent.tokens().shape(), &[1, 1, 8]);
        assert_eq!(latent.tokens().data(), video.data());
    }

    #[test]
    fn indivisible_extents_are_rejected() {
        let vae = VaeStub::new(4, 4).unwrap();
        assert!(vae.encode(&Rng::new(3).normal_array(&[6, 8, 8, 1])).is_err());
        assert!(vae.encode(&Rng::new(4).normal_array(&[8, 6, 8, 1])).is_err());
        assert!(vae.encode(&Rng::new(5).normal_array(&[8, 8])).is_err());
        let latent = vae.encode(&Rng::new(6).normal_array(&[8, 8, 8, 1])).unwrap();
        assert!(vae.decode(&latent, 8, 12, 1).is_err());
        assert!(vae.decode(&latent, 8, 8, 2).is_err());
    }
}

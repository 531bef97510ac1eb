use super::corpus::Utterance;
use super::text::PAD_ID;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Padded training batch.
///
/// Frame counts are padded up to a multiple of the reduction factor `r`.
/// Every padded position holds zero in the target tensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B][N_max]`, padded with [`PAD_ID`].
    pub char_ids: Vec<Vec<usize>>,
    pub char_lengths: Vec<usize>,
    /// `[B × n_mels × T_max]`
    pub mel_targets: Tensor,
    /// `[B × n_bins × T_max]`
    pub linear_targets: Tensor,
    /// `[B × T_max / r]`
    pub stop_targets: Tensor,
    pub frame_lengths: Vec<usize>,
    /// `[B × T_max]`, 1 on real frames.
    pub frame_mask: Tensor,
    /// `[B × N_max]`, 1 on real characters.
    pub char_mask: Tensor,
    pub r: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn max_chars(&self) -> usize {
        self.char_mask.shape()[1]
    }

    pub fn max_frames(&self) -> usize {
        self.frame_mask.shape()[1]
    }

    pub fn decode_steps(&self) -> usize {
        self.max_frames() / self.r
    }

    pub fn n_mels(&self) -> usize {
        self.mel_targets.shape()[1]
    }

    pub fn n_bins(&self) -> usize {
        self.linear_targets.shape()[1]
    }

    /// Real decode steps of item `b`: `ceil(T / r)`.
    pub fn step_length(&self, b: usize) -> usize {
        self.frame_lengths[b].div_ceil(self.r)
    }

    /// Unpadded character ids of each item.
    pub fn unpadded_chars(&self) -> Vec<Vec<usize>> {
        self.char_ids
            .iter()
            .zip(&self.char_lengths)
            .map(|(ids, &n)| ids[..n].to_vec())
            .collect()
    }

    fn group(targets: &Tensor, step: usize, r: usize) -> Tensor {
        let (bsz, feat, t_max) = (targets.shape()[0], targets.shape()[1], targets.shape()[2]);
        let mut data = Vec::with_capacity(bsz * r * feat);
        for b in 0..bsz {
            for j in 0..r {
                let t = step * r + j;
                for f in 0..feat {
                    data.push(targets.data()[(b * feat + f) * t_max + t]);
                }
            }
        }
        Tensor::from_parts(vec![bsz, r * feat], data)
    }

    /// Mel frames `step*r .. step*r + r`, frame-major: `[B × r·n_mels]`.
    pub fn mel_group(&self, step: usize) -> Tensor {
        Self::group(&self.mel_targets, step, self.r)
    }

    /// Linear frames of one decode step: `[B × r·n_bins]`.
    pub fn linear_group(&self, step: usize) -> Tensor {
        Self::group(&self.linear_targets, step, self.r)
    }

    /// 1 where the frame of the group entry is real: `[B × r·feat]`.
    pub fn group_mask(&self, step: usize, feat: usize) -> Tensor {
        let bsz = self.size();
        let mut data = Vec::with_capacity(bsz * self.r * feat);
        for b in 0..bsz {
            for j in 0..self.r {
                let m = self.frame_mask.get2(b, step * self.r + j);
                data.extend(std::iter::repeat_n(m, feat));
            }
        }
        Tensor::from_parts(vec![bsz, self.r * feat], data)
    }

    fn frame_major(targets: &Tensor) -> Tensor {
        let (bsz, feat, t_max) = (targets.shape()[0], targets.shape()[1], targets.shape()[2]);
        let mut data = Vec::with_capacity(targets.len());
        for b in 0..bsz {
            for t in 0..t_max {
                for f in 0..feat {
                    data.push(targets.data()[(b * feat + f) * t_max + t]);
                }
            }
        }
        Tensor::from_parts(vec![bsz, t_max * feat], data)
    }

    /// All mel groups side by side: `[B × T_max·n_mels]`, frame-major.
    pub fn mel_frames(&self) -> Tensor {
        Self::frame_major(&self.mel_targets)
    }

    /// All linear groups side by side: `[B × T_max·n_bins]`, frame-major.
    pub fn linear_frames(&self) -> Tensor {
        Self::frame_major(&self.linear_targets)
    }

    /// Frame mask repeated `feat` times per frame: `[B × T_max·feat]`.
    pub fn frame_major_mask(&self, feat: usize) -> Tensor {
        let data = self
            .frame_mask
            .data()
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, feat))
            .collect();
        Tensor::from_parts(vec![self.size(), self.max_frames() * feat], data)
    }

    /// `[B × steps]`, 1 on decode steps that cover at least one real frame.
    pub fn step_mask(&self) -> Tensor {
        let steps = self.decode_steps();
        let mut m = Tensor::zeros(&[self.size(), steps]);
        for b in 0..self.size() {
            m.data_mut()[b * steps..b * steps + self.step_length(b)].fill(1.0);
        }
        m
    }

    /// Key mask for attention, `[B × N_max]` flattened.
    pub fn key_mask(&self) -> Vec<bool> {
        self.char_mask.data().iter().map(|&m| m > 0.0).collect()
    }
}

/// Pads a list of utterances into one batch with reduction factor `r`.
pub fn make_batch(utts: &[&Utterance], r: usize) -> Result<Batch> {
    if utts.is_empty() {
        return Err(Error::Input("cannot batch zero utterances".into()));
    }
    if r == 0 {
        return Err(Error::Input("reduction factor must be positive".into()));
    }
    for u in utts {
        if u.frames() == 0 || u.char_ids.is_empty() {
            return Err(Error::Input(format!(
                "utterance {} has no frames or characters",
                u.id
            )));
        }
        if u.linear.shape()[1] != u.frames() {
            return Err(Error::shape("make_batch", u.mel.shape(), u.linear.shape()));
        }
    }
    let bsz = utts.len();
    let n_mels = utts[0].mel.shape()[0];
    let n_bins = utts[0].linear.shape()[0];
    let n_max = utts.iter().map(|u| u.char_ids.len()).max().unwrap();
    let t_real = utts.iter().map(|u| u.frames()).max().unwrap();
    let t_max = t_real.div_ceil(r) * r;
    let steps = t_max / r;

    let mut mel = Tensor::zeros(&[bsz, n_mels, t_max]);
    let mut lin = Tensor::zeros(&[bsz, n_bins, t_max]);
    let mut stop = Tensor::zeros(&[bsz, steps]);
    let mut frame_mask = Tensor::zeros(&[bsz, t_max]);
    let mut char_mask = Tensor::zeros(&[bsz, n_max]);
    let mut char_ids = Vec::with_capacity(bsz);

    for (b, u) in utts.iter().enumerate() {
        let t = u.frames();
        if u.mel.shape()[0] != n_mels || u.linear.shape()[0] != n_bins {
            return Err(Error::shape(
                "make_batch",
                utts[0].mel.shape(),
                u.mel.shape(),
            ));
        }
        for (src, dst, feat) in [(&u.mel, &mut mel, n_mels), (&u.linear, &mut lin, n_bins)] {
            for f in 0..feat {
                let off = (b * feat + f) * t_max;
                dst.data_mut()[off..off + t].copy_from_slice(src.row_slice(f));
            }
        }
        frame_mask.data_mut()[b * t_max..b * t_max + t].fill(1.0);
        let last = t.div_ceil(r) - 1;
        stop.data_mut()[b * steps + last..(b + 1) * steps].fill(1.0);
        let n = u.char_ids.len();
        char_mask.data_mut()[b * n_max..b * n_max + n].fill(1.0);
        let mut ids = u.char_ids.clone();
        ids.resize(n_max, PAD_ID);
        char_ids.push(ids);
    }

    Ok(Batch {
        ids: utts.iter().map(|u| u.id.clone()).collect(),
        char_ids,
        char_lengths: utts.iter().map(|u| u.char_ids.len()).collect(),
        mel_targets: mel,
        linear_targets: lin,
        stop_targets: stop,
        frame_lengths: utts.iter().map(|u| u.frames()).collect(),
        frame_mask,
        char_mask,
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn utt(id: &str, chars: usize, frames: usize) -> Utterance {
        let mel = Tensor::from_parts(
            vec![3, frames],
            (0..3 * frames)
                .map(|i| 0.1 + (i % 7) as f64 * 0.1)
                .collect(),
        );
        let linear = Tensor::from_parts(vec![4, frames], vec![0.5; 4 * frames]);
        Utterance {
            id: id.into(),
            raw_text: String::new(),
            char_ids: (0..chars).map(|i| 2 + i % 5).collect(),
            mel,
            linear,
        }
    }

    #[test]
    fn seven_frames_pad_to_ten() {
        let u = utt("a", 3, 7);
        let b = make_batch(&[&u], 5).unwrap();
        assert_eq!(b.max_frames(), 10);
        assert_eq!(b.decode_steps(), 2);
        assert_eq!(b.stop_targets.data(), &[0.0, 1.0]);
        assert_eq!(
            b.frame_mask.data(),
            &[1., 1., 1., 1., 1., 1., 1., 0., 0., 0.]
        );
    }

    #[test]
    fn mixed_lengths_mask_the_shorter_item() {
        let (u1, u2) = (utt("a", 2, 5), utt("b", 4, 10));
        let b = make_batch(&[&u1, &u2], 5).unwrap();
        assert_eq!(b.max_frames(), 10);
        assert_eq!(b.max_chars(), 4);
        for t in 0..10 {
            assert_eq!(b.frame_mask.get2(0, t), if t < 5 { 1.0 } else { 0.0 });
            assert_eq!(b.frame_mask.get2(1, t), 1.0);
        }
        assert_eq!(b.stop_targets.data(), &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(b.char_ids[0][2..], [PAD_ID, PAD_ID]);
        // group 1 of item 0 is all padding
        let g = b.mel_group(1);
        assert!(g.row_slice(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_items_have_full_masks() {
        let u = utt("a", 3, 10);
        let b = make_batch(&[&u, &u, &u], 5).unwrap();
        assert!(b.frame_mask.data().iter().all(|&m| m == 1.0));
        assert!(b.char_mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn errors() {
        assert!(make_batch(&[], 5).is_err());
        let mut u = utt("z", 3, 4);
        u.mel = Tensor::from_parts(vec![3, 0], vec![]);
        assert!(make_batch(&[&u], 5).is_err());
    }

    #[test]
    fn group_layout_is_frame_major() {
        let u = utt("a", 3, 10);
        let b = make_batch(&[&u], 5).unwrap();
        let g = b.mel_group(1);
        assert_eq!(g.shape(), &[1, 15]);
        // entry (frame j, band f) of group 1 is mel[f, 5 + j]
        for j in 0..5 {
            for f in 0..3 {
                assert_eq!(g.get2(0, j * 3 + f), u.mel.get2(f, 5 + j));
            }
        }
    }

    #[test]
    fn frame_major_concatenates_groups() {
        let (u1, u2) = (utt("a", 2, 7), utt("b", 3, 4));
        let b = make_batch(&[&u1, &u2], 5).unwrap();
        let all = b.mel_frames();
        let groups: Vec<f64> = (0..b.size())
            .flat_map(|i| {
                (0..b.decode_steps())
                    .flat_map(|s| b.mel_group(s).row_slice(i).to_vec())
                    .collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(all.data(), &groups[..]);
        let m = b.frame_major_mask(3);
        assert_eq!(m.data().iter().sum::<f64>(), (7 + 4) as f64 * 3.0);
        assert_eq!(b.step_mask().data(), &[1.0, 1.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn masks_match_lengths(frames in prop::collection::vec(1usize..23, 1..5), r in 1usize..6) {
            let utts: Vec<Utterance> = frames.iter().enumerate().map(|(i, &t)| utt(&i.to_string(), 1 + i, t)).collect();
            let refs: Vec<&Utterance> = utts.iter().collect();
            let b = make_batch(&refs, r).unwrap();
            prop_assert_eq!(b.max_frames() % r, 0);
            for (i, &t) in frames.iter().enumerate() {
                let row: f64 = (0..b.max_frames()).map(|k| b.frame_mask.get2(i, k)).sum();
                prop_assert_eq!(row as usize, t);
                for f in 0..3 {
                    for k in t..b.max_frames() {
                        prop_assert_eq!(b.mel_targets.data()[(i * 3 + f) * b.max_frames() + k], 0.0);
                    }
                }
                // exactly one 0 -> 1 transition, at ceil(T/r) - 1
                let stops: Vec<f64> = (0..b.decode_steps()).map(|s| b.stop_targets.get2(i, s)).collect();
                let first = stops.iter().position(|&s| s == 1.0).unwrap();
                prop_assert_eq!(first, t.div_ceil(r) - 1);
                prop_assert!(stops[first..].iter().all(|&s| s == 1.0));
            }
        }
    }
}

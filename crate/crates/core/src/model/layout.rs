/// Padded batch layout: sequence `b` occupies rows `b * width ..`, with its
/// tokens at positions `0..len[b]`, the CLS slot at `len[b]` and padding
/// after that.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub lengths: Vec<usize>,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl Layout {
    pub fn new(lengths: Vec<usize>) -> Self {
        let width = lengths.iter().copied().max().unwrap_or(0) + 1;
        let mut mask = vec![false; lengths.len() * width];
        for (b, &t) in lengths.iter().enumerate() {
            for p in 0..=t {
                mask[b * width + p] = true;
            }
        }
        Layout {
            lengths,
            width,
            mask,
        }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, b: usize, p: usize) -> usize {
        b * self.width + p
    }

    pub fn cls_row(&self, b: usize) -> usize {
        self.row(b, self.lengths[b])
    }
}

/// Truncates to `max_len` tokens, logging when it happens.
pub(crate) fn effective_len(len: usize, max_len: usize) -> usize {
    if len > max_len {
        log::warn!("utterance of {len} tokens truncated to {max_len}");
        max_len
    } else {
        len
    }
}

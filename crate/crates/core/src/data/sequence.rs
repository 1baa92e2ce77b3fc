use crate::error::{Error, Result};

/// Default clip length.
pub const CLIP_LEN: usize = 50;

/// Source indices that make up a clip of exactly `target` frames: the
/// centered window when the sequence is longer, cyclic repetition from the
/// start when it is shorter.
pub fn length_indices(len: usize, target: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::contract("cannot normalize the length of an empty sequence"));
    }
    if target == 0 {
        return Err(Error::contract("target clip length must be positive"));
    }
    Ok(if len >= target {
        let start = (len - target) / 2;
        (start..start + target).collect()
    } else {
        (0..target).map(|i| i % len).collect()
    })
}

pub fn normalize_length<T: Clone>(frames: &[T], target: usize) -> Result<Vec<T>> {
    Ok(length_indices(frames.len(), target)?.into_iter().map(|i| frames[i].clone()).collect())
}

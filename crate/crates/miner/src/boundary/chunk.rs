use crate::error::{MinerError, Result};

/// A half-open token range `[start, end)` of the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token < self.end
    }

    /// Window-local position of a context token.
    pub fn to_local(&self, token: usize) -> Option<usize> {
        self.contains(token).then(|| token - self.start)
    }

    pub fn to_global(&self, local: usize) -> usize {
        self.start + local
    }
}

/// Overlapping windows of at most `max_length` tokens. Consecutive windows
/// share `stride` tokens; the last window ends at `n_tokens`.
pub fn chunk_with_stride(n_tokens: usize, max_length: usize, stride: usize) -> Result<Vec<Window>> {
    if max_length == 0 || stride >= max_length {
        return Err(MinerError::Config(format!(
            "need max_length > stride (got max_length {max_length}, stride {stride})"
        )));
    }
    if n_tokens == 0 {
        return Ok(Vec::new());
    }
    let step = max_length - stride;
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_length).min(n_tokens);
        windows.push(Window { start, end });
        if end == n_tokens {
            break;
        }
        start += step;
    }
    Ok(windows)
}

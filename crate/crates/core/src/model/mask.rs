/// Which keys each query may attend to, over the concatenated input/output
/// sequence.
///
/// Input positions see the whole input block and nothing after it. Output
/// positions see the whole input block plus outputs up to and including
/// themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.len + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allowed[query * self.len..(query + 1) * self.len]
    }
}

pub fn build_mask(input_len: usize, prefix_len: usize) -> AttentionMask {
    let len = input_len + prefix_len;
    let mut allowed = vec![false; len * len];
    for i in 0..len {
        for j in 0..len {
            allowed[i * len + j] = j < input_len || (i >= input_len && j <= i);
        }
    }
    AttentionMask { len, allowed }
}

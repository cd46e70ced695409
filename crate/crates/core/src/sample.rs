use crate::numcore::Tensor;

/// An image with its class label and a provenance id.
///
/// Labels follow the benchmark convention: 0 is real, `1..=n` are majority
/// forgery families and `n + 1` is the minority family. `id` identifies the
/// rendered sample (seed-derived) so splits can be checked for overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Tensor,
    pub label: usize,
    pub id: u64,
}

impl LabeledSample {
    pub fn new(image: Tensor, label: usize, id: u64) -> Self {
        Self { image, label, id }
    }
}

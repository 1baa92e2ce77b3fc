//! The temporal KAN head: parallel recurrent KAN sublayers feeding the
//! output gate of a gated long-term memory, plus the pooled classifier tail
//! shared by every temporal head.

mod cell;
mod head;
mod rkan;

pub use cell::{TkanCell, TkanConfig, TkanSeqCache, TkanState, TkanStepCache};
pub use head::{embed, temporal_mean, ClassifierHead, PoolCache, PoolOutput, TemporalHead, DEFAULT_DROPOUT};
pub use rkan::{RkanStepCache, RkanSublayer};

impl TemporalHead for TkanCell {
    type Cache = TkanSeqCache;

    fn input_width(&self) -> usize {
        self.d()
    }

    fn output_width(&self) -> usize {
        self.d()
    }

    fn forward(&self, xs: &crate::numerics::Tensor) -> crate::Result<(crate::numerics::Tensor, Self::Cache)> {
        TkanCell::forward(self, xs)
    }

    fn backward(&mut self, cache: &Self::Cache, d_out: &crate::numerics::Tensor) -> crate::Result<crate::numerics::Tensor> {
        TkanCell::backward(self, cache, d_out)
    }
}

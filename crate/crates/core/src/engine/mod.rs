//! Streaming decoding: text-delay parallel generation and batch-of-two
//! generation with text swapping.

mod decode;
mod sampling;
mod sink;

pub use decode::{
    decode, decode_batch_parallel, decode_parallel, DecodeConfig, DecodeMode, DecodeOutput, DecodeState, LatencyReport,
};
pub use sampling::{sample_logits, sample_step, LayerRule, Sampling};
pub use sink::{GridCaptureSink, NullSink, Sink, StreamEvent, Tee, TextLineSink};

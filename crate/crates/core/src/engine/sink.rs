use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::grid::{IdSpace, TokenGrid};
use crate::vocab::{TokenId, AUDIO_LAYERS};

/// Produced by the engine as soon as the data exists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StreamEvent {
    TextToken {
        step: usize,
        id: TokenId,
    },
    /// Undelayed audio column `column`, complete once its last layer lands.
    AudioColumn {
        step: usize,
        column: usize,
        tokens: [TokenId; AUDIO_LAYERS],
    },
    Done {
        step: usize,
        truncated: bool,
    },
}

impl StreamEvent {
    pub fn step(&self) -> usize {
        match *self {
            StreamEvent::TextToken { step, .. }
            | StreamEvent::AudioColumn { step, .. }
            | StreamEvent::Done { step, .. } => step,
        }
    }
}

/// Receives events synchronously on the decoding thread; implementations
/// must not block.
pub trait Sink {
    fn event(&mut self, event: &StreamEvent);

    /// Called just before the model computes the logits of output `step`.
    fn step_started(&mut self, _step: usize) {}
}

impl Sink for Vec<StreamEvent> {
    fn event(&mut self, event: &StreamEvent) {
        self.push(event.clone());
    }
}

impl<F: FnMut(&StreamEvent)> Sink for F {
    fn event(&mut self, event: &StreamEvent) {
        self(event)
    }
}

/// Discards everything.
pub struct NullSink;

impl Sink for NullSink {
    fn event(&mut self, _: &StreamEvent) {}
}

/// Writes each text token through `render` as soon as it arrives, then a
/// newline on `Done`. Write errors are remembered, not raised mid-decode.
pub struct TextLineSink<W: Write, R: FnMut(TokenId) -> String> {
    out: W,
    render: R,
    first: bool,
    pub error: Option<std::io::Error>,
}

impl<W: Write, R: FnMut(TokenId) -> String> TextLineSink<W, R> {
    pub fn new(out: W, render: R) -> Self {
        Self {
            out,
            render,
            first: true,
            error: None,
        }
    }

    fn write(&mut self, s: &str) {
        if self.error.is_none() {
            if let Err(e) = self.out.write_all(s.as_bytes()).and_then(|_| self.out.flush()) {
                self.error = Some(e);
            }
        }
    }
}

impl<W: Write, R: FnMut(TokenId) -> String> Sink for TextLineSink<W, R> {
    fn event(&mut self, event: &StreamEvent) {
        match event {
            StreamEvent::TextToken { id, .. } => {
                let word = (self.render)(*id);
                let sep = if self.first { "" } else { " " };
                self.first = false;
                self.write(&format!("{sep}{word}"));
            }
            StreamEvent::Done { .. } => self.write("\n"),
            StreamEvent::AudioColumn { .. } => {}
        }
    }
}

/// Collects audio columns into a 7-layer global-id grid.
#[derive(Clone, Debug)]
pub struct GridCaptureSink {
    pub grid: TokenGrid,
}

impl Default for GridCaptureSink {
    fn default() -> Self {
        Self {
            grid: TokenGrid::filled(AUDIO_LAYERS, 0, 0, IdSpace::Global),
        }
    }
}

impl Sink for GridCaptureSink {
    fn event(&mut self, event: &StreamEvent) {
        if let StreamEvent::AudioColumn { tokens, .. } = event {
            self.grid.push_column(tokens);
        }
    }
}

/// Forwards every event to two sinks.
pub struct Tee<'a, A: Sink + ?Sized, B: Sink + ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: Sink + ?Sized, B: Sink + ?Sized> Sink for Tee<'_, A, B> {
    fn event(&mut self, event: &StreamEvent) {
        self.0.event(event);
        self.1.event(event);
    }

    fn step_started(&mut self, step: usize) {
        self.0.step_started(step);
        self.1.step_started(step);
    }
}

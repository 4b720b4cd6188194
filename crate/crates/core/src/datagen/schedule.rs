use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::paramspace::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Every step sees all local examples.
    Full,
    Fixed(usize),
}

/// Per-client reshuffling minibatch sampler over local indices `0..n_local`.
///
/// Epoch `e` is a fresh permutation drawn from `stream.derive("epoch", e)` and
/// is cut into consecutive batches; a short final batch is kept so that each
/// index appears exactly once per epoch.
#[derive(Debug, Clone)]
pub struct MinibatchSchedule {
    client_id: usize,
    n_local: usize,
    batch: BatchSize,
    stream: SeededStream,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl MinibatchSchedule {
    pub fn new(client_id: usize, n_local: usize, batch: BatchSize, stream: SeededStream) -> Result<Self> {
        if n_local == 0 {
            return Err(Error::usage(format!("client {client_id} has no examples")));
        }
        if batch == BatchSize::Fixed(0) {
            return Err(Error::usage("batch size must be at least 1"));
        }
        Ok(MinibatchSchedule {
            client_id,
            n_local,
            batch,
            stream,
            epoch: 0,
            order: Vec::new(),
            cursor: n_local,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn batch_size(&self) -> BatchSize {
        self.batch
    }

    /// Number of completed or in-progress epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_full(&self) -> bool {
        match self.batch {
            BatchSize::Full => true,
            BatchSize::Fixed(b) => b >= self.n_local,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let size = match self.batch {
            BatchSize::Full => return (0..self.n_local).collect(),
            BatchSize::Fixed(b) => b.min(self.n_local),
        };
        if self.cursor >= self.n_local {
            self.order = (0..self.n_local).collect();
            self.order.shuffle(&mut self.stream.derive("epoch", self.epoch).rng());
            self.epoch += 1;
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(self.n_local);
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

//! Named, independent random streams derived from one master seed.
//!
//! Every consumer of randomness draws from exactly one stream, so two runs
//! that share a seed also share, for example, the true channel trajectory
//! even when their decisions (and hence their use of other streams) differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nalgebra::{Complex, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    ChannelEvolution,
    EstimationNoise,
    StateEvolution,
    MeasurementNoise,
    ExplorationNoise,
    DnnInit,
    ReplaySampling,
    RandomBaseline,
}

impl Stream {
    pub const ALL: [Stream; 8] = [
        Stream::ChannelEvolution,
        Stream::EstimationNoise,
        Stream::StateEvolution,
        Stream::MeasurementNoise,
        Stream::ExplorationNoise,
        Stream::DnnInit,
        Stream::ReplaySampling,
        Stream::RandomBaseline,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// ChaCha stream id. Offset by one so no stream uses the default id 0.
    fn stream_id(self) -> u64 {
        self.index() as u64 + 1
    }
}

/// Position of one stream, sufficient to restore it bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub stream: Stream,
    pub seed: [u8; 32],
    pub word_pos: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "RngSnapshot", from = "RngSnapshot")]
pub struct RngStreams {
    master_seed: u64,
    streams: Vec<ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        let streams = Stream::ALL
            .iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                rng.set_stream(s.stream_id());
                rng
            })
            .collect();
        Self {
            master_seed,
            streams,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn get(&mut self, stream: Stream) -> &mut ChaCha8Rng {
        &mut self.streams[stream.index()]
    }

    pub fn cursors(&self) -> Vec<StreamCursor> {
        Stream::ALL
            .iter()
            .map(|&s| {
                let rng = &self.streams[s.index()];
                StreamCursor {
                    stream: s,
                    seed: rng.get_seed(),
                    word_pos: rng.get_word_pos(),
                }
            })
            .collect()
    }

    pub fn from_cursors(master_seed: u64, cursors: &[StreamCursor]) -> Self {
        let mut out = Self::new(master_seed);
        for c in cursors {
            let mut rng = ChaCha8Rng::from_seed(c.seed);
            rng.set_stream(c.stream.stream_id());
            rng.set_word_pos(c.word_pos);
            out.streams[c.stream.index()] = rng;
        }
        out
    }
}

impl PartialEq for RngStreams {
    fn eq(&self, other: &Self) -> bool {
        self.master_seed == other.master_seed && self.cursors() == other.cursors()
    }
}

#[derive(Serialize, Deserialize)]
struct RngSnapshot {
    master_seed: u64,
    cursors: Vec<StreamCursor>,
}

impl From<RngStreams> for RngSnapshot {
    fn from(r: RngStreams) -> Self {
        Self {
            master_seed: r.master_seed,
            cursors: r.cursors(),
        }
    }
}

impl From<RngSnapshot> for RngStreams {
    fn from(s: RngSnapshot) -> Self {
        RngStreams::from_cursors(s.master_seed, &s.cursors)
    }
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Circularly symmetric complex Gaussian vector, per-entry variance `variance`.
pub fn complex_gaussian<R: rand::Rng + ?Sized>(
    len: usize,
    variance: f64,
    rng: &mut R,
) -> DVector<Complex<f64>> {
    let s = (0.5 * variance).sqrt();
    DVector::from_fn(len, |_, _| {
        let re = standard_normal(rng);
        let im = standard_normal(rng);
        Complex::new(s * re, s * im)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStreams::new(7);
        let mut b = RngStreams::new(7);
        for s in Stream::ALL {
            let x: u64 = a.get(s).random();
            let y: u64 = b.get(s).random();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn streams_are_not_cross_consumed() {
        let mut a = RngStreams::new(11);
        let mut b = RngStreams::new(11);
        for _ in 0..100 {
            let _: f64 = a.get(Stream::ExplorationNoise).random();
        }
        let x: u64 = a.get(Stream::ChannelEvolution).random();
        let y: u64 = b.get(Stream::ChannelEvolution).random();
        assert_eq!(x, y);
        let p: u64 = a.get(Stream::DnnInit).random();
        let q: u64 = a.get(Stream::ReplaySampling).random();
        assert_ne!(p, q);
    }

    #[test]
    fn cursors_restore_position() {
        let mut a = RngStreams::new(3);
        for _ in 0..17 {
            let _: u32 = a.get(Stream::MeasurementNoise).random();
        }
        let mut b = RngStreams::from_cursors(3, &a.cursors());
        for s in Stream::ALL {
            let x: u64 = a.get(s).random();
            let y: u64 = b.get(s).random();
            assert_eq!(x, y, "{s:?}");
        }
    }
}

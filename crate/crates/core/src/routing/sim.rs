//! Seeded stand-in for the network between the external connector and
//! stakeholders: each response is either dropped or delivered after a
//! sampled latency.
//!
//! Drop decisions and latencies come from two independent ChaCha8 streams of
//! the same seed (stream 0 and stream 1), so the drop sequence can be
//! replayed without knowing anything about latencies.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{ResponseEnvelope, ResponsePayload, TokenEnvelope};
use crate::ids::AgentId;
use crate::time::Timestamp;

pub const DROP_STREAM: u64 = 0;
pub const LATENCY_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Latency {
    Fixed(u64),
    /// Inclusive millisecond bounds.
    Uniform {
        min: u64,
        max: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub latency: Latency,
    pub drop_probability: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("drop probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("latency bounds are reversed")]
    InvalidLatency,
}

/// Uniform f64 in [0, 1) from the top 53 bits of one u64 draw.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct NetworkSim {
    config: NetworkConfig,
    drops: ChaCha8Rng,
    latency: ChaCha8Rng,
    in_flight: BTreeMap<(Timestamp, u64), ResponseEnvelope>,
    stats: SimStats,
}

impl NetworkSim {
    pub fn new(config: NetworkConfig) -> Result<Self, SimError> {
        let p = config.drop_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidProbability(p));
        }
        if let Latency::Uniform { min, max } = config.latency {
            if min > max {
                return Err(SimError::InvalidLatency);
            }
        }
        Ok(Self {
            config,
            drops: stream_rng(config.seed, DROP_STREAM),
            latency: stream_rng(config.seed, LATENCY_STREAM),
            in_flight: BTreeMap::new(),
            stats: SimStats::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn sample_latency(&mut self) -> u64 {
        match self.config.latency {
            Latency::Fixed(ms) => ms,
            Latency::Uniform { min, max } => min + self.latency.next_u64() % (max - min + 1),
        }
    }

    /// Sends a stakeholder's answer to `envelope` back towards the connector.
    /// Returns false when the network drops it. Exactly one drop draw is
    /// consumed per call.
    pub fn send(
        &mut self,
        envelope: &TokenEnvelope,
        responder: AgentId,
        payload: ResponsePayload,
        now: Timestamp,
    ) -> bool {
        self.stats.sent += 1;
        if unit_f64(&mut self.drops) < self.config.drop_probability {
            self.stats.dropped += 1;
            return false;
        }
        let arrival = now.plus_millis(self.sample_latency());
        let response =
            ResponseEnvelope { token_id: envelope.token_id.clone(), responder, payload, responded_at: arrival };
        self.in_flight.insert((arrival, self.stats.sent), response);
        true
    }

    /// Responses arriving at or before `now`, by arrival time then send
    /// order.
    pub fn deliver_due(&mut self, now: Timestamp) -> Vec<ResponseEnvelope> {
        let later = self.in_flight.split_off(&(now.plus_millis(1), 0));
        let due = core::mem::replace(&mut self.in_flight, later);
        self.stats.delivered += due.len() as u64;
        due.into_values().collect()
    }

    /// Earliest pending arrival.
    pub fn next_arrival(&self) -> Option<Timestamp> {
        self.in_flight.keys().next().map(|(t, _)| *t)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::RequestDetails;

    fn envelope(n: u64) -> TokenEnvelope {
        TokenEnvelope {
            token_id: alloc::format!("pi-1/t{n}").into(),
            instance_id: "pi-1".into(),
            task_exec_id: "pi-1/x1".into(),
            destination: "consultee".into(),
            requested_details: RequestDetails { text: "analysis".into(), expected_kind: "report".into() },
            issued_at: Timestamp::EPOCH,
            deadline: Timestamp::from_millis(10_000),
        }
    }

    fn payload() -> ResponsePayload {
        ResponsePayload { kind: "report".into(), content: "ok".into() }
    }

    #[test]
    fn rejects_invalid_probability() {
        for p in [-0.1, 1.5, f64::NAN] {
            let cfg = NetworkConfig { latency: Latency::Fixed(0), drop_probability: p, seed: 1 };
            assert!(NetworkSim::new(cfg).is_err());
        }
    }

    #[test]
    fn boundaries() {
        let mut all =
            NetworkSim::new(NetworkConfig { latency: Latency::Fixed(0), drop_probability: 0.0, seed: 3 }).unwrap();
        let mut none =
            NetworkSim::new(NetworkConfig { latency: Latency::Fixed(0), drop_probability: 1.0, seed: 3 }).unwrap();
        for n in 0..50 {
            assert!(all.send(&envelope(n), "r".into(), payload(), Timestamp::EPOCH));
            assert!(!none.send(&envelope(n), "r".into(), payload(), Timestamp::EPOCH));
        }
        assert_eq!(all.deliver_due(Timestamp::EPOCH).len(), 50);
        assert_eq!(none.deliver_due(Timestamp::from_millis(u64::MAX / 2)).len(), 0);
    }

    #[test]
    fn drop_count_matches_independent_replay() {
        let cfg = NetworkConfig { latency: Latency::Uniform { min: 5, max: 500 }, drop_probability: 0.2, seed: 42 };
        let mut sim = NetworkSim::new(cfg).unwrap();
        let kept = (0..100).filter(|&n| sim.send(&envelope(n), "r".into(), payload(), Timestamp::EPOCH)).count();

        let mut replay = ChaCha8Rng::seed_from_u64(42);
        replay.set_stream(0);
        let expected = (0..100).filter(|_| ((replay.next_u64() >> 11) as f64 / 9007199254740992.0) >= 0.2).count();
        assert_eq!(kept, expected);
        assert!(kept > 60 && kept < 95, "{kept}");
    }

    #[test]
    fn delivery_respects_latency_and_is_deterministic() {
        let cfg = NetworkConfig { latency: Latency::Uniform { min: 10, max: 100 }, drop_probability: 0.3, seed: 7 };
        let run = || {
            let mut sim = NetworkSim::new(cfg).unwrap();
            for n in 0..30 {
                sim.send(&envelope(n), "r".into(), payload(), Timestamp::from_millis(n));
            }
            assert!(sim.deliver_due(Timestamp::from_millis(9)).is_empty());
            let mut out = Vec::new();
            for t in (10..=200).step_by(10) {
                for r in sim.deliver_due(Timestamp::from_millis(t)) {
                    assert!(r.responded_at <= Timestamp::from_millis(t));
                    out.push(r);
                }
            }
            assert_eq!(sim.in_flight(), 0);
            out
        };
        assert_eq!(run(), run());
    }
}

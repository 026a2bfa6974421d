//! Deterministic lossy link used in simulation.

use rand::Rng;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    /// Available to the receiver at the send time.
    Delivered,
    Dropped,
    /// Available at the given absolute time.
    Delayed(f64),
}

/// One direction of a link: Bernoulli loss, uniform latency, FIFO order.
#[derive(Debug, Clone)]
pub struct VirtualLink<T> {
    pub loss_p: f64,
    pub latency_min_s: f64,
    pub latency_max_s: f64,
    queue: VecDeque<(f64, T)>,
    last_arrival_s: f64,
}

impl<T> VirtualLink<T> {
    pub fn new(loss_p: f64, latency_min_s: f64, latency_max_s: f64) -> Self {
        assert!((0.0..=1.0).contains(&loss_p), "loss probability out of range");
        assert!(0.0 <= latency_min_s && latency_min_s <= latency_max_s, "bad latency bounds");
        VirtualLink {
            loss_p,
            latency_min_s,
            latency_max_s,
            queue: VecDeque::new(),
            last_arrival_s: f64::NEG_INFINITY,
        }
    }

    pub fn from_params(p: &crate::world::NetworkParams) -> Self {
        VirtualLink::new(p.loss_p, p.latency_min_s, p.latency_max_s)
    }

    /// Enqueues `msg` sent at `now_s`. A message never overtakes an earlier one.
    pub fn send<R: Rng + ?Sized>(&mut self, now_s: f64, msg: T, rng: &mut R) -> Delivery {
        // both draws are always made so the RNG stream does not depend on outcomes
        let drop = rng.gen::<f64>() < self.loss_p;
        let u: f64 = rng.gen();
        if drop {
            return Delivery::Dropped;
        }
        let latency = self.latency_min_s + u * (self.latency_max_s - self.latency_min_s);
        let at = (now_s + latency).max(self.last_arrival_s);
        self.last_arrival_s = at;
        self.queue.push_back((at, msg));
        if at <= now_s {
            Delivery::Delivered
        } else {
            Delivery::Delayed(at)
        }
    }

    /// Messages that have arrived by `now_s`, in send order.
    pub fn recv(&mut self, now_s: f64) -> Vec<T> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(at, _)| *at <= now_s) {
            out.push(self.queue.pop_front().unwrap().1);
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

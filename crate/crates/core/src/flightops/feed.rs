//! A seeded stand-in for the airport's live flight feed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Flight, FlightOps, FlightPatch, FlightStatus};

pub struct FeedSimulator {
    rng: ChaCha8Rng,
}

impl FeedSimulator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The next change the feed would make to one of `flights`.
    pub fn next_patch(&mut self, flights: &[Flight]) -> Option<(String, FlightPatch)> {
        let flight = flights.choose(&mut self.rng)?;
        let mut patch = FlightPatch::default();
        match self.rng.gen_range(0..3) {
            0 => patch.status = FlightStatus::ALL.choose(&mut self.rng).copied(),
            1 => {
                let (h, m) = (self.rng.gen_range(5..23), self.rng.gen_range(0..12) * 5);
                patch.estimated_time = Some(format!("{h:02}:{m:02}"));
                patch.status = Some(FlightStatus::Delayed);
            }
            _ => {
                let pier = ['D', 'E', 'F'].choose(&mut self.rng).copied().unwrap_or('F');
                patch.gate = Some(format!("{pier}{:02}", self.rng.gen_range(1..50)));
            }
        }
        Some((flight.flight_id.clone(), patch))
    }

    /// Applies one change on the application's authority.
    pub fn tick(&mut self, app: &FlightOps) -> Option<Flight> {
        let (id, patch) = self.next_patch(&app.flights())?;
        app.apply(&id, &patch).ok()
    }
}

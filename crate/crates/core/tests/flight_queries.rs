use std::collections::BTreeMap;
use std::sync::Arc;

use hic_core::flightops::{parse_flights, Flight, FlightOps, FlightStatus, FILTER_FIELDS};
use hic_core::profile_store::ProfileStore;
use hic_core::runtime::fixtures;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn random_flights(rng: &mut ChaCha8Rng) -> Vec<Flight> {
    (0..rng.gen_range(0..40))
        .map(|i| Flight {
            flight_id: format!("XX{i:03}"),
            airline: ["AF", "KL", "LH"].choose(rng).unwrap().to_string(),
            scheduled_time: format!("{:02}:00", rng.gen_range(6..9)),
            estimated_time: format!("{:02}:00", rng.gen_range(6..10)),
            gate: format!("G{}", rng.gen_range(1..4)),
            status: *FlightStatus::ALL.choose(rng).unwrap(),
            alert: rng.gen_bool(0.5), // recomputed by the store
        })
        .collect()
}

/// Every field of the flight as it serializes, as text.
fn as_text(f: &Flight, field: &str) -> Option<String> {
    let mut v = serde_json::to_value(f).unwrap();
    if field == "alert" {
        let alert = matches!(f.status, FlightStatus::Delayed | FlightStatus::Cancelled);
        v["alert"] = Value::Bool(alert);
    }
    match v.get(field)? {
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn random_filter(rng: &mut ChaCha8Rng, flights: &[Flight]) -> BTreeMap<String, String> {
    let mut filter = BTreeMap::new();
    for _ in 0..rng.gen_range(0..3) {
        let field = *FILTER_FIELDS.choose(rng).unwrap();
        let value = match flights.choose(rng) {
            Some(f) if rng.gen_bool(0.8) => as_text(f, field).unwrap(),
            _ => "nothing".into(),
        };
        filter.insert(field.to_owned(), value);
    }
    filter
}

#[test]
fn queries_match_a_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixture = parse_flights(fixtures::FLIGHTS).unwrap();
    for case in 0..300 {
        let flights = if case % 5 == 0 { fixture.clone() } else { random_flights(&mut rng) };
        let ops = FlightOps::new(flights.clone(), Vec::new(), Arc::new(ProfileStore::new()), None);
        for _ in 0..5 {
            let filter = random_filter(&mut rng, &flights);
            let got: Vec<String> = ops
                .query_flights(&filter)
                .unwrap()
                .into_iter()
                .map(|f| f.flight_id)
                .collect();
            let mut want: Vec<String> = flights
                .iter()
                .filter(|f| filter.iter().all(|(k, v)| as_text(f, k).as_deref() == Some(v)))
                .map(|f| f.flight_id.clone())
                .collect();
            want.sort();
            assert_eq!(got, want, "case {case} filter {filter:?}");
        }
    }
}

#[test]
fn unknown_filter_fields_are_refused() {
    let ops = FlightOps::new(Vec::new(), Vec::new(), Arc::new(ProfileStore::new()), None);
    let filter = BTreeMap::from([("pilot".to_owned(), "x".to_owned())]);
    assert!(ops.query_flights(&filter).is_err());
}

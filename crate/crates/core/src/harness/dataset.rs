use alloc::string::String;

use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Scale;

/// Column names, in file order.
pub const COLUMNS: [&str; 14] = [
    "id",
    "name",
    "price",
    "city",
    "country",
    "geonames_id",
    "timezone",
    "reviews",
    "rating",
    "satisfaction",
    "beds",
    "checkin",
    "city_id",
    "accommodation_type",
];

/// One accommodation listing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Listing {
    pub id: u64,
    pub name: String,
    pub price: f64,
    pub city: &'static str,
    pub country: &'static str,
    pub geonames_id: u32,
    pub timezone: &'static str,
    pub reviews: u32,
    pub rating: f64,
    pub satisfaction: f64,
    pub beds: u8,
    pub checkin: &'static str,
    pub city_id: u32,
    pub accommodation_type: &'static str,
}

struct City {
    name: &'static str,
    country: &'static str,
    geonames_id: u32,
    timezone: &'static str,
    city_id: u32,
}

const CITIES: [City; 10] = [
    City { name: "Amsterdam", country: "Netherlands", geonames_id: 2759794, timezone: "Europe/Amsterdam", city_id: 1 },
    City { name: "Barcelona", country: "Spain", geonames_id: 3128760, timezone: "Europe/Madrid", city_id: 2 },
    City { name: "Berlin", country: "Germany", geonames_id: 2950159, timezone: "Europe/Berlin", city_id: 3 },
    City { name: "Lisbon", country: "Portugal", geonames_id: 2267057, timezone: "Europe/Lisbon", city_id: 4 },
    City { name: "London", country: "United Kingdom", geonames_id: 2643743, timezone: "Europe/London", city_id: 5 },
    City { name: "Paris", country: "France", geonames_id: 2988507, timezone: "Europe/Paris", city_id: 6 },
    City { name: "Prague", country: "Czechia", geonames_id: 3067696, timezone: "Europe/Prague", city_id: 7 },
    City { name: "Rome", country: "Italy", geonames_id: 3169070, timezone: "Europe/Rome", city_id: 8 },
    City { name: "Vienna", country: "Austria", geonames_id: 2761369, timezone: "Europe/Vienna", city_id: 9 },
    City { name: "Warsaw", country: "Poland", geonames_id: 756135, timezone: "Europe/Warsaw", city_id: 10 },
];

const TYPES: [&str; 6] = ["Hotel", "Apartment", "Hostel", "Guest house", "Bed and breakfast", "Villa"];
const ADJECTIVES: [&str; 8] = ["Cosy", "Central", "Grand", "Quiet", "Sunny", "Modern", "Old Town", "Riverside"];
const CHECKIN: [&str; 5] = ["12:00", "14:00", "15:00", "16:00", "18:00"];

/// Deterministic synthetic dataset of one scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub scale: Scale,
}

impl DatasetSpec {
    pub fn new(scale: Scale) -> Self {
        Self { scale }
    }

    pub fn row_count(&self) -> u64 {
        self.scale.rows()
    }

    /// Rows for `seed`, generated lazily.
    pub fn rows(&self, seed: u64) -> Rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.scale as u64);
        Rows {
            rng,
            next_id: 1,
            total: self.row_count(),
        }
    }
}

pub struct Rows {
    rng: ChaCha8Rng,
    next_id: u64,
    total: u64,
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = libm::pow(10.0, places as f64);
    libm::round(x * f) / f
}

impl Iterator for Rows {
    type Item = Listing;

    fn next(&mut self) -> Option<Listing> {
        if self.next_id > self.total {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        let r = &mut self.rng;
        let city = CITIES.choose(r).expect("non-empty");
        let kind = *TYPES.choose(r).expect("non-empty");
        let adjective = *ADJECTIVES.choose(r).expect("non-empty");
        let rating = round_to(r.random_range(5.0..10.0), 1);
        Some(Listing {
            id,
            name: alloc::format!("{adjective} {kind} {}", city.name),
            price: round_to(r.random_range(25.0..600.0), 2),
            city: city.name,
            country: city.country,
            geonames_id: city.geonames_id,
            timezone: city.timezone,
            reviews: r.random_range(0..2_500),
            rating,
            satisfaction: round_to((rating * 10.0 + r.random_range(-5.0..5.0)).clamp(0.0, 100.0), 1),
            beds: r.random_range(1..=6),
            checkin: CHECKIN.choose(r).expect("non-empty"),
            city_id: city.city_id,
            accommodation_type: kind,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total + 1 - self.next_id) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Rows {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn small_row_count() {
        assert_eq!(DatasetSpec::new(Scale::Small).rows(1).count(), 22_248);
    }

    #[test]
    fn large_row_count() {
        let rows = DatasetSpec::new(Scale::Large).rows(1);
        assert_eq!(rows.len(), 500_000);
        assert_eq!(rows.last().unwrap().id, 500_000);
    }

    #[test]
    fn seeded_rows_repeat() {
        let a: Vec<_> = DatasetSpec::new(Scale::Small).rows(7).take(50).collect();
        let b: Vec<_> = DatasetSpec::new(Scale::Small).rows(7).take(50).collect();
        let c: Vec<_> = DatasetSpec::new(Scale::Small).rows(8).take(50).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn serialized_fields_match_columns() {
        let row = DatasetSpec::new(Scale::Small).rows(1).next().unwrap();
        let v = serde_json::to_value(&row).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), COLUMNS.len());
        for c in COLUMNS {
            assert!(obj.contains_key(c), "{c}");
        }
    }
}

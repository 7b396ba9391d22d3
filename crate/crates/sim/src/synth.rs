//! Seeded synthetic datasets shaped like the study's: countries × years.

use holoproxy_core::DataCube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COUNTRIES: [&str; 16] = [
    "Austria", "Brazil", "Canada", "Denmark", "Egypt", "France", "Ghana", "Hungary", "India", "Japan", "Kenya",
    "Laos", "Mexico", "Norway", "Oman", "Peru",
];

/// `countries × years` cube with values on a 0.1 grid in `[0, 100)`, so ties do occur.
/// Countries beyond the built-in names are numbered.
pub fn synthetic_cube(countries: usize, years: usize, seed: u64) -> DataCube {
    assert!(countries > 0 && years > 0, "synthetic cube needs both axes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations = (0..countries)
        .map(|i| COUNTRIES.get(i).map_or_else(|| format!("Country {i}"), |s| s.to_string()))
        .collect();
    let year_labels = (0..years).map(|i| (2000 + i).to_string()).collect();
    let values = (0..countries * years).map(|_| f64::from(rng.random_range(0u32..1000)) / 10.0).collect();
    DataCube::new(locations, year_labels, values, "value", "").expect("synthetic cube is well formed")
}

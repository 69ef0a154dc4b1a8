//! Fixtures shared by the benchmarks.

use lifemine::preprocess::ExtensionConfig;
use lifemine::synth::{self, SynthSpec};
use lifemine::{ActivityMatrix, ActivityTensor, Dataset};

pub fn planted_matrix(n: usize, m: usize, k: usize) -> ActivityMatrix {
    let (a, _, _) = synth::planted_low_rank(n, m, k, 1);
    ActivityMatrix::from_values(a).expect("planted matrix is non-negative")
}

pub fn planted_tensor(dims: (usize, usize, usize), k: usize) -> ActivityTensor {
    synth::planted_tensor(dims, k, Some(1e4), 11)
        .expect("valid dims")
        .0
}

/// `users` synthetic users with a tenth of their posts stripped of venues.
pub fn venueless_dataset(users: usize) -> Dataset {
    let spec = SynthSpec::from_json(&format!(
        r#"{{
            "seed": 3,
            "days": 28,
            "categories": ["Home (private)", "Office", "Bar", "Gym"],
            "spatial_profiles": [[6, 1, 1, 0], [1, 6, 0, 1], [0, 1, 5, 2]],
            "venues_per_category": 25,
            "venueless": {{"fraction": 0.1}},
            "cities": [
                {{"name": "a", "n_users": {users}, "activity": 60, "origin": [40.7, -74.0],
                  "temporal_weights": [1, 1, 1],
                  "blobs": [{{"name": "x", "share": 1.0, "weights": [1, 1, 1]}}]}}
            ]
        }}"#
    ))
    .expect("fixture spec parses");
    synth::generate_dataset(&spec).expect("fixture spec is valid")
}

pub fn extension_config() -> ExtensionConfig {
    ExtensionConfig::default()
}

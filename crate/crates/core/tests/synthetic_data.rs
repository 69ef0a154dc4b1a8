use lifemine::preprocess::{extend_checkins, haversine_m, ExtensionConfig};
use lifemine::synth::{generate_dataset, SynthSpec};
use lifemine::Dataset;

fn spec(venueless: &str) -> SynthSpec {
    SynthSpec::from_json(&format!(
        r#"{{
            "seed": 19,
            "days": 21,
            "categories": ["Home (private)", "Office", "Bar"],
            "spatial_profiles": [[6, 1, 1], [1, 6, 1], [1, 1, 6]],
            "venueless": {venueless},
            "cities": [
                {{"name": "a", "n_users": 12, "activity": 40, "origin": [40.7, -74.0],
                  "temporal_weights": [1, 1, 1],
                  "blobs": [{{"name": "x", "share": 1.0, "weights": [1, 1, 1]}}]}}
            ]
        }}"#
    ))
    .unwrap()
}

fn nearest_venue_m(ds: &Dataset, lat: f64, lon: f64) -> f64 {
    ds.venues
        .iter()
        .map(|v| haversine_m((lat, lon), (v.lat, v.lon)))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn extension_picks_exactly_the_near_posts() {
    let ds = generate_dataset(&spec(
        r#"{"fraction": 0.3, "near_share": 0.5, "near_m": 29, "far_m": 31}"#,
    ))
    .unwrap();
    let planted: Vec<(usize, f64)> = ds
        .checkins
        .iter()
        .enumerate()
        .filter(|(_, c)| c.venue_id.is_none())
        .map(|(i, c)| (i, nearest_venue_m(&ds, c.lat, c.lon)))
        .collect();
    assert!(planted.len() > 100, "{} venue-less posts", planted.len());
    for &(_, d) in &planted {
        assert!(
            (d - 29.0).abs() < 0.05 || (d - 31.0).abs() < 0.05,
            "planted at {d}"
        );
    }
    let near: Vec<usize> = planted
        .iter()
        .filter(|(_, d)| *d < 30.0)
        .map(|(i, _)| *i)
        .collect();
    assert!(!near.is_empty() && near.len() < planted.len());

    let ext = extend_checkins(&ds, &ExtensionConfig::default()).unwrap();
    let assigned: Vec<usize> = planted
        .iter()
        .map(|(i, _)| *i)
        .filter(|&i| ext.checkins[i].venue_id.is_some())
        .collect();
    assert_eq!(assigned, near);
    for &i in &assigned {
        assert!(!ext.checkins[i].categories.is_empty());
    }
}

#[test]
fn extension_is_a_no_op_without_venueless_posts() {
    let ds = generate_dataset(&spec(r#"{"fraction": 0.0}"#)).unwrap();
    assert!(ds.checkins.iter().all(|c| c.venue_id.is_some()));
    let ext = extend_checkins(&ds, &ExtensionConfig::default()).unwrap();
    assert_eq!(ext.checkins, ds.checkins);
}

#[test]
fn generated_dataset_round_trips_through_files() {
    let ds = generate_dataset(&spec(r#"{"fraction": 0.1}"#)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_dir(dir.path()).unwrap();
    let (back, report) = Dataset::load_dir(dir.path()).unwrap();
    assert!(report.checkins.rejects.is_empty());
    assert_eq!(back, ds);
}

#[test]
fn same_seed_same_dataset() {
    let s = spec(r#"{"fraction": 0.1}"#);
    assert_eq!(generate_dataset(&s).unwrap(), generate_dataset(&s).unwrap());
    let other = SynthSpec {
        seed: 20,
        ..s.clone()
    };
    assert_ne!(
        generate_dataset(&other).unwrap().checkins,
        generate_dataset(&s).unwrap().checkins
    );
}

//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Duration, NaiveDateTime};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;

use lifemine::lifestyle::{self, extract_time_ranges, Grouping, HourRange, KMeansConfig, TimeMode};
use lifemine::pipeline::{run_pipeline, PipelineConfig};
use lifemine::preprocess::{
    extend_checkins, filter_low_activity, filter_tourists, haversine_m, ExtensionConfig,
};
use lifemine::stats::{self, BoxStats, Bucketing, DayFilter};
use lifemine::synth::{self, circadian_profiles, MatrixKind, SynthSpec};
use lifemine::{
    cp_als, khatri_rao, mode_unfold, nmf, ActivityMatrix, CheckIn, CpConfig, CpInit, Dataset,
    NmfConfig, Venue,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ts(s: &str) -> NaiveDateTime {
    lifemine::model::parse_timestamp(s).expect("fixture timestamp")
}

fn checkin(user: &str, at: NaiveDateTime, venue: Option<&str>, cats: &[&str]) -> CheckIn {
    CheckIn {
        user_id: user.into(),
        timestamp: at,
        lat: 40.7,
        lon: -74.0,
        venue_id: venue.map(String::from),
        categories: cats.iter().map(|c| c.to_string()).collect(),
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn bundled_spec() -> SynthSpec {
    let text = std::fs::read_to_string(data_dir().join("two_cities.json")).expect("bundled spec");
    SynthSpec::from_json(&text).expect("valid bundled spec")
}

fn nmf_planted() -> Outcome {
    let (a, _, _) = synth::planted_low_rank(200, 24, 3, 1);
    let m = ActivityMatrix::from_values(a).map_err(err)?;
    let start = Instant::now();
    let model = nmf(
        &m,
        &NmfConfig {
            k: 3,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let rel = model.relative_error(&m);
    let trace = &model.objective_trace;
    let increases = trace.windows(2).filter(|w| w[1] > w[0]).count();
    let summary = format!(
        "relative error {rel:.2e} after {} iterations, {increases} objective increases, {secs:.2} s",
        model.iterations
    );
    ensure(rel <= 1e-3, || format!("{summary}; want <= 1e-3"))?;
    ensure(model.iterations <= 500, || {
        format!("{summary}; want <= 500 iterations")
    })?;
    ensure(increases == 0, || {
        format!("{summary}; objective rose {increases} times")
    })?;
    ensure(secs < 5.0, || format!("{summary}; want < 5 s"))?;
    Ok(summary)
}

fn cp_planted() -> Outcome {
    let (t, _) = synth::planted_tensor((100, 24, 50), 3, Some(1e5), 11).map_err(err)?;
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut errors = Vec::new();
    for init in [CpInit::SingularVector, CpInit::Random] {
        let cfg = CpConfig {
            k: 3,
            init,
            seed: 5,
            ..Default::default()
        };
        let model = cp_als(&t, &cfg).map_err(err)?;
        let fit = model.fit();
        let steps: Vec<f64> = model.fit_trace.windows(2).map(|w| w[0] - w[1]).collect();
        let (last, earlier) = steps.split_last().ok_or("no sweeps recorded")?;
        let rule = model.converged && *last < cfg.tol && earlier.iter().all(|s| *s >= cfg.tol);
        parts.push(format!(
            "{init:?} fit {fit:.4} in {} sweeps",
            model.iterations
        ));
        ensure(fit >= 0.99, || format!("{init:?}: fit {fit:.4} < 0.99"))?;
        ensure(rule, || {
            format!(
                "{init:?}: stopping rule violated (converged {}, last step {last:.2e})",
                model.converged
            )
        })?;
        errors.push(model.final_error());
    }
    let secs = start.elapsed().as_secs_f64();
    let gap = (errors[0] - errors[1]).abs() / errors[0].min(errors[1]);
    let summary = format!(
        "{}; final errors differ by {:.2}%, {secs:.1} s",
        parts.join(", "),
        100.0 * gap
    );
    ensure(gap <= 0.05, || format!("{summary}; want <= 5%"))?;
    ensure(secs < 30.0, || format!("{summary}; want < 30 s"))?;
    Ok(summary)
}

fn unfold_identity() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 100,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let factors = (1usize..7, 1usize..7, 1usize..7, 1usize..5).prop_flat_map(|(n, m, p, k)| {
        (
            proptest::collection::vec(0.0f64..1.0, n * k),
            proptest::collection::vec(0.0f64..1.0, m * k),
            proptest::collection::vec(0.0f64..1.0, p * k),
        )
            .prop_map(move |(w, lm, lp)| {
                (
                    Array2::from_shape_vec((n, k), w).unwrap(),
                    Array2::from_shape_vec((m, k), lm).unwrap(),
                    Array2::from_shape_vec((p, k), lp).unwrap(),
                )
            })
    });
    let worst = std::cell::Cell::new(0.0f64);
    runner
        .run(&factors, |(w, lm, lp)| {
            let k = w.ncols();
            let t = Array3::from_shape_fn((w.nrows(), lm.nrows(), lp.nrows()), |(n, m, p)| {
                (0..k)
                    .map(|r| w[[n, r]] * lm[[m, r]] * lp[[p, r]])
                    .sum::<f64>()
            });
            let unfolded = mode_unfold(&t, 0).unwrap();
            let kr = khatri_rao(lm.view(), lp.view()).unwrap();
            let via_kr = w.dot(&kr.t());
            let diff = (&unfolded - &via_kr)
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()));
            worst.set(worst.get().max(diff));
            prop_assert!(diff <= 1e-10, "max abs difference {}", diff);
            Ok(())
        })
        .map_err(err)?;
    Ok(format!(
        "100 random cases, max abs difference {:.1e}",
        worst.get()
    ))
}

fn nearest_brute(venues: &[Venue], lat: f64, lon: f64, radius: f64) -> Option<&str> {
    venues
        .iter()
        .map(|v| (haversine_m((lat, lon), (v.lat, v.lon)), v.venue_id.as_str()))
        .filter(|(d, _)| *d <= radius)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)))
        .map(|(_, id)| id)
}

fn extension_oracle() -> Outcome {
    let mut rng = lifemine::rng::stream(4, "extension-oracle");
    let mut around = |spread: f64| {
        (
            40.7 + rng.random_range(-spread..spread),
            -74.0 + rng.random_range(-spread..spread),
        )
    };
    let venues: Vec<Venue> = (0..100)
        .map(|i| {
            let (lat, lon) = around(0.002);
            Venue {
                venue_id: format!("v{i:03}"),
                lat,
                lon,
                categories: vec![format!("cat{}", i % 7)],
            }
        })
        .collect();
    let posts: Vec<CheckIn> = (0..1000)
        .map(|i| {
            let (lat, lon) = around(0.0022);
            let mut c = checkin(
                &format!("u{}", i % 50),
                ts("2012-06-01T10:00") + Duration::minutes(i),
                None,
                &[],
            );
            (c.lat, c.lon) = (lat, lon);
            c
        })
        .collect();
    let ds = Dataset::new(posts.clone(), venues.clone(), vec![]);
    let cfg = ExtensionConfig::default();
    let out = extend_checkins(&ds, &cfg).map_err(err)?;
    let mut assigned = 0;
    for (i, (before, after)) in posts.iter().zip(&out.checkins).enumerate() {
        let expect = nearest_brute(&venues, before.lat, before.lon, cfg.radius_m);
        ensure(after.venue_id.as_deref() == expect, || {
            format!(
                "post {i}: grid gave {:?}, brute force {expect:?}",
                after.venue_id
            )
        })?;
        if let Some(id) = expect {
            assigned += 1;
            let cats = &venues.iter().find(|v| v.venue_id == id).unwrap().categories;
            ensure(&after.categories == cats, || {
                format!("post {i}: categories not copied")
            })?;
        }
    }
    Ok(format!(
        "1000 posts x 100 venues identical to brute force ({assigned} assigned)"
    ))
}

fn stats_fixtures() -> Outcome {
    let at = ts("2012-06-04T12:00");
    let mut cs = Vec::new();
    for u in ["a", "a", "a", "b", "b", "c", "c", "c", "c", "d"] {
        cs.push(checkin(u, at, Some("v1"), &["Bar"]));
    }
    for _ in 0..20 {
        cs.push(checkin("e", at, Some("v2"), &["Home (private)"]));
    }
    for u in ["f", "g", "h", "i"] {
        cs.push(checkin(u, at, Some("v3"), &["Office"]));
    }
    let vf = stats::visiting_frequency(&Dataset::new(cs, vec![], vec![]));
    let freq: Vec<f64> = vf.iter().map(|s| s.visiting_frequency).collect();
    ensure(freq == vec![2.5, 20.0, 1.0], || {
        format!("visiting frequencies {freq:?}")
    })?;

    let bx = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]).ok_or("empty box")?;
    ensure((bx.q1, bx.median, bx.q3) == (2.0, 3.0, 4.0), || {
        format!("box {bx:?}")
    })?;

    ensure(stats::ccdf(&[3, 3, 3]) == vec![(3, 1.0)], || {
        "ccdf {3,3,3}".into()
    })?;
    let c = stats::ccdf(&[1, 2, 4]);
    ensure(c == vec![(1, 1.0), (2, 2.0 / 3.0), (4, 1.0 / 3.0)], || {
        format!("ccdf {{1,2,4}} = {c:?}")
    })?;
    let mut rng = lifemine::rng::stream(9, "ccdf");
    for case in 0..100 {
        let n = rng.random_range(1..200);
        let counts: Vec<u64> = (0..n).map(|_| rng.random_range(0..1000)).collect();
        let curve = stats::ccdf(&counts);
        let monotone = curve
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0);
        let bounded = curve.iter().all(|(_, p)| *p > 0.0 && *p <= 1.0) && curve[0].1 == 1.0;
        ensure(monotone && bounded, || {
            format!("random ccdf case {case} not monotone")
        })?;
    }

    let noon: Vec<CheckIn> = (0..5)
        .map(|i| checkin("a", at + Duration::days(i), None, &["Gym"]))
        .collect();
    let s = stats::share_series(
        &Dataset::new(noon, vec![], vec![]),
        Bucketing::Hour24,
        10,
        DayFilter::All,
        true,
    );
    let others_empty = (0..24)
        .filter(|&h| h != 12)
        .all(|h| s.bucket_totals[h] == 0 && s.shares[h] == vec![0.0]);
    ensure(s.shares[12] == vec![1.0] && others_empty, || {
        "single-category noon fixture".into()
    })?;

    let mut split = Vec::new();
    for h in 0..24 {
        let t = ts("2012-06-04T00:00") + Duration::hours(h);
        for i in 0..10 {
            split.push(checkin("a", t, None, if i < 3 { &["A"] } else { &["B"] }));
        }
    }
    let s = stats::share_series(
        &Dataset::new(split, vec![], vec![]),
        Bucketing::Hour24,
        10,
        DayFilter::All,
        true,
    );
    ensure(s.categories == vec!["B", "A"], || {
        format!("categories {:?}", s.categories)
    })?;
    ensure(s.shares.iter().all(|b| b == &vec![0.7, 0.3]), || {
        "30/70 fixture".into()
    })?;

    let spec = bundled_spec();
    let ds = synth::generate_dataset(&spec).map_err(err)?;
    let mut worst = 0.0f64;
    for (b, top) in [
        (Bucketing::Hour24, 14),
        (Bucketing::Dow7, 3),
        (Bucketing::Month12, 5),
    ] {
        for d in [DayFilter::All, DayFilter::Weekday, DayFilter::Weekend] {
            let s = stats::share_series(&ds, b, top, d, false);
            for row in &s.shares {
                worst = worst.max(row.iter().sum());
            }
        }
    }
    ensure(worst <= 1.0 + 1e-9, || format!("share sum {worst}"))?;
    let s = stats::share_series(&ds, Bucketing::Hour24, 14, DayFilter::All, false);
    let bar = s
        .categories
        .iter()
        .position(|c| c == "Bar")
        .ok_or("Bar missing")?;
    let peak = (0..24)
        .max_by(|&a, &b| s.shares[a][bar].total_cmp(&s.shares[b][bar]))
        .unwrap();
    ensure(peak == 21, || format!("Bar share peaks at hour {peak}"))?;
    Ok(format!(
        "hand fixtures exact, 100 random CCDFs monotone, max share sum {worst:.6}, Bar peak at 21"
    ))
}

/// Start hour and one-past-end hour must each sit within an hour of the
/// band `[from, to)`, measured around the clock.
fn within_band(r: HourRange, band: (u8, u8)) -> bool {
    let cyc = |a: u8, b: u8| {
        let d = (a as i32 - b as i32).rem_euclid(24);
        d.min(24 - d)
    };
    cyc(r.start, band.0) <= 1 && cyc((r.end + 1) % 24, band.1 % 24) <= 1
}

fn time_ranges() -> Outcome {
    let mut uniform = vec![0.0; 24];
    for h in 7..=21 {
        uniform[h] = 1.0;
    }
    let r = extract_time_ranges(&uniform).map_err(err)?;
    let want = (
        HourRange { start: 7, end: 9 },
        HourRange { start: 10, end: 19 },
        HourRange { start: 20, end: 21 },
    );
    ensure((r.get_up, r.most_active, r.go_to_bed) == want, || {
        format!("uniform example gave {r:?}")
    })?;

    // get up, most active, go to bed; end hours exclusive
    let bands = [
        ("early bird", [(6, 8), (7, 14), (20, 22)]),
        ("intermediate", [(8, 10), (14, 20), (22, 24)]),
        ("night owl", [(10, 12), (21, 25), (3, 6)]),
    ];
    let profiles = circadian_profiles();
    let mut found = Vec::new();
    for ((name, band), row) in bands.iter().zip(profiles.rows()) {
        let r = extract_time_ranges(&row.to_vec()).map_err(err)?;
        let got = [r.get_up, r.most_active, r.go_to_bed];
        for (range, b) in got.iter().zip(band) {
            ensure(within_band(*range, *b), || {
                format!("{name}: {range} outside band {b:?} +- 1 h")
            })?;
        }
        found.push(format!("{name} {} {} {}", got[0], got[1], got[2]));
    }
    Ok(format!("uniform example exact; {}", found.join("; ")))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn two_cities() -> Outcome {
    let base = bundled_spec();
    let night_owl = circadian_profiles().row(2).to_vec();
    let mut correct = 0;
    for seed in 0..100u64 {
        let spec = SynthSpec {
            seed,
            ..base.clone()
        };
        let planted = synth::generate_matrix(&spec, MatrixKind::Temporal).map_err(err)?;
        let model = nmf(
            &planted.matrix,
            &NmfConfig {
                k: 3,
                seed,
                ..Default::default()
            },
        )
        .map_err(err)?;
        let j = (0..3)
            .max_by(|&a, &b| {
                cosine(&model.l.row(a).to_vec(), &night_owl)
                    .total_cmp(&cosine(&model.l.row(b).to_vec(), &night_owl))
            })
            .unwrap();
        let users: BTreeMap<String, _> = planted
            .users
            .iter()
            .map(|u| (u.profile.user_id.clone(), u.profile.clone()))
            .collect();
        let means = lifestyle::group_preferences(&model, &users, Grouping::City);
        let by_city: BTreeMap<&str, f64> = means
            .iter()
            .map(|g| (g.key.city.as_str(), g.mean[j]))
            .collect();
        if by_city["big"] > by_city["small"] {
            correct += 1;
        }
    }
    ensure(correct >= 95, || {
        format!("night-owl ordering right in {correct}/100 seeds")
    })?;

    let planted = synth::generate_matrix(&base, MatrixKind::Spatial).map_err(err)?;
    let model = nmf(
        &planted.matrix,
        &NmfConfig {
            k: 5,
            seed: 3,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let users: BTreeMap<String, _> = planted
        .users
        .iter()
        .map(|u| (u.profile.user_id.clone(), u.profile.clone()))
        .collect();
    let km = KMeansConfig {
        n_clusters: 5,
        normalize_rows: true,
        seed: 3,
        ..Default::default()
    };
    let clusters = lifestyle::cluster_preferences(&model, &users, &km).map_err(err)?;
    let home: BTreeSet<&str> = planted
        .users
        .iter()
        .filter(|u| u.blob == "home")
        .map(|u| u.profile.user_id.as_str())
        .collect();
    let mut home_votes = [0usize; 5];
    for (u, c) in &clusters.assignments {
        if home.contains(u.as_str()) {
            home_votes[*c] += 1;
        }
    }
    let c = (0..5)
        .max_by_key(|&c| (home_votes[c], std::cmp::Reverse(c)))
        .unwrap();
    let shares = &clusters.clusters[c].city_shares;
    let (small, big) = (
        shares.get("small").copied().unwrap_or(0.0),
        shares.get("big").copied().unwrap_or(0.0),
    );
    let summary = format!(
        "night-owl ordering {correct}/100; home-centric cluster small {:.1}% / big {:.1}%",
        100.0 * small,
        100.0 * big
    );
    ensure(
        (small - 0.56).abs() <= 0.05 && (big - 0.44).abs() <= 0.05,
        || format!("{summary}; want 56/44 +- 5"),
    )?;
    Ok(summary)
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let cfg = PipelineConfig::load(&data_dir().join("two_cities_run.json")).map_err(err)?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&cfg, &a).map_err(err)?;
    run_pipeline(&cfg, &b).map_err(err)?;
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    ensure(ta.keys().eq(tb.keys()), || "file lists differ".into())?;
    for (name, bytes) in &ta {
        ensure(&tb[name] == bytes, || {
            format!("{name} differs between runs")
        })?;
    }
    Ok(format!(
        "{} report files byte-identical across two runs",
        ta.len()
    ))
}

fn filter_boundaries() -> Outcome {
    let t0 = ts("2012-06-01T10:00");
    let mut cs = vec![
        checkin("week", t0, None, &[]),
        checkin("week", t0 + Duration::days(7), None, &[]),
    ];
    cs.push(checkin("short", t0, None, &[]));
    cs.push(checkin(
        "short",
        t0 + Duration::days(7) - Duration::minutes(1),
        None,
        &[],
    ));
    let kept: Vec<String> = filter_tourists(&Dataset::new(cs, vec![], vec![]), 7)
        .users
        .keys()
        .cloned()
        .collect();
    ensure(kept == vec!["week"], || {
        format!("span filter kept {kept:?}")
    })?;

    let mut cs = Vec::new();
    for i in 0..10 {
        cs.push(checkin("ten", t0 + Duration::hours(i), None, &[]));
    }
    for i in 0..9 {
        cs.push(checkin("nine", t0 + Duration::hours(i), None, &[]));
    }
    let kept: Vec<String> = filter_low_activity(&Dataset::new(cs, vec![], vec![]), 10)
        .users
        .keys()
        .cloned()
        .collect();
    ensure(kept == vec!["ten"], || {
        format!("activity filter kept {kept:?}")
    })?;

    let mut cs = Vec::new();
    for i in 0..5 {
        cs.push(checkin("five", t0 + Duration::hours(i), None, &["Bar"]));
    }
    for i in 0..4 {
        cs.push(checkin("four", t0 + Duration::hours(i), None, &["Bar"]));
    }
    let built =
        lifestyle::build_tensor(&Dataset::new(cs, vec![], vec![]), TimeMode::Hour24, 100, 5)
            .map_err(err)?;
    ensure(built.tensor.users == vec!["five"], || {
        format!("tensor kept {:?}", built.tensor.users)
    })?;
    Ok("7-day span, 10 check-ins and h = 5 kept; one less dropped".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("NMF planted recovery", nmf_planted),
        ("CP-ALS planted recovery", cp_planted),
        ("Khatri-Rao and unfolding identity", unfold_identity),
        ("extension matches brute-force oracle", extension_oracle),
        ("visiting frequency, CCDF and share series", stats_fixtures),
        ("time-range extraction", time_ranges),
        ("two-city synthetic contrasts", two_cities),
        ("report determinism", determinism),
        ("filter boundaries", filter_boundaries),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("acceptance {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

//! The generator-to-ingestion round trip: synthetic records serialized to
//! the NGSIM CSV layout and re-ingested through the standard pipeline must
//! reproduce the original samples.

use gisnet::config::RunConfig;
use gisnet::data::{
    generate_synthetic, parse_trajectory_csv, resample_all, segment_samples,
    write_trajectory_csv, Sample, Scenario,
};

fn assert_samples_close(a: &[Sample], b: &[Sample], tol: f64) {
    assert_eq!(a.len(), b.len(), "sample counts differ");
    for (sa, sb) in a.iter().zip(b) {
        assert_eq!(sa.meta.vehicle_id, sb.meta.vehicle_id);
        assert_eq!(sa.meta.anchor_frame, sb.meta.anchor_frame);
        for (pa, pb) in sa
            .target_history
            .frames()
            .iter()
            .zip(sb.target_history.frames())
        {
            assert!((pa.0 - pb.0).abs() < tol && (pa.1 - pb.1).abs() < tol);
        }
        for (fa, fb) in sa.future.iter().zip(&sb.future) {
            assert!((fa.0 - fb.0).abs() < tol && (fa.1 - fb.1).abs() < tol);
        }
        assert_eq!(sa.neighbors.len(), sb.neighbors.len());
        for (na, nb) in sa.neighbors.iter().zip(&sb.neighbors) {
            assert_eq!(na.cell, nb.cell);
            for (pa, pb) in na.history.frames().iter().zip(nb.history.frames()) {
                assert!((pa.0 - pb.0).abs() < tol && (pa.1 - pb.1).abs() < tol);
            }
        }
    }
}

#[test]
fn synthetic_to_csv_to_samples_round_trip() {
    for scenario in [
        Scenario::ConstantVelocity,
        Scenario::LaneChange,
        Scenario::Congestion,
        Scenario::Crowded,
    ] {
        let config = RunConfig::default(); // noise sigma 0.1: noisy histories too
        let data = generate_synthetic(scenario, 5, 31, &config).unwrap();
        assert!(!data.samples.is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        write_trajectory_csv(&data.records, &path).unwrap();
        let records = parse_trajectory_csv(&path).unwrap();
        assert_eq!(records.len(), data.records.len());

        let trajectories = resample_all(&records, &format!("synth:{scenario}"), &config);
        let (samples, _) = segment_samples(&trajectories, &config);
        assert_samples_close(&data.samples, &samples, 1e-9);
    }
}

#[test]
fn round_trip_holds_for_large_scene_offsets() {
    // Scene origins march 500 m apart; the tail scenes must still survive
    // the feet/meter text round trip within a nanometer.
    let mut config = RunConfig::default();
    config.synth_noise_sigma_m = 0.0;
    let data = generate_synthetic(Scenario::ConstantVelocity, 2000, 3, &config).unwrap();
    let far: Vec<_> = data
        .records
        .iter()
        .filter(|r| r.local_y > 990_000.0)
        .cloned()
        .collect();
    assert!(!far.is_empty(), "expected records near the 1000 km mark");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("far.csv");
    write_trajectory_csv(&far, &path).unwrap();
    let back = parse_trajectory_csv(&path).unwrap();
    for (a, b) in far.iter().zip(&back) {
        assert!((a.local_x - b.local_x).abs() < 1e-9);
        assert!((a.local_y - b.local_y).abs() < 1e-9, "{} vs {}", a.local_y, b.local_y);
    }
}

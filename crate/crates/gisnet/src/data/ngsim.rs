//! NGSIM-format CSV ingestion and export. The public NGSIM layout has many
//! columns; only `Vehicle_ID, Frame_ID, Local_X, Local_Y, Lane_ID` are read
//! and the rest are ignored. Coordinates are feet in the file and meters in
//! memory.

use std::path::Path;

use crate::error::{Error, Result};

use super::VehicleRecord;

const FEET_TO_METERS: f64 = 0.3048;
const REQUIRED: [&str; 5] = ["Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "Lane_ID"];

/// Parse an NGSIM-format trajectory CSV into records sorted by
/// (vehicle, frame), with units converted to meters.
pub fn parse_trajectory_csv(path: &Path) -> Result<Vec<VehicleRecord>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(display.clone(), std::io::Error::other(e.to_string())),
            _ => Error::format_at(e.to_string(), display.clone()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::format_at(format!("unreadable header: {e}"), display.clone()))?
        .clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::format_at(format!("missing required column {name}"), display.clone())
            })?;
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::format_at(e.to_string(), display.clone()))?;
        let line = row
            .position()
            .map(|p| format!("{display}:{}", p.line()))
            .unwrap_or_else(|| display.clone());
        let field = |i: usize| -> Result<&str> {
            row.get(columns[i])
                .ok_or_else(|| Error::format_at("short row".to_string(), line.clone()))
        };
        let numeric = |name: &str, text: &str| -> Result<f64> {
            text.trim().parse::<f64>().map_err(|_| {
                Error::format_at(format!("non-numeric {name} value {text:?}"), line.clone())
            })
        };
        let vehicle_id = numeric("Vehicle_ID", field(0)?)? as u64;
        let frame_id = numeric("Frame_ID", field(1)?)? as i64;
        let local_x = numeric("Local_X", field(2)?)? * FEET_TO_METERS;
        let local_y = numeric("Local_Y", field(3)?)? * FEET_TO_METERS;
        let lane_raw = numeric("Lane_ID", field(4)?)?;
        if !local_x.is_finite() || !local_y.is_finite() {
            return Err(Error::format_at("non-finite coordinate".to_string(), line));
        }
        if lane_raw < 1.0 {
            return Err(Error::format_at(
                format!("lane id {lane_raw} below 1"),
                line,
            ));
        }
        records.push(VehicleRecord {
            vehicle_id,
            frame_id,
            local_x,
            local_y,
            lane_id: lane_raw as u32,
        });
    }

    records.sort_by_key(|r| (r.vehicle_id, r.frame_id));
    for pair in records.windows(2) {
        if pair[0].vehicle_id == pair[1].vehicle_id && pair[0].frame_id == pair[1].frame_id {
            return Err(Error::format_at(
                format!(
                    "duplicate (vehicle {}, frame {})",
                    pair[0].vehicle_id, pair[0].frame_id
                ),
                display,
            ));
        }
    }
    Ok(records)
}

/// Write records in the same CSV layout, converting meters back to feet.
/// Values are printed with enough digits to round-trip the doubles.
pub fn write_trajectory_csv(records: &[VehicleRecord], path: &Path) -> Result<()> {
    let mut text = String::from("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.vehicle_id,
            r.frame_id,
            r.local_x / FEET_TO_METERS,
            r.local_y / FEET_TO_METERS,
            r.lane_id
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_and_converts_feet_to_meters() {
        let f = write_fixture(
            "Vehicle_ID,Frame_ID,Total_Frames,Local_X,Local_Y,Lane_ID\n\
             2,12,100,10,200,3\n\
             1,5,100,0,100,2\n\
             1,6,100,1,110,2\n",
        );
        let records = parse_trajectory_csv(f.path()).unwrap();
        assert_eq!(records.len(), 3);
        // Sorted by (vehicle, frame); 10 ft -> 3.048 m.
        assert_eq!(records[0].vehicle_id, 1);
        assert_eq!(records[2].vehicle_id, 2);
        assert!((records[2].local_x - 3.048).abs() < 1e-12);
        assert_eq!(records[2].lane_id, 3);
    }

    #[test]
    fn missing_column_error_names_it() {
        let f = write_fixture("Vehicle_ID,Frame_ID,Local_X,Lane_ID\n1,1,0,2\n");
        let err = parse_trajectory_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("Local_Y"), "{err}");
    }

    #[test]
    fn non_numeric_field_error_carries_line_number() {
        let f = write_fixture(
            "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,1,0,5,2\n1,2,zero,5,2\n",
        );
        let err = parse_trajectory_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains(":3") && err.contains("Local_X"), "{err}");
    }

    #[test]
    fn duplicate_vehicle_frame_is_format_error() {
        let f = write_fixture(
            "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,1,0,5,2\n1,1,1,6,2\n",
        );
        let err = parse_trajectory_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn empty_file_is_format_error() {
        let f = write_fixture("");
        assert!(parse_trajectory_csv(f.path()).is_err());
    }

    #[test]
    fn row_count_matches_line_count_for_larger_fixture() {
        let mut content = String::from("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n");
        let mut lines = 0;
        for v in 1..=20 {
            for frame in 0..50 {
                content.push_str(&format!("{v},{frame},{},{},1\n", v as f64, frame as f64));
                lines += 1;
            }
        }
        let f = write_fixture(&content);
        let records = parse_trajectory_csv(f.path()).unwrap();
        assert_eq!(records.len(), lines);
        // Per-vehicle frame ranges survive the round trip through sorting.
        for v in 1..=20u64 {
            let frames: Vec<i64> = records
                .iter()
                .filter(|r| r.vehicle_id == v)
                .map(|r| r.frame_id)
                .collect();
            assert_eq!(frames.first(), Some(&0));
            assert_eq!(frames.last(), Some(&49));
        }
    }

    #[test]
    fn csv_round_trip_preserves_positions_to_nanometers() {
        let records: Vec<VehicleRecord> = (0..100)
            .map(|i| VehicleRecord {
                vehicle_id: 7,
                frame_id: i,
                local_x: 3.7 * ((i % 4) as f64) + 0.123456789 * i as f64,
                local_y: 1.9937 * i as f64 + 250.0,
                lane_id: 1 + (i % 4) as u32,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        write_trajectory_csv(&records, &path).unwrap();
        let back = parse_trajectory_csv(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert!((a.local_x - b.local_x).abs() < 1e-9);
            assert!((a.local_y - b.local_y).abs() < 1e-9);
            assert_eq!(a.lane_id, b.lane_id);
        }
    }
}

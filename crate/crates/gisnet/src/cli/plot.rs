//! Static SVG rendering of one scene: lane guides, dashed histories, the
//! predicted trajectory and the ground truth. The road runs left to right
//! (longitudinal on the horizontal axis).

use crate::config::RunConfig;
use crate::data::Sample;
use crate::decoder::PredictedTrajectory;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;

struct Frame {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Frame {
    fn include(&mut self, (x, y): (f64, f64)) {
        self.min_x = self.min_x.min(x);
        self.max_x = self.max_x.max(x);
        self.min_y = self.min_y.min(y);
        self.max_y = self.max_y.max(y);
    }

    /// Map a scene point (x lateral, y longitudinal) to SVG coordinates.
    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let sx = (y - self.min_y) / (self.max_y - self.min_y).max(1e-9);
        let sy = (x - self.min_x) / (self.max_x - self.min_x).max(1e-9);
        (
            MARGIN + sx * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - sy * (HEIGHT - 2.0 * MARGIN),
        )
    }
}

fn polyline(frame: &Frame, points: &[(f64, f64)], style: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!("  <polyline points=\"{}\" {style}/>\n", coords.join(" "))
}

/// The scene's bounding box with drawing margins, shared by the renderer
/// and the parse-back test.
fn scene_frame(sample: &Sample, pred_abs: &[(f64, f64)], truth_abs: &[(f64, f64)], config: &RunConfig) -> Frame {
    let mut frame = Frame {
        min_x: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        min_y: f64::INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for &p in sample.target_history.frames() {
        frame.include(p);
    }
    for n in &sample.neighbors {
        for &p in n.history.frames() {
            frame.include(p);
        }
    }
    for &p in pred_abs.iter().chain(truth_abs) {
        frame.include(p);
    }
    // Pad by half a lane so strokes are not clipped at the frame edge.
    let pad = config.lane_width_m / 2.0;
    frame.min_x -= pad;
    frame.max_x += pad;
    frame.min_y -= 2.0;
    frame.max_y += 2.0;
    frame
}

/// Render the sample and its prediction as a standalone SVG document.
pub fn render_scene_svg(sample: &Sample, pred: &PredictedTrajectory, config: &RunConfig) -> String {
    let anchor = sample.anchor_position();
    let pred_abs = pred.to_absolute(anchor);
    let truth_abs: Vec<(f64, f64)> = sample
        .future
        .iter()
        .map(|(x, y)| (x + anchor.0, y + anchor.1))
        .collect();
    let frame = scene_frame(sample, &pred_abs, &truth_abs, config);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Lane boundaries: horizontal guides at half-lane offsets.
    let first_boundary = (frame.min_x / config.lane_width_m).floor() as i64;
    let last_boundary = (frame.max_x / config.lane_width_m).ceil() as i64;
    for b in first_boundary..=last_boundary {
        let x_lat = (b as f64 + 0.5) * config.lane_width_m;
        if x_lat < frame.min_x || x_lat > frame.max_x {
            continue;
        }
        let (_, sy) = frame.map((x_lat, frame.min_y));
        svg.push_str(&format!(
            "  <line x1=\"{MARGIN}\" y1=\"{sy:.2}\" x2=\"{:.2}\" y2=\"{sy:.2}\" \
             stroke=\"#cccccc\" stroke-width=\"1\" stroke-dasharray=\"10,6\"/>\n",
            WIDTH - MARGIN
        ));
    }

    for n in &sample.neighbors {
        svg.push_str(&polyline(
            &frame,
            n.history.frames(),
            "fill=\"none\" stroke=\"#999999\" stroke-width=\"1.5\" stroke-dasharray=\"4,4\"",
        ));
    }
    svg.push_str(&polyline(
        &frame,
        sample.target_history.frames(),
        "fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"6,4\"",
    ));
    svg.push_str(&polyline(
        &frame,
        &truth_abs,
        "fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"",
    ));
    svg.push_str(&polyline(
        &frame,
        &pred_abs,
        "fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"",
    ));

    svg.push_str(&format!(
        "  <text x=\"{MARGIN}\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">\
         history (dashed black), prediction (blue), ground truth (red), vehicle {}</text>\n",
        sample.meta.vehicle_id
    ));
    svg.push_str("</svg>\n");
    svg
}

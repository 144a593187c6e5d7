//! SVG state histories and a top-down geometry sketch of a run.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::DoorGeometry;
use crate::model::{idx, STATE_DIM};

use super::config::ScenarioConfig;
use super::sim::{vehicle_track, RunLog};

/// Panel file stems, in planner-state order.
pub const PANELS: [&str; STATE_DIM] = ["phi", "theta", "psi", "alpha", "alpha_dot", "eta1", "eta2", "eta3", "eta4"];

const SIZE: (u32, u32) = (720, 360);
const FRAME_STUB: f64 = 0.5;

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

/// Hinge-to-edge segment of the door in the horizontal plane; its length is
/// the door width.
pub fn door_segment(alpha: f64, door: &DoorGeometry) -> (Vector2<f64>, Vector2<f64>) {
    let hinge = door.hinge.xy();
    (hinge, hinge + Vector2::new(alpha.cos(), alpha.sin()) * door.width)
}

fn bounds(series: &[&[(f64, f64)]]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, v) in series.iter().flat_map(|s| s.iter()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let pad = ((hi - lo) * 0.1).max(1.0);
    (lo - pad, hi + pad)
}

fn state_panel(path: &Path, name: &str, measured: &[(f64, f64)], predicted: &[(f64, f64)], target: f64, t_end: f64) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let target_line = [(0.0, target), (t_end, target)];
    let (lo, hi) = bounds(&[measured, predicted, &target_line]);
    let unit = if name == "alpha_dot" { "deg/s" } else { "deg" };
    let mut chart = ChartBuilder::on(&root)
        .caption(name, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..t_end.max(1e-9), lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("time [s]")
        .y_desc(unit)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(target_line, BLUE.stroke_width(1)))
        .map_err(plot_err)?
        .label("target")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 20, y)], BLUE));
    chart
        .draw_series(LineSeries::new(measured.iter().copied(), BLACK.stroke_width(2)))
        .map_err(plot_err)?
        .label("measured")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 20, y)], BLACK));
    chart
        .draw_series(DashedLineSeries::new(predicted.iter().copied(), 6, 4, RED.stroke_width(2)))
        .map_err(plot_err)?
        .label("predicted")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 20, y)], RED));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn geometry_plot(path: &Path, log: &RunLog, cfg: &ScenarioConfig) -> Result<()> {
    let door = &cfg.model.door;
    let track: Vec<(f64, f64)> = vehicle_track(log, cfg).iter().map(|p| (p.x, p.y)).collect();
    let hinge = door.hinge.xy();
    let first_alpha = log.records.first().map_or(cfg.target.alpha0, |r| r.plant[3]);
    let last_alpha = log.records.last().map_or(cfg.target.alpha0, |r| r.plant[3]);
    let target_alpha = cfg.target.final_state[idx::ALPHA];

    let mut xs: Vec<f64> = track.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = track.iter().map(|p| p.1).collect();
    for a in [first_alpha, last_alpha, target_alpha] {
        let (s, e) = door_segment(a, door);
        xs.extend([s.x, e.x]);
        ys.extend([s.y, e.y]);
    }
    ys.extend([hinge.y - FRAME_STUB, hinge.y + door.width + FRAME_STUB]);
    let r = door.vehicle_radius;
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min) - r - 0.1;
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + r + 0.1;
    let (x0, x1, y0, y1) = (lo(&xs), hi(&xs), lo(&ys), hi(&ys));
    let span = (x1 - x0).max(y1 - y0);
    let side = 640u32;

    let root = SVGBackend::new(path, (side, side)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("top view", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(x0..x0 + span, y0..y0 + span)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("x [m]").y_desc("y [m]").draw().map_err(plot_err)?;

    let frame = [
        [(hinge.x, hinge.y - FRAME_STUB), (hinge.x, hinge.y)],
        [(hinge.x, hinge.y + door.width), (hinge.x, hinge.y + door.width + FRAME_STUB)],
    ];
    for wall in frame {
        chart
            .draw_series(LineSeries::new(wall, BLACK.stroke_width(4)))
            .map_err(plot_err)?;
    }
    let segment = |a: f64| {
        let (s, e) = door_segment(a, door);
        [(s.x, s.y), (e.x, e.y)]
    };
    chart
        .draw_series(LineSeries::new(segment(first_alpha), RGBColor(150, 150, 150).stroke_width(3)))
        .map_err(plot_err)?;
    chart
        .draw_series(DashedLineSeries::new(segment(target_alpha), 8, 5, BLUE.stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(segment(last_alpha), RGBColor(139, 69, 19).stroke_width(4)))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(track.iter().copied(), BLACK.stroke_width(1)))
        .map_err(plot_err)?;

    let scale = f64::from(side) / span;
    let radius_px = (r * scale * 0.9).round() as i32;
    for (p, color) in [(track.first(), RGBColor(150, 150, 150)), (track.last(), RED)] {
        if let Some(&c) = p {
            chart
                .draw_series(std::iter::once(Circle::new(c, radius_px, color.stroke_width(2))))
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// Writes one SVG per planner state plus `geometry_xy.svg` into `out_dir`
/// and returns the written paths.
pub fn emit_plots(log: &RunLog, cfg: &ScenarioConfig, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    if log.records.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty run log".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let dt = cfg.mpc.dt;
    let t_end = log.records.last().map_or(0.0, |r| r.time + dt);
    let mut written = Vec::new();
    for (k, name) in PANELS.iter().enumerate() {
        let measured: Vec<_> = log.records.iter().map(|r| (r.time, r.planner[k].to_degrees())).collect();
        let predicted: Vec<_> = log.records.iter().map(|r| (r.time + dt, r.predicted[k].to_degrees())).collect();
        let target = cfg.target.final_state[k].to_degrees();
        let path = out_dir.join(format!("{name}.svg"));
        state_panel(&path, name, &measured, &predicted, target, t_end)?;
        written.push(path);
    }
    let path = out_dir.join("geometry_xy.svg");
    geometry_plot(&path, log, cfg)?;
    written.push(path);
    Ok(written)
}

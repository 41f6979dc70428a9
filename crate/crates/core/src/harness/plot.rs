//! Top-down SVG figures of predictions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::evaluate::world_ground_truth;
use crate::harness::predictions::PredictionRecord;
use crate::scene::{from_canonical, Scene};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;
const MODE_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct View {
    min: [f64; 2],
    scale: f64,
}

impl View {
    fn fit(points: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Self { min: [-10.0, -10.0], scale: (SIZE - 2.0 * MARGIN) / 20.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(10.0);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        Self { min: [cx - span / 2.0, cy - span / 2.0], scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, SIZE - MARGIN - (p[1] - self.min[1]) * self.scale)
    }

    fn path(&self, points: impl IntoIterator<Item = [f64; 2]>) -> String {
        let mut d = String::new();
        for (i, p) in points.into_iter().enumerate() {
            let (x, y) = self.map(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        d
    }
}

/// World-frame context drawn under the predictions.
struct Context {
    roads: Vec<Vec<[f64; 2]>>,
    neighbors: Vec<Vec<[f64; 2]>>,
    ground_truth: Vec<[f64; 2]>,
}

fn context(scene: &Scene<f32>) -> Context {
    let anchor = scene.anchor_pose.cast::<f64>();
    let to_world = |pts: Vec<[f64; 2]>| from_canonical(&pts, &anchor);
    let roads = scene
        .roadgraph
        .iter()
        .map(|p| to_world(p.nodes.iter().map(|n| [n.x as f64, n.y as f64]).collect()))
        .collect();
    let neighbors = scene
        .neighbors
        .iter()
        .map(|t| to_world(t.history.iter().filter(|s| s.valid).map(|s| [s.x as f64, s.y as f64]).collect()))
        .filter(|v: &Vec<_>| !v.is_empty())
        .collect();
    let (gt, valid) = world_ground_truth(scene);
    let ground_truth = gt.into_iter().zip(valid).filter(|(_, v)| *v).map(|(p, _)| p).collect();
    Context { roads, neighbors, ground_truth }
}

/// Renders one record; `scene` adds road graph, neighbors and ground truth.
pub fn render_svg(record: &PredictionRecord, scene: Option<&Scene<f32>>) -> String {
    let ctx = scene.map(context);
    let history: Vec<[f64; 2]> =
        record.history.iter().zip(&record.history_valid).filter(|(_, v)| **v).map(|(p, _)| *p).collect();
    let mut extent: Vec<[f64; 2]> = record.trajectories.iter().flatten().copied().collect();
    extent.extend(&history);
    if let Some(c) = &ctx {
        extent.extend(&c.ground_truth);
        extent.extend(c.neighbors.iter().flatten());
    }
    let view = View::fit(&extent);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="8" y="16" font-family="sans-serif" font-size="12">scene {} ({})</text>"#,
        record.scene_id,
        record.agent_type.name()
    );
    if let Some(c) = &ctx {
        for road in &c.roads {
            let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#bbbbbb" stroke-width="1.5"/>"##, view.path(road.iter().copied()));
        }
        for n in &c.neighbors {
            let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#7fa7d9" stroke-width="2"/>"##, view.path(n.iter().copied()));
        }
        if !c.ground_truth.is_empty() {
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="4 3"/>"#,
                view.path(c.ground_truth.iter().copied())
            );
        }
    }
    let mut order: Vec<usize> = (0..record.trajectories.len()).collect();
    order.sort_by(|&a, &b| record.probabilities[a].total_cmp(&record.probabilities[b]));
    for m in order {
        let traj = &record.trajectories[m];
        let p = record.probabilities[m];
        let color = MODE_COLORS[m % MODE_COLORS.len()];
        let opacity = 0.25 + 0.75 * p.clamp(0.0, 1.0);
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2" stroke-opacity="{opacity:.3}"/>"#,
            view.path(traj.iter().copied())
        );
        if let Some(&last) = traj.last() {
            let (x, y) = view.map(last);
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">{p:.2}</text>"#,
                x + 4.0,
                y - 4.0
            );
        }
    }
    if !history.is_empty() {
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="black" stroke-width="3"/>"#, view.path(history.iter().copied()));
        let (x, y) = view.map(*history.last().unwrap());
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="black"/>"#);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `scene_<id>.svg` per record into `dir`; returns the written paths.
pub fn write_plots(records: &[PredictionRecord], scenes: &[Scene<f32>], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(records.len());
    for r in records {
        let scene = scenes.iter().find(|s| s.scene_id == r.scene_id);
        let path = dir.join(format!("scene_{}.svg", r.scene_id));
        std::fs::write(&path, render_svg(r, scene)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

//! Static figures: risk heatmaps over the scene and velocity-distance profiles,
//! written as PNG. Rendering is pure, so identical inputs give identical bytes.

mod canvas;

use occrisk::geom::Vec2;
use occrisk::planner::VelocityProfile;
use occrisk::risk::RiskGrid;
use occrisk::scene::Scenario;
use occrisk::visibility::FieldOfView;
use occrisk::Point;

pub use canvas::{Canvas, Rgb};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("scene extends past the grid: scene {scene_lo:?}..{scene_hi:?}, grid {grid_lo:?}..{grid_hi:?}")]
    Extent {
        scene_lo: (f64, f64),
        scene_hi: (f64, f64),
        grid_lo: (f64, f64),
        grid_hi: (f64, f64),
    },
    #[error("grid holds {got} cells, expected {n1} x {n2}")]
    GridSize { got: usize, n1: usize, n2: usize },
    #[error("no profiles to plot")]
    Empty,
    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
const LANE: Rgb = [200, 200, 200];
const OCCLUDER: Rgb = [90, 90, 90];
const FOV: Rgb = [120, 170, 230];
const EGO: Rgb = [30, 90, 200];
const AGENT: Rgb = [40, 40, 40];
const PHANTOM: Rgb = [160, 40, 200];

/// White at 0, yellow at 0.5, red at 1; inputs are clamped to [0, 1].
pub fn colormap(r: f64) -> Rgb {
    let r = if r.is_nan() { 0.0 } else { r.clamp(0.0, 1.0) };
    if r <= 0.5 {
        let t = r / 0.5;
        [255, 255, (255.0 * (1.0 - t)).round() as u8]
    } else {
        let t = (r - 0.5) / 0.5;
        [255, (255.0 * (1.0 - t)).round() as u8, 0]
    }
}

/// Total-risk heatmap with lanes, occluders, the field of view and every
/// agent's initial footprint. One pixel per grid cell, north up.
pub fn render_heatmap(
    sc: &Scenario,
    grid: &RiskGrid,
    fov: Option<&FieldOfView>,
) -> Result<Canvas, PlotError> {
    let spec = grid.spec;
    if grid.total.len() != spec.len() {
        return Err(PlotError::GridSize {
            got: grid.total.len(),
            n1: spec.n1,
            n2: spec.n2,
        });
    }
    let (lo, hi) = sc.bounds();
    let glo = spec.origin;
    let ghi = glo + Vec2::new(spec.n1 as f64, spec.n2 as f64) * spec.resolution;
    if lo.x < glo.x || lo.y < glo.y || hi.x > ghi.x || hi.y > ghi.y {
        return Err(PlotError::Extent {
            scene_lo: (lo.x, lo.y),
            scene_hi: (hi.x, hi.y),
            grid_lo: (glo.x, glo.y),
            grid_hi: (ghi.x, ghi.y),
        });
    }
    let mut c = Canvas::new(spec.n1, spec.n2, WHITE);
    let to_px = |p: Point| {
        let q = (p - glo) * (1.0 / spec.resolution);
        Vec2::new(q.x, spec.n2 as f64 - q.y)
    };

    if let Some(fov) = fov {
        let poly: Vec<Point> = fov
            .rays
            .iter()
            .map(|r| to_px(fov.origin + Vec2::from_angle(r.angle) * r.distance))
            .collect();
        c.fill_polygon(&poly, FOV, 0.35);
    }
    for lane in &sc.lanes {
        let w = lane.width / spec.resolution;
        for pair in lane.centerline.windows(2) {
            c.thick_line(to_px(pair[0]), to_px(pair[1]), w, LANE, 1.0);
        }
    }
    for row in 0..spec.n2 {
        for col in 0..spec.n1 {
            let r = grid.total[spec.index(col, row)];
            if r > 0.0 {
                // faint risk fades into the background instead of whiting out lanes
                c.blend(col, spec.n2 - 1 - row, colormap(r), (4.0 * r).min(1.0));
            }
        }
    }
    for poly in &sc.occluders {
        let px: Vec<Point> = poly.iter().map(|p| to_px(*p)).collect();
        c.fill_polygon(&px, OCCLUDER, 1.0);
    }
    for a in &sc.agents {
        let Some(s) = a.states.first() else { continue };
        let color = if a.is_phantom() { PHANTOM } else { AGENT };
        let corners = box_corners(
            s.position(),
            s.heading,
            a.footprint.half_length,
            a.footprint.half_width,
        );
        c.polygon_outline(&corners.map(to_px), color);
    }
    let e = &sc.ego;
    let corners = box_corners(
        e.initial.position(),
        e.initial.heading,
        e.footprint.half_length,
        e.footprint.half_width,
    );
    c.fill_polygon(&corners.map(to_px), EGO, 1.0);
    Ok(c)
}

fn box_corners(center: Point, heading: f64, hl: f64, hw: f64) -> [Point; 4] {
    let f = Vec2::from_angle(heading);
    let l = Vec2::new(-f.y, f.x);
    [
        center + f * hl + l * hw,
        center - f * hl + l * hw,
        center - f * hl - l * hw,
        center + f * hl - l * hw,
    ]
}

/// Line colour for the `i`-th curve of a profile plot.
pub fn series_color(i: usize) -> Rgb {
    const COLORS: [Rgb; 6] = [
        [214, 39, 40],
        [31, 119, 180],
        [44, 160, 44],
        [255, 127, 14],
        [148, 103, 189],
        [140, 86, 75],
    ];
    COLORS[i % COLORS.len()]
}

pub const PROFILE_WIDTH: usize = 640;
pub const PROFILE_HEIGHT: usize = 400;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 16.0;
const MARGIN_BOTTOM: f64 = 36.0;

/// Plot area in pixels: `(x0, y0, x1, y1)` with y growing downwards.
pub fn plot_area() -> (f64, f64, f64, f64) {
    (
        MARGIN_LEFT,
        MARGIN_TOP,
        PROFILE_WIDTH as f64 - MARGIN_RIGHT,
        PROFILE_HEIGHT as f64 - MARGIN_BOTTOM,
    )
}

/// Speed over travelled distance, one curve per labelled profile, with a legend.
pub fn render_profile(curves: &[(&str, &VelocityProfile)]) -> Result<Canvas, PlotError> {
    if curves.is_empty() {
        return Err(PlotError::Empty);
    }
    let s_min = curves
        .iter()
        .filter_map(|(_, p)| p.s.first())
        .copied()
        .fold(f64::INFINITY, f64::min);
    let s_max = curves
        .iter()
        .flat_map(|(_, p)| p.s.iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let v_max = curves
        .iter()
        .flat_map(|(_, p)| p.v.iter())
        .copied()
        .fold(0.0, f64::max);
    let s_min = if s_min.is_finite() { s_min } else { 0.0 };
    let s_span = if s_max > s_min { s_max - s_min } else { 1.0 };
    let v_top = nice_ceil(v_max.max(1.0) * 1.1);

    let mut c = Canvas::new(PROFILE_WIDTH, PROFILE_HEIGHT, WHITE);
    let (x0, y0, x1, y1) = plot_area();
    let map = |s: f64, v: f64| {
        Vec2::new(
            x0 + (s - s_min) / s_span * (x1 - x0),
            y1 - v / v_top * (y1 - y0),
        )
    };

    for k in 0..=4 {
        let v = v_top * k as f64 / 4.0;
        let y = map(s_min, v).y;
        c.thick_line(
            Vec2::new(x0, y),
            Vec2::new(x1, y),
            1.0,
            [230, 230, 230],
            1.0,
        );
        c.text(2, y.round() as i64 - 4, &format!("{v:.0}"), BLACK);
    }
    for k in 0..=4 {
        let s = s_min + s_span * k as f64 / 4.0;
        let x = map(s, 0.0).x;
        c.thick_line(Vec2::new(x, y1), Vec2::new(x, y1 + 4.0), 1.0, BLACK, 1.0);
        let label = format!("{s:.0}");
        c.text(
            x.round() as i64 - 4 * label.len() as i64,
            y1 as i64 + 8,
            &label,
            BLACK,
        );
    }
    c.thick_line(Vec2::new(x0, y0), Vec2::new(x0, y1), 1.0, BLACK, 1.0);
    c.thick_line(Vec2::new(x0, y1), Vec2::new(x1, y1), 1.0, BLACK, 1.0);
    c.text(x1 as i64 - 8 * 5, y1 as i64 + 22, "s (m)", BLACK);
    c.text(x0 as i64 + 4, y0 as i64, "v (m/s)", BLACK);

    for (i, (_, p)) in curves.iter().enumerate() {
        let color = series_color(i);
        let pts: Vec<Point> = p.v.iter().zip(&p.s).map(|(v, s)| map(*s, *v)).collect();
        for w in pts.windows(2) {
            c.thick_line(w[0], w[1], 2.0, color, 1.0);
        }
    }
    let legend_x = x1 as i64 - 8 * 12 - 24;
    for (i, (name, _)) in curves.iter().enumerate() {
        let y = y0 as i64 + 8 + 12 * i as i64;
        let color = series_color(i);
        c.thick_line(
            Vec2::new(legend_x as f64, y as f64 + 4.0),
            Vec2::new(legend_x as f64 + 16.0, y as f64 + 4.0),
            2.0,
            color,
            1.0,
        );
        c.text(legend_x + 20, y, name, BLACK);
    }
    Ok(c)
}

/// Smallest of 1, 2, 5 times a power of ten that is at least `x`.
fn nice_ceil(x: f64) -> f64 {
    let p = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * p)
        .find(|v| *v >= x)
        .unwrap_or(10.0 * p)
}

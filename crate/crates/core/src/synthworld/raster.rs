//! Colored-block picture of a world state for human inspection.

use std::fmt::Write as _;

use super::{Layout, Location, WorldState};

fn color(object: &str) -> &'static str {
    match object {
        "bottle" => "#2b83ba",
        "juice" => "#fdae61",
        "cup" => "#abdda4",
        "mug" => "#d7191c",
        "cloth" => "#9e9ac8",
        _ => "#888888",
    }
}

/// SVG of the table cells, the gripper cell and the spill marker.
pub fn render_svg(state: &WorldState, layout: &Layout) -> String {
    let cell = 40;
    let side = layout.grid_side;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
        w = side * cell
    );
    let pos = |p: usize| ((p % side) * cell, (p / side) * cell);
    for p in 0..layout.patches() {
        let (x, y) = pos(p);
        let fill = if p == layout.gripper() { "#dddddd" } else { "#f7f3e8" };
        let _ = write!(s, r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#999"/>"##);
    }
    for (o, l) in &state.objects {
        let p = match l {
            Location::Table(c) => *c,
            Location::Gripper => layout.gripper(),
            Location::Removed => continue,
        };
        let (x, y) = pos(p);
        let stroke = if state.is_filled(o) { "#000" } else { "none" };
        let _ = write!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="{stroke}" stroke-width="2"><title>{o}</title></rect>"#,
            x + 8,
            y + 8,
            cell - 16,
            cell - 16,
            color(o)
        );
    }
    if state.spill {
        let (x, y) = pos(layout.spill());
        let _ = write!(s, r##"<circle cx="{}" cy="{}" r="14" fill="#6baed6" opacity="0.7"/>"##, x + cell / 2, y + cell / 2);
    }
    s.push_str("</svg>\n");
    s
}

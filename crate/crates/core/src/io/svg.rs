use std::fmt::Write;

use crate::camera::CameraParams;
use crate::eval::{project_markings, PROJECTION_STEP_M};
use crate::keypoints::KeypointSet;
use crate::pitch::{KeypointFamily, PitchTemplate};

pub fn family_color(family: KeypointFamily) -> &'static str {
    match family {
        KeypointFamily::LineLine => "red",
        KeypointFamily::LineConic => "blue",
        KeypointFamily::Tangent => "purple",
        KeypointFamily::Extra => "black",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG 1.1 overlay of the projected pitch. Each visible piece of a marking
/// is one `<polyline>`; keypoints are circles colored by family. Without
/// `keypoints` the template keypoints in view are drawn. `background` is an
/// optional image href placed underneath.
pub fn render_overlay(
    params: &CameraParams,
    template: &PitchTemplate,
    keypoints: Option<&KeypointSet>,
    background: Option<&str>,
) -> String {
    let (w, h) = (params.image_size.width, params.image_size.height);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    if let Some(href) = background {
        let _ = writeln!(
            s,
            r#"  <image x="0" y="0" width="{w}" height="{h}" xlink:href="{}"/>"#,
            escape(href)
        );
    }
    let _ = writeln!(s, r#"  <g id="markings" fill="none" stroke="lime" stroke-width="2">"#);
    for (id, lines) in project_markings(params, template, PROJECTION_STEP_M) {
        for line in lines {
            let pts: Vec<String> = line.iter().map(|p| format!("{:.2},{:.2}", p.x, p.y)).collect();
            let _ = writeln!(
                s,
                r#"    <polyline class="{}" points="{}"/>"#,
                escape(id.name()),
                pts.join(" ")
            );
        }
    }
    let _ = writeln!(s, "  </g>");

    let drawn: Vec<(usize, nalgebra::Point2<f64>)> = match keypoints {
        Some(set) => set.iter().map(|k| (k.id, k.position)).collect(),
        None => template
            .keypoints()
            .iter()
            .filter_map(|k| {
                let p = params.project(&k.world)?;
                params.image_size.contains(&p).then_some((k.id, p))
            })
            .collect(),
    };
    let _ = writeln!(s, r#"  <g id="keypoints" stroke="white" stroke-width="1">"#);
    for (id, p) in drawn {
        let Ok(def) = template.keypoint(id) else {
            continue;
        };
        let _ = writeln!(
            s,
            r#"    <circle id="kp{id}" cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            p.x,
            p.y,
            family_color(def.family)
        );
    }
    let _ = writeln!(s, "  </g>\n</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::ImageSize;
    use crate::pitch::default_template;
    use nalgebra::Point3;

    #[test]
    fn top_down_view_draws_every_marking() {
        let cam = CameraParams::look_at(
            Point3::new(0.0, -1.0, 95.0),
            Point3::new(0.0, 0.0, 0.0),
            420.0,
            0.0,
            ImageSize::BROADCAST,
        )
        .unwrap();
        let svg = render_overlay(&cam, &default_template(), None, Some("frame.png"));
        assert_eq!(svg.matches("<polyline").count(), 26);
        assert!(svg.contains(r#"id="kp0" "#) && svg.contains(r#"fill="red""#));
        assert!(svg.contains(r#"id="kp30" "#));
        assert!(svg.contains(r#"id="kp44" "#));
        assert!(svg.contains("frame.png"));
    }

    #[test]
    fn family_colors() {
        assert_eq!(family_color(KeypointFamily::LineLine), "red");
        assert_eq!(family_color(KeypointFamily::LineConic), "blue");
        assert_eq!(family_color(KeypointFamily::Tangent), "purple");
        assert_eq!(family_color(KeypointFamily::Extra), "black");
    }
}

//! SVG rendering of a measure, a network and its barycentre field.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub width: u32,
    pub height: u32,
    /// Measure points beyond this count are subsampled with a fixed stride.
    pub max_points: usize,
    pub arrow_scale: f64,
    /// Coordinate dropped when the ambient dimension is 3.
    pub project_axis: Option<usize>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            width: 800,
            height: 800,
            max_points: 2000,
            arrow_scale: 1.0,
            project_axis: None,
        }
    }
}

/// An arrow from `base` along `vector`, in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrow {
    pub base: Vec<f64>,
    pub vector: Vec<f64>,
}

/// Parses `x`, `y`, `z` or a 0-based index.
pub fn parse_axis(s: &str) -> Result<usize> {
    match s {
        "x" => Ok(0),
        "y" => Ok(1),
        "z" => Ok(2),
        _ => s
            .parse()
            .map_err(|_| Error::validation(format!("unknown projection axis `{s}`"))),
    }
}

fn planar_axes(dim: usize, project_axis: Option<usize>) -> Result<[Option<usize>; 2]> {
    match (dim, project_axis) {
        (1, _) => Ok([Some(0), None]),
        (2, None) => Ok([Some(0), Some(1)]),
        (3, Some(a)) if a < 3 => {
            let mut keep = (0..3).filter(|&i| i != a);
            Ok([keep.next(), keep.next()])
        }
        (3, Some(a)) => Err(Error::validation(format!("projection axis {a} out of range for d = 3"))),
        (3, None) => Err(Error::Unsupported("d = 3 needs a projection axis".into())),
        (d, _) => Err(Error::Unsupported(format!("cannot plot d = {d}"))),
    }
}

struct Frame {
    axes: [Option<usize>; 2],
    lo: [f64; 2],
    scale: f64,
    pad: f64,
    height: f64,
}

impl Frame {
    fn planar(&self, x: &[f64]) -> [f64; 2] {
        [
            self.axes[0].map_or(0.0, |i| x[i]),
            self.axes[1].map_or(0.0, |i| x[i]),
        ]
    }

    fn map(&self, x: &[f64]) -> (f64, f64) {
        let q = self.planar(x);
        let sx = self.pad + (q[0] - self.lo[0]) * self.scale;
        let sy = self.height - self.pad - (q[1] - self.lo[1]) * self.scale;
        (sx, sy)
    }
}

/// Renders an SVG document.
pub fn render_svg(measure: Option<&DiscreteMeasure>, net: &Network, arrows: &[Arrow], opts: &PlotOptions) -> Result<String> {
    if opts.width == 0 || opts.height == 0 {
        return Err(Error::validation("plot size must be positive"));
    }
    let dim = net.dim();
    if let Some(m) = measure {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
    }
    let axes = planar_axes(dim, opts.project_axis)?;
    let probe = Frame {
        axes,
        lo: [0.0; 2],
        scale: 1.0,
        pad: 0.0,
        height: 0.0,
    };

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut grow = |x: &[f64]| {
        let q = probe.planar(x);
        for k in 0..2 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    };
    net.vertices().for_each(&mut grow);
    if let Some(m) = measure {
        m.points().for_each(&mut grow);
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let span = if span > 0.0 { span } else { 1.0 };
    let (w, h) = (opts.width as f64, opts.height as f64);
    let pad = 0.05 * w.min(h);
    let frame = Frame {
        axes,
        lo,
        scale: (w.min(h) - 2.0 * pad) / span,
        pad,
        height: h,
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        opts.width, opts.height, opts.width, opts.height
    )
    .unwrap();
    s.push_str("<style>.point{fill:#9aa5b1}.edge{stroke:#1f4e79;stroke-width:2}.endpoint{fill:#c0392b}.arrow{stroke:#e67e22;stroke-width:1}</style>\n");
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    if let Some(m) = measure {
        let stride = if opts.max_points == 0 {
            usize::MAX
        } else {
            m.len().div_ceil(opts.max_points).max(1)
        };
        s.push_str("<g id=\"points\">\n");
        for x in m.points().step_by(stride) {
            let (cx, cy) = frame.map(x);
            writeln!(s, r#"<circle class="point" cx="{cx:.3}" cy="{cy:.3}" r="1.5"/>"#).unwrap();
        }
        s.push_str("</g>\n");
    }

    s.push_str("<g id=\"edges\">\n");
    for &[a, b] in net.edges() {
        let (x1, y1) = frame.map(net.vertex(a));
        let (x2, y2) = frame.map(net.vertex(b));
        writeln!(s, r#"<line class="edge" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}"/>"#).unwrap();
    }
    s.push_str("</g>\n");

    s.push_str("<g id=\"endpoints\">\n");
    let degrees = net.degrees();
    for (v, &deg) in degrees.iter().enumerate() {
        if deg <= 1 {
            let (cx, cy) = frame.map(net.vertex(v));
            writeln!(s, r#"<circle class="endpoint" cx="{cx:.3}" cy="{cy:.3}" r="4"/>"#).unwrap();
        }
    }
    s.push_str("</g>\n");

    s.push_str("<g id=\"arrows\">\n");
    for a in arrows {
        if a.vector.iter().all(|&c| c == 0.0) {
            continue;
        }
        let tip: Vec<f64> = a
            .base
            .iter()
            .zip(&a.vector)
            .map(|(b, v)| b + opts.arrow_scale * v)
            .collect();
        let (x1, y1) = frame.map(&a.base);
        let (x2, y2) = frame.map(&tip);
        writeln!(s, r#"<line class="arrow" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}"/>"#).unwrap();
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(s: &str, pat: &str) -> usize {
        s.matches(pat).count()
    }

    #[test]
    fn one_line_per_edge() {
        let net = Network::polyline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let svg = render_svg(None, &net, &[], &PlotOptions::default()).unwrap();
        assert_eq!(count(&svg, r#"class="edge""#), 2);
        assert_eq!(count(&svg, r#"class="endpoint""#), 2);
        assert_eq!(count(&svg, r#"class="arrow""#), 0);
    }

    #[test]
    fn zero_arrows_are_skipped() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let arrows = vec![
            Arrow { base: vec![0.0, 0.0], vector: vec![0.0, 0.0] },
            Arrow { base: vec![1.0, 0.0], vector: vec![0.0, 0.1] },
        ];
        let svg = render_svg(None, &net, &arrows, &PlotOptions::default()).unwrap();
        assert_eq!(count(&svg, r#"class="arrow""#), 1);
    }

    #[test]
    fn three_d_needs_axis() {
        let net = Network::segment(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            render_svg(None, &net, &[], &PlotOptions::default()),
            Err(Error::Unsupported(_))
        ));
        let opts = PlotOptions {
            project_axis: Some(parse_axis("z").unwrap()),
            ..PlotOptions::default()
        };
        let svg = render_svg(None, &net, &[], &opts).unwrap();
        assert_eq!(count(&svg, r#"class="edge""#), 1);
    }

    #[test]
    fn four_d_unsupported() {
        let net = Network::segment(&[0.0; 4], &[1.0; 4]).unwrap();
        let opts = PlotOptions {
            project_axis: Some(0),
            ..PlotOptions::default()
        };
        assert!(matches!(render_svg(None, &net, &[], &opts), Err(Error::Unsupported(_))));
    }

    #[test]
    fn points_subsampled() {
        let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0, 0.5]).collect();
        let m = DiscreteMeasure::new(2, &pts, None).unwrap();
        let net = Network::segment(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let opts = PlotOptions {
            max_points: 10,
            ..PlotOptions::default()
        };
        let svg = render_svg(Some(&m), &net, &[], &opts).unwrap();
        assert_eq!(count(&svg, r#"class="point""#), 10);
    }
}

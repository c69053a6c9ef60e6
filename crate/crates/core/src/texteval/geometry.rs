//! Polygon area and quadrilateral intersection-over-union.

use crate::domain::TextBox;

type Pt = (f64, f64);

/// Signed shoelace area; positive for clockwise quads in image space (y down).
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Orients a triangle counter-clockwise in the `cross` sense.
fn oriented(t: [Pt; 3]) -> [Pt; 3] {
    if cross(t[0], t[1], t[2]) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Area of `subject ∩ clip` for a convex `clip` triangle (Sutherland-Hodgman).
fn clip_area(subject: &[Pt], clip: [Pt; 3]) -> f64 {
    let clip = oriented(clip);
    let mut out: Vec<Pt> = subject.to_vec();
    for i in 0..3 {
        let (a, b) = (clip[i], clip[(i + 1) % 3]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        let inside = |p: Pt| cross(a, b, p) >= 0.0;
        let intersect = |p: Pt, q: Pt| {
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            let t = dp / (dp - dq);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(intersect(prev, cur)),
                (false, true) => {
                    out.push(intersect(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    polygon_area(&out).abs()
}

/// Splits a simple quad into two triangles along an interior diagonal.
fn triangulate(q: &[Pt; 4]) -> [[Pt; 3]; 2] {
    // The 0-2 diagonal is interior iff vertices 1 and 3 lie on opposite sides of it.
    let s1 = cross(q[0], q[2], q[1]);
    let s3 = cross(q[0], q[2], q[3]);
    if s1 * s3 < 0.0 {
        [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    } else {
        [[q[1], q[2], q[3]], [q[1], q[3], q[0]]]
    }
}

/// Intersection area of two simple quadrilaterals.
pub fn intersection_area(a: &[Pt; 4], b: &[Pt; 4]) -> f64 {
    let ta = triangulate(a);
    let tb = triangulate(b);
    let mut total = 0.0;
    for x in &ta {
        for y in tb {
            total += clip_area(x, y);
        }
    }
    total
}

/// Intersection over union; degenerate (zero-area) quads give 0.
pub fn iou(a: &TextBox, b: &TextBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let inter = intersection_area(&a.quad, &b.quad);
    let union = aa + ab - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

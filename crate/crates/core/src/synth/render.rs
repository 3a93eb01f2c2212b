use super::pose::{bones, Joints};
use super::{CANVAS_H, CANVAS_W};

/// Integer line rasterization (Bresenham) from `a` to `b`, both ends
/// included.
pub fn draw_line(image: &mut [u8], a: (i64, i64), b: (i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..CANVAS_W as i64).contains(&x) && (0..CANVAS_H as i64).contains(&y) {
            image[y as usize * CANVAS_W + x as usize] = 1;
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn pixel(p: [f64; 2]) -> (i64, i64) {
    (p[0].round() as i64, p[1].round() as i64)
}

/// 120×160 binary skeleton image (row-major, `1` on bones).
pub fn render_skeleton(joints: &Joints) -> Vec<u8> {
    let mut image = vec![0u8; CANVAS_H * CANVAS_W];
    for (p, c) in bones() {
        draw_line(&mut image, pixel(joints[p]), pixel(joints[c]));
    }
    image
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(image: &[u8]) -> usize {
        image.iter().filter(|&&v| v != 0).count()
    }

    #[test]
    fn horizontal_bone_sets_eleven_pixels() {
        let mut image = vec![0u8; CANVAS_H * CANVAS_W];
        draw_line(&mut image, (10, 10), (20, 10));
        assert_eq!(count(&image), 11);
        assert!(image[10 * CANVAS_W + 10..=10 * CANVAS_W + 20].iter().all(|&v| v == 1));
    }

    #[test]
    fn coincident_joints_set_one_pixel() {
        let mut image = vec![0u8; CANVAS_H * CANVAS_W];
        draw_line(&mut image, (5, 7), (5, 7));
        assert_eq!(count(&image), 1);
    }

    #[test]
    fn all_joints_coincident() {
        let image = render_skeleton(&[[40.0, 30.0]; 14]);
        assert_eq!(count(&image), 1);
    }

    #[test]
    fn line_is_symmetric_in_pixel_count() {
        for &(a, b) in &[((3, 4), (40, 17)), ((0, 0), (159, 119)), ((80, 2), (75, 90))] {
            let mut fwd = vec![0u8; CANVAS_H * CANVAS_W];
            let mut back = vec![0u8; CANVAS_H * CANVAS_W];
            draw_line(&mut fwd, a, b);
            draw_line(&mut back, b, a);
            let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize + 1;
            assert_eq!(count(&fwd), steps);
            assert_eq!(count(&back), steps);
        }
    }
}

//! Image rotation for the covariate-shift generator.

pub const SIDE: usize = 28;

/// sin/cos of an angle in degrees, exact at multiples of 90 degrees so that
/// quarter turns land on the pixel lattice.
fn sin_cos_degrees(angle: f64) -> (f64, f64) {
    let reduced = angle.rem_euclid(360.0);
    if reduced.fract() == 0.0 && (reduced as u32) % 90 == 0 {
        return match reduced as u32 {
            0 => (0.0, 1.0),
            90 => (1.0, 0.0),
            180 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
    }
    reduced.to_radians().sin_cos()
}

/// Rotates a flattened 28x28 image counter-clockwise by `angle_degrees`
/// about its center using bilinear interpolation. Source pixels outside
/// the frame read as 0 and the result is clamped to [0, 1].
pub fn rotate_image(image: &[f64], angle_degrees: f64) -> Vec<f64> {
    assert_eq!(image.len(), SIDE * SIDE, "rotate_image expects a 28x28 image");
    let (sin, cos) = sin_cos_degrees(angle_degrees);
    let center = (SIDE as f64 - 1.0) / 2.0;
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= SIDE as isize || c >= SIDE as isize {
            0.0
        } else {
            image[r as usize * SIDE + c as usize]
        }
    };
    let mut out = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            // inverse map: rotate the output coordinate back by -angle.
            // Rows grow downward, so a visual counter-clockwise turn flips
            // the sign on the row axis.
            let x = c as f64 - center;
            let y = center - r as f64;
            let sx = cos * x + sin * y;
            let sy = -sin * x + cos * y;
            let src_c = sx + center;
            let src_r = center - sy;
            let r0 = src_r.floor();
            let c0 = src_c.floor();
            let fr = src_r - r0;
            let fc = src_c - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let mut v = pixel(r0, c0) * (1.0 - fr) * (1.0 - fc);
            if fc != 0.0 {
                v += pixel(r0, c0 + 1) * (1.0 - fr) * fc;
            }
            if fr != 0.0 {
                v += pixel(r0 + 1, c0) * fr * (1.0 - fc);
                if fc != 0.0 {
                    v += pixel(r0 + 1, c0 + 1) * fr * fc;
                }
            }
            out[r * SIDE + c] = v.clamp(0.0, 1.0);
        }
    }
    out
}

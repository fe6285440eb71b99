//! Volume sampling helpers shared by augmentation and warping.

use ndarray::ArrayView3;

/// Trilinear sample at a continuous voxel coordinate; zero outside bounds.
pub fn trilinear(vol: &ArrayView3<'_, f32>, x: f64, y: f64, z: f64) -> f32 {
    let (nx, ny, nz) = vol.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let z0 = z.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fz = z - z0;
    let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);

    let at = |xi: i64, yi: i64, zi: i64| -> f64 {
        if xi < 0 || yi < 0 || zi < 0 || xi >= nx as i64 || yi >= ny as i64 || zi >= nz as i64 {
            0.0
        } else {
            vol[[xi as usize, yi as usize, zi as usize]] as f64
        }
    };

    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x0 + 1, y0, z0) * fx;
    let c10 = at(x0, y0 + 1, z0) * (1.0 - fx) + at(x0 + 1, y0 + 1, z0) * fx;
    let c01 = at(x0, y0, z0 + 1) * (1.0 - fx) + at(x0 + 1, y0, z0 + 1) * fx;
    let c11 = at(x0, y0 + 1, z0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1, z0 + 1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz) as f32
}

/// Nearest-neighbour sample for label volumes; zero outside bounds.
pub fn nearest_u8(vol: &ArrayView3<'_, u8>, x: f64, y: f64, z: f64) -> u8 {
    let (nx, ny, nz) = vol.dim();
    let xi = x.round() as i64;
    let yi = y.round() as i64;
    let zi = z.round() as i64;
    if xi < 0 || yi < 0 || zi < 0 || xi >= nx as i64 || yi >= ny as i64 || zi >= nz as i64 {
        0
    } else {
        vol[[xi as usize, yi as usize, zi as usize]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn integer_coordinates_are_exact() {
        let mut v = Array3::<f32>::zeros((4, 4, 4));
        v[[1, 2, 3]] = 7.5;
        assert_eq!(trilinear(&v.view(), 1.0, 2.0, 3.0), 7.5);
        assert_eq!(trilinear(&v.view(), 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn midpoint_blends_linearly() {
        let mut v = Array3::<f32>::zeros((2, 2, 2));
        v[[0, 0, 0]] = 2.0;
        v[[1, 0, 0]] = 4.0;
        assert_eq!(trilinear(&v.view(), 0.5, 0.0, 0.0), 3.0);
    }

    #[test]
    fn outside_is_zero() {
        let v = Array3::<f32>::from_elem((2, 2, 2), 9.0);
        assert_eq!(trilinear(&v.view(), -2.0, 0.0, 0.0), 0.0);
        assert_eq!(nearest_u8(&Array3::<u8>::ones((2, 2, 2)).view(), 5.0, 0.0, 0.0), 0);
    }
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Latitudes within this many degrees of a pole are rejected.
pub const POLE_EPSILON_DEG: f64 = 1e-3;

const DEG: f64 = PI / 180.0;

/// Camera on a sphere around `center`, always looking at it.
///
/// Angles are in degrees. The eye sits at
/// `center + radius * (cos lat cos lon, sin lat, cos lat sin lon)` and the
/// up vector is world +Y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCamera {
    pub longitude: f64,
    pub latitude: f64,
    pub radius: f64,
    pub center: [f64; 3],
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3<f64>,
    pub direction: Vec3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3<f64> {
        self.origin + self.direction.scale(t)
    }
}

/// Per-degree partials of eye position and ray direction;
/// index 0 is longitude, 1 is latitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraJacobian {
    pub d_eye: [Vec3<f64>; 2],
    pub d_dir: [Vec3<f64>; 2],
}

impl SphericalCamera {
    pub fn new(longitude: f64, latitude: f64, radius: f64, width: usize, height: usize) -> Self {
        Self {
            longitude,
            latitude,
            radius,
            center: [0.0; 3],
            fov_y: 45.0,
            width,
            height,
        }
    }

    pub fn with_fov(mut self, fov_y: f64) -> Self {
        self.fov_y = fov_y;
        self
    }

    pub fn with_center(mut self, center: [f64; 3]) -> Self {
        self.center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latitude.abs() < 90.0 - POLE_EPSILON_DEG) {
            return Err(Error::InvalidParameter(format!(
                "latitude {} too close to a pole",
                self.latitude
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "camera radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::InvalidParameter(format!(
                "field of view must be in (0, 180), got {}",
                self.fov_y
            )));
        }
        if !self.longitude.is_finite() {
            return Err(Error::InvalidParameter("longitude is not finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn eye(&self) -> Vec3<f64> {
        self.eye_generic(self.longitude, self.latitude)
    }

    pub fn eye_generic<S: Scalar>(&self, lon: S, lat: S) -> Vec3<S> {
        let (phi, theta) = (lon * S::cst(DEG), lat * S::cst(DEG));
        let ct = theta.cos();
        let n = Vec3::new(ct * phi.cos(), theta.sin(), ct * phi.sin());
        Vec3::lift(Vec3::from_array(self.center)) + n.scale(S::cst(self.radius))
    }

    /// Screen offsets of a continuous pixel coordinate; pixel `(i, j)` has
    /// its center at `(i + 0.5, j + 0.5)`, rows grow downwards.
    fn screen_offsets(&self, pixel: [f64; 2]) -> (f64, f64) {
        let tan_half = (0.5 * self.fov_y * DEG).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * pixel[0] / self.width as f64 - 1.0) * tan_half * aspect;
        let sy = (1.0 - 2.0 * pixel[1] / self.height as f64) * tan_half;
        (sx, sy)
    }

    /// Eye and unit direction through `pixel`, generic over the scalar so the
    /// angles can be forward-mode seeded.
    pub fn ray_generic<S: Scalar>(&self, lon: S, lat: S, pixel: [f64; 2]) -> (Vec3<S>, Vec3<S>) {
        let eye = self.eye_generic(lon, lat);
        let center = Vec3::lift(Vec3::from_array(self.center));
        let forward = (center - eye).normalize();
        let up = Vec3::lift(Vec3::new(0.0, 1.0, 0.0));
        let right = forward.cross(&up).normalize();
        let true_up = right.cross(&forward);
        let (sx, sy) = self.screen_offsets(pixel);
        let dir = (forward + right.scale(S::cst(sx)) + true_up.scale(S::cst(sy))).normalize();
        (eye, dir)
    }

    /// `(origin, direction)` of the ray through `pixel`.
    pub fn camera_from_sphere(&self, pixel: [f64; 2]) -> Result<(Vec3<f64>, Vec3<f64>)> {
        self.validate()?;
        Ok(self.ray_generic(self.longitude, self.latitude, pixel))
    }

    pub fn view_axis(&self) -> Vec3<f64> {
        (Vec3::from_array(self.center) - self.eye()).normalize()
    }

    /// Hand-derived Jacobian of eye and direction with respect to
    /// longitude and latitude, per degree.
    pub fn camera_gradients(&self, pixel: [f64; 2]) -> Result<CameraJacobian> {
        self.validate()?;
        let (phi, theta) = (self.longitude * DEG, self.latitude * DEG);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        // n: unit eye offset; forward = -n, right = (sp, 0, -cp), up = (-st cp, ct, -st sp)
        let n = Vec3::new(ct * cp, st, ct * sp);
        let right = Vec3::new(sp, 0.0, -cp);
        let up = Vec3::new(-st * cp, ct, -st * sp);
        let dn = [Vec3::new(-ct * sp, 0.0, ct * cp), up];
        let dright = [Vec3::new(cp, 0.0, sp), Vec3::zero()];
        let dup = [Vec3::new(st * sp, 0.0, -st * cp), -n];

        let (sx, sy) = self.screen_offsets(pixel);
        let w = -n + right.scale(sx) + up.scale(sy);
        let len = w.norm();
        let dir = w.scale(1.0 / len);

        let mut d_eye = [Vec3::zero(); 2];
        let mut d_dir = [Vec3::zero(); 2];
        for a in 0..2 {
            d_eye[a] = dn[a].scale(self.radius * DEG);
            let dw = -dn[a] + dright[a].scale(sx) + dup[a].scale(sy);
            // d(w/|w|) = (dw - dir (dir . dw)) / |w|
            let proj = dir.scale(dir.dot(&dw));
            d_dir[a] = (dw - proj).scale(DEG / len);
        }
        Ok(CameraJacobian { d_eye, d_dir })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;

    fn close(a: Vec3<f64>, b: Vec3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn axis_aligned_poses() {
        let cam = SphericalCamera::new(0.0, 0.0, 2.0, 8, 8);
        assert!(close(cam.eye(), Vec3::new(2.0, 0.0, 0.0), 1e-12));
        assert!(close(cam.view_axis(), Vec3::new(-1.0, 0.0, 0.0), 1e-12));

        let cam = SphericalCamera::new(90.0, 0.0, 2.0, 8, 8);
        assert!(close(cam.eye(), Vec3::new(0.0, 0.0, 2.0), 1e-12));

        let cam = SphericalCamera::new(0.0, 45.0, 2f64.sqrt(), 8, 8);
        assert!(close(cam.eye(), Vec3::new(1.0, 1.0, 0.0), 1e-12));
    }

    #[test]
    fn center_pixel_looks_at_center() {
        let cam = SphericalCamera::new(33.0, -20.0, 3.0, 9, 5).with_center([0.1, 0.2, -0.3]);
        let (o, d) = cam.camera_from_sphere([4.5, 2.5]).unwrap();
        assert!(close(o, cam.eye(), 1e-12));
        assert!(close(d, cam.view_axis(), 1e-12));
        assert!((d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pole_rejected() {
        let cam = SphericalCamera::new(0.0, 90.0 - 1e-4, 2.0, 4, 4);
        assert!(matches!(cam.camera_from_sphere([0.5, 0.5]), Err(Error::InvalidParameter(_))));
        assert!(cam.camera_gradients([0.5, 0.5]).is_err());
    }

    #[test]
    fn eye_partials_at_origin_pose() {
        let rho = 2.0;
        let cam = SphericalCamera::new(0.0, 0.0, rho, 4, 4);
        let j = cam.camera_gradients([2.0, 2.0]).unwrap();
        assert!(close(j.d_eye[0], Vec3::new(0.0, 0.0, rho * DEG), 1e-15));
        assert!(close(j.d_eye[1], Vec3::new(0.0, rho * DEG, 0.0), 1e-15));
    }

    #[test]
    fn jacobian_matches_dual_and_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let cam = SphericalCamera::new(
                rng.random_range(0.0..360.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(0.5..4.0),
                16,
                12,
            )
            .with_fov(rng.random_range(20.0..70.0));
            let pixel = [rng.random_range(0.0..16.0), rng.random_range(0.0..12.0)];
            let j = cam.camera_gradients(pixel).unwrap();

            let lon = Dual::<f64, 2>::variable(cam.longitude, 0);
            let lat = Dual::<f64, 2>::variable(cam.latitude, 1);
            let (e, d) = cam.ray_generic(lon, lat, pixel);
            for a in 0..2 {
                let de = Vec3::new(e.x.deriv[a], e.y.deriv[a], e.z.deriv[a]);
                let dd = Vec3::new(d.x.deriv[a], d.y.deriv[a], d.z.deriv[a]);
                assert!(close(de, j.d_eye[a], 1e-12 * (1.0 + de.norm())));
                assert!(close(dd, j.d_dir[a], 1e-12 * (1.0 + dd.norm())));
            }

            let h = 1e-4;
            for a in 0..2 {
                let mut p = cam.clone();
                let mut m = cam.clone();
                if a == 0 {
                    p.longitude += h;
                    m.longitude -= h;
                } else {
                    p.latitude += h;
                    m.latitude -= h;
                }
                let (ep, dp) = p.camera_from_sphere(pixel).unwrap();
                let (em, dm) = m.camera_from_sphere(pixel).unwrap();
                let fe = (ep - em).scale(0.5 / h);
                let fdir = (dp - dm).scale(0.5 / h);
                assert!(close(fe, j.d_eye[a], 1e-5 * fe.norm().max(1e-8)));
                assert!(close(fdir, j.d_dir[a], 1e-5 * fdir.norm().max(1e-8)));
            }
        }
    }

    #[test]
    fn eye_stays_on_sphere() {
        for lon in (0..360).step_by(15) {
            for lat in (-85..=85).step_by(5) {
                let cam = SphericalCamera::new(lon as f64, lat as f64, 1.7, 2, 2).with_center([1.0, -2.0, 0.5]);
                let r = (cam.eye() - Vec3::from_array(cam.center)).norm();
                assert!((r - 1.7).abs() <= 1e-6 * 1.7);
            }
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voldiff::field::{DensityVolume, SphericalCamera, Transfer, TransferFunction};
use voldiff::math::Aabb;
use voldiff::renderer::{
    ray_sample_counts, render, render_adjoint, render_forward_grad, render_seeded, AdjointMemory, ColorMedium,
    DensityMedium, DiffTarget, ImageRGBA, RenderConfig,
};
use voldiff::field::ColorVolume;
use voldiff::Error;

struct Scene {
    volume: DensityVolume,
    transfer: Transfer,
    cam: SphericalCamera,
    cfg: RenderConfig,
    weights: ImageRGBA,
}

fn random_scene(rng: &mut ChaCha8Rng, r: usize) -> Scene {
    let dims = [8, 8, 8];
    let data = (0..512).map(|_| rng.random_range(0.05..0.95)).collect();
    let volume = DensityVolume::new(dims, data, Aabb::centered_cube(0.5)).unwrap();
    let texels = (0..r)
        .map(|_| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.5..8.0),
            ]
        })
        .collect();
    let transfer = Transfer::Table(TransferFunction::new(texels).unwrap());
    let cam = SphericalCamera::new(rng.random_range(0.0..360.0), rng.random_range(-60.0..60.0), 2.0, 8, 8)
        .with_fov(rng.random_range(25.0..40.0));
    let cfg = RenderConfig::new(1.0 / 16.0);
    let mut weights = ImageRGBA::new(8, 8);
    for p in weights.data.iter_mut() {
        for c in p.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
    }
    Scene {
        volume,
        transfer,
        cam,
        cfg,
        weights,
    }
}

fn linear_loss(img: &ImageRGBA, w: &ImageRGBA) -> f64 {
    img.data
        .iter()
        .zip(&w.data)
        .map(|(a, b)| (0..4).map(|c| a[c] * b[c]).sum::<f64>())
        .sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn loss_of(s: &Scene, volume: &DensityVolume, transfer: &Transfer, cam: &SphericalCamera, step: f64) -> f64 {
    let cfg = RenderConfig::new(step);
    let img = render(&DensityMedium::new(volume, transfer), cam, &cfg).unwrap();
    linear_loss(&img, &s.weights)
}

#[test]
fn empty_volume_renders_transparent_black() {
    let v = DensityVolume::constant([4, 4, 4], 0.0, Aabb::centered_cube(0.5));
    let t = Transfer::Table(TransferFunction::new(vec![[1.0, 1.0, 1.0, 0.0], [1.0, 0.0, 0.0, 5.0]]).unwrap());
    let cam = SphericalCamera::new(10.0, 20.0, 2.0, 6, 6);
    let img = render(&DensityMedium::new(&v, &t), &cam, &RenderConfig::new(0.05)).unwrap();
    assert!(img.data.iter().all(|p| *p == [0.0; 4]));
}

#[test]
fn homogeneous_medium_transparency_is_exact() {
    let v = DensityVolume::constant([4, 4, 4], 0.5, Aabb::centered_cube(0.5));
    for tau in [0.1, 1.0, 10.0] {
        let t = Transfer::Table(TransferFunction::new(vec![[0.3, 0.6, 0.9, tau]]).unwrap());
        let cam = SphericalCamera::new(0.0, 0.0, 3.0, 9, 9).with_fov(1.0);
        let step = 1.0 / 64.0;
        let img = render(&DensityMedium::new(&v, &t), &cam, &RenderConfig::new(step)).unwrap();
        let counts = ray_sample_counts(&DensityMedium::new(&v, &t), &cam, step);
        let center = 4 * 9 + 4;
        let len = counts[center] as f64 * step;
        let a = img.data[center][3];
        assert!(((1.0 - a) - (-tau * len).exp()).abs() <= 1e-5, "tau {tau}: {a}");
        // emission converges to C0 (1 - exp(-tau l))
        let expected = 0.9 * (1.0 - (-tau * len).exp());
        assert!((img.data[center][2] - expected).abs() < 0.05 * expected.max(1e-3));
    }
}

#[test]
fn render_rejects_bad_config() {
    let v = DensityVolume::constant([2, 2, 2], 0.5, Aabb::centered_cube(0.5));
    let t = Transfer::AbsorptionRamp { scale: 1.0 };
    let m = DensityMedium::new(&v, &t);
    let cam = SphericalCamera::new(0.0, 89.9999, 2.0, 4, 4);
    assert!(matches!(render(&m, &cam, &RenderConfig::new(0.1)), Err(Error::InvalidParameter(_))));
    let cam = SphericalCamera::new(0.0, 0.0, 2.0, 4, 4);
    assert!(render(&m, &cam, &RenderConfig::new(0.0)).is_err());
    assert!(matches!(
        render_forward_grad(&m, &cam, &RenderConfig::new(0.1), DiffTarget::Tf),
        Err(Error::Unsupported(_))
    ));
    let seed = ImageRGBA::new(3, 4);
    assert!(matches!(
        render_adjoint(&m, &cam, &RenderConfig::new(0.1), &seed),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn zero_seeds_give_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_scene(&mut rng, 4);
    let m = DensityMedium::new(&s.volume, &s.transfer);
    let (img, jac) = render_seeded::<_, 2>(&m, &s.cam, &s.cfg, [0.0; 2], [0.0; 2], [0.0; 2]).unwrap();
    assert!(jac.data.iter().all(|v| *v == 0.0));
    assert_eq!(img, render(&m, &s.cam, &s.cfg).unwrap());
    for target in [DiffTarget::Camera, DiffTarget::Stepsize, DiffTarget::Tf, DiffTarget::Volume] {
        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(target), &ImageRGBA::new(8, 8)).unwrap();
        assert_eq!(g.stepsize, 0.0);
        assert_eq!(g.camera, [0.0; 2]);
        assert!(g.tf.iter().flatten().all(|v| *v == 0.0));
        assert!(g.volume.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn forward_mode_image_matches_plain_render() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_scene(&mut rng, 8);
    let m = DensityMedium::new(&s.volume, &s.transfer);
    let plain = render(&m, &s.cam, &s.cfg).unwrap();
    let (img, _) = render_forward_grad(&m, &s.cam, &s.cfg, DiffTarget::Camera).unwrap();
    assert_eq!(img, plain);
}

/// Picks a scene whose per-ray sample counts do not change under the camera
/// and step perturbations used by the finite differences.
fn stable_scene(rng: &mut ChaCha8Rng, r: usize, h_deg: f64, h_step: f64) -> Scene {
    loop {
        let s = random_scene(rng, r);
        let m = DensityMedium::new(&s.volume, &s.transfer);
        let base = ray_sample_counts(&m, &s.cam, s.cfg.step);
        let mut ok = true;
        for (dl, dt) in [(h_deg, 0.0), (-h_deg, 0.0), (0.0, h_deg), (0.0, -h_deg)] {
            let mut c = s.cam.clone();
            c.longitude += dl;
            c.latitude += dt;
            ok &= ray_sample_counts(&m, &c, s.cfg.step) == base;
        }
        for ds in [h_step, -h_step] {
            ok &= ray_sample_counts(&m, &s.cam, s.cfg.step + ds) == base;
        }
        if ok {
            return s;
        }
    }
}

#[test]
fn adjoint_matches_finite_differences_for_every_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for r in [2, 8] {
        let h_deg = 1e-5;
        let h_step = 1e-7;
        let s = stable_scene(&mut rng, r, h_deg, h_step);
        let m = DensityMedium::new(&s.volume, &s.transfer);

        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Camera), &s.weights).unwrap();
        let mut fd = [0.0; 2];
        for a in 0..2 {
            let mut p = s.cam.clone();
            let mut q = s.cam.clone();
            if a == 0 {
                p.longitude += h_deg;
                q.longitude -= h_deg;
            } else {
                p.latitude += h_deg;
                q.latitude -= h_deg;
            }
            fd[a] = (loss_of(&s, &s.volume, &s.transfer, &p, s.cfg.step)
                - loss_of(&s, &s.volume, &s.transfer, &q, s.cfg.step))
                / (2.0 * h_deg);
        }
        assert!(rel_err(&g.camera, &fd) < 1e-3, "camera {:?} vs {:?}", g.camera, fd);

        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Stepsize), &s.weights).unwrap();
        let fd = (loss_of(&s, &s.volume, &s.transfer, &s.cam, s.cfg.step + h_step)
            - loss_of(&s, &s.volume, &s.transfer, &s.cam, s.cfg.step - h_step))
            / (2.0 * h_step);
        assert!(rel_err(&[g.stepsize], &[fd]) < 1e-3, "step {} vs {}", g.stepsize, fd);

        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Tf), &s.weights).unwrap();
        let table = s.transfer.table().unwrap();
        let mut fd = Vec::new();
        for i in 0..r * 4 {
            let h = 1e-6;
            let mut flat = table.to_flat();
            flat[i] += h;
            let mut tp = table.clone();
            tp.set_flat(&flat);
            flat[i] -= 2.0 * h;
            let mut tm = table.clone();
            tm.set_flat(&flat);
            fd.push(
                (loss_of(&s, &s.volume, &Transfer::Table(tp), &s.cam, s.cfg.step)
                    - loss_of(&s, &s.volume, &Transfer::Table(tm), &s.cam, s.cfg.step))
                    / (2.0 * h),
            );
        }
        assert!(rel_err(&g.tf_flat(), &fd) < 1e-3);

        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Volume), &s.weights).unwrap();
        let mut fd = Vec::new();
        for i in 0..s.volume.voxel_count() {
            let h = 1e-6;
            let mut vp = s.volume.clone();
            vp.data[i] += h;
            let mut vm = s.volume.clone();
            vm.data[i] -= h;
            fd.push(
                (loss_of(&s, &vp, &s.transfer, &s.cam, s.cfg.step) - loss_of(&s, &vm, &s.transfer, &s.cam, s.cfg.step))
                    / (2.0 * h),
            );
        }
        assert!(rel_err(&g.volume, &fd) < 1e-3, "volume rel err {}", rel_err(&g.volume, &fd));
    }
}

#[test]
fn forward_and_adjoint_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let s = random_scene(&mut rng, 8);
        let m = DensityMedium::new(&s.volume, &s.transfer);
        let (_, jac) = render_forward_grad(&m, &s.cam, &s.cfg, DiffTarget::Camera).unwrap();
        let fwd = jac.contract(&s.weights);
        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Camera), &s.weights).unwrap();
        assert!(rel_err(&g.camera, &fwd) < 1e-4, "{:?} vs {:?}", g.camera, fwd);

        let (_, jac) = render_forward_grad(&m, &s.cam, &s.cfg, DiffTarget::Stepsize).unwrap();
        let fwd = jac.contract(&s.weights);
        let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Stepsize), &s.weights).unwrap();
        assert!(rel_err(&[g.stepsize], &fwd) < 1e-4);
    }
}

#[test]
fn inversion_matches_stored_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let s = random_scene(&mut rng, 8);
        let m = DensityMedium::new(&s.volume, &s.transfer);
        for target in [DiffTarget::Camera, DiffTarget::Stepsize, DiffTarget::Tf, DiffTarget::Volume] {
            let cfg = s.cfg.with_target(target);
            let (a, sa) = render_adjoint(&m, &s.cam, &cfg, &s.weights).unwrap();
            let (b, sb) = render_adjoint(&m, &s.cam, &cfg.with_memory(AdjointMemory::Stored), &s.weights).unwrap();
            assert_eq!(sa.max_states_per_ray, 1);
            assert!(sb.max_states_per_ray > 1);
            assert!(rel_err(&a.camera, &b.camera) < 1e-5 || b.camera == [0.0; 2]);
            assert!(rel_err(&[a.stepsize], &[b.stepsize]) < 1e-5 || b.stepsize == 0.0);
            assert!(rel_err(&a.tf_flat(), &b.tf_flat()) < 1e-5 || b.tf.is_empty());
            assert!(rel_err(&a.volume, &b.volume) < 1e-5 || b.volume.is_empty());
        }
    }
}

#[test]
fn stepsize_derivative_of_homogeneous_alpha() {
    let v = DensityVolume::constant([4, 4, 4], 0.5, Aabb::centered_cube(0.5));
    let tau = 2.0;
    let t = Transfer::Table(TransferFunction::new(vec![[1.0, 1.0, 1.0, tau]]).unwrap());
    let m = DensityMedium::new(&v, &t);
    let cam = SphericalCamera::new(0.0, 0.0, 3.0, 5, 5).with_fov(1.0);
    let cfg = RenderConfig::new(0.05);
    let (_, jac) = render_forward_grad(&m, &cam, &cfg, DiffTarget::Stepsize).unwrap();
    let n = ray_sample_counts(&m, &cam, cfg.step)[12] as f64;
    let expected = tau * n * (-tau * n * cfg.step).exp();
    assert!((jac.get(12, 3, 0) - expected).abs() < 1e-10);
}

#[test]
fn untouched_voxels_get_exactly_zero() {
    // narrow field of view through the middle of a large volume
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = (0..16 * 16 * 16).map(|_| rng.random_range(0.1..0.9)).collect();
    let v = DensityVolume::new([16, 16, 16], data, Aabb::centered_cube(0.5)).unwrap();
    let t = Transfer::Table(TransferFunction::new(vec![[0.5, 0.2, 0.1, 1.0], [0.1, 0.9, 0.4, 4.0]]).unwrap());
    let m = DensityMedium::new(&v, &t);
    let cam = SphericalCamera::new(0.0, 0.0, 2.0, 4, 4).with_fov(2.0);
    let mut seed = ImageRGBA::new(4, 4);
    seed.data.iter_mut().for_each(|p| *p = [1.0, -1.0, 0.5, 1.0]);
    let (g, _) = render_adjoint(&m, &cam, &RenderConfig::new(0.02).with_target(DiffTarget::Volume), &seed).unwrap();
    let corner = v.index(0, 0, 0);
    assert_eq!(g.volume[corner], 0.0);
    assert!(g.volume.iter().filter(|x| **x != 0.0).count() > 0);
    assert!(g.volume.iter().filter(|x| **x == 0.0).count() > 3000);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_scene(&mut rng, 8);
    let m = DensityMedium::new(&s.volume, &s.transfer);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let img = render(&m, &s.cam, &s.cfg).unwrap();
            let (g, _) = render_adjoint(&m, &s.cam, &s.cfg.with_target(DiffTarget::Volume), &s.weights).unwrap();
            (img, g)
        })
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn color_volume_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cv = ColorVolume::constant([4, 4, 4], [0.0; 4], Aabb::centered_cube(0.5));
    for p in cv.data.iter_mut() {
        *p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.5..5.0)];
    }
    let cam = SphericalCamera::new(30.0, 20.0, 2.0, 6, 6).with_fov(35.0);
    let cfg = RenderConfig::new(0.07).with_target(DiffTarget::Volume);
    let mut w = ImageRGBA::new(6, 6);
    for p in w.data.iter_mut() {
        for c in p.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
    }
    let (g, _) = render_adjoint(&ColorMedium { volume: &cv }, &cam, &cfg, &w).unwrap();
    let flat = cv.to_flat();
    let mut fd = Vec::new();
    for i in 0..flat.len() {
        let h = 1e-6;
        let mut f = flat.clone();
        f[i] += h;
        let mut p = cv.clone();
        p.set_flat(&f);
        f[i] -= 2.0 * h;
        let mut q = cv.clone();
        q.set_flat(&f);
        let lp = linear_loss(&render(&ColorMedium { volume: &p }, &cam, &cfg).unwrap(), &w);
        let lq = linear_loss(&render(&ColorMedium { volume: &q }, &cam, &cfg).unwrap(), &w);
        fd.push((lp - lq) / (2.0 * h));
    }
    assert!(rel_err(&g.volume, &fd) < 1e-4);
}

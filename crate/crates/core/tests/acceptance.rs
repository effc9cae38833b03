//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any fails. Runs on a single rayon thread so the
//! runtime bounds are measured single-threaded.

use std::path::Path;
use std::time::Instant;

use image::{GrayImage, RgbImage};
use nalgebra::{Rotation3, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streetloc::cli::{
    cmd_build, cmd_localize, cmd_prepare, evaluate, PipelineConfig, ViewStore, DATABASE_FILE,
};
use streetloc::features::{equalize_histogram, extract_features};
use streetloc::geo::{lambert_to_wgs84, wgs84_to_lambert, GeoPoint, LambertProjection};
use streetloc::geometry::{
    decode_depth, pixel_to_ray, render_rectilinear, DepthPlane, EquirectGrid, PanoramaImage,
    PinholeCamera, PlanarDepthMap,
};
use streetloc::ingest::{
    generate_synthetic_street, load_database, load_dataset, SyntheticSceneConfig, SyntheticStreet,
};
use streetloc::pose::{
    local_bundle_adjust, project, refine_pose, residual_jacobian, robust_cost,
    robust_cost_gradient, solve_pnp_ransac, tukey_rho, Correspondence3D2D, Loss, PairEstimate,
    PoseSE3, RobustConfig,
};
use streetloc::retrieval::{query_full, query_windowed, SearchState};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn camera() -> PinholeCamera {
    PinholeCamera::new(490.0, 490.0, 255.5, 191.5, 512, 384).unwrap()
}

fn random_rotation(rng: &mut ChaCha8Rng, tilt: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(
        rng.random_range(-tilt..tilt),
        rng.random_range(-tilt..tilt),
        rng.random_range(-3.1..3.1),
    )
}

// ---------------------------------------------------------------- geometry

/// Smooth test signal on the sphere.
fn sphere_signal(d: &Vector3<f64>) -> [f64; 3] {
    let d = d.normalize();
    [
        128.0 + 60.0 * (2.0 * d.x).sin() * (1.5 * d.y).cos() + 30.0 * d.z,
        128.0 + 70.0 * (3.0 * d.y + d.z).sin(),
        128.0 + 50.0 * (2.5 * d.z).cos() * (d.x + d.y).sin(),
    ]
}

fn geometry_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cam = camera();

    // Bilinear back-projection against a per-pixel ray-traced oracle on an
    // analytic sphere signal.
    let (w, h, heading) = (3072u32, 1536u32, 0.7);
    let grid = EquirectGrid::new(w, h, heading);
    let mut rgb = RgbImage::new(w, h);
    for (c, r, px) in rgb.enumerate_pixels_mut() {
        let s = sphere_signal(&grid.pixel_to_direction(c as f64, r as f64));
        px.0 = s.map(|v| v.round().clamp(0.0, 255.0) as u8);
    }
    let origin = GeoPoint::new(48.801631, 2.131509, 0.0).unwrap();
    let pano = PanoramaImage::new(rgb, origin, heading).unwrap();
    let mut sphere_err = 0.0f64;
    for _ in 0..4 {
        let rot = random_rotation(&mut rng, 0.6);
        let view = render_rectilinear(&pano, &cam, &rot);
        for (x, y, px) in view.enumerate_pixels() {
            let ray = pixel_to_ray(&cam, &rot, &Vector2::new(x as f64, y as f64));
            let truth = sphere_signal(&ray);
            for ch in 0..3 {
                sphere_err =
                    sphere_err.max((px.0[ch] as f64 - truth[ch].round().clamp(0.0, 255.0)).abs());
            }
        }
    }

    // The synthetic street's ray tracer, seen from a panorama center, against
    // the rendered view of that panorama. Pixels next to an occlusion or
    // horizon edge are left out: a nearest-pixel change of surface is not a
    // sampling error.
    let mut cfg = SyntheticSceneConfig {
        street_length: 20.0,
        texture_softness: 10.0,
        ..Default::default()
    };
    cfg.query.count = 1;
    cfg.query.start = 10.0;
    cfg.query.lateral_offset = 0.0;
    cfg.query.height = cfg.camera_height;
    cfg.query.yaw_jitter_deg = 0.0;
    cfg.noise.pixel_sigma = 0.0;
    cfg.query_camera = cam;
    let street = SyntheticStreet::new(cfg, 5).unwrap();
    let street_pano = street.render_panorama(1);
    let depth = street.depth_map(1);
    let pose = street.query_pose(0);
    let rot = pose.world_from_camera;
    let traced = street.render_query(0);
    let rendered = render_rectilinear(&street_pano, &cam, &rot);
    // Visible surface per pixel, from the plane table and the facade height.
    let top = street.config().facade_height - street.config().camera_height;
    let (vw, vh) = (cam.width as i64, cam.height as i64);
    let labels: Vec<usize> = (0..vh)
        .flat_map(|y| (0..vw).map(move |x| (x, y)))
        .map(|(x, y)| {
            let ray = pixel_to_ray(&cam, &rot, &Vector2::new(x as f64, y as f64));
            let mut best = (f64::INFINITY, 0);
            for (i, p) in depth.planes().iter().enumerate() {
                let c = p.normal.dot(&ray);
                if c < -1e-9 && -p.distance / c < best.0 {
                    best = (-p.distance / c, i + 1);
                }
            }
            let vertical = best.1 > 0 && depth.planes()[best.1 - 1].normal.z.abs() < 0.5;
            if vertical && best.0 * ray.z > top {
                0
            } else {
                best.1
            }
        })
        .collect();
    let edge = |x: i64, y: i64| {
        let l0 = labels[(y * vw + x) as usize];
        (-2..=2).any(|dy| {
            (-2..=2).any(|dx| {
                let (xx, yy) = (x + dx, y + dy);
                xx >= 0 && yy >= 0 && xx < vw && yy < vh && labels[(yy * vw + xx) as usize] != l0
            })
        })
    };
    let (mut street_err, mut checked) = (0.0f64, 0usize);
    for y in 0..vh {
        for x in 0..vw {
            if edge(x, y) {
                continue;
            }
            checked += 1;
            let (a, b) = (
                traced.get_pixel(x as u32, y as u32),
                rendered.get_pixel(x as u32, y as u32),
            );
            for ch in 0..3 {
                street_err = street_err.max((a.0[ch] as f64 - b.0[ch] as f64).abs());
            }
        }
    }
    let coverage = checked as f64 / (vw * vh) as f64;

    // Ray and projection inverse consistency.
    let mut proj_err = 0.0f64;
    for _ in 0..10_000 {
        let rot = random_rotation(&mut rng, 1.0);
        let px = Vector2::new(rng.random_range(0.0..511.0), rng.random_range(0.0..383.0));
        let ray = pixel_to_ray(&cam, &rot, &px) * rng.random_range(0.5..80.0);
        let back = cam.project(&(rot.inverse() * ray)).unwrap();
        proj_err = proj_err.max((back - px).norm());
    }

    // Plane-encoded depth against a point placed on the plane first.
    let mut depth_err = 0.0f64;
    for _ in 0..10_000 {
        let n = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let d = rng.random_range(1.0..40.0);
        let foot: Vector3<f64> = -d * n;
        let mut t: Vector3<f64> = n.cross(&Vector3::new(0.3, -0.7, 0.2)).normalize();
        t *= rng.random_range(-30.0..30.0);
        let point = foot + t + n.cross(&t).normalize() * rng.random_range(-30.0..30.0);
        let ray = point.normalize();
        if -n.dot(&ray) < 1e-3 {
            continue;
        }
        let map = PlanarDepthMap::new(
            8,
            4,
            vec![1; 32],
            vec![DepthPlane {
                normal: n,
                distance: d,
            }],
        )
        .unwrap();
        let got = decode_depth(&map, &ray, map.grid(0.0).nearest(&ray))
            .unwrap()
            .unwrap();
        depth_err = depth_err.max((got - point.norm()).abs());
    }

    let pass = sphere_err <= 2.0
        && street_err <= 2.0
        && coverage > 0.9
        && proj_err <= 1e-9
        && depth_err <= 1e-6;
    outcome(
        "geometry round-trips",
        pass,
        format!(
            "render vs sphere oracle max {sphere_err} levels; vs street ray tracer max {street_err} levels \
             ({:.1}% of pixels); ray/project {proj_err:.2e} px; depth {depth_err:.2e} m",
            100.0 * coverage
        ),
    )
}

// ---------------------------------------------------------------- geodesy

fn geodetic_round_trip() -> Outcome {
    let proj = LambertProjection::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut points = vec![GeoPoint::new(48.801631, 2.131509, 0.0).unwrap()];
    for _ in 0..10_000 {
        points.push(
            GeoPoint::new(
                rng.random_range(41.0..51.5),
                rng.random_range(-5.5..10.0),
                0.0,
            )
            .unwrap(),
        );
    }
    let (mut geo_err, mut plane_err) = (0.0f64, 0.0f64);
    for p in &points {
        let xy = wgs84_to_lambert(p, &proj).unwrap();
        let back = lambert_to_wgs84(&xy, &proj).unwrap();
        geo_err = geo_err
            .max((back.lat - p.lat).abs())
            .max((back.lon - p.lon).abs());
        let xy2 = wgs84_to_lambert(&back, &proj).unwrap();
        plane_err = plane_err.max(xy.distance(&xy2));
    }
    outcome(
        "geodetic round-trip",
        geo_err <= 1e-9 && plane_err <= 1e-6,
        format!(
            "{} points: inverse∘forward {geo_err:.2e} deg, forward∘inverse {plane_err:.2e} m",
            points.len()
        ),
    )
}

// ---------------------------------------------------------------- pose

fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
    PoseSE3::new(
        random_rotation(rng, 0.4),
        Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ),
    )
}

/// Points visible to `pose` (camera from world) with their exact pixels.
fn visible_points(rng: &mut ChaCha8Rng, pose: &PoseSE3, n: usize) -> Vec<Correspondence3D2D> {
    let cam = camera();
    let inv = pose.inverse();
    (0..n)
        .map(|_| {
            let px = Vector2::new(rng.random_range(0.0..511.0), rng.random_range(0.0..383.0));
            let pc = cam.unproject(&px).normalize() * rng.random_range(4.0..40.0);
            Correspondence3D2D {
                point: inv.transform(&pc),
                pixel: project(&inv.transform(&pc), pose, &cam).unwrap(),
                source_view: 0,
            }
        })
        .collect()
}

fn pnp_exact_recovery() -> Outcome {
    let cam = camera();
    let config = RobustConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut rot_err, mut trans_err, mut failures) = (0.0f64, 0.0f64, 0);
    for run in 0..200 {
        let truth = random_pose(&mut rng);
        let mut corrs = visible_points(&mut rng, &truth, 50);
        if run % 2 == 1 {
            for c in corrs.iter_mut().take(15) {
                c.pixel = Vector2::new(rng.random_range(0.0..511.0), rng.random_range(0.0..383.0));
            }
        }
        match solve_pnp_ransac(&corrs, &cam, &config) {
            Ok(sol) => {
                rot_err = rot_err.max(sol.pose.rotation_distance(&truth));
                trans_err = trans_err.max((sol.pose.translation() - truth.translation()).norm());
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        "PnP exact recovery",
        failures == 0 && rot_err < 1e-6 && trans_err < 1e-6,
        format!("100 poses clean + 100 with 30% outliers: max rotation {rot_err:.2e} rad, translation {trans_err:.2e} m, {failures} failures"),
    )
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Central differences of `f` along each left-update direction.
fn numeric_gradient(pose: &PoseSE3, f: impl Fn(&PoseSE3) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..6)
        .map(|i| {
            let mut d = Vector6::zeros();
            d[i] = h;
            (f(&pose.retract(&d)) - f(&pose.retract(&-d))) / (2.0 * h)
        })
        .collect()
}

fn robust_cost_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    // The biweight written out as a polynomial in u = (x/t)².
    let oracle = |x: f64, t: f64| {
        let u = (x / t) * (x / t);
        if x.abs() <= t {
            t * t / 6.0 * (3.0 * u - 3.0 * u * u + u * u * u)
        } else {
            t * t / 6.0
        }
    };
    let mut rho_err = 0.0f64;
    for i in 0..1000 {
        let t = rng.random_range(0.5..10.0);
        let x = match i % 10 {
            0 => t,
            1 => -t,
            _ => rng.random_range(-2.0 * t..2.0 * t),
        };
        let c = t * t / 6.0;
        rho_err = rho_err.max((tukey_rho(x, t) - oracle(x, t)).abs() / c);
    }
    let t = 3.0;
    let continuity = (tukey_rho(t, t) - tukey_rho(t + 1e-12, t)).abs()
        + (tukey_rho(t - 1e-9, t) - t * t / 6.0).abs();

    let cam = camera();
    let loss = Loss::Tukey(3.0);
    let (mut jac_err, mut grad_err, mut lba_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let pose = random_pose(&mut rng);
        let mut corrs = visible_points(&mut rng, &pose, 30);
        for c in &mut corrs {
            // Residuals between 0.2 and 2 px: inside the threshold.
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            c.pixel += Vector2::new(a.cos(), a.sin()) * rng.random_range(0.2..2.0);
        }
        let c0 = corrs[0];
        let (_, j) = residual_jacobian(&pose, &c0.point, &cam).unwrap();
        for row in 0..2 {
            let analytic: Vec<f64> = (0..6).map(|k| j[(row, k)]).collect();
            let numeric = numeric_gradient(&pose, |p| project(&c0.point, p, &cam).unwrap()[row]);
            jac_err = jac_err.max(relative_error(&analytic, &numeric));
        }
        let g = robust_cost_gradient(&pose, &corrs, &cam, loss);
        let numeric = numeric_gradient(&pose, |p| robust_cost(p, &corrs, &cam, loss));
        grad_err = grad_err.max(relative_error(g.as_slice(), &numeric));

        // The adjustment's cost: pairs lifted to the world frame by fixed
        // reference poses.
        let lifted: Vec<Correspondence3D2D> = (0..3)
            .flat_map(|k| {
                let ref_to_world = random_pose(&mut rng);
                corrs[k * 10..(k + 1) * 10]
                    .iter()
                    .map(move |c| (ref_to_world, *c))
                    .collect::<Vec<_>>()
            })
            .map(|(ref_to_world, c)| {
                let in_ref = ref_to_world.inverse().transform(&c.point);
                Correspondence3D2D {
                    point: ref_to_world.transform(&in_ref),
                    ..c
                }
            })
            .collect();
        let g = robust_cost_gradient(&pose, &lifted, &cam, loss);
        let numeric = numeric_gradient(&pose, |p| robust_cost(p, &lifted, &cam, loss));
        lba_err = lba_err.max(relative_error(g.as_slice(), &numeric));
    }
    let pass = rho_err < 1e-12
        && continuity < 1e-12
        && jac_err < 1e-4
        && grad_err < 1e-4
        && lba_err < 1e-4;
    outcome(
        "robust-cost correctness",
        pass,
        format!(
            "rho vs closed form {rho_err:.1e} (1000 samples), continuity gap {continuity:.1e}; \
             relative Jacobian error: residual {jac_err:.1e}, refine {grad_err:.1e}, LBA {lba_err:.1e}"
        ),
    )
}

fn lba_pairs(rng: &mut ChaCha8Rng, query: &PoseSE3, k: usize, noise: f64) -> Vec<PairEstimate> {
    let cam = camera();
    let q_inv = query.inverse();
    (0..k)
        .map(|j| {
            let ref_to_world = PoseSE3::new(
                random_rotation(rng, 0.2),
                Vector3::new(
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let world_to_ref = ref_to_world.inverse();
            let correspondences = (0..50)
                .map(|_| {
                    let px =
                        Vector2::new(rng.random_range(0.0..511.0), rng.random_range(0.0..383.0));
                    let world = q_inv
                        .transform(&(cam.unproject(&px).normalize() * rng.random_range(5.0..30.0)));
                    let jitter = Vector2::new(
                        rng.random_range(-noise..=noise),
                        rng.random_range(-noise..=noise),
                    );
                    Correspondence3D2D {
                        point: world_to_ref.transform(&world),
                        pixel: px + jitter,
                        source_view: j,
                    }
                })
                .collect();
            // A rough starting estimate, as PnP would give on noisy data.
            let start = PoseSE3::new(
                Rotation3::from_euler_angles(0.01, -0.01, 0.02),
                Vector3::new(0.05, -0.05, 0.05),
            );
            PairEstimate {
                ref_to_world,
                correspondences,
                relative: Some(start.compose(&query.compose(&ref_to_world))),
                inliers: Vec::new(),
            }
        })
        .collect()
}

fn lba_consistency() -> Outcome {
    let cam = camera();
    let config = RobustConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (mut rot_err, mut trans_err, mut single_gap, mut increases, mut instances) =
        (0.0f64, 0.0f64, 0.0f64, 0, 0);
    for trial in 0..20 {
        let query = random_pose(&mut rng);
        let pairs = lba_pairs(&mut rng, &query, 3, 0.0);
        let r = local_bundle_adjust(&pairs, &cam, &config).unwrap();
        rot_err = rot_err.max(r.camera_from_world.rotation_distance(&query));
        trans_err = trans_err.max((r.camera_from_world.translation() - query.translation()).norm());

        // One pair: the adjustment is single-pair refinement in the world frame.
        let one = lba_pairs(&mut rng, &query, 1, 0.5);
        let lba = local_bundle_adjust(&one, &cam, &config).unwrap();
        let p = &one[0];
        let lifted: Vec<Correspondence3D2D> = p
            .correspondences
            .iter()
            .map(|c| Correspondence3D2D {
                point: p.ref_to_world.transform(&c.point),
                ..*c
            })
            .collect();
        let initial = p.relative.unwrap().compose(&p.ref_to_world.inverse());
        let (refined, _) = refine_pose(&initial, &lifted, &cam, &config).unwrap();
        let (a, b) = (&lba.camera_from_world, &refined);
        single_gap = single_gap
            .max((a.quaternion().coords - b.quaternion().coords).amax())
            .max((a.translation() - b.translation()).amax());

        let noisy = lba_pairs(&mut rng, &query, 2 + trial % 3, 1.0);
        for report in [
            &r.report,
            &lba.report,
            &local_bundle_adjust(&noisy, &cam, &config).unwrap().report,
        ] {
            instances += 1;
            increases += report.cost_trace.windows(2).filter(|w| w[1] > w[0]).count();
        }
    }
    outcome(
        "LBA consistency",
        rot_err < 1e-6 && trans_err < 1e-6 && single_gap == 0.0 && increases == 0,
        format!(
            "k=3 noise-free: rotation {rot_err:.1e} rad, translation {trans_err:.1e} m; k=1 vs refine_pose gap {single_gap:.1e}; \
             {increases} cost increases over {instances} instances"
        ),
    )
}

// ---------------------------------------------------------------- pipeline

fn run_pipeline(config: &PipelineConfig, seed: u64, dir: &Path) -> Result<(), String> {
    let ds = dir.join("dataset");
    generate_synthetic_street(&config.synthetic, seed, &ds).map_err(|e| e.to_string())?;
    cmd_prepare(&ds, config, &dir.join("store")).map_err(|e| e.to_string())?;
    cmd_build(&dir.join("store"), config, &dir.join("db")).map_err(|e| e.to_string())?;
    Ok(())
}

fn retrieval_acceleration(work: &Path) -> Outcome {
    let name = "retrieval acceleration";
    let mut config = PipelineConfig::default();
    config.synthetic.street_length = 290.0;
    config.synthetic.query.spacing = 2.9;
    let dir = work.join("retrieval");
    if let Err(e) = run_pipeline(&config, 21, &dir) {
        return outcome(name, false, e);
    }
    let (db, _, speedup) = load_database(&dir.join("db").join(DATABASE_FILE)).unwrap();
    let vocab = streetloc::cli::load_vocabulary(&dir.join("db"), &config).unwrap();
    let dataset = load_dataset(&dir.join("dataset")).unwrap();
    let start = std::time::Instant::now();
    let mut state = SearchState {
        last_hit: None,
        start_pano: Some(0),
    };
    let (mut agree, mut comparisons) = (0usize, 0usize);
    for j in 0..dataset.queries.len() {
        let img: GrayImage = dataset.load_query(j).unwrap();
        let bow = vocab
            .quantize(&extract_features(
                &equalize_histogram(&img),
                &config.features,
            ))
            .unwrap();
        let windowed =
            query_windowed(&db, &bow, &state, &speedup, config.retrieval.dist_max).unwrap();
        let full = query_full(&db, &bow);
        agree += usize::from(windowed.ranked[0].0 == full[0].0);
        comparisons += windowed.comparisons;
        state = windowed.state;
    }
    let secs = start.elapsed().as_secs_f64();
    let frames = dataset.queries.len();
    let share = comparisons as f64 / frames as f64 / db.len() as f64;
    outcome(
        name,
        db.pano_count() == 30 && db.len() == 240 && agree == frames && share <= 0.15 && secs < 60.0,
        format!(
            "{} views, {frames} frames: top-1 agreement {agree}/{frames}, mean comparisons {:.1}% of database, query loop {secs:.1} s",
            db.len(),
            100.0 * share
        ),
    )
}

fn end_to_end(work: &Path) -> Outcome {
    let name = "end-to-end synthetic localization";
    let config = PipelineConfig::default();
    let dir = work.join("street");
    let start = Instant::now();
    if let Err(e) = run_pipeline(&config, 31, &dir) {
        return outcome(name, false, e);
    }
    let records = match cmd_localize(
        &dir.join("dataset"),
        &dir.join("store"),
        &dir.join("db"),
        &config,
        false,
        &dir.join("run"),
    ) {
        Ok(r) => r,
        Err(e) => return outcome(name, false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let dataset = load_dataset(&dir.join("dataset")).unwrap();
    let truth = dataset
        .queries
        .iter()
        .map(|q| {
            (
                q.entry.frame_id.clone(),
                q.entry.ground_truth.as_ref().unwrap().geotag,
            )
        })
        .collect();
    let panos: Vec<GeoPoint> = dataset.panoramas.iter().map(|p| p.entry.geotag).collect();
    let report = evaluate(&records, &truth, &panos, &config.projection).unwrap();
    let (median, p95) = (
        report.median_error_m.unwrap_or(f64::INFINITY),
        report.p95_error_m.unwrap_or(f64::INFINITY),
    );
    outcome(
        name,
        dataset.panoramas.len() == 31
            && report.frames == 100
            && report.localization_rate >= 0.8
            && median <= 0.5
            && p95 <= 2.0
            && secs < 600.0,
        format!(
            "300 m street, {} frames: localized {:.0}%, median {median:.3} m, p95 {p95:.3} m, full pipeline {secs:.0} s",
            report.frames,
            100.0 * report.localization_rate
        ),
    )
}

fn rejection_gate(work: &Path) -> Outcome {
    let name = "rejection gate";
    let dir = work.join("street");
    if ViewStore::open(&dir.join("store")).is_err() {
        return outcome(name, false, "street database missing".into());
    }
    // Same generator, different facades: no visual overlap with the mapped street.
    let mut config = PipelineConfig::default();
    config.synthetic.texture_seed = 99;
    config.synthetic.street_length = 90.0;
    config.synthetic.query.count = 30;
    let control = work.join("control");
    if let Err(e) = generate_synthetic_street(&config.synthetic, 41, &control) {
        return outcome(name, false, e.to_string());
    }
    let config = PipelineConfig::default();
    let records = match cmd_localize(
        &control,
        &dir.join("store"),
        &dir.join("db"),
        &config,
        false,
        &work.join("ctl"),
    ) {
        Ok(r) => r,
        Err(e) => return outcome(name, false, e.to_string()),
    };
    let localized = records.iter().filter(|r| r.is_localized()).count();
    let with_reason = records.iter().filter(|r| r.rejection.is_some()).count();
    let low = records
        .iter()
        .filter(|r| r.rejection.as_deref() == Some("low similarity"))
        .count();
    outcome(
        name,
        localized == 0 && with_reason == records.len(),
        format!(
            "{} control frames: {localized} localized, {with_reason} with a reason ({low} \"low similarity\")",
            records.len()
        ),
    )
}

fn main() {
    // Positional arguments filter criteria by key (`cargo test --test
    // acceptance -- lba`). A filter meant for other targets (e.g. `cargo
    // test some_unit_test`) matches nothing here and skips the suite.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected = |key: &str| {
        args.is_empty()
            || args
                .iter()
                .any(|a| key.contains(a.as_str()) || "acceptance".contains(a.as_str()))
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .unwrap();
    let work = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("geometry", Box::new(geometry_round_trips)),
        ("geodesy", Box::new(geodetic_round_trip)),
        ("pnp", Box::new(pnp_exact_recovery)),
        ("robust", Box::new(robust_cost_correctness)),
        ("lba", Box::new(lba_consistency)),
        (
            "retrieval",
            Box::new(|| retrieval_acceleration(work.path())),
        ),
        ("e2e", Box::new(|| end_to_end(work.path()))),
        ("rejection", Box::new(|| rejection_gate(work.path()))),
    ];
    let criteria: Vec<_> = criteria
        .into_iter()
        .filter(|(key, _)| selected(key))
        .collect();
    if criteria.is_empty() {
        return;
    }
    let mut failed = 0;
    for (_, run) in &criteria {
        let t = Instant::now();
        let o = run();
        println!(
            "[{}] {}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

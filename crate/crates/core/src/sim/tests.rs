use super::*;
use crate::geometry::{column_to_bin, measure, world_to_sensor};

fn small_plan(seed: u64) -> SurveyPlan {
    SurveyPlan {
        n_lines: 3,
        line_length: 100.0,
        speed: 2.0,
        ping_rate: 2.0,
        n_bins: 64,
        landmarks: 150,
        submap_size: 40,
        plane_tolerance: 0.6,
        seed,
        ..Default::default()
    }
}

fn small_survey(seed: u64) -> Survey {
    let plan = small_plan(seed);
    generate_survey(&default_terrain(&plan), &plan).unwrap()
}

#[test]
fn zero_yaw_noise_gives_exact_dead_reckoning() {
    let plan = SurveyPlan {
        yaw_noise_density: 0.0,
        ..small_plan(1)
    };
    let s = generate_survey(&default_terrain(&plan), &plan).unwrap();
    assert_eq!(s.dr, s.gt);
}

#[test]
fn same_seed_same_survey() {
    assert_eq!(small_survey(4), small_survey(4));
    assert_ne!(small_survey(4).dr, small_survey(5).dr);
}

#[test]
fn trajectory_follows_the_lawnmower() {
    let s = small_survey(0);
    assert_eq!(s.n_lines(), 3);
    let dt = s.plan.dt();
    for w in s.gt.windows(2) {
        let step = (w[1].position - w[0].position).xy().norm();
        assert!((step - s.plan.speed * dt).abs() < 0.02, "step {step}");
    }
    let terrain = Terrain::new(s.terrain.clone()).unwrap();
    for (g, p) in s.gt.iter().zip(&s.pings) {
        let truth = g.position.z - terrain.height(g.position.x, g.position.y);
        assert!((truth - s.plan.altitude).abs() < 0.5);
        assert!((p.altimeter.unwrap() - truth).abs() < 0.3);
    }
    // Odd lines head west.
    let (first, _) = s.lines()[1];
    assert!((s.gt[first + 5].yaw().abs() - PI).abs() < 1e-6);
}

#[test]
fn yaw_error_variance_matches_noise_model() {
    let plan = SurveyPlan::default();
    let terrain = Terrain::new(TerrainSpec::flat(-30.0)).unwrap();
    let (_, gt, _) = ground_truth(&terrain, &plan);
    let steps = 2000;
    let dt = plan.dt();
    let seeds = 200;
    let var: f64 = (0..seeds)
        .map(|s| {
            let dr = dead_reckon(&gt[..=steps], plan.yaw_noise_density, dt, s);
            let e = (dr[steps].rotation * gt[steps].rotation.inverse()).euler_angles().2;
            e * e
        })
        .sum::<f64>()
        / seeds as f64;
    let expected = plan.yaw_noise_density.powi(2) * steps as f64 * dt * dt;
    assert!((var / expected - 1.0).abs() < 0.2, "var {var} vs {expected}");
}

#[test]
fn projection_matches_bin_arcs() {
    let terrain = Terrain::new(TerrainSpec::flat(-30.0)).unwrap();
    let plan = SurveyPlan::default();
    let geom = SonarGeometry::of(&plan);
    let pose = Pose::from_xyz_rpy(10.0, 5.0, -15.0, 0.0, 0.0, 0.7);
    // A point on the seafloor at the centre range of bin 100.
    let r = bin_center_range(100, plan.n_bins, plan.slant_range_max);
    let lateral = (r * r - 15.0 * 15.0).sqrt();
    for (side, sign) in [(Side::Port, 1.0), (Side::Starboard, -1.0)] {
        let l = pose.transform_point(&Vec3::new(0.0, sign * lateral, -15.0));
        assert_eq!(project_landmark_to_bin(&terrain, &pose, &l, &geom, &plan.render), Some((100, side)));
        let behind = pose.transform_point(&Vec3::new(-1.0, sign * lateral, -15.0));
        assert_eq!(project_landmark_to_bin(&terrain, &pose, &behind, &geom, &plan.render), None);
    }
    let far = pose.transform_point(&Vec3::new(0.0, 60.0, -15.0));
    assert_eq!(project_landmark_to_bin(&terrain, &pose, &far, &geom, &plan.render), None);
}

#[test]
fn projection_round_trips_through_measure() {
    let s = small_survey(2);
    let terrain = Terrain::new(s.terrain.clone()).unwrap();
    let geom = SonarGeometry::of(&s.plan);
    let mut hits = 0;
    for (k, l) in s.landmarks.iter().enumerate() {
        let pose = &s.gt[(k * 37) % s.gt.len()];
        // Slide the landmark into the ping plane.
        let mut p = pose.inverse_transform_point(l);
        p.x = 0.0;
        let l = pose.transform_point(&p);
        if let Some((bin, side)) = project_landmark_to_bin(&terrain, pose, &l, &geom, &s.plan.render) {
            let (r, _) = measure(&pose.inverse_transform_point(&l)).unwrap();
            let rb = bin_center_range(bin, geom.n_bins, geom.slant_range_max);
            assert!((r - rb).abs() <= geom.bin_width());
            assert_eq!(side, Side::of_lateral(p.y));
            hits += 1;
        }
    }
    assert!(hits > 5);
}

#[test]
fn associations_agree_with_true_ranges() {
    let s = small_survey(3);
    assert!(!s.associations.entries.is_empty());
    let w = s.plan.slant_range_max / s.plan.n_bins as f64;
    for e in &s.associations.entries {
        assert!(e.alpha_ping < e.beta_ping);
        let l = s.landmarks[e.landmark_id as usize];
        for (ping, col) in [(e.alpha_ping, e.alpha_bin), (e.beta_ping, e.beta_bin)] {
            let (side, bin) = column_to_bin(col, s.plan.n_bins);
            let p = world_to_sensor(&l, &Pose::identity(), &s.gt[ping], &Pose::identity());
            let rb = bin_center_range(bin, s.plan.n_bins, s.plan.slant_range_max);
            assert!((p.norm() - rb).abs() <= w);
            assert_eq!(side, Side::of_lateral(p.y));
        }
    }
}

#[test]
fn flat_floor_waterfalls_are_symmetric() {
    let plan = SurveyPlan {
        speckle_sigma: 0.0,
        ..small_plan(0)
    };
    let spec = TerrainSpec {
        boulder_count: 40,
        boulder_area: plan.area(),
        ..TerrainSpec::flat(-30.0)
    };
    let s = generate_survey(&spec, &plan).unwrap();
    for p in s.pings.iter().step_by(17) {
        let port: f64 = p.port_bins.iter().sum();
        let stbd: f64 = p.starboard_bins.iter().sum();
        assert!((port - stbd).abs() < 0.05 * port.max(stbd), "{port} vs {stbd}");
    }
}

#[test]
fn no_overlap_is_an_error() {
    let plan = SurveyPlan {
        n_lines: 1,
        line_length: 40.0,
        ..small_plan(0)
    };
    assert!(matches!(generate_survey(&default_terrain(&plan), &plan), Err(Error::NoOverlap)));
    let wide = SurveyPlan {
        line_spacing: 120.0,
        ..small_plan(0)
    };
    assert!(matches!(wide.validate(), Err(Error::Config(_))));
}

#[test]
fn survey_directory_round_trip() {
    let s = small_survey(6);
    let dir = tempfile::tempdir().unwrap();
    write_survey(dir.path(), &s).unwrap();
    for f in ["gt.csv", "dr.csv", "altimeter.csv", "waterfall_0.nrwf", "associations.csv", "terrain.grid"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = read_survey(dir.path()).unwrap();
    assert_eq!(back.line_of, s.line_of);
    assert_eq!(back.associations, s.associations);
    assert_eq!(back.times, s.times);
    for (a, b) in back.dr.iter().zip(&s.dr) {
        assert!((a.position - b.position).norm() < 1e-9);
        assert!((a.rotation.matrix() - b.rotation.matrix()).norm() < 1e-9);
    }
    for (a, b) in back.pings.iter().zip(&s.pings) {
        assert_eq!(a.altimeter, b.altimeter);
        for (x, y) in a.port_bins.iter().zip(&b.port_bins) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-30));
        }
    }
}

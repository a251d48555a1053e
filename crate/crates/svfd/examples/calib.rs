use svfd::geometry::*;
use svfd::network::Arch;
use svfd::training::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cloud_of(kind: &SynthShape, faces: usize, points: Option<usize>, seed: u64) -> WeightedPointCloud {
    let mesh = synth_shape(kind, faces).unwrap();
    let cloud = mesh_to_weighted_cloud(&mesh).unwrap();
    match points {
        Some(p) => { let idx = subsample(&cloud, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(); cloud.select(&idx).unwrap() }
        None => cloud,
    }
}

fn main() {
    let sphere = cloud_of(&SynthShape::Ellipsoid { semi_axes: [1.0; 3] }, 1280, Some(500), 1);
    let ellip_dense = cloud_of(&SynthShape::Ellipsoid { semi_axes: [1.2, 1.0, 0.8] }, 1280, None, 2);
    let (norm, _t) = normalize_to_unit_cube(&[sphere.clone(), ellip_dense.clone()]).unwrap();
    let src = norm[0].clone();
    let tpl = norm[1].clone();
    let joint = { let mut pts = src.points().to_vec(); pts.extend_from_slice(tpl.points()); WeightedPointCloud::uniform(pts, None).unwrap() };
    let thresh = 0.05 * joint.diameter();
    println!("threshold {:.4} (diam {:.3}), target {} pts", thresh, joint.diameter(), tpl.len());

    let archs = [
        ("mid_ne1", Arch { w_fa: 16, l_fa: 2, w_df: 32, l_df: 3, n_e: 1, negative_slope: 0.2, g_z: 2, n_z: 64 }),
        ("mid_ne2_w48", Arch { w_fa: 16, l_fa: 2, w_df: 48, l_df: 3, n_e: 2, negative_slope: 0.2, g_z: 2, n_z: 64 }),
    ];
    for (name, arch) in archs {
        for seed in [7u64, 21, 42, 99] {
            let cfg = TrainConfig { arch, epochs: 300, sample_points: 500, seed, ..TrainConfig::default() };
            let t0 = std::time::Instant::now();
            let out = train(std::slice::from_ref(&src), &tpl, &cfg).unwrap();
            let (d, i) = registration_diagnostics(&out.net, &out.codes[0], &src, &tpl, cfg.steps).unwrap();
            let worst = d.fld_max.max(d.bld_max).max(i.fld_max).max(i.bld_max);
            println!("{name} seed {seed}: {:?} loss300 {:.2e} | d({:.4},{:.4}) i({:.4},{:.4}) worst {:.4} {}",
                t0.elapsed(), out.history[299].total, d.fld_max, d.bld_max, i.fld_max, i.bld_max, worst,
                if worst < thresh { "PASS" } else { "FAIL" });
        }
    }
}

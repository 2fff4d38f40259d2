use super::*;
use crate::geometry::{slice_point_cloud, Normalization, OverflowPolicy, SliceConfig};
use proptest::prelude::*;
use std::f64::consts::PI;

// ── Oracles ──────────────────────────────────────────────────────────────

/// Tanh-sinh quadrature over (0, 1). The integrand receives both `x` and
/// `1 - x` (the latter computed without cancellation) so endpoint-singular
/// factors like `(1-x)^(-0.8)` stay accurate. Double-exponential node decay
/// makes such singularities integrable to near machine precision.
fn quad01(f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let steps = 6 * 64;
    let mut sum = 0.0;
    for k in -steps..=steps {
        let t = k as f64 * h;
        let w = FRAC_PI_2 * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * w).exp());
        let one_minus_x = 1.0 / (1.0 + (2.0 * w).exp());
        let sech = 1.0 / w.cosh();
        let dx = FRAC_PI_2 * t.cosh() * 0.5 * sech * sech;
        if dx > 0.0 && dx.is_finite() {
            sum += f(x, one_minus_x) * dx;
        }
    }
    sum * h
}

fn demo_spec() -> SyntheticBodySpec {
    SyntheticBodySpec {
        length: 4.2,
        nose_fraction: 0.22,
        tail_fraction: 0.33,
        half_width: 0.31,
        half_height: 0.27,
        taper_exponent: 0.9,
        section_exponent: 2.4,
        points: 512,
        seed: 77,
    }
}

#[test]
fn quadrature_integrates_smooth_and_singular_cases() {
    // x^2 -> 1/3; the endpoint-singular (1-x)^(-1/2) -> 2.
    assert!((quad01(|x, _| x * x) - 1.0 / 3.0).abs() < 1e-12);
    assert!((quad01(|_, omx| omx.powf(-0.5)) - 2.0).abs() < 1e-10);
}

#[test]
fn area_factor_matches_independent_quadrature() {
    // Quarter-area of the unit superellipse by direct integration of
    // z(y) = (1 - y^m)^(1/m); four of those must equal the gamma closed form.
    for m in [1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
        let quarter = quad01(|x, _| (1.0 - x.powf(m)).max(0.0).powf(1.0 / m));
        let factor = superellipse_area_factor(m);
        assert!(
            (factor - 4.0 * quarter).abs() <= 1e-9 * factor,
            "m={m}: closed form {factor}, quadrature {}",
            4.0 * quarter
        );
    }
}

#[test]
fn ellipse_area_recovers_pi_a_b() {
    // m = 2 is an ellipse with area pi*a*b.
    assert!((superellipse_area_factor(2.0) - PI).abs() < 1e-12);
    let (a, b) = (0.37, 0.29);
    let numeric = 4.0 * a * b * quad01(|x, _| (1.0 - x * x).max(0.0).sqrt());
    assert!((numeric - PI * a * b).abs() < 1e-6);
}

#[test]
fn taper_mean_matches_independent_quadrature() {
    // The label divides by (4p - 1) where an exact mean of (1-s)^(4p-2)
    // belongs; verify the closed form across singular and smooth exponents.
    for p in [0.3, 0.5, 0.6, 1.0, 1.7] {
        let mean = quad01(|_, omx| omx.powf(4.0 * p - 2.0));
        let closed = 1.0 / (4.0 * p - 1.0);
        assert!(
            (mean - closed).abs() <= 1e-9 * closed,
            "p={p}: closed {closed}, quadrature {mean}"
        );
    }
}

#[test]
fn area_slope_matches_finite_differences() {
    let spec = demo_spec();
    let factor = superellipse_area_factor(spec.section_exponent);
    let area = |u: f64| {
        let f = spec.profile(u);
        factor * (spec.half_width * f) * (spec.half_height * f)
    };
    let tail_start = 1.0 - spec.tail_fraction;
    let p = spec.taper_exponent;
    for frac in [0.1, 0.3, 0.5, 0.7] {
        let u = tail_start + frac * spec.tail_fraction;
        let s = frac;
        let h = 1e-6;
        let numeric = (area(u + h) - area(u - h)) / (2.0 * h);
        let analytic = -2.0 * p * factor * spec.half_width * spec.half_height
            * (1.0 - s).powf(2.0 * p - 1.0)
            / spec.tail_fraction;
        assert!(
            (numeric - analytic).abs() <= 1e-6 * analytic.abs(),
            "s={s}: numeric {numeric}, analytic {analytic}"
        );
    }
}

// ── Synthetic bodies ─────────────────────────────────────────────────────

#[test]
fn generation_is_a_pure_function_of_spec_and_seed() {
    let spec = demo_spec();
    let (cloud_a, cd_a) = generate_synthetic_body(&spec).unwrap();
    let (cloud_b, cd_b) = generate_synthetic_body(&spec).unwrap();
    assert_eq!(cloud_a.points(), cloud_b.points());
    assert_eq!(cd_a, cd_b);

    let reseeded = SyntheticBodySpec { seed: 78, ..spec };
    let (cloud_c, cd_c) = generate_synthetic_body(&reseeded).unwrap();
    assert_ne!(cloud_a.points(), cloud_c.points());
    // The label ignores the seed: it depends on shape parameters only.
    assert_eq!(cd_a, cd_c);
}

#[test]
fn generated_points_lie_on_the_declared_surface() {
    let spec = demo_spec();
    let (cloud, _) = generate_synthetic_body(&spec).unwrap();
    let m = spec.section_exponent;
    for p in cloud.points() {
        let u = p[0] / spec.length;
        assert!((0.0..1.0).contains(&u), "station {u} out of range");
        let f = spec.profile(u);
        let (a, b) = (spec.half_width * f, spec.half_height * f);
        if f > 1e-6 {
            let lhs = (p[1] / a).abs().powf(m) + (p[2] / b).abs().powf(m);
            assert!((lhs - 1.0).abs() < 1e-9, "off surface at u={u}: {lhs}");
        } else {
            assert!(p[1].abs() <= spec.half_width * f + 1e-12);
            assert!(p[2].abs() <= spec.half_height * f + 1e-12);
        }
    }
}

#[test]
fn stations_are_stratified_one_per_stratum() {
    let spec = demo_spec();
    let (cloud, _) = generate_synthetic_body(&spec).unwrap();
    let n = spec.points;
    let mut xs: Vec<f64> = cloud.points().iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert_eq!(xs.len(), n);
    for (j, x) in xs.iter().enumerate() {
        let pos = x / spec.length * n as f64;
        let stratum = pos.floor() as usize;
        // Allow one ulp of slack for the x = u * length round trip.
        assert!(
            stratum == j || (pos - j as f64).abs() < 1e-9,
            "point {j} landed in stratum {stratum}"
        );
    }
}

#[test]
fn label_increases_with_blunter_taper() {
    let base = demo_spec();
    let grid = [0.6, 0.8, 1.0, 1.25, 1.5, 2.0];
    let labels: Vec<f64> = grid
        .iter()
        .map(|&p| cd_proxy(&SyntheticBodySpec { taper_exponent: p, ..base.clone() }))
        .collect();
    for w in labels.windows(2) {
        assert!(w[1] > w[0], "labels not strictly increasing: {labels:?}");
    }
}

#[test]
fn invalid_specs_are_rejected_by_name() {
    let base = demo_spec();
    let cases = [
        (SyntheticBodySpec { length: 0.0, ..base.clone() }, "length"),
        (SyntheticBodySpec { nose_fraction: 0.0, ..base.clone() }, "nose_fraction"),
        (SyntheticBodySpec { tail_fraction: 1.0, ..base.clone() }, "tail_fraction"),
        (
            SyntheticBodySpec { nose_fraction: 0.6, tail_fraction: 0.5, ..base.clone() },
            "nose_fraction",
        ),
        (SyntheticBodySpec { half_width: -0.1, ..base.clone() }, "half_width"),
        (SyntheticBodySpec { taper_exponent: 0.25, ..base.clone() }, "taper_exponent"),
        (SyntheticBodySpec { section_exponent: 0.0, ..base.clone() }, "section_exponent"),
        (SyntheticBodySpec { points: 1, ..base.clone() }, "points"),
        (SyntheticBodySpec { length: f64::NAN, ..base.clone() }, "length"),
    ];
    for (spec, field) in cases {
        match generate_synthetic_body(&spec) {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, field),
            other => panic!("expected InvalidParameter for {field}, got {other:?}"),
        }
    }
}

#[test]
fn model_input_is_invariant_under_x_translation() {
    // The label is placement-free by construction (it never sees
    // coordinates). The model input matches: after per-car normalization a
    // rigidly shifted cloud produces the identical slice tensor. Exact
    // comparison needs exact arithmetic, so coordinates and the shift are
    // snapped to multiples of 2^-16.
    let snap = |v: f64| (v * 65536.0).round() / 65536.0;
    let (cloud, _) = generate_synthetic_body(&demo_spec()).unwrap();
    let snapped: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| [snap(p[0]), snap(p[1]), snap(p[2])])
        .collect();
    let shifted: Vec<[f64; 3]> = snapped.iter().map(|p| [p[0] + 0.5, p[1], p[2]]).collect();
    let a = PointCloud3D::new(snapped, "a").unwrap();
    let b = PointCloud3D::new(shifted, "b").unwrap();
    let config = SliceConfig {
        slice_count: 8,
        max_points: 512,
        overflow: OverflowPolicy::Strict,
        normalization: Normalization::PerCarCenterScale,
    };
    let ta = slice_point_cloud(&a, &config).unwrap();
    let tb = slice_point_cloud(&b, &config).unwrap();
    assert_eq!(ta.data, tb.data);
    assert_eq!(ta.mask, tb.mask);
    assert_eq!(ta.counts, tb.counts);
}

// ── Manifests ────────────────────────────────────────────────────────────

#[test]
fn split_tokens_round_trip() {
    for split in Split::ALL {
        assert_eq!(Split::parse(split.as_str()), Some(split));
    }
    assert_eq!(Split::parse("validation"), None);
}

#[test]
fn manifest_loads_well_formed_rows() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.pcld", "b.pcld", "c.pcld"] {
        std::fs::write(dir.path().join(name), b"").unwrap();
    }
    let text = "id,path,cd,split\n\
                car_a, a.pcld, 0.24, train\n\
                car_b,b.pcld,0.31,val\n\
                car_c,c.pcld,3.5e-1,test\n";
    let path = dir.path().join("manifest.csv");
    std::fs::write(&path, text).unwrap();
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.rows().len(), 3);
    let row = &manifest.rows()[0];
    assert_eq!(row.id, "car_a");
    assert_eq!(row.path, "a.pcld");
    assert_eq!(row.cd, 0.24);
    assert_eq!(row.split, Split::Train);
    assert_eq!(manifest.rows()[2].cd, 0.35);
    assert_eq!(manifest.split_rows(Split::Val).count(), 1);
    assert_eq!(manifest.resolve(row), dir.path().join("a.pcld"));
}

#[test]
fn manifest_rejects_duplicate_ids_by_name() {
    let text = "id,path,cd,split\nx,a.pcld,0.2,train\nx,b.pcld,0.3,val\n";
    match parse_manifest(text, Path::new(".")) {
        Err(Error::DuplicateId { id }) => assert_eq!(id, "x"),
        other => panic!("expected DuplicateId, got {other:?}"),
    }
}

#[test]
fn manifest_parse_failures_carry_line_numbers() {
    let bad_cd = "id,path,cd,split\na,a.pcld,0.2,train\nb,b.pcld,fast,train\n";
    match parse_manifest(bad_cd, Path::new(".")) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("fast"), "{message}");
        }
        other => panic!("expected Parse, got {other:?}"),
    }

    let bad_split = "id,path,cd,split\na,a.pcld,0.2,training\n";
    match parse_manifest(bad_split, Path::new(".")) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("training"), "{message}");
        }
        other => panic!("expected Parse, got {other:?}"),
    }

    let bad_header = "sample,file,label,part\na,a.pcld,0.2,train\n";
    match parse_manifest(bad_header, Path::new(".")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected Parse, got {other:?}"),
    }

    let missing_field = "id,path,cd,split\na,a.pcld,0.2\n";
    match parse_manifest(missing_field, Path::new(".")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected Parse, got {other:?}"),
    }

    let inf_cd = "id,path,cd,split\na,a.pcld,inf,train\n";
    match parse_manifest(inf_cd, Path::new(".")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected Parse, got {other:?}"),
    }
}

#[test]
fn manifest_load_requires_referenced_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    std::fs::write(&path, "id,path,cd,split\na,ghost.pcld,0.2,train\n").unwrap();
    match load_manifest(&path) {
        Err(Error::Io { path, .. }) => {
            assert!(path.ends_with("ghost.pcld"), "{}", path.display())
        }
        other => panic!("expected Io, got {other:?}"),
    }
}

#[test]
fn manifest_write_then_load_is_value_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("sub dir")).unwrap();
    let tricky = "sub dir/odd,name\".pcld";
    std::fs::write(dir.path().join(tricky), b"").unwrap();
    std::fs::write(dir.path().join("plain.pcld"), b"").unwrap();

    let rows = vec![
        ManifestRow { id: "a".into(), path: tricky.into(), cd: 0.1 + 0.2, split: Split::Train },
        ManifestRow { id: "b".into(), path: "plain.pcld".into(), cd: 6.5e-5, split: Split::Test },
    ];
    let manifest = Manifest::from_rows(rows, dir.path().to_path_buf()).unwrap();
    let out = dir.path().join("manifest.csv");
    write_manifest(&manifest, &out).unwrap();
    let back = load_manifest(&out).unwrap();
    assert_eq!(back.rows(), manifest.rows());
}

proptest! {
    #[test]
    fn manifest_csv_round_trip_preserves_rows(
        seeds in prop::collection::vec(
            (
                "[a-z0-9_-]{1,10}",
                // Fields are whitespace-trimmed on read, so round-trippable
                // paths must not start or end with a space.
                "[a-zA-Z0-9_./](([a-zA-Z0-9_./,'\" -]{0,16})[a-zA-Z0-9_./])?",
                prop_oneof![
                    -1e9..1e9f64,
                    any::<i32>().prop_map(|i| f64::from(i) / 1024.0),
                ],
                0usize..3,
            ),
            1..16,
        )
    ) {
        let rows: Vec<ManifestRow> = seeds
            .into_iter()
            .enumerate()
            .map(|(i, (id, path, cd, split))| ManifestRow {
                id: format!("{id}_{i}"),
                path,
                cd,
                split: Split::ALL[split],
            })
            .collect();
        let manifest = Manifest::from_rows(rows, PathBuf::from(".")).unwrap();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).unwrap();
        for row in manifest.rows() {
            w.write_record([
                row.id.as_str(),
                row.path.as_str(),
                &row.cd.to_string(),
                row.split.as_str(),
            ])
            .unwrap();
        }
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let back = parse_manifest(&text, Path::new(".")).unwrap();
        prop_assert_eq!(back.rows(), manifest.rows());
    }
}

// ── Dataset builder and stats ────────────────────────────────────────────

fn quick_ranges() -> SpecRanges {
    SpecRanges { points: 64, ..SpecRanges::default() }
}

#[test]
fn dataset_build_writes_clouds_sidecars_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_synthetic_dataset(20, &quick_ranges(), 123, dir.path()).unwrap();
    assert_eq!(manifest.rows().len(), 20);
    assert_eq!(manifest.split_rows(Split::Val).count(), 3);
    assert_eq!(manifest.split_rows(Split::Test).count(), 3);
    assert_eq!(manifest.split_rows(Split::Train).count(), 14);

    for row in manifest.rows() {
        let cloud = read_cloud_binary(&manifest.resolve(row)).unwrap();
        assert_eq!(cloud.points().len(), 64);
        let sidecar = dir.path().join(format!("{}.json", row.id));
        let text = std::fs::read_to_string(&sidecar).unwrap();
        let spec: SyntheticBodySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(cd_proxy(&spec), row.cd, "sidecar spec disagrees with label");
    }

    // Labels must actually vary, or the split-wise metrics are meaningless.
    let mean = manifest.rows().iter().map(|r| r.cd).sum::<f64>() / 20.0;
    let var = manifest.rows().iter().map(|r| (r.cd - mean).powi(2)).sum::<f64>() / 20.0;
    assert!(var > 0.0, "degenerate label distribution");

    let back = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(back.rows(), manifest.rows());
}

#[test]
fn dataset_split_sizes_follow_the_floor_rule() {
    let dir = tempfile::tempdir().unwrap();
    let ranges = SpecRanges { points: 16, ..SpecRanges::default() };
    let manifest = build_synthetic_dataset(100, &ranges, 9, dir.path()).unwrap();
    assert_eq!(manifest.split_rows(Split::Train).count(), 70);
    assert_eq!(manifest.split_rows(Split::Val).count(), 15);
    assert_eq!(manifest.split_rows(Split::Test).count(), 15);
}

#[test]
fn dataset_build_is_deterministic_per_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = build_synthetic_dataset(8, &quick_ranges(), 42, dir_a.path()).unwrap();
    let b = build_synthetic_dataset(8, &quick_ranges(), 42, dir_b.path()).unwrap();
    assert_eq!(a.rows(), b.rows());
    let bytes_a = std::fs::read(dir_a.path().join("body_0003.pcld")).unwrap();
    let bytes_b = std::fs::read(dir_b.path().join("body_0003.pcld")).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let dir_c = tempfile::tempdir().unwrap();
    let c = build_synthetic_dataset(8, &quick_ranges(), 43, dir_c.path()).unwrap();
    assert_ne!(a.rows(), c.rows());
}

#[test]
fn dataset_build_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    match build_synthetic_dataset(2, &quick_ranges(), 1, dir.path()) {
        Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "n_bodies"),
        other => panic!("expected InvalidParameter, got {other:?}"),
    }
    let backwards = SpecRanges { half_width: [0.4, 0.3], ..quick_ranges() };
    match build_synthetic_dataset(10, &backwards, 1, dir.path()) {
        Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "half_width"),
        other => panic!("expected InvalidParameter, got {other:?}"),
    }
}

#[test]
fn dataset_stats_summarize_by_split_and_delegate_occupancy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_synthetic_dataset(20, &quick_ranges(), 123, dir.path()).unwrap();
    let stats = dataset_stats(&manifest, 8).unwrap();
    assert_eq!(stats.slice_count, 8);
    assert_eq!(stats.train.count, 14);
    assert_eq!(stats.val.count, 3);
    assert_eq!(stats.test.count, 3);

    let train_cds: Vec<f64> = manifest.split_rows(Split::Train).map(|r| r.cd).collect();
    let lo = train_cds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = train_cds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = train_cds.iter().sum::<f64>() / train_cds.len() as f64;
    assert_eq!(stats.train.cd_min, Some(lo));
    assert_eq!(stats.train.cd_max, Some(hi));
    assert_eq!(stats.train.cd_mean, Some(mean));

    let clouds: Vec<PointCloud3D> = manifest
        .rows()
        .iter()
        .map(|r| read_cloud_binary(&manifest.resolve(r)).unwrap())
        .collect();
    assert_eq!(stats.max_points_per_slice, scan_max_points(&clouds, 8).unwrap());
}

#[test]
fn dataset_stats_handle_empty_splits() {
    // n = 3 floors both val and test to zero rows.
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_synthetic_dataset(3, &quick_ranges(), 7, dir.path()).unwrap();
    let stats = dataset_stats(&manifest, 4).unwrap();
    assert_eq!(stats.train.count, 3);
    assert_eq!(stats.val.count, 0);
    assert_eq!(stats.val.cd_min, None);
    assert_eq!(stats.val.cd_mean, None);
    assert_eq!(stats.test.count, 0);

    let empty = Manifest::from_rows(Vec::new(), dir.path().to_path_buf()).unwrap();
    match dataset_stats(&empty, 4) {
        Err(Error::EmptyInput(what)) => assert_eq!(what, "manifest"),
        other => panic!("expected EmptyInput, got {other:?}"),
    }
}

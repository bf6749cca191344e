use std::fs;

use dmn_core::data::{
    generate_dataset, generate_example, load_dataset, object_mask, read_manifest, render, resolve, write_dataset, Color,
    Query, SceneObject, SceneSpec, ShapeKind, Side, MANIFEST,
};
use dmn_core::DmnError;

fn obj(shape: ShapeKind, color: Color, cx: f64, cy: f64, radius: f64) -> SceneObject {
    SceneObject {
        shape,
        color,
        cx,
        cy,
        radius,
    }
}

#[test]
fn colour_disambiguates_two_circles() {
    let spec = SceneSpec::for_size(32, 32);
    let objects = [
        obj(ShapeKind::Circle, Color::Red, 8.0, 8.0, 5.0),
        obj(ShapeKind::Circle, Color::Blue, 22.0, 20.0, 6.0),
    ];
    let q = Query::parse("red circle").unwrap();
    assert_eq!(resolve(&q, &objects, &spec), vec![0]);

    let img = render(&objects, 32, 32);
    let mask = object_mask(&objects[0], 32, 32);
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(mask.get(y, x), img.pixel(y, x) == Color::Red.rgb());
        }
    }
}

#[test]
fn side_means_image_half() {
    let spec = SceneSpec::for_size(32, 32);
    let objects = [
        obj(ShapeKind::Square, Color::Red, 24.0, 10.0, 5.0),
        obj(ShapeKind::Square, Color::Red, 7.0, 20.0, 5.0),
        obj(ShapeKind::Circle, Color::Red, 2.0, 3.0, 1.5),
    ];
    let q = Query::parse("red square on the left").unwrap();
    assert_eq!(resolve(&q, &objects, &spec), vec![1]);
    let q = Query::parse("red square on the top").unwrap();
    assert_eq!(resolve(&q, &objects, &spec), vec![0]);
    assert_eq!(resolve(&Query::parse("red square").unwrap(), &objects, &spec).len(), 2);

    // Centres within the margin of the midline are on neither side.
    let close = [
        obj(ShapeKind::Square, Color::Red, 14.5, 8.0, 4.0),
        obj(ShapeKind::Square, Color::Red, 23.0, 22.0, 4.0),
    ];
    assert!(resolve(&q_left(), &close, &spec).is_empty());
}

fn q_left() -> Query {
    Query {
        color: None,
        shape: ShapeKind::Square,
        side: Some(Side::Left),
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = SceneSpec::for_size(32, 32);
    let a = generate_example(77, &spec).unwrap();
    let b = generate_example(77, &spec).unwrap();
    assert_eq!(a, b);
    let c = generate_example(78, &spec).unwrap();
    assert_ne!(a, c);
}

#[test]
fn every_generated_query_has_one_referent() {
    let spec = SceneSpec::for_size(32, 32);
    let examples = generate_dataset(5, 300, &spec).unwrap();
    let mut forms = std::collections::BTreeSet::new();
    for ex in &examples {
        let q = Query::parse(&ex.query).expect("grammar");
        forms.insert((q.color.is_some(), q.side.is_some()));
        let hits = resolve(&q, &ex.objects, &spec);
        assert_eq!(hits.len(), 1, "{}", ex.query);
        let target = &ex.objects[hits[0]];
        assert_eq!(ex.mask, object_mask(target, 32, 32));
        assert!(ex.mask.count() > 0);
        assert!((2..=4).contains(&ex.objects.len()));
        for o in &ex.objects {
            assert!(o.cx - o.radius >= 0.0 && o.cx + o.radius <= 32.0);
            assert!(o.cy - o.radius >= 0.0 && o.cy + o.radius <= 32.0);
        }
        // No pixel belongs to two objects.
        for y in 0..32 {
            for x in 0..32 {
                assert!(ex.objects.iter().filter(|o| o.covers(y, x)).count() <= 1);
            }
        }
        // Mask area equals the rendered area of the referent's colour inside its box.
        let painted = (0..32)
            .flat_map(|y| (0..32).map(move |x| (y, x)))
            .filter(|&(y, x)| target.covers(y, x) && ex.image.pixel(y, x) == target.color.rgb())
            .count();
        assert_eq!(painted, ex.mask.count());
    }
    assert_eq!(forms.len(), 3, "all three query forms appear");
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::for_size(16, 24);
    let examples = generate_dataset(9, 10, &spec).unwrap();
    write_dataset(&examples, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 10);
    for (a, b) in examples.iter().zip(&loaded) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.query, b.query);
        assert_eq!(a.mask, b.mask);
    }
    let first = fs::read(dir.path().join("images/00000.ppm")).unwrap();
    assert!(first.starts_with(b"P6\n24 16\n255\n"));
    let mask = fs::read(dir.path().join("masks/00000.pgm")).unwrap();
    assert!(mask[mask.len() - 16 * 24..].iter().all(|&v| v == 0 || v == 255));

    // Writing the loaded set again yields identical files.
    let again = tempfile::tempdir().unwrap();
    write_dataset(&loaded, again.path()).unwrap();
    for name in [MANIFEST, "images/00003.ppm", "masks/00007.pgm"] {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(again.path().join(name)).unwrap());
    }
}

#[test]
fn manifest_order_is_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let examples = generate_dataset(3, 3, &SceneSpec::for_size(16, 16)).unwrap();
    write_dataset(&examples, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert_eq!(text.lines().count(), 3);
    let records = read_manifest(dir.path()).unwrap();
    let queries: Vec<&str> = records.iter().map(|r| r.query.as_str()).collect();
    let expected: Vec<&str> = examples.iter().map(|e| e.query.as_str()).collect();
    assert_eq!(queries, expected);
}

#[test]
fn empty_image_file_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let examples = generate_dataset(3, 2, &SceneSpec::for_size(16, 16)).unwrap();
    write_dataset(&examples, dir.path()).unwrap();
    let bad = dir.path().join("images/00001.ppm");
    fs::write(&bad, b"").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains(&bad.display().to_string()), "{err}");
}

#[test]
fn missing_file_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let examples = generate_dataset(3, 2, &SceneSpec::for_size(16, 16)).unwrap();
    write_dataset(&examples, dir.path()).unwrap();
    let gone = dir.path().join("masks/00000.pgm");
    fs::remove_file(&gone).unwrap();
    match load_dataset(dir.path()).unwrap_err() {
        DmnError::Io { path, .. } => assert_eq!(path, gone),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn malformed_manifest_line_is_numbered() {
    let dir = tempfile::tempdir().unwrap();
    let examples = generate_dataset(3, 2, &SceneSpec::for_size(16, 16)).unwrap();
    write_dataset(&examples, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"image\": \"images/00000.ppm\"}\n");
    fs::write(&path, text).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 3"), "{err}");
}

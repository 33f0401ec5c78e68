use image::{GrayImage, Luma, Rgb, RgbImage};
use wavecomm::dataset::{load_dataset, read_manifest, LoadOptions};

#[test]
fn directory_images_are_resized_and_sorted() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, w, h) in [("c.png", 40, 30), ("a.png", 100, 80), ("b.png", 64, 64)] {
        GrayImage::from_fn(w, h, |x, y| Luma([((x + y) % 256) as u8]))
            .save(tmp.path().join(name))
            .unwrap();
    }
    let ds = load_dataset::<f64>(
        tmp.path(),
        &LoadOptions {
            target_size: (64, 64),
            ..Default::default()
        },
    )
    .unwrap();
    let ids: Vec<&str> = ds.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    for r in &ds.records {
        assert_eq!(r.pixels().shape(), (64, 64));
    }
    assert!(ds.report.failures.is_empty());
}

#[test]
fn grayscale_at_target_size_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let img = GrayImage::from_fn(16, 12, |x, y| Luma([(x * 13 + y * 7) as u8]));
    img.save(tmp.path().join("g.png")).unwrap();
    let ds = load_dataset::<f64>(
        tmp.path(),
        &LoadOptions {
            target_size: (12, 16),
            ..Default::default()
        },
    )
    .unwrap();
    let m = ds.records[0].pixels();
    for y in 0..12 {
        for x in 0..16 {
            assert_eq!(m[(y as usize, x as usize)], img.get_pixel(x, y).0[0] as f64);
        }
    }
}

#[test]
fn rgb_is_converted_with_luma_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let px = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 200, 90]];
    let img = RgbImage::from_fn(2, 2, |x, y| Rgb(px[(y * 2 + x) as usize]));
    img.save(tmp.path().join("rgb.png")).unwrap();
    let ds = load_dataset::<f64>(
        tmp.path(),
        &LoadOptions {
            target_size: (2, 2),
            ..Default::default()
        },
    )
    .unwrap();
    let m = ds.records[0].pixels();
    for (k, p) in px.iter().enumerate() {
        let expected = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        assert!((m[(k / 2, k % 2)] - expected).abs() <= 0.5, "pixel {k}");
    }
}

#[test]
fn unreadable_files_are_reported_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    GrayImage::new(8, 8).save(tmp.path().join("ok.png")).unwrap();
    std::fs::write(tmp.path().join("broken.png"), b"not a png").unwrap();
    let ds = load_dataset::<f64>(
        tmp.path(),
        &LoadOptions {
            target_size: (8, 8),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(ds.records.len(), 1);
    assert_eq!(ds.report.failures.len(), 1);
}

#[test]
fn manifest_paths_resolve_relative_to_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("img")).unwrap();
    GrayImage::new(4, 4).save(tmp.path().join("img/x.png")).unwrap();
    std::fs::write(tmp.path().join("m.csv"), "id,path,label\nx,img/x.png,pos\n").unwrap();
    let entries = read_manifest(&tmp.path().join("m.csv")).unwrap();
    assert_eq!(entries[0].path, tmp.path().join("img/x.png"));
    assert_eq!(entries[0].label.as_deref(), Some("pos"));
}

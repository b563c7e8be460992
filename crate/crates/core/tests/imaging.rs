use lanet::imaging::rgbe::{decode, encode};
use lanet::imaging::synthetic::{write_hdr_set, write_lowlight_pairs};
use lanet::imaging::{
    augment_hdr, iterate_pairs, load_hdr, load_ldr, resize, save_hdr, save_png, DatasetSpec, PairedDataset, Task,
};
use lanet::{ImagePlane, PlaneKind};
use proptest::prelude::*;

fn write_gray_png(path: &std::path::Path, w: u32, h: u32, v: u8) {
    image::GrayImage::from_pixel(w, h, image::Luma([v])).save(path).unwrap();
}

#[test]
fn png_scaling_examples() {
    let dir = tempfile::tempdir().unwrap();
    for (v, want) in [(255u8, 1.0), (0, 0.0), (128, 128.0 / 255.0)] {
        let p = dir.path().join(format!("{v}.png"));
        write_gray_png(&p, 2, 2, v);
        let img = load_ldr(&p).unwrap();
        assert_eq!(img.dims(), (2, 2, 3), "grayscale replicated to three channels");
        assert!(img.data().iter().all(|&x| x == want));
    }
    assert!((128.0f64 / 255.0 - 0.50196).abs() < 1e-5);
}

#[test]
fn sixteen_bit_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    image::ImageBuffer::<image::Rgb<u16>, _>::from_pixel(2, 2, image::Rgb([1000u16, 2, 3]))
        .save(&p)
        .unwrap();
    assert!(load_ldr(&p).is_err());
    assert!(load_ldr(dir.path().join("missing.png")).is_err());
}

#[test]
fn png_save_load_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImagePlane::from_fn(7, 5, 3, |y, x, c| ((y * 31 + x * 17 + c * 7) % 97) as f64 / 96.0, PlaneKind::Ldr);
    let a = dir.path().join("a.png");
    save_png(&img, &a).unwrap();
    let once = load_ldr(&a).unwrap();
    for (x, y) in img.data().iter().zip(once.data()) {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
    }
    let b = dir.path().join("b.png");
    save_png(&once, &b).unwrap();
    assert_eq!(load_ldr(&b).unwrap(), once);
}

/// Minimal reference reader: header, then flat quadruples or new-style RLE
/// scanlines, each channel decoded as `m / 256 · 2^(e − 128)`.
fn reference_decode(bytes: &[u8]) -> (usize, usize, Vec<f64>) {
    let mut i = 0;
    let mut lines = Vec::new();
    loop {
        let end = i + bytes[i..].iter().position(|&b| b == b'\n').unwrap();
        lines.push(String::from_utf8(bytes[i..end].to_vec()).unwrap());
        i = end + 1;
        if lines.last().unwrap().starts_with("-Y") {
            break;
        }
    }
    let dims: Vec<usize> = lines.last().unwrap().split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let (h, w) = (dims[0], dims[1]);
    let mut quads = Vec::with_capacity(h * w);
    for _ in 0..h {
        if bytes[i] == 2 && bytes[i + 1] == 2 && bytes[i + 2] & 0x80 == 0 {
            i += 4;
            let mut chans = vec![Vec::with_capacity(w); 4];
            for ch in chans.iter_mut() {
                while ch.len() < w {
                    let n = bytes[i] as usize;
                    if n > 128 {
                        ch.extend(std::iter::repeat(bytes[i + 1]).take(n - 128));
                        i += 2;
                    } else {
                        ch.extend_from_slice(&bytes[i + 1..i + 1 + n]);
                        i += 1 + n;
                    }
                }
            }
            quads.extend((0..w).map(|x| [chans[0][x], chans[1][x], chans[2][x], chans[3][x]]));
        } else {
            quads.extend(bytes[i..i + 4 * w].chunks(4).map(|q| [q[0], q[1], q[2], q[3]]));
            i += 4 * w;
        }
    }
    let data = quads
        .iter()
        .flat_map(|q| {
            let scale = if q[3] == 0 { 0.0 } else { 2f64.powi(q[3] as i32 - 128) / 256.0 };
            [q[0] as f64 * scale, q[1] as f64 * scale, q[2] as f64 * scale]
        })
        .collect();
    (h, w, data)
}

#[test]
fn rgbe_hand_decoded_pixel() {
    let mut file = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 1 +X 2\n".to_vec();
    file.extend_from_slice(&[128, 128, 128, 129, 200, 10, 0, 0]);
    let img = decode(&file).unwrap();
    assert_eq!(&img.data()[..3], &[1.0, 1.0, 1.0]);
    assert_eq!(&img.data()[3..], &[0.0, 0.0, 0.0]);
    assert_eq!(reference_decode(&file).2, img.data());
}

fn radiance_plane(h: usize, w: usize) -> impl Strategy<Value = ImagePlane> {
    prop::collection::vec((-12.0f64..12.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), h * w).prop_map(move |px| {
        let data = px
            .into_iter()
            .flat_map(|(e, r, g, b)| {
                let s = 2f64.powf(e);
                // Sprinkle exact zeros and runs of equal pixels.
                if r < 0.1 {
                    [0.0; 3]
                } else {
                    [r * s, g * s, b * s]
                }
            })
            .collect();
        ImagePlane::new(h, w, 3, data, PlaneKind::Hdr).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rgbe_round_trip_within_quantisation(img in (1usize..6, 1usize..40).prop_flat_map(|(h, w)| radiance_plane(h, w))) {
        let bytes = encode(&img).unwrap();
        let back = decode(&bytes).unwrap();
        let (h, w, reference) = reference_decode(&bytes);
        prop_assert_eq!((h, w), (img.height(), img.width()));
        prop_assert_eq!(back.data(), &reference[..]);
        for (px, qx) in img.data().chunks(3).zip(back.data().chunks(3)) {
            let m = px.iter().cloned().fold(0.0, f64::max);
            for (a, b) in px.iter().zip(qx) {
                // One mantissa step at the shared exponent.
                prop_assert!((a - b).abs() <= m / 128.0 + 1e-300, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn resize_never_overshoots(
        data in prop::collection::vec(0.0f64..1.0, 5 * 7 * 3),
        h in 1usize..20,
        w in 1usize..20,
    ) {
        let img = ImagePlane::new(5, 7, 3, data, PlaneKind::Ldr).unwrap();
        let out = resize(&img, h, w).unwrap();
        prop_assert!(out.min() >= img.min() - 1e-12 && out.max() <= img.max() + 1e-12);
    }

    #[test]
    fn augmented_max_is_exactly_one(
        data in prop::collection::vec(0.0f64..50.0, 4 * 4 * 3),
        beta in 0.7f64..2.0,
    ) {
        let img = ImagePlane::new(4, 4, 3, data, PlaneKind::Hdr).unwrap();
        prop_assume!(img.max() > 0.0);
        prop_assert_eq!(augment_hdr(&img, beta).unwrap().max(), 1.0);
    }
}

#[test]
fn hdr_file_round_trip_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImagePlane::from_fn(9, 12, 3, |y, x, c| (y * 12 + x) as f64 * 0.37 + c as f64, PlaneKind::Hdr);
    let p = dir.path().join("x.hdr");
    save_hdr(&img, &p).unwrap();
    let back = load_hdr(&p).unwrap();
    assert_eq!(back.kind(), PlaneKind::Hdr);
    assert_eq!(back.dims(), img.dims());
    std::fs::write(dir.path().join("bad.hdr"), b"#?RADIANCE\n-Y 4 +X 4\n\x02\x02").unwrap();
    assert!(load_hdr(dir.path().join("bad.hdr")).is_err());
}

#[test]
fn batching_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_lowlight_pairs(dir.path(), 5, 8, 8, 0.0, 1).unwrap();
    let sizes: Vec<usize> = iterate_pairs(&spec, 2, false, 0).unwrap().iter().map(Vec::len).collect();
    assert_eq!(sizes, [2, 2, 1]);
    let names = |shuffle, seed| -> Vec<String> {
        iterate_pairs(&spec, 2, shuffle, seed)
            .unwrap()
            .into_iter()
            .flatten()
            .map(|s| s.name)
            .collect()
    };
    assert_eq!(names(false, 0), names(false, 9));
    assert_eq!(names(true, 3), names(true, 3));
    let mut all = names(true, 3);
    all.sort();
    assert_eq!(all, names(false, 0), "one epoch covers each pair once");
}

#[test]
fn tone_mapping_augmentation_bounds_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = write_hdr_set(dir.path(), 4, 16, 16, 2).unwrap();
    spec.augmentation = Some((0.7, 2.0));
    let ds = PairedDataset::open(&spec).unwrap();
    for epoch in 0..3 {
        for batch in ds.epoch(epoch, 3, true, 11) {
            for s in batch.unwrap() {
                assert!(s.input.max() <= 1.0);
                assert_eq!(s.input.max(), 1.0);
            }
        }
    }
}

#[test]
fn pairing_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("input")).unwrap();
    std::fs::create_dir_all(dir.path().join("target")).unwrap();
    write_gray_png(&dir.path().join("input/a.png"), 8, 8, 10);
    write_gray_png(&dir.path().join("target/b.png"), 8, 8, 10);
    let spec = DatasetSpec::from_root(dir.path(), Task::Lle);
    assert!(PairedDataset::open(&spec).is_err(), "empty filename intersection");
    let missing = DatasetSpec::from_root(dir.path().join("nope"), Task::Lle);
    assert!(PairedDataset::open(&missing).is_err());
}

use dair_core::data::{
    encode_idx, gen_multi_mnist, gen_multi_sprites, parse_idx, read_dataset, write_dataset, Dataset, DigitSource,
    IdxArray, MnistConfig, SpritesConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sprite_records_respect_the_scene_law() {
    let d = gen_multi_sprites(10_000, &SpritesConfig::default(), 21).unwrap();
    let mut per_category = [0usize; 3];
    let mut objects = 0usize;
    for r in &d.records {
        assert!(r.objects.len() <= 3);
        assert_eq!(r.image.len(), 64 * 64);
        for o in &r.objects {
            per_category[o.category as usize] += 1;
            assert!((0.0..=63.0).contains(&o.center_x) && (0.0..=63.0).contains(&o.center_y));
            assert!((0.2..=0.45).contains(&o.scale));
        }
        objects += r.objects.len();
    }
    let mean = objects as f64 / d.len() as f64;
    assert!((mean - 1.5).abs() <= 0.05, "mean count {mean}");
    for c in per_category {
        let f = c as f64 / objects as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "category frequency {f}");
    }
}

#[test]
fn generation_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SpritesConfig::default();
    let a = gen_multi_sprites(50, &cfg, 4).unwrap();
    assert_eq!(a, gen_multi_sprites(50, &cfg, 4).unwrap());
    assert_ne!(a, gen_multi_sprites(50, &cfg, 5).unwrap());
    let path = dir.path().join("a.dair");
    write_dataset(&a, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, a);
    write_dataset(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

/// Digits whose pixels encode their own index, with a skewed label law.
fn synthetic_source(n: usize, seed: u64) -> (DigitSource, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = [5.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 4.0, 1.0];
    let total: f64 = weights.iter().sum();
    let labels: Vec<u8> = (0..n)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            let mut l = 0;
            while u >= weights[l] {
                u -= weights[l];
                l += 1;
            }
            l as u8
        })
        .collect();
    let mut law = vec![0.0; 10];
    for &l in &labels {
        law[l as usize] += 1.0 / n as f64;
    }
    let images: Vec<u8> = (0..n * 28 * 28)
        .map(|i| {
            let (d, p) = (i / 784, i % 784);
            if p < 2 {
                (d >> (8 * p)) as u8 | 1
            } else {
                rng.random_range(0..=255)
            }
        })
        .collect();
    let source = DigitSource::new(
        IdxArray {
            shape: vec![n, 28, 28],
            data: images,
        },
        IdxArray {
            shape: vec![n],
            data: labels,
        },
    )
    .unwrap();
    (source, law)
}

#[test]
fn single_digits_are_copied_exactly() {
    let (source, _) = synthetic_source(300, 1);
    let d = gen_multi_mnist(400, &source, &MnistConfig::default(), 2).unwrap();
    let mut checked = 0;
    for r in d.records.iter().filter(|r| r.objects.len() == 1) {
        let o = r.objects[0];
        let (left, top) = ((o.center_x - 13.5) as usize, (o.center_y - 13.5) as usize);
        assert_eq!(o.center_x - 13.5, left as f32);
        let patch: Vec<u8> = (0..28).flat_map(|row| r.image[(top + row) * 50 + left..][..28].to_vec()).collect();
        let found = (0..source.len()).any(|i| source.digit(i) == patch.as_slice() && source.labels[i] == o.category);
        assert!(found, "placed patch is not a source digit of class {}", o.category);
        let outside: u32 = r.image.iter().map(|&v| v as u32).sum::<u32>() - patch.iter().map(|&v| v as u32).sum::<u32>();
        assert_eq!(outside, 0);
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn digit_classes_follow_the_source_law() {
    let (source, law) = synthetic_source(2000, 3);
    let d = gen_multi_mnist(10_000, &source, &MnistConfig::default(), 4).unwrap();
    let mut counts = [0usize; 10];
    let mut total = 0usize;
    for r in &d.records {
        assert!(r.objects.len() <= 2);
        assert_eq!(r.image.len(), 2500);
        for o in &r.objects {
            counts[o.category as usize] += 1;
            total += 1;
        }
    }
    for (c, p) in counts.iter().zip(&law) {
        assert!((*c as f64 / total as f64 - p).abs() <= 0.02);
    }
    assert_eq!(d.header.num_categories, 10);
}

#[test]
fn idx_streams_parse_and_reject_damage() {
    let images = IdxArray {
        shape: vec![10, 28, 28],
        data: (0..7840).map(|i| (i % 251) as u8).collect(),
    };
    let bytes = encode_idx(&images);
    assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    assert_eq!(parse_idx(&bytes).unwrap(), images);
    let labels = IdxArray {
        shape: vec![10],
        data: (0..10).collect(),
    };
    assert_eq!(parse_idx(&encode_idx(&labels)).unwrap().shape, vec![10]);
    assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[2] = 0x0d;
    assert!(parse_idx(&bad).is_err());
    // label count disagreeing with image count
    let short = IdxArray {
        shape: vec![9],
        data: vec![0; 9],
    };
    assert!(DigitSource::new(images, short).is_err());
}

#[test]
fn empty_container_is_header_only() {
    let d = Dataset {
        header: dair_core::data::DatasetHeader::new(0, 64, 64, 3, 3),
        records: vec![],
    };
    assert_eq!(d.to_bytes().unwrap().len(), 28);
}

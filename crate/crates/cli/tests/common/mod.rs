//! Small on-disk dataset with real PNG images.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use longtail_core::raster::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHOT_THRESHOLD: usize = 3;

/// `(class, x, y, w, h)`.
type Box = (u32, f64, f64, f64, f64);

/// Boxes per image id; images 7 and 8 are unannotated.
const LAYOUT: &[(u64, &[Box])] = &[
    (1, &[(1, 2.0, 3.0, 12.0, 10.0), (1, 20.0, 15.0, 9.0, 14.0)]),
    (2, &[(1, 5.0, 5.0, 20.0, 18.0)]),
    (3, &[(1, 30.0, 2.0, 15.0, 12.0)]),
    (4, &[(2, 10.0, 12.0, 14.0, 11.5)]),
    (5, &[(3, 4.0, 20.0, 8.0, 9.0), (1, 25.0, 4.0, 16.0, 16.0)]),
    (6, &[(2, 18.0, 6.0, 10.0, 10.0)]),
    (7, &[]),
    (8, &[]),
];

pub const WIDTH: usize = 48;
pub const HEIGHT: usize = 40;

/// Writes `images/*.png` and `annotations.json` under `root`; returns the
/// annotation path and the image directory.
pub fn write_dataset(root: &Path) -> (PathBuf, PathBuf) {
    let images = root.join("images");
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut records = Vec::new();
    let mut anns = Vec::new();
    let mut next_ann = 1;
    for &(id, boxes) in LAYOUT {
        let base: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let mut img = Raster::filled(WIDTH, HEIGHT, base).unwrap();
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                for (c, &b) in base.iter().enumerate() {
                    let v = b as usize + (x * (c + 1) + y * (3 - c)) % 64;
                    img.set(x, y, c, (v % 256) as u8);
                }
            }
        }
        let name = format!("img_{id:03}.png");
        img.save(images.join(&name)).unwrap();
        records.push(
            serde_json::json!({"id": id, "width": WIDTH, "height": HEIGHT, "file_name": name}),
        );
        for &(class, x, y, w, h) in boxes {
            anns.push(serde_json::json!({"id": next_ann, "image_id": id, "category_id": class, "bbox": [x, y, w, h]}));
            next_ann += 1;
        }
    }
    let doc = serde_json::json!({
        "images": records,
        "annotations": anns,
        "categories": [
            {"id": 1, "name": "pan"},
            {"id": 2, "name": "knife"},
            {"id": 3, "name": "whisk"},
        ],
    });
    let path = root.join("annotations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    (path, images)
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

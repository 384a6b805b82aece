#![allow(dead_code)]

use cartoon::dataset::Dataset;
use cartoon_core::imageops::{edge_smooth, EdgeSmoothParams, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Flat-coloured shapes with one-pixel dark outlines on a flat background.
pub fn toy_cartoon(size: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| [rng.random_range(170..=255u8), rng.random_range(170..=255u8), rng.random_range(170..=255u8)];
    let mut img = RasterImage::filled(size, size, colour(&mut rng)).unwrap();
    let shapes = rng.random_range(3..=5);
    for _ in 0..shapes {
        let fill = colour(&mut rng);
        let cx = rng.random_range(0..size) as i64;
        let cy = rng.random_range(0..size) as i64;
        let r = rng.random_range(size as i64 / 6..=size as i64 / 3);
        let disc = rng.random_bool(0.5);
        let inside = |x: i64, y: i64| {
            let (dx, dy) = (x - cx, y - cy);
            if disc {
                dx * dx + dy * dy <= r * r
            } else {
                dx.abs() <= r && dy.abs() <= r
            }
        };
        for y in 0..size as i64 {
            for x in 0..size as i64 {
                if !inside(x, y) {
                    continue;
                }
                let border = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(ox, oy)| !inside(x + ox, y + oy));
                img.put(x as usize, y as usize, if border { [0, 0, 0] } else { fill });
            }
        }
    }
    img
}

/// Smooth colour gradients with mild noise, standing in for photos.
pub fn toy_photo(size: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let a: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let b: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let phase: f64 = rng.random::<f64>() * 6.0;
    let freq: f64 = rng.random_range(0.1..0.4);
    RasterImage::from_fn(size, size, |x, y| {
        let t = ((x as f64 * freq + phase).sin() + (y as f64 * freq * 0.7).cos()) * 0.25 + 0.5;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = (a[c] * t + b[c] * (1.0 - t)) * 230.0 + rng.random_range(0.0..25.0);
            px[c] = v.clamp(0.0, 255.0) as u8;
        }
        px
    })
    .unwrap()
}

pub fn cartoons(n: usize, size: usize, seed: u64) -> Vec<RasterImage> {
    (0..n as u64).map(|i| toy_cartoon(size, seed * 1000 + i)).collect()
}

pub fn smoothed(cartoons: &[RasterImage]) -> Vec<RasterImage> {
    cartoons.iter().map(|c| edge_smooth(c, &EdgeSmoothParams::default()).unwrap()).collect()
}

pub fn photos(n: usize, size: usize, seed: u64) -> Vec<RasterImage> {
    (0..n as u64).map(|i| toy_photo(size, seed * 1000 + i)).collect()
}

pub fn dataset(images: Vec<RasterImage>) -> Dataset {
    Dataset::from_images(images).unwrap()
}

pub mod survey {
    use std::path::{Path, PathBuf};
    use std::sync::Arc;

    use cartoon::io::write_png;
    use cartoon::survey::{SessionPayload, SurveyService};
    use cartoon_core::imageops::RasterImage;
    use cartoon_core::survey::{ModelId, SurveyDefinition, SurveyTask, TaskImage, TASK_COUNT};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::{json, Value};

    /// Writes 20 tasks worth of tiny PNGs and a definition file into `dir`.
    pub fn write_fixture(dir: &Path) -> PathBuf {
        let tasks: Vec<SurveyTask> = (0..TASK_COUNT)
            .map(|i| {
                let source = format!("src{i}.png");
                write_png(&dir.join(&source), &RasterImage::filled(4, 4, [i as u8; 3]).unwrap()).unwrap();
                SurveyTask {
                    id: format!("task-{i:02}"),
                    source,
                    images: ModelId::ALL.map(|m| {
                        let path = format!("{}-{i}.png", m.as_str());
                        write_png(&dir.join(&path), &RasterImage::filled(4, 4, [i as u8, m as u8 * 60, 9]).unwrap()).unwrap();
                        TaskImage { model: m, path }
                    }),
                }
            })
            .collect();
        let def = SurveyDefinition {
            questions: SurveyDefinition::default_questions(),
            tasks,
            id_salt: 11,
        };
        let path = dir.join("survey.json");
        std::fs::write(&path, serde_json::to_string_pretty(&def).unwrap()).unwrap();
        path
    }

    /// Starts a server on an ephemeral port; returns its base URL.
    pub async fn spawn(dir: &Path, log: &Path, seed: u64) -> String {
        let def = write_fixture(dir);
        let svc = Arc::new(SurveyService::open_files(&def, log, seed).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(cartoon::survey::serve(listener, svc));
        format!("http://{addr}")
    }

    /// One participant: starts a session and ranks every task with a
    /// seeded random permutation. Returns the raw session payload text.
    pub async fn scripted_client(base: &str, seed: u64) -> Result<(String, usize), String> {
        let http = reqwest::Client::new();
        let raw = http
            .post(format!("{base}/api/session"))
            .send()
            .await
            .map_err(|e| e.to_string())?
            .text()
            .await
            .map_err(|e| e.to_string())?;
        let session: SessionPayload = serde_json::from_str(&raw).map_err(|e| format!("{e}: {raw}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = 0;
        for task in &session.tasks {
            let mut ranks = [1u8, 2, 3];
            ranks.shuffle(&mut rng);
            let body: Vec<Value> = task
                .images
                .iter()
                .zip(ranks)
                .map(|(img, r)| json!({"image_id": img.image_id, "rank": r}))
                .collect();
            let resp = http
                .post(format!("{base}/api/session/{}/response", session.participant_id))
                .json(&json!({"task_id": task.task_id, "ranks": body}))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("task {} -> {}", task.task_id, resp.status()));
            }
            inputs += body.len();
        }
        Ok((raw, inputs))
    }
}

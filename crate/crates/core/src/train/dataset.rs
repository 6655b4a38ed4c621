use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::splat::{Camera, CameraRecord};

pub const CAMERAS_FILE: &str = "cameras.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One posed image. `image` is row-major `H × W × 3` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Vec<f64>,
    pub split: Split,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    #[serde(flatten)]
    camera: CameraRecord,
    image: String,
    split: Split,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Dataset(format!("{}: {e}", path.display()))
}

impl Dataset {
    pub fn new(views: Vec<View>) -> Result<Self, TrainError> {
        for v in &views {
            let want = (v.camera.width * v.camera.height * 3) as usize;
            if v.image.len() != want {
                return Err(TrainError::Dataset(format!(
                    "image `{}` has {} values, camera declares {}×{}",
                    v.name,
                    v.image.len(),
                    v.camera.width,
                    v.camera.height
                )));
            }
        }
        Ok(Self { views })
    }

    pub fn train_views(&self) -> Vec<&View> {
        self.views.iter().filter(|v| v.split == Split::Train).collect()
    }

    pub fn test_views(&self) -> Vec<&View> {
        self.views.iter().filter(|v| v.split == Split::Test).collect()
    }

    /// Keeps the first `n` training views (in order) and every test view.
    pub fn with_train_subset(&self, n: usize) -> Self {
        let mut kept = 0;
        let views = self
            .views
            .iter()
            .filter(|v| match v.split {
                Split::Test => true,
                Split::Train => {
                    kept += 1;
                    kept <= n
                }
            })
            .cloned()
            .collect();
        Self { views }
    }

    /// Reads `cameras.json` and the 8-bit RGB PNGs it references.
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let cpath = dir.join(CAMERAS_FILE);
        let text = fs::read_to_string(&cpath).map_err(io_err(&cpath))?;
        let records: Vec<ViewRecord> =
            serde_json::from_str(&text).map_err(|e| TrainError::Dataset(format!("{}: {e}", cpath.display())))?;
        let mut views = Vec::with_capacity(records.len());
        for r in records {
            let camera = Camera::from_record(&r.camera).map_err(|e| TrainError::Dataset(format!("{}: {e}", r.image)))?;
            let path = dir.join(&r.image);
            let img = image::open(&path)
                .map_err(|e| TrainError::Dataset(format!("{}: {e}", path.display())))?
                .to_rgb8();
            if img.width() != camera.width || img.height() != camera.height {
                return Err(TrainError::Dataset(format!(
                    "{} is {}×{}, camera declares {}×{}",
                    r.image,
                    img.width(),
                    img.height(),
                    camera.width,
                    camera.height
                )));
            }
            let image = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
            views.push(View { camera, image, split: r.split, name: r.image });
        }
        Self::new(views)
    }

    /// Writes PNGs (quantized to 8 bits) and `cameras.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut records = Vec::new();
        for v in &self.views {
            let bytes = v.image.iter().map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            let img = image::RgbImage::from_raw(v.camera.width, v.camera.height, bytes).expect("checked size");
            let path = dir.join(&v.name);
            img.save(&path).map_err(|e| TrainError::Dataset(format!("{}: {e}", path.display())))?;
            records.push(ViewRecord { camera: v.camera.to_record(), image: v.name.clone(), split: v.split });
        }
        let json = serde_json::to_string_pretty(&records).expect("serializable");
        fs::write(dir.join(CAMERAS_FILE), json).map_err(io_err(dir))
    }

    /// Quantizes every image to 8 bits, as a save/load round trip would.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.views {
            for x in &mut v.image {
                *x = (x.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Vec3;

    fn view(name: &str, split: Split) -> View {
        let camera = Camera::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::zeros(), Vec3::z(), 10.0, 4, 3);
        let image = (0..36).map(|k| k as f64 / 35.0).collect();
        View { camera, image, split, name: name.into() }
    }

    #[test]
    fn round_trip_through_disk() {
        let ds = Dataset::new(vec![view("a.png", Split::Train), view("b.png", Split::Test)]).unwrap().quantized();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.views.len(), 2);
        assert_eq!(back.views[1].split, Split::Test);
        for (a, b) in back.views.iter().zip(&ds.views) {
            assert!(a.image.iter().zip(&b.image).all(|(x, y)| (x - y).abs() < 1e-12));
            assert!((a.camera.world_to_camera - b.camera.world_to_camera).amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_missing_camera_file_and_bad_sizes() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        let mut v = view("a.png", Split::Train);
        v.image.pop();
        assert!(Dataset::new(vec![v]).is_err());
    }

    #[test]
    fn train_subset_keeps_tests() {
        let ds = Dataset::new(vec![
            view("a.png", Split::Train),
            view("t.png", Split::Test),
            view("b.png", Split::Train),
        ])
        .unwrap();
        let sub = ds.with_train_subset(1);
        assert_eq!(sub.views.iter().map(|v| v.name.as_str()).collect::<Vec<_>>(), ["a.png", "t.png"]);
    }
}

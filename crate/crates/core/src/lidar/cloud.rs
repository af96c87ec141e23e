//! Point clouds with optional per-point frame index and ground-truth label,
//! plus ASCII PLY and CSV readers/writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::LidarError;
use crate::geometry::RigidTransform;

/// Ground-truth point origin, written by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PointLabel {
    Sphere = 1,
    Ground = 2,
    Clutter = 3,
    Spurious = 4,
}

impl PointLabel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: i64) -> Option<Self> {
        match c {
            1 => Some(Self::Sphere),
            2 => Some(Self::Ground),
            3 => Some(Self::Clutter),
            4 => Some(Self::Spurious),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub frames: Option<Vec<u32>>,
    pub labels: Option<Vec<PointLabel>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            frames: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud of the given indices, keeping attributes aligned.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            frames: self.frames.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            frames: self.frames.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn count_label(&self, label: PointLabel) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == label).count())
    }

    pub fn to_ply_string(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40 + 200);
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", self.len());
        s.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.frames.is_some() {
            s.push_str("property int frame\n");
        }
        if self.labels.is_some() {
            s.push_str("property uchar label\n");
        }
        s.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
            if let Some(f) = &self.frames {
                let _ = write!(s, " {}", f[i]);
            }
            if let Some(l) = &self.labels {
                let _ = write!(s, " {}", l[i].code());
            }
            s.push('\n');
        }
        s
    }

    pub fn save_ply(&self, path: &Path) -> Result<(), LidarError> {
        fs::write(path, self.to_ply_string()).map_err(|e| LidarError::Io(format!("{}: {e}", path.display())))
    }

    pub fn parse_ply(text: &str) -> Result<PointCloud, LidarError> {
        let bad = |m: &str| LidarError::Parse(format!("PLY: {m}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(bad("missing magic"));
        }
        let mut count = None;
        let mut props: Vec<String> = Vec::new();
        let mut in_vertex = false;
        loop {
            let line = lines.next().ok_or_else(|| bad("unterminated header"))?.trim();
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii PLY is supported")),
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?);
                    in_vertex = true;
                }
                ["element", ..] => in_vertex = false,
                ["property", "list", ..] if in_vertex => return Err(bad("list properties unsupported")),
                ["property", _, name] if in_vertex => props.push(name.to_string()),
                ["end_header"] => break,
                _ => {}
            }
        }
        let n = count.ok_or_else(|| bad("no vertex element"))?;
        let col = |name: &str| props.iter().position(|p| p == name);
        let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(bad("x, y, z properties required")),
        };
        let iframe = col("frame");
        let ilabel = col("label");
        let mut cloud = PointCloud {
            points: Vec::with_capacity(n),
            frames: iframe.map(|_| Vec::with_capacity(n)),
            labels: ilabel.map(|_| Vec::with_capacity(n)),
        };
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("fewer vertices than declared"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("non-numeric vertex value"))?;
            if vals.len() < props.len() {
                return Err(bad("short vertex row"));
            }
            cloud.points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
            if let (Some(i), Some(f)) = (iframe, cloud.frames.as_mut()) {
                f.push(vals[i] as u32);
            }
            if let (Some(i), Some(l)) = (ilabel, cloud.labels.as_mut()) {
                l.push(PointLabel::from_code(vals[i] as i64).ok_or_else(|| bad("unknown label code"))?);
            }
        }
        Ok(cloud)
    }

    /// CSV rows `x,y,z[,frame]`; a non-numeric first row is treated as a header.
    pub fn parse_csv(text: &str) -> Result<PointCloud, LidarError> {
        let mut points = Vec::new();
        let mut frames: Vec<u32> = Vec::new();
        let mut with_frame = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let vals: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if lineno == 0 => continue,
                Err(_) => return Err(LidarError::Parse(format!("CSV line {}: non-numeric", lineno + 1))),
            };
            if !(3..=4).contains(&vals.len()) {
                return Err(LidarError::Parse(format!("CSV line {}: expected 3 or 4 fields", lineno + 1)));
            }
            let has = vals.len() == 4;
            if *with_frame.get_or_insert(has) != has {
                return Err(LidarError::Parse(format!("CSV line {}: inconsistent column count", lineno + 1)));
            }
            points.push(Point3::new(vals[0], vals[1], vals[2]));
            if has {
                frames.push(vals[3] as u32);
            }
        }
        Ok(PointCloud {
            points,
            frames: with_frame.unwrap_or(false).then_some(frames),
            labels: None,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{},{},{}", p.x, p.y, p.z);
            if let Some(f) = &self.frames {
                let _ = write!(s, ",{}", f[i]);
            }
            s.push('\n');
        }
        s
    }

    /// Loads `.ply` or `.csv` by extension.
    pub fn load(path: &Path) -> Result<PointCloud, LidarError> {
        let text = fs::read_to_string(path).map_err(|e| LidarError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ply") => Self::parse_ply(&text),
            Some("csv") => Self::parse_csv(&text),
            _ => Err(LidarError::Parse(format!("{}: unknown point cloud extension", path.display()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_with_header_and_frames() {
        let c = PointCloud::parse_csv("x,y,z,frame\n1,2,3,0\n4.5,5,6,7\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.frames, Some(vec![0, 7]));
        assert_eq!(c.points[1], Point3::new(4.5, 5.0, 6.0));
        assert!(PointCloud::parse_csv("1,2,3\n1,2,3,4\n").is_err());
        assert!(PointCloud::parse_csv("1,2\n").is_err());
    }

    #[test]
    fn ply_rejects_binary_and_missing_fields() {
        assert!(PointCloud::parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(PointCloud::parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").is_err());
    }

    #[test]
    fn ply_reads_foreign_property_order() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float intensity\nproperty float z\nproperty float y\nproperty float x\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n9 3 2 1\n9 6 5 4\n";
        let c = PointCloud::parse_ply(text).unwrap();
        assert_eq!(c.points, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    proptest! {
        #[test]
        fn ply_roundtrip_is_exact(
            pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64, 0u32..500, 1i64..5), 0..50)
        ) {
            let cloud = PointCloud {
                points: pts.iter().map(|&(x, y, z, _, _)| Point3::new(x, y, z)).collect(),
                frames: Some(pts.iter().map(|p| p.3).collect()),
                labels: Some(pts.iter().map(|p| PointLabel::from_code(p.4).unwrap()).collect()),
            };
            let back = PointCloud::parse_ply(&cloud.to_ply_string()).unwrap();
            prop_assert_eq!(back, cloud.clone());
            let csv = PointCloud::parse_csv(&cloud.to_csv_string()).unwrap();
            prop_assert_eq!(csv.points, cloud.points);
        }
    }
}

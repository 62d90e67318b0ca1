//! CSV and JSON renderings of analysis results.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::save_array;

use super::{ChannelScoreMap, OffsetPoint};

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn offset_curve_csv(points: &[OffsetPoint]) -> String {
    let mut s = String::from("t_sep,accuracy,n_samples\n");
    for p in points {
        s += &format!("{},{},{}\n", p.t_sep, p.accuracy, p.n_samples);
    }
    s
}

pub fn channel_scores_csv(map: &ChannelScoreMap) -> String {
    let mut s = String::from("channel,name,mean,std\n");
    for (i, (m, sd)) in map.mean.iter().zip(&map.std).enumerate() {
        let name = map.names.get(i).map_or("", String::as_str);
        s += &format!("{i},{name},{m},{sd}\n");
    }
    s
}

pub fn write_offset_curve(path: &Path, points: &[OffsetPoint]) -> Result<()> {
    write(path, offset_curve_csv(points))
}

pub fn write_channel_scores(path: &Path, map: &ChannelScoreMap) -> Result<()> {
    write(path, channel_scores_csv(map))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write(path, text + "\n")
}

/// Saves `[rows × dim]` in the core array format (row-major f32).
pub fn write_embedding(path: &Path, matrix: ArrayView2<f32>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_array(path, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage;

    #[test]
    fn channel_csv_has_one_row_per_channel() {
        let map = ChannelScoreMap {
            names: montage::canonical_names(),
            mean: vec![0.5; 64],
            std: vec![0.0; 64],
            n_runs: 1,
        };
        let csv = channel_scores_csv(&map);
        assert_eq!(csv.lines().count(), 65);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn offset_csv_rows() {
        let pts: Vec<OffsetPoint> = [-7.0, -3.0, 1.0]
            .iter()
            .map(|&t| OffsetPoint { t_sep: t, accuracy: 0.5, n_samples: 10 })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/curve.csv");
        write_offset_curve(&path, &pts).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "-7,0.5,10");
    }
}

//! An idealized spherical 64-channel 10-10 layout.
//!
//! Each electrode sits on a sphere of radius [`HEAD_RADIUS`] at polar angle
//! `sqrt(a² + b²)` from the vertex, where `a` is the anterior/posterior angle of
//! its row and `b` the lateral angle of its column (22.5° steps, rim at 90°).

use crate::error::{Error, Result};
use crate::geometry::{dot, unit, ChannelGeometry};

pub const HEAD_RADIUS: f64 = 0.095;

const ROWS: &[(&str, f64)] = &[
    ("Fp", 90.0),
    ("AF", 67.5),
    ("FC", 22.5),
    ("FT", 22.5),
    ("F", 45.0),
    ("CP", -22.5),
    ("TP", -22.5),
    ("C", 0.0),
    ("T", 0.0),
    ("PO", -67.5),
    ("P", -45.0),
    ("O", -90.0),
    ("I", -112.5),
];

const LABELS_64: [&str; 64] = [
    "Fp1", "AF7", "AF3", "F1", "F3", "F5", "F7", "FT7", "FC5", "FC3", "FC1", "C1", "C3", "C5",
    "T7", "TP7", "CP5", "CP3", "CP1", "P1", "P3", "P5", "P7", "P9", "PO7", "PO3", "O1", "Iz",
    "Oz", "POz", "Pz", "CPz", "Fpz", "Fp2", "AF8", "AF4", "AFz", "Fz", "F2", "F4", "F6", "F8",
    "FT8", "FC6", "FC4", "FC2", "FCz", "Cz", "C2", "C4", "C6", "T8", "TP8", "CP6", "CP4", "CP2",
    "P2", "P4", "P6", "P8", "P10", "PO8", "PO4", "O2",
];

fn position_of(label: &str) -> [f64; 3] {
    let (prefix, row_angle) = ROWS
        .iter()
        .find(|(p, _)| label.starts_with(p) && label[p.len()..].chars().all(|c| c == 'z' || c.is_ascii_digit()))
        .copied()
        .unwrap_or_else(|| panic!("unknown label {label}"));
    let column = &label[prefix.len()..];
    // Fp/O rows sit on the rim where 10-10 columns compress to 18° steps.
    let step = if matches!(prefix, "Fp" | "O" | "I") { 18.0 } else { 22.5 };
    let lateral = if column == "z" {
        0.0
    } else {
        let n: u32 = column.parse().expect("numeric column");
        let magnitude = f64::from((n + 1) / 2) * step;
        if n % 2 == 1 {
            -magnitude
        } else {
            magnitude
        }
    };
    let polar = (row_angle * row_angle + lateral * lateral).sqrt().to_radians();
    let azimuth = row_angle.atan2(lateral);
    let (s, c) = (polar.sin(), polar.cos());
    let (dx, dy) = if polar == 0.0 { (0.0, 0.0) } else { (azimuth.cos(), azimuth.sin()) };
    [HEAD_RADIUS * s * dx, HEAD_RADIUS * s * dy, HEAD_RADIUS * c]
}

pub fn standard_64() -> ChannelGeometry {
    let labels: Vec<String> = LABELS_64.iter().map(|s| s.to_string()).collect();
    let positions = LABELS_64.iter().map(|l| position_of(l)).collect();
    ChannelGeometry::new(labels, positions).expect("static layout is valid")
}

/// A spatially spread subset of the 64-channel layout, chosen by greedy
/// farthest-point sampling starting at Cz. Deterministic.
pub fn spread_subset(n: usize) -> Result<ChannelGeometry> {
    let full = standard_64();
    if n == 0 || n > full.len() {
        return Err(Error::invalid(format!("subset size {n} outside 1..={}", full.len())));
    }
    let dirs: Vec<[f64; 3]> = full.positions().iter().map(|&p| unit(p)).collect();
    let mut chosen = vec![full.index_of("Cz").expect("Cz present")];
    let mut min_dist: Vec<f64> = dirs.iter().map(|&d| 1.0 - dot(d, dirs[chosen[0]])).collect();
    while chosen.len() < n {
        let next = (0..dirs.len())
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| min_dist[a].total_cmp(&min_dist[b]).then(b.cmp(&a)))
            .expect("candidates remain");
        chosen.push(next);
        for (i, d) in dirs.iter().enumerate() {
            min_dist[i] = min_dist[i].min(1.0 - dot(*d, dirs[next]));
        }
    }
    chosen.sort_unstable();
    Ok(full.select(&chosen))
}

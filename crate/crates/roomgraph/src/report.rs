//! Human-readable and CSV renderings of a [`RunReport`].

use std::fmt::Write;

use roomgraph_core::eval::RunReport;
use roomgraph_core::geometry::AlignmentMode;

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn mode_name(m: AlignmentMode) -> &'static str {
    match m {
        AlignmentMode::None => "none",
        AlignmentMode::Se3 => "se3",
        AlignmentMode::Sim3 => "sim3",
    }
}

pub fn table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ATE (m)");
    for (mode, ate) in &report.ate_m {
        let _ = writeln!(out, "  {:<6}{ate:.4}", mode_name(*mode));
    }
    let _ = writeln!(out, "Per-room chamfer (m)");
    let _ = writeln!(out, "  {:<6}{:<6}chamfer", "room", "gt");
    for (room, c) in &report.per_room_chamfer {
        let gt = report.room_matches.get(room).map_or("-".into(), |g| g.to_string());
        let _ = writeln!(out, "  {:<6}{:<6}{c}", room.0, gt);
    }
    let _ = writeln!(out, "  mean  {}", opt(report.mean_chamfer(), 4));
    let _ = writeln!(
        out,
        "Room segmentation  precision {}  recall {}",
        opt(report.room_precision, 3),
        opt(report.room_recall, 3)
    );
    let c = &report.counts;
    let _ = writeln!(
        out,
        "Counts  rooms {} (invalid {})  objects {}  edges {}  loop closures {}  frames {}",
        c.rooms, c.invalid_rooms, c.objects, c.room_edges, c.loop_closures_accepted, c.frames
    );
    if !report.stage_timings.is_empty() {
        let _ = writeln!(out, "Stage timings (s)");
        for (stage, t) in &report.stage_timings {
            let _ = writeln!(out, "  {stage:<16}{t:.4}");
        }
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

pub const CSV_HEADER: &str = "room,gt_room,chamfer_m,ate_sim3_m,precision,recall";

/// One row per room; run-level columns repeat on every row.
pub fn csv(report: &RunReport) -> String {
    let ate = report.ate_m.get(&AlignmentMode::Sim3).copied();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (room, c) in &report.per_room_chamfer {
        let gt = report.room_matches.get(room).map_or(String::new(), |g| g.to_string());
        let chamfer = c.meters().map_or("X".to_string(), |d| d.to_string());
        let _ = writeln!(
            out,
            "{},{gt},{chamfer},{},{},{}",
            room.0,
            ate.map_or(String::new(), |a| a.to_string()),
            report.room_precision.map_or(String::new(), |a| a.to_string()),
            report.room_recall.map_or(String::new(), |a| a.to_string()),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use roomgraph_core::eval::RoomChamfer;
    use roomgraph_core::scene_graph::RoomId;

    fn report() -> RunReport {
        let mut r = RunReport::default();
        r.ate_m.insert(AlignmentMode::Sim3, 0.05);
        r.per_room_chamfer.insert(RoomId(0), RoomChamfer::Meters(0.01));
        r.per_room_chamfer.insert(RoomId(1), RoomChamfer::Invalid);
        r.room_matches.insert(RoomId(0), 2);
        r.room_precision = Some(0.5);
        r
    }

    #[test]
    fn csv_rows_per_room() {
        let text = csv(&report());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, [CSV_HEADER, "0,2,0.01,0.05,0.5,", "1,,X,0.05,0.5,"]);
    }

    #[test]
    fn table_marks_invalid_rooms() {
        let text = table(&report());
        assert!(text.contains("sim3  0.0500"));
        assert!(text.lines().any(|l| l.trim() == "1     -     X"));
        assert!(text.contains("recall -"));
    }
}

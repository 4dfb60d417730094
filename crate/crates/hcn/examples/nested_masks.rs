//! Derives the three nested object masks for one scene/question pair and
//! prints them next to the grid cells that define the coarse stage.
//!
//! Run with: cargo run --example nested_masks

use std::collections::BTreeMap;

use hcn::labelgen::{generate_labels, LabelGenConfig};
use hcn::scene::{ObjectRecord, QuestionRecord, SceneRecord};

/// A handful of points clustered around a centroid.
fn blob(cx: f64, cy: f64) -> Vec<(f64, f64, f64)> {
    [(0.0, 0.0), (0.1, -0.1), (-0.1, 0.1), (0.05, 0.05)]
        .iter()
        .map(|(dx, dy)| (cx + dx, cy + dy, 0.5))
        .collect()
}

fn main() -> hcn::Result<()> {
    // Six objects: the table sits next to the chair; the rest are spread out.
    let layout = [
        (0, "table", 1.0, 1.0),
        (1, "chair", 1.6, 1.2),
        (2, "sofa", -3.0, 2.5),
        (3, "lamp", 3.5, -2.8),
        (4, "shelf", -2.7, -3.1),
        (5, "rug", 0.2, -3.6),
    ];
    let mut points = Vec::new();
    let mut point_object_ids = Vec::new();
    let mut objects = Vec::new();
    for &(id, label, cx, cy) in &layout {
        for p in blob(cx, cy) {
            points.push(p);
            point_object_ids.push(id);
        }
        objects.push(ObjectRecord {
            id,
            label: label.to_string(),
            attributes: BTreeMap::new(),
        });
    }
    let scene = SceneRecord {
        scene_id: "demo".into(),
        points,
        point_object_ids,
        objects,
    };
    scene.validate()?;

    let question = QuestionRecord {
        question_id: "q-demo".into(),
        scene_id: "demo".into(),
        question: "what color is the table next to the chair?".into(),
        answers: vec!["red".into()],
        target_ids: [0].into_iter().collect(),
        anchor_ids: Some([1].into_iter().collect()),
    };
    question.validate_against(&scene)?;

    let cfg = LabelGenConfig::default();
    let masks = generate_labels(&scene, &question, &cfg)?;

    println!("question: {}", question.question);
    println!(
        "{:<4} {:<8} {:>5} {:>5} {:>5}",
        "id", "label", "boi", "ooi", "oot"
    );
    for (i, obj) in scene.objects.iter().enumerate() {
        println!(
            "{:<4} {:<8} {:>5} {:>5} {:>5}",
            obj.id, obj.label, masks.boi[i] as u8, masks.ooi[i] as u8, masks.oot[i] as u8
        );
    }

    // The coarse mask is defined through occupied grid cells, so every
    // object with a point in a marked cell is swept in.
    println!(
        "\ncoarse-stage cells over the {0}x{0} grid ('#' = marked):",
        cfg.grid_size
    );
    for row in 0..cfg.grid_size {
        let line: String = (0..cfg.grid_size)
            .map(|col| {
                if masks.boi_cells.iter().any(|c| c.row == row && c.col == col) {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        println!("  {line}");
    }

    // The invariant every downstream consumer relies on.
    masks.validate()?;
    println!("\nnesting holds: oot ⊆ ooi ⊆ boi");
    Ok(())
}

//! Models shipped with the crate.

use crate::model::{parse_model, NetModel, TargetNode, TargetSpec};


pub const REPEATER_JSON: &str = include_str!("../models/repeater.json");

/// Entanglement-swapping repeater service with a hidden purification lane.
pub fn repeater() -> NetModel {
    parse_model(REPEATER_JSON).expect("bundled repeater model is valid")
}

/// Foreground chain `req < swap_ok < done` running concurrently with a chain
/// of `m` calibration events.
pub fn em_target(m: usize) -> TargetSpec {
    let mut nodes = vec![
        TargetNode { id: "r".into(), label: "req".into() },
        TargetNode { id: "s".into(), label: "swap_ok".into() },
        TargetNode { id: "d".into(), label: "done".into() },
    ];
    let mut order = vec![["r".to_string(), "s".to_string()], ["s".to_string(), "d".to_string()]];
    for i in 0..m {
        nodes.push(TargetNode { id: format!("c{i}"), label: "cal".into() });
        if i > 0 {
            order.push([format!("c{}", i - 1), format!("c{i}")]);
        }
    }
    TargetSpec::Pomset { name: Some(format!("E_{m}")), nodes, order }
}

//! Scratch probe for picking test fixture ports. Not part of the library.

use hexmesh::graph::{build_graph, WeightCoeffs};
use hexmesh::interconnect::shortest_path;
use hexmesh::topology::{generate_hex_mesh, PucDefaults};

fn main() {
    let defaults = PucDefaults::default();

    if std::env::args().any(|a| a == "save-mesh72") {
        let topo = generate_hex_mesh(5, 3, &defaults).unwrap();
        hexmesh::topology::save_topology(&topo, std::path::Path::new("crates/core/data/mesh72.json"))
            .unwrap();
        println!("saved crates/core/data/mesh72.json");
        return;
    }

    let topo = generate_hex_mesh(5, 3, &defaults).unwrap();
    let graph = build_graph(&topo, WeightCoeffs::default()).unwrap();

    println!("usable ports with positions:");
    for &p in &topo.usable_ports {
        let ep = &topo.external_ports[p as usize];
        println!("  port {p}: pos {:?} joins {:?}", ep.position, ep.joins);
    }

    // Candidate left/right sets from position extremes.
    let mut by_x: Vec<(i32, i32, u32)> = topo
        .usable_ports
        .iter()
        .map(|&p| {
            let ep = &topo.external_ports[p as usize];
            (ep.position.0, ep.position.1, p)
        })
        .collect();
    by_x.sort();
    let left: Vec<u32> = by_x.iter().take(8).map(|&(_, _, p)| p).collect();
    let right: Vec<u32> = by_x.iter().rev().take(8).map(|&(_, _, p)| p).collect();
    println!("leftmost usable: {left:?}");
    println!("rightmost usable: {right:?}");

    for (li, ri) in [(6usize, 6usize)] {
        let l = &left[..li];
        let r = &right[..ri];
        println!("hop matrix for left {l:?} x right {r:?}:");
        for &i in l {
            let mut row = Vec::new();
            for &o in r {
                match shortest_path(&graph, i, o) {
                    Ok(path) => row.push(path.puc_count.to_string()),
                    Err(_) => row.push("x".into()),
                }
            }
            println!("  {i}: {}", row.join(" "));
        }
    }
}

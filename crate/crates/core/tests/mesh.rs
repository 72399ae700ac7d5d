use proptest::prelude::*;
use thinlayer::Mesh;

fn check_pairing(mesh: &Mesh) -> Result<(), TestCaseError> {
    for j in 0..mesh.len() {
        for e in mesh.edges_of(j) {
            let back = mesh.edges_of(e.neighbor).iter().find(|b| b.neighbor == j);
            prop_assert!(back.is_some(), "edge {j}->{} has no reverse", e.neighbor);
            let b = back.unwrap();
            prop_assert_eq!(b.length, e.length);
            prop_assert_eq!(b.distance, e.distance);
            prop_assert!((b.normal[0] + e.normal[0]).abs() < 1e-15 && (b.normal[1] + e.normal[1]).abs() < 1e-15);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn interval_partitions_the_domain(a in -5.0f64..5.0, len in 0.1f64..10.0, n in 1usize..200) {
        let mesh = Mesh::interval(a, a + len, n).unwrap();
        let total: f64 = mesh.cells().iter().map(|c| c.area).sum();
        prop_assert!((total - len).abs() < 1e-12 * len.max(1.0));
        prop_assert_eq!(mesh.interior_edge_count(), n - 1);
        check_pairing(&mesh)?;
        let dual = mesh.dual().unwrap();
        prop_assert_eq!(dual.len(), n + 1);
        let dual_total: f64 = dual.cells().iter().map(|c| c.area).sum();
        prop_assert!((dual_total - len).abs() < 1e-12 * len.max(1.0));
        check_pairing(dual)?;
    }

    #[test]
    fn rectangle_partitions_the_domain(w in 0.1f64..4.0, h in 0.1f64..4.0, nx in 1usize..12, ny in 1usize..12) {
        let mesh = Mesh::rectangle([0.0, w], [1.0, 1.0 + h], nx, ny).unwrap();
        let total: f64 = mesh.cells().iter().map(|c| c.area).sum();
        prop_assert!((total - w * h).abs() < 1e-12 * (w * h).max(1.0));
        prop_assert_eq!(mesh.interior_edge_count(), (nx - 1) * ny + nx * (ny - 1));
        prop_assert_eq!(mesh.unique_edges().len(), mesh.interior_edge_count());
        check_pairing(&mesh)?;
    }
}

#[test]
fn lookup_errors() {
    let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
    assert_eq!(mesh.edge_neighbors(0).unwrap().len(), 1);
    assert_eq!(mesh.edge_neighbors(0).unwrap()[0].neighbor, 1);
    assert!(mesh.edge_neighbors(4).is_err());
    assert!(Mesh::interval(1.0, 1.0, 3).is_err());
    assert!(Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 0, 2).is_err());
}

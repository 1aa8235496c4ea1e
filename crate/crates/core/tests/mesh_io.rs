use shellopt::{shapes, DirichletSelector, MeshError, ShellMesh};

#[test]
fn obj_round_trip_through_a_file() {
    let mesh = shapes::bumpy_patch(4, 0.3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("patch.obj");
    std::fs::write(&path, mesh.to_obj(&mesh.positions)).unwrap();
    let loaded = ShellMesh::load_obj(&path).unwrap();
    assert_eq!(loaded.faces, mesh.faces);
    for (a, b) in loaded.positions.iter().zip(&mesh.positions) {
        assert_eq!(a, b);
    }
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ShellMesh::load_obj(dir.path().join("absent.obj")), Err(MeshError::Io { .. })));
}

#[test]
fn topology_of_a_grid_patch() {
    let n = 5;
    let mesh = shapes::bumpy_patch(n, 0.2).build_topology().unwrap();
    // V − E + F = 1 for a disc
    let (v, e, f) = (mesh.positions.len() as i64, mesh.edges.len() as i64, mesh.faces.len() as i64);
    assert_eq!(v - e + f, 1);
    assert_eq!(mesh.interior_edge_count(), mesh.hinges.len());
    assert_eq!(mesh.hinges.len(), 3 * n * n - 2 * n);
}

#[test]
fn dirichlet_selection_freezes_faces_on_the_feet() {
    let mesh = shapes::roof(&Default::default())
        .build_topology()
        .unwrap()
        .select_dirichlet(&DirichletSelector::ZThreshold(1e-9))
        .unwrap();
    assert!(mesh.dirichlet.len() >= 3);
    assert!(mesh.dirichlet.iter().all(|&v| mesh.positions[v].z <= 1e-9));
    for (t, face) in mesh.faces.iter().enumerate() {
        assert_eq!(mesh.frozen[t], face.iter().all(|v| mesh.dirichlet.contains(v)));
    }
}

#[test]
fn collinear_dirichlet_set_is_rejected() {
    let result = shapes::bumpy_patch(4, 0.0).build_topology().unwrap().select_dirichlet(&DirichletSelector::Indices(vec![0, 1, 2]));
    assert!(matches!(result, Err(MeshError::CollinearDirichlet)));
}

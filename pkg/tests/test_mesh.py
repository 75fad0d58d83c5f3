"""Bisection refinement, overlay, serialization and conformity checks."""

import numpy as np
import pytest

from afemkit.errors import GeometryError, LineageError, StructureError
from afemkit.mesh import (
    DIRICHLET,
    NEUMANN,
    Mesh,
    _refines,
    initial_mesh,
    lineage_stats,
    load_binary,
    load_text,
    overlay,
    refine,
    save_binary,
    save_text,
    shape_regularity,
    uniform_refine,
    validate,
)

SQUARE_COORDS = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
SQUARE_TRIS = [(0, 1, 2), (0, 2, 3)]


def square():
    return initial_mesh(SQUARE_COORDS, SQUARE_TRIS)


def crisscross(n=2):
    from afemkit.bench import crisscross_square

    return crisscross_square(n=n)


def total_area(mesh):
    return float(mesh.signed_areas().sum())


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def test_initial_square_counts_and_orientation():
    mesh = square()
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert np.all(mesh.signed_areas() > 0)
    assert total_area(mesh) == pytest.approx(1.0)


def test_refinement_edge_is_longest_edge():
    mesh = square()
    for t in mesh.triangles:
        pts = mesh.coords[list(t.v)]
        lengths = {
            tuple(sorted((t.v[i], t.v[(i + 1) % 3]))): np.linalg.norm(
                pts[(i + 1) % 3] - pts[i]
            )
            for i in range(3)
        }
        assert lengths[t.refinement_edge] == pytest.approx(max(lengths.values()))
    # the square diagonal (0, 2) is the longest edge of both triangles
    assert all(t.refinement_edge == (0, 2) for t in mesh.triangles)


def test_degenerate_triangle_rejected():
    with pytest.raises(GeometryError):
        initial_mesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)])


def test_unused_vertex_rejected():
    with pytest.raises(StructureError):
        initial_mesh([(0, 0), (1, 0), (0, 1), (5, 5)], [(0, 1, 2)])


def test_hanging_node_input_rejected():
    coords = [(0, 0), (2, 0), (1, 1), (1, 0), (1, -1)]
    tris = [(0, 1, 2), (0, 3, 4), (3, 1, 4)]
    with pytest.raises(StructureError):
        initial_mesh(coords, tris)


def test_boundary_markers_default_dirichlet_and_validation():
    mesh = square()
    assert all(m == DIRICHLET for m in mesh.boundary.values())
    marked = initial_mesh(
        SQUARE_COORDS, SQUARE_TRIS, {(0, 1): NEUMANN}
    )
    assert marked.boundary[(0, 1)] == NEUMANN
    with pytest.raises(StructureError):
        initial_mesh(SQUARE_COORDS, SQUARE_TRIS, {(0, 2): NEUMANN})  # interior
    with pytest.raises(StructureError):
        initial_mesh(SQUARE_COORDS, SQUARE_TRIS, {(0, 1): "robin"})


# ---------------------------------------------------------------------------
# bisection
# ---------------------------------------------------------------------------


def test_single_mark_on_square_gives_four_triangles():
    mesh = square()
    fine = refine(mesh, [0])
    # both triangles share the refinement edge, so closure splits both
    assert fine.n_triangles == 4
    validate(fine)
    assert total_area(fine) == pytest.approx(1.0)


def test_children_structure_of_one_bisection():
    mesh = initial_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    parent = mesh.triangles[0]
    fine = refine(mesh, [0])
    assert fine.n_triangles == 2
    v0, v1, v2 = parent.v
    m = mesh.n_vertices  # the midpoint is the first appended vertex
    assert np.allclose(
        fine.coords[m], 0.5 * (mesh.coords[v0] + mesh.coords[v1])
    )
    c0, c1 = fine.triangles
    assert c0.v == (v2, v0, m) and c0.path == (0,)
    assert c1.v == (v1, v2, m) and c1.path == (1,)
    assert c0.generation == c1.generation == 1
    assert c0.root == c1.root == parent.root


def test_all_edge_marking_splits_into_four_children():
    mesh = initial_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    fine = refine(mesh, [0], edges="all")
    assert fine.n_triangles == 4
    assert all(len(t.path) == 2 for t in fine.triangles)
    validate(fine)


def test_unknown_edge_mode_rejected():
    with pytest.raises(StructureError):
        refine(square(), [0], edges="both")


def test_marked_out_of_range_rejected():
    with pytest.raises(StructureError):
        refine(square(), [7])


def test_empty_marking_returns_same_mesh():
    mesh = square()
    assert refine(mesh, []) is mesh


def test_every_marked_element_is_split():
    rng = np.random.default_rng(3)
    mesh = crisscross(3)
    for _ in range(5):
        marked = rng.choice(mesh.n_triangles, size=4, replace=False)
        keys = {(mesh.triangles[m].root, mesh.triangles[m].path) for m in marked}
        fine = refine(mesh, [int(m) for m in marked])
        assert not (keys & fine.leaf_keys())
        validate(fine)
        mesh = fine


def test_closure_cascade_stays_conforming():
    mesh = uniform_refine(crisscross(2), 3)
    # mark a few interior triangles; closure may propagate widely
    cens = mesh.coords[mesh.tri_array].mean(axis=1)
    interior = np.flatnonzero(np.max(np.abs(cens), axis=1) < 0.5)[:3]
    fine = refine(mesh, [int(i) for i in interior])
    validate(fine)
    assert not (
        {(mesh.triangles[i].root, mesh.triangles[i].path) for i in interior}
        & fine.leaf_keys()
    )


def test_growth_bounds_per_refine_call():
    rng = np.random.default_rng(11)
    mesh = crisscross(2)
    for _ in range(6):
        k = rng.integers(1, mesh.n_triangles + 1)
        marked = rng.choice(mesh.n_triangles, size=k, replace=False)
        fine = refine(mesh, [int(m) for m in marked])
        assert fine.n_triangles >= mesh.n_triangles + k
        assert fine.n_triangles <= 4 * mesh.n_triangles
        mesh = fine


def test_vertex_numbering_is_stable_under_refinement():
    mesh = crisscross(2)
    fine = refine(mesh, [0, 5])
    assert np.array_equal(fine.coords[: mesh.n_vertices], mesh.coords)


def test_uniform_refine_quadruples_after_closure_settles():
    mesh = square()
    fine = uniform_refine(mesh, 2)
    validate(fine)
    assert fine.n_triangles == 8
    assert total_area(fine) == pytest.approx(1.0)


def test_boundary_markers_inherited_on_split_edges():
    mesh = initial_mesh(SQUARE_COORDS, SQUARE_TRIS, {(0, 1): NEUMANN})
    fine = uniform_refine(mesh, 2)
    for e, marker in fine.boundary.items():
        mid = 0.5 * (fine.coords[e[0]] + fine.coords[e[1]])
        if abs(mid[1]) < 1e-12:  # bottom edge
            assert marker == NEUMANN
        else:
            assert marker == DIRICHLET


def test_generation_and_area_halving():
    mesh = square()
    fine = uniform_refine(mesh, 3)
    for t in fine.triangles:
        assert t.generation == len(t.path)
    areas = fine.signed_areas()
    gens = np.array([t.generation for t in fine.triangles])
    assert np.allclose(areas, 0.5 * 0.5**gens)


# ---------------------------------------------------------------------------
# lineage and overlay
# ---------------------------------------------------------------------------


def test_local_nestedness():
    mesh = crisscross(2)
    fine = refine(mesh, [0, 1, 2])
    finer = refine(fine, [3, 4])
    assert _refines(fine, mesh)
    assert _refines(finer, mesh)
    assert not _refines(mesh, finer)


def test_overlay_is_coarsest_common_refinement():
    mesh = crisscross(2)
    a = refine(mesh, [0, 3])
    b = refine(mesh, [5, 7])
    o = overlay(a, b)
    validate(o)
    assert _refines(o, a) and _refines(o, b)
    assert o.n_triangles <= a.n_triangles + b.n_triangles - mesh.n_triangles


def test_overlay_with_nested_argument_returns_finer():
    mesh = crisscross(2)
    fine = refine(mesh, [0, 1])
    assert overlay(mesh, fine) == fine
    assert overlay(fine, mesh) == fine
    assert overlay(fine, fine) == fine


def test_overlay_requires_same_lineage():
    with pytest.raises(LineageError):
        overlay(square(), crisscross(2))


def test_lineage_stats_counts():
    mesh = crisscross(2)
    fine = refine(mesh, [0])
    refined, common, total = lineage_stats(mesh, fine)
    assert refined + common == mesh.n_triangles
    assert total == fine.n_triangles
    assert refined >= 1
    with pytest.raises(LineageError):
        lineage_stats(fine, mesh)


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------


def test_shape_regularity_value_of_right_isoceles():
    # diameter / inradius of the unit right isoceles triangle
    expected = np.sqrt(2.0) / (1.0 - np.sqrt(0.5))
    assert shape_regularity(square()) == pytest.approx(expected)
    assert shape_regularity(square()) == pytest.approx(4.828427124746191)


def test_shape_regularity_bounded_along_random_cascades():
    rng = np.random.default_rng(5)
    mesh = crisscross(2)
    base = shape_regularity(mesh)
    for _ in range(12):
        k = max(1, mesh.n_triangles // 6)
        marked = rng.choice(mesh.n_triangles, size=k, replace=False)
        mesh = refine(mesh, [int(m) for m in marked])
        assert shape_regularity(mesh) <= 2.0 * base + 1e-12


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_text_round_trip_preserves_geometry_and_markers():
    mesh = initial_mesh(SQUARE_COORDS, SQUARE_TRIS, {(0, 1): NEUMANN})
    text = save_text(mesh)
    assert text.startswith("afemkit-mesh v1\n")
    back = load_text(text)
    assert back.n_vertices == mesh.n_vertices
    assert back.n_triangles == mesh.n_triangles
    assert np.allclose(back.coords, mesh.coords)
    assert back.boundary == mesh.boundary
    assert {t.v for t in back.triangles} == {t.v for t in mesh.triangles}


def test_text_header_required():
    with pytest.raises(StructureError):
        load_text("not a mesh\n")


def test_binary_round_trip_preserves_refinement_history(tmp_path):
    mesh = refine(crisscross(2), [0, 3, 5])
    path = tmp_path / "mesh.npz"
    save_binary(mesh, path)
    back = load_binary(path)
    assert back.leaf_keys() == mesh.leaf_keys()
    assert np.allclose(back.coords, mesh.coords)
    assert back.boundary == mesh.boundary
    assert back.initial.leaf_keys() == mesh.initial.leaf_keys()
    # lineage operations still work against the restored mesh
    assert _refines(back, back.initial)
    validate(back)


def test_binary_round_trip_of_initial_mesh(tmp_path):
    mesh = crisscross(2)
    path = tmp_path / "mesh.npz"
    save_binary(mesh, path)
    back = load_binary(path)
    assert back.initial is back
    assert back.leaf_keys() == mesh.leaf_keys()

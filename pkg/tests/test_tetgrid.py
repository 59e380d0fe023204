import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focalfuse.sdf import sphere_sdf
from focalfuse.tetgrid import (
    apply_offset_mask,
    build_grid,
    clamp_offsets,
    load_grid,
    marching_tetrahedra,
    mt_backward,
    mt_vertex_gradient,
    save_grid,
)
from mt_oracle import crossing_point, oracle_mt


def single_tet_grid():
    g = build_grid(1)
    # keep one tet; the grid object is only used for its vertices and tets
    g.tets = g.tets[:1]
    return g


class TestBuildGrid:
    def test_single_cube(self):
        g = build_grid((1, 1, 1), ((0, 0, 0), (1, 1, 1)))
        assert g.n_vertices == 8
        assert len(g.tets) == 6

    def test_two_cubed(self):
        g = build_grid(2)
        assert g.n_vertices == 27
        assert len(g.tets) == 48

    def test_counts_match_brute_force(self):
        res = (3, 2, 4)
        g = build_grid(res)
        lattice = set(itertools.product(*[range(r + 1) for r in res]))
        assert g.n_vertices == len(lattice) == np.prod([r + 1 for r in res])
        assert len(g.tets) == 6 * np.prod(res)

    def test_zero_resolution_rejected(self):
        with pytest.raises(ValueError):
            build_grid((0, 2, 2))

    def test_degenerate_bounds_rejected(self):
        with pytest.raises(ValueError):
            build_grid(2, ((0, 0, 0), (1, 0, 1)))

    def test_positive_volumes_and_cube_fill(self):
        g = build_grid(3)
        vol = g.signed_volumes()
        assert np.all(vol > 0)
        assert vol.sum() == pytest.approx(8.0)

    def test_faces_are_shared_conformingly(self):
        # every interior triangle is shared by exactly two tets, boundary ones by one
        g = build_grid(3)
        faces = np.concatenate([g.tets[:, [0, 1, 2]], g.tets[:, [0, 1, 3]], g.tets[:, [0, 2, 3]], g.tets[:, [1, 2, 3]]])
        faces.sort(axis=1)
        uniq, counts = np.unique(faces, axis=0, return_counts=True)
        assert set(counts) == {1, 2}
        pts = g.vertices[uniq]
        same_plane = np.zeros(len(uniq), dtype=bool)
        for k in range(3):
            for v in (-1.0, 1.0):
                same_plane |= np.all(np.isclose(pts[:, :, k], v), axis=1)
        assert np.array_equal(counts == 1, same_plane)

    def test_fields_zero_initialized(self):
        g = build_grid(2)
        assert not g.psi_b.any() and not g.psi_e.any() and not g.offsets.any()

    def test_psi_b_is_read_only(self):
        g = build_grid(2).with_base_sdf(np.ones(27))
        with pytest.raises(ValueError):
            g.psi_b[0] = 3.0


class TestInterpolation:
    def test_exact_on_affine_fields(self, rng):
        g = build_grid(4)
        coef = rng.normal(size=3)
        field = g.vertices @ coef + 0.3
        pts = rng.uniform(-1, 1, size=(500, 3))
        assert np.allclose(g.interpolate(field, pts), pts @ coef + 0.3, atol=1e-12)

    def test_weights_form_partition_of_unity(self, rng):
        g = build_grid(5)
        ids, w = g.locate(rng.uniform(-1, 1, size=(200, 3)))
        assert np.all(w >= -1e-12)
        assert np.allclose(w.sum(axis=1), 1.0)


class TestMarchingTetrahedra:
    def test_single_tet_midpoints(self):
        g = single_tet_grid()
        tet = g.tets[0]
        field = np.zeros(g.n_vertices)
        field[tet] = [1.0, -1.0, -1.0, -1.0]
        mesh = marching_tetrahedra(g, field)
        assert mesh.n_faces == 1
        expected = (g.vertices[tet[0]] + g.vertices[tet[1:]]) / 2
        got = mesh.positions[mesh.faces[0]]
        assert sorted(map(tuple, np.round(got, 12))) == sorted(map(tuple, np.round(expected, 12)))

    def test_all_positive_is_empty(self):
        g = build_grid(2)
        assert marching_tetrahedra(g, np.ones(g.n_vertices)).is_empty()

    def test_negation_reverses_winding(self, rng):
        g = build_grid(4)
        field = rng.normal(size=g.n_vertices)
        a = marching_tetrahedra(g, field)
        b = marching_tetrahedra(g, -field)
        assert np.allclose(a.positions, b.positions)
        fa = {tuple(np.roll(f, -np.argmin(f))) for f in a.faces}
        fb = {tuple(np.roll(f[::-1], -np.argmin(f[::-1]))) for f in b.faces}
        assert fa == fb

    def test_vertices_on_parent_edges_with_zero_interpolant(self, rng):
        g = build_grid(5)
        field = rng.normal(size=g.n_vertices)
        m = marching_tetrahedra(g, field)
        ea, eb = m.crossing_edges.T
        sa, sb = m.crossing_values.T
        t = sa / (sa - sb)
        assert np.all((t > 0) & (t < 1))
        assert np.allclose(sa + t * (sb - sa), 0.0, atol=1e-9)
        assert np.allclose(m.positions, g.vertices[ea] + t[:, None] * (g.vertices[eb] - g.vertices[ea]))

    def test_sphere_is_watertight_and_outward(self):
        g = build_grid(12)
        m = marching_tetrahedra(g, sphere_sdf((0.05, -0.02, 0.01), 0.6, g.vertices))
        assert m.is_watertight()
        assert m.volume() == pytest.approx(4 / 3 * np.pi * 0.6**3, rel=0.05)
        centroids = m.triangles().mean(axis=1) - [0.05, -0.02, 0.01]
        assert np.all(np.einsum("ij,ij->i", m.face_normals(), centroids) > 0)

    def test_exact_zeros_are_perturbed(self):
        g = build_grid(2)
        field = np.where(g.vertices[:, 0] > 0, -1.0, 0.0)
        m = marching_tetrahedra(g, field)
        assert not m.is_empty()
        assert np.all(np.isfinite(m.positions))

    def test_labels(self):
        g = build_grid(4)
        m = marching_tetrahedra(g, sphere_sdf((0, 0, 0), 0.5, g.vertices), label="base")
        assert set(m.face_provenance) == {1}

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_case_table_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = build_grid(4)
        field = rng.normal(size=g.n_vertices)
        m = marching_tetrahedra(g, field)
        edges, faces = oracle_mt(g.vertices, g.tets, field)
        keys = [tuple(e) for e in m.crossing_edges]
        assert set(keys) == edges
        got_faces = {tuple(sorted(keys[i] for i in f)) for f in m.faces}
        assert got_faces == faces
        for k, e in enumerate(keys):
            assert np.allclose(m.positions[k], crossing_point(g.vertices, field, e), atol=1e-9)


class TestMtGradient:
    def test_worked_example(self):
        ga, gb = mt_vertex_gradient([0, 0, 0], [1, 0, 0], 1.0, -1.0, [1, 0, 0])
        assert ga == pytest.approx(0.25) and gb == pytest.approx(0.25)

    def test_zero_upstream(self):
        ga, gb = mt_vertex_gradient([0, 0, 0], [1, 2, 0], 0.3, -0.7, [0, 0, 0])
        assert ga == 0 and gb == 0

    def test_finite_differences(self, rng):
        n = 300
        pa, pb = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        sa, sb = rng.uniform(0.1, 1, n), -rng.uniform(0.1, 1, n)
        up = rng.normal(size=(n, 3))
        ga, gb = mt_vertex_gradient(pa, pb, sa, sb, up)

        def f(sa, sb):
            x = pa + (sa / (sa - sb))[:, None] * (pb - pa)
            return np.sum(up * x, axis=1)

        h = 1e-5
        fa = (f(sa + h, sb) - f(sa - h, sb)) / (2 * h)
        fb = (f(sa, sb + h) - f(sa, sb - h)) / (2 * h)
        assert np.allclose(ga, fa, rtol=1e-6, atol=1e-8)
        assert np.allclose(gb, fb, rtol=1e-6, atol=1e-8)

    def test_backward_matches_finite_differences_on_grid(self, rng):
        g = build_grid(3)
        field = sphere_sdf((0.1, 0, 0), 0.55, g.vertices) + 0.01 * rng.normal(size=g.n_vertices)
        m = marching_tetrahedra(g, field)
        w = rng.normal(size=m.positions.shape)
        grad_field, grad_pos = mt_backward(g, m, w)

        def loss(fld, offsets=None):
            gg = g.copy()
            if offsets is not None:
                gg.offsets = offsets
            mm = marching_tetrahedra(gg, fld)
            assert mm.n_vertices == m.n_vertices
            return np.sum(w * mm.positions)

        h = 1e-6
        for v in np.unique(m.crossing_edges)[:25]:
            e = np.zeros(g.n_vertices)
            e[v] = h
            fd = (loss(field + e) - loss(field - e)) / (2 * h)
            assert grad_field[v] == pytest.approx(fd, rel=1e-5, abs=1e-7)
            for k in range(3):
                off = np.zeros((g.n_vertices, 3))
                off[v, k] = h
                fd = (loss(field, off) - loss(field, -off)) / (2 * h)
                assert grad_pos[v, k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestOffsets:
    def test_mask_examples(self):
        g = build_grid(1)
        g.psi_e = np.array([-0.5, 0.1, 0.0, -0.01, -0.5, -0.5, -0.5, -0.5])
        g.offsets = np.ones((8, 3))
        masked, movable = apply_offset_mask(g, 0.05)
        assert not masked[0].any()
        assert np.array_equal(masked[1], [1, 1, 1])
        assert movable.tolist() == [False, True, True, True, False, False, False, False]
        masked, movable = apply_offset_mask(g, np.inf)
        assert movable.all() and np.array_equal(masked, g.offsets)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 3.0))
    def test_clamp_keeps_tets_positive(self, seed, scale):
        g = build_grid(3)
        rng = np.random.default_rng(seed)
        g.psi_e = rng.normal(size=g.n_vertices)
        raw = rng.normal(scale=scale * 0.3, size=(g.n_vertices, 3))
        masked, _ = apply_offset_mask(g, 0.1, raw)
        out = clamp_offsets(g, masked)
        assert np.all(g.signed_volumes(g.vertices + out) > 0)
        assert np.all(np.linalg.norm(out, axis=1) <= 0.5 * 2 / 3 + 1e-12)
        assert not out[g.psi_e < -0.1].any()

    def test_invalid_fraction(self):
        g = build_grid(2)
        with pytest.raises(ValueError):
            clamp_offsets(g, g.offsets, fraction=0.7)


def test_grid_save_load_roundtrip(tmp_path, rng):
    g = build_grid(3).with_base_sdf(rng.normal(size=64))
    g.psi_e = rng.normal(size=64)
    g.offsets = rng.normal(scale=0.01, size=(64, 3))
    save_grid(tmp_path / "g.npz", g)
    h = load_grid(tmp_path / "g.npz")
    for name in ("vertices", "tets", "psi_b", "psi_e", "offsets", "focal_dist", "bounds"):
        assert np.array_equal(getattr(g, name), getattr(h, name))
    assert h.resolution == g.resolution
    assert not h.psi_b.flags.writeable

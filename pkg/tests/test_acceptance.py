"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in pytest's terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v -s``.
"""

import copy
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, shifted_sphere
from focalfuse.driver import (
    AppearanceConfig,
    GeometryConfig,
    constant_target,
    create_session,
    export_session,
    junction_points,
    run_appearance_stage,
    run_geometry_stage,
    session_report,
)
from focalfuse.focal import make_focal_region
from focalfuse.losses import (
    FocalLossParams,
    collision_loss,
    geometric_focal_loss,
    standin_appearance_objective,
    standin_geometry_objective,
    style_consistency,
)
from focalfuse.mesh import BACKGROUND, BASE, EDITABLE, icosphere
from focalfuse.render import (
    EVAL_ELEVATION,
    R_DEFAULT,
    Camera,
    EnvLight,
    eval_cameras,
    rasterize,
    render_paths,
    sample_cameras,
    segment_bounds,
    shade,
)
from focalfuse.sdf import box_sdf, soft_union, sphere_sdf
from focalfuse.tetgrid import build_grid, marching_tetrahedra, mt_backward, mt_vertex_gradient
from focalfuse.texture import TextureField
from mt_oracle import crossing_point, oracle_mt


def record(n: int, name: str, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {name} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def five_point(f, x, i, h):
    """Fourth-order central difference of scalar f along coordinate i of flat x."""
    def at(delta):
        y = x.copy()
        y[i] += delta
        return f(y)

    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)


def rel_errors(analytic, fd):
    """|g - fd| / max(|g|, |fd|), with the denominator floored at 1e-6 of the
    largest analytic entry so that exact zeros are not compared against
    finite-difference rounding noise."""
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    floor = 1e-6 * max(float(np.abs(analytic).max()), 1e-300)
    return np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)


# criterion 1


def test_criterion_1_soft_union():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 100_000
    a = rng.uniform(-1, 1, n)
    b = np.where(rng.uniform(size=n) < 0.5, a + rng.uniform(-0.3, 0.3, n), rng.uniform(-1, 1, n))
    k = rng.uniform(1e-3, 1.0, n)
    u = soft_union(a, b, k)
    hard = np.maximum(a, b)
    far = np.abs(a - b) >= k
    checks = {
        "lower": np.all(u >= hard),
        "upper": np.all(u <= hard + 0.1 * k + 1e-15),
        "hard max": np.array_equal(u[far], hard[far]),
        "symmetry": np.array_equal(u, soft_union(b, a, k)),
        "worked value": abs(soft_union(0.10, 0.05, 0.15) - 0.1066667) <= 1e-7,
    }
    dt = time.perf_counter() - t0
    ok = all(checks.values()) and dt < 1.0
    failed = [name for name, v in checks.items() if not v]
    assert record(1, "soft union", ok, f"{n} triples, {int(far.sum())} outside the band, {dt:.2f}s"
                  + (f", failed: {failed}" if failed else ""))


# criterion 2


def test_criterion_2_mt_oracle():
    t0 = time.perf_counter()
    g = build_grid(8)
    rng = np.random.default_rng(2)
    mismatches = 0
    max_dev = 0.0
    for _ in range(100):
        field = rng.normal(size=g.n_vertices) + rng.uniform(-1, 1)
        m = marching_tetrahedra(g, field)
        edges, faces = oracle_mt(g.vertices, g.tets, field)
        keys = [tuple(int(v) for v in e) for e in m.crossing_edges]
        got_faces = [tuple(sorted(keys[i] for i in f)) for f in m.faces]
        if set(keys) != edges or len(set(got_faces)) != len(got_faces) or set(got_faces) != faces:
            mismatches += 1
        if keys:
            oracle_pts = np.array([crossing_point(g.vertices, field, e) for e in keys])
            max_dev = max(max_dev, float(np.abs(oracle_pts - m.positions).max()))
    watertight = []
    for center, radius in [((0, 0, 0), 0.6), ((0.13, -0.2, 0.07), 0.45), ((-0.3, 0.3, 0.1), 0.5)]:
        watertight.append(marching_tetrahedra(g, sphere_sdf(center, radius, g.vertices)).is_watertight())
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and max_dev <= 1e-9 and all(watertight) and dt < 30
    assert record(2, "marching tetrahedra oracle", ok,
                  f"100 fields on 8^3, {mismatches} mismatches, max vertex deviation {max_dev:.1e}, "
                  f"spheres watertight {all(watertight)}, {dt:.1f}s")


# criterion 3


def _focal_probes(rng):
    p = FocalLossParams()
    psi = rng.uniform(-0.02, 0.05, 500)
    psi = np.where(np.abs(psi + p.xi) < 1e-3, psi + 3e-3, psi)
    d = rng.uniform(0.05, 1, 500)
    _, grad = geometric_focal_loss(psi, d, p)
    fd = [five_point(lambda x: geometric_focal_loss(x, d, p)[0], psi, i, 1e-5) for i in range(500)]
    return rel_errors(grad, fd)


def _collision_probes(rng):
    b = rng.uniform(-0.5, 0.5, 500)
    e = rng.uniform(-0.5, 0.5, 500)
    e = np.where(np.abs(e) < 1e-3, 0.01, e)
    _, grad = collision_loss(b, e)
    fd = [five_point(lambda x: collision_loss(b, x)[0], e, i, 1e-5) for i in range(500)]
    return rel_errors(grad, fd)


def _style_probes(rng):
    e = TextureField(rng.normal(scale=0.5, size=(4, 4, 4, 8)))
    b = TextureField(rng.normal(scale=0.5, size=(4, 4, 4, 8)))
    interior = rng.uniform(-1, 1, (60, 3))
    boundary = rng.uniform(-1, 1, (20, 3))
    deltas = rng.uniform(-0.01, 0.01, interior.shape)
    _, grad = style_consistency(e, b, interior, boundary, deltas=deltas)
    flat = e.params.reshape(-1).copy()

    def loss(x):
        return style_consistency(TextureField(x.reshape(e.params.shape)), b, interior, boundary, deltas=deltas)[0]

    fd = [five_point(loss, flat, i, 1e-4) for i in range(flat.size)]
    return rel_errors(grad.reshape(-1), fd)


def _standin_probes(rng):
    psi, t = rng.normal(size=500), rng.normal(size=500)
    _, g_geo = standin_geometry_objective(psi, t)
    fd_geo = [five_point(lambda x: standin_geometry_objective(x, t)[0], psi, i, 1e-4) for i in range(500)]
    img, tgt = rng.uniform(size=(12, 14, 3)), rng.uniform(size=(12, 14, 3))
    mask = rng.uniform(size=(12, 14)) < 0.7
    _, g_img = standin_appearance_objective(img, tgt, mask)
    flat = img.reshape(-1)
    fd_img = [five_point(lambda x: standin_appearance_objective(x.reshape(img.shape), tgt, mask)[0], flat, i, 1e-4)
              for i in range(flat.size)]
    return np.concatenate([rel_errors(g_geo, fd_geo), rel_errors(g_img.reshape(-1), fd_img)])


def _mt_probes(rng):
    # per-crossing chain rule
    n = 500
    pa, pb = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    sa, sb = rng.uniform(0.05, 1, n), -rng.uniform(0.05, 1, n)
    up = rng.normal(size=(n, 3))
    ga, gb = mt_vertex_gradient(pa, pb, sa, sb, up)

    def crossing_loss(a, b):
        return np.sum(up * (pa + (a / (a - b))[:, None] * (pb - pa)), axis=1)

    h = 1e-5
    fa = (-crossing_loss(sa + 2 * h, sb) + 8 * crossing_loss(sa + h, sb)
          - 8 * crossing_loss(sa - h, sb) + crossing_loss(sa - 2 * h, sb)) / (12 * h)
    fb = (-crossing_loss(sa, sb + 2 * h) + 8 * crossing_loss(sa, sb + h)
          - 8 * crossing_loss(sa, sb - h) + crossing_loss(sa, sb - 2 * h)) / (12 * h)
    errs = [rel_errors(ga, fa), rel_errors(gb, fb)]

    # whole extraction on a grid: field values and vertex offsets
    g = build_grid(6)
    field = sphere_sdf((0.05, -0.03, 0.02), 0.62, g.vertices) + 0.01 * rng.normal(size=g.n_vertices)
    mesh = marching_tetrahedra(g, field)
    w = rng.normal(size=mesh.positions.shape)
    grad_field, grad_pos = mt_backward(g, mesh, w)

    def field_loss(f):
        return np.sum(w * marching_tetrahedra(g, f).positions)

    def offset_loss(flat_off):
        gg = g.copy()
        gg.offsets = flat_off.reshape(-1, 3)
        return np.sum(w * marching_tetrahedra(gg, field).positions)

    verts = np.unique(mesh.crossing_edges)
    fd_field = [five_point(field_loss, field, v, 1e-6) for v in verts]
    errs.append(rel_errors(grad_field[verts], fd_field))
    flat_off = np.zeros(3 * g.n_vertices)
    idx = rng.choice(np.repeat(3 * verts, 3) + np.tile([0, 1, 2], len(verts)), 150, replace=False)
    fd_pos = [five_point(offset_loss, flat_off, i, 1e-6) for i in idx]
    errs.append(rel_errors(grad_pos.reshape(-1)[idx], fd_pos))
    return np.concatenate(errs)


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    suites = {
        "L_GF": _focal_probes(rng),
        "L_CA": _collision_probes(rng),
        "L_SC": _style_probes(rng),
        "stand-in": _standin_probes(rng),
        "MT": _mt_probes(rng),
    }
    dt = time.perf_counter() - t0
    ok = all(len(e) >= 500 and e.max() < 1e-4 for e in suites.values()) and dt < 120
    detail = ", ".join(f"{k} {len(e)} probes max {e.max():.1e}" for k, e in suites.items())
    assert record(3, "gradient suite", ok, f"{detail}, {dt:.1f}s")


# criterion 4


def test_criterion_4_spot_values():
    sigma1, sigma2, xi = 0.05, 0.01, FocalLossParams().xi
    d, hinge = 0.5, 0.02
    oracle_gf = (1 - np.exp(-d**2 / sigma1)) * np.tanh(hinge / sigma2)
    got_gf, _ = geometric_focal_loss([hinge - xi], [d], FocalLossParams(sigma1, sigma2, xi))
    oracle_ca = max(0.2, 0) * max(0.3, 0)
    got_ca, _ = collision_loss([0.2], [0.3])
    ok = (abs(oracle_gf - 0.957532) <= 1e-6 and abs(got_gf - oracle_gf) <= 1e-12
          and abs(oracle_ca - 0.06) <= 1e-15 and abs(got_ca - oracle_ca) <= 1e-15)
    assert record(4, "focal and collision spot values", ok, f"L_GF {got_gf:.7f}, L_CA {got_ca:.4f}")


# criteria 5, 6, 7 and 10 share one scene


SCENE_REGION = dict(stretch=(0.3, 0.25, 0.25), translation=(0.5, 0.0, 0.0))
BASE_KD = (0.7, 0.3, 0.2)
TARGET_KD = (0.2, 0.35, 0.6)


def locality_target(p):
    return box_sdf((0.5, 0.0, 0.0), (0.18, 0.13, 0.13), p)


def run_locality(out_dir, seed=0):
    """Sphere base, tangent ellipsoid region, box target; 600 steps on 32^3."""
    t0 = time.perf_counter()
    base = shifted_sphere((-0.3, 0.0, 0.0), 0.5, subdivisions=4)
    region = make_focal_region(SCENE_REGION["stretch"], translation=SCENE_REGION["translation"], subdivisions=4)
    session = create_session(base, [region], resolution=32, target_sdf=locality_target, seed=seed,
                             init_iters=3000, init_batch=10240, texture_resolution=16,
                             base_texture=TextureField.constant(BASE_KD, resolution=16),
                             target_image=constant_target(TARGET_KD))
    run_geometry_stage(session, GeometryConfig(steps=600), log_path=out_dir / "geometry_loss.csv")
    files = export_session(session, out_dir / "export", resolution=256)
    return session, base, files, time.perf_counter() - t0


@pytest.fixture(scope="module")
def locality(tmp_path_factory):
    out = tmp_path_factory.mktemp("locality_a")
    session, base, files, dt = run_locality(out)
    return dict(session=session, base=base, files=files, seconds=dt, out=out)


def test_criterion_5_locality(locality):
    t0 = time.perf_counter()
    session, base = locality["session"], locality["base"]
    report = session_report(session, n_samples=100_000)
    merged = session.merged_mesh()
    base_part = merged.select_faces(merged.face_provenance == BASE)
    identical = (base_part.positions.tobytes() == base.positions.tobytes()
                 and base_part.faces.tobytes() == base.faces.tobytes())
    n_edit = int(np.sum(merged.face_provenance == EDITABLE))
    dt = locality["seconds"] + time.perf_counter() - t0
    ok = (report.editable_outside_fraction < 0.02 and identical and report.overlap_volume_fraction < 0.005
          and n_edit > 0 and dt < 300)
    assert record(5, "locality", ok,
                  f"outside fraction {report.editable_outside_fraction:.4f}, base identical {identical}, "
                  f"overlap {report.overlap_volume_fraction:.4f}, {n_edit} editable faces, {dt:.0f}s")


def appearance_run(locality, lambda_sc):
    session = copy.deepcopy(locality["session"])
    digest = session.tex_b.digest()
    t0 = time.perf_counter()
    run_appearance_stage(session, AppearanceConfig(steps=400, lambda_sc=lambda_sc, lambda_b=100.0))
    return session, digest, time.perf_counter() - t0


@pytest.fixture(scope="module")
def styled(locality):
    return appearance_run(locality, 10.0)


def test_criterion_6_dual_path(styled):
    session, digest, dt = styled
    t0 = time.perf_counter()
    merged = session.merged_mesh()
    base = session.base_mesh
    exact, partition, editable_px = True, True, 0
    for cam in eval_cameras(4, resolution=128) + sample_cameras(1, 4, seed=6, resolution=128):
        img, _, _, buf = render_paths(merged, cam, session.base_textures, session.tex_e, session.light)
        alone = shade(rasterize(base, cam), base, session.tex_b, session.light)
        sel = buf.pdm == BASE
        exact &= bool(np.array_equal(img[sel], alone[sel]))
        labels = set(np.unique(buf.pdm).tolist())
        partition &= labels <= {BACKGROUND, BASE, EDITABLE} and bool(np.array_equal(buf.pdm != BACKGROUND,
                                                                                     buf.mask == 1))
        editable_px += int(np.sum(buf.pdm == EDITABLE))
    unchanged = session.tex_b.digest() == digest
    dt += time.perf_counter() - t0
    ok = unchanged and exact and partition and editable_px > 0 and len(session.logs["appearance"]) == 400 and dt < 300
    assert record(6, "dual-path preservation", ok,
                  f"tex_b hash unchanged {unchanged}, base pixels bit-exact {exact}, PDM partition {partition}, "
                  f"{editable_px} editable pixels over 8 views, {dt:.0f}s")


def boundary_deviation(session) -> float:
    merged = session.merged_mesh()
    edit = merged.select_faces(merged.face_provenance == EDITABLE)
    _, boundary = junction_points(session, edit, AppearanceConfig().boundary_cells)
    kd_e, _, _ = session.tex_e.eval(boundary)
    return float(np.mean(np.linalg.norm(kd_e - np.asarray(BASE_KD), axis=1)))


def test_criterion_7_style_consistency(styled, locality):
    session, _, dt_styled = styled
    control, _, dt_control = appearance_run(locality, 0.0)
    dev = boundary_deviation(session)
    dev_control = boundary_deviation(control)
    ok = dev < 0.05 and dev < dev_control and max(dt_styled, dt_control) < 300
    assert record(7, "style consistency", ok,
                  f"boundary deviation {dev:.4f} with L_SC, {dev_control:.4f} without, "
                  f"{dt_styled:.0f}s and {dt_control:.0f}s")


# criterion 8


def test_criterion_8_furnace():
    t0 = time.perf_counter()
    mesh = icosphere(4, 0.8)
    cam = Camera(3.0, 0.35, 0.6, resolution=128)
    buf = rasterize(mesh, cam)
    cover = buf.mask.astype(bool)
    errors = []
    for albedo, radiance in [(0.2, 1.0), (0.5, 1.0), (0.9, 2.5)]:
        tex = TextureField.constant((albedo,) * 3, resolution=2)
        tex.params[..., 4] = -100.0  # metalness 0
        img = shade(buf, mesh, tex, EnvLight.constant(radiance), specular=False)
        errors.append(abs(img[cover].mean() / (albedo * radiance) - 1))
    rng = np.random.default_rng(8)
    tex = TextureField(rng.normal(size=(3, 3, 3, 8)))
    light = EnvLight.constant(1.0)
    light.radiance = rng.uniform(0, 3, light.radiance.shape)
    base = shade(buf, mesh, tex, light)
    lin = max(float(np.max(np.abs(shade(buf, mesh, tex, light.scaled(c)) - c * base))) for c in (0.5, 3.0, 7.25))
    dt = time.perf_counter() - t0
    ok = max(errors) < 0.02 and lin < 1e-9 and dt < 10
    assert record(8, "furnace", ok, f"max relative error {max(errors):.4f}, linearity error {lin:.1e}, {dt:.2f}s")


# criterion 9


def test_criterion_9_cameras():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    bad_segment, bad_count, bad_radius = 0, 0, 0
    for _ in range(10_000):
        s, l = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        cams = sample_cameras(s, l, seed=rng)
        counts = np.zeros(l, dtype=int)
        for k, cam in enumerate(cams):
            d = k % l
            lo, hi = segment_bounds(d, l)
            if not (lo <= cam.azimuth < hi) or not (2 * d * np.pi / l <= cam.azimuth < 2 * (d + 1) * np.pi / l):
                bad_segment += 1
            counts[int(cam.azimuth // (2 * np.pi / l))] += 1
            bad_radius += cam.radius != 3.0
        bad_count += int(np.any(counts != s))
    evals = eval_cameras(8)
    defaults = (R_DEFAULT == 3.0 and EVAL_ELEVATION == np.pi / 4
                and all(c.radius == 3.0 and c.elevation == np.pi / 4 for c in evals))
    dt = time.perf_counter() - t0
    ok = bad_segment == 0 and bad_count == 0 and bad_radius == 0 and defaults and dt < 5
    assert record(9, "camera sampling", ok,
                  f"10000 batches, {bad_segment} out-of-segment, {bad_count} unbalanced, "
                  f"defaults r=3 and elevation pi/4 {defaults}, {dt:.2f}s")


# criterion 10


def test_criterion_10_determinism(locality, tmp_path):
    _, _, files_b, _ = run_locality(tmp_path)
    files_a = locality["files"]
    same_csv = (locality["out"] / "geometry_loss.csv").read_bytes() == (tmp_path / "geometry_loss.csv").read_bytes()
    same_mesh = all(files_a[k].read_bytes() == files_b[k].read_bytes() for k in files_a)
    ok = same_csv and same_mesh
    assert record(10, "determinism", ok, f"loss CSV identical {same_csv}, exported mesh and maps identical {same_mesh}")

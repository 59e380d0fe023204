import numpy as np
import pytest

from focalfuse.focal import make_focal_region
from focalfuse.mesh import TriMesh, merge_meshes
from focalfuse.metrics import (
    eval_preservation,
    editable_outside_fraction,
    hausdorff_distance,
    overlap_volume_fraction,
)
from focalfuse.sdf import sphere_sdf
from conftest import shifted_sphere


def lens_fraction(r, d):
    """Intersection volume of two radius-r spheres at distance d, over one sphere's volume."""
    lens = np.pi * (4 * r + d) * (2 * r - d) ** 2 / 12
    return lens / (4 / 3 * np.pi * r**3)


def test_lens_oracle_value():
    assert lens_fraction(1.0, 1.0) == pytest.approx(5 / 16)


def test_unedited_scene_has_zero_hausdorff():
    base = shifted_sphere((0.1, 0, 0), 0.5).with_provenance("base")
    report = eval_preservation(base, base)
    assert report.hausdorff_base == 0.0
    assert report.overlap_volume_fraction == 0.0
    assert report.editable_outside_fraction == 0.0


def test_hausdorff_of_moved_copy():
    a = shifted_sphere((0, 0, 0), 0.5)
    b = shifted_sphere((0.03, 0, 0), 0.5)
    assert hausdorff_distance(a, b) == pytest.approx(0.03, abs=2e-3)


def test_editable_inside_region_is_local():
    base = shifted_sphere((-0.5, 0, 0), 0.4).with_provenance("base")
    edit = shifted_sphere((0.4, 0, 0), 0.2).with_provenance("editable")
    region = make_focal_region((0.3, 0.3, 0.3), translation=(0.4, 0, 0))
    report = eval_preservation(base, merge_meshes(base, edit), [region], n_samples=20_000)
    assert report.editable_outside_fraction == 0.0
    assert report.hausdorff_base == 0.0


def test_outside_fraction_by_area():
    inside = shifted_sphere((0.4, 0, 0), 0.2, subdivisions=2).with_provenance("editable")
    outside = shifted_sphere((-0.6, 0, 0), 0.2, subdivisions=2).with_provenance("editable")
    region = make_focal_region((0.3, 0.3, 0.3), translation=(0.4, 0, 0))
    assert editable_outside_fraction(merge_meshes(inside, outside), [region]) == pytest.approx(0.5)
    assert editable_outside_fraction(merge_meshes(inside, outside), [region], margin=2.0) == 0.0


def test_two_unit_spheres_analytic_fields():
    expected = lens_fraction(1.0, 1.0)
    got = overlap_volume_fraction(
        lambda p: sphere_sdf((0, 0, 0), 1.0, p),
        lambda p: sphere_sdf((1.0, 0, 0), 1.0, p),
        [[0, -1, -1], [2, 1, 1]],
        n_samples=100_000,
    )
    assert got == pytest.approx(expected, rel=0.02)


def test_two_unit_spheres_from_meshes():
    base = shifted_sphere((-0.5, 0, 0), 1.0, subdivisions=4).with_provenance("base")
    edit = shifted_sphere((0.5, 0, 0), 1.0, subdivisions=4).with_provenance("editable")
    report = eval_preservation(base, merge_meshes(base, edit), n_samples=100_000)
    assert report.overlap_volume_fraction == pytest.approx(lens_fraction(1.0, 1.0), rel=0.02)


def test_missing_labels_rejected():
    base = shifted_sphere((0, 0, 0), 0.5)
    unlabeled = TriMesh(base.positions, base.faces)
    unlabeled.face_provenance = None
    with pytest.raises(ValueError, match="provenance"):
        eval_preservation(base, unlabeled)


def test_report_dict():
    base = shifted_sphere((0, 0, 0), 0.5).with_provenance("base")
    d = eval_preservation(base, base).as_dict()
    assert set(d) == {"hausdorff_base", "editable_outside_fraction", "overlap_volume_fraction"}

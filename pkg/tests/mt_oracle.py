"""Slow per-tet marching tetrahedra written from the 16-entry case table."""

import numpy as np

# inside-mask (bit i = vertex i positive) -> triangles as lists of local edges,
# or a single quad (four local edges in cyclic order) for two-in cases
CASES = {
    0b0000: [],
    0b1111: [],
    0b0001: [[(0, 1), (0, 2), (0, 3)]],
    0b0010: [[(1, 0), (1, 2), (1, 3)]],
    0b0100: [[(2, 0), (2, 1), (2, 3)]],
    0b1000: [[(3, 0), (3, 1), (3, 2)]],
    0b1110: [[(0, 1), (0, 2), (0, 3)]],
    0b1101: [[(1, 0), (1, 2), (1, 3)]],
    0b1011: [[(2, 0), (2, 1), (2, 3)]],
    0b0111: [[(3, 0), (3, 1), (3, 2)]],
    0b0011: "quad",
    0b0101: "quad",
    0b1001: "quad",
    0b0110: "quad",
    0b1010: "quad",
    0b1100: "quad",
}


def oracle_mt(positions, tets, field):
    """Returns (set of edge keys, set of faces as sorted tuples of edge keys)."""
    s = np.where(field == 0.0, 1e-12, field)
    faces = set()
    edges = set()

    def key(a, b):
        return (min(a, b), max(a, b))

    for tet in tets:
        mask = sum(1 << i for i in range(4) if s[tet[i]] > 0)
        case = CASES[mask]
        if case == "quad":
            pos = sorted(int(tet[i]) for i in range(4) if mask >> i & 1)
            neg = sorted(int(tet[i]) for i in range(4) if not mask >> i & 1)
            a, b = pos
            c, d = neg
            tris = [[key(a, c), key(a, d), key(b, d)], [key(a, c), key(b, d), key(b, c)]]
        else:
            tris = [[key(int(tet[i]), int(tet[j])) for i, j in tri] for tri in case]
        for tri in tris:
            edges.update(tri)
            faces.add(tuple(sorted(tri)))
    return edges, faces


def crossing_point(positions, field, edge):
    a, b = edge
    sa, sb = field[a], field[b]
    return positions[a] + sa / (sa - sb) * (positions[b] - positions[a])

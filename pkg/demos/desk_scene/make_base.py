"""Write the unit icosphere that scene.toml uses as its base mesh."""

from pathlib import Path

from focalfuse.io import write_obj
from focalfuse.mesh import icosphere

if __name__ == "__main__":
    path = Path(__file__).with_name("sphere.obj")
    write_obj(path, icosphere(3, 1.0))
    print(f"wrote {path}")

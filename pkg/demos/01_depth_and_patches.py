# Rendering a scene and cutting it into patches
#
# A scene is a union of posed primitives inside the unit cube. The camera is
# orthographic and looks down +z, so each pixel of the depth map is simply the
# z where its ray first touches a surface.

import numpy as np

from hpn.compose import compose_scenes
from hpn.patches import enumerate_patches, sample_query_points
from hpn.render import label_visibility, render_depth

scene = compose_scenes(1, max_objects=3, seed=3, min_objects=3)[0]
for obj in scene.objects:
    print(obj.kind, np.round(obj.params, 3))

depth = render_depth(scene, 128, 128)
print("valid pixels:", depth.valid.sum(), "nearest depth:", depth.depth[depth.valid].min())

# Patches slide over the image at half their size. Each one owns a tall
# cuboid of the scene, the "part", spanning every depth.

for n in (128, 32, 16):
    patches = enumerate_patches(depth, n)
    part = patches[len(patches) // 2].part
    print(f"N={n:3d}: {len(patches):3d} patches, middle part x0={part.x0:.3f} y0={part.y0:.3f} M={part.M:.3f}")

# A backend is asked about the fusion-grid voxel centers inside a part,
# expressed in the part's own [-0.5, 0.5]^3 frame.

q = sample_query_points(enumerate_patches(depth, 32)[0].part, grid_res=32)
print("queries for one N=32 part on a 32^3 grid:", len(q), "local range", q.local.min(), q.local.max())

# Visibility: a point counts as seen when its depth matches the depth map.

front = np.array([[0.5, 0.5, float(depth.depth[64, 64])]])
behind = front + [0, 0, 0.3]
print("visible:", label_visibility(depth, front, 1 / 16), label_visibility(depth, behind, 1 / 16))

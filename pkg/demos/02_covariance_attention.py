"""
Cross-modal covariance attention
================================

The fusion model never looks at pixels directly. Each source image is
cut into overlapping patches, every patch is flattened into a row
vector, and the two row matrices are stacked. The covariance of the
stack is a four-quadrant matrix:

    [ C_irir  C_irvi ]
    [ C_viir  C_vivi ]

The diagonal quadrants describe each modality on its own; the
off-diagonal quadrants tie patches of one modality to patches of the
other. The manifold network turns this matrix into an attention weight
matrix, and multiplying it against the stacked patch rows redistributes
statistical weight across both modalities at once.
"""

import numpy as np

from spdfuse import (
    PatchGeometry,
    composite_covariance,
    extract_patches,
    fold_patches,
    init_model,
    spdam_apply,
    spdnet_forward,
)
from spdfuse.patches import PatchMatrix

rng = np.random.default_rng(1)
size = 64

# ---------------------------------------------------------------------------
# a synthetic pair: a hot blob on the infrared side, texture on the visible

y, x = np.mgrid[0:size, 0:size].astype(float) / (size - 1)
ir = np.exp(-30.0 * ((x - 0.35) ** 2 + (y - 0.4) ** 2))
vi = 0.5 + 0.35 * np.sin(14.0 * x) * np.cos(10.0 * y)

geom = PatchGeometry(image_h=size, image_w=size)
pm_ir = extract_patches(ir, geom)
pm_vi = extract_patches(vi, geom)
n = geom.n_patches
print(f"{size}x{size} image, {geom.patch_size}px patches at stride {geom.stride}:")
print(f"  {n} patches of {geom.patch_len} pixels each")

# ---------------------------------------------------------------------------
# the composite covariance and its quadrants

comp = composite_covariance(pm_ir.rows, pm_vi.rows)
print(f"\ncomposite covariance: {comp.raw.shape[0]}x{comp.raw.shape[1]}")
for name, block in (
    ("C_irir", comp.c_irir),
    ("C_irvi", comp.c_irvi),
    ("C_vivi", comp.c_vivi),
):
    print(
        f"  {name}: {block.shape[0]}x{block.shape[1]}, "
        f"mean |entry| {np.abs(block).mean():.5f}"
    )
print(
    "  cross quadrants are exact transposes:",
    np.array_equal(comp.c_viir, comp.c_irvi.T),
)

# ---------------------------------------------------------------------------
# from covariance to attention weights

model = init_model(geom, seed=1)
xk = spdnet_forward(model.spdnet, comp.c)
print(f"\nattention weight matrix: {xk.shape[0]}x{xk.shape[1]}")
print(f"  symmetric: {np.allclose(xk, xk.T)}")
print(f"  eigenvalue range: [{np.linalg.eigvalsh(xk)[0]:.3f}, "
      f"{np.linalg.eigvalsh(xk)[-1]:.3f}]")

# ---------------------------------------------------------------------------
# applying the attention: every output patch row is a weighted blend of
# ALL input patch rows, infrared and visible alike

stacked = np.vstack([pm_ir.rows, pm_vi.rows])
f_ir, f_vi = spdam_apply(xk, stacked, geom)

# the weight matrix row for one output patch splits into the mass it
# puts on infrared rows vs visible rows
k = n // 2
w_row = xk[k]
print(f"\nattention row for infrared patch {k}:")
print(f"  |weight| on infrared patches: {np.abs(w_row[:n]).sum():.4f}")
print(f"  |weight| on visible patches:  {np.abs(w_row[n:]).sum():.4f}")

# ---------------------------------------------------------------------------
# folding the reweighted rows back into feature planes

feat_ir = fold_patches(f_ir)
feat_vi = fold_patches(f_vi)
print(f"\nfolded feature planes: {feat_ir.shape}, value ranges "
      f"[{feat_ir.min():.3f}, {feat_ir.max():.3f}] / "
      f"[{feat_vi.min():.3f}, {feat_vi.max():.3f}]")

# sanity: folding the untouched patches reproduces the sources exactly
assert np.array_equal(fold_patches(pm_ir), ir)
assert np.array_equal(
    fold_patches(PatchMatrix(rows=pm_vi.rows, geom=geom)), vi
)
print("fold(extract(img)) reproduced both sources bit for bit")

"""Linear blend skinning and skin-weight blending for cut vertices.

Skeletons stay minimal: a topologically sorted bone table with global
inverse bind transforms, plus per-bone local pose transforms. The pose
defaults to the bind pose, so a freshly loaded skeleton maps every
vertex to its bind position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import StructuralError, ValidationError
from .mesh import MAX_SKIN_INFLUENCES, Mesh

Skin = Optional[tuple[tuple[int, float], ...]]


def _check_rigid(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValidationError(f"{what} must be a 4x4 transform")
    r = m[:3, :3]
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
        raise ValidationError(f"{what} rotation is not orthonormal")
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise ValidationError(f"{what} bottom row is not (0, 0, 0, 1)")
    return m


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int                 # -1 for a root
    inverse_bind: np.ndarray    # global bind transform, inverted


class Skeleton:
    """Bone table plus a mutable local pose.

    Bones must be topologically sorted (parent index < own index). The
    pose holds one rigid local transform per bone; ``reset_pose`` puts
    the skeleton back in bind pose.
    """

    def __init__(self, bones: Sequence[Bone]):
        self.bones = list(bones)
        for i, bone in enumerate(self.bones):
            if bone.parent >= i:
                raise ValidationError(
                    f"bone {i} ({bone.name}) has parent {bone.parent}; "
                    "bones must be topologically sorted"
                )
            _check_rigid(bone.inverse_bind, f"bone {bone.name} inverse bind")
        self._bind_locals = self._compute_bind_locals()
        self.pose = [m.copy() for m in self._bind_locals]

    def _compute_bind_locals(self) -> list[np.ndarray]:
        binds = [np.linalg.inv(b.inverse_bind) for b in self.bones]
        locals_ = []
        for i, bone in enumerate(self.bones):
            if bone.parent < 0:
                locals_.append(binds[i])
            else:
                locals_.append(np.linalg.inv(binds[bone.parent]) @ binds[i])
        return locals_

    def __len__(self) -> int:
        return len(self.bones)

    def reset_pose(self) -> None:
        self.pose = [m.copy() for m in self._bind_locals]

    def set_local_pose(self, index: int, transform: np.ndarray) -> None:
        if index < 0 or index >= len(self.bones):
            raise StructuralError(f"no bone {index}")
        self.pose[index] = _check_rigid(transform, f"pose of bone {index}")

    def global_transforms(self) -> np.ndarray:
        """Accumulated pose transforms, shape (bones, 4, 4)."""
        out = np.empty((len(self.bones), 4, 4))
        for i, bone in enumerate(self.bones):
            if bone.parent < 0:
                out[i] = self.pose[i]
            else:
                out[i] = out[bone.parent] @ self.pose[i]
        return out

    def skinning_matrices(self) -> np.ndarray:
        """Per-bone matrices mapping bind-space points to posed points."""
        g = self.global_transforms()
        return np.einsum("bij,bjk->bik", g, np.array([b.inverse_bind for b in self.bones]))


def pose_positions(mesh: Mesh, skeleton: Skeleton) -> np.ndarray:
    """Posed vertex positions under linear blend skinning.

    Unskinned vertices (and unskinned meshes) pass through at their bind
    positions. Raises StructuralError on an out-of-range bone id.
    """
    if mesh.skin_bones is None:
        return mesh.positions.copy()
    bones = mesh.skin_bones
    weights = mesh.skin_weights
    used = bones[bones >= 0]
    if used.size and int(used.max()) >= len(skeleton):
        raise StructuralError(f"skin references bone {int(used.max())} "
                              f"but skeleton has {len(skeleton)}")

    mats = skeleton.skinning_matrices()          # (b, 4, 4)
    hom = np.concatenate([mesh.positions, np.ones((mesh.vertex_count, 1))], axis=1)
    out = np.zeros_like(mesh.positions)
    total = np.zeros(mesh.vertex_count)
    for slot in range(bones.shape[1]):
        b = bones[:, slot]
        w = weights[:, slot]
        live = b >= 0
        if not live.any():
            continue
        transformed = np.einsum("nij,nj->ni", mats[b[live]], hom[live])[:, :3]
        out[live] += w[live, None] * transformed
        total[live] += w[live]
    unskinned = total == 0
    out[unskinned] = mesh.positions[unskinned]
    return out


def blend_weights(skin_a: Skin, skin_b: Skin, t: float) -> Skin:
    """Blend two influence lists at parameter t.

    Influences merge as (1-t)*w_a + t*w_b, are truncated to the 4
    largest (ties broken by lower bone id), and renormalized to sum 1.
    Returns None when both inputs are empty.
    """
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"blend parameter {t} outside [0, 1]")
    merged: dict[int, float] = {}
    for bone, w in skin_a or ():
        sw = (1.0 - t) * w
        if sw > 0.0:
            merged[bone] = merged.get(bone, 0.0) + sw
    for bone, w in skin_b or ():
        sw = t * w
        if sw > 0.0:
            merged[bone] = merged.get(bone, 0.0) + sw
    if not merged:
        return None
    ranked = sorted(merged.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[:MAX_SKIN_INFLUENCES]
    total = sum(w for _, w in kept)
    if total <= 0.0:
        return None
    return tuple(sorted((bone, w / total) for bone, w in kept))

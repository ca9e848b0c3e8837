"""Simplified parametric body model.

Kinematic tree + shape blending + linear blend skinning over part-labeled
vertices. Stands in for a full statistical body model; the JSON file format
is general enough to load real assets converted offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rotation
from .errors import DimensionMismatch, InvalidConfig, IoError, UnknownPart

REPRESENTATIONS = ("angle_axis", "rot6d")


def rep_dim(representation: str) -> int:
    if representation == "angle_axis":
        return 3
    if representation == "rot6d":
        return 6
    raise InvalidConfig(f"unknown representation {representation!r}")


def rotations_from_pose(pose, representation):
    """(J, dim) pose parameters -> (J, 3, 3) rotation matrices."""
    if representation == "angle_axis":
        return rotation.angle_axis_to_matrix(pose)
    return rotation.rot6d_to_matrix(pose)


def rotations_vjp(pose, g, representation):
    if representation == "angle_axis":
        return rotation.angle_axis_to_matrix_vjp(pose, g)
    return rotation.rot6d_to_matrix_vjp(pose, g)


def identity_pose(n_joints, representation):
    """Pose parameters that map every joint to the identity rotation."""
    dim = rep_dim(representation)
    pose = np.zeros((n_joints, dim))
    if representation == "rot6d":
        pose[:, 0] = 1.0
        pose[:, 4] = 1.0
    return pose


@dataclass
class BodyModel:
    parents: np.ndarray          # (J,) int, parents[root] == -1
    rest_offsets: np.ndarray     # (J, 3) meters, joint offset in parent frame
    shape_joint_dirs: np.ndarray   # (N_s, J, 3)
    shape_vertex_dirs: np.ndarray  # (N_s, N_v, 3)
    template_vertices: np.ndarray  # (N_v, 3) meters
    skinning: np.ndarray         # (N_v, J), rows sum to 1
    part_labels: np.ndarray      # (N_v,) int in [1, N_b]
    representation: str = "angle_axis"

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        for name in ("rest_offsets", "shape_joint_dirs", "shape_vertex_dirs",
                     "template_vertices", "skinning"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.part_labels = np.asarray(self.part_labels, dtype=int)
        self.validate()

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_shape(self):
        return self.shape_joint_dirs.shape[0]

    @property
    def n_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def n_parts(self):
        return int(self.part_labels.max())

    @property
    def pose_dim(self):
        """Length of a flat pose vector covering every joint, root included."""
        return self.n_joints * rep_dim(self.representation)

    @property
    def body_pose_dim(self):
        """Pose vector length excluding the global root joint."""
        return (self.n_joints - 1) * rep_dim(self.representation)

    def validate(self):
        j = self.n_joints
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, j)):
            raise InvalidConfig("joints must be topologically ordered with a single root")
        if self.rest_offsets.shape != (j, 3):
            raise InvalidConfig("rest_offsets shape mismatch")
        if self.skinning.shape != (self.n_vertices, j):
            raise InvalidConfig("skinning shape mismatch")
        if np.max(np.abs(self.skinning.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidConfig("skinning rows must sum to 1")
        if self.part_labels.min() < 1:
            raise InvalidConfig("part labels start at 1")
        counts = np.bincount(self.part_labels, minlength=self.n_parts + 1)[1:]
        if np.any(counts == 0):
            raise InvalidConfig("every part index must own at least one vertex")
        if self.representation not in REPRESENTATIONS:
            raise InvalidConfig(f"unknown representation {self.representation!r}")

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {
            "parents": self.parents.tolist(),
            "rest_offsets": self.rest_offsets.ravel().tolist(),
            "shape_joint_dirs": self.shape_joint_dirs.ravel().tolist(),
            "shape_vertex_dirs": self.shape_vertex_dirs.ravel().tolist(),
            "template_vertices": self.template_vertices.ravel().tolist(),
            "skinning": self.skinning.ravel().tolist(),
            "part_labels": self.part_labels.tolist(),
            "representation": self.representation,
            "n_shape": int(self.n_shape),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            parents = np.asarray(d["parents"], dtype=int)
            j = len(parents)
            ns = int(d["n_shape"])
            labels = np.asarray(d["part_labels"], dtype=int)
            nv = len(labels)
            return cls(
                parents=parents,
                rest_offsets=np.asarray(d["rest_offsets"], dtype=float).reshape(j, 3),
                shape_joint_dirs=np.asarray(d["shape_joint_dirs"], dtype=float).reshape(ns, j, 3),
                shape_vertex_dirs=np.asarray(d["shape_vertex_dirs"], dtype=float).reshape(ns, nv, 3),
                template_vertices=np.asarray(d["template_vertices"], dtype=float).reshape(nv, 3),
                skinning=np.asarray(d["skinning"], dtype=float).reshape(nv, j),
                part_labels=labels,
                representation=d["representation"],
            )
        except (KeyError, ValueError) as exc:
            raise IoError(f"bad body model file: {exc}") from exc

    def save(self, path, metadata=None):
        d = self.to_dict()
        if metadata is not None:
            d["metadata"] = metadata
        with open(path, "w") as fh:
            json.dump(d, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise IoError(str(exc)) from exc


@dataclass
class PosedBody:
    joints3d: np.ndarray   # (J, 3)
    vertices: np.ndarray   # (N_v, 3)
    part_labels: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def pose_body(model: BodyModel, pose, shape) -> PosedBody:
    """Forward kinematics plus linear blend skinning.

    ``pose`` is a flat vector of per-joint rotation parameters (root first)
    in the model's representation; ``shape`` has length N_s.
    """
    dim = rep_dim(model.representation)
    pose = np.asarray(pose, dtype=float).reshape(-1)
    shape = np.asarray(shape, dtype=float).reshape(-1)
    j = model.n_joints
    if pose.size != j * dim:
        raise DimensionMismatch(
            f"pose has {pose.size} values, model expects {j * dim}")
    if shape.size != model.n_shape:
        raise DimensionMismatch(
            f"shape has {shape.size} values, model expects {model.n_shape}")
    pose = pose.reshape(j, dim)

    offsets = model.rest_offsets + np.einsum("s,sjk->jk", shape, model.shape_joint_dirs)
    template = model.template_vertices + np.einsum("s,svk->vk", shape, model.shape_vertex_dirs)

    local_rot = rotations_from_pose(pose, model.representation)

    glob_rot = np.empty((j, 3, 3))
    glob_t = np.empty((j, 3))
    rest_glob = np.empty((j, 3))
    for i in range(j):
        p = model.parents[i]
        if p < 0:
            glob_rot[i] = local_rot[i]
            glob_t[i] = offsets[i]
            rest_glob[i] = offsets[i]
        else:
            glob_rot[i] = glob_rot[p] @ local_rot[i]
            glob_t[i] = glob_rot[p] @ offsets[i] + glob_t[p]
            rest_glob[i] = rest_glob[p] + offsets[i]

    # LBS: v' = sum_j w_ij (Rg_j (T_i - rest_j) + t_j)
    rotated = np.einsum("jab,vb->jva", glob_rot, template) \
        - np.einsum("jab,jb->ja", glob_rot, rest_glob)[:, None, :]
    vertices = np.einsum("vj,jva->va", model.skinning, rotated + glob_t[:, None, :])

    cache = dict(pose=pose, shape=shape, offsets=offsets, template=template,
                 local_rot=local_rot, glob_rot=glob_rot, glob_t=glob_t,
                 rest_glob=rest_glob)
    return PosedBody(joints3d=glob_t.copy(), vertices=vertices,
                     part_labels=model.part_labels, cache=cache)


def pose_body_vjp(model: BodyModel, posed: PosedBody, g_joints, g_vertices):
    """Reverse sweep of ``pose_body``: returns (g_pose flat, g_shape)."""
    c = posed.cache
    j = model.n_joints
    glob_rot, glob_t = c["glob_rot"], c["glob_t"]
    rest_glob, template = c["rest_glob"], c["template"]
    w = model.skinning

    g_joints = np.zeros((j, 3)) if g_joints is None else np.asarray(g_joints, dtype=float)
    if g_vertices is None:
        g_vertices = np.zeros((model.n_vertices, 3))
    g_vertices = np.asarray(g_vertices, dtype=float)

    g_Rg = np.zeros((j, 3, 3))
    g_t = g_joints.copy()
    g_rest = np.zeros((j, 3))
    g_template = np.zeros_like(template)

    # LBS backward.
    wv = w.T[:, :, None] * g_vertices[None, :, :]      # (J, N_v, 3)
    g_t += wv.sum(axis=1)
    local_pts = template[None, :, :] - rest_glob[:, None, :]
    g_Rg += np.einsum("jva,jvb->jab", wv, local_pts)
    back = np.einsum("jba,jvb->jva", glob_rot, wv)     # Rg^T applied
    g_template += back.sum(axis=0)
    g_rest -= back.sum(axis=1)

    # Kinematic recursion backward (children before parents).
    g_local = np.zeros_like(glob_rot)
    g_offsets = np.zeros((j, 3))
    local_rot = c["local_rot"]
    offsets = c["offsets"]
    for i in range(j - 1, -1, -1):
        p = model.parents[i]
        if p < 0:
            g_local[i] += g_Rg[i]
            g_offsets[i] += g_t[i]
            g_offsets[i] += g_rest[i]
        else:
            g_Rg[p] += g_Rg[i] @ local_rot[i].T
            g_local[i] += glob_rot[p].T @ g_Rg[i]
            g_Rg[p] += np.outer(g_t[i], offsets[i])
            g_offsets[i] += glob_rot[p].T @ g_t[i]
            g_t[p] += g_t[i]
            g_offsets[i] += g_rest[i]
            g_rest[p] += g_rest[i]

    g_pose = rotations_vjp(c["pose"], g_local, model.representation)
    g_shape = np.einsum("sjk,jk->s", model.shape_joint_dirs, g_offsets) \
        + np.einsum("svk,vk->s", model.shape_vertex_dirs, g_template)
    return g_pose.ravel(), g_shape


def part_vertices(posed: PosedBody, k: int):
    """Vertices of the posed body labeled with part index ``k``, stable order."""
    n_parts = int(posed.part_labels.max())
    if not 1 <= k <= n_parts:
        raise UnknownPart(f"part {k} outside [1, {n_parts}]")
    return posed.vertices[posed.part_labels == k]


def make_synthetic_model(seed=0, n_joints=24, n_shape=10, n_vertices=200,
                         n_parts=6, representation="angle_axis") -> BodyModel:
    """Deterministic humanoid-like synthetic model.

    ``n_joints`` counts the global root; the default 24 = root + 23 body
    joints. A chain-with-branches tree approximates a humanoid hierarchy.
    """
    if n_parts < 1 or n_vertices < n_parts:
        raise InvalidConfig("need n_vertices >= n_parts >= 1")
    if n_joints < 2:
        raise InvalidConfig("need at least a root and one body joint")
    rng = np.random.default_rng(seed)

    # Tree: each joint attaches to a random earlier joint, biased to recent
    # ones so limbs form chains.
    parents = np.full(n_joints, -1, dtype=int)
    for i in range(1, n_joints):
        lo = max(0, i - 4)
        parents[i] = rng.integers(lo, i)

    rest_offsets = np.zeros((n_joints, 3))
    rest_offsets[1:] = rng.normal(scale=0.12, size=(n_joints - 1, 3))
    # Keep bone lengths bounded away from zero.
    norms = np.linalg.norm(rest_offsets[1:], axis=1, keepdims=True)
    rest_offsets[1:] *= (0.08 + norms) / norms

    shape_joint_dirs = rng.normal(scale=0.01, size=(n_shape, n_joints, 3))
    shape_joint_dirs[:, 0, :] = 0.0

    # Vertices cluster around joints; the owning joint dominates the skinning.
    owner = rng.integers(0, n_joints, size=n_vertices)
    rest_glob = np.zeros((n_joints, 3))
    for i in range(1, n_joints):
        rest_glob[i] = rest_glob[parents[i]] + rest_offsets[i]
    template = rest_glob[owner] + rng.normal(scale=0.05, size=(n_vertices, 3))

    skinning = np.zeros((n_vertices, n_joints))
    skinning[np.arange(n_vertices), owner] = 0.8
    second = np.where(owner > 0, parents[owner], 0)
    skinning[np.arange(n_vertices), second] += 0.2

    shape_vertex_dirs = rng.normal(scale=0.01, size=(n_shape, n_vertices, 3))

    # Parts follow the owning joint so labels are spatially coherent.
    part_of_joint = (np.arange(n_joints) * n_parts) // n_joints + 1
    part_labels = part_of_joint[owner]
    # Guarantee every part is populated, stealing from the largest part.
    for k in range(1, n_parts + 1):
        if not np.any(part_labels == k):
            counts = np.bincount(part_labels, minlength=n_parts + 1)
            donor = int(np.argmax(counts))
            part_labels[np.argmax(part_labels == donor)] = k

    return BodyModel(
        parents=parents,
        rest_offsets=rest_offsets,
        shape_joint_dirs=shape_joint_dirs,
        shape_vertex_dirs=shape_vertex_dirs,
        template_vertices=template,
        skinning=skinning,
        part_labels=part_labels,
        representation=representation,
    )

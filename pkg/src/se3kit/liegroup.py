"""Rigid transforms in SE(3) and their tangent-space operators.

Twists are 6-vectors ordered translation-first: xi = (rho, phi), rho in mm
(or mm/s), phi in rad (or rad/s).  Rotations are plain 3x3 numpy arrays,
poses are (rotation, translation) pairs.  exp and log are evaluated in
closed form; the left Jacobian is exposed as an explicit partial sum so
callers can pick the truncation order.

Units are mm and rad throughout the package.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import (
    ApproximationDomainError,
    GimbalLockError,
    PrincipalBranchError,
    StructureError,
)

# Below this rotation angle the trig coefficient ratios (sin x / x etc.) are
# replaced by their Taylor forms; the closed forms lose precision well before
# they hit an actual 0/0.
_TINY_ANGLE = 1e-8

# log() rejects rotations within this margin of pi, where the axis can no
# longer be recovered from R - R^T and the principal branch degenerates.
_BRANCH_MARGIN = 1e-6

# vee() rejects matrices whose skew / zero-row structure deviates more than
# this (a symmetric component would be silently discarded otherwise).
_HAT_STRUCTURE_TOL = 1e-9

# pose_to_euler() rejects pitches within this margin of +/-pi/2.
_GIMBAL_MARGIN = 1e-6

# bch_compose() refuses flagged arguments with norm above this; the
# first-order truncation error grows quadratically in the flagged norm.
_BCH_MAX_SMALL_NORM = 0.5

# Series order used to build the Jacobian that bch_compose inverts
# numerically.  At the 0.5 domain edge the order-16 remainder is below
# 1e-15, so composition error is dominated by the genuine BCH truncation
# instead of Jacobian truncation.
_BCH_JACOBIAN_ORDER = 16


@dataclasses.dataclass(frozen=True)
class Twist:
    """Tangent-space element: translational part first, rotational second."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if rho.shape != (3,) or phi.shape != (3,):
            raise ValueError("rho and phi must be 3-vectors")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=float)
        if v.shape != (6,):
            raise ValueError(f"twist vector must have shape (6,), got {v.shape}")
        return cls(v[:3], v[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def __array__(self, dtype=None, copy=None):
        vec = self.vector
        return vec.astype(dtype) if dtype is not None else vec

    def __neg__(self) -> "Twist":
        return Twist(-self.rho, -self.phi)


class Pose:
    """Element of SE(3): 3x3 rotation plus translation in mm.

    Composition is ``a @ b``; ``inverse()`` satisfies
    ``p @ p.inverse() == identity`` to machine precision.  Long composition
    chains can be cleaned up with ``renormalized()``, which projects the
    rotation back onto SO(3).
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if translation.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {translation.shape}")
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def apply(self, point) -> np.ndarray:
        """Map a point (or stack of points) from this frame to the parent."""
        point = np.asarray(point, dtype=float)
        return point @ self.rotation.T + self.translation

    def renormalized(self) -> "Pose":
        # Nearest rotation in the Frobenius sense, via the polar factor.
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
        return Pose(r, self.translation)

    def __repr__(self):
        t = np.array2string(self.translation, precision=4, suppress_small=True)
        return f"Pose(t={t}, ...)"


def hat3(v) -> np.ndarray:
    """3-vector to skew-symmetric matrix."""
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee3(m) -> np.ndarray:
    """Inverse of hat3; assumes m is skew."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _as_twist(xi) -> Twist:
    if isinstance(xi, Twist):
        return xi
    return Twist.from_vector(xi)


def hat(xi) -> np.ndarray:
    """Twist to 4x4 Lie-algebra matrix: skew(phi) block plus rho column."""
    xi = _as_twist(xi)
    m = np.zeros((4, 4))
    m[:3, :3] = hat3(xi.phi)
    m[:3, 3] = xi.rho
    return m


def vee(m) -> Twist:
    """4x4 algebra matrix back to a twist.

    Raises StructureError when the top-left block is not skew or the bottom
    row is not zero (tolerance 1e-9): a symmetric component has no preimage
    and discarding it silently would corrupt downstream covariances.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        raise StructureError(f"expected 4x4 matrix, got {m.shape}")
    sym = m[:3, :3] + m[:3, :3].T
    if np.max(np.abs(sym)) > _HAT_STRUCTURE_TOL or np.max(np.abs(m[3, :])) > _HAT_STRUCTURE_TOL:
        raise StructureError("matrix does not have hat structure (skew block, zero bottom row)")
    return Twist(m[:3, 3].copy(), vee3(m[:3, :3]))


def _so3_coefficients(angle: float):
    """(sin x/x, (1-cos x)/x^2, (x-sin x)/x^3) with Taylor guards."""
    if angle < _TINY_ANGLE:
        a2 = angle * angle
        return 1.0 - a2 / 6.0, 0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0
    a2 = angle * angle
    half_sinc = math.sin(0.5 * angle) / (0.5 * angle)
    return (
        math.sin(angle) / angle,
        # 2 sin^2(x/2) / x^2; the algebraically equal (1 - cos x)/x^2 loses
        # every significant digit just above the series guard
        0.5 * half_sinc * half_sinc,
        (angle - math.sin(angle)) / (a2 * angle),
    )


def exp(xi) -> Pose:
    """Exponential map se(3) -> SE(3), closed form.

    Rotation by the Rodrigues formula; translation through the SO(3) left
    Jacobian V so that exp is exact for any angle (no series truncation).
    """
    xi = _as_twist(xi)
    angle = float(np.linalg.norm(xi.phi))
    a, b, c = _so3_coefficients(angle)
    k = hat3(xi.phi)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rot, v @ xi.rho)


def log(p: Pose) -> Twist:
    """Logarithmic map SE(3) -> se(3), principal branch (|phi| <= pi).

    Raises PrincipalBranchError when the rotation angle is within 1e-6 of
    pi: the preimage is not unique there and a silently chosen branch would
    corrupt any covariance propagated through the result.
    """
    rot = p.rotation
    cos_angle = 0.5 * (np.trace(rot) - 1.0)
    angle = math.acos(min(1.0, max(-1.0, cos_angle)))
    if angle >= math.pi - _BRANCH_MARGIN:
        raise PrincipalBranchError(
            f"rotation angle {angle:.9f} rad is within 1e-6 of pi; log is not single-valued there"
        )
    w = vee3(rot - rot.T)  # = 2 sin(angle) * axis
    if angle < _TINY_ANGLE:
        phi = 0.5 * w  # next correction is O(angle^2) relative, below eps here
    else:
        phi = (0.5 * angle / math.sin(angle)) * w
    k = hat3(phi)
    k2 = k @ k
    if angle < _TINY_ANGLE:
        coeff = 1.0 / 12.0 + angle * angle / 720.0
    else:
        a, b, _ = _so3_coefficients(angle)
        coeff = (1.0 - 0.5 * a / b) / (angle * angle)
    v_inv = np.eye(3) - 0.5 * k + coeff * k2
    return Twist(v_inv @ p.translation, phi)


def adjoint(p: Pose) -> np.ndarray:
    """Group adjoint Ad(p): block [[C, t^ C], [0, C]], maps local twists to
    the frame p is expressed in."""
    c = p.rotation
    out = np.zeros((6, 6))
    out[:3, :3] = c
    out[:3, 3:] = hat3(p.translation) @ c
    out[3:, 3:] = c
    return out


def ad(xi) -> np.ndarray:
    """Algebra adjoint (curly hat): block [[phi^, rho^], [0, phi^]]."""
    xi = _as_twist(xi)
    pk = hat3(xi.phi)
    out = np.zeros((6, 6))
    out[:3, :3] = pk
    out[:3, 3:] = hat3(xi.rho)
    out[3:, 3:] = pk
    return out


def left_jacobian(xi, order: int = 2) -> np.ndarray:
    """Partial sum of J = sum_n (xi^curly)^n / (n+1)! up to `order`.

    Order 2 is the default operating truncation; higher orders serve as
    oracles and as the near-exact inverse used by bch_compose.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    x = ad(xi)
    term = np.eye(6)
    total = np.eye(6)
    for n in range(1, order + 1):
        term = term @ x / (n + 1)
        total = total + term
    return total


def inv_left_jacobian(xi) -> np.ndarray:
    """Second-order Bernoulli truncation I - 1/2 xi^curly + 1/12 (xi^curly)^2."""
    x = ad(xi)
    return np.eye(6) - 0.5 * x + (x @ x) / 12.0


def bch_compose(xi1, xi2, small: str = "first") -> Twist:
    """First-order BCH combination of log(exp(xi1) exp(xi2)).

    `small` flags which argument is the perturbation: "first" returns
    J(xi2)^-1 xi1 + xi2, "second" returns xi1 + J(-xi1)^-1 xi2.  The flagged
    argument must have norm <= 0.5; beyond that the dropped O(|small|^2)
    terms are no longer negligible and the call raises.
    """
    xi1 = _as_twist(xi1)
    xi2 = _as_twist(xi2)
    if small not in ("first", "second"):
        raise ValueError('small must be "first" or "second"')
    flagged = xi1 if small == "first" else xi2
    norm = float(np.linalg.norm(flagged.vector))
    if norm > _BCH_MAX_SMALL_NORM:
        raise ApproximationDomainError(
            f"flagged argument norm {norm:.4g} exceeds {_BCH_MAX_SMALL_NORM}; "
            "first-order BCH is only valid for a small flagged argument"
        )
    if small == "first":
        j = left_jacobian(xi2, order=_BCH_JACOBIAN_ORDER)
        return Twist.from_vector(np.linalg.solve(j, xi1.vector) + xi2.vector)
    j = left_jacobian(-xi1, order=_BCH_JACOBIAN_ORDER)
    return Twist.from_vector(xi1.vector + np.linalg.solve(j, xi2.vector))


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_pose(x, y, z, alpha, beta, gamma) -> Pose:
    """Extrinsic-xyz Euler pose: R = Rz(gamma) Ry(beta) Rx(alpha),
    translation (x, y, z) mm."""
    rot = _rot_z(gamma) @ _rot_y(beta) @ _rot_x(alpha)
    return Pose(rot, np.array([x, y, z], dtype=float))


def pose_to_euler(p: Pose):
    """Pose back to (x, y, z, alpha, beta, gamma), extrinsic-xyz.

    Raises GimbalLockError when the pitch is within 1e-6 of +/-pi/2, where
    alpha and gamma are no longer separable.
    """
    rot = p.rotation
    beta = math.atan2(-rot[2, 0], math.hypot(rot[2, 1], rot[2, 2]))
    if abs(abs(beta) - 0.5 * math.pi) < _GIMBAL_MARGIN:
        raise GimbalLockError(
            f"pitch {beta:.9f} rad is within 1e-6 of +/-pi/2; euler decomposition is ambiguous"
        )
    alpha = math.atan2(rot[2, 1], rot[2, 2])
    gamma = math.atan2(rot[1, 0], rot[0, 0])
    x, y, z = p.translation
    return float(x), float(y), float(z), alpha, beta, gamma

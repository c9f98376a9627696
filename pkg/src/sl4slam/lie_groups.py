"""Matrix Lie-group machinery for 15-DOF projective transforms.

Unit-determinant 4x4 real matrices act on homogeneous 3D points (15 degrees
of freedom); their tangent space is the algebra of trace-free matrices. The
module provides the generator basis, hat/vee maps, exponential and principal
logarithm, and the adjoint representation. A similarity-transform type with
the same tooling (7 generators) backs the baseline alignment mode and
trajectory evaluation.

Conventions fixed here and relied on everywhere else:

* Tangent vectors are ordered as the 12 single-entry off-diagonal generators
  E_01, E_02, E_03, E_10, E_12, E_13, E_20, E_21, E_23, E_30, E_31, E_32
  followed by the three diagonal generators diag(1,-1,0,0), diag(0,1,-1,0),
  diag(0,0,1,-1).
* vec() is row-major, so vec(A X B) = (A kron B^T) vec(X) and the adjoint of
  H is pinv(B) (H kron H^-T) B with B stacking vec(G_k) as columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, LogDomainError, PointAtInfinity

SL4_DIM = 15
SIM3_DIM = 7

_I4 = np.eye(4)

# Off-diagonal (row, col) slots in tangent order; the three diagonal
# generators occupy slots 12..14.
_OFF_DIAG = (
    (0, 1), (0, 2), (0, 3),
    (1, 0), (1, 2), (1, 3),
    (2, 0), (2, 1), (2, 3),
    (3, 0), (3, 1), (3, 2),
)


def _sl4_generators() -> np.ndarray:
    gens = np.zeros((SL4_DIM, 4, 4))
    for k, (a, b) in enumerate(_OFF_DIAG):
        gens[k, a, b] = 1.0
    gens[12] = np.diag([1.0, -1.0, 0.0, 0.0])
    gens[13] = np.diag([0.0, 1.0, -1.0, 0.0])
    gens[14] = np.diag([0.0, 0.0, 1.0, -1.0])
    gens.setflags(write=False)
    return gens


def _sim3_generators() -> np.ndarray:
    """Translation (3), rotation (3), isotropic scale (1) as 4x4 matrices."""
    gens = np.zeros((SIM3_DIM, 4, 4))
    gens[0, 0, 3] = 1.0
    gens[1, 1, 3] = 1.0
    gens[2, 2, 3] = 1.0
    gens[3, 2, 1], gens[3, 1, 2] = 1.0, -1.0
    gens[4, 0, 2], gens[4, 2, 0] = 1.0, -1.0
    gens[5, 1, 0], gens[5, 0, 1] = 1.0, -1.0
    gens[6, 0, 0] = gens[6, 1, 1] = gens[6, 2, 2] = 1.0
    gens.setflags(write=False)
    return gens


@dataclass(frozen=True)
class GeneratorBasis:
    """A generator set with its stacked-vec matrix and left pseudoinverse."""

    name: str
    generators: np.ndarray  # (dim, 4, 4)
    stacked: np.ndarray     # (16, dim), columns are row-major vec(G_k)
    pinv: np.ndarray        # (dim, 16), (B^T B)^-1 B^T

    @classmethod
    def from_generators(cls, name: str, gens: np.ndarray) -> "GeneratorBasis":
        b = gens.reshape(len(gens), 16).T.copy()
        pinv = np.linalg.solve(b.T @ b, b.T)
        b.setflags(write=False)
        pinv.setflags(write=False)
        return cls(name, gens, b, pinv)

    @property
    def dim(self) -> int:
        return len(self.generators)


SL4_BASIS = GeneratorBasis.from_generators("sl4", _sl4_generators())
SIM3_BASIS = GeneratorBasis.from_generators("sim3", _sim3_generators())


def generators() -> list[np.ndarray]:
    """The fifteen trace-free 4x4 generators, in the fixed tangent order."""
    return [g.copy() for g in SL4_BASIS.generators]


def hat(xi: np.ndarray) -> np.ndarray:
    """Map a 15-vector to its trace-free 4x4 algebra element."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (SL4_DIM,):
        raise ValueError(f"expected a 15-vector, got shape {xi.shape}")
    m = np.zeros((4, 4))
    for k, (a, b) in enumerate(_OFF_DIAG):
        m[a, b] = xi[k]
    m[0, 0] = xi[12]
    m[1, 1] = xi[13] - xi[12]
    m[2, 2] = xi[14] - xi[13]
    m[3, 3] = -xi[14]
    return m


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`; rejects matrices with non-negligible trace.

    A nonzero trace signals a caller bug: algebra elements are trace-free by
    construction, so the tolerance is tight (1e-9).
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
    tr = float(np.trace(m))
    if abs(tr) >= 1e-9:
        raise ValueError(f"matrix has trace {tr:.3e}, not an algebra element")
    xi = np.empty(SL4_DIM)
    for k, (a, b) in enumerate(_OFF_DIAG):
        xi[k] = m[a, b]
    xi[12] = m[0, 0]
    xi[13] = m[0, 0] + m[1, 1]
    xi[14] = -m[3, 3]
    return xi


class Homography:
    """A 4x4 projective transform with unit determinant.

    Instances are immutable: the wrapped array is marked read-only so values
    can be shared freely between threads.
    """

    __slots__ = ("m",)

    def __init__(self, m: np.ndarray):
        m = np.array(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        det = float(np.linalg.det(m))
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"determinant {det!r} is not 1 within 1e-9")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("Homography is immutable")

    @classmethod
    def identity(cls) -> "Homography":
        return cls(_I4)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        """Rescale an arbitrary 4x4 matrix to unit determinant.

        4x4 matrices admit a real unit-determinant rescaling only when the
        determinant is positive (the quartic root of a negative number is
        complex and flipping the sign does not change the determinant).
        """
        m = np.asarray(m, dtype=float)
        det = float(np.linalg.det(m))
        if not np.isfinite(det) or det <= 0.0:
            raise ValueError(f"cannot normalize matrix with determinant {det!r}")
        return cls(m / det ** 0.25)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        return Homography.from_matrix(self.m @ other.m)

    def __matmul__(self, other: "Homography") -> "Homography":
        return self.compose(other)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (n, 3) points through homogeneous coordinates."""
        return transform_points(self.m, points)

    def __repr__(self) -> str:
        return f"Homography({self.m.tolist()})"


def transform_points(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a 4x4 transform to (n, 3) points and dehomogenize."""
    pts = np.asarray(points, dtype=float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ph = np.hstack([pts, np.ones((len(pts), 1))])
    out = ph @ np.asarray(m).T
    w = out[:, 3]
    if np.any(np.abs(w) <= 1e-12):
        raise PointAtInfinity("transformed point has vanishing w-component")
    res = out[:, :3] / w[:, None]
    return res[0] if squeeze else res


def matrix_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a Taylor core.

    The argument is scaled by a power of two until its norm is below 1/2,
    an 18-term series is summed (truncation error below double precision at
    that norm), and the result is squared back. Converges for any input.
    """
    a = np.asarray(a, dtype=float)
    eye = np.eye(len(a))
    norm = np.linalg.norm(a, np.inf)
    if norm == 0.0:
        return eye.copy()
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5))))
    scaled = a / (2.0 ** squarings)
    total = eye + scaled
    term = scaled
    for k in range(2, 19):
        term = term @ scaled / k
        total = total + term
    for _ in range(squarings):
        total = total @ total
    return total


def exp_sl4(xi: np.ndarray) -> Homography:
    """Exponential map: 15-vector to unit-determinant transform."""
    return Homography(matrix_exp(hat(xi)))


def _principal_sqrt(a: np.ndarray, max_iter: int = 64) -> np.ndarray:
    """Principal matrix square root by the coupled Denman-Beavers iteration."""
    y = a
    z = np.eye(len(a))
    for _ in range(max_iter):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z_next = 0.5 * (z + np.linalg.inv(y))
        if not np.all(np.isfinite(y_next)):
            break
        if np.linalg.norm(y_next - y, "fro") <= 1e-15 * max(1.0, np.linalg.norm(y_next, "fro")):
            return y_next
        y, z = y_next, z_next
    raise LogDomainError("matrix square-root iteration did not converge")


def principal_matrix_log(m: np.ndarray, max_roots: int = 60) -> np.ndarray:
    """Principal logarithm by inverse scaling-and-squaring.

    Repeated principal square roots bring the matrix within 0.25 of the
    identity, a Mercator series evaluates the log there, and the result is
    scaled back by the number of roots taken. Eigenvalues on the closed
    negative real axis (or a diverging root iteration) raise
    :class:`LogDomainError` instead of silently returning a non-principal
    branch.
    """
    m = np.asarray(m, dtype=float)
    n = len(m)
    eye = np.eye(n)
    eigs = np.linalg.eigvals(m)
    for lam in eigs:
        if abs(lam) < 1e-300:
            raise LogDomainError("matrix is singular")
        if lam.real <= 0.0 and abs(lam.imag) <= 1e-12 * abs(lam):
            raise LogDomainError(
                f"eigenvalue {lam:.6g} lies on the closed negative real axis"
            )
    a = m
    k = 0
    while np.linalg.norm(a - eye, "fro") > 0.25:
        if k >= max_roots:
            raise LogDomainError("inverse scaling did not reach the identity")
        a = _principal_sqrt(a)
        k += 1
    x = a - eye
    total = x.copy()
    term = x.copy()
    for j in range(2, 81):
        term = term @ x
        contrib = term / j
        if j % 2 == 0:
            total -= contrib
        else:
            total += contrib
        if np.linalg.norm(contrib, "fro") < 1e-18:
            break
    return total * (2.0 ** k)


def log_sl4(h: Homography) -> np.ndarray:
    """Principal logarithm of a unit-determinant transform, as a 15-vector."""
    log_m = principal_matrix_log(h.m)
    # a unit determinant forces a zero trace of the log; remove the
    # rounding-level drift so the strict trace guard in vee never trips.
    log_m = log_m - (np.trace(log_m) / 4.0) * _I4
    return vee(log_m)


def adjoint(h: Homography) -> np.ndarray:
    """The 15x15 matrix with hat(Ad xi) = H hat(xi) H^-1 for all xi."""
    return _basis_adjoint(SL4_BASIS, h.m)


def _basis_adjoint(basis: GeneratorBasis, m: np.ndarray) -> np.ndarray:
    kron = np.kron(m, np.linalg.inv(m).T)
    return basis.pinv @ kron @ basis.stacked


def algebra_adjoint(xi: np.ndarray) -> np.ndarray:
    """ad_xi as a 15x15 matrix: ad_xi eta = vee([hat xi, hat eta])."""
    return _basis_algebra_adjoint(SL4_BASIS, hat(xi))


def _basis_algebra_adjoint(basis: GeneratorBasis, hx: np.ndarray) -> np.ndarray:
    gens = basis.generators
    comm = np.einsum("ij,kjl->kil", hx, gens) - np.einsum("kij,jl->kil", gens, hx)
    return basis.pinv @ comm.reshape(basis.dim, 16).T


def _jacobian_series(ad: np.ndarray, max_terms: int = 40) -> np.ndarray:
    """Right Jacobian sum_{n>=0} (-ad)^n / (n+1)!; converges unconditionally."""
    dim = len(ad)
    total = np.eye(dim)
    term = np.eye(dim)
    for n in range(1, max_terms + 1):
        term = term @ (-ad) / (n + 1)
        total += term
        if np.linalg.norm(term, "fro") < 1e-18:
            break
    return total


def inv_right_jacobian(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of the exponential at xi (15x15)."""
    return np.linalg.inv(_jacobian_series(algebra_adjoint(xi)))


def inv_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of the exponential at xi (15x15)."""
    return np.linalg.inv(_jacobian_series(-algebra_adjoint(xi)))


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform: x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float)
        tra = np.array(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise ValueError("non-finite similarity parameters")
        if np.linalg.norm(rot.T @ rot - np.eye(3), "fro") > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation must be proper (det +1)")
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive, got {self.scale!r}")
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.scale * pts @ self.rotation.T + self.translation
        return out[0] if np.asarray(points).ndim == 1 else out

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        return Sim3Transform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Sim3Transform":
        inv_rot = self.rotation.T
        return Sim3Transform(
            1.0 / self.scale,
            inv_rot,
            -inv_rot @ self.translation / self.scale,
        )

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_homography(self) -> Homography:
        """Promote to a unit-determinant transform (divide by det^(1/4))."""
        return Homography.from_matrix(self.to_matrix())


def similarity_from_matrix(m: np.ndarray, tol: float = 1e-6) -> Sim3Transform | None:
    """Decompose a 4x4 matrix into a similarity, or None if it is not one.

    The matrix counts as (numerically) a similarity when, after normalizing
    the bottom-right entry, the bottom row vanishes and the upper-left block
    is a positive multiple of a rotation within `tol` (relative to the block
    scale). The rotation is snapped to the nearest orthonormal matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4) or abs(m[3, 3]) <= 1e-12:
        return None
    m = m / m[3, 3]
    a = m[:3, :3]
    norm_a = np.linalg.norm(a, "fro")
    if norm_a <= 1e-12 or np.linalg.norm(m[3, :3]) > tol * max(1.0, norm_a):
        return None
    u, svals, vt = np.linalg.svd(a)
    scale = float(np.mean(svals))
    if scale <= 1e-12 or np.max(np.abs(svals - scale)) > tol * scale:
        return None
    rot = u @ vt
    if np.linalg.det(rot) < 0.0:
        return None
    return Sim3Transform(scale, rot, m[:3, 3])


def umeyama_align(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Sim3Transform:
    """Least-squares similarity (or rigid) transform mapping src onto dst.

    Minimizes sum_i ||dst_i - (s R src_i + t)||^2 with s fixed to 1 when
    `with_scale` is false. Requires at least three non-collinear
    correspondences.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must both be (n, 3)")
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    d_src = src - mu_src
    d_dst = dst - mu_dst
    cov = d_dst.T @ d_src / n
    u, svals, vt = np.linalg.svd(cov)
    spread = np.linalg.svd(d_src, compute_uv=False)
    if spread[0] <= 1e-12 or spread[1] <= 1e-9 * spread[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        sign[2, 2] = -1.0
    rot = u @ sign @ vt
    if with_scale:
        var_src = (d_src ** 2).sum() / n
        scale = float((svals * np.diag(sign)).sum() / var_src)
        if scale <= 0.0:
            raise DegenerateConfiguration("non-positive least-squares scale")
    else:
        scale = 1.0
    translation = mu_dst - scale * rot @ mu_src
    return Sim3Transform(scale, rot, translation)


class MatrixGroup:
    """Group operations on raw 4x4 matrices for a fixed generator basis.

    This is the pluggable seam that lets the graph optimizer run on either
    the 15-DOF projective group or the 7-DOF similarity group: both are
    matrix groups whose tangent machinery differs only in the basis.
    """

    def __init__(self, basis: GeneratorBasis, hat_fn=None, vee_fn=None,
                 renormalize_fn=None, double_cover: bool = False):
        self.basis = basis
        self._hat = hat_fn or (lambda xi: np.tensordot(xi, basis.generators, axes=1))
        self._vee = vee_fn or (lambda m: basis.pinv @ np.ravel(m))
        self._renorm = renormalize_fn or (lambda m: m)
        # True when -I is in the group (even-dimension unit determinant):
        # group elements then represent point maps only up to sign.
        self.double_cover = double_cover

    @property
    def dim(self) -> int:
        return self.basis.dim

    def identity(self) -> np.ndarray:
        return np.eye(4)

    def exp(self, xi: np.ndarray) -> np.ndarray:
        return matrix_exp(self._hat(np.asarray(xi, dtype=float)))

    def log(self, m: np.ndarray) -> np.ndarray:
        return self._vee(principal_matrix_log(m))

    def adjoint(self, m: np.ndarray) -> np.ndarray:
        return _basis_adjoint(self.basis, m)

    def inv_right_jacobian(self, xi: np.ndarray) -> np.ndarray:
        ad = _basis_algebra_adjoint(self.basis, self._hat(xi))
        return np.linalg.inv(_jacobian_series(ad))

    def inv_left_jacobian(self, xi: np.ndarray) -> np.ndarray:
        ad = _basis_algebra_adjoint(self.basis, self._hat(xi))
        return np.linalg.inv(_jacobian_series(-ad))

    def renormalize(self, m: np.ndarray) -> np.ndarray:
        return self._renorm(m)


def _renormalize_sl4(m: np.ndarray) -> np.ndarray:
    det = float(np.linalg.det(m))
    if det <= 0.0:
        raise LogDomainError(f"cannot renormalize matrix with determinant {det!r}")
    return m / det ** 0.25


def _traceless_vee(m: np.ndarray) -> np.ndarray:
    return vee(m - (np.trace(m) / 4.0) * _I4)


def _renormalize_sim3(m: np.ndarray) -> np.ndarray:
    sim = similarity_from_matrix(m, tol=1e-3)
    if sim is None:
        raise LogDomainError("matrix drifted off the similarity manifold")
    return sim.to_matrix()


SL4_GROUP = MatrixGroup(SL4_BASIS, hat_fn=hat, vee_fn=_traceless_vee,
                        renormalize_fn=_renormalize_sl4, double_cover=True)
SIM3_GROUP = MatrixGroup(SIM3_BASIS, renormalize_fn=_renormalize_sim3)

"""Symmetric gradient and linearised isentropic Euler operators.

Fields for the Euler system live on ``d + 1`` grid axes, axis 0 being time.
A state ``z = (rho, m, M, q)`` is stored with ``N = (d + 1)(d + 2) / 2``
components in the order ``[rho, m_1..m_d, M (upper triangle, row-major,
without M_dd), q]``; ``M_dd`` is recovered from the zero trace.

The state corresponds to the symmetric ``(d+1) x (d+1)`` matrix
``U = [[M + q I, m], [m^T, rho]]``.  Matrix index ``a < d`` differentiates
along grid axis ``a + 1`` and index ``d`` along the time axis, so the Euler
equations read ``sum_b d_b U_ab = 0`` for every row ``a``.

The potential takes antisymmetric matrix fields ``psi^{ij}`` (``i < j``),
each given by its entries ``psi^{ij}_{kl}`` with ``k < l``.  From
``D^{ij}_k = sum_l d_l psi^{ij}_{kl}`` it solves
``D^{ij}_k = phi^i_{jk} - phi^j_{ik}`` for antisymmetric ``phi^i`` and sets
``U_ab = sum_c d_c phi^a_{bc}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GridError, PreconditionError
from .field import Grid, GridField, HomogeneousOperator, partial

SYM_TOL = 1e-12

# (phi^i_jk, phi^j_ik, phi^k_ij) -> (D^ij_k, D^ik_j, D^jk_i) for i < j < k
TRIPLE_MATRIX = np.array([[1.0, -1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, -1.0, 1.0]])
TRIPLE_INVERSE = np.array([[0.5, -0.5, -0.5], [-0.5, -0.5, -0.5], [-0.5, -0.5, 0.5]])


# ---------------------------------------------------------------------------
# state <-> matrix
# ---------------------------------------------------------------------------

def state_size(d: int) -> int:
    return (d + 1) * (d + 2) // 2


def potential_size(d: int, mode: str = "full") -> int:
    n = d if mode == "spatial" else d + 1
    return (n * (n - 1) // 2) ** 2


def _m_slots(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d) if not (i == j == d - 1)]


def state_from_parts(rho, m, M, q) -> np.ndarray:
    """Pack ``(rho, m, M, q)`` (trailing axes ``(d,)`` and ``(d, d)``) into state vectors."""
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if not np.allclose(M, np.swapaxes(M, -1, -2), rtol=0, atol=SYM_TOL * max(1.0, np.abs(M).max())):
        raise PreconditionError("M must be symmetric")
    tr = np.trace(M, axis1=-2, axis2=-1)
    if np.any(np.abs(tr) > SYM_TOL * max(1.0, np.abs(M).max())):
        raise PreconditionError("M must be trace-free")
    rho = np.asarray(rho, dtype=float)
    parts = [rho[..., None], np.asarray(m, dtype=float)]
    parts.append(np.stack([M[..., i, j] for i, j in _m_slots(d)], axis=-1))
    parts.append(np.asarray(q, dtype=float)[..., None])
    return np.concatenate(parts, axis=-1)


def state_to_matrix(z, d: int | None = None) -> np.ndarray:
    """State vectors (trailing axis N) to symmetric matrices ``(..., d+1, d+1)``."""
    z = np.asarray(z, dtype=float)
    if d is None:
        d = _dim_from_state(z.shape[-1])
    if z.shape[-1] != state_size(d):
        raise GridError(f"state needs {state_size(d)} components, got {z.shape[-1]}")
    U = np.zeros(z.shape[:-1] + (d + 1, d + 1))
    rho, m, q = z[..., 0], z[..., 1:d + 1], z[..., -1]
    slots = _m_slots(d)
    diag_sum = 0.0
    for s, (i, j) in enumerate(slots):
        v = z[..., d + 1 + s]
        U[..., i, j] = v
        U[..., j, i] = v
        if i == j:
            diag_sum = diag_sum + v
    U[..., d - 1, d - 1] = -diag_sum
    for i in range(d):
        U[..., i, i] += q
    U[..., :d, d] = m
    U[..., d, :d] = m
    U[..., d, d] = rho
    return U


def matrix_to_state(U) -> np.ndarray:
    """Inverse of :func:`state_to_matrix`; rejects non-symmetric input."""
    U = np.asarray(U, dtype=float)
    n = U.shape[-1]
    d = n - 1
    scale = max(1.0, float(np.abs(U).max()) if U.size else 1.0)
    if np.abs(U - np.swapaxes(U, -1, -2)).max(initial=0.0) > SYM_TOL * scale:
        raise PreconditionError("U must be symmetric")
    block = U[..., :d, :d]
    q = np.trace(block, axis1=-2, axis2=-1) / d
    M = block - q[..., None, None] * np.eye(d)
    parts = [U[..., d, d][..., None], U[..., :d, d]]
    parts.append(np.stack([M[..., i, j] for i, j in _m_slots(d)], axis=-1))
    parts.append(q[..., None])
    return np.concatenate(parts, axis=-1)


def _dim_from_state(N: int) -> int:
    for d in range(1, 64):
        if state_size(d) == N:
            return d
    raise GridError(f"{N} is not a valid state size")


def matrix_axis(a: int, d: int) -> int:
    """Grid axis differentiated by matrix index ``a``."""
    return a + 1 if a < d else 0


# ---------------------------------------------------------------------------
# operators as coefficient tables
# ---------------------------------------------------------------------------

def _unit(n: int, *axes: int) -> tuple:
    a = [0] * n
    for ax in axes:
        a[ax] += 1
    return tuple(a)


def euler_A(d: int) -> HomogeneousOperator:
    """``z -> row divergence of U(z)``: ``d + 1`` outputs, first the momentum rows."""
    N = state_size(d)
    n = d + 1
    coeffs = {}
    for s in range(N):
        e = np.zeros(N)
        e[s] = 1.0
        U = state_to_matrix(e, d)
        for a in range(n):
            for b in range(n):
                if U[a, b] != 0.0:
                    alpha = _unit(n, matrix_axis(b, d))
                    coeffs.setdefault(alpha, np.zeros((n, N)))[a, s] += U[a, b]
    return HomogeneousOperator(1, N, n, coeffs, "euler_A")


def potential_indices(d: int, mode: str = "full") -> list[tuple[int, int, int, int]]:
    """Input labels ``(i, j, k, l)``, ``i < j``, ``k < l``, in matrix-index space.

    ``full`` ranges over all ``d + 1`` matrix indices; ``spatial`` only over
    the ``d`` spatial ones (fewer inputs, deficient image).
    """
    n = d if mode == "spatial" else d + 1
    if mode not in ("full", "spatial"):
        raise PreconditionError(f"unknown index mode {mode!r}")
    pairs = list(itertools.combinations(range(n), 2))
    return [(i, j, k, l) for (i, j) in pairs for (k, l) in pairs]


def _phi_from_D(D: np.ndarray) -> np.ndarray:
    """Solve ``D[i,j,k] = phi[i,j,k] - phi[j,i,k]`` for ``phi`` antisymmetric in its last two indices.

    Works on trailing extra axes (e.g. a symbolic ``xi`` axis).
    """
    n = D.shape[0]
    phi = np.zeros_like(D)
    for a in range(n):
        for b in range(n):
            if a != b:
                phi[a, a, b] = -D[a, b, a]
                phi[a, b, a] = D[a, b, a]
    for i, j, k in itertools.combinations(range(n), 3):
        rhs = np.stack([D[i, j, k], D[i, k, j], D[j, k, i]])
        x = np.tensordot(TRIPLE_INVERSE, rhs, axes=1)
        phi[i, j, k], phi[j, i, k], phi[k, i, j] = x
        phi[i, k, j], phi[j, k, i], phi[k, j, i] = -x
    return phi


def euler_potential_quadratic(d: int, mode: str = "full") -> np.ndarray:
    """Quadratic forms ``Q[o, p]`` with ``U(xi)_o = xi^T Q[o, p] xi`` per unit input ``p``.

    ``o`` runs over matrix entries ``(a, b)`` flattened; ``xi`` is indexed by
    matrix index.
    """
    n = d + 1
    labels = potential_indices(d, mode)
    Q = np.zeros((n * n, len(labels), n, n))
    for p, (i, j, k, l) in enumerate(labels):
        # psi^{ab}_{ce} for a single input, completed antisymmetrically in both pairs
        psi = np.zeros((n, n, n, n))
        for (a, b, s1) in ((i, j, 1.0), (j, i, -1.0)):
            for (c, e, s2) in ((k, l, 1.0), (l, k, -1.0)):
                psi[a, b, c, e] = s1 * s2
        # D^{ab}_c = sum_e xi_e psi^{ab}_{ce}: linear in xi -> trailing axis e
        D = psi
        phi = _phi_from_D(D)  # phi[a, b, c, e]: coefficient of xi_e in phi^a_{bc}
        # U_ab = sum_c xi_c phi^a_{bc} = xi^T phi[a, b] xi
        for a in range(n):
            for b in range(n):
                F = phi[a, b]
                Q[a * n + b, p] = 0.5 * (F + F.T)
    return Q


def euler_B(d: int, mode: str = "full") -> HomogeneousOperator:
    """Second-order potential ``psi -> z`` with ``A B = 0``."""
    if d < 3:
        raise PreconditionError("the Euler potential needs d >= 3")
    n = d + 1
    N = state_size(d)
    Q = euler_potential_quadratic(d, mode)
    m = Q.shape[1]
    # state components are linear in U: z = L vec(U)
    L = np.zeros((N, n * n))
    for o in range(n * n):
        E = np.zeros((n, n))
        a, b = divmod(o, n)
        E[a, b] += 0.5
        E[b, a] += 0.5
        L[:, o] = matrix_to_state(E)
    coeffs = {}
    for c in range(n):
        for e in range(c, n):
            alpha = _unit(n, matrix_axis(c, d), matrix_axis(e, d))
            weight = Q[:, :, c, c] if c == e else Q[:, :, c, e] + Q[:, :, e, c]
            mat = L @ weight
            if np.any(mat):
                coeffs[alpha] = mat
    return HomogeneousOperator(2, m, N, coeffs, f"euler_B_{mode}")


def symgrad_pair(d: int) -> tuple[HomogeneousOperator, HomogeneousOperator]:
    """``e(u) = (grad u + grad u^T) / 2`` and its second-order annihilator.

    Symmetric matrices are stored as their upper triangle, row-major.
    """
    if d < 2:
        raise PreconditionError("symmetric gradient pair needs d >= 2")
    slots = [(i, j) for i in range(d) for j in range(i, d)]
    pos = {s: n for n, s in enumerate(slots)}
    sym = lambda i, j: pos[(min(i, j), max(i, j))]  # noqa: E731
    k = len(slots)
    e_coeffs = {}
    for r, (i, j) in enumerate(slots):
        for (der, comp) in ((j, i), (i, j)):
            mat = e_coeffs.setdefault(_unit(d, der), np.zeros((k, d)))
            mat[r, comp] += 0.5
    e_op = HomogeneousOperator(1, d, k, e_coeffs, "symgrad")

    a_coeffs = {}

    def add(r, ax1, ax2, comp, v):
        mat = a_coeffs.setdefault(_unit(d, ax1, ax2), np.zeros((k, k)))
        mat[r, comp] += v

    for r, (j, kk) in enumerate(slots):
        for i in range(d):
            add(r, i, kk, sym(i, j), 1.0)
            add(r, i, j, sym(i, kk), 1.0)
            add(r, j, kk, sym(i, i), -1.0)
            add(r, i, i, sym(j, kk), -1.0)
    a_coeffs = {a: m for a, m in a_coeffs.items() if np.any(m)}
    ann = HomogeneousOperator(2, k, k, a_coeffs, "symgrad_annihilator")
    return e_op, ann


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------

def symbol_matrix(op: HomogeneousOperator, xi) -> np.ndarray:
    """``sum_alpha B^alpha xi^alpha`` (real monomials, no powers of i)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (op.dim,):
        raise GridError(f"frequency must have {op.dim} entries")
    out = np.zeros((op.out_components, op.in_components))
    for alpha, mat in op.coeffs.items():
        out += np.prod(xi ** np.asarray(alpha)) * mat
    return out


def numerical_rank(mat: np.ndarray, rtol: float = 1e-8) -> int:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass
class ExactnessReport:
    trials: int
    tol: float
    max_composition: float
    ranks_B: list = field(default_factory=list)
    kernel_dims_A: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "tol": self.tol,
            "max_composition": self.max_composition,
            "ranks_B": sorted(set(self.ranks_B)),
            "kernel_dims_A": sorted(set(self.kernel_dims_A)),
            "failures": self.failures,
            "ok": self.ok,
        }


def exactness_check(A_op: HomogeneousOperator, B_op: HomogeneousOperator, trials: int = 100,
                    tol: float = 1e-12, seed: int = 0, check_rank: bool = True) -> ExactnessReport:
    """Sample unit frequencies; test ``A(xi) B(xi) = 0`` and ``rank B(xi) = dim ker A(xi)``."""
    if B_op.out_components != A_op.in_components or A_op.dim != B_op.dim:
        raise GridError("B must map into the domain of A in the same dimension")
    rng = np.random.default_rng(seed)
    rep = ExactnessReport(trials, tol, 0.0)
    for t in range(trials):
        xi = rng.standard_normal(A_op.dim)
        xi /= np.linalg.norm(xi)
        a = symbol_matrix(A_op, xi)
        b = symbol_matrix(B_op, xi)
        comp = float(np.linalg.norm(a @ b, 2))
        rep.max_composition = max(rep.max_composition, comp)
        rb = numerical_rank(b)
        ka = A_op.in_components - numerical_rank(a)
        rep.ranks_B.append(rb)
        rep.kernel_dims_A.append(ka)
        bad = comp > tol or (check_rank and rb != ka)
        if bad:
            rep.failures.append({"trial": t, "xi": xi.tolist(), "composition": comp, "rank_B": rb, "ker_A": ka})
    return rep


# ---------------------------------------------------------------------------
# field application
# ---------------------------------------------------------------------------

def _wavenumbers(grid: Grid) -> list[np.ndarray]:
    """Angular wavenumbers for ``rfftn`` layout, Nyquist entries zeroed."""
    ks = []
    for ax, n in enumerate(grid.shape):
        L = n * grid.spacing
        if ax == grid.dim - 1:
            k = 2 * np.pi * np.fft.rfftfreq(n, d=grid.spacing)
        else:
            k = 2 * np.pi * np.fft.fftfreq(n, d=grid.spacing)
        if n % 2 == 0:
            k = k.copy()
            k[np.isclose(np.abs(k), np.pi * n / L)] = 0.0
        shape = [1] * grid.dim
        shape[ax] = k.size
        ks.append(k.reshape(shape))
    return ks


def _monomial(ks: list[np.ndarray], alpha: tuple) -> np.ndarray:
    out = 1.0
    for k, a in zip(ks, alpha):
        if a:
            out = out * k**a
    return out


def stream_apply(op: HomogeneousOperator, supplier: Callable[[int], np.ndarray], grid: Grid,
                 method: str = "spectral") -> np.ndarray:
    """Apply ``op`` to the field whose component ``p`` is ``supplier(p)``.

    Components are requested one at a time, so the input is never held in
    full.  ``spectral`` needs a periodic grid and differentiates exactly
    for trigonometric polynomials below the Nyquist frequency.
    """
    if op.dim != grid.dim:
        raise GridError(f"operator dimension {op.dim} differs from grid dimension {grid.dim}")
    by_input: dict[int, list] = {}
    for alpha, mat in op.coeffs.items():
        for p in np.flatnonzero(np.any(mat != 0, axis=0)):
            by_input.setdefault(int(p), []).append((alpha, mat[:, p]))
    k_out = op.out_components
    if method == "spectral":
        if not grid.periodic:
            raise GridError("spectral differentiation needs a periodic grid")
        ks = _wavenumbers(grid)
        acc = None
        sign = (1j) ** op.order
        for p in sorted(by_input):
            hat = np.fft.rfftn(np.asarray(supplier(p), dtype=float))
            if acc is None:
                acc = np.zeros((k_out,) + hat.shape, dtype=complex)
            for alpha, col in by_input[p]:
                term = sign * _monomial(ks, alpha) * hat
                for o in np.flatnonzero(col):
                    acc[o] += col[o] * term
        if acc is None:
            return np.zeros(grid.shape + (k_out,))
        out = np.stack([np.fft.irfftn(a, s=grid.shape, axes=range(grid.dim)) for a in acc], axis=-1)
        return out
    if method == "fd":
        out = np.zeros(grid.shape + (k_out,))
        for p in sorted(by_input):
            comp = np.asarray(supplier(p), dtype=float)
            for alpha, col in by_input[p]:
                der = partial(comp, alpha, grid.spacing, grid.periodic)
                for o in np.flatnonzero(col):
                    out[..., o] += col[o] * der
        return out
    raise GridError(f"unknown differentiation method {method!r}")


def apply_A_euler(z: GridField, method: str = "spectral") -> GridField:
    d = z.grid.dim - 1
    op = euler_A(d)
    if z.components != op.in_components:
        raise GridError(f"state needs {op.in_components} components, got {z.components}")
    out = stream_apply(op, lambda p: z.data[..., p], z.grid, method)
    return GridField(z.grid, out)


def row_divergence(U: np.ndarray, grid: Grid, method: str = "spectral") -> np.ndarray:
    """``sum_b d_b U_ab`` for a matrix field ``(..., n, n)``, axes per :func:`matrix_axis`."""
    n = U.shape[-1]
    d = n - 1
    coeffs = {}
    for b in range(n):
        mat = np.zeros((n, n * n))
        for a in range(n):
            mat[a, a * n + b] = 1.0
        coeffs[_unit(n, matrix_axis(b, d))] = mat
    op = HomogeneousOperator(1, n * n, n, coeffs, "row_divergence")
    flat = U.reshape(grid.shape + (n * n,))
    return stream_apply(op, lambda p: flat[..., p], grid, method)


@dataclass
class PotentialInput:
    """The inputs ``psi^{ij}_{kl}``, held as arrays or produced on demand."""

    grid: Grid
    d: int
    mode: str = "full"
    arrays: Sequence[np.ndarray] | None = None
    generator: Callable[[int], np.ndarray] | None = None

    def __post_init__(self):
        expected = potential_size(self.d, self.mode)
        if self.arrays is not None and len(self.arrays) != expected:
            raise PreconditionError(f"expected {expected} potential components, got {len(self.arrays)}")
        if (self.arrays is None) == (self.generator is None):
            raise PreconditionError("give exactly one of arrays or generator")
        if self.grid.dim != self.d + 1:
            raise GridError("potential fields live on d + 1 axes")

    @property
    def count(self) -> int:
        return potential_size(self.d, self.mode)

    @property
    def labels(self) -> list:
        return potential_indices(self.d, self.mode)

    def get(self, p: int) -> np.ndarray:
        if self.arrays is not None:
            return np.asarray(self.arrays[p], dtype=float)
        return np.asarray(self.generator(p), dtype=float)


def apply_B_euler(psi: PotentialInput, method: str = "spectral") -> GridField:
    """State field ``B psi``; components are streamed one at a time."""
    if psi.d < 3:
        raise PreconditionError("the Euler potential needs d >= 3")
    op = euler_B(psi.d, psi.mode)
    return GridField(psi.grid, stream_apply(op, psi.get, psi.grid, method))


def random_trig_potential(grid: Grid, d: int, seed: int, kmax: int = 2, mode: str = "full") -> PotentialInput:
    """Random real trigonometric polynomials with modes ``|k_i| <= kmax``, generated lazily."""
    shape = grid.shape
    spec_shape = shape[:-1] + (shape[-1] // 2 + 1,)
    if any(2 * kmax >= n for n in shape):
        raise GridError("kmax must stay below the Nyquist frequency")
    low = [np.r_[0:kmax + 1, n - kmax:n] for n in shape[:-1]] + [np.arange(kmax + 1)]

    def gen(p: int) -> np.ndarray:
        rng = np.random.default_rng([seed, p])
        spec = np.zeros(spec_shape, dtype=complex)
        block = np.ix_(*low)
        size = tuple(len(x) for x in low)
        spec[block] = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        return np.fft.irfftn(spec, s=shape, axes=range(len(shape))) * np.prod(shape)

    return PotentialInput(grid, d, mode, generator=gen)


def quadratic_potential(grid: Grid, d: int, seed: int, mode: str = "full") -> PotentialInput:
    """Quadratic polynomials with small integer coefficients (exact on integer grids)."""
    coords = grid.coords()
    n = grid.dim
    count = potential_size(d, mode)
    rng = np.random.default_rng(seed)
    arrays = []
    for _ in range(count):
        quad = rng.integers(-3, 4, size=(n, n))
        lin = rng.integers(-3, 4, size=n)
        c0 = rng.integers(-3, 4)
        val = np.einsum("...i,ij,...j->...", coords, quad, coords) + coords @ lin + c0
        arrays.append(val)
    return PotentialInput(grid, d, mode, arrays=arrays)

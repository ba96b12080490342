"""Hot numeric kernels.

Every kernel here is written so that it compiles under ``numba.njit`` and
also runs unmodified on plain numpy.  :mod:`pgp_lqr._accel` decides which
one is exported; the batched trajectory stepper additionally has a
vectorised numpy twin because the per-sample loop is the wrong shape for
numpy.

Conventions: all arrays are float64 and C-contiguous; time-invariant
blocks are pairs ``(Phi, G)`` with ``Phi = exp(A h)`` and
``G = int_0^h exp(A^T s) W exp(A s) ds``.
"""
import numpy as np

from ._accel import USE_NUMBA, maybe_njit

# Pade degrees and their backward-error thresholds for the 1-norm
# (Higham 2005, double precision).
_THETA3 = 1.495585217958292e-2
_THETA5 = 2.539398330063230e-1
_THETA7 = 9.504178996162932e-1
_THETA9 = 2.097847961257068
_THETA13 = 5.371920351148152

_B3 = np.array([120.0, 60.0, 12.0, 1.0])
_B5 = np.array([30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0])
_B7 = np.array([17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0])
_B9 = np.array([17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                2162160.0, 110880.0, 3960.0, 90.0, 1.0])
_B13 = np.array([64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                 1187353796428800.0, 129060195264000.0, 10559470521600.0,
                 670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
                 960960.0, 16380.0, 182.0, 1.0])

# Substep size target for the Van Loan block: ||A h||_1 <= this keeps the
# exp(-A^T h) corner from amplifying rounding error.
_VANLOAN_NORM = 0.5


@maybe_njit
def _norm1(M):
    n = M.shape[1]
    best = 0.0
    for j in range(n):
        s = 0.0
        for i in range(M.shape[0]):
            s += abs(M[i, j])
        if s > best:
            best = s
    return best


@maybe_njit
def _pade_low(A, b):
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    u_inner = b[1] * ident
    v = b[0] * ident
    power = ident.copy()
    for k in range(1, (b.shape[0] - 1) // 2 + 1):
        power = power @ A2
        u_inner = u_inner + b[2 * k + 1] * power
        v = v + b[2 * k] * power
    u = A @ u_inner
    return np.linalg.solve(v - u, v + u)


@maybe_njit
def _pade13(A):
    b = _B13
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    u = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    v = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return np.linalg.solve(v - u, v + u)


@maybe_njit
def pade_expm(M):
    """exp(M) by scaling and squaring with a degree-3..13 Pade approximant."""
    A = np.ascontiguousarray(M)
    nrm = _norm1(A)
    if nrm <= _THETA3:
        return _pade_low(A, _B3)
    if nrm <= _THETA5:
        return _pade_low(A, _B5)
    if nrm <= _THETA7:
        return _pade_low(A, _B7)
    if nrm <= _THETA9:
        return _pade_low(A, _B9)
    s = 0
    if nrm > _THETA13:
        s = int(np.ceil(np.log2(nrm / _THETA13)))
    E = np.ascontiguousarray(_pade13(A / 2.0 ** s))
    for _ in range(s):
        E = E @ E
    return E


@maybe_njit
def _combine(phi_a, g_a, phi_b, g_b):
    # block a followed by block b
    phi = phi_b @ phi_a
    g = g_a + phi_a.T @ (g_b @ phi_a)
    return phi, 0.5 * (g + g.T)


@maybe_njit
def _van_loan(A, W, h):
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A.T * h
    M[:n, n:] = W * h
    M[n:, n:] = A * h
    E = pade_expm(M)
    phi = np.ascontiguousarray(E[n:, n:])
    g = phi.T @ np.ascontiguousarray(E[:n, n:])
    return phi, 0.5 * (g + g.T)


@maybe_njit
def _power_block(phi, g, count):
    # `count` consecutive copies of the block (phi, g), by binary doubling
    n = phi.shape[0]
    acc_phi = np.eye(n)
    acc_g = np.zeros((n, n))
    base_phi = phi.copy()
    base_g = g.copy()
    k = count
    while k > 0:
        if k & 1:
            acc_phi, acc_g = _combine(acc_phi, acc_g, base_phi, base_g)
        k >>= 1
        if k > 0:
            base_phi, base_g = _combine(base_phi, base_g, base_phi, base_g)
    return acc_phi, acc_g


@maybe_njit
def integral_block(A, W, t):
    """(exp(A t), int_0^t exp(A^T s) W exp(A s) ds) via Van Loan + doubling."""
    n = A.shape[0]
    if t <= 0.0:
        return np.eye(n), np.zeros((n, n))
    nrm = _norm1(A) * t
    halvings = 0
    if nrm > _VANLOAN_NORM:
        halvings = int(np.ceil(np.log2(nrm / _VANLOAN_NORM)))
    phi, g = _van_loan(A, W, t / 2.0 ** halvings)
    for _ in range(halvings):
        phi, g = _combine(phi, g, phi, g)
    return phi, g


@maybe_njit
def horizon_block(A, W, dt, tau):
    """Block for duration ``tau`` built from exact ``dt`` steps plus a remainder."""
    steps = int(np.floor(tau / dt + 1e-12))
    rem = tau - steps * dt
    phi_dt, g_dt = integral_block(A, W, dt)
    phi, g = _power_block(phi_dt, g_dt, steps)
    if rem > 1e-12 * dt:
        phi_r, g_r = integral_block(A, W, rem)
        phi, g = _combine(phi, g, phi_r, g_r)
    return phi, g


@maybe_njit
def perturbed_costs(A, B, C, Q, R, gains, X0, dt, tau, bound):
    """Exact finite-horizon costs of N independent rollouts.

    Rollout ``i`` runs the closed loop ``A - B gains[i] C`` from ``X0[i]``.
    Returns ``(costs, final_norms, diverged)``.
    """
    N = gains.shape[0]
    costs = np.empty(N)
    final_norms = np.empty(N)
    diverged = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        K = np.ascontiguousarray(gains[i])
        AK = A - B @ K @ C
        W = C.T @ (Q + K.T @ R @ K) @ C
        phi, g = horizon_block(AK, W, dt, tau)
        x = np.ascontiguousarray(X0[i])
        xt = phi @ x
        c = x @ (g @ x)
        nx = np.sqrt(xt @ xt)
        costs[i] = c
        final_norms[i] = nx
        if not (np.isfinite(c) and np.isfinite(nx)) or nx > bound:
            diverged[i] = True
    return costs, final_norms, diverged


@maybe_njit
def _step_trajectories_loop(phi, g, C, X0, steps, bound):
    N = X0.shape[0]
    n = X0.shape[1]
    p = C.shape[0]
    costs = np.zeros(N)
    outputs = np.zeros((N, steps + 1, p))
    finals = np.zeros((N, n))
    diverged = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        x = X0[i].copy()
        c = 0.0
        for k in range(steps):
            for a in range(p):
                acc = 0.0
                for b in range(n):
                    acc += C[a, b] * x[b]
                outputs[i, k, a] = acc
            gx = g @ x
            c += x @ gx
            x = phi @ x
            nx = np.sqrt(x @ x)
            if not np.isfinite(nx) or nx > bound:
                diverged[i] = True
                break
        if not diverged[i]:
            for a in range(p):
                acc = 0.0
                for b in range(n):
                    acc += C[a, b] * x[b]
                outputs[i, steps, a] = acc
        costs[i] = c
        finals[i] = x
    return costs, outputs, finals, diverged


def _step_trajectories_numpy(phi, g, C, X0, steps, bound):
    N, n = X0.shape
    p = C.shape[0]
    costs = np.zeros(N)
    outputs = np.zeros((N, steps + 1, p))
    diverged = np.zeros(N, dtype=bool)
    X = X0.copy()
    alive = np.ones(N, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            outputs[alive, k] = X[alive] @ C.T
            costs[alive] += np.einsum("ij,jk,ik->i", X[alive], g, X[alive])
            X[alive] = X[alive] @ phi.T
            nx = np.linalg.norm(X, axis=1)
            bad = alive & (~np.isfinite(nx) | (nx > bound))
            diverged |= bad
            alive &= ~bad
        outputs[alive, steps] = X[alive] @ C.T
    return costs, outputs, X, diverged


def step_trajectories(phi, g, C, X0, steps, bound):
    """Propagate N initial states for ``steps`` exact steps of (phi, g).

    Returns ``(costs, outputs, final_states, diverged)`` where
    ``outputs[i, k]`` is ``C x_i(k dt)``.  A diverged trajectory stops
    accumulating at the step where its state norm crossed ``bound``.
    """
    args = (np.ascontiguousarray(phi), np.ascontiguousarray(g), np.ascontiguousarray(C),
            np.ascontiguousarray(X0), int(steps), float(bound))
    if USE_NUMBA:
        return _step_trajectories_loop(*args)
    return _step_trajectories_numpy(*args)


@maybe_njit
def _lyap_kron(A, W):
    # A^T X + X A + W = 0 via the Kronecker operator, row-major vec is fine
    # because the operator is symmetric under transposition of X.
    n = A.shape[0]
    ident = np.eye(n)
    At = np.ascontiguousarray(A.T)
    op = np.kron(ident, At) + np.kron(At, ident)
    rhs = -np.ascontiguousarray(W.T).reshape(n * n)
    x = np.linalg.solve(op, rhs)
    x = x + np.linalg.solve(op, rhs - op @ x)
    X = np.ascontiguousarray(x.reshape(n, n).T)
    return 0.5 * (X + X.T)


@maybe_njit
def cost_and_gradient(A, B, C, Q, R, Sigma, K):
    """(f(K), grad f(K)) for a stabilising K."""
    AK = A - B @ K @ C
    W = C.T @ (Q + K.T @ R @ K) @ C
    X = _lyap_kron(AK, W)
    Y = _lyap_kron(np.ascontiguousarray(AK.T), Sigma)
    f = np.trace(X @ Sigma)
    G = 2.0 * (R @ K @ C - B.T @ X) @ Y @ C.T
    return f, G


@maybe_njit
def _abscissa(M):
    return np.max(np.linalg.eigvals(M.astype(np.complex128)).real)


@maybe_njit
def _project(Y, kind, mask):
    if kind == 1:
        return Y * (1.0 - mask)
    if kind == 2:
        S = 0.5 * (Y + Y.T)
        w, V = np.linalg.eigh(S)
        P = (V * np.maximum(w, 0.0)) @ V.T
        return 0.5 * (P + P.T)
    return Y.copy()


@maybe_njit
def exact_descent(A, B, C, Q, R, Sigma, K0, kind, mask, alpha, eps, max_iter, margin):
    """Projected gradient descent with exact gradients, fully compiled.

    ``kind`` selects the projection: 0 none, 1 zero pattern ``mask``, 2 PSD.
    Returns ``(K, iterations, reason, costs, steps)`` where ``reason`` is 0
    for the step-norm rule (K is the pre-step iterate), 1 for the iteration
    cap and 2 for an unstable iterate.  ``costs[i]`` and ``steps[i]`` belong
    to iterate i.
    """
    costs = np.full(max_iter + 1, np.nan)
    steps = np.full(max_iter + 1, np.nan)
    K = K0.copy()
    f, G = cost_and_gradient(A, B, C, Q, R, Sigma, K)
    for i in range(max_iter):
        Kn = _project(K - alpha * G, kind, mask)
        step = np.sqrt(np.sum((Kn - K) ** 2))
        costs[i] = f
        steps[i] = step
        if step <= eps * alpha:
            return K, i, 0, costs[:i + 1], steps[:i + 1]
        if _abscissa(A - B @ Kn @ C) >= -margin:
            return K, i, 2, costs[:i + 1], steps[:i + 1]
        K = Kn
        f, G = cost_and_gradient(A, B, C, Q, R, Sigma, K)
    costs[max_iter] = f
    return K, max_iter, 1, costs, steps

"""Independent reference implementations used to pin expected test values.

Everything here is written straight from first principles (dynamic
programming on quadratics, central differences, exhaustive search) and
deliberately shares no code with the package under test.
"""
import numpy as np


def lqr_dp_solve(A, B, d, Q, R, Qf, x_ref, x0, N):
    """Finite-horizon LQR via dynamic programming on quadratic value functions.

    Cost: sum_{i=0}^{N-1} (x_i - x_ref)' Q (x_i - x_ref) + u_i' R u_i
          + (x_N - x_ref)' Qf (x_N - x_ref)
    Dynamics: x_{i+1} = A x_i + B u_i + d.

    Value functions are kept as V(x) = x' P x + 2 q' x + c so the affine
    drift and nonzero reference are handled exactly.  Returns the optimal
    state and control sequences.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    d = np.asarray(d, float).ravel()
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    Qf = np.asarray(Qf, float)
    x_ref = np.asarray(x_ref, float).ravel()

    n = A.shape[0]
    # terminal: (x - r)' Qf (x - r) = x'Qf x - 2 (Qf r)' x + r'Qf r
    P = Qf.copy()
    q = -Qf @ x_ref
    c = float(x_ref @ Qf @ x_ref)

    Ks = [None] * N
    ks = [None] * N
    for _ in range(N - 1, -1, -1):
        i = _
        # stage cost in expanded form
        # min_u  x'Qx - 2(Qr)'x + r'Qr + u'Ru + V(Ax + Bu + d)
        H = R + B.T @ P @ B
        Hinv = np.linalg.inv(H)
        # gradient in u: 2 R u + 2 B'P(Ax + Bu + d) + 2 B'q = 0
        Kx = Hinv @ (B.T @ P @ A)
        k0 = Hinv @ (B.T @ (P @ d + q))
        Ks[i] = Kx
        ks[i] = k0
        Acl = A - B @ Kx
        dcl = d - B @ k0
        P_new = Q + Kx.T @ R @ Kx + Acl.T @ P @ Acl
        q_new = (-Q @ x_ref + Kx.T @ R @ k0
                 + Acl.T @ (P @ dcl + q))
        c_new = (c + float(x_ref @ Q @ x_ref) + float(k0 @ R @ k0)
                 + float(dcl @ P @ dcl) + 2.0 * float(q @ dcl))
        P, q, c = 0.5 * (P_new + P_new.T), q_new, c_new

    xs = np.empty((N + 1, n))
    us = np.empty((N, B.shape[1]))
    x = np.asarray(x0, float).ravel().copy()
    xs[0] = x
    for i in range(N):
        u = -Ks[i] @ x - ks[i]
        us[i] = u
        x = A @ x + B @ u + d
        xs[i + 1] = x
    return xs, us


def lqr_dp_gains(A, B, Q, R, Qf, N):
    """Riccati feedback gains for the zero-reference, drift-free problem."""
    P = np.asarray(Qf, float).copy()
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    gains = [None] * N
    for i in range(N - 1, -1, -1):
        H = R + B.T @ P @ B
        Kx = np.linalg.solve(H, B.T @ P @ A)
        gains[i] = Kx
        Acl = A - B @ Kx
        P = Q + Kx.T @ R @ Kx + Acl.T @ P @ Acl
        P = 0.5 * (P + P.T)
    return gains


def central_diff_grad(f, z0, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    z0 = np.asarray(z0, float)
    g = np.zeros_like(z0)
    for j in range(z0.size):
        zp = z0.copy()
        zm = z0.copy()
        zp[j] += h
        zm[j] -= h
        g[j] = (f(zp) - f(zm)) / (2.0 * h)
    return g


def central_diff_hess(f, z0, h=1e-4):
    """Central-difference Hessian of a scalar function of a vector."""
    z0 = np.asarray(z0, float)
    k = z0.size
    H = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            zpp = z0.copy(); zpp[a] += h; zpp[b] += h
            zpm = z0.copy(); zpm[a] += h; zpm[b] -= h
            zmp = z0.copy(); zmp[a] -= h; zmp[b] += h
            zmm = z0.copy(); zmm[a] -= h; zmm[b] -= h
            H[a, b] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4.0 * h * h)
    return H


def grid_minimize(f, lo, hi, num=200001):
    """Exhaustive scalar minimization on a uniform open-interval grid."""
    span = hi - lo
    zs = lo + span * (np.arange(1, num + 1) / (num + 1))
    vals = np.array([f(z) for z in zs])
    j = int(np.argmin(vals))
    return zs[j], vals[j]


def steady_state_bicycle(m, iz, lf, lr, caf, car, v, delta):
    """Steady-state (v_lat, yaw_rate) of the linear dynamic bicycle.

    Axle forces are 2*C*alpha (two tires per axle) with small-angle slip:
        0 = 2Caf (delta - (vl + lf r)/v) + 2Car (-(vl - lr r)/v) - m v r
        0 = lf 2Caf (delta - (vl + lf r)/v) - lr 2Car (-(vl - lr r)/v)
    Solved exactly as a 2x2 linear system.
    """
    f = 2.0 * caf
    g = 2.0 * car
    M = np.array([
        [-(f + g) / v, -(f * lf - g * lr) / v - m * v],
        [-(f * lf - g * lr) / v, -(f * lf ** 2 + g * lr ** 2) / v],
    ])
    rhs = np.array([-f * delta, -lf * f * delta])
    vl, r = np.linalg.solve(M, rhs)
    return float(vl), float(r)


def understeer_yaw_rate(m, lf, lr, caf, car, v, delta):
    """Closed-form steady yaw rate v*delta/(L + K_us v^2), axle stiffnesses."""
    f = 2.0 * caf
    g = 2.0 * car
    wheelbase = lf + lr
    k_us = m * (lr * g - lf * f) / (f * g * wheelbase)
    return v * delta / (wheelbase + k_us * v * v)

"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import: set KVIL_NUMBA=0 (or numba missing)
to force the numpy path. Both paths are exercised by the test suite and a
benchmark script; they agree to tight floating-point tolerance.
"""

from __future__ import annotations

import math
import os

import numpy as np

_flag = os.environ.get("KVIL_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off", "no")

if _want_numba:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - environment without numba
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Spatial-variability sweep: per (frame, candidate, time), the descending
# square roots of covariance eigenvalues over demos, divided by the scale.


def eta_sweep_numpy(local: np.ndarray, phi: float) -> np.ndarray:
    """local: (J, K, T, N, 3) frame-local positions. Returns (J, K, T, 3)."""
    n = local.shape[3]
    centered = local - local.mean(axis=3, keepdims=True)
    cov = np.einsum("jktna,jktnb->jktab", centered, centered) / max(n - 1, 1)
    eig = np.linalg.eigvalsh(cov)  # ascending
    eig = np.clip(eig[..., ::-1], 0.0, None)
    return np.sqrt(eig) / phi


if HAVE_NUMBA:

    @njit(cache=True)
    def _eig3_descending(a00, a01, a02, a11, a12, a22):
        """Closed-form eigenvalues of a symmetric 3x3 matrix, descending."""
        p1 = a01 * a01 + a02 * a02 + a12 * a12
        scale = abs(a00) + abs(a11) + abs(a22) + p1
        if p1 <= 1e-300 or p1 < 1e-30 * scale * scale:
            e1 = a00
            e2 = a11
            e3 = a22
            if e1 < e2:
                e1, e2 = e2, e1
            if e2 < e3:
                e2, e3 = e3, e2
            if e1 < e2:
                e1, e2 = e2, e1
            return e1, e2, e3
        q = (a00 + a11 + a22) / 3.0
        b00 = a00 - q
        b11 = a11 - q
        b22 = a22 - q
        p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
        p = math.sqrt(p2 / 6.0)
        inv_p = 1.0 / p
        c00 = b00 * inv_p
        c01 = a01 * inv_p
        c02 = a02 * inv_p
        c11 = b11 * inv_p
        c12 = a12 * inv_p
        c22 = b22 * inv_p
        det_b = (
            c00 * (c11 * c22 - c12 * c12)
            - c01 * (c01 * c22 - c12 * c02)
            + c02 * (c01 * c12 - c11 * c02)
        )
        r = det_b / 2.0
        if r < -1.0:
            r = -1.0
        elif r > 1.0:
            r = 1.0
        phi_ang = math.acos(r) / 3.0
        e1 = q + 2.0 * p * math.cos(phi_ang)
        e3 = q + 2.0 * p * math.cos(phi_ang + 2.0 * math.pi / 3.0)
        e2 = 3.0 * q - e1 - e3
        return e1, e2, e3

    @njit(cache=True)
    def eta_sweep_numba(local, phi):
        J, K, T, N, _ = local.shape
        out = np.empty((J, K, T, 3))
        denom = N - 1 if N > 1 else 1
        for j in range(J):
            for k in range(K):
                for t in range(T):
                    mx = 0.0
                    my = 0.0
                    mz = 0.0
                    for n in range(N):
                        mx += local[j, k, t, n, 0]
                        my += local[j, k, t, n, 1]
                        mz += local[j, k, t, n, 2]
                    mx /= N
                    my /= N
                    mz /= N
                    a00 = 0.0
                    a01 = 0.0
                    a02 = 0.0
                    a11 = 0.0
                    a12 = 0.0
                    a22 = 0.0
                    for n in range(N):
                        dx = local[j, k, t, n, 0] - mx
                        dy = local[j, k, t, n, 1] - my
                        dz = local[j, k, t, n, 2] - mz
                        a00 += dx * dx
                        a01 += dx * dy
                        a02 += dx * dz
                        a11 += dy * dy
                        a12 += dy * dz
                        a22 += dz * dz
                    e1, e2, e3 = _eig3_descending(
                        a00 / denom, a01 / denom, a02 / denom,
                        a11 / denom, a12 / denom, a22 / denom,
                    )
                    out[j, k, t, 0] = math.sqrt(e1) / phi if e1 > 0.0 else 0.0
                    out[j, k, t, 1] = math.sqrt(e2) / phi if e2 > 0.0 else 0.0
                    out[j, k, t, 2] = math.sqrt(e3) / phi if e3 > 0.0 else 0.0
        return out


def eta_sweep(local: np.ndarray, phi: float) -> np.ndarray:
    """Dispatch the variability sweep to the selected backend."""
    local = np.ascontiguousarray(local, dtype=np.float64)
    if HAVE_NUMBA:
        return eta_sweep_numba(local, float(phi))
    return eta_sweep_numpy(local, float(phi))


# ---------------------------------------------------------------------------
# Cubic B-spline design matrices (values and derivatives). The fitting and
# projection loops call this thousands of times per extraction, so the
# per-point de Boor derivative recurrence gets a compiled path.


def bspline_design3_numpy(u: np.ndarray, knots: np.ndarray, deriv: int) -> np.ndarray:
    """Reference implementation; one de Boor table per query point."""
    p = 3
    n_basis = len(knots) - p - 1
    out = np.zeros((len(u), n_basis))
    for i, x in enumerate(u):
        span = int(np.clip(np.searchsorted(knots, x, side="right") - 1, p, n_basis - 1))
        ders = _ders_basis_numpy(span, x, p, deriv, knots)
        out[i, span - p:span + 1] = ders[deriv]
    return out


def _ders_basis_numpy(span, x, p, n, knots):
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r] if ndu[j, r] != 0.0 else 0.0
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((n + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk] if ndu[pk + 1, rk] != 0.0 else 0.0
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j] \
                    if ndu[pk + 1, rk + j] != 0.0 else 0.0
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r] if ndu[pk + 1, r] != 0.0 else 0.0
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


if HAVE_NUMBA:

    @njit(cache=True)
    def bspline_design3_numba(u, knots, deriv):
        p = 3
        n_basis = knots.shape[0] - p - 1
        m = u.shape[0]
        out = np.zeros((m, n_basis))
        ndu = np.zeros((p + 1, p + 1))
        left = np.zeros(p + 1)
        right = np.zeros(p + 1)
        a = np.zeros((2, p + 1))
        ders = np.zeros(p + 1)
        for i in range(m):
            x = u[i]
            span = np.searchsorted(knots, x, side="right") - 1
            if span < p:
                span = p
            if span > n_basis - 1:
                span = n_basis - 1
            ndu[0, 0] = 1.0
            for j in range(1, p + 1):
                left[j] = x - knots[span + 1 - j]
                right[j] = knots[span + j] - x
                saved = 0.0
                for r in range(j):
                    ndu[j, r] = right[r + 1] + left[j - r]
                    if ndu[j, r] != 0.0:
                        temp = ndu[r, j - 1] / ndu[j, r]
                    else:
                        temp = 0.0
                    ndu[r, j] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                ndu[j, j] = saved
            if deriv == 0:
                for r in range(p + 1):
                    out[i, span - p + r] = ndu[r, p]
                continue
            for r in range(p + 1):
                s1 = 0
                s2 = 1
                a[0, 0] = 1.0
                a[0, 1] = 0.0
                a[0, 2] = 0.0
                a[0, 3] = 0.0
                d = 0.0
                for k in range(1, deriv + 1):
                    d = 0.0
                    rk = r - k
                    pk = p - k
                    if r >= k:
                        if ndu[pk + 1, rk] != 0.0:
                            a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                        else:
                            a[s2, 0] = 0.0
                        d = a[s2, 0] * ndu[rk, pk]
                    if rk >= -1:
                        j1 = 1
                    else:
                        j1 = -rk
                    if r - 1 <= pk:
                        j2 = k - 1
                    else:
                        j2 = p - r
                    for j in range(j1, j2 + 1):
                        if ndu[pk + 1, rk + j] != 0.0:
                            a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                        else:
                            a[s2, j] = 0.0
                        d += a[s2, j] * ndu[rk + j, pk]
                    if r <= pk:
                        if ndu[pk + 1, r] != 0.0:
                            a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                        else:
                            a[s2, k] = 0.0
                        d += a[s2, k] * ndu[r, pk]
                    tmp = s1
                    s1 = s2
                    s2 = tmp
                ders[r] = d
            fac = float(p)
            for k in range(2, deriv + 1):
                fac *= p - k + 1
            for r in range(p + 1):
                out[i, span - p + r] = ders[r] * fac
        return out


def bspline_design3(u: np.ndarray, knots: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Dispatch the cubic design-matrix build to the selected backend."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    if HAVE_NUMBA:
        return bspline_design3_numba(u, knots, deriv)
    return bspline_design3_numpy(u, knots, deriv)


# ---------------------------------------------------------------------------
# Admittance rollout for tasks whose keypoints are all point constraints.
# Point-constraint targets never depend on the body state, so the whole
# integration loop collapses to a fixed sequence of small dense ops; the
# loop itself is the bottleneck, which is exactly what numba removes.


def _rotvec_to_matrix_py(v):
    angle = np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    K = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    if angle < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    Ka = K / angle
    return np.eye(3) + np.sin(angle) * Ka + (1.0 - np.cos(angle)) * (Ka @ Ka)


def _matrix_to_rotvec_py(R):
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    cos_angle = min(1.0, max(-1.0, (tr - 1.0) * 0.5))
    angle = np.arccos(cos_angle)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-9:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        axis = np.empty(3)
        best = -1.0
        k = 0
        for i in range(3):
            a = 0.5 * (R[i, i] + 1.0)
            a = a if a > 0.0 else 0.0
            axis[i] = np.sqrt(a)
            if axis[i] > best:
                best = axis[i]
                k = i
        col = 0.5 * (R[:, k] + np.eye(3)[:, k]) / max(best, 1e-12)
        col = col / np.sqrt(col[0] ** 2 + col[1] ** 2 + col[2] ** 2)
        return angle * col
    return (angle / (2.0 * np.sin(angle))) * w


def kac_rollout_p2p_numpy(att, targets, target_dot, p0, R0,
                          kp_bar, kd_bar, kp_tilde, kd_tilde, km_tilde,
                          kp_track, kd_track, dt):
    S, L = targets.shape[0], targets.shape[1]
    k_log = np.zeros((S, L, 3))
    p_log = np.zeros((S, 3))
    rv_log = np.zeros((S, 3))
    wrench_log = np.zeros((S, 6))

    p_v = p0.copy(); R_v = R0.copy()
    v_v = np.zeros(3); w_v = np.zeros(3)
    p = p0.copy(); R = R0.copy()
    v = np.zeros(3); w = np.zeros(3)
    status = 0

    for i in range(S):
        arms = (R @ att.T).T                       # (L, 3)
        k = arms + p
        k_dot = v + np.cross(w, arms)
        f = (kp_bar[:, None] * (targets[i] - k)
             + kd_bar[:, None] * (target_dot[i] - k_dot))
        centroid = k.mean(axis=0)
        force = f.sum(axis=0)
        torque = np.cross(k - centroid, f).sum(axis=0)

        k_log[i] = k
        p_log[i] = p
        rv_log[i] = _matrix_to_rotvec_py(R)
        wrench_log[i, :3] = force
        wrench_log[i, 3:] = torque

        if i == S - 1:
            break
        acc_v = kp_tilde * (p - p_v) - kd_tilde * v_v + km_tilde * force
        alp_v = (kp_tilde * _matrix_to_rotvec_py(R @ R_v.T)
                 - kd_tilde * w_v + km_tilde * torque)
        v_v = v_v + acc_v * dt
        w_v = w_v + alp_v * dt
        p_v = p_v + v_v * dt
        R_v = _rotvec_to_matrix_py(w_v * dt) @ R_v

        acc = kp_track * (p_v - p) + kd_track * (v_v - v)
        alp = (kp_track * _matrix_to_rotvec_py(R_v @ R.T)
               + kd_track * (w_v - w))
        v = v + acc * dt
        w = w + alp * dt
        p = p + v * dt
        R = _rotvec_to_matrix_py(w * dt) @ R

        bound = 0.0
        for arr in (p_v, v_v, w_v, p, v, w):
            m = np.abs(arr).max()
            bound = m if m > bound else bound
        if not np.isfinite(bound) or bound > 1e6:
            status = 1
            break
    return k_log, p_log, rv_log, wrench_log, status


if HAVE_NUMBA:

    @njit(cache=True)
    def _rotvec_to_matrix_nb(v):
        angle = np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        K = np.zeros((3, 3))
        K[0, 1] = -v[2]; K[0, 2] = v[1]
        K[1, 0] = v[2];  K[1, 2] = -v[0]
        K[2, 0] = -v[1]; K[2, 1] = v[0]
        out = np.eye(3)
        if angle < 1e-12:
            KK = K @ K
            for a in range(3):
                for b in range(3):
                    out[a, b] += K[a, b] + 0.5 * KK[a, b]
            return out
        Ka = K / angle
        KK = Ka @ Ka
        s = np.sin(angle)
        c = 1.0 - np.cos(angle)
        for a in range(3):
            for b in range(3):
                out[a, b] += s * Ka[a, b] + c * KK[a, b]
        return out

    @njit(cache=True)
    def _matrix_to_rotvec_nb(R):
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        cos_angle = min(1.0, max(-1.0, (tr - 1.0) * 0.5))
        angle = np.arccos(cos_angle)
        w = np.empty(3)
        w[0] = R[2, 1] - R[1, 2]
        w[1] = R[0, 2] - R[2, 0]
        w[2] = R[1, 0] - R[0, 1]
        if angle < 1e-9:
            return 0.5 * w
        if np.pi - angle < 1e-6:
            axis = np.empty(3)
            best = -1.0
            k = 0
            for i in range(3):
                a = 0.5 * (R[i, i] + 1.0)
                if a < 0.0:
                    a = 0.0
                axis[i] = np.sqrt(a)
                if axis[i] > best:
                    best = axis[i]
                    k = i
            col = np.empty(3)
            for i in range(3):
                e = 1.0 if i == k else 0.0
                col[i] = 0.5 * (R[i, k] + e) / max(best, 1e-12)
            n = np.sqrt(col[0] ** 2 + col[1] ** 2 + col[2] ** 2)
            return (angle / n) * col
        return (angle / (2.0 * np.sin(angle))) * w

    @njit(cache=True)
    def kac_rollout_p2p_numba(att, targets, target_dot, p0, R0,
                              kp_bar, kd_bar, kp_tilde, kd_tilde, km_tilde,
                              kp_track, kd_track, dt):
        S, L = targets.shape[0], targets.shape[1]
        k_log = np.zeros((S, L, 3))
        p_log = np.zeros((S, 3))
        rv_log = np.zeros((S, 3))
        wrench_log = np.zeros((S, 6))

        p_v = p0.copy(); R_v = R0.copy()
        v_v = np.zeros(3); w_v = np.zeros(3)
        p = p0.copy(); R = R0.copy()
        v = np.zeros(3); w = np.zeros(3)
        status = 0

        arms = np.empty((L, 3))
        k = np.empty((L, 3))
        f = np.empty((L, 3))
        for i in range(S):
            for l in range(L):
                for a in range(3):
                    arms[l, a] = (R[a, 0] * att[l, 0] + R[a, 1] * att[l, 1]
                                  + R[a, 2] * att[l, 2])
                    k[l, a] = arms[l, a] + p[a]
            centroid = np.zeros(3)
            force = np.zeros(3)
            torque = np.zeros(3)
            for l in range(L):
                kd0 = v[0] + w[1] * arms[l, 2] - w[2] * arms[l, 1]
                kd1 = v[1] + w[2] * arms[l, 0] - w[0] * arms[l, 2]
                kd2 = v[2] + w[0] * arms[l, 1] - w[1] * arms[l, 0]
                f[l, 0] = kp_bar[l] * (targets[i, l, 0] - k[l, 0]) \
                    + kd_bar[l] * (target_dot[i, l, 0] - kd0)
                f[l, 1] = kp_bar[l] * (targets[i, l, 1] - k[l, 1]) \
                    + kd_bar[l] * (target_dot[i, l, 1] - kd1)
                f[l, 2] = kp_bar[l] * (targets[i, l, 2] - k[l, 2]) \
                    + kd_bar[l] * (target_dot[i, l, 2] - kd2)
                for a in range(3):
                    centroid[a] += k[l, a] / L
                    force[a] += f[l, a]
            for l in range(L):
                r0 = k[l, 0] - centroid[0]
                r1 = k[l, 1] - centroid[1]
                r2 = k[l, 2] - centroid[2]
                torque[0] += r1 * f[l, 2] - r2 * f[l, 1]
                torque[1] += r2 * f[l, 0] - r0 * f[l, 2]
                torque[2] += r0 * f[l, 1] - r1 * f[l, 0]

            for l in range(L):
                for a in range(3):
                    k_log[i, l, a] = k[l, a]
            for a in range(3):
                p_log[i, a] = p[a]
                wrench_log[i, a] = force[a]
                wrench_log[i, 3 + a] = torque[a]
            rv = _matrix_to_rotvec_nb(R)
            for a in range(3):
                rv_log[i, a] = rv[a]

            if i == S - 1:
                break
            rot_err_v = _matrix_to_rotvec_nb(R @ R_v.T)
            for a in range(3):
                acc_v = kp_tilde * (p[a] - p_v[a]) - kd_tilde * v_v[a] \
                    + km_tilde * force[a]
                alp_v = kp_tilde * rot_err_v[a] - kd_tilde * w_v[a] \
                    + km_tilde * torque[a]
                v_v[a] += acc_v * dt
                w_v[a] += alp_v * dt
                p_v[a] += v_v[a] * dt
            R_v = _rotvec_to_matrix_nb(w_v * dt) @ R_v

            rot_err = _matrix_to_rotvec_nb(R_v @ R.T)
            for a in range(3):
                acc = kp_track * (p_v[a] - p[a]) + kd_track * (v_v[a] - v[a])
                alp = kp_track * rot_err[a] + kd_track * (w_v[a] - w[a])
                v[a] += acc * dt
                w[a] += alp * dt
                p[a] += v[a] * dt
            R = _rotvec_to_matrix_nb(w * dt) @ R

            bound = 0.0
            ok = True
            for a in range(3):
                for val in (p_v[a], v_v[a], w_v[a], p[a], v[a], w[a]):
                    av = abs(val)
                    if not np.isfinite(av):
                        ok = False
                    elif av > bound:
                        bound = av
            if (not ok) or bound > 1e6:
                status = 1
                break
        return k_log, p_log, rv_log, wrench_log, status


def kac_rollout_p2p(att, targets, target_dot, p0, R0, kp_bar, kd_bar,
                    kp_tilde, kd_tilde, km_tilde, kp_track, kd_track, dt):
    """Integrate the all-p2p control loop; raises NumericalBlowup on
    instability after zero-filling the remaining log."""
    args = [np.ascontiguousarray(a, dtype=np.float64)
            for a in (att, targets, target_dot, p0, R0, kp_bar, kd_bar)]
    fn = kac_rollout_p2p_numba if HAVE_NUMBA else kac_rollout_p2p_numpy
    k_log, p_log, rv_log, wrench_log, status = fn(
        *args, float(kp_tilde), float(kd_tilde), float(km_tilde),
        float(kp_track), float(kd_track), float(dt))
    if status != 0:
        from .errors import NumericalBlowup
        raise NumericalBlowup("admittance state exceeded stability bound")
    return k_log, p_log, rv_log, wrench_log

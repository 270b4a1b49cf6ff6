"""Compiled inner loops shared by the dynamics, field and diffusion modules.

Mode arrays use a struct-of-arrays layout: ``k`` is ``(4, N)`` (upper index),
``wzr``/``wzi`` are ``(6, N)`` real and imaginary parts of the weighted mode
amplitudes ``w_n z_n``.
"""
import math

import numpy as np
from numba import njit

# ||Z||_inf threshold for the degree-6 Taylor step; truncation ~ THETA**7 / 7!
EXPM_THETA = 0.03125
EXPM_DEGREE = 6

SCHAY_DUDLEY = 0
JUTTNER_LAB = 1


@njit(cache=True)
def field_at(k, wzr, wzi, x, out, c, s):
    """F(x) = sum_n Re[w_n z_n exp(-i k_n.x)] into ``out`` (6,)."""
    N = k.shape[1]
    x0 = x[0]
    x1 = x[1]
    x2 = x[2]
    x3 = x[3]
    k0 = k[0]
    k1 = k[1]
    k2 = k[2]
    k3 = k[3]
    for n in range(N):
        ph = k0[n] * x0 - k1[n] * x1 - k2[n] * x2 - k3[n] * x3
        c[n] = math.cos(ph)
        s[n] = math.sin(ph)
    for a in range(6):
        acc = 0.0
        zr = wzr[a]
        zi = wzi[a]
        for n in range(N):
            acc += zr[n] * c[n] + zi[n] * s[n]
        out[a] = acc


@njit(cache=True)
def mixed_from_packed(f, Z, scale):
    """Z = scale * F^mu_nu for the packed tensor f."""
    e1, e2, e3, b1, b2, b3 = f[0], f[1], f[2], f[3], f[4], f[5]
    Z[0, 0] = 0.0
    Z[0, 1] = scale * e1
    Z[0, 2] = scale * e2
    Z[0, 3] = scale * e3
    Z[1, 0] = scale * e1
    Z[1, 1] = 0.0
    Z[1, 2] = scale * b3
    Z[1, 3] = -scale * b2
    Z[2, 0] = scale * e2
    Z[2, 1] = -scale * b3
    Z[2, 2] = 0.0
    Z[2, 3] = scale * b1
    Z[3, 0] = scale * e3
    Z[3, 1] = scale * b2
    Z[3, 2] = -scale * b1
    Z[3, 3] = 0.0


@njit(cache=True)
def expm_augmented(Z, v, E, u):
    """exp([[Z, v], [0, 0]]) = [[E, u], [0, 1]], i.e. E = e^Z, u = phi1(Z) v.

    Scaling and squaring with a truncated Taylor series of degree EXPM_DEGREE.
    """
    norm = 0.0
    for i in range(4):
        row = 0.0
        for j in range(4):
            row += abs(Z[i, j])
        if row > norm:
            norm = row
    sq = 0
    if norm > EXPM_THETA:
        sq = int(math.ceil(math.log2(norm / EXPM_THETA)))
    scale = 1.0 / (2.0 ** sq)

    A = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            A[i, j] = Z[i, j] * scale
    vs = np.empty(4)
    for i in range(4):
        vs[i] = v[i] * scale

    # Horner evaluation of E = sum A^k/k!, u = sum A^(k-1) vs / k!
    for i in range(4):
        for j in range(4):
            E[i, j] = 1.0 if i == j else 0.0
        u[i] = 0.0
    tmpE = np.empty((4, 4))
    tmpu = np.empty(4)
    for kk in range(EXPM_DEGREE, 0, -1):
        # E <- I + A E / kk ;  u <- vs/kk + A u / kk  (Horner on both series)
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for l in range(4):
                    acc += A[i, l] * E[l, j]
                tmpE[i, j] = acc / kk
            acc = 0.0
            for l in range(4):
                acc += A[i, l] * u[l]
            tmpu[i] = (acc + vs[i]) / kk
        for i in range(4):
            for j in range(4):
                E[i, j] = tmpE[i, j] + (1.0 if i == j else 0.0)
            u[i] = tmpu[i]
    # u currently holds sum_{k>=1} A^(k-1) vs / k!  (phi1 applied to vs)
    for _ in range(sq):
        for i in range(4):
            acc = 0.0
            for l in range(4):
                acc += E[i, l] * u[l]
            tmpu[i] = acc + u[i]
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for l in range(4):
                    acc += E[i, l] * E[l, j]
                tmpE[i, j] = acc
        for i in range(4):
            u[i] = tmpu[i]
            for j in range(4):
                E[i, j] = tmpE[i, j]


@njit(cache=True)
def frozen_field_step(x, p, f, dtau, mc, x_out, p_out):
    """Exact flow over dtau for a field frozen at the value f."""
    Z = np.empty((4, 4))
    E = np.empty((4, 4))
    u = np.empty(4)
    mixed_from_packed(f, Z, dtau / mc)
    expm_augmented(Z, p, E, u)
    for i in range(4):
        acc = 0.0
        for j in range(4):
            acc += E[i, j] * p[j]
        p_out[i] = acc
        x_out[i] = x[i] + (dtau / mc) * u[i]


@njit(cache=True)
def proper_step_modes(x, p, dtau, mc, k, wzr, wzi, x_out, p_out, f, c, s):
    xm = np.empty(4)
    h = 0.5 * dtau / mc
    for i in range(4):
        xm[i] = x[i] + h * p[i]
    field_at(k, wzr, wzi, xm, f, c, s)
    frozen_field_step(x, p, f, dtau, mc, x_out, p_out)


@njit(cache=True)
def lab_step_modes(x, p, dx0, mc, k, wzr, wzi, x_out, p_out, f, c, s, tol, max_iter):
    """Proper step whose length is tuned (secant) so x0 advances by exactly dx0."""
    tau_a = 0.0
    r_a = -dx0
    tau_b = mc * dx0 / p[0]
    proper_step_modes(x, p, tau_b, mc, k, wzr, wzi, x_out, p_out, f, c, s)
    r_b = (x_out[0] - x[0]) - dx0
    # x0 itself carries rounding of order ulp(x0); do not chase below it
    thresh = tol * dx0 + 4.0 * 2.220446049250313e-16 * abs(x[0])
    it = 0
    while abs(r_b) > thresh and it < max_iter and r_b != r_a:
        tau_new = tau_b - r_b * (tau_b - tau_a) / (r_b - r_a)
        tau_a = tau_b
        r_a = r_b
        tau_b = tau_new
        proper_step_modes(x, p, tau_b, mc, k, wzr, wzi, x_out, p_out, f, c, s)
        r_b = (x_out[0] - x[0]) - dx0
        it += 1
    return tau_b


@njit(cache=True)
def propagate_modes(x0, p0, step, n_steps, lab, mc, k, wzr, wzi, xs, ps, taus):
    """Fixed-step propagation recording every sample; returns max |p^2/m^2c^2 - 1|."""
    N = k.shape[1]
    f = np.empty(6)
    c = np.empty(N)
    s = np.empty(N)
    x = x0.copy()
    p = p0.copy()
    xn = np.empty(4)
    pn = np.empty(4)
    for i in range(4):
        xs[0, i] = x[i]
        ps[0, i] = p[i]
    taus[0] = 0.0
    m2c2 = mc * mc
    drift = 0.0
    for n in range(n_steps):
        if lab:
            dt = lab_step_modes(x, p, step, mc, k, wzr, wzi, xn, pn, f, c, s, 1e-13, 20)
        else:
            proper_step_modes(x, p, step, mc, k, wzr, wzi, xn, pn, f, c, s)
            dt = step
        for i in range(4):
            x[i] = xn[i]
            p[i] = pn[i]
            xs[n + 1, i] = x[i]
            ps[n + 1, i] = p[i]
        taus[n + 1] = taus[n] + dt
        p2 = p[0] * p[0] - p[1] * p[1] - p[2] * p[2] - p[3] * p[3]
        d = abs(p2 / m2c2 - 1.0)
        if d > drift:
            drift = d
    return drift


@njit(cache=True)
def propagate_checkpoints(x0, p0, step, steps_per_checkpoint, n_checkpoints, lab, mc,
                          k, wzr, wzi, p_out):
    """One particle, momenta recorded at checkpoints into p_out (n_checkpoints + 1, 4).

    Returns the maximal relative mass-shell deviation along the way.
    """
    N = k.shape[1]
    f = np.empty(6)
    c = np.empty(N)
    s = np.empty(N)
    xn = np.empty(4)
    pn = np.empty(4)
    x = x0.copy()
    p = p0.copy()
    m2c2 = mc * mc
    drift = 0.0
    for i in range(4):
        p_out[0, i] = p[i]
    for cp in range(n_checkpoints):
        for _ in range(steps_per_checkpoint):
            if lab:
                lab_step_modes(x, p, step, mc, k, wzr, wzi, xn, pn, f, c, s, 1e-13, 20)
            else:
                proper_step_modes(x, p, step, mc, k, wzr, wzi, xn, pn, f, c, s)
            for i in range(4):
                x[i] = xn[i]
                p[i] = pn[i]
            p2 = p[0] * p[0] - p[1] * p[1] - p[2] * p[2] - p[3] * p[3]
            d = abs(p2 / m2c2 - 1.0)
            if d > drift:
                drift = d
        for i in range(4):
            p_out[cp + 1, i] = p[i]
    return drift


@njit(cache=True)
def sde_steps(p, noise, ds, kappa2, kind, mc, c, kappa2_scale):
    """Euler-Maruyama steps for the momentum diffusions, in place on p (n, 3).

    noise: (n_steps, n, 3) standard normals.  kappa2_scale: (n_steps,) multiplies
    kappa2 per step (time-dependent rates); pass ones for a constant rate.
    For the lab kind ``ds`` is lab time and the proper-time increment is
    ``ds m c^2 / p0`` (pre-step p0).
    """
    n_steps = noise.shape[0]
    n = p.shape[0]
    for t in range(n_steps):
        k2 = kappa2 * kappa2_scale[t]
        kap = math.sqrt(k2)
        for i in range(n):
            px = p[i, 0]
            py = p[i, 1]
            pz = p[i, 2]
            pp = px * px + py * py + pz * pz
            p0 = math.sqrt(mc * mc + pp)
            if kind == SCHAY_DUDLEY:
                dse = ds
                coef = 1.5 * k2
            else:
                dse = ds * mc * c / p0
                coef = 0.5 * k2 * (3.0 - p0 / mc)
            sq = math.sqrt(dse)
            n0 = noise[t, i, 0]
            n1 = noise[t, i, 1]
            n2 = noise[t, i, 2]
            if pp > 0.0:
                pn = math.sqrt(pp)
                proj = (px * n0 + py * n1 + pz * n2) / pn
                extra = (p0 - mc) * proj / pn
            else:
                extra = 0.0
            p[i, 0] = px + coef * px * dse + kap * sq * (mc * n0 + extra * px)
            p[i, 1] = py + coef * py * dse + kap * sq * (mc * n1 + extra * py)
            p[i, 2] = pz + coef * pz * dse + kap * sq * (mc * n2 + extra * pz)


@njit(cache=True)
def field_at_points(k, wzr, wzi, X, out):
    """Field at each row of X (P, 4) into out (P, 6)."""
    N = k.shape[1]
    c = np.empty(N)
    s = np.empty(N)
    f = np.empty(6)
    for q in range(X.shape[0]):
        field_at(k, wzr, wzi, X[q], f, c, s)
        for a in range(6):
            out[q, a] = f[a]

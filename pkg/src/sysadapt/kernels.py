"""Hot numeric kernels, JIT-compiled with numba by default.

Set ``SYSADAPT_NUMBA=0`` to run the pure-numpy fallback: every kernel is
plain vectorized numpy, so the same source executes either way and the
flag only decides whether numba compiles it. ``python -m sysadapt.bench``
compares the two paths.

All kernels are pure functions of their inputs (random numbers are drawn
by callers and passed in as arrays), which is what makes seeded runs
bit-reproducible.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("SYSADAPT_NUMBA", "1").strip().lower() not in ("0", "false", "off")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if USE_NUMBA:
    def jit(func):
        return _njit(cache=True)(func)
else:
    def jit(func):
        return func


# Agent state layout: [stream feature (8) | sys (3) | prev action one-hot (A) | prev delay / d_b].
STREAM_DIM = 8
SYS_DIM = 3

# Stream-feature slots and their EMA decay constants.
FEAT_DIFF_FAST = 0
FEAT_DIFF_MED = 1
FEAT_DIFF_SLOW = 2
FEAT_ACC_EMA = 3
FEAT_RES = 4
FEAT_DEPTH = 5
FEAT_LAST_ACC = 6
FEAT_BIAS = 7
DIFF_EMA_DECAYS = (0.5, 0.9, 0.99)
ACC_EMA_DECAY = 0.9


def state_dim(n_actions: int) -> int:
    return STREAM_DIM + SYS_DIM + n_actions + 1


def param_count(D: int, A: int, nh: int, na: int) -> int:
    """Total parameter count for the (D -> nh -> nh -> A) policy net plus
    the ((nh + A) -> na -> 1) delay head."""
    return (nh * D + nh) + (nh * nh + nh) + (A * nh + A) + (na * (nh + A) + na) + (na + 1)


@jit
def unpack_params(theta, D, A, nh, na):
    """Views into the flat parameter vector. Writing through the views
    mutates the underlying buffer (used to accumulate gradients)."""
    o = 0
    W1 = theta[o:o + nh * D].reshape(nh, D)
    o += nh * D
    b1 = theta[o:o + nh]
    o += nh
    W2 = theta[o:o + nh * nh].reshape(nh, nh)
    o += nh * nh
    b2 = theta[o:o + nh]
    o += nh
    Wp = theta[o:o + A * nh].reshape(A, nh)
    o += A * nh
    bp = theta[o:o + A]
    o += A
    Wa1 = theta[o:o + na * (nh + A)].reshape(na, nh + A)
    o += na * (nh + A)
    ba1 = theta[o:o + na]
    o += na
    Wa2 = theta[o:o + na]
    o += na
    ba2 = theta[o:o + 1]
    return W1, b1, W2, b2, Wp, bp, Wa1, ba1, Wa2, ba2


@jit
def forward(theta, x, A, nh, na):
    """Policy forward pass: two rectified layers, linear head, stable softmax.

    Returns (probs, feats) where feats is the second hidden activation,
    reused by the delay head.
    """
    D = x.shape[0]
    W1, b1, W2, b2, Wp, bp, _, _, _, _ = unpack_params(theta, D, A, nh, na)
    a1 = np.maximum(np.dot(W1, x) + b1, 0.0)
    a2 = np.maximum(np.dot(W2, a1) + b2, 0.0)
    logits = np.dot(Wp, a2) + bp
    mx = logits.max()
    e = np.exp(logits - mx)
    probs = e / e.sum()
    return probs, a2


@jit
def predict_delay_from_feats(theta, D, feats, action, A, nh, na, d_b):
    """Delay head: softplus output scaled by the delay budget, so the
    untrained prediction sits near the budget scale and is always > 0."""
    W1, b1, W2, b2, Wp, bp, Wa1, ba1, Wa2, ba2 = unpack_params(theta, D, A, nh, na)
    u = np.zeros(nh + A)
    u[:nh] = feats
    u[nh + action] = 1.0
    aa = np.maximum(np.dot(Wa1, u) + ba1, 0.0)
    # the lower clamp keeps softplus from underflowing to exactly 0
    o = max(np.dot(Wa2, aa) + ba2[0], -60.0)
    # softplus(o) = log1p(exp(-|o|)) + max(o, 0), numerically stable
    sp = np.log1p(np.exp(-abs(o))) + max(o, 0.0)
    return sp * d_b


@jit
def scalar_loss(theta, x, action, coeff, aux_target, use_aux, d_b, A, nh, na):
    """-coeff * log p(action) plus, when use_aux, (aux_target - d_hat)^2.
    Matches backward_batch exactly; used by the finite-difference oracle."""
    D = x.shape[0]
    W1, b1, W2, b2, Wp, bp, Wa1, ba1, Wa2, ba2 = unpack_params(theta, D, A, nh, na)
    a1 = np.maximum(np.dot(W1, x) + b1, 0.0)
    a2 = np.maximum(np.dot(W2, a1) + b2, 0.0)
    logits = np.dot(Wp, a2) + bp
    mx = logits.max()
    lse = mx + np.log(np.sum(np.exp(logits - mx)))
    loss = -coeff * (logits[action] - lse)
    if use_aux:
        u = np.zeros(nh + A)
        u[:nh] = a2
        u[nh + action] = 1.0
        aa = np.maximum(np.dot(Wa1, u) + ba1, 0.0)
        o = max(np.dot(Wa2, aa) + ba2[0], -60.0)
        sp = np.log1p(np.exp(-abs(o))) + max(o, 0.0)
        d_hat = sp * d_b
        loss += (aux_target - d_hat) * (aux_target - d_hat)
    return loss


@jit
def backward_batch(theta, states, actions, coeffs, aux_targets, aux_mask, d_b, A, nh, na):
    """Exact analytic gradient, accumulated over a batch of steps, of

        sum_t [ -coeffs[t] * log p(actions[t] | states[t])
                + aux_mask[t] * (aux_targets[t] - d_hat_t)^2 ]

    Returns (grad, policy_loss_sum, aux_loss_sum). The policy head gets no
    gradient from the delay term, but the shared trunk does.
    """
    T, D = states.shape
    grad = np.zeros(theta.shape[0])
    W1, b1, W2, b2, Wp, bp, Wa1, ba1, Wa2, ba2 = unpack_params(theta, D, A, nh, na)
    gW1, gb1, gW2, gb2, gWp, gbp, gWa1, gba1, gWa2, gba2 = unpack_params(grad, D, A, nh, na)

    policy_loss = 0.0
    aux_loss = 0.0
    for t in range(T):
        x = states[t]
        a = actions[t]
        z1 = np.dot(W1, x) + b1
        a1 = np.maximum(z1, 0.0)
        z2 = np.dot(W2, a1) + b2
        a2 = np.maximum(z2, 0.0)
        logits = np.dot(Wp, a2) + bp
        mx = logits.max()
        e = np.exp(logits - mx)
        s = e.sum()
        probs = e / s

        da2 = np.zeros(nh)
        coeff = coeffs[t]
        if coeff != 0.0:
            policy_loss += -coeff * (logits[a] - (mx + np.log(s)))
            dlogits = coeff * probs
            dlogits[a] -= coeff
            gWp += np.outer(dlogits, a2)
            gbp += dlogits
            da2 += np.dot(dlogits, Wp)

        if aux_mask[t]:
            u = np.zeros(nh + A)
            u[:nh] = a2
            u[nh + a] = 1.0
            za = np.dot(Wa1, u) + ba1
            aa = np.maximum(za, 0.0)
            o = max(np.dot(Wa2, aa) + ba2[0], -60.0)
            sp = np.log1p(np.exp(-abs(o))) + max(o, 0.0)
            d_hat = sp * d_b
            err = d_hat - aux_targets[t]
            aux_loss += err * err
            if o >= 0.0:
                sig = 1.0 / (1.0 + np.exp(-o))
            else:
                eo = np.exp(o)
                sig = eo / (1.0 + eo)
            dout = 2.0 * err * sig * d_b
            gWa2 += dout * aa
            gba2[0] += dout
            dza = (dout * Wa2) * (za > 0.0)
            gWa1 += np.outer(dza, u)
            gba1 += dza
            du = np.dot(dza, Wa1)
            da2 += du[:nh]

        dz2 = da2 * (z2 > 0.0)
        gW2 += np.outer(dz2, a1)
        gb2 += dz2
        dz1 = np.dot(dz2, W2) * (z1 > 0.0)
        gW1 += np.outer(dz1, x)
        gb1 += dz1

    return grad, policy_loss, aux_loss


@jit
def markov_scan(u, p_on, p_off):
    """Two-state on/off chains driven by pre-drawn uniforms u[T, P].
    Processes start off and transition before the first sample."""
    T, P = u.shape
    active = np.zeros((T, P))
    state = np.zeros(P)
    for t in range(T):
        for p in range(P):
            if state[p] > 0.5:
                state[p] = 1.0 if u[t, p] >= p_off[p] else 0.0
            else:
                state[p] = 1.0 if u[t, p] < p_on[p] else 0.0
            active[t, p] = state[p]
    return active


@jit
def ema_delta_scan(loads, factor):
    """Smoothed load (EMA seeded at loads[0]) and one-step delta clamped
    to [-1, 1]."""
    T = loads.shape[0]
    ema = np.empty(T)
    delta = np.empty(T)
    ema[0] = loads[0]
    delta[0] = 0.0
    for t in range(1, T):
        ema[t] = (1.0 - factor) * ema[t - 1] + factor * loads[t]
        d = loads[t] - loads[t - 1]
        delta[t] = min(max(d, -1.0), 1.0)
    return ema, delta


@jit
def ar1_scan(z, rho, mu, sigma, d0):
    """AR(1) difficulty series clamped to [0, 1]; out[0] is the start value."""
    T = z.shape[0]
    out = np.empty(T)
    out[0] = min(max(d0, 0.0), 1.0)
    for t in range(1, T):
        v = rho * out[t - 1] + (1.0 - rho) * mu + sigma * z[t]
        out[t] = min(max(v, 0.0), 1.0)
    return out


@jit
def feature_update(h, difficulty, res_norm, depth_norm, acc):
    """In-place stream-feature recurrence. Keep in sync with rollout."""
    h[0] = 0.5 * h[0] + 0.5 * difficulty
    h[1] = 0.9 * h[1] + 0.1 * difficulty
    h[2] = 0.99 * h[2] + 0.01 * difficulty
    h[3] = 0.9 * h[3] + 0.1 * acc
    h[4] = res_norm
    h[5] = depth_norm
    h[6] = acc
    h[7] = 1.0


@jit
def rollout(theta, A, nh, na,
            cost, q, res_norm_a, depth_norm_a,
            w_diff, acc_sigma, binary_mode,
            base_speed, overhead, noise_sigma, cap_floor,
            lambda_acc, d_b,
            loads, ema, delta, diffs,
            u_act, z_delay, acc_noise,
            greedy, sys_mask):
    """Simulate one episode: per step build the agent state, run the policy,
    pick an action, realize delay/accuracy/reward, and advance the stream
    feature. cost/q/res_norm_a/depth_norm_a are flat per-action tables.

    greedy: 1 -> argmax (lowest index wins ties); 0 -> inverse-CDF sample
    on u_act. sys_mask zeroes the system slots and the previous-delay slot
    (the system-blind ablation). acc_noise holds normals in continuous mode
    and uniforms in binary mode.
    """
    T = loads.shape[0]
    D = STREAM_DIM + SYS_DIM + A + 1
    states = np.zeros((T, D))
    actions = np.zeros(T, dtype=np.int64)
    probs_sel = np.zeros(T)
    accs = np.zeros(T)
    delays = np.zeros(T)
    rewards = np.zeros(T)
    dhats = np.zeros(T)

    h = np.zeros(STREAM_DIM)
    h[7] = 1.0
    prev_a = -1
    prev_delay = 0.0
    x = np.zeros(D)
    for t in range(T):
        for k in range(STREAM_DIM):
            x[k] = h[k]
        x[STREAM_DIM] = loads[t] * sys_mask
        x[STREAM_DIM + 1] = ema[t] * sys_mask
        x[STREAM_DIM + 2] = delta[t] * sys_mask
        for k in range(A):
            x[STREAM_DIM + SYS_DIM + k] = 0.0
        if prev_a >= 0:
            x[STREAM_DIM + SYS_DIM + prev_a] = 1.0
        x[D - 1] = (prev_delay / d_b) * sys_mask

        probs, feats = forward(theta, x, A, nh, na)
        if greedy:
            a = int(np.argmax(probs))
        else:
            cs = np.cumsum(probs)
            a = int(np.searchsorted(cs, u_act[t], side='right'))
            if a >= A:
                a = A - 1

        eff = max(1.0 - loads[t], cap_floor)
        delay = cost[a] / (base_speed * eff) + overhead
        if noise_sigma > 0.0:
            delay *= np.exp(noise_sigma * z_delay[t])

        exp_acc = q[a] - w_diff * diffs[t]
        exp_acc = min(max(exp_acc, 0.0), 1.0)
        if binary_mode:
            acc = 1.0 if acc_noise[t] < exp_acc else 0.0
        else:
            acc = exp_acc
            if acc_sigma > 0.0:
                acc = min(max(acc + acc_sigma * acc_noise[t], 0.0), 1.0)

        r = lambda_acc * acc - max(delay - d_b, 0.0)

        states[t] = x
        actions[t] = a
        probs_sel[t] = probs[a]
        accs[t] = acc
        delays[t] = delay
        rewards[t] = r
        dhats[t] = predict_delay_from_feats(theta, D, feats, a, A, nh, na, d_b)

        feature_update(h, diffs[t], res_norm_a[a], depth_norm_a[a], acc)
        prev_a = a
        prev_delay = delay

    return states, actions, probs_sel, accs, delays, rewards, dhats


@jit
def adam_step(theta, grad, m, v, step, lr, beta1, beta2, eps):
    """One adaptive-moment update, in place on theta/m/v. step is 1-based."""
    m[:] = beta1 * m + (1.0 - beta1) * grad
    v[:] = beta2 * v + (1.0 - beta2) * grad * grad
    mh = m / (1.0 - beta1 ** step)
    vh = v / (1.0 - beta2 ** step)
    theta -= lr * mh / (np.sqrt(vh) + eps)

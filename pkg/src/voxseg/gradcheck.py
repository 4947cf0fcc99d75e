"""Finite-difference verification of analytic gradients.

Comparison uses |analytic - numeric| <= atol + rtol * max(|analytic|,
|numeric|).  The absolute floor guards coordinates whose true gradient is
near zero, where central differences on a float32 pipeline carry noise
regardless of correctness.  The reported relative error is taken only over
coordinates with magnitude well above that floor, so the printed number
stays meaningful.

Numeric values are taken from the op's output tensor through a fixed
float64 probe contraction rather than the graph's own float32 scalar; the
final rounding of a large reduction would otherwise swamp the quotient at
small step sizes.  Ops that are exactly linear in their inputs are stepped
at h=0.25 (central differences are exact for linear maps, so the larger
step only suppresses rounding noise); curved ops use h=1e-3, which stays
inside every kink/clamp margin the test inputs guarantee.

Whole-network checks walk a ladder of step sizes and accept a coordinate
if any step agrees: on a float32 graph no single h works everywhere, since
large steps sweep leaky-relu kinks of high-impact deep activations (error
O(h) on unlucky coordinates) while small steps amplify the ~2e-7 forward
evaluation jitter (error O(1/h)).  A genuinely wrong gradient fails every
step, which the corrupted-kernel negative controls verify.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .discriminator import Discriminator, DiscriminatorSpec, discriminator_loss
from .generator import Di2inSpec, Generator, total_loss
from .tensor import Tensor

# central-difference step for ops linear in every differentiable input
LINEAR_H = 0.25


@dataclass
class CheckResult:
    name: str
    max_rel: float
    max_abs: float
    passed: bool


def _central_diff(value, arr, idx, h):
    orig = arr[idx]
    arr[idx] = orig + np.float32(h)
    fp = value()
    arr[idx] = orig - np.float32(h)
    fm = value()
    arr[idx] = orig
    return (fp - fm) / (2.0 * h)


def _best_diff(value, arr, idx, steps, analytic):
    """Smallest |analytic - numeric| over the step ladder, with its numeric."""
    best = None
    for h in steps:
        num = _central_diff(value, arr, idx, h)
        diff = abs(analytic - num)
        if best is None or diff < best[0]:
            best = (diff, num)
    return best


def check_tensor_grads(name, build_out, tensors, rng, samples=10,
                       h=1e-3, rtol=1e-3, atol=1e-4):
    """Compare backward() grads of build_out() against central differences.

    build_out must recompute the forward pass from the tensors' current
    data on each call and may return a tensor of any shape; non-scalar
    outputs are contracted with a fixed random probe.
    """
    for t in tensors:
        t.zero_grad()
    first = build_out()
    if first.data.ndim == 0:
        loss = first

        def value():
            return float(build_out().data)
    else:
        p32 = (rng.standard_normal(first.shape)
               / np.sqrt(first.data.size)).astype(np.float32)
        probe = Tensor(p32)
        p64 = p32.astype(np.float64).ravel()
        loss = ops.tsum(ops.mul(first, probe))

        def value():
            return float(np.dot(build_out().data.ravel().astype(np.float64), p64))

    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros(t.shape, np.float32)
                for t in tensors]

    steps = (h,) if np.isscalar(h) else tuple(h)
    max_rel = 0.0
    max_abs = 0.0
    passed = True
    for t, grad in zip(tensors, analytic):
        n = t.data.size
        coords = rng.choice(n, size=min(samples, n), replace=False)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for c in coords:
            a = float(gflat[int(c)])
            diff, num = _best_diff(value, flat, int(c), steps, a)
            scale = max(abs(a), abs(num))
            if diff > atol + rtol * scale:
                passed = False
            max_abs = max(max_abs, diff)
            if scale >= 100.0 * atol:
                max_rel = max(max_rel, diff / scale)
    return CheckResult(name=name, max_rel=max_rel, max_abs=max_abs, passed=passed)


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor((rng.uniform(lo, hi, size=shape)).astype(np.float32), requires_grad=True)


def primitive_checks(seed=0, h=1e-3, rtol=1e-3, atol=1e-4, samples=10):
    """Finite-difference checks for every primitive operation."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    results = []

    def run(name, build_out, tensors, step):
        results.append(check_tensor_grads(name, build_out, tensors, rng,
                                          samples=samples, h=step,
                                          rtol=rtol, atol=atol))

    x = _rand(rng, (2, 3, 4, 4, 4))
    w = _rand(rng, (2, 3, 3, 3, 3))
    b = _rand(rng, (2,))
    run("conv3d_stride1", lambda: ops.conv3d(x, w, b, stride=1), [x, w, b], LINEAR_H)

    x2 = _rand(rng, (2, 2, 5, 4, 4))
    w2 = _rand(rng, (3, 2, 3, 3, 3))
    b2 = _rand(rng, (3,))
    run("conv3d_stride2", lambda: ops.conv3d(x2, w2, b2, stride=2), [x2, w2, b2], LINEAR_H)

    for factor, shape in ((2, (2, 2, 3, 3, 3)), (4, (1, 2, 2, 3, 2)), (16, (1, 1, 2, 2, 2))):
        xu = _rand(rng, shape)
        run(f"trilinear_upscale_x{factor}",
            lambda xu=xu, factor=factor: ops.trilinear_upscale(xu, factor),
            [xu], LINEAR_H)

    # keep values away from the kink at 0 (sub-gradient there is untestable by FD)
    xl = Tensor(np.where(np.abs(v := rng.uniform(-1, 1, (3, 4, 5))) < 0.05, 0.5, v).astype(np.float32),
                requires_grad=True)
    run("leaky_relu", lambda: ops.leaky_relu(xl, 0.1), [xl], h)

    xb = _rand(rng, (2, 3, 4, 4, 4))
    gb = _rand(rng, (3,), 0.5, 1.5)
    bb = _rand(rng, (3,), -0.5, 0.5)
    rm = np.zeros(3, np.float32)
    rv = np.ones(3, np.float32)
    run("batch_norm_train",
        lambda: ops.batch_norm(xb, gb, bb, rm.copy(), rv.copy(), "train"),
        [xb, gb, bb], h)
    rm2 = rng.uniform(-0.5, 0.5, 3).astype(np.float32)
    rv2 = rng.uniform(0.5, 2.0, 3).astype(np.float32)
    run("batch_norm_infer",
        lambda: ops.batch_norm(xb, gb, bb, rm2, rv2, "infer"),
        [xb, gb, bb], h)

    xa = _rand(rng, (2, 2, 3, 3, 3))
    xc = _rand(rng, (2, 3, 3, 3, 3))
    run("concat_channels", lambda: ops.concat_channels(xa, xc), [xa, xc], LINEAR_H)

    xp = _rand(rng, (2, 1, 4, 4, 4), 0.05, 0.95)
    tgt = Tensor((rng.uniform(0, 1, (2, 1, 4, 4, 4)) > 0.5).astype(np.float32))
    run("bce_loss", lambda: ops.bce_loss(xp, tgt), [xp], h)

    xs = _rand(rng, (3, 4), -3.0, 3.0)
    run("sigmoid", lambda: ops.sigmoid(xs), [xs], h)

    xn = _rand(rng, (3, 5))
    wn = _rand(rng, (5, 2))
    bn = _rand(rng, (2,))
    run("linear", lambda: ops.linear(xn, wn, bn), [xn, wn, bn], LINEAR_H)

    xg = _rand(rng, (2, 3, 4, 4, 4))
    run("global_avg_pool", lambda: ops.global_avg_pool(xg), [xg], LINEAR_H)

    base = np.concatenate([rng.uniform(0.6, 2.4, 40), rng.uniform(0.1, 0.4, 10),
                           rng.uniform(2.6, 3.0, 10)])
    rng.shuffle(base)
    xm = Tensor(base.astype(np.float32), requires_grad=True)
    run("clamp_log_mean", lambda: ops.mean(ops.log(ops.clamp(xm, 0.5, 2.5))), [xm], h)

    return results


def composed_checks(seed=0, h=(1e-4, 3e-4, 1e-3), rtol=1e-2, atol=1.5e-3, samples=10):
    """Whole-network finite-difference checks on tiny graphs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    results = []

    spec = Di2inSpec(base_filters=2, encoder_levels=2, branch_attach_levels=(2, 0),
                     branch_upscale_factors=(4, 1), loss_weights=(1.0, 1.0, 1.0))
    gen = Generator(spec, seed=seed)
    x = Tensor(rng.uniform(0, 1, (1, 1, 16, 16, 16)).astype(np.float32))
    label = Tensor((rng.uniform(0, 1, (1, 1, 16, 16, 16)) > 0.7).astype(np.float32))
    params = [p for _, p in gen.named_parameters()]
    results.append(check_tensor_grads(
        "di2in_total_loss",
        lambda: total_loss(gen(x, mode="train"), label, spec.loss_weights),
        params, rng, samples=samples, h=h, rtol=rtol, atol=atol))

    dspec = DiscriminatorSpec(base_filters=2, conv_levels=2)
    disc = Discriminator(dspec, seed=seed)
    y_gt = Tensor((rng.uniform(0, 1, (2, 1, 8, 8, 8)) > 0.6).astype(np.float32))
    y_pr = Tensor(rng.uniform(0, 1, (2, 1, 8, 8, 8)).astype(np.float32))
    dparams = [p for _, p in disc.named_parameters()]
    results.append(check_tensor_grads(
        "discriminator_loss",
        lambda: discriminator_loss(disc(y_gt, mode="train"), disc(y_pr, mode="train")),
        dparams, rng, samples=samples, h=h, rtol=rtol, atol=atol))

    return results


def full_suite(seed=0, rtol=None):
    """The suite the CLI runs: primitives then composed networks.

    rtol, when given, overrides both stages' relative tolerance (absolute
    floor scales along at rtol/10).
    """
    if rtol is None:
        prim = primitive_checks(seed=seed)
        comp = composed_checks(seed=seed)
    else:
        prim = primitive_checks(seed=seed, rtol=rtol, atol=rtol / 10.0)
        comp = composed_checks(seed=seed, rtol=rtol, atol=rtol / 10.0)
    return prim + comp

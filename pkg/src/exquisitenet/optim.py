"""Optimizers: SGD, Adam, rectified Adam, Lookahead, and the combined
Ranger rule (gradient centralization + rectified Adam + Lookahead).

All optimizers operate on a dict of named parameter arrays and a matching
dict of gradient arrays, updating parameters in place so the model sees the
new values without any rebinding.
"""

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


def centralize_gradient(grad):
    """Remove the mean over all but the first axis, per output slice.

    Applies only to tensors of rank 2 or higher; vectors and scalars pass
    through untouched. Returns a new array.
    """
    if grad.ndim < 2:
        return grad
    axes = tuple(range(1, grad.ndim))
    return grad - grad.mean(axis=axes, keepdims=True)


class Optimizer:
    def __init__(self, params, lr):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.step_count = 0

    def _match(self, grads):
        if set(grads) != set(self.params):
            missing = sorted(set(self.params) - set(grads))
            extra = sorted(set(grads) - set(self.params))
            raise ShapeError(f"gradient names disagree (missing {missing}, extra {extra})")
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ShapeError(
                    f"gradient shape {g.shape} != param shape {self.params[name].shape} for {name!r}")
        # abort before touching any parameter or moment buffer
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}; step aborted")

    def step(self, grads):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr=0.01, momentum=0.0):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()} if momentum else None

    def step(self, grads):
        self._match(grads)
        self.step_count += 1
        for name, p in self.params.items():
            g = grads[name]
            if self.velocity is not None:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p -= (self.lr * g).astype(p.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in self.params.items()}

    def step(self, grads):
        self._match(grads)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name].astype(np.float64, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= (self.lr * update).astype(p.dtype)


class RAdam(Optimizer):
    """Adam with the variance rectification warmup.

    Early steps, where the second-moment estimate is too noisy to trust,
    fall back to bias-corrected momentum; once the rectification term
    rho_t exceeds 4 the adaptive step turns on with multiplier r_t.
    The most recent step's behavior is exposed through `last_rectified`
    and `last_rt` so tests can watch the warmup switch over.
    """

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in self.params.items()}
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0
        self.last_rectified = None
        self.last_rt = None

    def _schedule(self, t):
        b2t = self.beta2 ** t
        rho_t = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho_t > 4.0:
            rt = np.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * self.rho_inf)
                         / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho_t))
            return True, rt, rho_t
        return False, 1.0, rho_t

    def step(self, grads):
        self._match(grads)
        self.step_count += 1
        t = self.step_count
        rectified, rt, _ = self._schedule(t)
        self.last_rectified = rectified
        self.last_rt = rt
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name].astype(np.float64, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / bc1
            if rectified:
                update = rt * mhat / (np.sqrt(v / bc2) + self.eps)
            else:
                update = mhat
            p -= (self.lr * update).astype(p.dtype)


class Lookahead:
    """Wraps an inner optimizer with slow weights synchronized every k steps.

    slow <- slow + alpha * (fast - slow), then fast <- slow. The wrapped
    optimizer's params are the fast weights (the live model tensors).
    """

    def __init__(self, inner, k=6, alpha=0.5):
        if k < 1:
            raise ConfigError(f"sync period must be >= 1, got {k}")
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
        self.inner = inner
        self.k = int(k)
        self.alpha = float(alpha)
        self.params = inner.params
        self.slow = {k2: v.copy() for k2, v in inner.params.items()}
        self.step_count = 0
        self.sync_count = 0

    @property
    def lr(self):
        return self.inner.lr

    def step(self, grads):
        self.inner.step(grads)
        self.step_count += 1
        if self.step_count % self.k == 0:
            for name, fast in self.params.items():
                s = self.slow[name]
                s += self.alpha * (fast.astype(s.dtype, copy=False) - s)
                fast[...] = s.astype(fast.dtype, copy=False)
            self.sync_count += 1


class Ranger:
    """Gradient centralization feeding rectified Adam under Lookahead."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8,
                 k=6, alpha=0.5, centralize=True):
        self.radam = RAdam(params, lr=lr, betas=betas, eps=eps)
        self.lookahead = Lookahead(self.radam, k=k, alpha=alpha)
        self.centralize = bool(centralize)
        self.params = self.radam.params

    @property
    def lr(self):
        return self.radam.lr

    @property
    def step_count(self):
        return self.lookahead.step_count

    @property
    def sync_count(self):
        return self.lookahead.sync_count

    @property
    def slow(self):
        return self.lookahead.slow

    def step(self, grads):
        if self.centralize:
            grads = {k: centralize_gradient(g) for k, g in grads.items()}
        self.lookahead.step(grads)


_FACTORY = {
    "sgd": lambda params, lr, **kw: SGD(params, lr=lr, **kw),
    "adam": lambda params, lr, **kw: Adam(params, lr=lr, **kw),
    "radam": lambda params, lr, **kw: RAdam(params, lr=lr, **kw),
    "ranger": lambda params, lr, **kw: Ranger(params, lr=lr, **kw),
}


def make_optimizer(name, params, lr, **kwargs):
    try:
        factory = _FACTORY[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown optimizer {name!r}; choices: {sorted(_FACTORY)}") from None
    return factory(params, lr, **kwargs)

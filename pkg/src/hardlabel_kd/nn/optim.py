import numpy as np


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grads
        self.v *= b2
        self.v += (1 - b2) * grads * grads
        lr_t = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        params -= (lr_t * self.m / (np.sqrt(self.v) + self.eps)).astype(params.dtype)


class SGD:
    def __init__(self, lr=0.01, momentum=0.0, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = None

    def step(self, params, grads):
        g = grads + self.weight_decay * params if self.weight_decay else grads
        if self.momentum:
            if self.velocity is None:
                self.velocity = np.zeros_like(params)
            self.velocity *= self.momentum
            self.velocity += g
            g = self.velocity
        params -= (self.lr * g).astype(params.dtype)


def make_optimizer(name, lr, **kwargs):
    if name == "adam":
        return Adam(lr, **{k: v for k, v in kwargs.items() if k in ("beta1", "beta2", "eps")})
    if name == "sgd":
        return SGD(lr, **{k: v for k, v in kwargs.items() if k in ("momentum", "weight_decay")})
    raise ValueError(f"unknown optimizer {name!r}")

"""
Per-group optimizers, gradient clipping and learning-rate schedules.

Every gradient group gets its own optimizer instance; clipping and weight decay never look beyond that group.
"""

import math

import numpy as np


def cosine_lr(step, total, lr_start, lr_end):
    """lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total)) / 2."""

    if not 0 <= step <= total:
        raise ValueError(f"step must be in 0..{total}, got {step}")
    if total == 0:
        return lr_start
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total))


def warmup_factor(epoch, warmup_epochs):
    """Linear warmup multiplier (epoch + 1) / warmup_epochs during the first warmup_epochs epochs."""

    if warmup_epochs and epoch < warmup_epochs:
        return (epoch + 1) / warmup_epochs
    return 1.0


def scheduled_lr(plan, epoch):
    """Learning rate of an epoch: cosine annealing, times the HGB warmup factor."""

    spec = plan.optimizer
    lr = cosine_lr(min(epoch, plan.epochs), plan.epochs, spec.lr_start, spec.lr_end)
    return lr * warmup_factor(epoch, plan.effective_warmup)


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before."""

    total = math.sqrt(sum(float(np.sum(param.grad * param.grad)) for param in params))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for param in params:
            param.grad = param.grad * scale
    return total


class Optimizer:
    """Base class: holds the parameters of one gradient group, their buffers and a step count."""

    buffer_names = ()

    def __init__(self, params, lr, weight_decay=0.0, grad_clip=None):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.step_count = 0
        self.buffers = {
            (param.name, buffer): np.zeros_like(param.data) for param in self.params for buffer in self.buffer_names
        }
        self.last_grad_norm = None

    @property
    def nbytes(self):
        return sum(buffer.nbytes for buffer in self.buffers.values())

    def step(self):
        self.last_grad_norm = clip_grad_norm(self.params, self.grad_clip)
        self.step_count += 1
        for param in self.params:
            param.assign(self.update(param, param.grad))

    def update(self, param, grad):
        raise NotImplementedError

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def state_dict(self):
        return {
            'step': self.step_count,
            'lr': self.lr,
            'buffers': {f"{name}.{buffer}": value for (name, buffer), value in self.buffers.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state['step'])
        self.lr = float(state['lr'])
        for (name, buffer), value in self.buffers.items():
            stored = state['buffers'][f"{name}.{buffer}"]
            self.buffers[(name, buffer)] = np.array(stored, dtype=value.dtype).reshape(value.shape)


class SGD(Optimizer):
    """SGD with heavy-ball momentum and weight decay added to the gradient."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0, grad_clip=None):
        self.momentum = momentum
        self.buffer_names = ('momentum',) if momentum else ()
        super().__init__(params, lr, weight_decay, grad_clip)

    def update(self, param, grad):
        if self.weight_decay:
            grad = grad + self.weight_decay * param.data
        if self.momentum:
            key = (param.name, 'momentum')
            self.buffers[key] = self.momentum * self.buffers[key] + grad
            grad = self.buffers[key]
        return param.data - self.lr * grad


class Adam(Optimizer):
    """Adam with L2 weight decay added to the gradient."""

    buffer_names = ('exp_avg', 'exp_avg_sq')
    decoupled = False

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, grad_clip=None):
        self.betas = tuple(betas)
        self.eps = eps
        super().__init__(params, lr, weight_decay, grad_clip)

    def update(self, param, grad):
        beta1, beta2 = self.betas
        data = param.data
        if self.weight_decay:
            if self.decoupled:
                data = data * (1.0 - self.lr * self.weight_decay)
            else:
                grad = grad + self.weight_decay * data
        m_key, v_key = (param.name, 'exp_avg'), (param.name, 'exp_avg_sq')
        self.buffers[m_key] = beta1 * self.buffers[m_key] + (1.0 - beta1) * grad
        self.buffers[v_key] = beta2 * self.buffers[v_key] + (1.0 - beta2) * grad * grad
        m_hat = self.buffers[m_key] / (1.0 - beta1 ** self.step_count)
        v_hat = self.buffers[v_key] / (1.0 - beta2 ** self.step_count)
        return data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdamW(Adam):
    """Adam with decoupled weight decay."""

    decoupled = True


def optimizer_buffer_count(spec):
    """Buffers per parameter element kept by the optimizer described by ``spec``."""

    if spec.name == 'sgd':
        return 1 if spec.momentum else 0
    return 2


def build_optimizer(spec, params, grad_clip=None, lr=None):
    """Create the optimizer named by an `OptimizerSpec` for one group's parameters."""

    lr = spec.lr_start if lr is None else lr
    if spec.name == 'sgd':
        return SGD(params, lr, momentum=spec.momentum, weight_decay=spec.weight_decay, grad_clip=grad_clip)
    if spec.name == 'adam':
        return Adam(params, lr, betas=spec.betas, eps=spec.eps, weight_decay=spec.weight_decay,
                    grad_clip=grad_clip)
    if spec.name == 'adamw':
        return AdamW(params, lr, betas=spec.betas, eps=spec.eps, weight_decay=spec.weight_decay,
                     grad_clip=grad_clip)
    raise ValueError(f"unknown optimizer {spec.name!r}")

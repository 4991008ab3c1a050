"""Manufactured-solution test problems on the unit square.

Each forcing term is written out by hand from
``u_t - (1 + ||grad u||^2) Laplace(u) = f``; the test suite checks it
against symbolic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    u0: Callable
    f: Callable
    exact_u: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    grad_energy: Optional[Callable] = None
    description: str = ""

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None


def _bubble(x, y):
    return x * (1 - x) * y * (1 - y)


def example1() -> ProblemSpec:
    """u = x(1-x)y(1-y) exp(-t)."""

    def exact_u(x, y, t):
        return _bubble(x, y) * np.exp(-t)

    def exact_grad(x, y, t):
        decay = np.exp(-t)
        return (
            (1 - 2 * x) * y * (1 - y) * decay,
            x * (1 - x) * (1 - 2 * y) * decay,
        )

    def grad_energy(t):
        return np.exp(-2 * t) / 45.0

    def f(x, y, t):
        decay = np.exp(-t)
        return -_bubble(x, y) * decay + (1 + grad_energy(t)) * 2 * decay * (
            x * (1 - x) + y * (1 - y)
        )

    return ProblemSpec(
        name="ex1",
        u0=lambda x, y: exact_u(x, y, 0.0),
        f=f,
        exact_u=exact_u,
        exact_grad=exact_grad,
        grad_energy=grad_energy,
        description="u = x(1-x)y(1-y)e^{-t}",
    )


def example2() -> ProblemSpec:
    """u = t sin(pi x) sin(pi y)."""
    pi = np.pi

    def exact_u(x, y, t):
        return t * np.sin(pi * x) * np.sin(pi * y)

    def exact_grad(x, y, t):
        return (
            t * pi * np.cos(pi * x) * np.sin(pi * y),
            t * pi * np.sin(pi * x) * np.cos(pi * y),
        )

    def grad_energy(t):
        return t**2 * pi**2 / 2

    def f(x, y, t):
        return np.sin(pi * x) * np.sin(pi * y) * (1 + 2 * pi**2 * t * (1 + grad_energy(t)))

    return ProblemSpec(
        name="ex2",
        u0=lambda x, y: exact_u(x, y, 0.0),
        f=f,
        exact_u=exact_u,
        exact_grad=exact_grad,
        grad_energy=grad_energy,
        description="u = t sin(pi x) sin(pi y)",
    )


def example3() -> ProblemSpec:
    """Unforced decay from u0 = x(1-x)y(1-y) sin(x+y); no closed-form solution."""

    def u0(x, y):
        return _bubble(x, y) * np.sin(x + y)

    def f(x, y, t):
        return np.zeros(np.broadcast(x, y).shape)

    return ProblemSpec(name="ex3", u0=u0, f=f, description="f = 0, u0 = x(1-x)y(1-y)sin(x+y)")


PROBLEMS = {"ex1": example1, "ex2": example2, "ex3": example3}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None

"""
Registry of entrywise functions f for the function-sum protocol.

A function is usable when it is nonnegative, nondecreasing, f(0) = 0,
super-additive, and approximately invertible with parameters
(theta, theta', theta''):

    f(theta' * y) >= theta * f(y)
    f(y / (4 * sqrt(theta) * theta')) >= f(y) / theta''
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from utils.errors import InvalidInstanceError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FnSpec:
    """A nonnegative function with its inverse and invertibility parameters."""
    name: str
    f: ArrayFn
    f_inv: ArrayFn
    theta: float
    theta_prime: float
    theta_dblprime: float
    cf: Callable[[float], float]

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def inverse(self, y):
        return self.f_inv(np.asarray(y, dtype=float))

    @property
    def eps1(self) -> float:
        return 1.0 / self.theta_dblprime

    @property
    def eps2(self) -> float:
        return 1.0 - 1.0 / self.theta_dblprime

    @property
    def sqrt_theta(self) -> float:
        return math.sqrt(self.theta)

    @property
    def shrink_divisor(self) -> float:
        """Argument divisor 4 * sqrt(theta) * theta' in the theta'' inequality."""
        return 4.0 * self.sqrt_theta * self.theta_prime

    @classmethod
    def power(cls, k: float) -> "FnSpec":
        """
        f(x) = x^k with theta = 2, theta' = 2^(1/k), theta'' = 2 * 32^(k/2).

        Raises:
            InvalidInstanceError: If k < 1
        """
        if k < 1:
            raise InvalidInstanceError(f"Moment order k must be >= 1, got {k}")
        k = float(k)
        return cls(
            name=f"pow:{k:g}",
            f=lambda x: np.power(x, k),
            f_inv=lambda y: np.power(y, 1.0 / k),
            theta=2.0,
            theta_prime=2.0 ** (1.0 / k),
            theta_dblprime=2.0 * 32.0 ** (k / 2.0),
            cf=lambda s: float(s) ** (k - 1.0),
        )

    @classmethod
    def huber(cls, tau: float = 1.0) -> "FnSpec":
        """
        Huber loss: x^2 / (2 tau) up to tau, x - tau/2 beyond.

        theta = 2, theta' = 2, theta'' = 128, c_f[s] = s.
        """
        if tau <= 0:
            raise InvalidInstanceError(f"Huber tau must be positive, got {tau}")
        tau = float(tau)

        def f(x):
            return np.where(x <= tau, x * x / (2.0 * tau), x - tau / 2.0)

        def f_inv(y):
            return np.where(y <= tau / 2.0, np.sqrt(2.0 * tau * np.maximum(y, 0.0)), y + tau / 2.0)

        return cls(
            name=f"huber:{tau:g}",
            f=f,
            f_inv=f_inv,
            theta=2.0,
            theta_prime=2.0,
            theta_dblprime=128.0,
            cf=lambda s: float(s),
        )

    @classmethod
    def parse(cls, text: str) -> "FnSpec":
        """
        Parse a function descriptor such as "pow:3" or "huber:0.5".

        Raises:
            ValueError: If the family is unknown or the parameter is not a number
        """
        family, _, arg = text.strip().partition(":")
        builder = FN_REGISTRY.get(family.lower())
        if builder is None:
            raise ValueError(f"Unknown function family {family!r}; choose from {sorted(FN_REGISTRY)}")
        try:
            value = float(arg) if arg else None
        except ValueError:
            raise ValueError(f"Invalid parameter in function descriptor {text!r}")
        if value is None:
            if family.lower() == "pow":
                raise ValueError("pow needs an exponent, e.g. pow:3")
            return builder()
        return builder(value)

    def check_properties(self, rng: Optional[np.random.Generator] = None,
                         points: int = 10_000, scale: float = 100.0,
                         rtol: float = 1e-9) -> Dict[str, bool]:
        """
        Check the defining inequalities at random points.

        Args:
            rng: Generator for the test points
            points: Number of random test points
            scale: Points are drawn uniformly from [0, scale)
            rtol: Relative slack for floating-point ties

        Returns:
            Dict mapping property name to whether it held at every point
        """
        rng = rng or np.random.default_rng(0)
        x = rng.uniform(0, scale, points)
        y = rng.uniform(0, scale, points)
        fy = self(y)

        def at_least(lhs, rhs):
            return bool(np.all(lhs >= rhs * (1 - rtol) - 1e-300))

        inv = self.inverse(fy)
        s_vals = np.arange(1, 65, dtype=float)
        cf = np.array([self.cf(s) for s in s_vals])

        results = {
            "zero": float(self(0.0)) == 0.0,
            "nondecreasing": bool(np.all(np.diff(self(np.sort(x))) >= 0)),
            "superadditive": at_least(self(x + y), self(x) + fy),
            "growth": at_least(self(self.theta_prime * y), self.theta * fy),
            "shrink": at_least(self(y / self.shrink_divisor), fy / self.theta_dblprime),
            "inverse": bool(np.allclose(inv, y, rtol=rtol, atol=0)),
            "cf_one": self.cf(1) == 1.0,
            "cf_submultiplicative": all(
                self.cf(a * b) <= self.cf(a) * self.cf(b) * (1 + rtol)
                for a in range(1, 9) for b in range(1, 9)
            ),
            "cf_superlinear": all(
                cf[i] >= cf[j] * s_vals[i] / s_vals[j] * (1 - rtol)
                for i in range(len(s_vals)) for j in range(i + 1)
            ),
        }
        failed = [name for name, ok in results.items() if not ok]
        if failed:
            logger.warning(f"{self.name}: properties failed at sampled points: {failed}")
        return results


FN_REGISTRY: Dict[str, Callable[..., FnSpec]] = {
    "pow": FnSpec.power,
    "huber": FnSpec.huber,
}


def cf_bound(fn: FnSpec, s: int) -> float:
    """
    Upper bound on c_f[s], the smallest constant with
    f(y_1 + ... + y_s) <= (c_f[s] / s) (sqrt f(y_1) + ... + sqrt f(y_s))^2.

    Args:
        fn: Registered function
        s: Number of servers (>= 1)

    Returns:
        The analytic bound
    """
    if s < 1:
        raise ValueError(f"Server count must be >= 1, got {s}")
    return float(fn.cf(s))

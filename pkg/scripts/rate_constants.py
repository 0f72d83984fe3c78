"""Tabulate the fitted rate constants against eps and the small-eps prediction for c0.

Expanding ``rho = (up + down) / 2`` in eps, the eps^2 terms cancel and
``rho - 1 + eps/2 ~ eps^3 shat^2 / 16``, so the fitted ``c0`` shrinks roughly
like ``eps shat_max^2 / 16`` while ``c1`` settles to a constant.
"""
import numpy as np

from dasep.model import ModelParams, cosine_perturbed_rate, identity_rate
from dasep.sim import lemma_constants

SHAT_MAX = 5.0


def main():
    shat = np.linspace(-SHAT_MAX, SHAT_MAX, 2001)
    print(f"{'rate':9s} {'eps':>8s} {'c0':>10s} {'eps*S^2/16':>11s} {'c1':>8s}")
    for name, rf in (("identity", identity_rate()), ("cosine", cosine_perturbed_rate(0.5))):
        for eps in (0.1, 0.05, 0.01, 0.005, 0.001):
            c0, c1 = lemma_constants(ModelParams(eps, rate_function=rf), shat)
            print(f"{name:9s} {eps:8.3g} {c0:10.4g} {eps * SHAT_MAX**2 / 16:11.4g} {c1:8.4g}")


if __name__ == "__main__":
    main()

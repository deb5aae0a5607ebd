"""The gradient penalty, taken apart with closed forms.

The critic objective adds lambda * (||grad_xhat D(xhat)|| - 1)^2 at points
interpolated between real and generated samples.  That term contains a
gradient, so optimizing it needs gradients of gradients; this script shows
the engine doing exactly that, checked against pencil-and-paper answers.

For a linear critic D(x) = w.x the input gradient is w everywhere, so the
penalty collapses to lambda * (||w|| - 1)^2 regardless of the data:

    ||w|| = 1  ->  penalty 0
    ||w|| = 2  ->  penalty lambda = 10

and d(penalty)/dw has the closed form 2*lambda*(||w|| - 1) * w/||w||, which
the recorded second-order pass must reproduce.
"""

import numpy as np

from lesionsynth import tensor as T
from lesionsynth.losses import GpConfig, gradient_penalty
from lesionsynth.tensor import Tensor


class LinearCritic:
    """D(x) = x @ w for flat inputs; the simplest differentiable critic."""

    def __init__(self, w):
        self.w = Tensor(np.asarray(w, dtype=np.float64), requires_grad=True)

    def __call__(self, x):
        return T.matmul(x, T.reshape(self.w, (len(self.w.data), 1)))

    def parameters(self):
        return [self.w]


def main():
    rng = np.random.default_rng(0)
    x_real = Tensor(rng.standard_normal((8, 2)))
    x_fake = Tensor(rng.standard_normal((8, 2)))
    cfg = GpConfig()  # lambda = 10

    for w in ([0.6, 0.8], [1.2, 1.6]):
        critic = LinearCritic(w)
        norm = float(np.linalg.norm(w))
        gp = gradient_penalty(critic, x_real, x_fake, cfg,
                              np.random.default_rng(1))
        expect = cfg.gp_lambda * (norm - 1.0) ** 2
        print(f"||w|| = {norm:.1f}: penalty {gp.item():.10f} "
              f"(closed form {expect:.1f})")

        # Second order: backprop THROUGH the penalty to the critic weights.
        critic.w.grad = None
        gp.backward()
        got = critic.w.grad.data
        expect_grad = (2.0 * cfg.gp_lambda * (norm - 1.0)
                       * np.asarray(w) / norm)
        print(f"  d(penalty)/dw {got} vs closed form {expect_grad}")
        assert np.allclose(got, expect_grad, atol=1e-8)

    # The same machinery, finite-difference checked on a nonlinear critic.
    class TinyMlp:
        def __init__(self, rng):
            self.w1 = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
            self.w2 = Tensor(rng.standard_normal((4, 1)), requires_grad=True)

        def __call__(self, x):
            return T.matmul(T.leaky_relu(T.matmul(x, self.w1)), self.w2)

        def parameters(self):
            return [self.w1, self.w2]

    critic = TinyMlp(np.random.default_rng(2))
    def penalty():
        return gradient_penalty(critic, x_real, x_fake, cfg,
                                np.random.default_rng(3))

    penalty().backward()
    analytic = critic.w1.grad.data[0, 0]
    h = 1e-6
    critic.w1.data[0, 0] += h
    up = penalty().item()
    critic.w1.data[0, 0] -= 2 * h
    down = penalty().item()
    critic.w1.data[0, 0] += h
    fd = (up - down) / (2 * h)
    print(f"nonlinear critic: d(penalty)/dw1[0,0] analytic {analytic:.8f}, "
          f"central difference {fd:.8f}")
    assert abs(fd - analytic) < 1e-4 * max(1.0, abs(fd))
    print("all closed forms and finite differences agree")


if __name__ == "__main__":
    main()

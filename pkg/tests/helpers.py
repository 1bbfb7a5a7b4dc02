"""Finite-difference oracles and small random models shared by the test modules."""
import numpy as np

from ganrom import da_uq as du
from ganrom import reduction as rd
from ganrom.gan_train import WindowScaler
from ganrom.neural import LayerSpec, Network
from ganrom.predgan import Surrogate


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def network_grad_errors(net: Network, x: np.ndarray, rng, h=1e-6) -> tuple[float, float]:
    """(weight-gradient error, input-gradient error) of ``0.5*sum(c*y)`` for random ``c``."""
    y = net.forward(x)
    c = rng.normal(size=y.shape)

    def loss_at_input(xx):
        return float(np.sum(c * net.forward(xx)))

    def loss_now():
        return float(np.sum(c * net.forward(x)))

    net.forward(x)
    wgrads, xgrad = net.backward(c)
    w_err = 0.0
    for p, g in zip(net.parameters(), wgrads):
        def f(pp, p=p):
            saved = p.copy()
            p[...] = pp
            out = loss_now()
            p[...] = saved
            return out

        w_err = max(w_err, rel_error(g, central_diff(f, p.copy(), h)))
    x_err = rel_error(xgrad, central_diff(loss_at_input, x, h))
    return w_err, x_err


def random_layer_net(kind: str, rng) -> tuple[Network, np.ndarray]:
    """Tiny network exercising one layer kind, plus a matching input batch."""
    seed = int(rng.integers(2**31))
    b = int(rng.integers(1, 4))
    if kind == "dense":
        i, o = (int(v) for v in rng.integers(1, 7, 2))
        return Network.from_specs([LayerSpec("dense", {"fan_in": i, "fan_out": o})], seed), rng.normal(size=(b, i))
    if kind == "conv2d":
        cin, cout = (int(v) for v in rng.integers(1, 4, 2))
        h, w = (int(v) for v in rng.integers(3, 7, 2))
        stride = int(rng.integers(1, 3))
        kernel = int(rng.choice([1, 3]))
        spec = LayerSpec("conv2d", {"in_channels": cin, "out_channels": cout, "kernel": kernel, "stride": stride})
        return Network.from_specs([spec], seed), rng.normal(size=(b, cin, h, w))
    if kind == "reshape":
        specs = [LayerSpec("reshape", {"shape": [3, 2]}), LayerSpec("reshape", {"shape": [6]}),
                 LayerSpec("dense", {"fan_in": 6, "fan_out": 4}), LayerSpec("reshape", {"shape": [2, 2]})]
        return Network.from_specs(specs, seed), rng.normal(size=(b, 6))
    name = kind.split(":")[1]
    n = int(rng.integers(2, 8))
    specs = [LayerSpec("dense", {"fan_in": n, "fan_out": n}), LayerSpec("activation", {"name": name})]
    return Network.from_specs(specs, seed), rng.normal(size=(b, n)) * 1.5


LAYER_KINDS = ("dense", "conv2d", "reshape", "activation:tanh", "activation:relu",
               "activation:leaky_relu", "activation:sigmoid", "activation:identity")


def tiny_generator(seed=0, latent=4, rows=4, n_alpha=3, n_mu=2, hidden=8) -> Surrogate:
    """Small random generator with a tanh output, wrapped as a surrogate."""
    cols = n_alpha + n_mu
    specs = [
        LayerSpec("dense", {"fan_in": latent, "fan_out": hidden}),
        LayerSpec("activation", {"name": "tanh"}),
        LayerSpec("dense", {"fan_in": hidden, "fan_out": rows * cols}),
        LayerSpec("activation", {"name": "tanh"}),
        LayerSpec("reshape", {"shape": [rows, cols]}),
    ]
    net = Network.from_specs(specs, seed)
    rng = np.random.default_rng(seed + 1)
    lo = rng.uniform(-3, -1, cols)
    hi = rng.uniform(1, 3, cols)
    return Surrogate(net, WindowScaler(lo, hi), n_alpha, latent)


GRID = (2, 2)


def toy_basis(seed=0) -> rd.PcaBasis:
    """Rank-3 basis over a 2x2 grid (32 variables)."""
    rng = np.random.default_rng(seed)
    modes = rng.normal(size=(3, 32))
    X = 50 + (rng.normal(size=(40, 3)) * [10, 3, 1]) @ modes
    return rd.fit(X, 3)


def make_obs(levels, rng, weight=None, **kw) -> du.ObservationSet:
    n = len(levels)
    field = rng.integers(0, 8, n)
    w = rng.uniform(0.5, 2.0, n) if weight is None else np.asarray(weight, dtype=float)
    return du.ObservationSet(levels, rng.integers(0, 2, n), rng.integers(0, 2, n), field,
                             rng.uniform(20, 80, n), w, grid_shape=GRID, **kw)

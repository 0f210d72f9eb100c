"""Graph kernel network over cluster centroids, with hand-written backpropagation.

Layer update::

    v_{t+1}(x) = sigma(W v_t(x) + mean_{y in N(x)} K(x, y, C(x), C(y)) v_t(y))

The kernel ``K`` is a one-hidden-layer MLP producing a ``d x d`` matrix per
edge; it and ``W`` are shared by all layers.  Node states are stored as
``(k, d, S)`` so that one graph is evaluated for ``S`` applied strains at once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..optim import AdamState, ContractError, ParamStore, adam_step
from .solver import GraphSample

log = logging.getLogger(__name__)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class GraphKernelNet:
    latent_width: int = 16
    n_layers: int = 6
    radius: float = 2.0
    hidden: int = 32
    neighborhood: str = "radius"     # or "knn": self plus two nearest per side
    activation: str = "softplus"     # or "identity"
    length_scale: float = 10.0
    strain_scale: float = 0.5
    project_gain: float = 0.1        # small output layer keeps the first steps stable
    seed: int = 0
    params: ParamStore = field(init=False)

    def __post_init__(self):
        if self.neighborhood not in ("radius", "knn"):
            raise ContractError(f"unknown neighborhood {self.neighborhood!r}")
        if self.activation not in ("softplus", "identity"):
            raise ContractError(f"unknown activation {self.activation!r}")
        d, h = self.latent_width, self.hidden
        ps = ParamStore(self.seed)

        def glorot(name, fan_in, size, gain=1.0):
            b = gain * math.sqrt(3.0 / fan_in)
            ps.add(name, size=size, low=-b, high=b)

        glorot("lift_w", 3, d * 3)
        ps.add("lift_b", np.zeros(d))
        glorot("W", d, d * d, 0.5)
        glorot("k_w1", 4, h * 4)
        ps.add("k_b1", np.zeros(h))
        glorot("k_w2", h * d, d * d * h, 0.5)
        ps.add("k_b2", np.zeros(d * d))
        glorot("proj_w", d, d, self.project_gain)
        ps.add("proj_b", np.zeros(1))
        self.params = ps

    def mat(self, name, shape):
        return self.params[name].reshape(shape)


@dataclass(frozen=True)
class Graph:
    x: np.ndarray
    stiffness: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    agg: sp.csr_matrix       # (k, E) mean aggregation into dst
    scatter: sp.csr_matrix   # (k, E) sum into src
    edge_features: np.ndarray

    @property
    def k(self) -> int:
        return self.x.size


def neighborhoods(x: np.ndarray, radius: float, mode: str = "radius") -> list[np.ndarray]:
    """Neighbour ids per node, self included.

    ``radius`` mode falls back to the two nearest per side when fewer than
    three nodes lie within the radius.
    """
    order = np.argsort(x, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(x.size)
    out = []
    for i in range(x.size):
        nb = np.nonzero(np.abs(x - x[i]) <= radius)[0] if mode == "radius" else np.array([], int)
        if nb.size < 3:
            r = rank[i]
            nb = order[max(r - 2, 0):r + 3]
        out.append(np.unique(np.append(nb, i)))
    return out


def build_graph(net: GraphKernelNet, x, stiffness) -> Graph:
    x = np.asarray(x, float)
    stiffness = np.asarray(stiffness, float)
    nbs = neighborhoods(x, net.radius, net.neighborhood)
    dst = np.concatenate([np.full(nb.size, i) for i, nb in enumerate(nbs)])
    src = np.concatenate(nbs)
    w = np.concatenate([np.full(nb.size, 1.0 / nb.size) for nb in nbs])
    E, k = src.size, x.size
    agg = sp.csr_matrix((w, (dst, np.arange(E))), shape=(k, E))
    scatter = sp.csr_matrix((np.ones(E), (src, np.arange(E))), shape=(k, E))
    L = net.length_scale
    feats = np.stack([x[dst] / L, x[src] / L, stiffness[dst], stiffness[src]], axis=1)
    return Graph(x, stiffness, src, dst, agg, scatter, feats)


def _act(net, z):
    return softplus(z) if net.activation == "softplus" else z


def _dact(net, z):
    return sigmoid(z) if net.activation == "softplus" else np.ones_like(z)


def kernel_forward(net: GraphKernelNet, graph: Graph):
    d, h = net.latent_width, net.hidden
    pre = graph.edge_features @ net.mat("k_w1", (h, 4)).T + net.params["k_b1"]
    H = softplus(pre)
    K = (H @ net.mat("k_w2", (d * d, h)).T + net.params["k_b2"]).reshape(-1, d, d)
    return K, (pre, H)


def _inputs(net, graph, strains):
    S = len(strains)
    a = np.empty((graph.k, 3, S))
    a[:, 0, :] = (graph.x / net.length_scale)[:, None]
    a[:, 1, :] = graph.stiffness[:, None]
    a[:, 2, :] = np.asarray(strains, float)[None, :] / net.strain_scale
    return a


def forward_graph(net: GraphKernelNet, graph: Graph, strains, K=None, keep=False):
    """Predicted strains ``(k, S)``; with ``keep`` also the tape for backprop."""
    d = net.latent_width
    if K is None:
        K, _ = kernel_forward(net, graph)
    a = _inputs(net, graph, strains)
    W = net.mat("W", (d, d))
    v = np.matmul(net.mat("lift_w", (d, 3)), a) + net.params["lift_b"][None, :, None]
    k, S = graph.k, a.shape[2]
    tape = [v]
    zs = []
    for _ in range(net.n_layers):
        msg = np.matmul(K, v[graph.src])                       # (E, d, S)
        agg = (graph.agg @ msg.reshape(-1, d * S)).reshape(k, d, S)
        z = np.matmul(W, v) + agg
        v = _act(net, z)
        zs.append(z)
        tape.append(v)
    out = np.einsum("a,kas->ks", net.params["proj_w"], v) + net.params["proj_b"][0]
    return (out, (a, tape, zs)) if keep else out


def gkn_forward(net: GraphKernelNet, sample: GraphSample) -> np.ndarray:
    graph = build_graph(net, sample.x, sample.stiffness)
    return forward_graph(net, graph, [sample.eps_bar])[:, 0]


def backward_graph(net: GraphKernelNet, graph: Graph, K, kcache, tape_all, dout, grads):
    """Accumulate parameter gradients into ``grads`` given ``dL/dout`` ``(k, S)``."""
    d, h = net.latent_width, net.hidden
    a, tape, zs = tape_all
    k, S = dout.shape
    W = net.mat("W", (d, d))
    grads["proj_w"] += np.einsum("ks,kas->a", dout, tape[-1])
    grads["proj_b"] += dout.sum()
    dv = net.params["proj_w"][None, :, None] * dout[:, None, :]
    dW = np.zeros((d, d))
    dK = np.zeros_like(K)
    for t in range(net.n_layers - 1, -1, -1):
        dz = dv * _dact(net, zs[t])
        v_prev = tape[t]
        dW += np.einsum("kas,kbs->ab", dz, v_prev)
        dv = np.matmul(W.T, dz)
        dmsg = (graph.agg.T @ dz.reshape(k, d * S)).reshape(-1, d, S)
        u = v_prev[graph.src]
        dK += np.matmul(dmsg, u.transpose(0, 2, 1))
        du = np.matmul(K.transpose(0, 2, 1), dmsg)
        dv += (graph.scatter @ du.reshape(-1, d * S)).reshape(k, d, S)
    grads["W"] += dW.ravel()
    grads["lift_w"] += np.einsum("kas,kcs->ac", dv, a).ravel()
    grads["lift_b"] += dv.sum(axis=(0, 2))
    pre, H = kcache
    dKf = dK.reshape(-1, d * d)
    grads["k_w2"] += (dKf.T @ H).ravel()
    grads["k_b2"] += dKf.sum(axis=0)
    dpre = (dKf @ net.mat("k_w2", (d * d, h))) * sigmoid(pre)
    grads["k_w1"] += (dpre.T @ graph.edge_features).ravel()
    grads["k_b1"] += dpre.sum(axis=0)


@dataclass
class GraphBatch:
    """Samples sharing one graph (same clustering, several strains)."""

    graph: Graph
    strains: np.ndarray
    targets: np.ndarray   # (k, S)


def make_batches(net: GraphKernelNet, samples: list[GraphSample]) -> list[GraphBatch]:
    groups: dict = {}
    for s in samples:
        key = (s.k, s.x.tobytes(), s.stiffness.tobytes())
        groups.setdefault(key, []).append(s)
    out = []
    for members in groups.values():
        g = build_graph(net, members[0].x, members[0].stiffness)
        out.append(GraphBatch(g, np.array([m.eps_bar for m in members]),
                              np.stack([m.target for m in members], axis=1)))
    return out


def nmse(pred, target) -> np.ndarray:
    """Per-sample normalised MSE over the node axis (axis 0)."""
    return np.mean((pred - target) ** 2, axis=0) / np.mean(target ** 2, axis=0)


def batch_loss(net: GraphKernelNet, batches: list[GraphBatch], want_grad: bool = False) -> float:
    """Mean per-sample NMSE over all samples in ``batches``."""
    n = sum(b.strains.size for b in batches)
    total = 0.0
    grads = {p.name: np.zeros_like(p.value) for p in net.params} if want_grad else None
    for b in batches:
        K, kc = kernel_forward(net, b.graph)
        res = forward_graph(net, b.graph, b.strains, K, keep=want_grad)
        pred = res[0] if want_grad else res
        total += float(np.sum(nmse(pred, b.targets)))
        if want_grad:
            k = pred.shape[0]
            denom = np.mean(b.targets ** 2, axis=0)
            dout = 2.0 * (pred - b.targets) / (k * denom[None, :] * n)
            backward_graph(net, b.graph, K, kc, res[1], dout, grads)
    if want_grad:
        for name, g in grads.items():
            net.params.set_grad(name, g)
    return total / n


@dataclass
class TrainResult:
    net: GraphKernelNet
    train_nmse: list[float]
    test_nmse: list[float]
    train_ids: np.ndarray
    test_ids: np.ndarray
    lr_halvings: int = 0
    aborted: bool = False


def split_dataset(n: int, seed: int, test_fraction: float = 0.2):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def gkn_train(net: GraphKernelNet, dataset: list[GraphSample], epochs: int = 1000,
              lr: float = 1e-3, seed: int = 0, lr_final: float | None = None,
              test_fraction: float = 0.2, divergence_factor: float = 100.0) -> TrainResult:
    """Full-batch Adam on the mean per-sample NMSE with a seeded train/test split.

    A non-finite loss, or one above ``divergence_factor`` times the initial loss,
    restores the best parameters and halves the learning rate; a second
    occurrence aborts and returns the history so far.
    """
    if test_fraction > 0 and len(dataset) > 1:
        tr, te = split_dataset(len(dataset), seed, test_fraction)
    else:
        tr, te = np.arange(len(dataset)), np.array([], dtype=int)
    train_b = make_batches(net, [dataset[i] for i in tr])
    test_b = make_batches(net, [dataset[i] for i in te]) if te.size else []
    state = AdamState(lr=lr)
    res = TrainResult(net, [], [], tr, te)
    best, best_snap = math.inf, net.params.snapshot()
    lr0 = lr
    for epoch in range(epochs):
        if lr_final is not None and epochs > 1:
            state.lr = lr0 * (lr_final / lr0) ** (epoch / (epochs - 1))
        loss = batch_loss(net, train_b, want_grad=True)
        initial = res.train_nmse[0] if res.train_nmse else loss
        if not math.isfinite(loss) or loss > divergence_factor * initial:
            net.params.restore(best_snap)
            if res.lr_halvings:
                log.warning("GKN training diverged again at epoch %d; aborting", epoch)
                res.aborted = True
                break
            res.lr_halvings += 1
            lr0 *= 0.5
            state = AdamState(lr=lr0)
            log.warning("GKN training diverged at epoch %d; halving lr to %g", epoch, lr0)
            continue
        res.train_nmse.append(loss)
        res.test_nmse.append(batch_loss(net, test_b) if test_b else float("nan"))
        if loss < best:
            best, best_snap = loss, net.params.snapshot()
        adam_step(net.params, state)
    return res


def extrapolate(net: GraphKernelNet, sample: GraphSample) -> dict:
    pred = gkn_forward(net, sample)
    return dict(k=sample.k, eps_bar=sample.eps_bar, x=sample.x, sca=sample.target, gkn=pred,
                nmse=float(nmse(pred[:, None], sample.target[:, None])[0]),
                max_abs=float(np.max(np.abs(pred - sample.target))),
                mean_strain=float(sample.fractions @ pred))

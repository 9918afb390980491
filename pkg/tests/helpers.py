"""Shared builders for tests: random programs, random weights, small specs."""

import numpy as np

from sketchadapt.dsl import FAIL, INT, LIST_CATALOG, LIST_INT, App, FuncTy, Hole, Input, evaluate
from sketchadapt.enumerator import Spec

SIGS = ((LIST_INT,), (INT, LIST_INT), (LIST_INT, LIST_INT))


def random_program(rng, ty, depth, signature, catalog=LIST_CATALOG):
    """Uniform-ish random term of the requested type with height at most ``depth``."""
    inputs = [i for i, t in enumerate(signature) if t == ty]
    prims = [p for p in catalog.primitives if p.ret == ty]
    leaves = [p for p in prims if not p.arg_types]
    inner = [p for p in prims if p.arg_types] if depth > 1 else []
    choices = [("in", i) for i in inputs] + [("p", p) for p in leaves] + [("p", p) for p in inner]
    if not choices:
        return None
    for _ in range(20):
        kind, x = choices[rng.integers(len(choices))]
        if kind == "in":
            return Input(x, signature[x])
        if not x.arg_types:
            return App(x)
        kids = [random_program(rng, a, depth - 1, signature, catalog) for a in x.arg_types]
        if all(k is not None for k in kids):
            return App(x, tuple(kids))
    return None


def random_theta(rng, n=None, conc=0.5):
    n = n or LIST_CATALOG.n_productions
    return rng.dirichlet(np.full(n, conc))


def random_inputs(rng, signature, lo=-8, hi=8, n=6):
    out = []
    for t in signature:
        if t == INT:
            out.append(int(rng.integers(0, 5)))
        else:
            out.append(tuple(int(v) for v in rng.integers(lo, hi + 1, n)))
    return tuple(out)


def spec_for(program, signature, rng, n=5):
    exs = []
    for _ in range(200):
        inp = random_inputs(rng, signature)
        out = evaluate(program, inp)
        if out is not FAIL:
            exs.append((inp, out))
        if len(exs) == n:
            return Spec(tuple(exs), signature)
    return None


def is_func(ty):
    return isinstance(ty, FuncTy)


# --------------------------------------------------------------------------- brute-force oracles


def smoothed(theta, floor=1e-6):
    w = np.maximum(np.asarray(theta, dtype=np.float64), floor)
    return w / w.sum()


def production_log_probs(theta, signature, catalog=LIST_CATALOG):
    """{type: {production index: log prob}} straight from the definition."""
    w = smoothed(theta)
    logw = np.log(w)
    types = set(signature)
    for p in catalog.primitives:
        types.add(p.ret)
        types.update(p.arg_types)
    out = {}
    for ty in types:
        compat = [p.index for p in catalog.productions if p.ret(signature) == ty]
        if compat:
            z = float(np.log(w[compat].sum()))
            out[ty] = {i: float(logw[i]) - z for i in compat}
    return out


def all_terms(ty, max_height, signature, lp, catalog=LIST_CATALOG, memo=None):
    """Every (fills, per-fill log probs) for terms of ``ty`` with height <= max_height."""
    memo = {} if memo is None else memo
    key = (ty, max_height)
    if key in memo:
        return memo[key]
    out = []
    if max_height >= 1:
        for idx, l in lp.get(ty, {}).items():
            prod = catalog.productions[idx]
            args = prod.arg_types
            if not args:
                out.append(((idx,), (l,)))
            elif max_height > 1:
                partial = [((idx,), (l,))]
                for a in args:
                    subs = all_terms(a, max_height - 1, signature, lp, catalog, memo)
                    partial = [(f + sf, p + sp) for f, p in partial for sf, sp in subs]
                out.extend(partial)
    memo[key] = out
    return out


def hole_depths(term, d=1):
    if isinstance(term, Hole):
        return [(term.ty, d)]
    if isinstance(term, App):
        return [x for c in term.children for x in hole_depths(c, d + 1)]
    return []


def brute_force_order(sketch, theta, signature, max_depth, catalog=LIST_CATALOG):
    """All completions under the depth cap, sorted by (-log p, node count, fill sequence)."""
    lp = production_log_probs(theta, signature, catalog)
    memo = {}
    combos = [((), ())]
    for ty, d in hole_depths(sketch):
        subs = all_terms(ty, max_depth - d + 1, signature, lp, catalog, memo)
        combos = [(f + sf, p + sp) for f, p in combos for sf, sp in subs]
    scored = []
    for fills, lps in combos:
        total = 0.0
        for v in lps:
            total += v
        scored.append((-total, len(fills), fills))
    scored.sort()
    return [(fills, -neg) for neg, _, fills in scored]


def random_sketch_of(rng, program, p_hole=0.3):
    """Replace random disjoint subtrees of ``program`` by holes."""
    def walk(t):
        if rng.random() < p_hole:
            return Hole(t.ty)
        if isinstance(t, App) and t.children:
            return App(t.prim, tuple(walk(c) for c in t.children))
        return t

    return walk(program)


# --------------------------------------------------------------------------- gradient checks


def finite_difference_errors(model, loss_fn, n_params=24, eps=1e-6, seed=0):
    """Relative errors between autograd and central differences on sampled parameter entries.

    ``model`` must already be in double precision; ``loss_fn()`` returns a scalar.
    """
    import torch

    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    params = [(n, p) for n, p in model.named_parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    errors = []
    with torch.no_grad():
        for k in range(n_params):
            name, p = params[k % len(params)] if k < len(params) else params[rng.integers(len(params))]
            flat = p.view(-1)
            i = int(rng.integers(flat.numel()))
            analytic = float(p.grad.view(-1)[i])
            old = float(flat[i])
            flat[i] = old + eps
            up = float(loss_fn())
            flat[i] = old - eps
            down = float(loss_fn())
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            scale = max(abs(analytic), abs(numeric))
            errors.append((name, 0.0 if scale < 1e-7 else abs(analytic - numeric) / scale))
    return errors

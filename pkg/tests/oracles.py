"""Independent brute-force oracles for the test suite.

Everything here is written as explicit scalar loops over plain Python
structures (and hand-rolled derivative formulas where needed), deliberately
avoiding the package's own helpers, numpy vectorization and torch ops, so a
bug in the implementation cannot hide in a shared code path.
"""
from __future__ import annotations

import math


# ---------------------------------------------------------------------------
# n-gram metric oracles

def _grams(tokens, n):
    out = []
    for i in range(len(tokens) - n + 1):
        out.append(tuple(tokens[i:i + n]))
    return out


def _count(items):
    table = {}
    for it in items:
        table[it] = table.get(it, 0) + 1
    return table


def oracle_bleu(candidate, references, max_n=4):
    candidate = list(candidate)
    references = [list(r) for r in references]
    logs = []
    for n in range(1, min(max_n, len(candidate)) + 1):
        cand_counts = _count(_grams(candidate, n))
        clipped = 0
        total = 0
        for gram, cnt in cand_counts.items():
            total += cnt
            best = 0
            for ref in references:
                ref_cnt = _count(_grams(ref, n)).get(gram, 0)
                if ref_cnt > best:
                    best = ref_cnt
            clipped += cnt if cnt < best else best
        if clipped == 0:
            return 0.0
        logs.append(math.log(clipped / total))
    c = len(candidate)
    best_r = None
    for ref in references:
        r = len(ref)
        if best_r is None or abs(r - c) < abs(best_r - c) or \
                (abs(r - c) == abs(best_r - c) and r < best_r):
            best_r = r
    bp = 1.0 if c > best_r else math.exp(1.0 - best_r / c)
    return bp * math.exp(sum(logs) / len(logs))


def oracle_cider(candidates_by_image, references_by_image, n_max=4, sigma=6.0):
    images = sorted(references_by_image)
    # document frequency: number of images whose reference set contains the gram
    df = {}
    for img in images:
        seen = set()
        for ref in references_by_image[img]:
            for n in range(1, n_max + 1):
                for gram in _grams(list(ref), n):
                    seen.add(gram)
        for gram in seen:
            df[gram] = df.get(gram, 0) + 1
    log_images = math.log(len(images))

    def vector(tokens):
        vecs, norms = [], []
        for n in range(1, n_max + 1):
            counts = _count(_grams(list(tokens), n))
            vec = {}
            sq = 0.0
            for gram, cnt in counts.items():
                idf = log_images - math.log(df.get(gram, 0) if df.get(gram, 0) > 1 else 1.0)
                vec[gram] = cnt * idf
                sq += vec[gram] * vec[gram]
            vecs.append(vec)
            norms.append(math.sqrt(sq))
        return vecs, norms, len(tokens)

    total_score = 0.0
    for img in images:
        cand_vec, cand_norm, cand_len = vector(candidates_by_image[img])
        image_score = 0.0
        refs = references_by_image[img]
        for ref in refs:
            ref_vec, ref_norm, ref_len = vector(ref)
            penalty = math.exp(-((cand_len - ref_len) ** 2) / (2 * sigma * sigma))
            acc = 0.0
            for n in range(n_max):
                if cand_norm[n] == 0.0 or ref_norm[n] == 0.0:
                    continue
                dot = 0.0
                for gram, val in cand_vec[n].items():
                    rv = ref_vec[n].get(gram, 0.0)
                    dot += (val if val < rv else rv) * rv
                acc += dot / (cand_norm[n] * ref_norm[n]) * penalty
            image_score += acc / n_max
        total_score += 10.0 * image_score / len(refs)
    return total_score / len(images)


def oracle_div_n(captions, n):
    seen = set()
    words = 0
    for cap in captions:
        words += len(cap)
        for gram in _grams(list(cap), n):
            seen.add(gram)
    return len(seen) / words


def oracle_re4(captions):
    ratios = []
    for cap in captions:
        counts = _count(_grams(list(cap), 4))
        total = 0
        repeated = 0
        for cnt in counts.values():
            total += cnt
            if cnt > 1:
                repeated += cnt - 1
        if total > 0:
            ratios.append(repeated / total)
    if not ratios:
        return 0.0
    return sum(ratios) / len(ratios)


def oracle_pair_similarity(a, b, sigma=6.0):
    a, b = list(a), list(b)
    n_eff = min(4, len(a), len(b))
    if n_eff == 0:
        return 0.0
    penalty = math.exp(-((len(a) - len(b)) ** 2) / (2 * sigma * sigma))
    total = 0.0
    for n in range(1, n_eff + 1):
        ca, cb = _count(_grams(a, n)), _count(_grams(b, n))
        dot = 0.0
        for gram, va in ca.items():
            dot += va * cb.get(gram, 0)
        na = math.sqrt(sum(v * v for v in ca.values()))
        nb = math.sqrt(sum(v * v for v in cb.values()))
        total += dot / (na * nb) * penalty
    return total / n_eff


def symmetric_eigenvalues_2x2(k):
    a, b, c = k[0][0], k[0][1], k[1][1]
    mean = (a + c) / 2.0
    delta = math.sqrt(((a - c) / 2.0) ** 2 + b * b)
    return [mean + delta, mean - delta]


def symmetric_eigenvalues_3x3(k):
    """Roots of the characteristic polynomial via the trigonometric method."""
    a, b, c = k[0][0], k[0][1], k[0][2]
    d, e, f = k[1][1], k[1][2], k[2][2]
    p1 = b * b + c * c + e * e
    q = (a + d + f) / 3.0
    p2 = (a - q) ** 2 + (d - q) ** 2 + (f - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p == 0.0:
        return [q, q, q]
    bb = [[(k[i][j] - (q if i == j else 0.0)) / p for j in range(3)] for i in range(3)]
    detb = (bb[0][0] * (bb[1][1] * bb[2][2] - bb[1][2] * bb[2][1])
            - bb[0][1] * (bb[1][0] * bb[2][2] - bb[1][2] * bb[2][0])
            + bb[0][2] * (bb[1][0] * bb[2][1] - bb[1][1] * bb[2][0]))
    r = detb / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    eig1 = q + 2.0 * p * math.cos(phi)
    eig3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    eig2 = 3.0 * q - eig1 - eig3
    return [eig1, eig2, eig3]


def oracle_self_cider(captions, sigma=6.0):
    m = len(captions)
    k = [[1.0] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            if i != j:
                k[i][j] = oracle_pair_similarity(captions[i], captions[j], sigma)
    if m == 2:
        eig = symmetric_eigenvalues_2x2(k)
    elif m == 3:
        eig = symmetric_eigenvalues_3x3(k)
    else:
        raise ValueError("oracle supports m in {2, 3}")
    eig = [v if v > 0.0 else 0.0 for v in eig]
    top = max(eig)
    if top == 0.0:
        return 0.0
    ratio = sum(math.sqrt(v) for v in eig) / math.sqrt(top)
    score = (ratio - 1.0) / (m - 1)
    return min(1.0, max(0.0, score))


# ---------------------------------------------------------------------------
# scalar linear algebra for the model-equation oracles

def mat_vec(m, v):
    return [sum(m[i][j] * v[j] for j in range(len(v))) for i in range(len(m))]


def vec_add(*vs):
    return [sum(col) for col in zip(*vs)]


def vec_scale(v, s):
    return [x * s for x in v]


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def relu_vec(v):
    return [x if x > 0.0 else 0.0 for x in v]


def leaky_vec(v, slope=0.2):
    return [x if x > 0.0 else slope * x for x in v]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax_list(xs):
    top = max(xs)
    exps = [math.exp(x - top) for x in xs]
    total = sum(exps)
    return [e / total for e in exps]


def linear(weight, bias, v):
    out = mat_vec(weight, v)
    if bias is not None:
        out = [o + b for o, b in zip(out, bias)]
    return out


def lstm_cell_step(w_input, w_hidden, bias, x, h, c):
    """Mirror of the package cell: gates stacked [input, forget, cell, output]."""
    hidden = len(h)
    z = vec_add(mat_vec(w_input, x), mat_vec(w_hidden, h), list(bias))
    i = [sigmoid(z[k]) for k in range(0, hidden)]
    f = [sigmoid(z[k]) for k in range(hidden, 2 * hidden)]
    g = [math.tanh(z[k]) for k in range(2 * hidden, 3 * hidden)]
    o = [sigmoid(z[k]) for k in range(3 * hidden, 4 * hidden)]
    c_next = [f[k] * c[k] + i[k] * g[k] for k in range(hidden)]
    h_next = [o[k] * math.tanh(c_next[k]) for k in range(hidden)]
    return h_next, c_next


def critic_forward(params, x, slope=0.2):
    """Two leaky-relu hidden layers and a scalar head; params are nested lists."""
    h1 = leaky_vec(linear(params["layer1.weight"], params["layer1.bias"], x), slope)
    h2 = leaky_vec(linear(params["layer2.weight"], params["layer2.bias"], h1), slope)
    return linear(params["head.weight"], params["head.bias"], h2)[0]


def critic_input_gradient(params, x, slope=0.2):
    """Hand-rolled backprop of dD/dx for the leaky-relu critic."""
    w1, b1 = params["layer1.weight"], params["layer1.bias"]
    w2, b2 = params["layer2.weight"], params["layer2.bias"]
    w3 = params["head.weight"][0]
    z1 = linear(w1, b1, x)
    z2 = linear(w2, b2, leaky_vec(z1, slope))

    def dleaky(z):
        return 1.0 if z > 0.0 else slope

    g2 = [w3[k] * dleaky(z2[k]) for k in range(len(z2))]
    g1 = [0.0] * len(z1)
    for j in range(len(z1)):
        acc = 0.0
        for k in range(len(z2)):
            acc += g2[k] * w2[k][j]
        g1[j] = acc * dleaky(z1[j])
    gx = [0.0] * len(x)
    for j in range(len(x)):
        acc = 0.0
        for k in range(len(z1)):
            acc += g1[k] * w1[k][j]
        gx[j] = acc
    return gx


def mapper_forward(params, x, slope=0.2):
    hidden = leaky_vec(linear(params["lift.weight"], params["lift.bias"], x), slope)
    return linear(params["drop.weight"], params["drop.bias"], hidden)


def torch_params_to_lists(module):
    """Snapshot a module's named parameters as nested Python lists."""
    return {name: p.detach().cpu().numpy().tolist()
            for name, p in module.named_parameters()}

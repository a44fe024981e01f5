"""Independent brute-force references.

Everything here is plain Python loops over floats (``math``), sharing no code
with the vectorized implementations under test.
"""

import math


def matvec(w, x):
    """w: list of rows (out x in), x: list (in) -> list (out)."""
    return [sum(w[o][i] * x[i] for i in range(len(x))) for o in range(len(w))]


def matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def norm(a):
    return math.sqrt(dot(a, a))


def cosine(a, b, eps=1e-12):
    return dot(a, b) / ((norm(a) + eps) * (norm(b) + eps))


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def logsumexp(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def icl_loop(sim, tau):
    b = len(sim)
    total = 0.0
    for i in range(b):
        row = [sim[i][j] / tau for j in range(b)]
        col = [sim[j][i] / tau for j in range(b)]
        total += -(sim[i][i] / tau - logsumexp(row))
        total += -(sim[i][i] / tau - logsumexp(col))
    return total / (2 * b)


def memory_response_loop(memory, state):
    tu = [math.tanh(v) for v in state]
    scores = [dot([math.tanh(v) for v in m], tu) for m in memory]
    rho = softmax(scores)
    dim = len(memory[0])
    r = [sum(rho[j] * memory[j][c] for j in range(len(memory))) for c in range(dim)]
    return r, rho


def _direction_loop(states, responses, weights, tau):
    """(1/K) sum_k w_k (l_y2r + l_r2y) for one pair, one direction."""
    k_count = len(states)
    total = 0.0
    for k in range(k_count):
        pos = cosine(states[k], responses[k]) / tau
        fwd = -(pos - logsumexp([cosine(states[k], responses[j]) / tau for j in range(k_count)]))
        bwd = -(pos - logsumexp([cosine(responses[k], states[j]) / tau for j in range(k_count)]))
        total += weights[k] * (fwd + bwd)
    return total / k_count


def tcl_loop(videos, texts, w_x, w_y, tau, alphas=None, betas=None):
    """videos[i]: J_i video tokens; texts[i]: K_i text tokens (lists of floats).

    w_x, w_y: state maps as row lists (dm x d). Saliency defaults to uniform.
    """
    n = len(videos)
    tvc = tlc = 0.0
    for i in range(n):
        mem_v = [matvec(w_x, x) for x in videos[i]]
        mem_t = [matvec(w_y, y) for y in texts[i]]
        k_count, j_count = len(mem_t), len(mem_v)
        alpha = alphas[i] if alphas is not None else [1.0 / k_count] * k_count
        beta = betas[i] if betas is not None else [1.0 / j_count] * j_count
        resp_v = [memory_response_loop(mem_v, u)[0] for u in mem_t]
        resp_t = [memory_response_loop(mem_t, u)[0] for u in mem_v]
        tvc += _direction_loop(mem_t, resp_v, alpha, tau)
        tlc += _direction_loop(mem_v, resp_t, beta, tau)
    tvc /= 2 * n
    tlc /= 2 * n
    return 0.5 * (tvc + tlc)


def attention_loop(queries, keys, values):
    """Single-head scaled dot-product attention, row by row."""
    scale = 1.0 / math.sqrt(len(queries[0]))
    out, weights = [], []
    for q in queries:
        w = softmax([dot(q, k) * scale for k in keys])
        weights.append(w)
        out.append([sum(w[j] * values[j][c] for j in range(len(keys))) for c in range(len(values[0]))])
    return out, weights


def bce_loop(probs_match, labels, clip=1e-7):
    total = 0.0
    for p, y in zip(probs_match, labels):
        p_true = p if y == 1 else 1.0 - p
        p_true = min(max(p_true, clip), 1 - clip)
        total += -math.log(p_true)
    return total / len(labels)


def lm_loop(logits, targets, mask):
    total, count = 0.0, 0
    for row_l, row_t, row_m in zip(logits, targets, mask):
        for l, t, m in zip(row_l, row_t, row_m):
            if m:
                total += -(l[t] - logsumexp(l))
                count += 1
    return total / count


def linear_loop(w, b, x):
    return [v + bb for v, bb in zip(matvec(w, x), b)]


def divided_attention_loop(tokens, w_qkv, b_qkv, w_proj, b_proj, heads, axis, frames, patches):
    """Multi-head attention along one grid axis, token by token.

    ``tokens`` holds cls first, then frame-major patches. For ``axis="time"`` a
    patch sees the same patch slot in every frame; for ``axis="space"`` it sees
    cls and the patches of its own frame. cls sees everything.
    """
    dim = len(tokens[0])
    dh = dim // heads
    qkv = [linear_loop(w_qkv, b_qkv, t) for t in tokens]
    q = [row[:dim] for row in qkv]
    k = [row[dim:2 * dim] for row in qkv]
    v = [row[2 * dim:] for row in qkv]

    def visible(i):
        if i == 0:
            return list(range(len(tokens)))
        f, p = divmod(i - 1, patches)
        if axis == "time":
            return [1 + g * patches + p for g in range(frames)]
        return [0] + [1 + f * patches + r for r in range(patches)]

    out = []
    for i in range(len(tokens)):
        keys = visible(i)
        merged = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            o, _ = attention_loop([q[i][sl]], [k[j][sl] for j in keys], [v[j][sl] for j in keys])
            merged.extend(o[0])
        out.append(linear_loop(w_proj, b_proj, merged))
    return out


def layernorm_loop(x, gamma, beta, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(x, gamma, beta)]


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def mha_loop(queries, keys, values, heads, visible=None):
    """Multi-head attention on already-projected rows; ``visible(i)`` lists the keys row i may see."""
    dim = len(queries[0])
    dh = dim // heads
    out = []
    for i, q in enumerate(queries):
        idx = visible(i) if visible else range(len(keys))
        merged = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            o, _ = attention_loop([q[sl]], [keys[j][sl] for j in idx], [values[j][sl] for j in idx])
            merged.extend(o[0])
        out.append(merged)
    return out


def fusion_block_loop(x, context, p, heads, visible=None):
    """Pre-norm SA over ``x`` (restricted by ``visible``), CA into ``context``, FFN.

    ``p`` maps parameter names of one block to nested lists.
    """
    dim = len(x[0])
    h = [layernorm_loop(r, p["norm1.weight"], p["norm1.bias"]) for r in x]
    qkv = [linear_loop(p["self_attn.qkv.weight"], p["self_attn.qkv.bias"], r) for r in h]
    sa = mha_loop([r[:dim] for r in qkv], [r[dim:2 * dim] for r in qkv], [r[2 * dim:] for r in qkv], heads, visible)
    x = [[a + b for a, b in zip(r, linear_loop(p["self_attn.proj.weight"], p["self_attn.proj.bias"], s))]
         for r, s in zip(x, sa)]
    h = [layernorm_loop(r, p["norm2.weight"], p["norm2.bias"]) for r in x]
    q = [linear_loop(p["cross_attn.q.weight"], p["cross_attn.q.bias"], r) for r in h]
    kv = [linear_loop(p["cross_attn.kv.weight"], p["cross_attn.kv.bias"], c) for c in context]
    ca = mha_loop(q, [r[:dim] for r in kv], [r[dim:] for r in kv], heads)
    x = [[a + b for a, b in zip(r, linear_loop(p["cross_attn.proj.weight"], p["cross_attn.proj.bias"], c))]
         for r, c in zip(x, ca)]
    out = []
    for r in x:
        h = layernorm_loop(r, p["norm3.weight"], p["norm3.bias"])
        hidden = [gelu(v) for v in linear_loop(p["mlp.fc1.weight"], p["mlp.fc1.bias"], h)]
        out.append([a + b for a, b in zip(r, linear_loop(p["mlp.fc2.weight"], p["mlp.fc2.bias"], hidden))])
    return out

"""Naive loop implementations used as independent references.

Everything here works on numpy float64 arrays with explicit Python loops,
sharing no code with the library.
"""

import math

import numpy as np


def norm(v):
    return v / (math.sqrt(sum(x * x for x in v)) + 1e-8)


def cos(a, b):
    return float(np.dot(a, b)) / (math.sqrt(float(np.dot(a, a))) * math.sqrt(float(np.dot(b, b))) + 1e-8)


def logsumexp(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def nt_xent(z1, z2, t):
    b = len(z1)
    z = [norm(v) for v in list(z1) + list(z2)]
    total = 0.0
    for i in range(2 * b):
        j = (i + b) % (2 * b)
        denom = [float(np.dot(z[i], z[k])) / t for k in range(2 * b) if k != i]
        total += -(float(np.dot(z[i], z[j])) / t - logsumexp(denom))
    return total / (2 * b)


def infonce_queue(q, k, queue, t):
    total = 0.0
    for i in range(len(q)):
        qi, ki = norm(q[i]), norm(k[i])
        pos = float(np.dot(qi, ki)) / t
        terms = [pos] + [float(np.dot(qi, n)) / t for n in queue]
        total += -(pos - logsumexp(terms))
    return total / len(q)


def byol(p1, p2, t1, t2):
    b = len(p1)
    return sum(2 - 2 * cos(p1[i], t2[i]) for i in range(b)) / b + sum(2 - 2 * cos(p2[i], t1[i]) for i in range(b)) / b


def simsiam(p1, p2, z1, z2):
    b = len(p1)
    return -0.5 * (sum(cos(p1[i], z2[i]) for i in range(b)) / b + sum(cos(p2[i], z1[i]) for i in range(b)) / b)


def barlow(z1, z2, lamb):
    b, d = z1.shape

    def standardize(z):
        out = np.zeros_like(z)
        for j in range(d):
            col = [z[i][j] for i in range(b)]
            mu = sum(col) / b
            sd = math.sqrt(sum((c - mu) ** 2 for c in col) / b)
            for i in range(b):
                out[i][j] = (z[i][j] - mu) / sd
        return out

    a, c = standardize(z1), standardize(z2)
    loss = 0.0
    for j in range(d):
        for k in range(d):
            cjk = sum(a[i][j] * c[i][k] for i in range(b)) / b
            loss += (1 - cjk) ** 2 if j == k else lamb * cjk**2
    return loss


def _cov(z):
    b, d = z.shape
    mu = [sum(z[i][j] for i in range(b)) / b for j in range(d)]
    return [[sum((z[i][j] - mu[j]) * (z[i][k] - mu[k]) for i in range(b)) / (b - 1) for k in range(d)] for j in range(d)]


def vicreg(z1, z2, lam=25.0, mu=25.0, nu=1.0):
    b, d = z1.shape
    s = sum((z1[i][j] - z2[i][j]) ** 2 for i in range(b) for j in range(d)) / (b * d)

    def v(z):
        c = _cov(z)
        return sum(max(0.0, 1 - math.sqrt(c[j][j] + 1e-4)) for j in range(d)) / d

    def cterm(z):
        c = _cov(z)
        return sum(c[j][k] ** 2 for j in range(d) for k in range(d) if j != k) / d

    return lam * s + mu * (v(z1) + v(z2)) + nu * (cterm(z1) + cterm(z2))


def nearest(bank, z):
    zn = norm(z)
    best, best_i = -2.0, -1
    for i, row in enumerate(bank):
        s = float(np.dot(zn, row))
        if s > best:
            best, best_i = s, i
    return bank[best_i]


def nnclr(z1, z2, p1, p2, bank, t):
    def direction(zs, ps):
        total = 0.0
        for i in range(len(zs)):
            a = norm(nearest(bank, zs[i]))
            logits = [float(np.dot(a, norm(ps[j]))) / t for j in range(len(ps))]
            total += -(logits[i] - logsumexp(logits))
        return total / len(zs)

    return 0.5 * (direction(z1, p2) + direction(z2, p1))


def sinkhorn(s, eps, iters):
    b, k = s.shape
    m = max(max(row) for row in s)
    q = [[math.exp((s[i][j] - m) / eps) for j in range(k)] for i in range(b)]
    tot = sum(map(sum, q))
    q = [[x / tot for x in row] for row in q]
    for _ in range(iters):
        for j in range(k):
            col = sum(q[i][j] for i in range(b))
            for i in range(b):
                q[i][j] /= col * k
        for i in range(b):
            r = sum(q[i])
            q[i] = [x / (r * b) for x in q[i]]
    return np.array([[x / sum(row) for x in row] for row in q])


def swav(z1, z2, c, t, eps, iters):
    scores = [np.array([[float(np.dot(norm(z[i]), c[j])) for j in range(len(c))] for i in range(len(z))]) for z in (z1, z2)]
    codes = [sinkhorn(s, eps, iters) for s in scores]
    loss = 0.0
    for v in range(2):
        s, q = scores[v], codes[1 - v]
        per = 0.0
        for i in range(len(s)):
            lse = logsumexp([x / t for x in s[i]])
            per += -sum(q[i][j] * (s[i][j] / t - lse) for j in range(len(c)))
        loss += per / len(s)
    return loss / 2


def cross_entropy(logits, target):
    return -(logits[target] - logsumexp(list(logits)))


def deepclusterv2(z, protos, assigned, t):
    total = 0.0
    for i in range(len(z)):
        zn = norm(z[i])
        logits = [float(np.dot(zn, p)) / t for p in protos]
        total += cross_entropy(logits, assigned[i])
    return total / len(z)


def _softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [x / s for x in e]


def dino(students, teachers, center, ts, tt):
    total, pairs = 0.0, 0
    for a, t in enumerate(teachers):
        for b, s in enumerate(students):
            if a == b:
                continue
            per = 0.0
            for i in range(len(t)):
                pt = _softmax([(t[i][k] - center[k]) / tt for k in range(len(center))])
                lse = logsumexp([x / ts for x in s[i]])
                per += -sum(pt[k] * (s[i][k] / ts - lse) for k in range(len(center)))
            total += per / len(t)
            pairs += 1
    return total / pairs


def ressl(zs, zt, bank, ts, tt):
    total = 0.0
    for i in range(len(zs)):
        a, b = norm(zs[i]), norm(zt[i])
        pt = _softmax([float(np.dot(b, r)) / tt for r in bank])
        ls = [float(np.dot(a, r)) / ts for r in bank]
        lse = logsumexp(ls)
        total += -sum(pt[k] * (ls[k] - lse) for k in range(len(bank)))
    return total / len(zs)


def cholesky(a):
    n = len(a)
    low = [[0.0] * n for _ in range(n)]
    for j in range(n):
        low[j][j] = math.sqrt(a[j][j] - sum(low[j][k] ** 2 for k in range(j)))
        for i in range(j + 1, n):
            low[i][j] = (a[i][j] - sum(low[i][k] * low[j][k] for k in range(j))) / low[j][j]
    return low


def whiten(z, eps=1e-4):
    b, d = z.shape
    mu = [sum(z[i][j] for i in range(b)) / b for j in range(d)]
    c = _cov(z)
    for j in range(d):
        c[j][j] += eps
    low = cholesky(c)
    out = np.zeros((b, d))
    for i in range(b):
        x = [z[i][j] - mu[j] for j in range(d)]
        y = [0.0] * d
        for j in range(d):  # forward substitution
            y[j] = (x[j] - sum(low[j][k] * y[k] for k in range(j))) / low[j][j]
        out[i] = y
    return out


def wmse(views, w):
    b = len(views[0])
    size = min(w, b)
    total, terms = 0.0, 0
    for c in range(max(1, b // size)):
        white = [whiten(v[c * size : (c + 1) * size]) for v in views]
        for i in range(len(white)):
            for j in range(i + 1, len(white)):
                total += sum(2 - 2 * cos(white[i][r], white[j][r]) for r in range(size)) / size
                terms += 1
    return total / terms


def supcon(z, labels, t):
    n = len(z)
    zn = [norm(v) for v in z]
    total, count = 0.0, 0
    for i in range(n):
        pos = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not pos:
            continue
        lse = logsumexp([float(np.dot(zn[i], zn[a])) / t for a in range(n) if a != i])
        total += -sum(float(np.dot(zn[i], zn[p])) / t - lse for p in pos) / len(pos)
        count += 1
    return total / count

"""Scalar reference values for the distillation loss and Adam tests.

Writes tests/data/kd_oracle.json. Uses only the Python standard library.
"""
import json
import math
import os


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def kl(p, q):
    return sum(a * math.log(a / b) for a, b in zip(p, q) if a > 0)


def two_class():
    teacher = softmax([math.log(3.0), 0.0])
    student = softmax([0.0, 0.0])
    return kl(teacher, student)


def mixed_case():
    # Three positions, four classes, one pad (target 0) position, T = 2, alpha = 0.3.
    s = [[0.5, -1.0, 2.0, 0.1], [1.5, 0.2, -0.3, 0.0], [0.0, 0.0, 1.0, -2.0]]
    t = [[1.0, 0.0, 0.5, -0.5], [0.3, 0.3, 0.3, 0.3], [2.0, -1.0, 0.0, 1.0]]
    targets = [2, 0, 3]
    temp, alpha = 2.0, 0.3
    ce = kls = 0.0
    n = 0
    for srow, trow, y in zip(s, t, targets):
        if y == 0:
            continue
        n += 1
        ce -= math.log(softmax(srow)[y])
        kls += kl(softmax([v / temp for v in trow]), softmax([v / temp for v in srow]))
    ce /= n
    kls /= n
    return {"student": s, "teacher": t, "targets": targets, "temperature": temp, "alpha": alpha,
            "cross_entropy": ce, "kl": kls, "loss": alpha * ce + (1 - alpha) * temp * temp * kls}


def adam_bowl(x0, lr=0.05, steps=200, b1=0.9, b2=0.999, eps=1e-8):
    x = list(x0)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    for t in range(1, steps + 1):
        g = [2 * xi for xi in x]
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            x[i] -= lr * mh / (math.sqrt(vh) + eps)
    return x


def main():
    x0 = [0.6, -0.8]
    x = adam_bowl(x0)
    out = {
        "two_class_kl": two_class(),
        "mixed": mixed_case(),
        "adam_bowl": {"x0": x0, "lr": 0.05, "steps": 200, "x": x, "norm": math.hypot(*x)},
    }
    here = os.path.dirname(os.path.abspath(__file__))
    path = os.path.join(here, "..", "..", "tests", "data", "kd_oracle.json")
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Writes the 4-image x 5-box eval fixture and its brute-force expected AP.

Boxes are axis-aligned, so IoU is a product of interval overlaps. Matching
is greedy per image in score order; AP is the mean over 101 recall points of
the best precision reached at or beyond each recall.

Usage: python3 oracle.py   (run from this directory)
"""
import json
import random

THRESHOLDS = [k / 20 for k in range(1, 11)]
CATEGORIES = ["chair", "table"]


def box(rng):
    x, y, z = (rng.randrange(-8, 9) * 0.25 for _ in range(3))
    w, h, l = (rng.randrange(2, 9) * 0.25 for _ in range(3))
    return [x, y, z + 6.0, w, h, l, 0.0, 0.0, 0.0]


def jittered(rng, b):
    out = list(b)
    for i in range(3):
        out[i] += rng.randrange(-2, 3) * 0.25
    return out


def iou(a, b):
    inter = 1.0
    for i in range(3):
        lo = max(a[i] - a[i + 3] / 2, b[i] - b[i + 3] / 2)
        hi = min(a[i] + a[i + 3] / 2, b[i] + b[i + 3] / 2)
        inter *= max(hi - lo, 0.0)
    va = a[3] * a[4] * a[5]
    vb = b[3] * b[4] * b[5]
    return inter / (va + vb - inter)


def ap(preds, gts, cat, t):
    ranked = []
    num_gt = 0
    images = sorted({r["image_id"] for r in preds + gts})
    for img in images:
        g = [r["box3d"] for r in gts if r["image_id"] == img and r["category"] == cat]
        num_gt += len(g)
        p = [r for r in preds if r["image_id"] == img and r["category"] == cat]
        order = sorted(range(len(p)), key=lambda i: (-p[i]["score"], i))
        used = [False] * len(g)
        for rank, i in enumerate(order):
            best, best_iou = None, -1.0
            for j, gb in enumerate(g):
                v = iou(p[i]["box3d"], gb)
                if not used[j] and v >= t and v > best_iou:
                    best, best_iou = j, v
            if best is not None:
                used[best] = True
            ranked.append((-p[i]["score"], img, rank, best is not None))
    ranked.sort(key=lambda r: r[:3])
    if num_gt == 0:
        return 0.0 if ranked else None
    points = []
    tp = 0
    for n, r in enumerate(ranked, 1):
        tp += r[3]
        points.append((tp / num_gt, tp / n))
    total = 0.0
    for k in range(101):
        total += max([p for rc, p in points if rc >= k / 100], default=0.0)
    return total / 101


def main():
    rng = random.Random(20)
    preds, gts = [], []
    for n in range(4):
        img = f"scene{n}"
        for _ in range(5):
            cat = rng.choice(CATEGORIES)
            g = box(rng)
            gts.append({"image_id": img, "category": cat, "box3d": g})
            if rng.random() < 0.8:
                score = rng.randrange(1, 20) / 20
                preds.append({"image_id": img, "category": cat, "score": score, "box3d": jittered(rng, g)})
        for _ in range(rng.randrange(0, 3)):
            score = rng.randrange(1, 20) / 20
            preds.append({"image_id": img, "category": rng.choice(CATEGORIES), "score": score, "box3d": box(rng)})

    per_category = {}
    for cat in CATEGORIES:
        per_category[cat] = [ap(preds, gts, cat, t) for t in THRESHOLDS]
    per_threshold = []
    for i in range(len(THRESHOLDS)):
        vals = [v[i] for v in per_category.values() if v[i] is not None]
        per_threshold.append(sum(vals) / len(vals))
    expected = {
        "thresholds": THRESHOLDS,
        "per_category": per_category,
        "per_threshold": per_threshold,
        "map": sum(per_threshold) / len(per_threshold),
        "ap15": per_threshold[2],
    }
    with open("oracle_pred.jsonl", "w") as f:
        f.writelines(json.dumps(r) + "\n" for r in preds)
    with open("oracle_gt.jsonl", "w") as f:
        f.writelines(json.dumps(r) + "\n" for r in gts)
    with open("oracle_expected.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()

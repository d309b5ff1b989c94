"""Writes the wire-protocol golden files. Run from this directory."""
import json
import struct


def request(images, target_class, score_kind, scores_all):
    c, h, w = len(images[0]), len(images[0][0]), len(images[0][0][0])
    header = json.dumps(
        {
            "batch": len(images),
            "height": h,
            "width": w,
            "channels": c,
            "dtype": "f32",
            "layout": "CHW",
            "target_class": target_class,
            "score_kind": score_kind,
            "scores_all": scores_all,
        },
        separators=(",", ":"),
    ).encode()
    flat = [v for img in images for ch in img for row in ch for v in row]
    return struct.pack(">I", len(header)) + header + struct.pack("<%df" % len(flat), *flat)


def image(c, h, w, offset):
    return [[[((offset + (ci * h + r) * w + col) % 17) / 16 for col in range(w)] for r in range(h)] for ci in range(c)]


cases = {
    "request_single": ([[[[0.25, 1.0]]]], 7, "logit", False),
    "request_batch": ([image(3, 2, 4, 0), image(3, 2, 4, 5)], 281, "probability", False),
    "request_scores_all": ([image(1, 4, 4, 3)], 0, "probability", True),
}
expected = {}
for name, (imgs, target, kind, scores_all) in cases.items():
    with open(name + ".bin", "wb") as f:
        f.write(request(imgs, target, kind, scores_all))
    expected[name] = {
        "batch": len(imgs),
        "channels": len(imgs[0]),
        "height": len(imgs[0][0]),
        "width": len(imgs[0][0][0]),
        "target_class": target,
        "score_kind": kind,
        "scores_all": scores_all,
        "values": [v for img in imgs for ch in img for row in ch for v in row],
    }

with open("response_single.json", "w") as f:
    f.write('{"scores":[0.125,0.5,1.0]}')
with open("response_all.json", "w") as f:
    f.write('{"scores":[[0.25,0.75],[1.0,0.0]]}')
with open("expected.json", "w") as f:
    json.dump(expected, f, indent=1)

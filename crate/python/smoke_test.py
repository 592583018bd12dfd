"""Smoke test for the egopose Python bindings.

Builds a small synthetic corpus with the egopose CLI, then checks that the
bindings return the same frames, aligned coordinates and prompt strings as
the CLI, bit for bit, and that errors surface under their core names.

    pip install --no-build-isolation -e crates/py
    cargo build --release -p egopose-cli
    python python/smoke_test.py

Set EGOPOSE_BIN to use a specific CLI binary.
"""

import json
import os
import random
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

import egopose

ROOT = Path(__file__).resolve().parent.parent


def cli_binary():
    if os.environ.get("EGOPOSE_BIN"):
        return Path(os.environ["EGOPOSE_BIN"])
    for profile in ("release", "debug"):
        path = ROOT / "target" / profile / "egopose"
        if path.exists():
            return path
    subprocess.run(["cargo", "build", "-q", "-p", "egopose-cli"], cwd=ROOT, check=True)
    return ROOT / "target" / "debug" / "egopose"


BIN = cli_binary()


def cli(*args):
    run = subprocess.run([str(BIN), *map(str, args)], capture_output=True, text=True)
    if run.returncode != 0:
        raise RuntimeError(f"egopose {' '.join(map(str, args))} failed: {run.stderr}")
    return run.stdout


def read_ply_xyz(path):
    """Float32 x, y, z columns of a binary little-endian PLY."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    assert "format binary_little_endian 1.0" in header
    types = {"float": "<f4", "uchar": "u1"}
    fields = [(line.split()[2], types[line.split()[1]]) for line in header if line.startswith("property")]
    count = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    rows = np.frombuffer(data, dtype=np.dtype(fields), count=count, offset=end)
    return np.stack([rows["x"], rows["y"], rows["z"]], axis=1)


def expect(exc, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc:
        return
    raise AssertionError(f"expected {exc.__name__}")


def write_identity_scene(scans, annotations):
    """One frame at the origin looking down +z, written by hand."""
    scene = scans / "ident"
    scene.mkdir(parents=True)
    points = np.array([[1.0, 2.0, 3.0], [-0.5, 0.25, 4.0], [0.2, -0.1, 2.5]], dtype="<f4")
    header = f"ply\nformat ascii 1.0\nelement vertex {len(points)}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    (scene / "cloud.ply").write_text(header + "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist()))
    (scene / "intrinsic.txt").write_text("525 0 320\n0 525 240\n0 0 1\n")
    (scene / "image_size.txt").write_text("640 480\n")
    (scene / "pose_0.txt").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    annotations.mkdir(parents=True, exist_ok=True)
    objects = [{"object_id": 1, "kind": "segmentation", "indices": [0, 1]}]
    (annotations / "ident.json").write_text(json.dumps({"scene_id": "ident", "objects": objects}))
    return points


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cli("synth", "--out", tmp, "--scenes", "3", "--points", "6000", "--frames", "30", "--objects", "5", "--seed", "40")
        scans, annotations, mats = tmp / "scans", tmp / "annotations", tmp / "m"
        expected = write_identity_scene(scans, annotations)
        cli("build-intersections", "--scans", scans, "--annotations", annotations, "--out", mats)

        # Identity pose: coordinates are the input in front-left-up axes.
        with egopose.load_scene(scans, mats / "ident.poim") as h:
            frame, coords = egopose.select_and_align(h, 1, policy="top")
            assert frame == 0
            assert coords.dtype == np.float32 and coords.flags["C_CONTIGUOUS"] and coords.shape == (3, 3)
            u_rotated = np.stack([expected[:, 2], -expected[:, 0], -expected[:, 1]], axis=1)
            assert np.array_equal(coords.view(np.uint32), u_rotated.view(np.uint32))
            assert egopose.pose_prompt(h, 0) == "position[0.00, 0.00, 0.00], up[0.00, 0.00, 1.00], front[1.00, 0.00, 0.00], left[0.00, 1.00, 0.00]"
        assert h.closed

        # Cross-boundary equivalence on seeded (scene, object, policy) triples.
        rng = random.Random(7)
        scenes = ["synth0040", "synth0041", "synth0042"]
        handles = {s: egopose.load_scene(scans, mats / f"{s}.poim") for s in scenes}
        for s, h in handles.items():
            assert h.scene_id == s and h.frame_count == 30 and h.object_ids == [1, 2, 3, 4, 5]
        for i in range(20):
            scene = rng.choice(scenes)
            obj = rng.randint(1, 5)
            policy = ["top", "clip", "random"][i % 3]
            seed = rng.randrange(1 << 32)
            frame, coords = egopose.select_and_align(handles[scene], obj, policy=policy, seed=seed, query_id=i)
            picked = json.loads(
                cli("select-pose", "--out", mats, "--scene", scene, "--object", obj, "--policy", policy,
                    "--seed", seed, "--query-id", i)
            )
            assert picked["frame_id"] == frame, (scene, obj, policy, picked, frame)
            ply = tmp / f"aligned{i}.ply"
            cli("align", "--scans", scans, "--scene", scene, "--frame", frame, "--out", ply)
            assert np.array_equal(coords.view(np.uint32), read_ply_xyz(ply).view(np.uint32)), (scene, frame)
            prompt = cli("align", "--scans", scans, "--scene", scene, "--frame", frame, "--variant", "prompt")
            assert prompt == egopose.pose_prompt(handles[scene], frame) + "\n"

        # Errors keep their core names.
        h = handles["synth0040"]
        expect(egopose.UnknownObject, egopose.select_and_align, h, 99)
        expect(egopose.UnknownFrame, egopose.pose_prompt, h, 10_000)
        expect(egopose.InvalidClipRatio, egopose.select_and_align, h, 1, clip_ratio=0.7)
        expect(egopose.MatrixFileError, egopose.load_scene, scans, tmp / "missing.poim")
        expect(ValueError, egopose.select_and_align, h, 1, policy="best")
        for h in handles.values():
            h.close()
            h.close()
        expect(egopose.HandleClosed, egopose.select_and_align, h, 1)
        assert issubclass(egopose.UnknownObject, egopose.EgoposeError)

    print("smoke test passed: 20 triples bit-identical to the CLI")


if __name__ == "__main__":
    sys.exit(main())
